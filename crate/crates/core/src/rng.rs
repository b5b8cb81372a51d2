//! Counter-based, splittable random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the 64-bit seed and
//! positioned on its own 64-bit stream id, so `(seed, stream_id)` fully
//! determines the draw sequence no matter how work is scheduled.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent child stream labelled `label`; same seed, mixed stream id.
    pub fn substream(&self, label: u64) -> RngStream {
        RngStream::new(self.seed, mix(self.stream_id ^ mix(label.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// i.i.d. `N(0, sigma^2)` coordinates.
    pub fn gaussian(&mut self, dim: usize, sigma: f64) -> Result<Vec<f64>> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid("sigma", format!("must be positive and finite, got {sigma}")));
        }
        Ok((0..dim).map(|_| sigma * self.standard_normal()).collect())
    }

    /// Uniform direction on the unit sphere in `R^dim`.
    pub fn unit_sphere(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.standard_normal()).collect();
            let n = crate::linalg::norm(&v);
            if n > 1e-300 {
                return v.into_iter().map(|c| c / n).collect();
            }
        }
    }

    /// Uniform point in the ball of the given radius: Gaussian direction
    /// scaled by `radius * U^(1/d)`.
    pub fn uniform_ball(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        if radius == 0.0 {
            return vec![0.0; dim];
        }
        let dir = self.unit_sphere(dim);
        let scale = radius * self.uniform().powf(1.0 / dim as f64);
        dir.into_iter().map(|c| c * scale).collect()
    }

    pub fn uniform_cube(&mut self, dim: usize, half_width: f64) -> Vec<f64> {
        (0..dim)
            .map(|_| self.uniform_range(-half_width, half_width))
            .collect()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Free-standing form of [`RngStream::gaussian`].
pub fn draw_gaussian(rng: &mut RngStream, dim: usize, sigma: f64) -> Result<Vec<f64>> {
    rng.gaussian(dim, sigma)
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
