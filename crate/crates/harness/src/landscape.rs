//! Two-dimensional grids of `(x1, x2, F, f)` for external surface plots.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use sosp_core::hardfn::{HardInstanceParams, Variant};
use sosp_core::oracle::{FunctionPairOracle, Oracle, TruthView};
use sosp_core::relu::{empirical_oracle, ReluInstance};
use sosp_core::RngStream;

use crate::error::{HarnessError, Result};
use crate::output::{header, num, Artifacts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "instance")]
pub enum LandscapeInstance {
    /// Empirical vs population risk of a single ReLU unit in the plane.
    Relu { n: usize, seed: u64 },
    /// Hard pair in `d` dimensions, sliced along two coordinates.
    Hard { d: usize, mu: f64, seed: u64, slice: Option<(usize, usize)> },
    DoubleWell { nu: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl AxisSpec {
    fn ticks(&self) -> Result<Vec<f64>> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo >= self.hi || self.points < 2 {
            return Err(HarnessError::Spec("axis needs lo < hi and at least 2 points".into()));
        }
        let k = self.points - 1;
        Ok((0..=k)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / k as f64)
            .collect())
    }
}

/// Default axis for an instance: the ReLU region, a few hard-instance
/// periods, or the double-well basin.
pub fn default_axis(instance: &LandscapeInstance) -> AxisSpec {
    match instance {
        LandscapeInstance::Hard { mu, .. } => {
            let w = 3.6 / mu;
            AxisSpec { lo: -w, hi: w, points: 121 }
        }
        _ => AxisSpec { lo: -1.5, hi: 1.5, points: 121 },
    }
}

struct Pair {
    oracle: FunctionPairOracle,
    truth: Arc<dyn TruthView>,
    slice: (usize, usize),
}

fn build(instance: &LandscapeInstance) -> Result<Pair> {
    let (oracle, slice) = match instance {
        LandscapeInstance::Relu { n, seed } => {
            let inst = Arc::new(ReluInstance::generate(2, *n, *seed)?);
            (empirical_oracle(&inst)?, (0, 1))
        }
        LandscapeInstance::Hard { d, mu, seed, slice } => {
            let slice = match (d, slice) {
                (2, None) => (0, 1),
                (_, Some((a, b))) if a != b && *a < *d && *b < *d => (*a, *b),
                (_, Some(_)) => return Err(HarnessError::Spec(format!("slice axes must be distinct and below d={d}"))),
                (_, None) => return Err(HarnessError::Spec(format!("d={d} needs a two-axis slice"))),
            };
            // eps = rho = 1 so that the scale r is one
            let p = HardInstanceParams::new(*d, 1.0, 1.0, *mu, Variant::PolynomialQuery, &mut RngStream::new(*seed, 0))?;
            (p.oracle()?, slice)
        }
        LandscapeInstance::DoubleWell { nu } => (sosp_core::problems::double_well(2, *nu)?, (0, 1)),
        LandscapeInstance::Constant { value } => {
            let c = *value;
            let truth = Arc::new(sosp_core::oracle::ClosureTruth::new(2, move |_| c));
            (FunctionPairOracle::new(2, move |_| c)?.with_truth(truth, 0.0)?, (0, 1))
        }
    };
    let truth = oracle.truth_arc().expect("landscape instances carry a truth view");
    Ok(Pair { oracle, truth, slice })
}

/// Grid rows `[x1, x2, F, f]` in row-major order of `(x1, x2)`.
pub fn landscape_rows(instance: &LandscapeInstance, axis: &AxisSpec) -> Result<Vec<[f64; 4]>> {
    let pair = build(instance)?;
    let ticks = axis.ticks()?;
    let d = pair.oracle.dim();
    let mut rows = Vec::with_capacity(ticks.len() * ticks.len());
    for &a in &ticks {
        for &b in &ticks {
            let mut x = vec![0.0; d];
            x[pair.slice.0] = a;
            x[pair.slice.1] = b;
            rows.push([a, b, pair.truth.value(&x), pair.oracle.peek_value(&x)]);
        }
    }
    Ok(rows)
}

pub fn emit_landscape_grid(instance: &LandscapeInstance, axis: &AxisSpec, prefix: &Path) -> Result<Vec<std::path::PathBuf>> {
    let rows = landscape_rows(instance, axis)?;
    let mut out = Artifacts::new(prefix)?;
    let text: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|v| num(*v)).collect()).collect();
    out.csv(".csv", &header(&["x1", "x2", "F", "f"]), &text)?;
    out.json(".meta.json", &serde_json::json!({ "instance": instance, "axis": axis }))?;
    Ok(out.written)
}
