//! Public description of a hard instance plus a separately stored secret.
//!
//! The descriptor carries a SHA-256 commitment to the hidden direction so
//! that a run can be audited after the fact without exposing `v` to the
//! optimizer beforehand.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sosp_core::hardfn::{HardInstanceParams, Variant};
use sosp_core::RngStream;

use crate::error::{HarnessError, Result};

pub const DESCRIPTOR_FORMAT: &str = "sosp-hard-instance/1";
pub const SECRET_FORMAT: &str = "sosp-hard-secret/1";
const SALT_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDescriptor {
    pub format: String,
    pub d: usize,
    pub epsilon: f64,
    pub rho: f64,
    pub mu: f64,
    pub variant: Variant,
    /// Hex SHA-256 of the salt followed by `v` as little-endian `f64`s.
    pub commitment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSecret {
    pub format: String,
    pub salt: String,
    pub v: Vec<f64>,
}

pub fn commitment(salt: &[u8], v: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(salt);
    for x in v {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Descriptor and secret for `params`, with a salt drawn from `rng`.
pub fn describe(params: &HardInstanceParams, rng: &mut RngStream) -> (InstanceDescriptor, InstanceSecret) {
    let mut salt = [0u8; SALT_BYTES];
    for b in salt.iter_mut() {
        *b = rng.below(256) as u8;
    }
    let v = params.hidden_direction().to_vec();
    let desc = InstanceDescriptor {
        format: DESCRIPTOR_FORMAT.into(),
        d: params.d,
        epsilon: params.epsilon,
        rho: params.rho,
        mu: params.mu,
        variant: params.variant,
        commitment: commitment(&salt, &v),
    };
    let secret = InstanceSecret {
        format: SECRET_FORMAT.into(),
        salt: hex::encode(salt),
        v,
    };
    (desc, secret)
}

impl InstanceDescriptor {
    /// Parses and validates a descriptor.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let d: Self = serde_json::from_slice(bytes).map_err(|e| HarnessError::Decode(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Decode(m));
        if self.format != DESCRIPTOR_FORMAT {
            return bad(format!("unknown descriptor format `{}`", self.format));
        }
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) || !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("epsilon and rho must be positive and finite".into());
        }
        if !(self.mu >= 3.0 && self.mu.is_finite()) {
            return bad(format!("mu must be at least 3, got {}", self.mu));
        }
        match hex::decode(&self.commitment) {
            Ok(b) if b.len() == 32 => Ok(()),
            _ => bad("commitment must be 64 hex digits".into()),
        }
    }

    /// Checks the secret against the commitment and rebuilds the instance.
    pub fn open(&self, secret: &InstanceSecret) -> Result<HardInstanceParams> {
        self.validate()?;
        if secret.format != SECRET_FORMAT {
            return Err(HarnessError::Decode(format!("unknown secret format `{}`", secret.format)));
        }
        let salt = hex::decode(&secret.salt).map_err(|e| HarnessError::Decode(format!("salt: {e}")))?;
        if secret.v.len() != self.d {
            return Err(HarnessError::Decode(format!("secret has {} coordinates, d is {}", secret.v.len(), self.d)));
        }
        if commitment(&salt, &secret.v) != self.commitment.to_ascii_lowercase() {
            return Err(HarnessError::Decode("secret does not match the commitment".into()));
        }
        Ok(HardInstanceParams::with_direction(
            self.epsilon,
            self.rho,
            self.mu,
            self.variant,
            secret.v.clone(),
        )?)
    }
}

impl InstanceSecret {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| HarnessError::Decode(e.to_string()))
    }
}
