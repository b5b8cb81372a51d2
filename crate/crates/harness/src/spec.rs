//! Experiment specifications: a kind, a kind-specific parameter map, a seed
//! and an output prefix. Parameters are resolved into typed structs with
//! every default and derived quantity filled in, so that the echoed spec
//! reproduces the run exactly.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use sosp_core::expsearch::Acceptance;
use sosp_core::hardfn::{Variant, DEFAULT_MU};
use sosp_core::optim::{default_config_with, OptimizerConfig, ScheduleOptions};
use sosp_core::RngStream;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    ZpsgdRun,
    FpsgdRun,
    PsgdRun,
    HardInstance,
    ReluRecovery,
    ReluGap,
    Concentration,
    ExpSearch,
    SmoothingAudit,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::ZpsgdRun => "zpsgd-run",
            Kind::FpsgdRun => "fpsgd-run",
            Kind::PsgdRun => "psgd-run",
            Kind::HardInstance => "hard-instance",
            Kind::ReluRecovery => "relu-recovery",
            Kind::ReluGap => "relu-gap",
            Kind::Concentration => "concentration",
            Kind::ExpSearch => "exp-search",
            Kind::SmoothingAudit => "smoothing-audit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: Kind,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub seed: u64,
    pub output_path: PathBuf,
}

/// Analytic test problems for the optimizer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    DoubleWell,
    Quadratic,
    Saddle,
    SineBowl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub problem: Problem,
    pub dim: usize,
    pub eps: f64,
    pub ell: f64,
    pub rho: f64,
    pub bound_b: f64,
    pub delta: f64,
    pub c: f64,
    pub batch_cap: usize,
    pub iter_cap: usize,
    /// Per-coordinate noise of the stochastic gradient (PSGD only).
    pub noise_sd: f64,
    pub nu: Option<f64>,
    pub sigma: Option<f64>,
    pub eta: Option<f64>,
    pub perturb_r: Option<f64>,
    pub batch_m: Option<usize>,
    pub iters: Option<usize>,
    pub x0: Option<Vec<f64>>,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            problem: Problem::DoubleWell,
            dim: 2,
            eps: 0.1,
            ell: 24.0,
            rho: 24.0,
            bound_b: 4.0,
            delta: 0.1,
            c: 3.0,
            batch_cap: 200,
            iter_cap: 500,
            noise_sd: 0.0,
            nu: None,
            sigma: None,
            eta: None,
            perturb_r: None,
            batch_m: None,
            iters: None,
            x0: None,
        }
    }
}

impl RunParams {
    /// Optimizer configuration after applying the schedule and overrides.
    pub fn optimizer_config(&self, seed: u64) -> Result<OptimizerConfig> {
        let opts = ScheduleOptions {
            c: self.c,
            batch_cap: self.batch_cap,
            iter_cap: self.iter_cap,
        };
        let mut cfg = default_config_with(self.dim, self.eps, self.ell, self.rho, self.bound_b, self.delta, opts)?;
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(e) = self.eta {
            cfg.eta = e;
        }
        if let Some(r) = self.perturb_r {
            cfg.perturb_radius = r;
        }
        if let Some(m) = self.batch_m {
            cfg.batch = m;
        }
        if let Some(t) = self.iters {
            cfg.max_iters = t;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(mut self, seed: u64) -> Result<Self> {
        if self.dim == 0 {
            return Err(HarnessError::Spec("dim must be positive".into()));
        }
        match self.problem {
            Problem::Saddle if self.dim != 2 => {
                return Err(HarnessError::Spec("the saddle problem is two-dimensional".into()));
            }
            _ => {}
        }
        let default_nu = match self.problem {
            Problem::Saddle => 0.0,
            _ => self.eps.powf(1.5) / 2.0,
        };
        self.nu.get_or_insert(default_nu);
        let cfg = self.optimizer_config(seed)?;
        self.sigma = Some(cfg.sigma);
        self.eta = Some(cfg.eta);
        self.perturb_r = Some(cfg.perturb_radius);
        self.batch_m = Some(cfg.batch);
        self.iters = Some(cfg.max_iters);
        if self.x0.is_none() {
            self.x0 = Some(RngStream::new(seed, X0_STREAM).uniform_cube(self.dim, 1.5));
        }
        let x0 = self.x0.as_ref().expect("filled above");
        if x0.len() != self.dim {
            return Err(HarnessError::Spec(format!("x0 has {} coordinates, dim is {}", x0.len(), self.dim)));
        }
        Ok(self)
    }
}

/// Stream ids under the spec seed.
pub const X0_STREAM: u64 = 1;
pub const RUN_STREAM: u64 = 2;
pub const INSTANCE_STREAM: u64 = 3;
pub const AUDIT_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardParams {
    pub d: usize,
    pub eps: f64,
    pub rho: f64,
    pub mu: f64,
    pub variant: Variant,
    pub audit: bool,
    pub samples: usize,
    pub band_samples: usize,
    /// Points of the profile along the hidden direction.
    pub profile_points: usize,
}

impl Default for HardParams {
    fn default() -> Self {
        Self {
            d: 4,
            eps: 1.0,
            rho: 1.0,
            mu: DEFAULT_MU,
            variant: Variant::PolynomialQuery,
            audit: false,
            samples: 1000,
            band_samples: 10_000,
            profile_points: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryParams {
    pub d: usize,
    pub n: usize,
    pub eps: f64,
    pub trials: usize,
    pub iters: usize,
    pub batch_m: usize,
    pub ell_scale: f64,
    pub rho_scale: f64,
    pub bound_b: f64,
    pub delta: f64,
    pub population: bool,
    /// Also write the dataset of trial 0.
    pub save_dataset: bool,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        Self {
            d: 2,
            n: 10_000,
            eps: 0.2,
            trials: 20,
            iters: 200,
            batch_m: 100,
            ell_scale: 1.0,
            rho_scale: 1.0,
            bound_b: 1.0,
            delta: 0.1,
            population: false,
            save_dataset: false,
        }
    }
}

impl RecoveryParams {
    pub fn recovery_config(&self, seed: u64) -> sosp_core::relu::RecoveryConfig {
        let mut c = sosp_core::relu::RecoveryConfig::new(self.d, self.n, self.eps, self.trials, seed);
        c.iters = self.iters;
        c.batch = self.batch_m;
        c.ell_scale = self.ell_scale;
        c.rho_scale = self.rho_scale;
        c.bound_b = self.bound_b;
        c.delta = self.delta;
        c.population = self.population;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapParams {
    pub d: usize,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub grid_size: usize,
}

impl Default for GapParams {
    fn default() -> Self {
        Self {
            d: 5,
            n_list: vec![100, 1000, 10_000],
            trials: 20,
            grid_size: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationParams {
    pub d: usize,
    pub trials: usize,
    /// Fixed query point; the origin when unset.
    pub x: Option<Vec<f64>>,
}

impl Default for ConcentrationParams {
    fn default() -> Self {
        Self {
            d: 100,
            trials: 1_000_000,
            x: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    pub problem: Problem,
    pub dim: usize,
    pub eps: f64,
    pub rho: f64,
    pub ell: f64,
    pub bound_b: f64,
    pub nu: Option<f64>,
    pub radius: Option<f64>,
    pub resolution: Option<f64>,
    pub probe_c: Option<f64>,
    pub kappa: f64,
    pub sphere_resolution: f64,
    pub acceptance: Acceptance,
    pub pure_enumeration: bool,
    /// Number of seeded ripple draws.
    pub instances: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            problem: Problem::DoubleWell,
            dim: 1,
            eps: 0.3,
            rho: 40.0,
            ell: 25.0,
            bound_b: 1.0,
            nu: None,
            radius: Some(1.5),
            resolution: None,
            probe_c: None,
            kappa: sosp_core::expsearch::DEFAULT_KAPPA,
            sphere_resolution: sosp_core::expsearch::DEFAULT_SPHERE_RESOLUTION,
            acceptance: Acceptance::Certified,
            pure_enumeration: false,
            instances: 10,
        }
    }
}

impl SearchParams {
    pub fn search_config(&self) -> sosp_core::expsearch::SearchConfig {
        let mut c = sosp_core::expsearch::SearchConfig::new(
            self.eps,
            self.ell,
            self.rho,
            self.bound_b,
            self.nu.unwrap_or(0.0),
        );
        c.radius = self.radius;
        c.resolution = self.resolution;
        c.probe_c = self.probe_c;
        c.kappa = self.kappa;
        c.sphere_resolution = self.sphere_resolution;
        c.acceptance = self.acceptance;
        c.pure_enumeration = self.pure_enumeration;
        c
    }

    fn resolve(mut self) -> Result<Self> {
        if self.problem == Problem::Saddle {
            return Err(HarnessError::Spec("the saddle has no second-order stationary point".into()));
        }
        self.nu.get_or_insert((self.eps.powi(3) / self.rho).sqrt() / 10.0);
        Ok(self)
    }
}

/// Which function pair a smoothing audit runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditPair {
    /// `F = ‖x‖²/2 + Σ sin x_i` (1-Lipschitz Hessian) plus a cosine ripple.
    SineBowl,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSpecParams {
    pub pair: AuditPair,
    pub d: usize,
    /// Accuracy and Hessian constant of the hard instance.
    pub eps: f64,
    pub rho: f64,
    /// Declared Hessian-Lipschitz constant used in the bounds.
    pub rho_bound: Option<f64>,
    pub nu: Option<f64>,
    pub sigma: Option<f64>,
    pub points: usize,
    pub inner_samples: usize,
    pub slack: f64,
}

impl Default for AuditSpecParams {
    fn default() -> Self {
        Self {
            pair: AuditPair::SineBowl,
            d: 2,
            eps: 1.0,
            rho: 1.0,
            rho_bound: None,
            nu: None,
            sigma: None,
            points: 100,
            inner_samples: 1_000_000,
            slack: 4.0,
        }
    }
}

impl AuditSpecParams {
    fn resolve(mut self) -> Result<Self> {
        if self.d == 0 {
            return Err(HarnessError::Spec("d must be positive".into()));
        }
        match self.pair {
            AuditPair::SineBowl => {
                self.rho_bound.get_or_insert(1.0);
                self.nu.get_or_insert(0.01);
            }
            AuditPair::Hard => {
                self.rho_bound
                    .get_or_insert(sosp_core::hardfn::HESS_LIPSCHITZ_BOUND * self.rho);
                // declared closeness of the pair: eps r with r = sqrt(eps / rho)
                self.nu.get_or_insert(self.eps * (self.eps / self.rho).sqrt());
            }
        }
        self.sigma
            .get_or_insert((self.eps / (self.rho * self.d as f64)).sqrt());
        Ok(self)
    }
}

/// Typed parameters of a resolved spec.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Run(RunParams),
    Hard(HardParams),
    Recovery(RecoveryParams),
    Gap(GapParams),
    Concentration(ConcentrationParams),
    Search(SearchParams),
    Audit(AuditSpecParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    /// The input spec with every parameter made explicit.
    pub spec: ExperimentSpec,
    pub params: Params,
}

fn typed<T: DeserializeOwned>(map: &Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(map.clone())).map_err(|e| HarnessError::Spec(e.to_string()))
}

fn to_map<T: Serialize>(v: &T) -> Result<Map<String, Value>> {
    match serde_json::to_value(v)? {
        Value::Object(m) => Ok(m),
        _ => Err(HarnessError::Serialize("parameters must serialize to an object".into())),
    }
}

impl ExperimentSpec {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| HarnessError::Spec(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fills in defaults and derived quantities, rejecting unknown keys.
    pub fn resolve(&self) -> Result<Resolved> {
        let p = &self.params;
        let params = match self.kind {
            Kind::ZpsgdRun | Kind::FpsgdRun | Kind::PsgdRun => Params::Run(typed::<RunParams>(p)?.resolve(self.seed)?),
            Kind::HardInstance => Params::Hard(typed(p)?),
            Kind::ReluRecovery => Params::Recovery(typed(p)?),
            Kind::ReluGap => Params::Gap(typed(p)?),
            Kind::Concentration => Params::Concentration(typed(p)?),
            Kind::ExpSearch => Params::Search(typed::<SearchParams>(p)?.resolve()?),
            Kind::SmoothingAudit => Params::Audit(typed::<AuditSpecParams>(p)?.resolve()?),
        };
        let map = match &params {
            Params::Run(v) => to_map(v)?,
            Params::Hard(v) => to_map(v)?,
            Params::Recovery(v) => to_map(v)?,
            Params::Gap(v) => to_map(v)?,
            Params::Concentration(v) => to_map(v)?,
            Params::Search(v) => to_map(v)?,
            Params::Audit(v) => to_map(v)?,
        };
        Ok(Resolved {
            spec: ExperimentSpec {
                kind: self.kind,
                params: map,
                seed: self.seed,
                output_path: self.output_path.clone(),
            },
            params,
        })
    }
}
