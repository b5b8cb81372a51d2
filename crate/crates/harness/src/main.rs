use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use sosp_harness::landscape::{default_axis, emit_landscape_grid, AxisSpec, LandscapeInstance};
use sosp_harness::{run, ExperimentSpec, HarnessError, Kind, Result, RunOptions};

#[derive(Parser)]
#[command(name = "sosp", version, about = "Second-order stationary point experiments")]
struct Cli {
    /// Store wall-clock time in the summary file.
    #[arg(long, global = true)]
    wall_time: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Zero-order perturbed SGD on a test problem.
    RunZpsgd(Common),
    /// First-order perturbed SGD with exact gradients of f.
    RunFpsgd(Common),
    /// Perturbed SGD with stochastic gradients of F.
    RunPsgd(Common),
    /// Sample a hard instance and write its descriptor and profile.
    HardInstance {
        #[command(flatten)]
        common: Common,
        /// Also run the smoothness and band-gap audits.
        #[arg(long)]
        audit: bool,
    },
    /// ZPSGD on single-ReLU regression, success rate over trials.
    ReluRecovery {
        #[command(flatten)]
        common: Common,
        /// Run on the population risk instead of the empirical risk.
        #[arg(long)]
        population: bool,
        /// Write each trial's dataset as a binary file.
        #[arg(long)]
        save_dataset: bool,
    },
    /// Empirical vs population risk gap as n grows.
    ReluGap(Common),
    /// Band-miss frequency over random hidden directions.
    Concentration(Common),
    /// Exhaustive cover search for a second-order stationary point (d <= 3).
    ExpSearch(Common),
    /// Monte Carlo check of the smoothing bounds on a function pair.
    SmoothingAudit(Common),
    /// Grid of F and f over a plane, for plotting.
    Landscape(LandscapeArgs),
    /// Run an experiment spec from a JSON file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long, env = "SEED", default_value_t = 0)]
    seed: u64,
    /// Output prefix; files are written as PREFIX.csv, PREFIX.summary.json, ...
    #[arg(long, default_value = "out/run")]
    out: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    ell: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    perturb_r: Option<f64>,
    #[arg(long)]
    batch_m: Option<usize>,
    #[arg(long, alias = "d")]
    dim: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    /// Extra parameter as KEY=JSON, e.g. `--set problem=saddle` or `--set x0=[0.1,0]`.
    #[arg(long = "set", value_name = "KEY=JSON")]
    set: Vec<String>,
}

#[derive(Args)]
struct LandscapeArgs {
    /// relu, hard, double-well or constant
    #[arg(long, default_value = "relu")]
    instance: String,
    #[arg(long, env = "SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out/landscape")]
    out: PathBuf,
    #[arg(long, alias = "d", default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 10.0)]
    mu: f64,
    #[arg(long, default_value_t = 0.0)]
    nu: f64,
    #[arg(long, default_value_t = 0.0)]
    value: f64,
    /// Two coordinate axes to vary, as `I,J`.
    #[arg(long, value_parser = parse_slice)]
    slice: Option<(usize, usize)>,
    #[arg(long)]
    lo: Option<f64>,
    #[arg(long)]
    hi: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

fn parse_slice(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected I,J")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

impl Common {
    fn spec(&self, kind: Kind, extra: &[(&str, Value)]) -> Result<ExperimentSpec> {
        let dim_key = match kind {
            Kind::ZpsgdRun | Kind::FpsgdRun | Kind::PsgdRun | Kind::ExpSearch => "dim",
            _ => "d",
        };
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("eps", self.eps.map(Value::from));
        put("rho", self.rho.map(Value::from));
        put("ell", self.ell.map(Value::from));
        put("nu", self.nu.map(Value::from));
        put("sigma", self.sigma.map(Value::from));
        put("eta", self.eta.map(Value::from));
        put("perturb_r", self.perturb_r.map(Value::from));
        put("batch_m", self.batch_m.map(Value::from));
        put(dim_key, self.dim.map(Value::from));
        put("iters", self.iters.map(Value::from));
        put("trials", self.trials.map(Value::from));
        put("mu", self.mu.map(Value::from));
        put("n", self.n.map(Value::from));
        for (k, v) in extra {
            m.insert(k.to_string(), v.clone());
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Spec(format!("`--set {kv}` is not KEY=JSON")))?;
            // bare words are taken as strings, so `--set problem=saddle` works unquoted
            let v: Value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            m.insert(k.to_string(), v);
        }
        Ok(ExperimentSpec {
            kind,
            params: m,
            seed: self.seed,
            output_path: self.out.clone(),
        })
    }
}

fn landscape(a: &LandscapeArgs) -> Result<Vec<PathBuf>> {
    let instance = match a.instance.as_str() {
        "relu" => LandscapeInstance::Relu { n: a.n, seed: a.seed },
        "hard" => LandscapeInstance::Hard {
            d: a.dim,
            mu: a.mu,
            seed: a.seed,
            slice: a.slice,
        },
        "double-well" => LandscapeInstance::DoubleWell { nu: a.nu },
        "constant" => LandscapeInstance::Constant { value: a.value },
        other => return Err(HarnessError::Spec(format!("unknown landscape instance `{other}`"))),
    };
    let def = default_axis(&instance);
    let axis = AxisSpec {
        lo: a.lo.unwrap_or(def.lo),
        hi: a.hi.unwrap_or(def.hi),
        points: a.points.unwrap_or(def.points),
    };
    emit_landscape_grid(&instance, &axis, &a.out)
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>> {
    let opts = RunOptions { wall_time: cli.wall_time };
    let spec = match cli.cmd {
        Cmd::RunZpsgd(c) => c.spec(Kind::ZpsgdRun, &[])?,
        Cmd::RunFpsgd(c) => c.spec(Kind::FpsgdRun, &[])?,
        Cmd::RunPsgd(c) => c.spec(Kind::PsgdRun, &[])?,
        Cmd::HardInstance { common, audit } => {
            let extra: Vec<(&str, Value)> = if audit { vec![("audit", true.into())] } else { vec![] };
            common.spec(Kind::HardInstance, &extra)?
        }
        Cmd::ReluRecovery {
            common,
            population,
            save_dataset,
        } => {
            let mut extra: Vec<(&str, Value)> = Vec::new();
            if population {
                extra.push(("population", true.into()));
            }
            if save_dataset {
                extra.push(("save_dataset", true.into()));
            }
            common.spec(Kind::ReluRecovery, &extra)?
        }
        Cmd::ReluGap(c) => c.spec(Kind::ReluGap, &[])?,
        Cmd::Concentration(c) => c.spec(Kind::Concentration, &[])?,
        Cmd::ExpSearch(c) => c.spec(Kind::ExpSearch, &[])?,
        Cmd::SmoothingAudit(c) => c.spec(Kind::SmoothingAudit, &[])?,
        Cmd::Landscape(a) => return landscape(&a),
        Cmd::Run { config, seed, out } => {
            let bytes = std::fs::read(&config).map_err(|e| HarnessError::io(&config, e))?;
            let mut spec = ExperimentSpec::from_json(&bytes)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(o) = out {
                spec.output_path = o;
            }
            spec
        }
    };
    Ok(run(&spec, &opts)?.files)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
