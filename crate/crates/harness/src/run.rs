//! Experiment drivers: one function per spec kind, each writing a CSV, a
//! summary and a metadata file under the spec's output prefix.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use sosp_core::expsearch::exhaustive_sosp_search;
use sosp_core::hardfn::{band_gap_audit, fixed_point_concentration_at, smoothness_audit, HardInstanceParams};
use sosp_core::oracle::FunctionPairOracle;
use sosp_core::optim::{fpsgd, psgd, zpsgd, RunRecord};
use sosp_core::problems::{self, NoisyGradient, Ripple, RIPPLE_OMEGA};
use sosp_core::relu::{relu_recovery_experiment, uniform_gap_experiment};
use sosp_core::smoothing::{verify_smoothing_bounds, AuditParams};
use sosp_core::stationarity::check_sosp;
use sosp_core::RngStream;

use crate::dataset;
use crate::descriptor::describe;
use crate::error::Result;
use crate::output::{header, num, Artifacts};
use crate::spec::*;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Record wall-clock time in the summary (makes it non-reproducible).
    pub wall_time: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

/// Runs one experiment and writes its artifacts.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Outcome> {
    let resolved = spec.resolve()?;
    let started = Instant::now();
    let mut out = Artifacts::new(&resolved.spec.output_path)?;
    let seed = resolved.spec.seed;
    let (result, derived) = match &resolved.params {
        Params::Run(p) => run_optimizer(resolved.spec.kind, p, seed, &mut out)?,
        Params::Hard(p) => run_hard(p, seed, &mut out)?,
        Params::Recovery(p) => run_recovery(p, seed, &mut out)?,
        Params::Gap(p) => run_gap(p, seed, &mut out)?,
        Params::Concentration(p) => run_concentration(p, seed, &mut out)?,
        Params::Search(p) => run_search(p, seed, &mut out)?,
        Params::Audit(p) => run_audit(p, seed, &mut out)?,
    };
    let mut summary = json!({
        "spec": resolved.spec,
        "result": result,
    });
    if opts.wall_time {
        summary["wall_time_s"] = json!(started.elapsed().as_secs_f64());
    }
    out.json(".summary.json", &summary)?;
    let meta = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "kind": resolved.spec.kind,
        "seed": seed,
        "rng": "ChaCha8 streams keyed by (seed, stream id)",
        "resolved": resolved.spec,
        "derived": derived,
    });
    out.json(".meta.json", &meta)?;
    Ok(Outcome {
        files: out.written,
        summary,
    })
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn problem_oracle(problem: Problem, dim: usize, nu: f64) -> Result<FunctionPairOracle> {
    Ok(match problem {
        Problem::DoubleWell => problems::double_well(dim, nu)?,
        Problem::Quadratic => problems::quadratic(dim, nu)?,
        Problem::Saddle => problems::saddle()?,
        Problem::SineBowl => problems::sine_bowl(dim, nu)?,
    })
}

fn seeded_oracle(problem: Problem, dim: usize, nu: f64, rng: &mut RngStream) -> Result<FunctionPairOracle> {
    let ripple = Ripple::random(dim, RIPPLE_OMEGA, rng);
    Ok(match problem {
        Problem::DoubleWell => problems::rippled(problems::double_well_truth(dim), nu, ripple)?,
        Problem::Quadratic => problems::rippled(problems::quadratic_truth(dim), nu, ripple)?,
        Problem::SineBowl => problems::rippled(problems::sine_bowl_truth(dim), nu, ripple)?,
        Problem::Saddle => problems::saddle()?,
    })
}

/// Up to this dimension trajectories list coordinates; above it, norms.
const COORD_COLUMNS_MAX: usize = 8;

fn run_optimizer(kind: Kind, p: &RunParams, seed: u64, out: &mut Artifacts) -> Result<(Value, Value)> {
    let nu = p.nu.unwrap_or(0.0);
    let oracle = problem_oracle(p.problem, p.dim, nu)?;
    let truth = oracle.truth_arc().expect("test problems carry a truth view");
    let cfg = p.optimizer_config(seed)?;
    let x0 = p.x0.clone().expect("resolved");
    let mut rng = RngStream::new(seed, RUN_STREAM);
    let mut rec: RunRecord = match kind {
        Kind::ZpsgdRun => zpsgd(&oracle, &x0, &cfg, &mut rng)?,
        Kind::FpsgdRun => fpsgd(&oracle, &x0, &cfg, &mut rng)?,
        _ => {
            let sampler = NoisyGradient::new(truth.clone(), p.noise_sd)?;
            psgd(&sampler, &x0, &cfg, &mut rng)?
        }
    };
    let terminal = rec.certify(truth.as_ref(), p.eps, p.rho)?.clone();

    let mut cols = vec!["step".to_string()];
    if p.dim <= COORD_COLUMNS_MAX {
        cols.extend((0..p.dim).map(|i| format!("x{i}")));
    } else {
        cols.push("x_norm".into());
    }
    cols.extend(header(&["grad_estimate_norm", "f", "F"]));
    let rows: Vec<Vec<String>> = rec
        .iterates
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let mut r = vec![t.to_string()];
            if p.dim <= COORD_COLUMNS_MAX {
                r.extend(x.iter().map(|v| num(*v)));
            } else {
                r.push(num(sosp_core::linalg::norm(x)));
            }
            r.push(if t == 0 { String::new() } else { num(rec.steps[t - 1].grad_norm) });
            r.push(num(oracle.peek_value(x)));
            r.push(num(truth.value(x)));
            r
        })
        .collect();
    out.csv(".csv", &cols, &rows)?;
    let result = json!({
        "terminal": terminal,
        "queries_used": rec.queries_used,
        "steps": rec.steps_taken(),
        "final_point": rec.last(),
    });
    Ok((result, json!({ "optimizer": cfg })))
}

fn run_hard(p: &HardParams, seed: u64, out: &mut Artifacts) -> Result<(Value, Value)> {
    let base = RngStream::new(seed, INSTANCE_STREAM);
    let params = HardInstanceParams::new(p.d, p.eps, p.rho, p.mu, p.variant, &mut base.substream(0))?;
    let (desc, secret) = describe(&params, &mut base.substream(1));
    out.json(".instance.json", &desc)?;
    out.json(".secret.json", &secret)?;

    let unit = params.scale_r() / params.mu;
    let v = params.hidden_direction();
    let k = p.profile_points.max(2);
    let rows: Vec<Vec<String>> = (0..k)
        .map(|i| {
            let t = -3.0 + 6.0 * i as f64 / (k - 1) as f64;
            let x: Vec<f64> = v.iter().map(|vi| t * unit * vi).collect();
            vec![
                num(t),
                num(params.hard_big_f(&x)),
                num(params.hard_f(&x)),
                format!("{:?}", params.classify(&x).label).to_lowercase(),
            ]
        })
        .collect();
    out.csv(".csv", &header(&["t_over_r_mu", "F", "f", "label"]), &rows)?;

    let mut result = json!({
        "descriptor": desc,
        "scale_r": params.scale_r(),
        "ball_radius": params.ball_radius(),
        "band_threshold": params.band_threshold(),
        "declared_nu": params.declared_nu(),
        "mu_is_nonstandard": params.mu_is_nonstandard(),
    });
    if p.audit {
        let audit_rng = RngStream::new(seed, AUDIT_STREAM);
        let smooth = smoothness_audit(&params, p.samples, &mut audit_rng.substream(0));
        let band = band_gap_audit(&params, p.band_samples, &mut audit_rng.substream(1));
        result["smoothness_audit"] = to_value(&smooth)?;
        result["smoothness_passed"] = json!(smooth.passed());
        result["band_gap_audit"] = to_value(&band)?;
    }
    Ok((result, json!({ "profile_unit": unit })))
}

fn run_recovery(p: &RecoveryParams, seed: u64, out: &mut Artifacts) -> Result<(Value, Value)> {
    let cfg = p.recovery_config(seed);
    let rep = relu_recovery_experiment(&cfg)?;
    let rows: Vec<Vec<String>> = rep
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            vec![
                i.to_string(),
                num(t.error),
                t.success.to_string(),
                num(t.contained_fraction),
                t.queries.to_string(),
            ]
        })
        .collect();
    out.csv(".csv", &header(&["trial", "error", "success", "contained_fraction", "queries"]), &rows)?;
    if p.save_dataset {
        let inst = cfg.trial_dataset(0)?;
        let bytes = dataset::encode(&inst);
        out.bytes(".data.bin", &bytes)?;
        out.json(".data.json", &dataset::meta(&inst, &bytes))?;
    }
    let result = json!({
        "success_rate": rep.success_rate,
        "containment": rep.containment,
        "trials": rep.trials,
    });
    Ok((result, json!({ "optimizer": rep.optimizer })))
}

fn run_gap(p: &GapParams, seed: u64, out: &mut Artifacts) -> Result<(Value, Value)> {
    let tab = uniform_gap_experiment(p.d, &p.n_list, p.trials, p.grid_size, seed)?;
    let rows: Vec<Vec<String>> = tab
        .rows
        .iter()
        .map(|r| vec![r.n.to_string(), num(r.mean_gap), num(r.stderr), num(r.mean_raw_gap)])
        .collect();
    out.csv(".csv", &header(&["n", "mean_gap", "stderr", "mean_raw_gap"]), &rows)?;
    Ok((to_value(&tab)?, json!({ "slope_fit": "least squares of ln gap on ln n" })))
}

fn run_concentration(p: &ConcentrationParams, seed: u64, out: &mut Artifacts) -> Result<(Value, Value)> {
    let mut rng = RngStream::new(seed, RUN_STREAM);
    let rep = fixed_point_concentration_at(p.d, p.trials, p.x.clone(), &mut rng)?;
    out.csv(
        ".csv",
        &header(&["d", "trials", "misses", "direction_misses", "bound"]),
        &[vec![
            rep.d.to_string(),
            rep.trials.to_string(),
            rep.misses.to_string(),
            rep.direction_misses.to_string(),
            num(rep.bound),
        ]],
    )?;
    Ok((to_value(&rep)?, json!({})))
}

fn run_search(p: &SearchParams, seed: u64, out: &mut Artifacts) -> Result<(Value, Value)> {
    let cfg = p.search_config();
    let base = RngStream::new(seed, INSTANCE_STREAM);
    let mut rows = Vec::with_capacity(p.instances);
    let mut results = Vec::with_capacity(p.instances);
    let mut passed = 0usize;
    for i in 0..p.instances {
        let oracle = seeded_oracle(p.problem, p.dim, cfg.nu, &mut base.substream(i as u64))?;
        let truth = oracle.truth_arc().expect("test problems carry a truth view");
        let res = exhaustive_sosp_search(&oracle, &cfg)?;
        let rep = check_sosp(truth.as_ref(), &res.point, 2.0 * p.eps, p.rho)?;
        passed += rep.verdict as usize;
        let mut row = vec![i.to_string()];
        row.push(
            res.point
                .iter()
                .map(|v| num(*v))
                .collect::<Vec<_>>()
                .join(" "),
        );
        row.extend([
            num(rep.grad_norm),
            num(rep.min_eig),
            rep.verdict.to_string(),
            res.queries.to_string(),
            res.index.to_string(),
        ]);
        rows.push(row);
        results.push(json!({ "search": res, "check": rep }));
    }
    out.csv(
        ".csv",
        &header(&["instance", "point", "grad_norm", "min_eig", "verdict", "queries", "cover_index"]),
        &rows,
    )?;
    let result = json!({
        "instances": p.instances,
        "passed": passed,
        "pass_rate": passed as f64 / p.instances.max(1) as f64,
        "runs": results,
    });
    Ok((result, json!({ "search": cfg, "probe_radius": cfg.probe_radius() })))
}

fn run_audit(p: &AuditSpecParams, seed: u64, out: &mut Artifacts) -> Result<(Value, Value)> {
    let mut rng = RngStream::new(seed, INSTANCE_STREAM);
    let (oracle, points): (FunctionPairOracle, Vec<Vec<f64>>) = match p.pair {
        AuditPair::SineBowl => {
            let o = problems::sine_bowl(p.d, p.nu.expect("resolved"))?;
            let pts = (0..p.points).map(|_| rng.uniform_cube(p.d, 2.0)).collect();
            (o, pts)
        }
        AuditPair::Hard => {
            let params = HardInstanceParams::new(
                p.d,
                p.eps,
                p.rho,
                sosp_core::hardfn::DEFAULT_MU,
                sosp_core::hardfn::Variant::PolynomialQuery,
                &mut rng.substream(0),
            )?;
            let radius = 2.0 * params.ball_radius();
            let pts = (0..p.points).map(|_| rng.uniform_ball(p.d, radius)).collect();
            (params.oracle()?, pts)
        }
    };
    let mut ap = AuditParams::new(p.rho_bound.expect("resolved"), p.nu.expect("resolved"), p.sigma.expect("resolved"));
    ap.inner_samples = p.inner_samples;
    ap.slack = p.slack;
    let audit = verify_smoothing_bounds(&oracle, &ap, &points, &mut RngStream::new(seed, AUDIT_STREAM))?;
    let rows: Vec<Vec<String>> = audit
        .points
        .iter()
        .enumerate()
        .map(|(i, a)| {
            vec![
                i.to_string(),
                num(a.grad_dev),
                num(a.grad_bound),
                num(a.grad_mc_err),
                num(a.hess_dev),
                num(a.hess_bound),
                num(a.hess_mc_err),
                (a.grad_violation || a.hess_violation).to_string(),
            ]
        })
        .collect();
    out.csv(
        ".csv",
        &header(&["point", "grad_dev", "grad_bound", "grad_mc_err", "hess_dev", "hess_bound", "hess_mc_err", "violation"]),
        &rows,
    )?;
    let result = json!({
        "violations": audit.violations,
        "max_grad_dev": audit.max_grad_dev,
        "max_hess_dev": audit.max_hess_dev,
        "grad_bound": audit.grad_bound,
        "hess_bound": audit.hess_bound,
    });
    Ok((result, json!({ "audit": ap })))
}
