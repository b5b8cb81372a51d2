//! Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Experiments with a harness kind go through
//! `sosp_harness::run` so that the determinism check can rerun them in place
//! and compare files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use sosp_core::hardfn::{adaptive_query_experiment, HardInstanceParams, Variant, DEFAULT_MU};
use sosp_core::linalg::norm;
use sosp_core::optim::{default_config, gd_baseline, zpsgd};
use sosp_core::oracle::Oracle;
use sosp_core::problems;
use sosp_core::relu::{arc_cosine_kernel, one_point_convexity_audit, population_grad, population_risk, relu, sample_region};
use sosp_core::smoothing::{grad_estimate_stats, SmoothingConfig};
use sosp_core::stationarity::{check_sosp, finite_diff_grad};
use sosp_core::RngStream;
use sosp_harness::{run, ExperimentSpec, Kind, RunOptions};

const SEED: u64 = 1;

// 1
const AC1_DIM: usize = 3;
const AC1_SAMPLES: usize = 1_000_000;
const AC1_MAX_DEV: f64 = 0.01;
// 2
const AC2_POINTS: usize = 100;
const AC2_INNER: usize = 1_000_000;
// 3
const AC3_EPS: f64 = 0.1;
const AC3_RHO: f64 = 0.1;
const AC3_ELL: f64 = 1.0;
const AC3_MIN_OK: usize = 19;
// 4
const AC4_RUNS: u64 = 20;
const AC4_ZPSGD_MIN: usize = 15;
const AC4_GD_MAX: usize = 10;
// 5
const AC5_DIMS: [usize; 3] = [2, 4, 16];
// 6
const AC6_MAX_MISS: f64 = 2.5e-4;
// 7
const AC7_DIM: usize = 50;
const AC7_BATCH: usize = 99;
const AC7_ITERS: usize = 100;
const AC7_MAX_SUCCESS: f64 = 0.25;
const AC7_MIN_NONINFORMATIVE: f64 = 0.95;
// 8
const AC8_MC: usize = 1_000_000;
const AC8_GRAD_REL: f64 = 1e-5;
const AC8_AUDIT: usize = 10_000;
// 9
const AC9_SLOPE: f64 = -0.5;
const AC9_SLOPE_TOL: f64 = 0.15;
// 10
const AC10_NS: [usize; 3] = [100, 1000, 10_000];
const AC10_MIN_SUCCESS: f64 = 0.7;
const AC10_MIN_CONTAINMENT: f64 = 0.95;
// 12
const AC12_AUDIT_POINTS: usize = 5;

struct Line {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

impl Line {
    fn print(&self) {
        let within = self.elapsed <= self.limit;
        println!(
            "AC{:02} {} {}: {} [{:.1}s, limit {}s]",
            self.id,
            if self.pass && within { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.limit.as_secs()
        );
    }

    fn ok(&self) -> bool {
        self.pass && self.elapsed <= self.limit
    }
}

struct Ctx {
    dir: PathBuf,
    /// Every harness spec that ran, for the rerun.
    specs: Vec<ExperimentSpec>,
    /// Outputs of experiments that have no harness kind, by label.
    direct: BTreeMap<String, String>,
}

impl Ctx {
    fn spec(&self, kind: Kind, name: &str, seed: u64, params: Value) -> ExperimentSpec {
        ExperimentSpec {
            kind,
            params: params.as_object().expect("object").clone(),
            seed,
            output_path: self.dir.join("a").join(name),
        }
    }

    fn run(&mut self, spec: ExperimentSpec) -> Value {
        let out = run(&spec, &RunOptions::default()).expect("experiment runs");
        self.specs.push(spec);
        out.summary["result"].clone()
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn f(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

fn ac1() -> (bool, String, String) {
    let o = problems::quadratic(AC1_DIM, 0.0).unwrap();
    let cfg = SmoothingConfig::new(0.1, AC1_SAMPLES).unwrap();
    let mut rng = RngStream::new(SEED, 0);
    let (mut dev, mut se) = (0.0f64, 0.0f64);
    let mut raw = Vec::new();
    for k in 0..10 {
        let x = rng.uniform_cube(AC1_DIM, 1.0);
        let e = grad_estimate_stats(&o, &x, &cfg, &mut rng.substream(k)).unwrap();
        for ((m, s), xi) in e.mean.iter().zip(&e.stderr).zip(&x) {
            dev = dev.max((m - 2.0 * xi).abs());
            se = se.max(*s);
        }
        raw.push(e.mean);
    }
    let pass = dev <= AC1_MAX_DEV;
    (pass, format!("max |dev| {dev:.2e} <= {AC1_MAX_DEV} (max stderr {se:.1e})"), serde_json::to_string(&raw).unwrap())
}

fn ac7() -> (bool, String, String) {
    let (eps, rho) = (1.0, 1.0);
    let mut successes = 0usize;
    let (mut q, mut informative) = (0u64, 0u64);
    let mut raw = Vec::new();
    for s in 0..20u64 {
        let base = RngStream::new(SEED, 700 + s);
        let p = HardInstanceParams::new(AC7_DIM, eps, rho, DEFAULT_MU, Variant::PolynomialQuery, &mut base.substream(0)).unwrap();
        let mut cfg = default_config(AC7_DIM, eps, 2.0, rho, 1.0, 0.1).unwrap();
        cfg.batch = AC7_BATCH;
        cfg.max_iters = AC7_ITERS;
        let rep = adaptive_query_experiment(&p, |o: &dyn Oracle| {
            let rec = zpsgd(o, &vec![0.0; AC7_DIM], &cfg, &mut base.substream(1))?;
            Ok(rec.last().to_vec())
        })
        .unwrap();
        successes += rep.report.verdict as usize;
        q += rep.queries;
        informative += rep.informative_queries;
        raw.push(rep.final_point);
    }
    let rate = successes as f64 / 20.0;
    let nonif = 1.0 - informative as f64 / q as f64;
    let pass = rate <= AC7_MAX_SUCCESS && nonif >= AC7_MIN_NONINFORMATIVE;
    (
        pass,
        format!("success {rate:.2} <= {AC7_MAX_SUCCESS}, non-informative {nonif:.4} >= {AC7_MIN_NONINFORMATIVE} over {q} queries"),
        serde_json::to_string(&raw).unwrap(),
    )
}

fn ac8() -> (bool, String, String) {
    let mut rng = RngStream::new(SEED, 800);
    // kernel against Monte Carlo
    let d = 3;
    let mut worst_z = 0.0f64;
    let mut raw = Vec::new();
    for _ in 0..10 {
        let u = rng.gaussian(d, 1.0).unwrap();
        let v = rng.gaussian(d, 1.0).unwrap();
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..AC8_MC {
            let x = rng.gaussian(d, 1.0).unwrap();
            let a = relu(x.iter().zip(&u).map(|(p, q)| p * q).sum()) * relu(x.iter().zip(&v).map(|(p, q)| p * q).sum());
            s1 += a;
            s2 += a * a;
        }
        let n = AC8_MC as f64;
        let mean = s1 / n;
        let se = ((s2 / n - mean * mean) / (n - 1.0)).sqrt();
        let k = arc_cosine_kernel(&u, &v).unwrap();
        worst_z = worst_z.max((mean - k).abs() / se);
        raw.push(mean);
    }
    // gradient against central differences
    let mut worst_rel = 0.0f64;
    for d in [2, 5, 8] {
        let w_star = rng.unit_sphere(d);
        for _ in 0..10 {
            let w = sample_region(&w_star, &mut rng);
            let g = population_grad(&w, &w_star).unwrap();
            let fd = finite_diff_grad(&|p| population_risk(p, &w_star).unwrap(), &w, 1e-5);
            let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
            worst_rel = worst_rel.max(norm(&diff) / norm(&g).max(1e-12));
        }
    }
    // one-point convexity
    let mut violations = 0;
    let mut min_ratio = f64::INFINITY;
    for d in [2, 8] {
        let w_star = rng.unit_sphere(d);
        let rep = one_point_convexity_audit(&w_star, AC8_AUDIT, &mut rng).unwrap();
        violations += rep.violations;
        min_ratio = min_ratio.min(rep.min_ratio);
    }
    let pass = worst_z <= 4.0 && worst_rel <= AC8_GRAD_REL && violations == 0;
    (
        pass,
        format!("kernel max |z| {worst_z:.2} <= 4, grad rel err {worst_rel:.1e} <= {AC8_GRAD_REL:.0e}, one-point violations {violations} (min ratio {min_ratio:.3})"),
        serde_json::to_string(&raw).unwrap(),
    )
}

fn read_column(path: &Path, col: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == col).expect("column");
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    out
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cx = Ctx {
        dir: tmp.path().to_path_buf(),
        specs: Vec::new(),
        direct: BTreeMap::new(),
    };
    let mut lines = Vec::new();

    let ((pass, detail, raw), el) = timed(ac1);
    cx.direct.insert("ac1".into(), raw);
    lines.push(Line { id: 1, title: "estimator unbiasedness", pass, detail, elapsed: el, limit: secs(30) });
    lines.last().unwrap().print();

    // 2: sine bowl has a globally 1-Lipschitz Hessian; the hard pair uses its declared constant
    let ((pass, detail), el) = timed(|| {
        let mut v = 0;
        let mut parts = Vec::new();
        for (name, pair, d) in [("ac2-sine", "sine-bowl", 2), ("ac2-hard", "hard", 4)] {
            let spec = cx.spec(
                Kind::SmoothingAudit,
                name,
                SEED,
                json!({ "pair": pair, "d": d, "points": AC2_POINTS, "inner_samples": AC2_INNER }),
            );
            let r = cx.run(spec);
            let n = r["violations"].as_u64().unwrap();
            v += n;
            parts.push(format!("{pair} d={d}: {n} violations, grad {:.2e}/{:.2e}", f(&r["max_grad_dev"]), f(&r["grad_bound"])));
        }
        (v == 0, parts.join("; "))
    });
    lines.push(Line { id: 2, title: "smoothing-lemma audit", pass, detail, elapsed: el, limit: secs(300) });
    lines.last().unwrap().print();

    let ((pass, detail), el) = timed(|| {
        let cfg = default_config(2, AC3_EPS, AC3_ELL, AC3_RHO, 1.0, 0.1).unwrap();
        let s = cfg.schedule.clone().unwrap();
        let steps = s.escape_steps.ceil() as usize;
        let x0 = [1e-6, 0.0];
        let f0 = 0.5 * x0[0] * x0[0];
        let mut ok = 0;
        for seed in 0..20 {
            let name = format!("ac3-{seed}");
            let spec = cx.spec(
                Kind::PsgdRun,
                &name,
                seed,
                json!({
                    "problem": "saddle", "dim": 2, "eps": AC3_EPS, "rho": AC3_RHO, "ell": AC3_ELL,
                    "bound_b": 1.0, "c": 3.0, "x0": x0, "iters": steps, "batch_m": 1,
                }),
            );
            cx.run(spec);
            let best = read_column(&cx.dir.join("a").join(format!("{name}.csv")), "F").into_iter().fold(f64::INFINITY, f64::min);
            ok += (best <= f0 - s.escape_decrease) as usize;
        }
        (ok >= AC3_MIN_OK, format!("{ok}/20 escape within T={steps} (decrease {:.2e})", s.escape_decrease))
    });
    lines.push(Line { id: 3, title: "saddle escape", pass, detail, elapsed: el, limit: secs(60) });
    lines.last().unwrap().print();

    let ((pass, detail), el) = timed(|| {
        let (mut z, mut g) = (0, 0);
        for seed in 0..AC4_RUNS {
            let spec = cx.spec(Kind::ZpsgdRun, &format!("ac4-{seed}"), seed, json!({ "problem": "double-well" }));
            let resolved = spec.resolve().unwrap();
            let r = cx.run(spec);
            z += (r["terminal"]["verdict"] == true) as usize;
            // gradient descent on f from the same start, same step size and step count
            let p = &resolved.spec.params;
            let x0: Vec<f64> = serde_json::from_value(p["x0"].clone()).unwrap();
            let (eps, rho) = (f(&p["eps"]), f(&p["rho"]));
            let o = problems::double_well(2, f(&p["nu"])).unwrap();
            let rec = gd_baseline(&o, &x0, f(&p["eta"]), p["iters"].as_u64().unwrap() as usize).unwrap();
            let truth = o.truth_arc().unwrap();
            g += check_sosp(truth.as_ref(), rec.last(), eps, rho).unwrap().verdict as usize;
        }
        (z >= AC4_ZPSGD_MIN && g <= AC4_GD_MAX, format!("ZPSGD {z}/20 >= {AC4_ZPSGD_MIN}, GD {g}/20 <= {AC4_GD_MAX}"))
    });
    lines.push(Line { id: 4, title: "ZPSGD vs GD on rippled double well", pass, detail, elapsed: el, limit: secs(120) });
    lines.last().unwrap().print();

    let ((pass, detail), el) = timed(|| {
        let mut ok = true;
        let mut parts = Vec::new();
        for d in AC5_DIMS {
            let spec = cx.spec(
                Kind::HardInstance,
                &format!("ac5-{d}"),
                SEED,
                json!({ "d": d, "eps": 1.0, "rho": 1.0, "audit": true, "samples": 1000, "band_samples": 10_000 }),
            );
            let r = cx.run(spec);
            let band = &r["band_gap_audit"];
            let good = r["smoothness_passed"] == true && band["band_violations"] == 0 && band["outside_mismatches"] == 0;
            ok &= good;
            parts.push(format!(
                "d={d}: smoothness {}, band gap {:.2e} (ratio {:.2e}), outside mismatches {}",
                if r["smoothness_passed"] == true { "ok" } else { "violated" },
                f(&band["max_gap"]),
                f(&band["max_gap_ratio"]),
                band["outside_mismatches"]
            ));
        }
        (ok, parts.join("; "))
    });
    lines.push(Line { id: 5, title: "hard-instance certificates", pass, detail, elapsed: el, limit: secs(300) });
    lines.last().unwrap().print();

    let ((pass, detail), el) = timed(|| {
        let spec = cx.spec(Kind::Concentration, "ac6", SEED, json!({ "d": 100, "trials": 1_000_000 }));
        let r = cx.run(spec);
        let frac = f(&r["miss_fraction"]);
        (
            frac <= AC6_MAX_MISS,
            format!("miss fraction {frac:.2e} <= {AC6_MAX_MISS:.1e} (bound {:.2e}, direction misses {})", f(&r["bound"]), r["direction_misses"]),
        )
    });
    lines.push(Line { id: 6, title: "band concentration", pass, detail, elapsed: el, limit: secs(120) });
    lines.last().unwrap().print();

    let ((pass, detail, raw), el) = timed(ac7);
    cx.direct.insert("ac7".into(), raw);
    lines.push(Line { id: 7, title: "lower-bound premise", pass, detail, elapsed: el, limit: secs(600) });
    lines.last().unwrap().print();

    let ((pass, detail, raw), el) = timed(ac8);
    cx.direct.insert("ac8".into(), raw);
    lines.push(Line { id: 8, title: "ReLU closed forms", pass, detail, elapsed: el, limit: secs(180) });
    lines.last().unwrap().print();

    let ((pass, detail), el) = timed(|| {
        let spec = cx.spec(Kind::ReluGap, "ac9", SEED, json!({ "d": 5, "n_list": [100, 1000, 10_000], "trials": 20 }));
        let r = cx.run(spec);
        let slope = f(&r["slope"]);
        ((slope - AC9_SLOPE).abs() <= AC9_SLOPE_TOL, format!("slope {slope:.3} in {AC9_SLOPE} ± {AC9_SLOPE_TOL}"))
    });
    lines.push(Line { id: 9, title: "uniform-convergence scaling", pass, detail, elapsed: el, limit: secs(600) });
    lines.last().unwrap().print();

    let ((pass, detail), el) = timed(|| {
        let mut rates = Vec::new();
        let mut containment = 0.0;
        for n in AC10_NS {
            let spec = cx.spec(Kind::ReluRecovery, &format!("ac10-{n}"), SEED, json!({ "d": 2, "n": n, "eps": 0.2, "trials": 20 }));
            let r = cx.run(spec);
            rates.push(f(&r["success_rate"]));
            containment = f(&r["containment"]);
        }
        let last = *rates.last().unwrap();
        let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
        (
            last >= AC10_MIN_SUCCESS && containment >= AC10_MIN_CONTAINMENT && monotone,
            format!("success by n {rates:?} (monotone {monotone}), containment {containment:.3} at n=1e4"),
        )
    });
    lines.push(Line { id: 10, title: "ReLU recovery", pass, detail, elapsed: el, limit: secs(600) });
    lines.last().unwrap().print();

    let ((pass, detail), el) = timed(|| {
        let mut ok = true;
        let mut parts = Vec::new();
        for dim in [1usize, 2] {
            let spec = cx.spec(Kind::ExpSearch, &format!("ac11-{dim}"), SEED, json!({ "problem": "double-well", "dim": dim, "instances": 10 }));
            let resolved = spec.resolve().unwrap().spec;
            let (eps, rho, nu) = (f(&resolved.params["eps"]), f(&resolved.params["rho"]), f(&resolved.params["nu"]));
            let r = cx.run(spec);
            let passed = r["passed"].as_u64().unwrap();
            ok &= passed == 10 && nu <= (eps.powi(3) / rho).sqrt() / 10.0 * (1.0 + 1e-12);
            parts.push(format!("d={dim}: {passed}/10"));
        }
        (ok, parts.join(", "))
    });
    lines.push(Line { id: 11, title: "exhaustive certifier", pass, detail, elapsed: el, limit: secs(300) });
    lines.last().unwrap().print();

    // 12: rerun everything into a second directory and compare bytes
    let ((pass, detail), el) = timed(|| {
        let mut specs = cx.specs.clone();
        for s in &mut specs {
            if s.kind == Kind::SmoothingAudit {
                s.params.insert("points".into(), json!(AC12_AUDIT_POINTS));
                s.output_path.set_file_name(format!("{}-short", s.output_path.file_name().unwrap().to_string_lossy()));
                run(s, &RunOptions::default()).unwrap();
            }
        }
        let dir = cx.dir.join("a");
        let before = files_under(&dir);
        for s in &specs {
            run(s, &RunOptions::default()).unwrap();
        }
        let after = files_under(&dir);
        let differing = before.keys().filter(|k| before.get(*k) != after.get(*k)).count();
        let direct_again = [("ac1", ac1().2), ("ac7", ac7().2), ("ac8", ac8().2)];
        let direct_same = direct_again.iter().all(|(k, v)| &cx.direct[*k] == v);
        (
            differing == 0 && before.len() == after.len() && direct_same,
            format!("{} files compared, {differing} differ; direct experiments identical: {direct_same}", before.len()),
        )
    });
    lines.push(Line { id: 12, title: "determinism", pass, detail, elapsed: el, limit: secs(1200) });
    lines.last().unwrap().print();

    let failed: Vec<usize> = lines.iter().filter(|l| !l.ok()).map(|l| l.id).collect();
    println!("acceptance: {}/{} passed", lines.len() - failed.len(), lines.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
