//! Acceptance criteria 1–12, one PASS/FAIL line each. Runs the release
//! pipelines at desk scale, so expect several minutes on one core.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use mmse_bounds::barron::{randomization_report, truncation_report, MomentSource};
use mmse_bounds::mechanism::{MechanismConfig, PostProcessing};
use mmse_bounds::scenario::{Scenario, SupportGeometry};
use mmse_bounds::special::QuadratureSpec;
use mmse_bounds_cli::commands::certify_rows;
use mmse_bounds_cli::validate::{self, SuiteReport};
use mmse_bounds_cli::ExperimentConfig;

type Check = Result<String, String>;

struct Runner {
    failed: Vec<u32>,
}

impl Runner {
    fn run(&mut self, id: u32, title: &str, limit: Duration, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (mut pass, mut detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if took > limit {
            pass = false;
            detail = format!("{detail}; over the {}s budget", limit.as_secs());
        }
        if !pass {
            self.failed.push(id);
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {title}: {detail} ({:.1}s)", took.as_secs_f64());
    }
}

fn suite(r: SuiteReport) -> Check {
    let line = format!("{} cases, {} failures", r.cases, r.failures);
    if r.passed { Ok(line) } else { Err(format!("{line}; first: {}", r.detail.unwrap_or_default())) }
}

struct Cli {
    dir: tempfile::TempDir,
    calls: usize,
}

impl Cli {
    /// Runs a subcommand and returns the CSV bytes.
    fn csv(&mut self, command: &str, config: &str, extra: &[&str]) -> Result<Vec<u8>, String> {
        self.calls += 1;
        let cfg = self.path(&format!("config{}.json", self.calls));
        let out = self.path(&format!("out{}.csv", self.calls));
        std::fs::write(&cfg, config).map_err(|e| e.to_string())?;
        let status = Command::new(env!("CARGO_BIN_EXE_mmse-bounds"))
            .arg(command)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(extra)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("{command} exited with {status}"));
        }
        std::fs::read(&out).map_err(|e| e.to_string())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn parse(bytes: &[u8]) -> Result<Self, String> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
        let rows = r.records().map(|rec| rec.map(|v| v.iter().map(String::from).collect())).collect::<Result<_, _>>();
        Ok(Self { header, rows: rows.map_err(|e| e.to_string())? })
    }

    fn col(&self, name: &str) -> Vec<&str> {
        let j = self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().map(|r| r[j].as_str()).collect()
    }

    fn num(&self, name: &str) -> Vec<f64> {
        self.col(name).iter().map(|v| v.parse().unwrap_or(f64::NAN)).collect()
    }
}

fn first_valid(valid: impl Fn(f64) -> bool) -> Option<f64> {
    (1..=400).map(|i| 0.05 * f64::from(i)).find(|&s| valid(s))
}

fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json).expect("acceptance config")
}

fn lower_bounds(cfg: &ExperimentConfig) -> Result<Vec<f64>, String> {
    let rows = certify_rows(cfg).map_err(|e| e.to_string())?;
    Ok(rows.iter().map(|r| r.lower_bound.unwrap_or(f64::NAN)).collect())
}

fn main() {
    let seed = 20_240_601;
    let mut runner = Runner { failed: Vec::new() };
    let mut cli = Cli { dir: tempfile::tempdir().expect("temp dir"), calls: 0 };
    let secs = Duration::from_secs;

    runner.run(1, "benchmark 1/σ² and its Fourier integral within 1e-6, σ ∈ {1, 2, 5}", secs(5), || suite(validate::benchmark_suite()));
    runner.run(2, "kernel-derivative norm closed forms within 1e-7, σ ∈ {0.5, 1, 3}", secs(5), || suite(validate::kernel_norm_suite()));
    runner.run(3, "η/θ derivative formulas vs finite differences, rel < 1e-4, 100 triples", secs(30), || {
        suite(validate::derivative_suite(100, seed))
    });
    runner.run(4, "DP equals brute force on 200 instances, and memorizes at k = n", secs(30), || {
        suite(validate::dp_suite(validate::reference_dp, seed))
    });
    runner.run(5, "DP loss ≤ 1 − k/n on 100 instances, n = 500, k ∈ {5, 50, 250}", secs(30), || {
        suite(validate::memorization_suite(seed))
    });
    runner.run(6, "gradient vs central differences, rel < 1e-5, 50 draws", secs(10), || suite(validate::gradient_suite(seed)));

    runner.run(7, "validity thresholds 4.70 and 4.25 (± 0.05) on the 0.05 grid", secs(5), || {
        let sc = Scenario::identity_channel();
        let geometry = MomentSource::Geometry(SupportGeometry::separated(&sc, 1.0).expect("identity geometry"));
        let spec = QuadratureSpec::default();
        let mech = |s: f64, mode| MechanismConfig::new(s, 2.0, mode).expect("positive sigma");
        let t5 = first_valid(|s| truncation_report(&sc, &mech(s, PostProcessing::Truncate), geometry, &spec).is_ok_and(|r| r.valid));
        let t6 = first_valid(|s| randomization_report(&sc, &mech(s, PostProcessing::Randomize)).is_ok_and(|r| r.valid));
        let line = format!("truncation {t5:?}, randomization {t6:?}");
        let near = |v: Option<f64>, want: f64| v.is_some_and(|v| (v - want).abs() <= 0.05 + 1e-9);
        if near(t5, 4.70) && near(t6, 4.25) { Ok(line) } else { Err(line) }
    });

    let sweep_cfg = r#"{"mechanism": {"sigma": {"start": 5, "stop": 20, "step": 0.25}}}"#;
    let mut sweep = Vec::new();
    runner.run(8, "scaled randomization bound ≤ truncation bound, both ≥ 2/σ², σ ∈ [5, 20]", secs(10), || {
        sweep = cli.csv("barron-sweep", sweep_cfg, &["--seed", "1"])?;
        let t = Csv::parse(&sweep)?;
        let (sigma, t5, t6, bench) = (t.num("sigma"), t.num("thm5_bound"), t.num("thm6_bound"), t.num("prop2_benchmark"));
        let valid = t.col("thm5_valid").iter().chain(&t.col("thm6_valid")).all(|v| *v == "true");
        let bad: Vec<f64> = (0..sigma.len())
            .filter(|&i| {
                let two = 2.0 / (sigma[i] * sigma[i]);
                !(t6[i] <= t5[i] && t5[i] >= two && t6[i] >= two && (bench[i] - two).abs() <= 1e-11 * two)
            })
            .map(|i| sigma[i])
            .collect();
        let line = format!("{} grid points, ordering violated at {bad:?}", sigma.len());
        if valid && bad.is_empty() && sigma.len() == 61 { Ok(line) } else { Err(line) }
    });

    let estimate_cfg = r#"{"mechanism": {"sigma": [5, 7.5, 10, 15, 20]}}"#;
    let mut estimates = Vec::new();
    runner.run(9, "n = 10⁴, k = 100: DP ≤ 0.96, trained ≥ 0.99, estimate = DP at 5 noise levels", secs(300), || {
        estimates = cli.csv("estimate", estimate_cfg, &["--seed", "7"])?;
        let t = Csv::parse(&estimates)?;
        let (dp, gd, est) = (t.num("dp_loss"), t.num("gd_loss"), t.num("estimate"));
        let methods = t.col("method");
        let ok = dp.len() == 5 && (0..5).all(|i| dp[i] <= 0.96 && gd[i] >= 0.99 && est[i] == dp[i] && methods[i] == "dp");
        let line = format!("dp {dp:?}, trained {gd:?}");
        if ok { Ok(line) } else { Err(line) }
    });

    runner.run(10, "lower bound ≤ exact MMSE in ≥ 38 of 40 seeded runs at σ = 10", secs(600), || {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(4);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| e.to_string())?;
        let runs: Vec<Result<(f64, f64), String>> = pool.install(|| {
            use rayon::prelude::*;
            (0..40u64)
                .into_par_iter()
                .map(|s| {
                    let mut cfg = config(r#"{"mechanism": {"sigma": [10]}}"#);
                    cfg.seed = 1000 + s;
                    let row = certify_rows(&cfg).map_err(|e| e.to_string())?.remove(0);
                    Ok((row.lower_bound.unwrap_or(f64::NAN), row.oracle_mmse))
                })
                .collect()
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
        let sound = runs.iter().filter(|(lb, mmse)| lb <= mmse).count();
        let lb_max = runs.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
        let line = format!("{sound}/40 sound on {workers} worker(s), largest lower bound {lb_max:.4}, exact {:.6}", runs[0].1);
        if sound >= 38 { Ok(line) } else { Err(line) }
    });

    runner.run(11, "n = 10⁵, k = 1000 lower bounds dominate n = 10⁴, k = 100 at ≥ 80% of σ ∈ {5, …, 20}", secs(900), || {
        let grid = r#""mechanism": {"sigma": {"start": 5, "stop": 20, "step": 1}}, "seed": 11"#;
        let small = lower_bounds(&config(&format!(r#"{{{grid}, "estimator": {{"n": 10000, "minimizers": "dp_only"}}}}"#)))?;
        let large = lower_bounds(&config(&format!(r#"{{{grid}, "estimator": {{"n": 100000, "minimizers": "dp_only"}}}}"#)))?;
        let wins = small.iter().zip(&large).filter(|(s, l)| l >= s).count();
        let line = format!("{wins}/{} points; at σ = 5: {:.4} vs {:.4}, at σ = 20: {:.4} vs {:.4}", small.len(), large[0], small[0], large[15], small[15]);
        if small.len() == 16 && wins * 5 >= small.len() * 4 { Ok(line) } else { Err(line) }
    });

    runner.run(12, "byte-identical CSVs on reruns and across thread counts", secs(300), || {
        let mut diffs = Vec::new();
        let mut same = |name: &str, a: &[u8], b: Result<Vec<u8>, String>| match b {
            Ok(b) if a == b.as_slice() && !a.is_empty() => {}
            Ok(_) => diffs.push(name.to_string()),
            Err(e) => diffs.push(format!("{name}: {e}")),
        };
        same("barron-sweep rerun", &sweep, cli.csv("barron-sweep", sweep_cfg, &["--seed", "1"]));
        same("barron-sweep 2 threads", &sweep, cli.csv("barron-sweep", sweep_cfg, &["--seed", "1", "--threads", "2"]));
        same("estimate 2 threads", &estimates, cli.csv("estimate", estimate_cfg, &["--seed", "7", "--threads", "2"]));
        let small = r#"{"mechanism": {"sigma": [6, 12]}, "estimator": {"n": 2000, "k": 20, "protocol": {"restarts": 2}}}"#;
        let first = cli.csv("certify", small, &["--seed", "3"]).unwrap_or_default();
        same("certify rerun", &first, cli.csv("certify", small, &["--seed", "3"]));
        same("certify 2 threads", &first, cli.csv("certify", small, &["--seed", "3", "--threads", "2"]));
        let line = "5 comparisons".to_string();
        if diffs.is_empty() { Ok(line) } else { Err(format!("differing: {diffs:?}")) }
    });

    let total = 12 - runner.failed.len();
    println!("{total}/12 criteria passed");
    if !runner.failed.is_empty() {
        std::process::exit(1);
    }
}
