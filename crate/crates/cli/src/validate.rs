//! Self-check suites run by the `validate` subcommand, each against an
//! independent oracle.

use std::time::Instant;

use mmse_bounds::barron::{exact_benchmark, fourier_benchmark};
use mmse_bounds::estimator::{brute_force_stepfunctions, dp_min_loss, dp_minimize, NetworkParams, OutputActivation};
use mmse_bounds::mechanism::{MechanismConfig, PostProcessedLaw, PostProcessing, Target};
use mmse_bounds::rng::{stream, StreamRng};
use mmse_bounds::scenario::{ConditionalLaw, SampleSet, Scenario};
use mmse_bounds::special::{integrate_points, kernel_derivative_norms, GaussianKernel, QuadratureSpec};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    pub seconds: f64,
    /// First failing case, if any.
    pub detail: Option<String>,
}

/// Loss-only step-function minimizer under test.
pub type DpFn = fn(&SampleSet, usize) -> mmse_bounds::Result<f64>;

pub fn reference_dp(samples: &SampleSet, k: usize) -> mmse_bounds::Result<f64> {
    dp_minimize(samples, k).map(|r| r.0)
}

struct Tally {
    suite: &'static str,
    start: Instant,
    cases: usize,
    failures: usize,
    detail: Option<String>,
}

impl Tally {
    fn new(suite: &'static str) -> Self {
        Self { suite, start: Instant::now(), cases: 0, failures: 0, detail: None }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(what());
            }
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            suite: self.suite,
            passed: self.failures == 0 && self.cases > 0,
            cases: self.cases,
            failures: self.failures,
            seconds: self.start.elapsed().as_secs_f64(),
            detail: self.detail,
        }
    }
}

/// `1/σ²` benchmark against its Fourier-integral evaluation, σ ∈ {1, 2, 5}.
pub fn benchmark_suite() -> SuiteReport {
    let mut t = Tally::new("noise_benchmark");
    let spec = QuadratureSpec::default().with_tolerances(1e-13, 1e-12);
    for sigma in [1.0, 2.0, 5.0] {
        let exact = exact_benchmark(sigma);
        let fourier = fourier_benchmark(sigma, &spec);
        let ok = matches!((&exact, &fourier), (Ok(e), Ok(f)) if *e == 1.0 / (sigma * sigma) && (f - e).abs() < 1e-6);
        t.check(ok, || format!("sigma {sigma}: exact {exact:?}, fourier {fourier:?}"));
    }
    t.finish()
}

/// Quadrature of `|K^{(j)}|` powers against the closed forms, σ ∈ {0.5, 1, 3}.
pub fn kernel_norm_suite() -> SuiteReport {
    let mut t = Tally::new("kernel_norms");
    let spec = QuadratureSpec::default().with_tolerances(1e-13, 1e-13);
    for sigma in [0.5, 1.0, 3.0] {
        let k = GaussianKernel::new(sigma).expect("positive width");
        let closed = kernel_derivative_norms(sigma).expect("positive width");
        let r3 = 3f64.sqrt() * sigma;
        let pts: Vec<f64> = [-40.0 * sigma, -r3, -sigma, 0.0, sigma, r3, 40.0 * sigma].to_vec();
        let quad = |f: &dyn Fn(f64) -> f64| integrate_points(f, &pts, &spec).unwrap_or(f64::NAN);
        let d = |j: usize| move |x: f64| k.derivatives(x)[j];
        let cases = [
            ("l1_d1", quad(&|x| d(1)(x).abs()), closed.l1_d1),
            ("l2sq_d1", quad(&|x| d(1)(x).powi(2)), closed.l2sq_d1),
            ("l3cu_d1", quad(&|x| d(1)(x).abs().powi(3)), closed.l3cu_d1),
            ("l2_d2", quad(&|x| d(2)(x).powi(2)).sqrt(), closed.l2_d2),
        ];
        for (name, q, c) in cases {
            t.check((q - c).abs() < 1e-7, || format!("sigma {sigma} {name}: quadrature {q} vs closed form {c}"));
        }
        let l1_d2 = quad(&|x| d(2)(x).abs());
        let l1_d3 = quad(&|x| d(3)(x).abs());
        t.check(l1_d2 <= closed.l1_d2_upper, || format!("sigma {sigma}: ‖K''‖₁ = {l1_d2} above its bound"));
        t.check(l1_d3 <= closed.l1_d3_upper, || format!("sigma {sigma}: ‖K'''‖₁ = {l1_d3} above its bound"));
    }
    t.finish()
}

/// Random conditional law for `Y = ±1`, living towards `±1`.
fn random_law(rng: &mut StreamRng, positive: bool) -> ConditionalLaw {
    let sign = if positive { 1.0 } else { -1.0 };
    let (a, b): (f64, f64) = (rng.random(), rng.random());
    let lo = -0.6 + 1.4 * a.min(b);
    let hi = (lo + 0.05 + (1.0 - lo - 0.05) * a.max(b)).min(1.0);
    let (lo, hi) = if positive { (lo, hi) } else { (-hi, -lo) };
    let law = match rng.random_range(0..3) {
        0 => ConditionalLaw::point_mass(sign * (0.1 + 0.9 * a)),
        1 => ConditionalLaw::uniform(lo, hi),
        _ => ConditionalLaw::triangular(lo, hi, if positive { hi } else { lo }),
    };
    law.expect("generated law is well formed")
}

pub fn random_scenario(rng: &mut StreamRng) -> Scenario {
    let p = rng.random_range(0.2..0.8);
    let plus = random_law(rng, true);
    let minus = random_law(rng, false);
    Scenario::new(p, plus, minus).expect("generated scenario is well formed")
}

/// Closed-form derivatives of `η^σ` and `θ^σ` against five-point finite
/// differences of the next-lower order, on `cases` random triples.
pub fn derivative_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut t = Tally::new("derivative_formulas");
    let mut rng = stream(seed, 10);
    for case in 0..cases {
        let sc = random_scenario(&mut rng);
        let sigma = rng.random_range(0.5..3.0);
        let x = rng.random_range(-3.0..3.0);
        let (mode, target) =
            if case % 2 == 0 { (PostProcessing::Truncate, Target::Eta) } else { (PostProcessing::Randomize, Target::Theta) };
        let c = MechanismConfig::new(sigma, 2.0, mode).expect("positive sigma");
        let law = PostProcessedLaw::new(&sc, &c).expect("generated law");
        let eval = |z: f64| law.derivatives(target, z);
        let Ok(d) = eval(x) else {
            t.check(false, || format!("{target:?} failed at sigma {sigma}, x {x}"));
            continue;
        };
        let h = 1e-3 * sigma;
        for j in 1..4 {
            let f = |z: f64| eval(z).map(|v| v[j - 1]).unwrap_or(f64::NAN);
            let fd = (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h);
            let floor = 1e-9 * sigma.powi(-(j as i32));
            let ok = (fd - d[j]).abs() <= 1e-4 * fd.abs().max(d[j].abs()) + floor;
            t.check(ok, || format!("{target:?} order {j}, sigma {sigma}, x {x}: formula {} vs fd {fd}", d[j]));
        }
    }
    t.finish()
}

fn random_labels(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Distinct, shuffled `x` values with labels in `{±1}`.
fn random_instance(rng: &mut StreamRng, n: usize) -> SampleSet {
    let mut xs: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
    xs.shuffle(rng);
    let ys = random_labels(rng, n);
    SampleSet::new(xs, ys).expect("equal lengths")
}

/// The step-function program against exhaustive search on 200 instances with
/// `n ∈ [3, 12]`, `k ∈ [0, 3]`, and memorization at `k = n`.
pub fn dp_suite(dp: DpFn, seed: u64) -> SuiteReport {
    let mut t = Tally::new("dp_vs_brute_force");
    let mut rng = stream(seed, 11);
    for _ in 0..200 {
        let n = rng.random_range(3..=12);
        let k = rng.random_range(0..=3);
        let s = random_instance(&mut rng, n);
        let (got, want) = (dp(&s, k), brute_force_stepfunctions(&s, k));
        t.check(matches!((&got, &want), (Ok(a), Ok(b)) if a == b), || format!("n {n}, k {k}: dp {got:?} vs brute force {want:?}"));
        let full = dp(&s, n);
        t.check(matches!(full, Ok(v) if v == 0.0), || format!("n {n}: dp at k = n gave {full:?}"));
    }
    t.finish()
}

/// `min over S_k ≤ 1 − k/n` on 100 instances with `n = 500`, `k ∈ {5, 50, 250}`.
pub fn memorization_suite(seed: u64) -> SuiteReport {
    let mut t = Tally::new("memorization_bound");
    let mut rng = stream(seed, 12);
    let n = 500;
    for case in 0..100 {
        let k = [5, 50, 250][case % 3];
        let s = random_instance(&mut rng, n);
        let loss = dp_min_loss(&s, k);
        let cap = 1.0 - k as f64 / n as f64;
        t.check(matches!(loss, Ok(v) if v <= cap), || format!("k {k}: loss {loss:?} above {cap}"));
    }
    t.finish()
}

/// Analytic loss gradient against central differences (step `1e-5`) over 50
/// draws with `k ≤ 8`, `n ≤ 32`.
pub fn gradient_suite(seed: u64) -> SuiteReport {
    let mut t = Tally::new("gradient_check");
    let mut rng = stream(seed, 13);
    let h = 1e-5;
    for _ in 0..50 {
        let k = rng.random_range(1..=8);
        let n = rng.random_range(1..=32);
        let mut w = |m: usize| (0..m).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<f64>>();
        let (a, b, c, c0) = (w(k), w(k), w(k), w(1)[0]);
        let xs = w(n).iter().map(|v| 2.0 * v).collect();
        let output = if rng.random::<bool>() { OutputActivation::Tanh } else { OutputActivation::Identity };
        let s = SampleSet::new(xs, random_labels(&mut rng, n)).expect("equal lengths");
        let p = NetworkParams::new(a, b, c, c0, output).expect("finite");
        let g = p.gradient(&s).expect("nonempty");
        let loss = |q: &NetworkParams| q.empirical_loss(&s).expect("nonempty");
        let mut coord = |name: &str, l: usize, get: fn(&mut NetworkParams, usize) -> &mut f64, analytic: f64| {
            let (mut up, mut dn) = (p.clone(), p.clone());
            *get(&mut up, l) += h;
            *get(&mut dn, l) -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            let ok = (fd - analytic).abs() <= 1e-5 * fd.abs().max(analytic.abs()).max(1e-3);
            t.check(ok, || format!("{name}[{l}] (k {k}, n {n}): analytic {analytic} vs fd {fd}"));
        };
        coord("c0", 0, |q, _| &mut q.c0, g.c0);
        for l in 0..k {
            coord("a", l, |q, l| &mut q.a[l], g.a[l]);
            coord("b", l, |q, l| &mut q.b[l], g.b[l]);
            coord("c", l, |q, l| &mut q.c[l], g.c[l]);
        }
    }
    t.finish()
}

pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        benchmark_suite(),
        kernel_norm_suite(),
        derivative_suite(100, seed),
        dp_suite(reference_dp, seed),
        memorization_suite(seed),
        gradient_suite(seed),
    ]
}
