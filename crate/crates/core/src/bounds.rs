//! Probabilistic MMSE lower bounds assembled from an empirical estimate, a
//! Barron-constant bound and a confidence level, plus an exact-MMSE oracle.

use serde::Serialize;

use crate::barron::BarronBoundReport;
use crate::error::{domain, Error, Result};
use crate::estimator::Method;
use crate::mechanism::{out_of_range_prob, MechanismConfig, PostProcessedLaw, PostProcessing};
use crate::scenario::{ConditionalLaw, Scenario};
use crate::special::{integrate_points, QuadratureSpec};

/// Which estimator class and regression function the certificate is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundPath {
    /// Identity-output networks, `η^σ` under truncation.
    IdentityEta,
    /// Tanh-output networks, `θ^σ` under randomization.
    TanhTheta,
}

impl BoundPath {
    pub fn mode(self) -> PostProcessing {
        match self {
            BoundPath::IdentityEta => PostProcessing::Truncate,
            BoundPath::TanhTheta => PostProcessing::Randomize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundCertificate {
    pub sigma: f64,
    pub estimator_value: f64,
    pub method: Method,
    pub epsilon: f64,
    pub lower_bound: f64,
    pub delta: f64,
    pub k: usize,
    pub n: usize,
    pub barron_bound_used: f64,
    /// False when the unconditional Barron form was used below its threshold.
    pub barron_valid: bool,
    pub path: BoundPath,
    pub perror_lower: f64,
}

fn check_epsilon_args(k: usize, n: usize, delta: f64, c: f64) -> Result<()> {
    if k == 0 || n == 0 {
        return domain(format!("k and n must be at least 1, got k = {k}, n = {n}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return domain(format!("Barron constant must be finite and nonnegative, got {c}"));
    }
    Ok(())
}

fn barron_terms(k: usize, c: f64) -> f64 {
    let k = k as f64;
    4.0 * c * c / k + 8.0 * c / k.sqrt()
}

/// `2(1+C)²√(2 log(1/δ)/n) + 4C²/k + 8C/√k`.
pub fn epsilon_identity(k: usize, n: usize, delta: f64, c_eta: f64) -> Result<f64> {
    check_epsilon_args(k, n, delta, c_eta)?;
    let conc = (2.0 * (1.0 / delta).ln() / n as f64).sqrt();
    Ok(2.0 * (1.0 + c_eta).powi(2) * conc + barron_terms(k, c_eta))
}

/// `2√(2 log(1/δ)/n) + 4C²/k + 8C/√k`.
pub fn epsilon_tanh(k: usize, n: usize, delta: f64, c_theta: f64) -> Result<f64> {
    check_epsilon_args(k, n, delta, c_theta)?;
    let conc = (2.0 * (1.0 / delta).ln() / n as f64).sqrt();
    Ok(2.0 * conc + barron_terms(k, c_theta))
}

/// Subtracts the estimation-plus-approximation slack from an empirical loss.
///
/// `report.scaled_bound` is used as the Barron constant. A report outside its
/// large-σ regime is refused unless `allow_unconditional` is set.
#[allow(clippy::too_many_arguments)]
pub fn certify(
    estimator_value: f64,
    method: Method,
    k: usize,
    n: usize,
    delta: f64,
    report: &BarronBoundReport,
    path: BoundPath,
    allow_unconditional: bool,
) -> Result<LowerBoundCertificate> {
    if !(estimator_value.is_finite() && estimator_value >= 0.0) {
        return domain(format!("estimator value must be finite and nonnegative, got {estimator_value}"));
    }
    if !report.valid && !allow_unconditional {
        return Err(Error::Validity { sigma: report.sigma });
    }
    let c = report.scaled_bound;
    let epsilon = match path {
        BoundPath::IdentityEta => epsilon_identity(k, n, delta, c)?,
        BoundPath::TanhTheta => epsilon_tanh(k, n, delta, c)?,
    };
    let lower_bound = (estimator_value - epsilon).max(0.0);
    Ok(LowerBoundCertificate {
        sigma: report.sigma,
        estimator_value,
        method,
        epsilon,
        lower_bound,
        delta,
        k,
        n,
        barron_bound_used: c,
        barron_valid: report.valid,
        path,
        perror_lower: lower_bound / 4.0,
    })
}

fn support_edges(law: &ConditionalLaw) -> [f64; 2] {
    let (lo, hi) = law.support();
    [lo, hi]
}

/// `mmse(Y | X̃)` for the released and post-processed observation, by
/// quadrature of `∫ 4ab/(a+b)` over `[-r, r]`, where `a`, `b` are the joint
/// densities of `(X̃, Y = ±1)`.
pub fn exact_mmse(scenario: &Scenario, config: &MechanismConfig, spec: &QuadratureSpec) -> Result<f64> {
    config.validate()?;
    spec.validate()?;
    let law = PostProcessedLaw::new(scenario, config)?;
    let p = scenario.prior_p();
    // truncation discards samples, which reweights the prior
    let (wp, wm) = match config.mode {
        PostProcessing::Truncate => {
            let (qp, qm) = out_of_range_prob(scenario, config)?;
            let (kp, km) = (p * (1.0 - qp), (1.0 - p) * (1.0 - qm));
            (kp / (kp + km), km / (kp + km))
        }
        PostProcessing::Randomize => (p, 1.0 - p),
    };
    let (r, sigma) = (config.r, config.sigma);
    let mut points = vec![-r, r];
    for edge in support_edges(scenario.plus()).into_iter().chain(support_edges(scenario.minus())) {
        for off in [0.0, 3.0, 8.0] {
            points.extend([edge - off * sigma, edge + off * sigma]);
        }
    }
    let mut points: Vec<f64> = points.into_iter().map(|t| t.clamp(-r, r)).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();

    let failure = std::cell::Cell::new(None);
    let value = integrate_points(
        |x| match law.observed_densities(x) {
            Ok((fp, fm)) => {
                let (a, b) = (wp * fp, wm * fm);
                if a + b > 0.0 { 4.0 * a * b / (a + b) } else { 0.0 }
            }
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        },
        &points,
        spec,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(value.clamp(0.0, 1.0))
}
