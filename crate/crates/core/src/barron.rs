//! Upper bounds on Barron constants: the generic bounds in terms of `L¹`
//! norms of derivatives, their specializations to the smoothed conditional
//! expectation (truncation) and log-likelihood ratio (randomization), and
//! the exact value for the identity channel.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI};

use serde::Serialize;

use crate::error::{domain, Result};
use crate::mechanism::{law_l1_norms, lambdas, MechanismConfig, PostProcessedLaw, PostProcessing, Target};
use crate::scenario::{Scenario, SupportGeometry};
use crate::special::{integrate_points, ln_gamma, QuadratureSpec};

/// `2√2/√π`, the constant of the one-dimensional bound.
pub fn one_d_constant() -> f64 {
    2.0 * 2f64.sqrt() / PI.sqrt()
}

/// `2√2/(e√π)`, the additive term of the unconditional forms.
fn unconditional_offset() -> f64 {
    one_d_constant() / E
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return domain(format!("{name} must be positive and finite, got {v}"));
    }
    Ok(())
}

/// Both branches of the one-dimensional bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OneDimBound {
    /// `(2√2/√π)(1 + log(√(n1·n3)/n2))·n2`, from the optimal pair of cut-offs.
    pub optimized: f64,
    /// `(2√2/√π)√(n1·n3)`, from a single cut-off.
    pub equal_cutoffs: f64,
    /// Whether the optimal cut-offs are ordered (`n2² ≤ n1·n3`).
    pub optimized_admissible: bool,
    /// The bound in force.
    pub value: f64,
}

/// Bound on `C_h` from `n_j = ‖h^{(j)}‖₁`, `j = 1, 2, 3`.
///
/// The optimized branch is used only when its cut-offs `n2/n1 ≤ n3/n2` are
/// ordered; otherwise the single cut-off branch is the best admissible one.
pub fn bound_1d_parts(n1: f64, n2: f64, n3: f64) -> Result<OneDimBound> {
    check_positive("n1", n1)?;
    check_positive("n2", n2)?;
    check_positive("n3", n3)?;
    let c = one_d_constant();
    let root = (n1 * n3).sqrt();
    let optimized = c * (1.0 + (root / n2).ln()) * n2;
    let equal_cutoffs = c * root;
    let optimized_admissible = n2 <= root;
    let value = if optimized_admissible { optimized.min(equal_cutoffs) } else { equal_cutoffs };
    Ok(OneDimBound { optimized, equal_cutoffs, optimized_admissible, value })
}

pub fn bound_1d(n1: f64, n2: f64, n3: f64) -> Result<f64> {
    Ok(bound_1d_parts(n1, n2, n3)?.value)
}

/// `√(2/π)(n1·λ₁ + n2·log(λ₂/λ₁) + n3/λ₂)`, valid for any `0 < λ₁ ≤ λ₂`.
pub fn two_cutoff_bound(n1: f64, n2: f64, n3: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    check_positive("lambda1", lambda1)?;
    check_positive("lambda2", lambda2)?;
    if lambda1 > lambda2 {
        return domain(format!("cut-offs must satisfy lambda1 <= lambda2, got {lambda1} > {lambda2}"));
    }
    Ok((2.0 / PI).sqrt() * (n1 * lambda1 + n2 * (lambda2 / lambda1).ln() + n3 / lambda2))
}

/// `A_d = ((d+1)/d^{d/(d+1)}) · d^{d/2} / (2^{d/2} Γ(d/2 + 1))`.
pub fn a_d(d: u32) -> Result<f64> {
    if d == 0 {
        return domain("dimension must be at least 1");
    }
    let d = f64::from(d);
    let ln = (d + 1.0).ln() - d / (d + 1.0) * d.ln() + 0.5 * d * d.ln() - 0.5 * d * 2f64.ln() - ln_gamma(0.5 * d + 1.0)?;
    Ok(ln.exp())
}

/// `A_d · N1^{1/(d+1)} · N2^{d/(d+1)}`.
pub fn bound_dd(d: u32, n1: f64, n2: f64) -> Result<f64> {
    check_positive("N1", n1)?;
    check_positive("N2", n2)?;
    let a = a_d(d)?;
    let d = f64::from(d);
    Ok(a * n1.powf(1.0 / (d + 1.0)) * n2.powf(d / (d + 1.0)))
}

/// Bounds on `(M₀, M₁, M₂)` when `Supp(f₊) ⊆ [γ, 1]` and `Supp(f₋) ⊆ [-1, -γ]`.
pub fn moment_bounds_separated(sigma: f64, gamma: f64, lambda_plus: f64, lambda_minus: f64) -> Result<(f64, f64, f64)> {
    check_positive("sigma", sigma)?;
    check_positive("lambda_plus", lambda_plus)?;
    check_positive("lambda_minus", lambda_minus)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return domain(format!("separation margin must lie in (0, 1], got {gamma}"));
    }
    let ratio = (lambda_plus * lambda_plus + lambda_minus * lambda_minus) / (lambda_plus * lambda_minus);
    let s2 = sigma * sigma;
    let t = s2 / (2.0 * gamma);
    let w = ratio * (-2.0 * gamma / s2).exp();
    Ok((2.0 + t * w, 2.0 + (t * t + t) * w, 2.0 + (2.0 * t * t * t + 2.0 * t * t + t) * w))
}

/// Bounds on `(M₀, M₁, M₂)` for overlapping supports whose extremes
/// determine `Y`, evaluated at margin `γ ∈ (γ₀, 1)`.
#[allow(clippy::too_many_arguments)]
pub fn moment_bounds_overlapping(
    sigma: f64,
    gamma: f64,
    gamma0: f64,
    lambda_plus: f64,
    lambda_minus: f64,
    delta_plus: f64,
    delta_minus: f64,
) -> Result<(f64, f64, f64)> {
    check_positive("sigma", sigma)?;
    check_positive("lambda_plus", lambda_plus)?;
    check_positive("lambda_minus", lambda_minus)?;
    if !(gamma0 > 0.0 && gamma0 < gamma && gamma < 1.0) {
        return domain(format!("need 0 < gamma0 < gamma < 1, got gamma0 = {gamma0}, gamma = {gamma}"));
    }
    for (name, d) in [("delta_plus", delta_plus), ("delta_minus", delta_minus)] {
        if !(d > 0.0 && d <= 1.0) {
            return domain(format!("{name} must lie in (0, 1], got {d}"));
        }
    }
    let big_lambda = (delta_plus * lambda_plus * lambda_plus + delta_minus * lambda_minus * lambda_minus)
        / (delta_plus * lambda_plus * delta_minus * lambda_minus);
    let t = sigma * sigma / (gamma - gamma0);
    Ok((
        2.0 + t * big_lambda,
        2.0 + (t * t + t) * big_lambda,
        2.0 + (2.0 * t * t * t + 2.0 * t * t + t) * big_lambda,
    ))
}

/// One bound evaluation at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarronBoundReport {
    pub sigma: f64,
    /// Bound on the constant of the function extended to ℝ.
    pub bound_value: f64,
    /// `r · bound_value`, the bound for the restriction to `[-r, r]`.
    pub scaled_bound: f64,
    /// Whether the large-σ side condition holds.
    pub valid: bool,
    pub intermediates: BTreeMap<String, f64>,
}

impl BarronBoundReport {
    fn new(sigma: f64, r: f64, bound_value: f64, valid: bool, intermediates: BTreeMap<String, f64>) -> Result<Self> {
        if !(bound_value >= 0.0 && bound_value.is_finite()) {
            return Err(crate::Error::Domain(format!("bound evaluates to {bound_value} at sigma = {sigma}")));
        }
        Ok(Self { sigma, bound_value, scaled_bound: r * bound_value, valid, intermediates })
    }
}

/// Truncation-path bound from moment quantities `M₀, M₁, M₂`.
///
/// Uses the large-σ form when `⁴√(8e·M₀) ≤ σ`, otherwise the unconditional
/// form. Both are recorded.
pub fn bound_truncation(sigma: f64, r: f64, m0: f64, m1: f64, m2: f64) -> Result<BarronBoundReport> {
    check_positive("sigma", sigma)?;
    check_positive("r", r)?;
    check_positive("M0", m0)?;
    check_positive("M1", m1)?;
    check_positive("M2", m2)?;
    let s4 = sigma.powi(4);
    let lead = 8.0 * one_d_constant() * m0 / s4;
    let big_m = m0 * (64.0 * m2 + 176.0 * m1 + (136.0 + 48.0 * sigma * sigma) * m0);
    let unconditional = unconditional_offset() + lead * (1.0 + 0.5 * (big_m / (s4 * s4)).ln());
    let large_sigma = lead * (1.0 + 0.5 * (m2 / m0 + 3.0 * m1 / m0 + 3.0 + sigma * sigma).ln());
    let valid = 8.0 * E * m0 <= s4;
    let value = if valid { large_sigma } else { unconditional };
    let intermediates = BTreeMap::from([
        ("m0".to_string(), m0),
        ("m1".to_string(), m1),
        ("m2".to_string(), m2),
        ("m_sigma".to_string(), big_m),
        ("unconditional".to_string(), unconditional),
        ("large_sigma".to_string(), large_sigma),
    ]);
    BarronBoundReport::new(sigma, r, value, valid, intermediates)
}

/// Randomization-path bound from the prior and the weights `λ±`.
///
/// Uses the large-σ form when `N₂ ≤ 1/e`, otherwise the unconditional form.
pub fn bound_randomization(sigma: f64, r: f64, p: f64, lambda_plus: f64, lambda_minus: f64) -> Result<BarronBoundReport> {
    check_positive("sigma", sigma)?;
    check_positive("r", r)?;
    check_positive("lambda_plus", lambda_plus)?;
    check_positive("lambda_minus", lambda_minus)?;
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("prior must lie in (0, 1), got {p}"));
    }
    let big_lambda = |a: i32| (p / lambda_plus).powi(a) + ((1.0 - p) / lambda_minus).powi(a);
    let (l1, l2, l3) = (big_lambda(1), big_lambda(2), big_lambda(3));
    let sqrt_2pi = (2.0 * PI).sqrt();
    let n1 = l1 / (sqrt_2pi * sigma);
    let n2 = l1 / sigma.powi(2) + l2 / (8.0 * PI.sqrt() * sigma.powi(3));
    let n3 = 5.0 * l1 / (sqrt_2pi * sigma.powi(3))
        + 3.0 * 3f64.sqrt() * l2 / (8.0 * sqrt_2pi * sigma.powi(4))
        + 2f64.sqrt() * l3 / (9.0 * PI.powf(1.5) * sigma.powi(5));
    let lead = one_d_constant() * n2;
    let unconditional = unconditional_offset() + lead * (1.0 + 0.5 * (n1 * n3).ln());
    let large_sigma = lead * (1.0 + 0.5 * (n1 * n3 / (n2 * n2)).ln());
    let valid = n2 <= 1.0 / E;
    let value = if valid { large_sigma } else { unconditional };
    let intermediates = BTreeMap::from([
        ("lambda_1".to_string(), l1),
        ("lambda_2".to_string(), l2),
        ("lambda_3".to_string(), l3),
        ("n1".to_string(), n1),
        ("n2".to_string(), n2),
        ("n3".to_string(), n3),
        ("lambda_plus".to_string(), lambda_plus),
        ("lambda_minus".to_string(), lambda_minus),
        ("unconditional".to_string(), unconditional),
        ("large_sigma".to_string(), large_sigma),
    ]);
    BarronBoundReport::new(sigma, r, value, valid, intermediates)
}

/// Exact constant `1/σ²` of `tanh(x/σ²)`, the conditional expectation for
/// `Y ~ Unif{±1}`, `X = Y` under truncation.
pub fn exact_benchmark(sigma: f64) -> Result<f64> {
    check_positive("sigma", sigma)?;
    Ok(1.0 / (sigma * sigma))
}

/// `(1/√(2π)) ∫ |F[(tanh(·/σ²))'](ω)| dω`, using the transform
/// `F[sech²](ω) = √(π/2)·ω·csch(πω/2)` and quadrature over `ω`.
pub fn fourier_benchmark(sigma: f64, spec: &QuadratureSpec) -> Result<f64> {
    check_positive("sigma", sigma)?;
    let s2 = sigma * sigma;
    // F[(1/σ²) sech²(x/σ²)](ω) = F[sech²](σ²ω)
    let transform = |w: f64| {
        let u = s2 * w;
        let ratio = if u.abs() < 1e-8 { 2.0 / PI } else { u / (0.5 * PI * u).sinh() };
        (0.5 * PI).sqrt() * ratio
    };
    // the transform decays like e^{-π|u|/2}; 60/σ² leaves less than 1e-38
    let w = 60.0 / s2;
    let v = integrate_points(|t| transform(t).abs(), &[-w, 0.0, w], spec)?;
    Ok(v / (2.0 * PI).sqrt())
}

/// Numerical moment quantities `M_α = ∫ |x|^α g₊g₋/(g₊+g₋)² dx`, `α = 0, 1, 2`.
pub fn moments_numeric(law: &PostProcessedLaw, spec: &QuadratureSpec) -> Result<(f64, f64, f64)> {
    let w = law.norm_window(Target::Eta, spec);
    let failure = std::cell::Cell::new(None);
    let v = crate::special::integrate_vec::<3, _>(
        |x| match law.mixing_weight(x) {
            Ok(m) => [m, x.abs() * m, x * x * m],
            Err(e) => {
                failure.set(Some(e));
                [0.0; 3]
            }
        },
        &[-w, -1.0, 0.0, 1.0, w],
        spec,
    )?;
    if let Some(e) = failure.take() {
        return Err(e);
    }
    Ok((v[0], v[1], v[2]))
}

/// Where the moment quantities of a truncation report come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentSource {
    /// Closed-form bounds implied by the support geometry.
    Geometry(SupportGeometry),
    /// Direct quadrature.
    Numeric,
}

/// Truncation-path report for a scenario: weights from the mechanism,
/// moments from `source`.
pub fn truncation_report(scenario: &Scenario, config: &MechanismConfig, source: MomentSource, spec: &QuadratureSpec) -> Result<BarronBoundReport> {
    let config = MechanismConfig { mode: PostProcessing::Truncate, ..*config };
    let (lp, lm) = lambdas(scenario, &config)?;
    let (m0, m1, m2) = match source {
        MomentSource::Geometry(SupportGeometry::Separated { gamma }) => moment_bounds_separated(config.sigma, gamma, lp, lm)?,
        MomentSource::Geometry(SupportGeometry::Overlapping { gamma0, gamma, delta_plus, delta_minus }) => {
            moment_bounds_overlapping(config.sigma, gamma, gamma0, lp, lm, delta_plus, delta_minus)?
        }
        MomentSource::Numeric => moments_numeric(&PostProcessedLaw::with_lambdas(scenario, &config, lp, lm)?, spec)?,
    };
    let mut report = bound_truncation(config.sigma, config.r, m0, m1, m2)?;
    report.intermediates.insert("lambda_plus".into(), lp);
    report.intermediates.insert("lambda_minus".into(), lm);
    Ok(report)
}

/// Randomization-path report for a scenario, with exact weights.
pub fn randomization_report(scenario: &Scenario, config: &MechanismConfig) -> Result<BarronBoundReport> {
    let config = MechanismConfig { mode: PostProcessing::Randomize, ..*config };
    let (lp, lm) = lambdas(scenario, &config)?;
    bound_randomization(config.sigma, config.r, scenario.prior_p(), lp, lm)
}

/// The one-dimensional bound applied to derivative norms computed by quadrature.
pub fn bound_numeric_route(target: Target, scenario: &Scenario, config: &MechanismConfig, spec: &QuadratureSpec) -> Result<BarronBoundReport> {
    let config = MechanismConfig { mode: target.mode(), ..*config };
    let law = PostProcessedLaw::new(scenario, &config)?;
    let (n1, n2, n3) = law_l1_norms(&law, target, spec)?;
    let parts = bound_1d_parts(n1, n2, n3)?;
    let intermediates = BTreeMap::from([
        ("n1".to_string(), n1),
        ("n2".to_string(), n2),
        ("n3".to_string(), n3),
        ("optimized".to_string(), parts.optimized),
        ("equal_cutoffs".to_string(), parts.equal_cutoffs),
    ]);
    BarronBoundReport::new(config.sigma, config.r, parts.value, true, intermediates)
}
