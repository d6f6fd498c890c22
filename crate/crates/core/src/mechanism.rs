//! The additive Gaussian mechanism `X^σ = X + σZ` followed by extreme-value
//! post-processing on `B = [-r, r]`, and the smoothed conditional laws that
//! drive the Barron-constant analysis.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng;
use crate::scenario::{ConditionalLaw, SampleSet, Scenario, Side};
use crate::special::{integrate_points, integrate_vec, q, QuadratureSpec};

/// What happens to sanitized values that leave `[-r, r]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostProcessing {
    /// Drop the pair.
    Truncate,
    /// Replace the value with a `Uniform[-r, r]` draw.
    Randomize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub sigma: f64,
    pub r: f64,
    pub mode: PostProcessing,
}

impl MechanismConfig {
    pub fn new(sigma: f64, r: f64, mode: PostProcessing) -> Result<Self> {
        let config = Self { sigma, r, mode };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return domain(format!("noise level must be positive and finite, got {}", self.sigma));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return domain(format!("clipping radius must be positive and finite, got {}", self.r));
        }
        Ok(())
    }
}

/// Sanitizes `samples` with fresh Gaussian noise and post-processes values
/// outside `[-r, r]`. Truncation may shrink the sample.
pub fn apply_mechanism(samples: &SampleSet, config: &MechanismConfig, seed: u64) -> Result<SampleSet> {
    config.validate()?;
    if samples.is_empty() {
        return domain("cannot sanitize an empty sample");
    }
    let (sigma, r) = (config.sigma, config.r);
    let mut rng = rng::stream(seed, 1);
    let mut out = SampleSet::with_capacity(samples.len());
    for (x, y) in samples.iter() {
        let z: f64 = rng.sample(StandardNormal);
        let v = x + sigma * z;
        if v.abs() <= r {
            out.push(v, y);
        } else if config.mode == PostProcessing::Randomize {
            out.push(rng.random_range(-r..=r), y);
        }
    }
    if out.is_empty() {
        return Err(Error::DegenerateSample(format!(
            "truncation to [-{r}, {r}] at sigma = {sigma} removed every sample"
        )));
    }
    Ok(out)
}

fn conv_spec() -> QuadratureSpec {
    QuadratureSpec::default().with_tolerances(1e-15, 1e-13)
}

/// `P(|X + σZ| > r)` for one conditional law.
fn escape_prob(law: &ConditionalLaw, sigma: f64, r: f64) -> Result<f64> {
    let tail = |s: f64| q((r - s) / sigma) + q((r + s) / sigma);
    match law {
        ConditionalLaw::PointMass { location } => Ok(tail(*location)),
        ConditionalLaw::Density(d) => integrate_points(|s| d.pdf(s) * tail(s), &d.breakpoints(), &conv_spec()),
    }
}

/// `P(|X + σZ| ≤ r)`, computed directly so that it keeps relative accuracy when small.
fn retention_prob(law: &ConditionalLaw, sigma: f64, r: f64) -> Result<f64> {
    let inside = |s: f64| {
        let (a, b) = ((-r - s) / sigma, (r - s) / sigma);
        // Φ(b) - Φ(a), evaluated on the side with the smaller tails
        if a > 0.0 {
            q(a) - q(b)
        } else if b < 0.0 {
            q(-b) - q(-a)
        } else {
            1.0 - q(-a) - q(b)
        }
    };
    match law {
        ConditionalLaw::PointMass { location } => Ok(inside(*location)),
        ConditionalLaw::Density(d) => integrate_points(|s| d.pdf(s) * inside(s), &d.breakpoints(), &conv_spec()),
    }
}

/// `(q₊, q₋) = P(|X^σ| > r | Y = ±1)`.
pub fn out_of_range_prob(scenario: &Scenario, config: &MechanismConfig) -> Result<(f64, f64)> {
    config.validate()?;
    Ok((
        escape_prob(scenario.plus(), config.sigma, config.r)?,
        escape_prob(scenario.minus(), config.sigma, config.r)?,
    ))
}

/// Mixture weights `λ±` of the post-processed law.
///
/// Truncation: `λ± = p± / P(|X^σ| ≤ r | ±)`. Randomization: `λ± = q± / (2r)`.
pub fn lambdas(scenario: &Scenario, config: &MechanismConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let (sigma, r) = (config.sigma, config.r);
    let one = |side: Side| -> Result<f64> {
        let law = scenario.law(side);
        match config.mode {
            PostProcessing::Truncate => {
                let kept = retention_prob(law, sigma, r)?;
                if !(kept > 0.0) {
                    return Err(Error::DegenerateMechanism(format!(
                        "no mass survives truncation to [-{r}, {r}] at sigma = {sigma}"
                    )));
                }
                Ok(scenario.weight(side) / kept)
            }
            PostProcessing::Randomize => {
                let lam = escape_prob(law, sigma, r)? / (2.0 * r);
                if !(lam > 0.0) {
                    return Err(Error::DegenerateMechanism(format!(
                        "escape probability underflows at sigma = {sigma}; randomization weights vanish"
                    )));
                }
                Ok(lam)
            }
        }
    };
    Ok((one(Side::Plus)?, one(Side::Minus)?))
}

/// `[P₀, P₁, P₂, P₃](u)` with `K_σ^{(j)}(u) = P_j(u) K_σ(u)`.
#[inline]
fn kernel_polys(sigma: f64, u: f64) -> [f64; 4] {
    let s2 = sigma * sigma;
    [1.0, -u / s2, (u * u - s2) / (s2 * s2), -(u * u * u - 3.0 * s2 * u) / (s2 * s2 * s2)]
}

/// Derivatives of orders 0..=3 of `f ∗ K_σ` at `x`, multiplied by `e^{E}`.
/// Returns `(jet, E)`; the true values are `jet · e^{-E}`. Scaling by the
/// Gaussian factor of the nearest support point keeps far-tail ratios exact.
fn scaled_jet(law: &ConditionalLaw, sigma: f64, x: f64) -> Result<([f64; 4], f64)> {
    let norm = 1.0 / ((2.0 * PI).sqrt() * sigma);
    match law {
        ConditionalLaw::PointMass { location } => {
            let u = x - location;
            let p = kernel_polys(sigma, u);
            Ok((p.map(|v| v * norm), 0.5 * (u / sigma) * (u / sigma)))
        }
        ConditionalLaw::Density(d) => {
            let (lo, hi) = d.support();
            let anchor = x.clamp(lo, hi);
            let two_s2 = 2.0 * sigma * sigma;
            let integrand = |s: f64| {
                let w = d.pdf(s) * (-(s - anchor) * (s + anchor - 2.0 * x) / two_s2).exp() * norm;
                kernel_polys(sigma, x - s).map(|p| p * w)
            };
            let mut pts = d.breakpoints();
            for k in [-6.0, -2.0, 0.0, 2.0, 6.0] {
                let t = anchor + k * sigma;
                if t > lo && t < hi {
                    pts.push(t);
                }
            }
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let scale = d.peak().max(1.0) * sigma.powi(-3).max(1.0);
            let spec = conv_spec().with_tolerances(1e-15 * scale, 1e-12);
            let jet = integrate_vec::<4, _>(integrand, &pts, &spec)?;
            let u = x - anchor;
            Ok((jet, 0.5 * u * u / (sigma * sigma)))
        }
    }
}

/// All four derivatives of `f ∗ K_σ` at `x`.
pub fn smoothed_density_jet(law: &ConditionalLaw, sigma: f64, x: f64) -> Result<[f64; 4]> {
    if !(sigma > 0.0) {
        return domain(format!("noise level must be positive, got {sigma}"));
    }
    let (jet, e) = scaled_jet(law, sigma, x)?;
    let f = (-e).exp();
    Ok(jet.map(|v| v * f))
}

/// `order`-th derivative of `f ∗ K_σ` at `x`.
pub fn smoothed_density_derivative(law: &ConditionalLaw, sigma: f64, order: usize, x: f64) -> Result<f64> {
    if order > 3 {
        return domain(format!("derivative order must be at most 3, got {order}"));
    }
    Ok(smoothed_density_jet(law, sigma, x)?[order])
}

/// Which function of the sanitized observation is being analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Conditional expectation under truncation.
    Eta,
    /// Half log-likelihood ratio under randomization.
    Theta,
}

impl Target {
    pub fn mode(self) -> PostProcessing {
        match self {
            Target::Eta => PostProcessing::Truncate,
            Target::Theta => PostProcessing::Randomize,
        }
    }
}

/// Post-processed law: the scenario seen through a mechanism, with weights `λ±`.
///
/// Truncation uses `g± = λ± (f± ∗ K_σ)`; randomization uses
/// `g± = p± (f± ∗ K_σ) + λ±`.
#[derive(Debug, Clone)]
pub struct PostProcessedLaw {
    scenario: Scenario,
    config: MechanismConfig,
    lambda_plus: f64,
    lambda_minus: f64,
    q_plus: f64,
    q_minus: f64,
}

impl PostProcessedLaw {
    pub fn new(scenario: &Scenario, config: &MechanismConfig) -> Result<Self> {
        let (lp, lm) = lambdas(scenario, config)?;
        Self::with_lambdas(scenario, config, lp, lm)
    }

    /// Same law with caller-chosen weights.
    pub fn with_lambdas(scenario: &Scenario, config: &MechanismConfig, lambda_plus: f64, lambda_minus: f64) -> Result<Self> {
        config.validate()?;
        if !(lambda_plus > 0.0 && lambda_minus > 0.0 && lambda_plus.is_finite() && lambda_minus.is_finite()) {
            return domain(format!("weights must be positive, got ({lambda_plus}, {lambda_minus})"));
        }
        let (q_plus, q_minus) = out_of_range_prob(scenario, config)?;
        Ok(Self { scenario: scenario.clone(), config: *config, lambda_plus, lambda_minus, q_plus, q_minus })
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn lambdas(&self) -> (f64, f64) {
        (self.lambda_plus, self.lambda_minus)
    }

    pub fn out_of_range(&self) -> (f64, f64) {
        (self.q_plus, self.q_minus)
    }

    /// Jets of `g₊` and `g₋`. Under truncation both share a positive scale
    /// factor, which cancels in every quantity built from them.
    fn g_jets(&self, x: f64) -> Result<([f64; 4], [f64; 4])> {
        let sigma = self.config.sigma;
        let (jp, ep) = scaled_jet(self.scenario.plus(), sigma, x)?;
        let (jm, em) = scaled_jet(self.scenario.minus(), sigma, x)?;
        match self.config.mode {
            PostProcessing::Truncate => {
                let e = ep.min(em);
                let (fp, fm) = (self.lambda_plus * (e - ep).exp(), self.lambda_minus * (e - em).exp());
                Ok((jp.map(|v| v * fp), jm.map(|v| v * fm)))
            }
            PostProcessing::Randomize => {
                let (pp, pm) = (self.scenario.weight(Side::Plus), self.scenario.weight(Side::Minus));
                let (fp, fm) = (pp * (-ep).exp(), pm * (-em).exp());
                let mut gp = jp.map(|v| v * fp);
                let mut gm = jm.map(|v| v * fm);
                gp[0] += self.lambda_plus;
                gm[0] += self.lambda_minus;
                Ok((gp, gm))
            }
        }
    }

    /// `g±(x)` without any rescaling.
    pub fn g(&self, side: Side, x: f64) -> Result<f64> {
        let law = self.scenario.law(side);
        let conv = smoothed_density_jet(law, self.config.sigma, x)?[0];
        Ok(match (self.config.mode, side) {
            (PostProcessing::Truncate, Side::Plus) => self.lambda_plus * conv,
            (PostProcessing::Truncate, Side::Minus) => self.lambda_minus * conv,
            (PostProcessing::Randomize, Side::Plus) => self.scenario.weight(side) * conv + self.lambda_plus,
            (PostProcessing::Randomize, Side::Minus) => self.scenario.weight(side) * conv + self.lambda_minus,
        })
    }

    fn require(&self, target: Target) -> Result<()> {
        if self.config.mode != target.mode() {
            return domain(format!("{target:?} is defined for {:?} mode, law uses {:?}", target.mode(), self.config.mode));
        }
        Ok(())
    }

    /// `η^σ(x) = (g₊ - g₋)/(g₊ + g₋)`.
    pub fn eta_sigma(&self, x: f64) -> Result<f64> {
        Ok(self.eta_derivatives(x)?[0])
    }

    /// `[η, η', η'', η''']` at `x`.
    pub fn eta_derivatives(&self, x: f64) -> Result<[f64; 4]> {
        self.require(Target::Eta)?;
        let (gp, gm) = self.g_jets(x)?;
        let s = gp[0] + gm[0];
        if !(s > 0.0) {
            return Err(Error::Singularity(x));
        }
        let s1 = (gp[1] + gm[1]) / s;
        let s2 = (gp[2] + gm[2]) / s;
        let n0 = (gp[0] - gm[0]) / s;
        let n1 = (gp[1] * gm[0] - gp[0] * gm[1]) / (s * s);
        let n2 = (gp[2] * gm[0] - gp[0] * gm[2]) / (s * s);
        let n3 = (gp[3] * gm[0] + gp[2] * gm[1] - gp[1] * gm[2] - gp[0] * gm[3]) / (s * s);
        let d1 = 2.0 * n1;
        let d2 = 2.0 * n2 - 2.0 * d1 * s1;
        let d3 = 2.0 * n3 - 4.0 * d2 * s1 - 2.0 * d1 * s2 - 2.0 * d1 * s1 * s1;
        Ok([n0, d1, d2, d3])
    }

    /// `g₊g₋/(g₊ + g₋)²`, the weight inside the moment quantities `M_α`.
    pub fn mixing_weight(&self, x: f64) -> Result<f64> {
        self.require(Target::Eta)?;
        let (gp, gm) = self.g_jets(x)?;
        let s = gp[0] + gm[0];
        if !(s > 0.0) {
            return Err(Error::Singularity(x));
        }
        Ok(gp[0] / s * (gm[0] / s))
    }

    /// `θ^σ(x) = ½ log(g₊/g₋)`.
    pub fn theta_sigma(&self, x: f64) -> Result<f64> {
        Ok(self.theta_derivatives(x)?[0])
    }

    /// `[θ, θ', θ'', θ''']` at `x`.
    pub fn theta_derivatives(&self, x: f64) -> Result<[f64; 4]> {
        self.require(Target::Theta)?;
        let (gp, gm) = self.g_jets(x)?;
        if !(gp[0] > 0.0 && gm[0] > 0.0) {
            return Err(Error::Singularity(x));
        }
        let parts = |g: [f64; 4]| {
            let (a, b, c) = (g[1] / g[0], g[2] / g[0], g[3] / g[0]);
            [g[0].ln(), a, b - a * a, c - 3.0 * a * b + 2.0 * a * a * a]
        };
        let (p, m) = (parts(gp), parts(gm));
        Ok([0.5 * (p[0] - m[0]), 0.5 * (p[1] - m[1]), 0.5 * (p[2] - m[2]), 0.5 * (p[3] - m[3])])
    }

    pub fn derivatives(&self, target: Target, x: f64) -> Result<[f64; 4]> {
        match target {
            Target::Eta => self.eta_derivatives(x),
            Target::Theta => self.theta_derivatives(x),
        }
    }

    /// Conditional densities of the released value given `Y = ±1`, on `[-r, r]`.
    pub fn observed_densities(&self, x: f64) -> Result<(f64, f64)> {
        if x.abs() > self.config.r {
            return Ok((0.0, 0.0));
        }
        let sigma = self.config.sigma;
        let cp = smoothed_density_jet(self.scenario.plus(), sigma, x)?[0];
        let cm = smoothed_density_jet(self.scenario.minus(), sigma, x)?[0];
        Ok(match self.config.mode {
            PostProcessing::Truncate => (cp / (1.0 - self.q_plus), cm / (1.0 - self.q_minus)),
            PostProcessing::Randomize => {
                let w = 2.0 * self.config.r;
                (cp + self.q_plus / w, cm + self.q_minus / w)
            }
        })
    }

    /// Integration window for the derivative norms. `θ'` decays on the scale
    /// `σ`, `η'` only on the scale `σ²`.
    pub fn norm_window(&self, target: Target, spec: &QuadratureSpec) -> f64 {
        let sigma = self.config.sigma;
        let scale = match target {
            Target::Eta => sigma.max(sigma * sigma),
            Target::Theta => sigma,
        };
        self.config.r + spec.infinite_cutoff_sigmas * scale
    }
}

/// `(‖h'‖₁, ‖h''‖₁, ‖h'''‖₁)` for `h = η^σ` or `h = θ^σ`.
pub fn derivative_l1_norms(target: Target, scenario: &Scenario, config: &MechanismConfig, spec: &QuadratureSpec) -> Result<(f64, f64, f64)> {
    if config.mode != target.mode() {
        return domain(format!("{target:?} norms need {:?} mode", target.mode()));
    }
    let law = PostProcessedLaw::new(scenario, config)?;
    law_l1_norms(&law, target, spec)
}

/// Same as [`derivative_l1_norms`] for an already built law.
pub fn law_l1_norms(law: &PostProcessedLaw, target: Target, spec: &QuadratureSpec) -> Result<(f64, f64, f64)> {
    law.require(target)?;
    let w = law.norm_window(target, spec);
    let mut pts = vec![-w, 0.0, w];
    for side in [Side::Plus, Side::Minus] {
        let (lo, hi) = law.scenario().law(side).support();
        pts.extend([lo, hi]);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    // an integrand failure cannot be returned from inside the closure; record it
    let failure = std::cell::Cell::new(None);
    let v = integrate_vec::<3, _>(
        |x| match law.derivatives(target, x) {
            Ok(d) => [d[1].abs(), d[2].abs(), d[3].abs()],
            Err(e) => {
                failure.set(Some(e));
                [0.0; 3]
            }
        },
        &pts,
        spec,
    )?;
    if let Some(e) = failure.take() {
        return Err(e);
    }
    Ok((v[0], v[1], v[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::q_function;

    fn cfg(sigma: f64, mode: PostProcessing) -> MechanismConfig {
        MechanismConfig::new(sigma, 2.0, mode).unwrap()
    }

    #[test]
    fn tiny_noise_keeps_everything() {
        let raw = crate::scenario::sample_raw(&Scenario::identity_channel(), 1000, 1).unwrap();
        let out = apply_mechanism(&raw, &cfg(1e-4, PostProcessing::Truncate), 2).unwrap();
        assert_eq!(out.len(), 1000);
        assert!(out.iter().all(|(x, y)| (x - y).abs() < 0.01));
    }

    #[test]
    fn randomization_keeps_size_and_range() {
        let raw = crate::scenario::sample_raw(&Scenario::identity_channel(), 5000, 1).unwrap();
        let out = apply_mechanism(&raw, &cfg(5.0, PostProcessing::Randomize), 2).unwrap();
        assert_eq!(out.len(), 5000);
        assert!(out.x.iter().all(|x| x.abs() <= 2.0));
    }

    #[test]
    fn truncation_retention_matches_tail_formula() {
        let raw = crate::scenario::sample_raw(&Scenario::identity_channel(), 100_000, 3).unwrap();
        let out = apply_mechanism(&raw, &cfg(5.0, PostProcessing::Truncate), 4).unwrap();
        let expected = 1.0 - q_function(0.2).unwrap() - q_function(0.6).unwrap();
        assert!((out.len() as f64 / 1e5 - expected).abs() < 0.01);
        assert!(out.x.iter().all(|x| x.abs() <= 2.0));
    }

    #[test]
    fn truncating_everything_is_an_error() {
        let raw = SampleSet::new(vec![1.0], vec![1.0]).unwrap();
        let c = MechanismConfig::new(1e-6, 0.5, PostProcessing::Truncate).unwrap();
        assert!(matches!(apply_mechanism(&raw, &c, 0), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn identity_channel_escape_and_weights() {
        let sc = Scenario::identity_channel();
        for sigma in [0.5, 2.0, 10.0] {
            let qq = q_function(1.0 / sigma).unwrap() + q_function(3.0 / sigma).unwrap();
            let (qp, qm) = out_of_range_prob(&sc, &cfg(sigma, PostProcessing::Truncate)).unwrap();
            assert!((qp - qq).abs() < 1e-15 && (qm - qq).abs() < 1e-15);
            let (lp, lm) = lambdas(&sc, &cfg(sigma, PostProcessing::Randomize)).unwrap();
            assert!((lp - qq / 4.0).abs() < 1e-15 && (lm - qq / 4.0).abs() < 1e-15);
            let (lp, _) = lambdas(&sc, &cfg(sigma, PostProcessing::Truncate)).unwrap();
            assert!((lp - 0.5 / (1.0 - qq)).abs() < 1e-12 * lp);
        }
        // the relative gap to 1/(2r) is exactly the retention probability, about 3.2% at σ = 50
        let mut prev = f64::INFINITY;
        for sigma in [25.0, 50.0, 100.0, 200.0] {
            let (lp, _) = lambdas(&sc, &cfg(sigma, PostProcessing::Randomize)).unwrap();
            let gap = 1.0 - lp / 0.25;
            let kept = 1.0 - out_of_range_prob(&sc, &cfg(sigma, PostProcessing::Randomize)).unwrap().0;
            assert!((gap - kept).abs() < 1e-12 && gap > 0.0 && gap < prev);
            prev = gap;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn escape_vanishes_without_noise() {
        let sc = Scenario::new(0.5, ConditionalLaw::uniform(0.0, 1.0).unwrap(), ConditionalLaw::uniform(-1.0, 0.0).unwrap()).unwrap();
        let (qp, qm) = out_of_range_prob(&sc, &cfg(0.01, PostProcessing::Randomize)).unwrap();
        assert!(qp < 1e-20 && qm < 1e-20);
        assert!(matches!(lambdas(&sc, &cfg(0.01, PostProcessing::Randomize)), Err(Error::DegenerateMechanism(_))));
    }

    #[test]
    fn uniform_escape_matches_double_integral() {
        // ∫₀¹ [Q(2 - s) + Q(2 + s)] ds with σ = 1, by nested quadrature of the Gaussian density
        let spec = QuadratureSpec::default().with_tolerances(1e-13, 1e-12);
        let inner = |s: f64| {
            let k = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
            integrate_points(k, &[2.0 - s, 40.0], &spec).unwrap() + integrate_points(k, &[2.0 + s, 40.0], &spec).unwrap()
        };
        let oracle = integrate_points(inner, &[0.0, 1.0], &spec).unwrap();
        let sc = Scenario::new(0.5, ConditionalLaw::uniform(0.0, 1.0).unwrap(), ConditionalLaw::uniform(-1.0, 0.0).unwrap()).unwrap();
        let (qp, _) = out_of_range_prob(&sc, &cfg(1.0, PostProcessing::Truncate)).unwrap();
        assert!((qp - oracle).abs() < 1e-10, "{qp} vs {oracle}");
    }

    #[test]
    fn point_mass_smoothing_is_the_shifted_kernel() {
        let law = ConditionalLaw::point_mass(1.0).unwrap();
        for x in [-3.0, 0.2, 1.0, 4.0] {
            let k = crate::special::kernel_derivative(0, 1.5, x - 1.0).unwrap();
            assert!((smoothed_density_derivative(&law, 1.5, 0, x).unwrap() - k).abs() < 1e-16);
        }
    }

    #[test]
    fn uniform_smoothing_matches_closed_form() {
        // (f ∗ K)(x) = [Φ((x-a)/σ) - Φ((x-b)/σ)]/(b-a), derivatives in terms of K
        let (a, b, sigma) = (0.0, 1.0, 1.0);
        let law = ConditionalLaw::uniform(a, b).unwrap();
        for x in [-2.5, 0.3, 0.9, 3.0] {
            let jet = smoothed_density_jet(&law, sigma, x).unwrap();
            let k = |u: f64| crate::special::GaussianKernel::new(sigma).unwrap().derivatives(u);
            let conv = q((x - b) / sigma) - q((x - a) / sigma);
            let exact = [conv, k(x - a)[0] - k(x - b)[0], k(x - a)[1] - k(x - b)[1], k(x - a)[2] - k(x - b)[2]];
            for j in 0..4 {
                assert!((jet[j] - exact[j]).abs() <= 1e-11 * exact[j].abs().max(1e-3), "order {j} at {x}");
            }
        }
    }

    #[test]
    fn second_order_matches_finite_difference() {
        let law = ConditionalLaw::uniform(0.0, 1.0).unwrap();
        let h = 1e-3;
        let f = |x: f64| smoothed_density_derivative(&law, 1.0, 1, x).unwrap();
        let fd = (-f(0.3 + 2.0 * h) + 8.0 * f(0.3 + h) - 8.0 * f(0.3 - h) + f(0.3 - 2.0 * h)) / (12.0 * h);
        let d2 = smoothed_density_derivative(&law, 1.0, 2, 0.3).unwrap();
        assert!((fd - d2).abs() < 1e-5 * d2.abs());
    }

    #[test]
    fn identity_channel_eta_is_tanh() {
        let law = PostProcessedLaw::new(&Scenario::identity_channel(), &cfg(1.3, PostProcessing::Truncate)).unwrap();
        for x in [-30.0, -2.0, 0.0, 0.7, 5.0, 60.0] {
            let e = law.eta_sigma(x).unwrap();
            assert!((e - (x / 1.69).tanh()).abs() < 1e-14, "{x}");
        }
        assert!(law.theta_sigma(0.0).is_err());
    }

    #[test]
    fn eta_on_far_tails_stays_finite() {
        // both smoothed densities underflow here; the shared scale keeps the ratio
        let law = PostProcessedLaw::new(&Scenario::identity_channel(), &cfg(0.05, PostProcessing::Truncate)).unwrap();
        let d = law.eta_derivatives(3.0).unwrap();
        assert_eq!(d[0], 1.0);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identity_channel_eta_norms() {
        let sigma = 1.0;
        let (n1, n2, n3) = derivative_l1_norms(
            Target::Eta,
            &Scenario::identity_channel(),
            &cfg(sigma, PostProcessing::Truncate),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!((n1 - 2.0).abs() < 1e-7);
        assert!((n2 - 2.0 / (sigma * sigma)).abs() < 1e-7);
        assert!((n3 - 16.0 / (3.0 * 3f64.sqrt() * sigma.powi(4))).abs() < 1e-7);
    }

    #[test]
    fn randomized_theta_is_odd_for_symmetric_scenarios() {
        let law = PostProcessedLaw::new(&Scenario::identity_channel(), &cfg(3.0, PostProcessing::Randomize)).unwrap();
        assert!(law.theta_sigma(0.0).unwrap().abs() < 1e-15);
        for x in [0.3, 1.1, 2.0] {
            assert!((law.theta_sigma(x).unwrap() + law.theta_sigma(-x).unwrap()).abs() < 1e-14);
        }
        assert!(law.eta_sigma(0.0).is_err());
    }

    #[test]
    fn tanh_theta_is_the_conditional_mean_with_mass_weighted_lambdas() {
        let sc = Scenario::new(0.3, ConditionalLaw::uniform(-0.2, 1.0).unwrap(), ConditionalLaw::triangular(-1.0, 0.4, -1.0).unwrap()).unwrap();
        let c = cfg(1.5, PostProcessing::Randomize);
        let (qp, qm) = out_of_range_prob(&sc, &c).unwrap();
        let law = PostProcessedLaw::with_lambdas(&sc, &c, 0.3 * qp / 4.0, 0.7 * qm / 4.0).unwrap();
        for x in [-1.9, -0.4, 0.0, 0.8, 2.0] {
            let (fp, fm) = law.observed_densities(x).unwrap();
            let mean = (0.3 * fp - 0.7 * fm) / (0.3 * fp + 0.7 * fm);
            assert!((law.theta_sigma(x).unwrap().tanh() - mean).abs() < 1e-12);
        }
    }
}
