//! Joint law of `(Y, X)` before sanitization: the prior `P(Y = +1)` and the
//! conditional laws of `X` given `Y = ±1`, all supported inside `[-1, 1]`.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::Rng;

use crate::error::{domain, Result};
use crate::rng;
use crate::special::{integrate_points, QuadratureSpec};

const CDF_GRID: usize = 4096;

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Law of `X` given one value of `Y`.
#[derive(Clone)]
pub enum ConditionalLaw {
    PointMass { location: f64 },
    Density(Arc<DensityLaw>),
}

/// A bounded density on a closed interval inside `[-1, 1]`.
pub struct DensityLaw {
    name: String,
    f: DensityFn,
    lo: f64,
    hi: f64,
    kinks: Vec<f64>,
    peak: f64,
    sampler: OnceLock<InverseCdf>,
}

impl fmt::Debug for ConditionalLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionalLaw::PointMass { location } => write!(f, "PointMass({location})"),
            ConditionalLaw::Density(d) => write!(f, "Density({} on [{}, {}])", d.name, d.lo, d.hi),
        }
    }
}

impl ConditionalLaw {
    pub fn point_mass(location: f64) -> Result<Self> {
        if !(location.abs() <= 1.0) {
            return domain(format!("point mass must lie in [-1, 1], got {location}"));
        }
        Ok(ConditionalLaw::PointMass { location })
    }

    /// Wraps a black-box density supported on `[lo, hi] ⊆ [-1, 1]`. `kinks`
    /// lists interior points where `f` is not smooth; quadrature splits there.
    pub fn density<F>(name: impl Into<String>, f: F, lo: f64, hi: f64, kinks: &[f64]) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(lo < hi) || lo < -1.0 || hi > 1.0 {
            return domain(format!("density support [{lo}, {hi}] must be a nondegenerate subset of [-1, 1]"));
        }
        let mut kinks: Vec<f64> = kinks.iter().copied().filter(|&k| k > lo && k < hi).collect();
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        let mut law = DensityLaw { name: name.into(), f: Arc::new(f), lo, hi, kinks, peak: 0.0, sampler: OnceLock::new() };

        for j in 0..=1024 {
            let x = (lo + (hi - lo) * j as f64 / 1024.0).min(hi);
            let v = (law.f)(x);
            if !(v >= 0.0) || !v.is_finite() {
                return domain(format!("density {} is negative or non-finite at {x}", law.name));
            }
            law.peak = law.peak.max(v);
        }
        let mass = law.mass_between(lo, hi)?;
        if (mass - 1.0).abs() > 1e-8 {
            return domain(format!("density {} integrates to {mass}, not 1", law.name));
        }
        Ok(ConditionalLaw::Density(Arc::new(law)))
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let height = 1.0 / (hi - lo);
        Self::density(format!("uniform[{lo}, {hi}]"), move |_| height, lo, hi, &[])
    }

    /// Triangular density on `[lo, hi]` peaking at `mode`.
    pub fn triangular(lo: f64, hi: f64, mode: f64) -> Result<Self> {
        if !(lo <= mode && mode <= hi) {
            return domain(format!("triangular mode {mode} outside [{lo}, {hi}]"));
        }
        let width = hi - lo;
        let f = move |x: f64| {
            let x = x.clamp(lo, hi);
            if x < mode {
                2.0 * (x - lo) / (width * (mode - lo))
            } else if x > mode {
                2.0 * (hi - x) / (width * (hi - mode))
            } else {
                2.0 / width
            }
        };
        Self::density(format!("triangular[{lo}, {mode}, {hi}]"), f, lo, hi, &[mode])
    }

    /// Smallest closed interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            ConditionalLaw::PointMass { location } => (*location, *location),
            ConditionalLaw::Density(d) => (d.lo, d.hi),
        }
    }

    /// `P(a ≤ X ≤ b)`.
    pub fn mass_between(&self, a: f64, b: f64) -> Result<f64> {
        match self {
            ConditionalLaw::PointMass { location } => Ok(if a <= *location && *location <= b { 1.0 } else { 0.0 }),
            ConditionalLaw::Density(d) => d.mass_between(a, b),
        }
    }

    /// `E[g(X)]`.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G, spec: &QuadratureSpec) -> Result<f64> {
        match self {
            ConditionalLaw::PointMass { location } => Ok(g(*location)),
            ConditionalLaw::Density(d) => integrate_points(|s| d.pdf(s) * g(s), &d.breakpoints(), spec),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ConditionalLaw::PointMass { location } => *location,
            ConditionalLaw::Density(d) => d.sampler().sample(rng.random::<f64>()),
        }
    }
}

impl DensityLaw {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Density value; zero outside the support.
    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            0.0
        } else {
            (self.f)(x)
        }
    }

    /// Largest density value seen on a 1025-point probe grid.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Support endpoints with interior kinks in between, in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = Vec::with_capacity(self.kinks.len() + 2);
        pts.push(self.lo);
        pts.extend_from_slice(&self.kinks);
        pts.push(self.hi);
        pts
    }

    fn mass_between(&self, a: f64, b: f64) -> Result<f64> {
        let (a, b) = (a.max(self.lo), b.min(self.hi));
        if a >= b {
            return Ok(0.0);
        }
        let mut pts = vec![a];
        pts.extend(self.kinks.iter().copied().filter(|&k| k > a && k < b));
        pts.push(b);
        let spec = QuadratureSpec::default().with_tolerances(1e-13, 1e-12);
        integrate_points(|s| self.pdf(s), &pts, &spec)
    }

    fn sampler(&self) -> &InverseCdf {
        self.sampler.get_or_init(|| InverseCdf::build(self))
    }
}

/// Monotone cubic (Fritsch–Carlson) interpolant of the CDF on a uniform grid,
/// inverted cell by cell.
struct InverseCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    slopes: Vec<f64>,
}

impl InverseCdf {
    fn build(law: &DensityLaw) -> Self {
        let h = (law.hi - law.lo) / CDF_GRID as f64;
        let xs: Vec<f64> = (0..=CDF_GRID).map(|j| law.lo + h * j as f64).collect();
        let spec = QuadratureSpec::default().with_tolerances(1e-15, 1e-13);
        let mut cdf = Vec::with_capacity(CDF_GRID + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for w in xs.windows(2) {
            let mut pts = vec![w[0]];
            pts.extend(law.kinks.iter().copied().filter(|&k| k > w[0] && k < w[1]));
            pts.push(w[1]);
            // cells are tiny and the density bounded; fall back to the midpoint rule only on failure
            acc += integrate_points(|s| law.pdf(s), &pts, &spec).unwrap_or_else(|_| law.pdf(0.5 * (w[0] + w[1])) * h);
            cdf.push(acc);
        }
        let total = acc;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        *cdf.last_mut().unwrap() = 1.0;

        let secants: Vec<f64> = cdf.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let mut slopes = vec![0.0; CDF_GRID + 1];
        slopes[0] = secants[0];
        slopes[CDF_GRID] = secants[CDF_GRID - 1];
        for j in 1..CDF_GRID {
            let (a, b) = (secants[j - 1], secants[j]);
            slopes[j] = if a > 0.0 && b > 0.0 { 2.0 * a * b / (a + b) } else { 0.0 };
        }
        // endpoint slopes must not exceed 3x the adjacent secant
        slopes[0] = slopes[0].min(3.0 * secants[0]);
        slopes[CDF_GRID] = slopes[CDF_GRID].min(3.0 * secants[CDF_GRID - 1]);
        Self { xs, cdf, slopes }
    }

    fn hermite(&self, j: usize, x: f64) -> f64 {
        let (x0, x1) = (self.xs[j], self.xs[j + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.cdf[j]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[j]
            + (-2.0 * t3 + 3.0 * t2) * self.cdf[j + 1]
            + (t3 - t2) * h * self.slopes[j + 1]
    }

    fn sample(&self, u: f64) -> f64 {
        // first cell whose right CDF value exceeds u
        let j = self.cdf.partition_point(|&c| c <= u).clamp(1, CDF_GRID) - 1;
        let (mut lo, mut hi) = (self.xs[j], self.xs[j + 1]);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.hermite(j, mid) <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Paired observations `(x_i, y_i)`, stored column-wise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SampleSet {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return domain(format!("x and y lengths differ: {} vs {}", x.len(), y.len()));
        }
        Ok(Self { x, y })
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { x: Vec::with_capacity(n), y: Vec::with_capacity(n) }
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.x.push(x);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.y.iter().copied())
    }
}

/// Prior `P(Y = +1)` together with the two conditional laws of `X`.
#[derive(Debug, Clone)]
pub struct Scenario {
    prior_p: f64,
    plus: ConditionalLaw,
    minus: ConditionalLaw,
}

/// Which label a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

impl Scenario {
    pub fn new(prior_p: f64, plus: ConditionalLaw, minus: ConditionalLaw) -> Result<Self> {
        if !(prior_p > 0.0 && prior_p < 1.0) {
            return domain(format!("prior P(Y = +1) must lie in (0, 1), got {prior_p}"));
        }
        Ok(Self { prior_p, plus, minus })
    }

    /// `Y ~ Unif{±1}` and `X = Y`.
    pub fn identity_channel() -> Self {
        Self {
            prior_p: 0.5,
            plus: ConditionalLaw::PointMass { location: 1.0 },
            minus: ConditionalLaw::PointMass { location: -1.0 },
        }
    }

    pub fn prior_p(&self) -> f64 {
        self.prior_p
    }

    /// `(p, 1 - p)` for `Side::Plus` / `Side::Minus`.
    pub fn weight(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.prior_p,
            Side::Minus => 1.0 - self.prior_p,
        }
    }

    pub fn law(&self, side: Side) -> &ConditionalLaw {
        match side {
            Side::Plus => &self.plus,
            Side::Minus => &self.minus,
        }
    }

    pub fn plus(&self) -> &ConditionalLaw {
        &self.plus
    }

    pub fn minus(&self) -> &ConditionalLaw {
        &self.minus
    }
}

/// Draws `n` i.i.d. pairs from the scenario. Deterministic in `seed`.
pub fn sample_raw(scenario: &Scenario, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return domain("sample size must be at least 1");
    }
    let mut rng = rng::stream(seed, 0);
    let mut out = SampleSet::with_capacity(n);
    for _ in 0..n {
        let plus = rng.random::<f64>() < scenario.prior_p;
        let (law, y) = if plus { (&scenario.plus, 1.0) } else { (&scenario.minus, -1.0) };
        out.push(law.sample(&mut rng), y);
    }
    Ok(out)
}

/// `(δ₊, δ₋) = (P(X ≥ γ | Y = +1), P(X ≤ -γ | Y = -1))`.
pub fn margin_mass(scenario: &Scenario, gamma: f64) -> Result<(f64, f64)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return domain(format!("margin gamma must lie in (0, 1), got {gamma}"));
    }
    Ok((scenario.plus.mass_between(gamma, 1.0)?, scenario.minus.mass_between(-1.0, -gamma)?))
}

/// Structure of the two supports that the moment bounds rely on.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SupportGeometry {
    /// `Supp(f₊) ⊆ [γ, 1]` and `Supp(f₋) ⊆ [-1, -γ]`.
    Separated { gamma: f64 },
    /// Overlapping supports whose extremes determine `Y`, evaluated at margin `γ > γ₀`.
    Overlapping { gamma0: f64, gamma: f64, delta_plus: f64, delta_minus: f64 },
}

impl SupportGeometry {
    /// `γ = 1` is admitted: it is the value used for `X = Y`.
    pub fn separated(scenario: &Scenario, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return domain(format!("separation margin must lie in (0, 1], got {gamma}"));
        }
        let (p_lo, _) = scenario.plus.support();
        let (_, m_hi) = scenario.minus.support();
        if p_lo < gamma || m_hi > -gamma {
            return domain(format!("supports are not separated by margin {gamma}"));
        }
        Ok(SupportGeometry::Separated { gamma })
    }

    pub fn overlapping(scenario: &Scenario, gamma0: f64, gamma: f64) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0 < gamma && gamma < 1.0) {
            return domain(format!("need 0 < gamma0 < gamma < 1, got gamma0 = {gamma0}, gamma = {gamma}"));
        }
        let (p_lo, p_hi) = scenario.plus.support();
        let (m_lo, m_hi) = scenario.minus.support();
        let plus_ok = p_lo <= gamma0 && p_hi >= 1.0 && p_lo > -gamma0;
        let minus_ok = m_hi >= -gamma0 && m_lo <= -1.0 && m_hi < gamma0;
        if !plus_ok || !minus_ok {
            return domain(format!("supports do not have the overlapping structure for gamma0 = {gamma0}"));
        }
        let (delta_plus, delta_minus) = margin_mass(scenario, gamma)?;
        if !(delta_plus > 0.0 && delta_minus > 0.0) {
            return domain("margin masses must be positive");
        }
        Ok(SupportGeometry::Overlapping { gamma0, gamma, delta_plus, delta_minus })
    }
}
