//! Special functions, the Gaussian kernel with its first three derivatives,
//! and an adaptive Gauss–Kronrod quadrature engine used by every other module.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};

use crate::error::{domain, Error, Result};

/// Standard Gaussian upper-tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return domain(format!("q_function needs a finite argument, got {x}"));
    }
    Ok(q(x))
}

/// Unchecked `Q`, for integrands that already guarantee finite input.
#[inline]
pub(crate) fn q(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

pub fn gamma_function(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return domain(format!("gamma_function needs z > 0, got {z}"));
    }
    Ok(libm::tgamma(z))
}

/// `ln Γ(z)` for `z > 0`.
pub fn ln_gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return domain(format!("ln_gamma needs z > 0, got {z}"));
    }
    Ok(libm::lgamma(z))
}

/// Centered Gaussian density `K_σ` with standard deviation `σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return domain(format!("kernel width must be positive and finite, got {sigma}"));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        let s = self.sigma;
        (-0.5 * (x / s) * (x / s)).exp() / ((2.0 * PI).sqrt() * s)
    }

    /// `[K, K', K'', K''']` at `x`, each written as a polynomial times `K`.
    #[inline]
    pub fn derivatives(&self, x: f64) -> [f64; 4] {
        let k = self.density(x);
        let s2 = self.sigma * self.sigma;
        let x2 = x * x;
        [
            k,
            -x / s2 * k,
            (x2 - s2) / (s2 * s2) * k,
            -(x2 * x - 3.0 * s2 * x) / (s2 * s2 * s2) * k,
        ]
    }
}

/// `j`-th derivative of `K_σ` at `x`, for `j ∈ {0, 1, 2, 3}`.
pub fn kernel_derivative(order: usize, sigma: f64, x: f64) -> Result<f64> {
    let kernel = GaussianKernel::new(sigma)?;
    match order {
        0..=3 => Ok(kernel.derivatives(x)[order]),
        _ => domain(format!("kernel derivatives are available up to order 3, got {order}")),
    }
}

/// Closed-form norms of the Gaussian kernel derivatives. Fields named
/// `*_upper` are upper bounds rather than exact values.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KernelNorms {
    /// `‖K'‖₁`
    pub l1_d1: f64,
    /// `‖K'‖₂²`
    pub l2sq_d1: f64,
    /// `‖K'‖₃³`
    pub l3cu_d1: f64,
    /// upper bound on `‖K''‖₁`
    pub l1_d2_upper: f64,
    /// `‖K''‖₂`
    pub l2_d2: f64,
    /// upper bound on `‖K'''‖₁`
    pub l1_d3_upper: f64,
}

pub fn kernel_derivative_norms(sigma: f64) -> Result<KernelNorms> {
    let s = GaussianKernel::new(sigma)?.sigma();
    let sqrt_pi = PI.sqrt();
    Ok(KernelNorms {
        l1_d1: SQRT_2 / (sqrt_pi * s),
        l2sq_d1: 1.0 / (4.0 * sqrt_pi * s.powi(3)),
        l3cu_d1: SQRT_2 / (9.0 * PI.powf(1.5) * s.powi(5)),
        l1_d2_upper: 2.0 / (s * s),
        l2_d2: 3f64.sqrt() / (2.0 * SQRT_2 * PI.powf(0.25) * s.powf(2.5)),
        l1_d3_upper: 5.0 * SQRT_2 / (sqrt_pi * s.powi(3)),
    })
}

/// Tolerances for the adaptive quadrature engine.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Half-width, in units of the caller's scale, added beyond the caller's
    /// radius when an integration limit is infinite.
    pub infinite_cutoff_sigmas: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-9, max_subdivisions: 1 << 14, infinite_cutoff_sigmas: 12.0 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) || self.max_subdivisions == 0 {
            return domain("quadrature tolerances must be positive and the subdivision budget at least 1");
        }
        if !(self.infinite_cutoff_sigmas > 0.0) {
            return domain("infinite_cutoff_sigmas must be positive");
        }
        Ok(())
    }

    pub fn with_tolerances(mut self, abs_tol: f64, rel_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self.rel_tol = rel_tol;
        self
    }

    /// Replaces infinite limits by `∓(radius + infinite_cutoff_sigmas · scale)`.
    pub fn clip(&self, lo: f64, hi: f64, tails: TailScale) -> (f64, f64) {
        let reach = tails.radius + self.infinite_cutoff_sigmas * tails.scale;
        let lo = if lo == f64::NEG_INFINITY { -reach } else { lo };
        let hi = if hi == f64::INFINITY { reach } else { hi };
        (lo, hi)
    }
}

/// Characteristic size of an integrand on the real line: where its mass sits
/// (`|x| ≤ radius`) and how fast its tails decay (`scale`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailScale {
    pub radius: f64,
    pub scale: f64,
}

/// Integral of `f` over a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !lo.is_finite() || !hi.is_finite() {
        return domain("infinite limit without a tail scale; use integrate_with_tails");
    }
    integrate_points(f, &[lo, hi], spec)
}

/// Integral of `f` over `[lo, hi]` where either limit may be infinite; the
/// infinite side is clipped according to `tails`.
pub fn integrate_with_tails<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    tails: TailScale,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if !(tails.scale > 0.0) || !tails.radius.is_finite() {
        return domain("tail scale must be positive and the radius finite");
    }
    let (lo, hi) = spec.clip(lo, hi, tails);
    integrate_points(f, &[lo, hi], spec)
}

/// Integral over `[points[0], points[last]]`, with the interior points used as
/// initial breakpoints (kinks, support edges).
pub fn integrate_points<F: Fn(f64) -> f64>(f: F, points: &[f64], spec: &QuadratureSpec) -> Result<f64> {
    integrate_vec::<1, _>(|x| [f(x)], points, spec).map(|v| v[0])
}

/// Vector-valued version of [`integrate_points`]: integrates `N` components
/// that share their evaluation points.
pub fn integrate_vec<const N: usize, F: Fn(f64) -> [f64; N]>(
    f: F,
    points: &[f64],
    spec: &QuadratureSpec,
) -> Result<[f64; N]> {
    spec.validate()?;
    if points.len() < 2 {
        return domain("need at least two integration limits");
    }
    if points.iter().any(|p| !p.is_finite()) {
        return domain("integration limits must be finite");
    }
    if points.windows(2).any(|w| w[1] < w[0]) {
        return domain("integration breakpoints must be non-decreasing");
    }

    let mut heap = BinaryHeap::new();
    let mut finished: Vec<Segment<N>> = Vec::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            heap.push(Segment::new(&f, w[0], w[1]));
        }
    }
    let mut count = heap.len();
    let (mut total, mut err) = totals(heap.iter());

    loop {
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err <= spec.abs_tol.max(spec.rel_tol * scale) {
            // running sums drift; confirm against a fresh sum before accepting
            let (t, e) = totals(heap.iter().chain(finished.iter()));
            total = t;
            err = e;
            let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if err <= spec.abs_tol.max(spec.rel_tol * scale) {
                return Ok(total);
            }
        }
        let Some(worst) = heap.pop() else {
            // every remaining segment is at the resolution limit
            return Ok(total);
        };
        if count >= spec.max_subdivisions {
            heap.push(worst);
            let (total, err) = totals(heap.iter().chain(finished.iter()));
            let idx = largest(&total);
            return Err(Error::Accuracy { estimate: total[idx], error: err });
        }
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi || (worst.hi - worst.lo) < 1e3 * f64::EPSILON * mid.abs().max(1e-300) {
            finished.push(worst);
            continue;
        }
        let left = Segment::new(&f, worst.lo, mid);
        let right = Segment::new(&f, mid, worst.hi);
        for c in 0..N {
            total[c] += left.value[c] + right.value[c] - worst.value[c];
        }
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        count += 1;
        if count % 512 == 0 {
            let (t, e) = totals(heap.iter().chain(finished.iter()));
            total = t;
            err = e;
        }
    }
}

fn largest<const N: usize>(v: &[f64; N]) -> usize {
    (0..N).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0)
}

fn totals<'a, const N: usize>(segments: impl Iterator<Item = &'a Segment<N>>) -> ([f64; N], f64) {
    let mut total = [0.0; N];
    let mut err = 0.0;
    for s in segments {
        for (t, v) in total.iter_mut().zip(s.value.iter()) {
            *t += v;
        }
        err += s.error;
    }
    (total, err)
}

struct Segment<const N: usize> {
    lo: f64,
    hi: f64,
    value: [f64; N],
    error: f64,
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<const N: usize> Eq for Segment<N> {}
impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

// 15-point Kronrod extension of the 7-point Gauss–Legendre rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

impl<const N: usize> Segment<N> {
    fn new<F: Fn(f64) -> [f64; N]>(f: &F, lo: f64, hi: f64) -> Self {
        let center = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);

        let fc = f(center);
        let mut kronrod = [0.0; N];
        let mut gauss = [0.0; N];
        let mut abs_sum = [0.0; N];
        let mut samples = [[[0.0; N]; 2]; 7];
        for c in 0..N {
            kronrod[c] = WGK[7] * fc[c];
            gauss[c] = WG[3] * fc[c];
            abs_sum[c] = (WGK[7] * fc[c]).abs();
        }
        for j in 0..7 {
            let dx = half * XGK[j];
            let f1 = f(center - dx);
            let f2 = f(center + dx);
            for c in 0..N {
                kronrod[c] += WGK[j] * (f1[c] + f2[c]);
                abs_sum[c] += WGK[j] * (f1[c].abs() + f2[c].abs());
                if j % 2 == 1 {
                    gauss[c] += WG[j / 2] * (f1[c] + f2[c]);
                }
            }
            samples[j] = [f1, f2];
        }

        let mut value = [0.0; N];
        let mut error = 0.0f64;
        for c in 0..N {
            let mean = 0.5 * kronrod[c];
            let mut asc = WGK[7] * (fc[c] - mean).abs();
            for j in 0..7 {
                asc += WGK[j] * ((samples[j][0][c] - mean).abs() + (samples[j][1][c] - mean).abs());
            }
            let asc = asc * half;
            let abs = abs_sum[c] * half;
            let mut err = ((kronrod[c] - gauss[c]) * half).abs();
            if asc != 0.0 && err != 0.0 {
                err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
            }
            if abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
                err = err.max(50.0 * f64::EPSILON * abs);
            }
            if !err.is_finite() {
                err = f64::MAX;
            }
            value[c] = kronrod[c] * half;
            error = error.max(err);
        }
        Self { lo, hi, value, error }
    }
}
