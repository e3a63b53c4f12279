//! Quantified stationary phase for `λ^{n/2}∫_{B_r} e^{−λΨ} a`, Hölder norms
//! on grids, the frequency function and extension by zero.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{loglog_fit, LineFit};
use crate::manifold::Mat;
use crate::quad::tensor_simpson_pair;

/// All pairs are used up to this many samples.
pub const ALL_PAIRS_LIMIT: usize = 2000;

/// Samples of a function on a tensor grid over a box, optionally masked to a
/// ball centred at the origin.
#[derive(Debug, Clone, Serialize)]
pub struct HolderFunction {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub alpha: f64,
    /// `None` for grid nodes outside the domain.
    pub values: Vec<Option<f64>>,
    pub seed: u64,
    pub pairs_per_stratum: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderNorm {
    pub sup: f64,
    pub seminorm: f64,
    pub norm: f64,
    pub pairs: usize,
    pub exhaustive: bool,
}

impl HolderFunction {
    pub fn on_box(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>, alpha: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::sample(lo, hi, counts, alpha, None, f)
    }

    /// Samples `f` at the nodes of `[−r, r]ⁿ` inside the closed ball of radius `r`.
    pub fn on_ball(n: usize, r: f64, per_axis: usize, alpha: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::sample(vec![-r; n], vec![r; n], vec![per_axis; n], alpha, Some(r), f)
    }

    fn sample(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>, alpha: f64, ball: Option<f64>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Precondition("Hölder exponent must lie in (0, 1)".into()));
        }
        if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() {
            return Err(Error::Precondition("grid bounds and counts must have the same dimension".into()));
        }
        let mut out = HolderFunction {
            lo,
            hi,
            counts,
            alpha,
            values: Vec::new(),
            seed: 0x401d,
            pairs_per_stratum: 20_000,
        };
        let total: usize = out.counts.iter().product();
        out.values.reserve(total);
        let mut x = vec![0.0; out.lo.len()];
        for k in 0..total {
            out.node(k, &mut x);
            let inside = ball.is_none_or(|r| x.iter().map(|v| v * v).sum::<f64>() <= r * r * (1.0 + 1e-12));
            out.values.push(if inside { Some(f(&x)) } else { None });
        }
        Ok(out)
    }

    fn spacing(&self, d: usize) -> f64 {
        if self.counts[d] > 1 {
            (self.hi[d] - self.lo[d]) / (self.counts[d] - 1) as f64
        } else {
            0.0
        }
    }

    fn index(&self, k: usize) -> Vec<usize> {
        let mut r = k;
        self.counts
            .iter()
            .map(|c| {
                let i = r % c;
                r /= c;
                i
            })
            .collect()
    }

    fn node(&self, k: usize, x: &mut [f64]) {
        let mut r = k;
        for d in 0..self.counts.len() {
            let i = r % self.counts[d];
            r /= self.counts[d];
            x[d] = self.lo[d] + i as f64 * self.spacing(d);
        }
    }

    fn flat(&self, idx: &[i64]) -> Option<usize> {
        let mut k = 0usize;
        let mut stride = 1usize;
        for d in 0..idx.len() {
            if idx[d] < 0 || idx[d] >= self.counts[d] as i64 {
                return None;
            }
            k += idx[d] as usize * stride;
            stride *= self.counts[d];
        }
        Some(k)
    }

    pub fn len(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pair_ratio(&self, a: usize, b: usize, xa: &mut [f64], xb: &mut [f64]) -> Option<f64> {
        let (va, vb) = (self.values[a]?, self.values[b]?);
        self.node(a, xa);
        self.node(b, xb);
        let d: f64 = xa.iter().zip(xb.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        if d == 0.0 {
            return None;
        }
        Some((va - vb).abs() / d.powf(self.alpha))
    }
}

/// Sup norm and Hölder seminorm: all pairs up to [`ALL_PAIRS_LIMIT`] samples,
/// otherwise every nearest-neighbour pair plus seeded random pairs stratified
/// by index distance (a lower bound for the true seminorm).
pub fn holder_norm(f: &HolderFunction) -> Result<HolderNorm> {
    let live: Vec<usize> = (0..f.values.len()).filter(|k| f.values[*k].is_some()).collect();
    if live.len() < 2 {
        return Err(Error::Precondition("need at least two grid points".into()));
    }
    let sup = live.iter().map(|k| f.values[*k].unwrap_or(0.0).abs()).fold(0.0, f64::max);
    let n = f.counts.len();
    let mut xa = vec![0.0; n];
    let mut xb = vec![0.0; n];
    let mut semi = 0.0f64;
    let mut pairs = 0usize;
    let exhaustive = live.len() <= ALL_PAIRS_LIMIT;
    if exhaustive {
        for (i, &a) in live.iter().enumerate() {
            for &b in &live[i + 1..] {
                if let Some(q) = f.pair_ratio(a, b, &mut xa, &mut xb) {
                    semi = semi.max(q);
                    pairs += 1;
                }
            }
        }
    } else {
        // nearest neighbours
        let offsets: Vec<Vec<i64>> = (0..3usize.pow(n as u32))
            .map(|mut c| {
                (0..n)
                    .map(|_| {
                        let o = (c % 3) as i64 - 1;
                        c /= 3;
                        o
                    })
                    .collect()
            })
            .filter(|o: &Vec<i64>| o.iter().any(|v| *v != 0))
            .collect();
        for &a in &live {
            let ia = f.index(a);
            for o in &offsets {
                let ib: Vec<i64> = ia.iter().zip(o).map(|(p, q)| *p as i64 + q).collect();
                if let Some(b) = f.flat(&ib) {
                    if b > a {
                        if let Some(q) = f.pair_ratio(a, b, &mut xa, &mut xb) {
                            semi = semi.max(q);
                            pairs += 1;
                        }
                    }
                }
            }
        }
        // stratified random pairs
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(f.seed);
        let maxc = *f.counts.iter().max().expect("non-empty") as i64;
        let mut span = 2i64;
        while span / 2 < maxc {
            for _ in 0..f.pairs_per_stratum {
                let a = live[rng.random_range(0..live.len())];
                let ia = f.index(a);
                let ib: Vec<i64> = ia.iter().map(|p| *p as i64 + rng.random_range(-span..=span)).collect();
                if let Some(b) = f.flat(&ib) {
                    if let Some(q) = f.pair_ratio(a, b, &mut xa, &mut xb) {
                        semi = semi.max(q);
                        pairs += 1;
                    }
                }
            }
            span *= 2;
        }
    }
    Ok(HolderNorm {
        sup,
        seminorm: semi,
        norm: sup + semi,
        pairs,
        exhaustive,
    })
}

/// `N(p) = ‖p‖_{C^{0,α}} / ‖p‖_{L^∞}`, with `N(0) = 0`.
pub fn frequency_function(p: &HolderFunction) -> Result<f64> {
    let h = holder_norm(p)?;
    if h.sup == 0.0 {
        return Ok(0.0);
    }
    Ok(h.norm / h.sup)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PolynomialCheck {
    pub sup: f64,
    pub gradient_sup: f64,
    pub c1_norm: f64,
    pub holder: HolderNorm,
    pub frequency: f64,
    /// `B = max(1, R^{1−α})` bounds `‖φ‖_{C^{0,α}} ≤ B‖φ‖_{C¹}` on `[0, R]`.
    pub embedding_constant: f64,
}

/// Radial polynomial `p(r) = Σ a_k r^k` on `[0, R]`; requires `a_k ≥ 0` and
/// `k·a_k ≤ a_{k−1}`.
pub fn radial_polynomial_check(coeffs: &[f64], radius: f64, alpha: f64, samples: usize) -> Result<PolynomialCheck> {
    if coeffs.iter().any(|a| *a < 0.0) {
        return Err(Error::Precondition("coefficients must be nonnegative".into()));
    }
    for k in 1..coeffs.len() {
        if k as f64 * coeffs[k] > coeffs[k - 1] * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!("k·a_k ≤ a_(k−1) fails at k = {k}")));
        }
    }
    let p = |r: f64| coeffs.iter().rev().fold(0.0, |acc, a| acc * r + a);
    let dp = |r: f64| {
        coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, a)| acc * r + k as f64 * a)
    };
    let f = HolderFunction::on_box(vec![0.0], vec![radius], vec![samples], alpha, |x| p(x[0]))?;
    let holder = holder_norm(&f)?;
    let h = radius / (samples - 1) as f64;
    let gradient_sup = (0..samples).map(|i| dp(i as f64 * h).abs()).fold(0.0, f64::max);
    Ok(PolynomialCheck {
        sup: holder.sup,
        gradient_sup,
        c1_norm: holder.sup + gradient_sup,
        frequency: holder.norm / holder.sup,
        holder,
        embedding_constant: radius.powf(1.0 - alpha).max(1.0),
    })
}

/// Samples `f` on the box `[−r, r]ⁿ`, zero outside the ball `B_r`; the trace
/// of `f` on `∂B_r` must vanish (checked at `trace_samples` points).
pub fn extend_by_zero(
    f: &dyn Fn(&[f64]) -> f64,
    n: usize,
    r: f64,
    per_axis: usize,
    alpha: f64,
    trace_samples: usize,
) -> Result<HolderFunction> {
    let dirs: Vec<Vec<f64>> = match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..trace_samples)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / trace_samples as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => crate::geodesic::fibonacci_sphere(trace_samples)
            .into_iter()
            .map(|v| {
                let mut w = vec![0.0; n];
                w[..3].copy_from_slice(&v);
                w
            })
            .collect(),
    };
    let trace = dirs
        .iter()
        .map(|d| f(&d.iter().map(|c| c * r).collect::<Vec<_>>()).abs())
        .fold(0.0, f64::max);
    if trace > 1e-8 {
        return Err(Error::Precondition(format!("boundary trace {trace:.3e} is not zero")));
    }
    HolderFunction::on_box(vec![-r; n], vec![r; n], vec![per_axis; n], alpha, |x| {
        if x.iter().map(|v| v * v).sum::<f64>() <= r * r {
            f(x)
        } else {
            0.0
        }
    })
}

pub type Scalar = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Phase with a nondegenerate minimum at the origin.
#[derive(Clone)]
pub struct PhaseModel {
    pub psi: Scalar,
    pub hessian: Mat,
    pub coercivity: f64,
    pub radius: f64,
    pub cubic_constant: f64,
}

impl std::fmt::Debug for PhaseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhaseModel")
            .field("hessian", &self.hessian)
            .field("coercivity", &self.coercivity)
            .field("radius", &self.radius)
            .field("cubic_constant", &self.cubic_constant)
            .finish()
    }
}

impl PhaseModel {
    /// Checks `Ψ(0) = 0`, `∇Ψ(0) = 0` and `Ψ″(0) ≻ 0`, and estimates the
    /// cubic constant `C` with `|Ψ − ½Ψ″(0)x·x| ≤ C|x|³` by sampling the ball
    /// (points with `|x| < 1e-3` excluded).
    pub fn new(psi: Scalar, hessian: Mat, radius: f64) -> Result<Self> {
        let n = hessian.nrows();
        if hessian.ncols() != n || n == 0 {
            return Err(Error::Precondition("Hessian must be square".into()));
        }
        let z = vec![0.0; n];
        if psi(&z).abs() > 1e-10 {
            return Err(Error::Precondition("Ψ(0) must vanish".into()));
        }
        let h = 1e-5;
        for d in 0..n {
            let mut a = z.clone();
            let mut b = z.clone();
            a[d] = h;
            b[d] = -h;
            let g = (psi(&a) - psi(&b)) / (2.0 * h);
            if g.abs() > 1e-10 {
                return Err(Error::Precondition(format!("∂Ψ/∂x{d}(0) = {g:e} is not zero")));
            }
        }
        let coercivity = crate::beam::min_eig(&hessian);
        if !(coercivity > 0.0) {
            return Err(Error::Precondition("Ψ″(0) must be positive definite".into()));
        }
        let mut model = PhaseModel {
            psi,
            hessian,
            coercivity,
            radius,
            cubic_constant: 0.0,
        };
        model.cubic_constant = model.estimate_cubic(41);
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    fn quadratic(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.hessian[(i, j)] * x[i] * x[j];
            }
        }
        0.5 * s
    }

    fn estimate_cubic(&self, per_axis: usize) -> f64 {
        let n = self.dim();
        let r = self.radius;
        let total = per_axis.pow(n as u32);
        let mut x = vec![0.0; n];
        let mut best = 0.0f64;
        for k in 0..total {
            let mut q = k;
            for xd in x.iter_mut() {
                *xd = -r + 2.0 * r * (q % per_axis) as f64 / (per_axis - 1) as f64;
                q /= per_axis;
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-3 || norm > r * (1.0 + 1e-12) {
                continue;
            }
            let c = ((self.psi)(&x) - self.quadratic(&x)).abs() / norm.powi(3);
            best = best.max(c);
        }
        best
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Precondition {
    pub holds: bool,
    /// `c/4 − C r`.
    pub margin: f64,
    pub c: f64,
    pub cubic: f64,
    pub r: f64,
}

pub fn check_precondition(phase: &PhaseModel) -> Precondition {
    let margin = phase.coercivity / 4.0 - phase.cubic_constant * phase.radius;
    Precondition {
        holds: margin >= 0.0,
        margin,
        c: phase.coercivity,
        cubic: phase.cubic_constant,
        r: phase.radius,
    }
}

/// `(2π)^{n/2} det(Ψ″(0))^{−1/2} a(0)`.
pub fn leading_term(hessian: &Mat, a0: Complex64, n: usize) -> Result<Complex64> {
    if hessian.nrows() != n || hessian.ncols() != n {
        return Err(Error::Precondition(format!("Hessian must be {n}×{n}")));
    }
    let Some(ch) = hessian.clone().cholesky() else {
        return Err(Error::Precondition("Ψ″(0) must be positive definite".into()));
    };
    let det: f64 = ch.l().diagonal().iter().map(|v| v * v).product();
    Ok(a0 * ((2.0 * std::f64::consts::PI).powf(n as f64 / 2.0) / det.sqrt()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OscillatoryIntegral {
    pub lambda: f64,
    pub value: Complex64,
    /// `|S_N − S_{N/2}|/15` plus a rounding allowance of `10³·ε_mach·|S_N|`.
    pub error: f64,
    pub intervals: usize,
    pub half_width: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadratureOptions {
    /// Nodes per Gaussian width `λ^{−1/2}` (at least 8).
    pub points_per_width: f64,
    /// The box is cut at `|x| ≤ √(tail/(λc))`, where `e^{−λΨ} ≤ e^{−tail/4}`.
    pub tail: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            points_per_width: 16.0,
            tail: 160.0,
        }
    }
}

pub type Amplitude = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

/// `λ^{n/2}∫_{B_r} e^{−λΨ(x)} a(x) dx` by tensor Simpson on the box that
/// carries all but `e^{−tail/4}` of the Gaussian weight.
pub fn oscillatory_integral(phase: &PhaseModel, a: &Amplitude, lambda: f64, opts: &QuadratureOptions) -> Result<OscillatoryIntegral> {
    if opts.points_per_width < 8.0 {
        return Err(Error::Resolution(format!(
            "{} points per Gaussian width is below the required 8",
            opts.points_per_width
        )));
    }
    if !(lambda >= 1.0) {
        return Err(Error::Precondition("λ must be at least 1".into()));
    }
    let n = phase.dim();
    let r = phase.radius;
    let half = r.min((opts.tail / (lambda * phase.coercivity)).sqrt());
    let width = lambda.powf(-0.5);
    let raw = (2.0 * half / width * opts.points_per_width).ceil() as usize;
    let intervals = raw.div_ceil(4).max(1) * 4;
    let psi = &phase.psi;
    let (fine, coarse) = tensor_simpson_pair(n, half, intervals, |x: &[f64]| {
        if x.iter().map(|v| v * v).sum::<f64>() > r * r {
            return Complex64::new(0.0, 0.0);
        }
        a(x) * (-lambda * psi(x)).exp()
    });
    let scale = lambda.powf(n as f64 / 2.0);
    Ok(OscillatoryIntegral {
        lambda,
        value: fine * scale,
        error: ((fine - coarse).norm() / 15.0 + 1e3 * f64::EPSILON * fine.norm()) * scale,
        intervals,
        half_width: half,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RemainderRow {
    pub lambda: f64,
    pub integral: Complex64,
    pub leading: Complex64,
    pub remainder: f64,
    pub quadrature_error: f64,
    /// Remainder over `λ^{−α/2}‖a‖_{C^{0,α}}`.
    pub constant: f64,
    pub used: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RemainderFit {
    pub rows: Vec<RemainderRow>,
    pub fit: Option<LineFit>,
    /// Every rung fell below ten times its quadrature error.
    pub floor: bool,
    pub warnings: Vec<String>,
    pub precondition: Precondition,
}

impl RemainderFit {
    pub fn slope(&self) -> f64 {
        self.fit.map_or(f64::NAN, |f| f.slope)
    }
}

/// Fits the log–log slope of `|integral − leading|` over a λ ladder; rungs
/// below ten times the quadrature error estimate are trimmed.
pub fn remainder_rate(
    phase: &PhaseModel,
    a: &Amplitude,
    a_norm: f64,
    alpha: f64,
    ladder: &[f64],
    opts: &QuadratureOptions,
) -> Result<RemainderFit> {
    let pre = check_precondition(phase);
    if !pre.holds {
        return Err(Error::Precondition(format!("Cr ≤ c/4 fails (margin {:.3e})", pre.margin)));
    }
    if ladder.len() < 4 {
        return Err(Error::Precondition("the λ ladder needs at least 4 rungs".into()));
    }
    let lo = ladder.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ladder.iter().copied().fold(0.0, f64::max);
    if hi < 10.0 * lo * (1.0 - 1e-12) {
        return Err(Error::Precondition("the λ ladder must span at least one decade".into()));
    }
    let n = phase.dim();
    let lead = leading_term(&phase.hessian, a(&vec![0.0; n]), n)?;
    let mut rows = Vec::with_capacity(ladder.len());
    for &lambda in ladder {
        let q = oscillatory_integral(phase, a, lambda, opts)?;
        let rem = (q.value - lead).norm();
        rows.push(RemainderRow {
            lambda,
            integral: q.value,
            leading: lead,
            remainder: rem,
            quadrature_error: q.error,
            constant: rem / (lambda.powf(-alpha / 2.0) * a_norm),
            used: rem > 10.0 * q.error,
        });
    }
    let mut warnings = Vec::new();
    for w in rows.windows(2) {
        if w[0].used && w[1].used && w[1].remainder > w[0].remainder && w[1].lambda > w[0].lambda {
            warnings.push(format!("remainder increases between λ = {} and λ = {}", w[0].lambda, w[1].lambda));
        }
    }
    let trimmed = rows.iter().filter(|r| !r.used).count();
    if trimmed > 0 {
        warnings.push(format!("{trimmed} rung(s) trimmed at the quadrature floor"));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.used).map(|r| (r.lambda, r.remainder)).unzip();
    let fit = loglog_fit(&x, &y);
    Ok(RemainderFit {
        floor: x.is_empty(),
        rows,
        fit,
        warnings,
        precondition: pre,
    })
}

/// `exp(1 − 1/(1 − |x|²/r²))` inside the ball, zero outside (`a(0) = 1`).
pub fn smooth_bump(r: f64) -> impl Fn(&[f64]) -> f64 + Send + Sync + Clone {
    move |x: &[f64]| {
        let s = x.iter().map(|v| v * v).sum::<f64>() / (r * r);
        if s >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - s)).exp()
        }
    }
}

/// `|x|^α` times the smooth bump of radius `r`.
pub fn holder_amplitude(alpha: f64, r: f64) -> impl Fn(&[f64]) -> f64 + Send + Sync + Clone {
    let b = smooth_bump(r);
    move |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().powf(alpha / 2.0) * b(x)
}

/// `|x|²/2 + κ x₁³`.
pub fn cubic_phase(kappa: f64) -> Scalar {
    Arc::new(move |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>() + kappa * x[0].powi(3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn holder_basics() {
        let c = HolderFunction::on_box(vec![0.0], vec![1.0], vec![11], 0.5, |_| 3.0).unwrap();
        let h = holder_norm(&c).unwrap();
        assert_eq!((h.sup, h.seminorm, h.norm), (3.0, 0.0, 3.0));
        assert_eq!(frequency_function(&c).unwrap(), 1.0);
        for alpha in [0.2, 0.5, 0.9] {
            let l = HolderFunction::on_box(vec![0.0], vec![1.0], vec![101], alpha, |x| x[0]).unwrap();
            let h = holder_norm(&l).unwrap();
            assert_abs_diff_eq!(h.seminorm, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(h.norm, 2.0, epsilon = 1e-12);
        }
        let z = HolderFunction::on_box(vec![0.0], vec![1.0], vec![5], 0.5, |_| 0.0).unwrap();
        assert_eq!(frequency_function(&z).unwrap(), 0.0);
        assert!(holder_norm(&HolderFunction::on_box(vec![0.0], vec![1.0], vec![1], 0.5, |_| 1.0).unwrap()).is_err());
    }

    #[test]
    fn cubic_constant_and_precondition() {
        let q = PhaseModel::new(cubic_phase(0.0), Mat::identity(2, 2), 1.0).unwrap();
        assert_eq!(q.cubic_constant, 0.0);
        let p = PhaseModel::new(cubic_phase(0.1), Mat::identity(2, 2), 1.0).unwrap();
        assert_abs_diff_eq!(p.cubic_constant, 0.1, epsilon = 1e-12);
        let c = check_precondition(&p);
        assert!(c.holds && (c.margin - 0.15).abs() < 1e-12);
        let big = PhaseModel::new(cubic_phase(0.1), Mat::identity(2, 2), 3.0).unwrap();
        assert!(!check_precondition(&big).holds);
    }

    #[test]
    fn leading_terms() {
        let one = Complex64::new(1.0, 0.0);
        assert_abs_diff_eq!(leading_term(&Mat::identity(2, 2), one, 2).unwrap().re, 2.0 * PI, epsilon = 1e-14);
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        assert_abs_diff_eq!(leading_term(&d, one, 2).unwrap().re, PI, epsilon = 1e-14);
        let v = leading_term(&Mat::identity(3, 3), one * 2.0, 3).unwrap();
        assert_abs_diff_eq!(v.re, 2.0 * (2.0 * PI).powf(1.5), epsilon = 1e-12);
        assert!(leading_term(&(-Mat::identity(2, 2)), one, 2).is_err());
    }

    #[test]
    fn gaussian_integral_matches_leading_term() {
        let p = PhaseModel::new(cubic_phase(0.0), Mat::identity(2, 2), 1.0).unwrap();
        let a: Amplitude = Arc::new(|_| Complex64::new(1.0, 0.0));
        for lambda in [100.0, 1000.0] {
            let q = oscillatory_integral(&p, &a, lambda, &QuadratureOptions::default()).unwrap();
            assert!((q.value.re - 2.0 * PI).abs() < 2e-3 * 2.0 * PI, "{}", q.value);
        }
        let bad = QuadratureOptions {
            points_per_width: 4.0,
            ..Default::default()
        };
        assert!(matches!(oscillatory_integral(&p, &a, 100.0, &bad), Err(Error::Resolution(_))));
    }
}
