//! Pointwise recovery of a potential from the product of two intersecting
//! Gaussian beams, and the boundary concentration family on a half-space.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beam::{min_eig, BeamProfile, CutoffFunction};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fit::{aitken, loglog_fit, richardson, LineFit};
use crate::geodesic::{integrate_geodesic, GeodesicOptions};
use crate::intersection::acute_angle;
use crate::manifold::{ChartedManifold, Mat, Point};
use crate::stationary::{holder_norm, HolderFunction, HolderNorm};

const VARS: [&str; 3] = ["x", "y", "z"];

/// Potential description as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    Constant {
        value: f64,
    },
    /// `amplitude·exp(1 − 1/(1 − |x − c|²/r²))`, periodic axes wrapped.
    Bump {
        center: Vec<f64>,
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Expression in the chart coordinates `x`, `y`, `z`.
    Expr {
        expr: String,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
enum Kernel {
    Constant(f64),
    Bump { center: Vec<f64>, radius: f64, amplitude: f64 },
    Expr(Expr),
}

/// A potential bound to a model, with its Hölder data on the chart box.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub spec: PotentialSpec,
    pub alpha: f64,
    pub holder: HolderNorm,
    /// `N(p) = ‖p‖_{C^{0,α}}/‖p‖_{L^∞}`.
    pub frequency: f64,
    pub bound: Option<f64>,
    kernel: Kernel,
    m: ChartedManifold,
}

impl PotentialField {
    pub fn from_json(m: &ChartedManifold, src: &str, alpha: f64) -> Result<Self> {
        let spec: PotentialSpec = serde_json::from_str(src)?;
        Self::new(m, spec, alpha)
    }

    pub fn new(m: &ChartedManifold, spec: PotentialSpec, alpha: f64) -> Result<Self> {
        let n = m.dim();
        let kernel = match &spec {
            PotentialSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::config("value", "must be finite"));
                }
                Kernel::Constant(*value)
            }
            PotentialSpec::Bump {
                center,
                radius,
                amplitude,
            } => {
                if center.len() != n || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config("center", format!("need {n} finite coordinates")));
                }
                if !(*radius > 0.0 && radius.is_finite()) || !amplitude.is_finite() {
                    return Err(Error::config("radius", "must be positive and finite"));
                }
                Kernel::Bump {
                    center: center.clone(),
                    radius: *radius,
                    amplitude: *amplitude,
                }
            }
            PotentialSpec::Expr { expr } => {
                if n > VARS.len() {
                    return Err(Error::Capability("expressions support up to three coordinates".into()));
                }
                Kernel::Expr(Expr::parse(expr, &VARS[..n])?)
            }
        };
        let (lo, hi) = m.box_bounds();
        let mut field = PotentialField {
            spec,
            alpha,
            holder: HolderNorm {
                sup: 0.0,
                seminorm: 0.0,
                norm: 0.0,
                pairs: 0,
                exhaustive: true,
            },
            frequency: 0.0,
            bound: None,
            kernel,
            m: m.clone(),
        };
        let per_axis = if n == 2 { 41 } else { 12 };
        let samples = HolderFunction::on_box(lo.to_vec(), hi.to_vec(), vec![per_axis; n], alpha, |x| field.eval(x))?;
        field.holder = holder_norm(&samples)?;
        field.frequency = if field.holder.sup == 0.0 {
            0.0
        } else {
            field.holder.norm / field.holder.sup
        };
        Ok(field)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kernel {
            Kernel::Constant(v) => *v,
            Kernel::Bump {
                center,
                radius,
                amplitude,
            } => {
                let d = self.m.flat_delta(center, x);
                let s = d.iter().map(|v| v * v).sum::<f64>() / (radius * radius);
                if s >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - s)).exp()
                }
            }
            Kernel::Expr(e) => e.eval(x),
        }
    }

    /// Flags admissibility `N(p) ≤ B`.
    pub fn with_bound(mut self, b: f64) -> Self {
        self.bound = Some(b);
        self
    }

    pub fn admissible(&self) -> Option<bool> {
        self.bound.map(|b| self.frequency <= b)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiHessian {
    /// `∇²Ψ(x₀)` in chart coordinates.
    #[serde(skip)]
    pub matrix: Mat,
    /// Smallest eigenvalue of `g⁻¹∇²Ψ(x₀)`.
    pub coercivity: f64,
    /// `det(g⁻¹∇²Ψ(x₀))`.
    pub det: f64,
    pub theta: f64,
    /// `min(min eig Im H_γ, min eig Im H_η)·sin²θ`.
    pub lower_bound: f64,
}

fn lowered_frame(m: &ChartedManifold, x: &[f64], frame: &[Vec<f64>]) -> Mat {
    let g = m.metric_raw(x);
    let n = m.dim();
    let mut out = Mat::zeros(n, frame.len());
    for (b, e) in frame.iter().enumerate() {
        let ge = &g * nalgebra::DVector::from_column_slice(e);
        out.set_column(b, &ge);
    }
    out
}

/// `∇²Ψ(x₀) = 2 Im(∇²φ + ∇²ψ)`, both beams at their path origin `x₀`.
pub fn hessian_psi(v: &BeamProfile, w: &BeamProfile, x0: &Point) -> Result<PsiHessian> {
    let m = v.manifold();
    let n = m.dim();
    for b in [v, w] {
        let p = b.path().point(0.0);
        let d = if p.chart == x0.chart {
            let dx = m.flat_delta(&p.x, &x0.x);
            dx.iter().map(|c| c * c).sum::<f64>().sqrt()
        } else {
            m.distance(&p, x0)?
        };
        if d > 1e-7 {
            return Err(Error::Geometry(format!("beam does not pass through x₀ (distance {d:.3e})")));
        }
    }
    let x = &x0.x;
    let (uv, uw) = (v.path().velocity(0.0), w.path().velocity(0.0));
    let theta = acute_angle(m, x, &uv, &uw);
    if theta < 1e-6 {
        return Err(Error::Precondition("beams are parallel at x₀".into()));
    }
    let mut hess = Mat::zeros(n, n);
    let mut im_min = f64::INFINITY;
    for b in [v, w] {
        let e = lowered_frame(m, x, &b.path().frame(0.0));
        let im = b.hessian(0.0).map(|z| z.im);
        im_min = im_min.min(min_eig(&im));
        hess += &e * &im * e.transpose() * 2.0;
    }
    let g = m.metric_raw(x);
    let ginv = g.clone().try_inverse().ok_or_else(|| Error::Numerical("singular metric".into()))?;
    // eigenvalues of g⁻¹A via the symmetric form L⁻¹AL⁻ᵀ
    let l = g.cholesky().ok_or_else(|| Error::Numerical("metric not positive".into()))?.l();
    let linv = l.try_inverse().ok_or_else(|| Error::Numerical("singular metric".into()))?;
    let sym = &linv * &hess * linv.transpose();
    let coercivity = min_eig(&sym);
    let det = (&ginv * &hess).determinant();
    Ok(PsiHessian {
        matrix: hess,
        coercivity,
        det,
        theta,
        lower_bound: im_min * theta.sin().powi(2),
    })
}

/// Beams of equal frequency along the geodesics through `x₀` with chart
/// directions `u` and `w`, seeded with `H₀ = iI`.
pub fn beam_pair(m: &ChartedManifold, x0: &Point, u: &[f64], w: &[f64], lambda: f64, delta1: f64) -> Result<(BeamProfile, BeamProfile)> {
    let opts = GeodesicOptions::default();
    let mk = |d: &[f64]| -> Result<BeamProfile> {
        let d = m.normalize(&x0.x, d);
        let path = integrate_geodesic(m, x0, &d, &opts)?;
        BeamProfile::with_identity_seed(path, lambda, delta1)
    };
    Ok((mk(u)?, mk(w)?))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProductOptions {
    /// Grid nodes per beam width `λ^{−1/2}`.
    pub points_per_width: f64,
    /// The box reaches where `λ c|z|²/4` equals this.
    pub tail: f64,
    /// Largest tolerated `|v|²|w|²` on interior box edges, relative to the peak.
    pub leakage: f64,
}

impl Default for ProductOptions {
    fn default() -> Self {
        ProductOptions {
            points_per_width: 12.0,
            tail: 36.0,
            leakage: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProductIntegral {
    pub lambda: f64,
    /// `λ^{1/2}∫p|v|²|w|² dV_g`, i.e. `λ^{n/2}∫p e^{−λΨ}|a|²|b|²` for the
    /// `λ^{(n−1)/8}`-normalised beams.
    pub value: f64,
    /// Difference to the same sum on every other node.
    pub error: f64,
    pub spacing: f64,
    pub half_width: f64,
    pub nodes: usize,
    pub edge_ratio: f64,
}

/// Trapezoid quadrature of `p|v|²|w|²` on a chart box around `x₀` that
/// carries everything but `e^{−tail}` of the Gaussian product.
pub fn quadruple_product_integral(
    p: &dyn Fn(&[f64]) -> f64,
    v: &BeamProfile,
    w: &BeamProfile,
    x0: &Point,
    hess: &PsiHessian,
    opts: &ProductOptions,
) -> Result<ProductIntegral> {
    if opts.points_per_width < 8.0 {
        return Err(Error::Resolution(format!(
            "{} points per beam width is below the required 8",
            opts.points_per_width
        )));
    }
    let m = v.manifold();
    let n = m.dim();
    let lambda = v.lambda;
    if (w.lambda - lambda).abs() > 1e-12 * lambda {
        return Err(Error::Precondition("beams must share the frequency".into()));
    }
    let g = m.metric_raw(&x0.x);
    let gmin = g.symmetric_eigenvalues().min();
    let radius = (4.0 * opts.tail / (lambda * hess.coercivity)).sqrt() / gmin.sqrt();
    let h0 = lambda.powf(-0.5) / opts.points_per_width;
    let k = (radius / h0).ceil() as i64;
    let k = k + (k % 2);
    let h = radius / k as f64;
    let (lo, hi) = m.box_bounds();
    let periods = m.periods();
    let flat = m.is_flat();
    let mut idx = vec![-k; n];
    let mut x = vec![0.0; n];
    let (mut fine, mut coarse) = (0.0, 0.0);
    let mut peak = 0.0f64;
    let mut edge = 0.0f64;
    let mut nodes = 0usize;
    loop {
        let mut inside = true;
        let mut on_edge = false;
        let mut even = true;
        let mut wf = 1.0;
        for d in 0..n {
            x[d] = x0.x[d] + idx[d] as f64 * h;
            if periods[d].is_none() && (x[d] < lo[d] - 1e-12 || x[d] > hi[d] + 1e-12) {
                inside = false;
            }
            // box faces lying on the boundary of M are not leakage
            if idx[d].abs() == k && (periods[d].is_some() || (x[d] > lo[d] && x[d] < hi[d])) {
                on_edge = true;
            }
            even &= idx[d] % 2 == 0;
            wf *= h;
        }
        let pt = Point { chart: x0.chart, x: x.clone() };
        if inside && m.contains(&pt) {
            let (a, b) = if flat {
                (v.evaluate_flat(&x), w.evaluate_flat(&x))
            } else {
                (v.evaluate(&pt)?, w.evaluate(&pt)?)
            };
            let prod = a.norm_sqr() * b.norm_sqr();
            peak = peak.max(prod);
            if on_edge {
                edge = edge.max(prod);
            }
            if prod > 0.0 {
                let f = p(&x) * prod * m.volume_density_raw(&x);
                fine += f * wf;
                if even {
                    coarse += f * wf * 2f64.powi(n as i32);
                }
            }
            nodes += 1;
        }
        let mut d = 0;
        loop {
            if d == n {
                let scale = lambda.sqrt();
                let edge_ratio = if peak > 0.0 { edge / peak } else { 0.0 };
                if edge_ratio > opts.leakage {
                    return Err(Error::Support(format!(
                        "beam product reaches {edge_ratio:.3e} of its peak on the integration box"
                    )));
                }
                return Ok(ProductIntegral {
                    lambda,
                    value: fine * scale,
                    error: (fine - coarse).abs() * scale,
                    spacing: h,
                    half_width: radius,
                    nodes,
                    edge_ratio,
                });
            }
            idx[d] += 1;
            if idx[d] <= k {
                break;
            }
            idx[d] = -k;
            d += 1;
        }
    }
}

/// `p̂ = I·det^{1/2}/((2π)^{n/2}|a₀|²|b₀|²)`.
pub fn recover_point_value(integral: f64, det: f64, a0: Complex64, b0: Complex64, n: usize) -> Result<f64> {
    if !(det > 0.0) {
        return Err(Error::Precondition("det ∇²Ψ(x₀) must be positive".into()));
    }
    let ab = a0.norm_sqr() * b0.norm_sqr();
    if !(ab > 0.0) {
        return Err(Error::Precondition("beam amplitudes must not vanish at x₀".into()));
    }
    Ok(integral * det.sqrt() / ((2.0 * PI).powf(n as f64 / 2.0) * ab))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RecoveryRow {
    pub lambda: f64,
    pub integral: f64,
    pub quadrature_error: f64,
    pub det: f64,
    pub a0: f64,
    pub b0: f64,
    pub p_hat: f64,
    pub p_true: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub spacing: f64,
    pub nodes: usize,
    pub used: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub x0: Point,
    pub theta: f64,
    pub coercivity: f64,
    pub lower_bound: f64,
    pub rows: Vec<RecoveryRow>,
    /// Log–log fit of the absolute error against λ.
    pub fit: Option<LineFit>,
    pub warnings: Vec<String>,
}

impl RecoveryReport {
    pub fn slope(&self) -> f64 {
        self.fit.map_or(f64::NAN, |f| f.slope)
    }
}

/// Runs the recovery at each rung of the ladder and fits the error decay.
/// Rungs whose error is below ten times the quadrature error are trimmed.
pub fn error_decay(
    p: &PotentialField,
    v: &BeamProfile,
    w: &BeamProfile,
    x0: &Point,
    ladder: &[f64],
    opts: &ProductOptions,
) -> Result<RecoveryReport> {
    if ladder.len() < 4 {
        return Err(Error::Precondition("the λ ladder needs at least 4 rungs".into()));
    }
    let hess = hessian_psi(v, w, x0)?;
    let mut warnings = Vec::new();
    if hess.coercivity < 0.9 * hess.lower_bound {
        warnings.push(format!(
            "coercivity {:.4} is below the bound {:.4}",
            hess.coercivity, hess.lower_bound
        ));
    }
    let n = v.dim();
    let (a0, b0) = (v.amplitude(0.0), w.amplitude(0.0));
    let truth = p.eval(&x0.x);
    let f = |x: &[f64]| p.eval(x);
    let mut rows = Vec::with_capacity(ladder.len());
    for &lambda in ladder {
        let (vl, wl) = (v.at_frequency(lambda), w.at_frequency(lambda));
        let q = quadruple_product_integral(&f, &vl, &wl, x0, &hess, opts)?;
        let p_hat = recover_point_value(q.value, hess.det, a0, b0, n)?;
        let scale = hess.det.sqrt() / ((2.0 * PI).powf(n as f64 / 2.0) * a0.norm_sqr() * b0.norm_sqr());
        let abs_error = (p_hat - truth).abs();
        rows.push(RecoveryRow {
            lambda,
            integral: q.value,
            quadrature_error: q.error * scale,
            det: hess.det,
            a0: a0.norm(),
            b0: b0.norm(),
            p_hat,
            p_true: truth,
            abs_error,
            rel_error: if truth != 0.0 { abs_error / truth.abs() } else { f64::NAN },
            spacing: q.spacing,
            nodes: q.nodes,
            used: abs_error > 10.0 * q.error * scale,
        });
    }
    for w in rows.windows(2) {
        if w[0].used && w[1].used && w[1].abs_error > w[0].abs_error {
            warnings.push(format!("error increases between λ = {} and λ = {}", w[0].lambda, w[1].lambda));
        }
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.used).map(|r| (r.lambda, r.abs_error)).unzip();
    Ok(RecoveryReport {
        x0: x0.clone(),
        theta: hess.theta,
        coercivity: hess.coercivity,
        lower_bound: hess.lower_bound,
        fit: loglog_fit(&x, &y),
        rows,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryOptions {
    pub alpha: f64,
    /// Simpson intervals across the tangential support `[−μ^α, μ^α]`.
    pub tangential_intervals: usize,
    /// Normal grid spacing is `μ/normal_per_mu`.
    pub normal_per_mu: f64,
    /// Normal extent in units of `μ` (`e^{−2x_n/μ}` is cut there).
    pub normal_extent: f64,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        BoundaryOptions {
            alpha: 1.0 / 3.0,
            tangential_intervals: 80,
            normal_per_mu: 40.0,
            normal_extent: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundaryRow {
    pub mu: f64,
    pub value: f64,
    pub tangential_spacing: f64,
    pub normal_spacing: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryReport {
    pub n: usize,
    pub rows: Vec<BoundaryRow>,
    /// Aitken Δ² limit of the last three values.
    pub aitken: Option<f64>,
    /// Two-point Richardson limit assuming an `O(μ^{2α})` error.
    pub richardson: Option<f64>,
    pub expected: f64,
}

impl BoundaryReport {
    pub fn limit(&self) -> f64 {
        self.aitken.or(self.richardson).unwrap_or_else(|| self.rows.last().map_or(f64::NAN, |r| r.value))
    }
}

fn bump1(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

fn simpson_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let w = crate::quad::simpson_weights(intervals, (b - a) / intervals as f64);
    w.iter().enumerate().map(|(i, wi)| wi * f(a + (b - a) * i as f64 / intervals as f64)).sum()
}

/// `∫(q u₃ u₄)|v_μ|² dx` over the half-space `{x_n ≥ 0}` for
/// `v_μ = μ^{−α(n−1)/2−1/2} η(x/μ^α) e^{(i/μ)(τ′·x′ + i x_n)}` with
/// `η(x) = Π η₁(x_k)·χ(x_n)`, `∫η₁² = 1` and `χ ≡ 1` near `0`, centred at the
/// boundary point `(center, 0)`.
pub fn boundary_concentration(
    q: &dyn Fn(&[f64]) -> f64,
    u3: &dyn Fn(&[f64]) -> f64,
    u4: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    mus: &[f64],
    opts: &BoundaryOptions,
) -> Result<BoundaryReport> {
    let n = center.len() + 1;
    if !(2..=3).contains(&n) {
        return Err(Error::Capability("boundary concentration runs in two or three dimensions".into()));
    }
    if opts.tangential_intervals % 2 != 0 || opts.tangential_intervals < 2 {
        return Err(Error::Precondition("tangential intervals must be even".into()));
    }
    let a = opts.alpha;
    let norm1 = simpson_1d(|s| bump1(s).powi(2), -1.0, 1.0, 4000).sqrt();
    let eta1 = |s: f64| bump1(s) / norm1;
    let chi = CutoffFunction::default();
    let mut rows = Vec::with_capacity(mus.len());
    for &mu in mus {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::Precondition("μ must lie in (0, 1)".into()));
        }
        let scale = mu.powf(a);
        let ht = 2.0 * scale / opts.tangential_intervals as f64;
        let hn = mu / opts.normal_per_mu;
        if ht > scale / 20.0 * (1.0 + 1e-12) || hn > mu / 20.0 * (1.0 + 1e-12) {
            return Err(Error::Resolution(format!(
                "grid ({ht:.3e}, {hn:.3e}) is coarser than (μ^α/20, μ/20) at μ = {mu}"
            )));
        }
        let depth = (opts.normal_extent * mu).min(chi.support * scale);
        let nn = ((depth / hn).ceil() as usize).max(2);
        let nn = nn + nn % 2;
        let wn = crate::quad::simpson_weights(nn, depth / nn as f64);
        let wt = crate::quad::simpson_weights(opts.tangential_intervals, ht);
        let pre = mu.powf(-a * (n as f64 - 1.0) - 1.0);
        let mut x = vec![0.0; n];
        let mut total = 0.0;
        let nt = opts.tangential_intervals + 1;
        let tangential_nodes = nt.pow(n as u32 - 1);
        for k in 0..tangential_nodes {
            let mut r = k;
            let mut wtan = 1.0;
            let mut etat = 1.0;
            for d in 0..n - 1 {
                let i = r % nt;
                r /= nt;
                let s = -scale + i as f64 * ht;
                x[d] = center[d] + s;
                wtan *= wt[i];
                etat *= eta1(s / scale);
            }
            if etat == 0.0 {
                continue;
            }
            let mut line = 0.0;
            for (j, wj) in wn.iter().enumerate() {
                let xn = j as f64 * depth / nn as f64;
                x[n - 1] = xn;
                let e = chi.eval(xn / scale);
                line += wj * q(&x) * u3(&x) * u4(&x) * e * e * (-2.0 * xn / mu).exp();
            }
            total += wtan * etat * etat * line;
        }
        rows.push(BoundaryRow {
            mu,
            value: pre * total,
            tangential_spacing: ht,
            normal_spacing: hn,
        });
    }
    let vals: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let ratio = if mus.len() >= 2 { mus[mus.len() - 1] / mus[mus.len() - 2] } else { f64::NAN };
    let mut origin = center.to_vec();
    origin.push(0.0);
    Ok(BoundaryReport {
        n,
        aitken: aitken(&vals),
        richardson: richardson(&vals, ratio, 2.0 * a),
        expected: 0.5 * q(&origin) * u3(&origin) * u4(&origin),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let one = Complex64::new(1.0, 0.0);
        let i = 2.0 * PI * 0.7 / 4f64.sqrt();
        assert!((recover_point_value(i, 4.0, one, one, 2).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(recover_point_value(0.0, 4.0, one, one, 2).unwrap(), 0.0);
        assert!(recover_point_value(1.0, 0.0, one, one, 2).is_err());
        assert!(recover_point_value(1.0, 4.0, Complex64::new(0.0, 0.0), one, 2).is_err());
        let phase = Complex64::from_polar(1.3, 0.4);
        let a = recover_point_value(3.0, 2.5, phase, one * 0.8, 3).unwrap();
        assert!((a * (2.0 * PI).powf(1.5) * 1.69 * 0.64 / 2.5f64.sqrt() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn potential_kinds() {
        let m = ChartedManifold::flat_cylinder(1.0).unwrap();
        let c = PotentialField::from_json(&m, r#"{"kind":"constant","value":2.5}"#, 0.5).unwrap();
        assert_eq!(c.eval(&[0.3, 0.2]), 2.5);
        assert!((c.frequency - 1.0).abs() < 1e-12);
        let b = PotentialField::from_json(&m, r#"{"kind":"bump","center":[0.1,0.5],"radius":0.3}"#, 0.5).unwrap();
        // periodic wrap in the angle
        assert!((b.eval(&[2.0 * PI + 0.1, 0.5]) - 1.0).abs() < 1e-12);
        assert!(b.eval(&[2.0 * PI - 0.1, 0.5]) > 0.0);
        let e = PotentialField::from_json(&m, r#"{"kind":"expr","expr":"y*(1-y)"}"#, 0.5).unwrap();
        assert!((e.eval(&[1.0, 0.5]) - 0.25).abs() < 1e-15);
        assert!(PotentialField::from_json(&m, r#"{"kind":"bump","center":[0.1],"radius":0.3}"#, 0.5).is_err());
        assert!(PotentialField::from_json(&m, r#"{"kind":"nope"}"#, 0.5).is_err());
        assert_eq!(c.with_bound(2.0).admissible(), Some(true));
    }
}
