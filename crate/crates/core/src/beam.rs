//! Gaussian beam quasimodes
//! `v = λ^{(n−1)/8} e^{iλ(τ + ½⟨H(τ)y, y⟩)} a₀(τ) χ(|y|/δ₁)` in Fermi
//! coordinates `(τ, y)` along a geodesic.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geodesic::{fermi_coordinates, run_flow, Flow, GeodesicPath, Transport};
use crate::manifold::{ChartedManifold, Mat, Point};

pub type CMat = DMatrix<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Smooth cutoff with `χ = 1` on `[0, 1/4]` and `χ = 0` on `[1/2, ∞)`, glued
/// from the `exp(−1/u)` mollifier profile.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutoffFunction {
    pub plateau: f64,
    pub support: f64,
}

impl Default for CutoffFunction {
    fn default() -> Self {
        CutoffFunction { plateau: 0.25, support: 0.5 }
    }
}

fn mollifier_tail(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

impl CutoffFunction {
    pub fn eval(&self, s: f64) -> f64 {
        let s = s.abs();
        if s <= self.plateau {
            return 1.0;
        }
        if s >= self.support {
            return 0.0;
        }
        let w = self.support - self.plateau;
        let a = mollifier_tail((self.support - s) / w);
        let b = mollifier_tail((s - self.plateau) / w);
        a / (a + b)
    }
}

/// `H' = −H² − K` for complex symmetric `H`, packed as `[Re H, Im H, ∫tr H]`.
struct RiccatiTransport {
    m: usize,
}

impl Transport for RiccatiTransport {
    fn len(&self) -> usize {
        2 * self.m * self.m + 2
    }

    fn rhs(&self, k: &Mat, e: &[f64], d: &mut [f64]) {
        let m = self.m;
        let q = m * m;
        let (x, y) = (&e[..q], &e[q..2 * q]);
        let mut tr_re = 0.0;
        let mut tr_im = 0.0;
        for i in 0..m {
            tr_re += x[i * m + i];
            tr_im += y[i * m + i];
            for j in 0..m {
                let mut re = 0.0;
                let mut im = 0.0;
                for l in 0..m {
                    re += x[i * m + l] * x[l * m + j] - y[i * m + l] * y[l * m + j];
                    im += x[i * m + l] * y[l * m + j] + y[i * m + l] * x[l * m + j];
                }
                d[i * m + j] = -re - k[(i, j)];
                d[q + i * m + j] = -im;
            }
        }
        d[2 * q] = tr_re;
        d[2 * q + 1] = tr_im;
    }
}

#[derive(Debug, Clone)]
pub struct BeamSample {
    /// Path parameter.
    pub t: f64,
    pub h: CMat,
    pub h_dot: CMat,
    pub a0: Complex64,
    /// `∫ tr H` accumulated by the ODE solver (for the consistency check).
    pub tr_integral_ode: Complex64,
}

#[derive(Debug, Clone)]
pub struct BeamProfile {
    path: GeodesicPath,
    /// Path parameter at beam time `τ = 0`.
    pub t_origin: f64,
    pub t_end: f64,
    pub samples: Vec<BeamSample>,
    pub lambda: f64,
    pub delta1: f64,
    pub cutoff: CutoffFunction,
    pub h0: CMat,
    /// Flattened `(H, H', a₀, a₀')` per sample for fast interpolation.
    packed: Vec<Complex64>,
}

/// Integrates the Riccati equation along `path` from its entry point (or
/// `t = 0` when the backward end is trapped) with `H(0) = h0`.
pub fn solve_riccati(path: &GeodesicPath, h0: &CMat) -> Result<Vec<BeamSample>> {
    let man = path.manifold();
    let n = man.dim();
    let m = n - 1;
    if h0.nrows() != m || h0.ncols() != m {
        return Err(Error::Precondition(format!("H₀ must be {m}×{m}")));
    }
    if (h0 - h0.transpose()).iter().any(|z| z.norm() > 1e-12) {
        return Err(Error::Precondition("H₀ must be symmetric".into()));
    }
    let im0 = h0.map(|z| z.im);
    if min_eig(&im0) <= 0.0 {
        return Err(Error::Precondition("Im H₀ must be positive definite".into()));
    }
    let (t0, t1) = beam_span(path);
    let (chart, mut y0) = path.state(t0);
    let q = m * m;
    for i in 0..m {
        for j in 0..m {
            y0.push(h0[(i, j)].re);
        }
    }
    for i in 0..m {
        for j in 0..m {
            y0.push(h0[(i, j)].im);
        }
    }
    y0.extend_from_slice(&[0.0, 0.0]);
    let tr = RiccatiTransport { m };
    let flow = Flow { m: man, transport: &tr };
    let geo = flow.geo_len();
    let run = run_flow(&flow, chart, t0, &y0, t1, &[], true, false, path.ode_options())?;
    let mut out: Vec<BeamSample> = Vec::with_capacity(run.samples.len());
    let cm = |v: &[f64], off: usize| CMat::from_fn(m, m, |i, j| Complex64::new(v[off + i * m + j], v[off + q + i * m + j]));
    for s in &run.samples {
        let h = cm(&s.y, geo);
        let h_dot = cm(&s.dy, geo);
        let imh = h.map(|z| z.im);
        let e = min_eig(&imh);
        if e < 1e-12 {
            return Err(Error::Numerical(format!("Im H lost positivity at t = {} (min eigenvalue {e:e})", s.t)));
        }
        out.push(BeamSample {
            t: s.t,
            h,
            h_dot,
            a0: Complex64::new(1.0, 0.0),
            tr_integral_ode: Complex64::new(s.y[geo + 2 * q], s.y[geo + 2 * q + 1]),
        });
    }
    amplitude_a0(&mut out);
    Ok(out)
}

/// Beam parameter span: entry to exit, or `[0, forward end]` for a
/// backward-trapped geodesic.
pub fn beam_span(path: &GeodesicPath) -> (f64, f64) {
    let t0 = if path.minus().is_finite() { path.minus().span_end() } else { 0.0 };
    (t0, path.plus().span_end())
}

fn trace(h: &CMat) -> Complex64 {
    (0..h.nrows()).map(|i| h[(i, i)]).sum()
}

/// `a₀(τ) = exp(−½∫₀^τ tr H)` by composite Simpson on the sample grid, using
/// the Hermite midpoint of `H` on each interval.
pub fn amplitude_a0(samples: &mut [BeamSample]) {
    let mut acc = Complex64::new(0.0, 0.0);
    if let Some(s) = samples.first_mut() {
        s.a0 = Complex64::new(1.0, 0.0);
    }
    for k in 1..samples.len() {
        let (a, b) = (&samples[k - 1], &samples[k]);
        let h = b.t - a.t;
        if h != 0.0 {
            let fa = trace(&a.h);
            let fb = trace(&b.h);
            let mid = (fa + fb) * 0.5 + (trace(&a.h_dot) - trace(&b.h_dot)) * (h / 8.0);
            acc += (fa + mid * 4.0 + fb) * (h / 6.0);
        }
        samples[k].a0 = (-0.5 * acc).exp();
    }
}

pub fn min_eig(m: &Mat) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

impl BeamProfile {
    pub fn new(path: GeodesicPath, h0: CMat, lambda: f64, delta1: f64) -> Result<Self> {
        let n = path.dim();
        if !(2..=3).contains(&n) {
            return Err(Error::Capability("beams are implemented for n = 2 and n = 3".into()));
        }
        if !(lambda >= 1.0) {
            return Err(Error::Precondition("λ must be at least 1".into()));
        }
        if !(delta1 > 0.0) {
            return Err(Error::Precondition("δ₁ must be positive".into()));
        }
        let samples = solve_riccati(&path, &h0)?;
        let (t_origin, t_end) = beam_span(&path);
        let m = n - 1;
        let mut packed = Vec::with_capacity(samples.len() * (2 * m * m + 2));
        for s in &samples {
            packed.extend(s.h.iter().copied());
            packed.extend(s.h_dot.iter().copied());
            packed.push(s.a0);
            packed.push(-0.5 * trace(&s.h) * s.a0);
        }
        Ok(BeamProfile {
            path,
            t_origin,
            t_end,
            samples,
            lambda,
            delta1,
            cutoff: CutoffFunction::default(),
            h0,
            packed,
        })
    }

    /// Standard seed `H₀ = iI`.
    pub fn with_identity_seed(path: GeodesicPath, lambda: f64, delta1: f64) -> Result<Self> {
        let m = path.dim() - 1;
        BeamProfile::new(path, CMat::identity(m, m) * I, lambda, delta1)
    }

    pub fn path(&self) -> &GeodesicPath {
        &self.path
    }

    pub fn manifold(&self) -> &ChartedManifold {
        self.path.manifold()
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    /// Same beam at another frequency.
    pub fn at_frequency(&self, lambda: f64) -> Self {
        let mut b = self.clone();
        b.lambda = lambda;
        b
    }

    pub fn with_delta1(&self, delta1: f64) -> Self {
        let mut b = self.clone();
        b.delta1 = delta1;
        b
    }

    /// `(H, a₀)` at path parameter `t` by cubic Hermite interpolation.
    /// Writes `H` row-major into `h` (length `(n−1)²`).
    fn interp(&self, t: f64, h: &mut [Complex64]) -> Complex64 {
        let m = self.dim() - 1;
        let q = m * m;
        let stride = 2 * q + 2;
        let s = &self.samples;
        let k = s.partition_point(|x| x.t <= t).clamp(1, s.len() - 1);
        let (ta, tb) = (s[k - 1].t, s[k].t);
        let pa = &self.packed[(k - 1) * stride..k * stride];
        let pb = &self.packed[k * stride..(k + 1) * stride];
        let dt = tb - ta;
        if dt <= 0.0 {
            h.copy_from_slice(&pb[..q]);
            return pb[2 * q];
        }
        let u = ((t - ta) / dt).clamp(0.0, 1.0);
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = (u3 - 2.0 * u2 + u) * dt;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = (u3 - u2) * dt;
        for i in 0..q {
            h[i] = pa[i] * h00 + pa[q + i] * h10 + pb[i] * h01 + pb[q + i] * h11;
        }
        pa[2 * q] * h00 + pa[2 * q + 1] * h10 + pb[2 * q] * h01 + pb[2 * q + 1] * h11
    }

    /// `H(t)` at path parameter `t`.
    pub fn hessian(&self, t: f64) -> CMat {
        let m = self.dim() - 1;
        let mut h = vec![Complex64::new(0.0, 0.0); m * m];
        self.interp(t, &mut h);
        CMat::from_row_slice(m, m, &h)
    }

    /// `a₀` at path parameter `t`.
    pub fn amplitude(&self, t: f64) -> Complex64 {
        let m = self.dim() - 1;
        let mut h = vec![Complex64::new(0.0, 0.0); m * m];
        self.interp(t, &mut h)
    }

    fn prefactor(&self) -> f64 {
        self.lambda.powf((self.dim() as f64 - 1.0) / 8.0)
    }

    /// Beam value from Fermi coordinates `(t, y)` of one pass.
    pub fn value_at_fermi(&self, t: f64, y: &[f64]) -> Complex64 {
        if t < self.t_origin || t > self.t_end {
            return Complex64::new(0.0, 0.0);
        }
        let r = y.iter().map(|c| c * c).sum::<f64>().sqrt();
        let chi = self.cutoff.eval(r / self.delta1);
        if chi == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let m = y.len();
        let mut h = [Complex64::new(0.0, 0.0); 4];
        let a0 = self.interp(t, &mut h[..m * m]);
        let mut quad = Complex64::new(0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                quad += h[i * m + j] * (y[i] * y[j]);
            }
        }
        let tau = t - self.t_origin;
        let phase = I * self.lambda * (tau + 0.5 * quad);
        phase.exp() * a0 * (self.prefactor() * chi)
    }

    /// Fermi-tube radius beyond which the cutoff vanishes.
    pub fn support_radius(&self) -> f64 {
        self.cutoff.support * self.delta1
    }

    /// Beam value at a chart point; flat models sum over every pass of the
    /// geodesic through the support tube.
    pub fn evaluate(&self, x: &Point) -> Result<Complex64> {
        let m = self.manifold();
        if m.is_flat() {
            return Ok(self.evaluate_flat(&x.x));
        }
        let (t, y) = match fermi_coordinates(&self.path, x, (self.t_origin, self.t_end)) {
            Ok(v) => v,
            Err(Error::Domain(_)) => return Ok(Complex64::new(0.0, 0.0)),
            Err(e) => return Err(e),
        };
        Ok(self.value_at_fermi(t, &y))
    }

    /// Allocation-light evaluation for flat models.
    pub fn evaluate_flat(&self, x: &[f64]) -> Complex64 {
        let man = self.manifold();
        let n = man.dim();
        let o = self.path.origin_sample();
        let x0 = &o.y[..n];
        let v = &o.y[n..2 * n];
        let rad = self.support_radius();
        let mut ranges = [(0i64, 0i64, 0.0f64); 3];
        for i in 0..n {
            let a = x0[i] + self.t_origin * v[i];
            let b = x0[i] + self.t_end * v[i];
            let (lo, hi) = (a.min(b) - rad, a.max(b) + rad);
            ranges[i] = match man.periods()[i] {
                Some(p) => (((lo - x[i]) / p).ceil() as i64, ((hi - x[i]) / p).floor() as i64, p),
                None => (0, 0, 0.0),
            };
            if ranges[i].1 < ranges[i].0 {
                return Complex64::new(0.0, 0.0);
            }
        }
        let mut idx = [ranges[0].0, ranges[1].0, ranges[2].0];
        let mut total = Complex64::new(0.0, 0.0);
        let mut d = [0.0f64; 3];
        let mut y = [0.0f64; 2];
        loop {
            let mut t = 0.0;
            for i in 0..n {
                d[i] = x[i] + idx[i] as f64 * ranges[i].2 - x0[i];
                t += d[i] * v[i];
            }
            if t >= self.t_origin && t <= self.t_end {
                let mut r2 = 0.0;
                for b in 1..n {
                    let e = &o.y[n + b * n..n + (b + 1) * n];
                    let yb: f64 = (0..n).map(|i| d[i] * e[i]).sum();
                    y[b - 1] = yb;
                    r2 += yb * yb;
                }
                if r2 < rad * rad {
                    total += self.value_at_fermi(t, &y[..n - 1]);
                }
            }
            let mut k = 0;
            loop {
                if k == n {
                    return total;
                }
                idx[k] += 1;
                if idx[k] <= ranges[k].1 {
                    break;
                }
                idx[k] = ranges[k].0;
                k += 1;
            }
        }
    }

    /// Smallest eigenvalue of `Im H` over the samples.
    pub fn min_im_eigenvalue(&self) -> f64 {
        self.samples.iter().map(|s| min_eig(&s.h.map(|z| z.im))).fold(f64::INFINITY, f64::min)
    }

    /// Largest `‖H − Hᵀ‖_max` over the samples.
    pub fn symmetry_defect(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| (&s.h - s.h.transpose()).iter().map(|z| z.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// Largest `| |a₀| − exp(−½ Re ∫tr H) |` between the Simpson amplitude and
    /// the ODE-accumulated integral.
    pub fn amplitude_consistency(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| (s.a0.norm() - (-0.5 * s.tr_integral_ode.re).exp()).abs())
            .fold(0.0, f64::max)
    }

    /// Transverse radius beyond which the Gaussian factor is below `1e-12`
    /// of its on-axis value (capped by the cutoff support).
    pub fn gaussian_radius(&self) -> f64 {
        let c = self.min_im_eigenvalue();
        let r = (2.0 * (1e12f64).ln() / (self.lambda * c)).sqrt();
        r.min(self.support_radius())
    }
}

/// Axis-aligned tensor grid over a chart box (cell-centred nodes are not
/// used: nodes run from `lo` to `hi` inclusive).
#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Grid {
    pub fn with_spacing(lo: Vec<f64>, hi: Vec<f64>, h: f64) -> Self {
        let counts = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (((b - a) / h).ceil() as usize).max(2) + 1)
            .collect();
        Grid { lo, hi, counts }
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.lo.len())
            .map(|i| (self.hi[i] - self.lo[i]) / (self.counts[i] - 1) as f64)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visits every node with its trapezoid weight.
    pub fn for_each(&self, mut f: impl FnMut(&[f64], f64)) {
        let n = self.lo.len();
        let h = self.spacing();
        let mut idx = vec![0usize; n];
        let mut x = self.lo.clone();
        loop {
            let mut w = 1.0;
            for i in 0..n {
                x[i] = self.lo[i] + idx[i] as f64 * h[i];
                let end = idx[i] == 0 || idx[i] == self.counts[i] - 1;
                w *= if end { 0.5 * h[i] } else { h[i] };
            }
            f(&x, w);
            let mut k = 0;
            loop {
                if k == n {
                    return;
                }
                idx[k] += 1;
                if idx[k] < self.counts[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BeamNorms {
    pub lambda: f64,
    pub l2: f64,
    pub l4: f64,
    pub linf: f64,
    /// `‖v‖_{L⁴}` (the normalised target is O(1)).
    pub l4_ratio: f64,
    /// `‖v‖_{L∞}/λ^{(n−1)/8}`.
    pub linf_ratio: f64,
}

/// Transverse resolution demanded by norms and products: at least
/// `points` nodes per Gaussian width `λ^{−1/2}`.
pub fn check_resolution(grid: &Grid, lambda: f64, points: f64) -> Result<()> {
    let width = lambda.powf(-0.5);
    let h = grid.spacing().into_iter().fold(0.0, f64::max);
    if h > width / points {
        return Err(Error::Resolution(format!(
            "grid spacing {h:.3e} exceeds λ^(-1/2)/{points} = {:.3e}",
            width / points
        )));
    }
    Ok(())
}

/// `L²`, `L⁴` and `L∞` norms over `grid` with `dV_g` weights, points outside
/// `M` contributing nothing.
pub fn beam_norms(profile: &BeamProfile, grid: &Grid) -> Result<BeamNorms> {
    check_resolution(grid, profile.lambda, 8.0)?;
    let m = profile.manifold();
    let flat = m.is_flat();
    let mut s2 = 0.0;
    let mut s4 = 0.0;
    let mut sup = 0.0f64;
    let mut err = None;
    grid.for_each(|x, w| {
        if err.is_some() {
            return;
        }
        let p = Point::new(x.to_vec());
        if m.boundary_fn(x) < 0.0 {
            return;
        }
        let v = if flat {
            profile.evaluate_flat(x)
        } else {
            match profile.evaluate(&p) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            }
        };
        let a2 = v.norm_sqr();
        if a2 == 0.0 {
            return;
        }
        let dv = w * m.volume_density_raw(x);
        s2 += a2 * dv;
        s4 += a2 * a2 * dv;
        sup = sup.max(a2.sqrt());
    });
    if let Some(e) = err {
        return Err(e);
    }
    let l4 = s4.powf(0.25);
    Ok(BeamNorms {
        lambda: profile.lambda,
        l2: s2.sqrt(),
        l4,
        linf: sup,
        l4_ratio: l4,
        linf_ratio: sup / profile.prefactor(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residual {
    pub lambda: f64,
    pub residual: f64,
    pub l2: f64,
    /// `‖(−Δ − λ²)v‖ / (λ²‖v‖)`.
    pub ratio: f64,
    pub h: f64,
}

/// Fourth-order central stencils for first and second derivatives.
const D1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const D2: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];

/// `‖(−Δ_g − λ²)u‖_{L²}` on a uniform grid of spacing `h` over the box
/// `lo..hi` of a two-dimensional chart, with
/// `Δ_g u = g^{jk}∂_j∂_k u − g^{jk}Γ^l_{jk}∂_l u` discretised by fourth-order
/// central differences. Only nodes whose stencil lies inside `M` are counted.
pub fn helmholtz_residual(
    m: &ChartedManifold,
    u: &dyn Fn(&[f64]) -> Complex64,
    lambda: f64,
    lo: [f64; 2],
    hi: [f64; 2],
    h: f64,
) -> Result<(f64, f64)> {
    if m.dim() != 2 {
        return Err(Error::Capability("the finite-difference residual is implemented for n = 2".into()));
    }
    if h > 1.0 / (20.0 * lambda) * (1.0 + 1e-12) {
        return Err(Error::Resolution(format!(
            "residual grid spacing {h:.3e} exceeds 1/(20λ) = {:.3e}",
            1.0 / (20.0 * lambda)
        )));
    }
    let nx = ((hi[0] - lo[0]) / h).round() as usize + 1;
    let ny = ((hi[1] - lo[1]) / h).round() as usize + 1;
    if nx < 5 || ny < 5 {
        return Err(Error::Resolution("residual box is smaller than the stencil".into()));
    }
    let flat = m.is_flat();
    let l2 = lambda * lambda;
    let mut rows: Vec<Vec<Complex64>> = Vec::with_capacity(5);
    let eval_row = |j: usize| -> Vec<Complex64> {
        let y = lo[1] + j as f64 * h;
        (0..nx).map(|i| u(&[lo[0] + i as f64 * h, y])).collect()
    };
    for j in 0..5 {
        rows.push(eval_row(j));
    }
    let mut res2 = 0.0;
    let mut norm2 = 0.0;
    let mut gam = [0.0; 8];
    for j in 2..ny - 2 {
        if j > 2 {
            rows.remove(0);
            rows.push(eval_row(j + 2));
        }
        let y = lo[1] + j as f64 * h;
        for i in 2..nx - 2 {
            let x = [lo[0] + i as f64 * h, y];
            // the full stencil must stay inside M
            if m.boundary_fn(&[x[0], y - 2.0 * h]) < 0.0
                || m.boundary_fn(&[x[0], y + 2.0 * h]) < 0.0
                || m.boundary_fn(&[x[0] - 2.0 * h, y]) < 0.0
                || m.boundary_fn(&[x[0] + 2.0 * h, y]) < 0.0
            {
                continue;
            }
            let c = rows[2][i];
            let mut uxx = Complex64::new(0.0, 0.0);
            let mut uyy = Complex64::new(0.0, 0.0);
            for k in 0..5 {
                uxx += rows[2][i + k - 2] * D2[k];
                uyy += rows[k][i] * D2[k];
            }
            uxx /= h * h;
            uyy /= h * h;
            let (lap, dv) = if flat {
                (uxx + uyy, 1.0)
            } else {
                let mut ux = Complex64::new(0.0, 0.0);
                let mut uy = Complex64::new(0.0, 0.0);
                let mut uxy = Complex64::new(0.0, 0.0);
                for k in 0..5 {
                    ux += rows[2][i + k - 2] * D1[k];
                    uy += rows[k][i] * D1[k];
                    let mut inner = Complex64::new(0.0, 0.0);
                    for l in 0..5 {
                        inner += rows[k][i + l - 2] * D1[l];
                    }
                    uxy += inner * D1[k];
                }
                ux /= h;
                uy /= h;
                uxy /= h * h;
                let g = m.metric_raw(&x);
                let gi = g.clone().try_inverse().ok_or_else(|| Error::Numerical("singular metric".into()))?;
                m.christoffel_into(&x, &mut gam);
                let mut contr = [0.0; 2];
                for (l, cl) in contr.iter_mut().enumerate() {
                    for a in 0..2 {
                        for b in 0..2 {
                            *cl += gi[(a, b)] * gam[l * 4 + a * 2 + b];
                        }
                    }
                }
                let lap = uxx * gi[(0, 0)] + uxy * (2.0 * gi[(0, 1)]) + uyy * gi[(1, 1)] - ux * contr[0] - uy * contr[1];
                (lap, m.volume_density_raw(&x))
            };
            let r = -lap - c * l2;
            let w = h * h * dv;
            res2 += r.norm_sqr() * w;
            norm2 += c.norm_sqr() * w;
        }
    }
    Ok((res2.sqrt(), norm2.sqrt()))
}

/// Residual of a beam on a flat two-dimensional model: the box is the
/// bounding box of the Gaussian tube, the spacing `1/(20λ)`.
pub fn residual_norm(profile: &BeamProfile) -> Result<Residual> {
    let m = profile.manifold();
    if !m.is_flat() || m.dim() != 2 {
        return Err(Error::Capability("beam residual box is derived for flat two-dimensional models".into()));
    }
    let lambda = profile.lambda;
    let h = 1.0 / (20.0 * lambda);
    let o = profile.path().origin_sample();
    let r = profile.gaussian_radius() + 4.0 * h;
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    for i in 0..2 {
        let a = o.y[i] + profile.t_origin * o.y[2 + i];
        let b = o.y[i] + profile.t_end * o.y[2 + i];
        lo[i] = a.min(b) - r;
        hi[i] = a.max(b) + r;
        if m.periods()[i].is_none() {
            let (blo, bhi) = m.box_bounds();
            lo[i] = lo[i].max(blo[i]);
            hi[i] = hi[i].min(bhi[i]);
        }
    }
    // snap the box to a whole number of cells
    for i in 0..2 {
        let cells = ((hi[i] - lo[i]) / h).floor();
        hi[i] = lo[i] + cells * h;
    }
    let u = |x: &[f64]| profile.evaluate_flat(x);
    let (res, l2) = helmholtz_residual(m, &u, lambda, lo, hi, h)?;
    Ok(Residual {
        lambda,
        residual: res,
        l2,
        ratio: res / (lambda * lambda * l2),
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::{integrate_geodesic, GeodesicOptions};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn vertical(lambda: f64, delta1: f64) -> BeamProfile {
        let m = ChartedManifold::flat_cylinder(1.0).unwrap();
        let p = integrate_geodesic(&m, &Point::new(vec![PI, 0.5]), &[0.0, 1.0], &GeodesicOptions::default()).unwrap();
        BeamProfile::with_identity_seed(p, lambda, delta1).unwrap()
    }

    #[test]
    fn cutoff_shape() {
        let c = CutoffFunction::default();
        assert_eq!(c.eval(0.0), 1.0);
        assert_eq!(c.eval(0.25), 1.0);
        assert_eq!(c.eval(0.5), 0.0);
        let mut prev = 1.0;
        for k in 0..=100 {
            let v = c.eval(0.25 + 0.25 * k as f64 / 100.0);
            assert!((0.0..=1.0).contains(&v) && v <= prev + 1e-15);
            prev = v;
        }
        assert_abs_diff_eq!(c.eval(0.375), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn flat_riccati_closed_form() {
        let b = vertical(100.0, 4.0);
        for s in &b.samples {
            let t = s.t - b.t_origin;
            let want = Complex64::new(t, 1.0) / (1.0 + t * t);
            assert!((s.h[(0, 0)] - want).norm() < 1e-7);
            assert_abs_diff_eq!(s.a0.norm(), (1.0 + t * t).powf(-0.25), epsilon = 1e-9);
        }
        assert!(b.amplitude_consistency() < 1e-7);
    }

    #[test]
    fn sphere_fixed_point() {
        let m = ChartedManifold::round_sphere(2).unwrap();
        let x = Point::new(vec![0.1, 0.2]);
        let v = m.normalize(&x.x, &[1.0, -0.4]);
        let p = integrate_geodesic(&m, &x, &v, &GeodesicOptions { t_max: Some(7.0), ..Default::default() }).unwrap();
        let b = BeamProfile::with_identity_seed(p, 10.0, 1.0).unwrap();
        for s in &b.samples {
            assert!((s.h[(0, 0)] - I).norm() < 1e-9);
            let t = s.t - b.t_origin;
            assert!((s.a0 - (-0.5 * I * t).exp()).norm() < 1e-9);
        }
    }

    #[test]
    fn on_axis_value_and_transverse_decay() {
        let b = vertical(100.0, 4.0);
        // s = 0.3 is path parameter −0.2, beam time 0.3
        let tau = 0.3;
        let on = b.evaluate(&Point::new(vec![PI, 0.3])).unwrap();
        let a0 = Complex64::new(1.0, tau).powf(-0.5);
        assert_abs_diff_eq!(on.norm(), 100f64.powf(0.125) * a0.norm(), epsilon = 1e-9);
        let y = 0.05;
        let off = b.evaluate(&Point::new(vec![PI + y, 0.3])).unwrap();
        let imh = 1.0 / (1.0 + tau * tau);
        assert_abs_diff_eq!(off.norm() / on.norm(), (-100.0 * 0.5 * imh * y * y).exp(), epsilon = 1e-10);
        assert_eq!(b.evaluate(&Point::new(vec![PI + 2.0, 0.3])).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn plane_wave_residual_is_truncation_only() {
        let m = ChartedManifold::flat_torus(&[10.0, 10.0]).unwrap();
        let lambda = 40.0;
        let u = |x: &[f64]| (I * lambda * x[0]).exp();
        let h = 1.0 / (20.0 * lambda);
        let (res, l2) = helmholtz_residual(&m, &u, lambda, [0.0, 0.0], [0.5, 0.5], h).unwrap();
        assert!(res <= 1e-3 * lambda * lambda * l2);
    }
}
