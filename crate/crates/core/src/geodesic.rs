//! Geodesics with a parallel orthonormal frame, boundary exits and Fermi
//! coordinates.
//!
//! The state integrated along a geodesic is `[x, ẋ, E₁, …, E_{n−1}, extra]`,
//! where `extra` is an optional block of quantities transported in the frame
//! (Jacobi matrices, beam Hessians). Sphere geodesics hop between the two
//! stereographic charts whenever they stray too far from the chart origin.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::manifold::{ChartedManifold, Mat, Point};
use crate::ode::{self, OdeOptions, OdeSystem};

/// Quantities carried along the geodesic in frame coordinates.
pub trait Transport: Sync {
    fn len(&self) -> usize;
    /// `extra' = F(K, extra)` with `K_{ij} = ⟨R(E_i, γ̇)γ̇, E_j⟩`.
    fn rhs(&self, k: &Mat, extra: &[f64], d: &mut [f64]);
}

struct NoTransport;

impl Transport for NoTransport {
    fn len(&self) -> usize {
        0
    }
    fn rhs(&self, _k: &Mat, _extra: &[f64], _d: &mut [f64]) {}
}

pub(crate) struct Flow<'a> {
    pub m: &'a ChartedManifold,
    pub transport: &'a dyn Transport,
}

impl Flow<'_> {
    fn n(&self) -> usize {
        self.m.dim()
    }

    pub(crate) fn geo_len(&self) -> usize {
        let n = self.n();
        n * (n + 1)
    }
}

impl OdeSystem for Flow<'_> {
    fn dim(&self) -> usize {
        self.geo_len() + self.transport.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n();
        let x = &y[..n];
        let v = &y[n..2 * n];
        dy[..n].copy_from_slice(v);
        let flat = self.m.is_flat();
        let mut gam = [0.0f64; 512];
        let gam = &mut gam[..n * n * n];
        if !flat {
            self.m.christoffel_into(x, gam);
        }
        // velocity and frame vectors all obey w' = −Γ(v, w)
        for b in 0..n {
            let w = &y[n + b * n..n + (b + 1) * n];
            for k in 0..n {
                let mut s = 0.0;
                if !flat {
                    for i in 0..n {
                        for j in 0..n {
                            s += gam[k * n * n + i * n + j] * v[i] * w[j];
                        }
                    }
                }
                dy[n + b * n + k] = -s;
            }
        }
        let g = self.geo_len();
        if self.transport.len() > 0 {
            let frame: Vec<&[f64]> = (1..n).map(|b| &y[n + b * n..n + (b + 1) * n]).collect();
            let kmat = self.m.jacobi_curvature(x, v, &frame);
            self.transport.rhs(&kmat, &y[g..], &mut dy[g..]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowSample {
    pub t: f64,
    pub chart: usize,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

pub(crate) struct FlowRun {
    pub samples: Vec<FlowSample>,
    /// Time of a boundary exit, if the run stopped at one.
    pub exit: Option<f64>,
}

fn apply_transition(m: &ChartedManifold, chart: usize, y: &mut [f64]) -> usize {
    let n = m.dim();
    let Some((c2, xn, jac)) = m.chart_transition(chart, &y[..n]) else {
        return chart;
    };
    y[..n].copy_from_slice(&xn);
    for b in 0..n {
        let w = DVector::from_column_slice(&y[n + b * n..n + (b + 1) * n]);
        let wn = &jac * w;
        y[n + b * n..n + (b + 1) * n].copy_from_slice(wn.as_slice());
    }
    c2
}

/// Integrates the flow from `(t0, y0)` in `chart` to `t_end`, switching
/// charts as needed and (optionally) stopping at the boundary.
pub(crate) fn run_flow(
    flow: &Flow,
    chart0: usize,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    t_eval: &[f64],
    record_steps: bool,
    stop_at_boundary: bool,
    opts: &OdeOptions,
) -> Result<FlowRun> {
    let m = flow.m;
    let n = m.dim();
    let mut chart = chart0;
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut samples: Vec<FlowSample> = Vec::new();
    let push = |samples: &mut Vec<FlowSample>, t: f64, chart: usize, y: Vec<f64>| {
        let mut dy = vec![0.0; y.len()];
        flow.rhs(t, &y, &mut dy);
        samples.push(FlowSample { t, chart, y, dy });
    };
    push(&mut samples, t, chart, y.clone());
    let switching = m.chart_count() > 1;
    let closed = m.is_closed();
    if !switching && (closed || !stop_at_boundary) {
        let tr = ode::integrate(flow, t0, y0, t_end, t_eval, record_steps, None, opts)?;
        for (tt, yy) in tr.t.into_iter().zip(tr.y).skip(1) {
            push(&mut samples, tt, chart, yy);
        }
        return Ok(FlowRun { samples, exit: None });
    }
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    for _ in 0..100_000 {
        if (t_end - t) * dir <= 0.0 {
            break;
        }
        let ev = |s: &[f64]| {
            let b = if stop_at_boundary { m.boundary_fn(&s[..n]) } else { f64::INFINITY };
            b.min(m.chart_fn(&s[..n]))
        };
        let tr = ode::integrate(flow, t, &y, t_end, t_eval, record_steps, Some(&ev), opts)?;
        let fired = tr.event_time;
        let mut ts = tr.t.into_iter();
        let mut ys = tr.y.into_iter();
        ts.next();
        ys.next();
        for (tt, yy) in ts.zip(ys) {
            push(&mut samples, tt, chart, yy);
        }
        let last = samples.last().expect("at least one sample");
        t = last.t;
        y = last.y.clone();
        if fired.is_none() {
            break;
        }
        let past_boundary = stop_at_boundary && m.boundary_fn(&y[..n]) < 0.0;
        if past_boundary || !switching || m.chart_fn(&y[..n]) >= 0.0 {
            return Ok(FlowRun { samples, exit: Some(t) });
        }
        chart = apply_transition(m, chart, &mut y);
        push(&mut samples, t, chart, y.clone());
    }
    Ok(FlowRun { samples, exit: None })
}

/// Where a geodesic ends in one time direction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Exit {
    /// Reached `∂M` at time `t`; `cos` is `⟨γ̇, ν⟩_g` with the outward normal.
    Boundary { t: f64, tangential: bool, cos: f64 },
    /// No exit up to the trapping cutoff `t`.
    Trapped { t: f64 },
}

impl Exit {
    pub fn time(&self) -> f64 {
        match self {
            Exit::Boundary { t, .. } => *t,
            Exit::Trapped { t } => t.signum() * f64::INFINITY,
        }
    }

    pub fn span_end(&self) -> f64 {
        match self {
            Exit::Boundary { t, .. } | Exit::Trapped { t } => *t,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Exit::Boundary { .. })
    }

    pub fn is_tangential(&self) -> bool {
        matches!(self, Exit::Boundary { tangential: true, .. })
    }
}

/// Tolerance on `|⟨γ̇, ν⟩|` below which a boundary exit counts as tangential.
pub const TANGENCY_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GeodesicOptions {
    /// Trapping cutoff; defaults to 50 times the model diameter.
    pub t_max: Option<f64>,
    pub ode: OdeOptions,
    /// Stop at `∂M` (otherwise the geodesic runs on in the natural extension).
    pub stop_at_boundary: bool,
    /// Initial normal frame; Gram–Schmidt of the coordinate basis otherwise.
    pub frame: Option<Vec<Vec<f64>>>,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions {
            t_max: None,
            ode: OdeOptions::default(),
            stop_at_boundary: true,
            frame: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicPath {
    m: ChartedManifold,
    samples: Vec<FlowSample>,
    /// Index of the sample at `t = 0`.
    origin: usize,
    minus: Exit,
    plus: Exit,
    opts: OdeOptions,
}

/// g-orthonormal completion of `v` by greedy Gram–Schmidt of the coordinate basis.
pub fn complete_frame(m: &ChartedManifold, x: &[f64], v: &[f64]) -> Vec<Vec<f64>> {
    let n = m.dim();
    let mut basis: Vec<Vec<f64>> = vec![v.to_vec()];
    let mut used = vec![false; n];
    while basis.len() < n {
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for (k, u) in used.iter().enumerate() {
            if *u {
                continue;
            }
            let mut w = vec![0.0; n];
            w[k] = 1.0;
            for b in &basis {
                let c = m.inner(x, &w, b);
                for i in 0..n {
                    w[i] -= c * b[i];
                }
            }
            let nw = m.norm(x, &w);
            if best.as_ref().is_none_or(|(_, _, bn)| nw > *bn) {
                best = Some((k, w, nw));
            }
        }
        let (k, w, nw) = best.expect("basis incomplete");
        used[k] = true;
        basis.push(w.iter().map(|c| c / nw).collect());
    }
    basis.remove(0);
    basis
}

/// Unit g-length tangent directions at `x`: uniform angles for `n = 2`,
/// Fibonacci sphere for `n = 3`, and a seeded sample otherwise.
pub fn direction_grid(m: &ChartedManifold, x: &[f64], count: usize) -> Vec<Vec<f64>> {
    let n = m.dim();
    let raw: Vec<Vec<f64>> = match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => fibonacci_sphere(count),
        _ => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
            (0..count)
                .map(|_| {
                    let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let s = u.iter().map(|c| c * c).sum::<f64>().sqrt();
                    u.iter().map(|c| c / s).collect()
                })
                .collect()
        }
    };
    let g = m.metric_raw(x);
    let l = g.cholesky().expect("metric is positive definite").l();
    let lt_inv = l.transpose().try_inverse().expect("invertible");
    raw.into_iter()
        .map(|u| {
            let v = &lt_inv * DVector::from_vec(u);
            v.as_slice().to_vec()
        })
        .collect()
}

pub fn fibonacci_sphere(count: usize) -> Vec<Vec<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * k as f64;
            vec![r * a.cos(), r * a.sin(), z]
        })
        .collect()
}

fn initial_state(m: &ChartedManifold, x0: &[f64], v0: &[f64], frame: &[Vec<f64>]) -> Vec<f64> {
    let mut y = Vec::with_capacity(m.dim() * (m.dim() + 1));
    y.extend_from_slice(x0);
    y.extend_from_slice(v0);
    for e in frame {
        y.extend_from_slice(e);
    }
    y
}

/// Integrates the unit-speed geodesic through `x0` with velocity `v0` in both
/// time directions until it leaves `M` or reaches the trapping cutoff.
pub fn integrate_geodesic(
    m: &ChartedManifold,
    x0: &Point,
    v0: &[f64],
    opts: &GeodesicOptions,
) -> Result<GeodesicPath> {
    let n = m.dim();
    if x0.x.len() != n || v0.len() != n {
        return Err(Error::Precondition(format!("expected {n}-dimensional point and tangent")));
    }
    if opts.stop_at_boundary && !m.contains(x0) {
        return Err(Error::Domain(format!("start point {:?} is outside M", x0.x)));
    }
    let speed = m.norm(&x0.x, v0);
    if !((speed - 1.0).abs() <= 1e-8) {
        return Err(Error::Precondition(format!("initial velocity has g-length {speed}, expected 1")));
    }
    let frame = match &opts.frame {
        Some(f) => {
            check_frame(m, &x0.x, v0, f, 1e-8)?;
            f.clone()
        }
        None => complete_frame(m, &x0.x, v0),
    };
    let t_max = opts.t_max.unwrap_or(50.0 * m.diameter());
    if !(t_max > 0.0) {
        return Err(Error::Precondition("t_max must be positive".into()));
    }
    let y0 = initial_state(m, &x0.x, v0, &frame);
    let flow = Flow { m, transport: &NoTransport };
    let fwd = run_flow(&flow, x0.chart, 0.0, &y0, t_max, &[], true, opts.stop_at_boundary, &opts.ode)?;
    let bwd = run_flow(&flow, x0.chart, 0.0, &y0, -t_max, &[], true, opts.stop_at_boundary, &opts.ode)?;
    let exit_of = |run: &FlowRun, sign: f64| match run.exit {
        Some(t) => {
            let s = run.samples.last().expect("sample");
            let x = &s.y[..n];
            let v = &s.y[n..2 * n];
            let nu = m.outward_normal(x).unwrap_or_else(|| vec![0.0; n]);
            // for the backward run the geodesic enters rather than leaves
            let c = m.inner(x, v, &nu) * sign;
            Exit::Boundary { t, tangential: c.abs() < TANGENCY_TOL, cos: c }
        }
        None => Exit::Trapped { t: sign * t_max },
    };
    let plus = exit_of(&fwd, 1.0);
    let minus = exit_of(&bwd, -1.0);
    let mut samples: Vec<FlowSample> = bwd.samples.into_iter().rev().collect();
    let origin = samples.len() - 1;
    samples.extend(fwd.samples.into_iter().skip(1));
    Ok(GeodesicPath {
        m: m.clone(),
        samples,
        origin,
        minus,
        plus,
        opts: opts.ode,
    })
}

fn check_frame(m: &ChartedManifold, x: &[f64], v: &[f64], frame: &[Vec<f64>], tol: f64) -> Result<()> {
    let n = m.dim();
    if frame.len() != n - 1 || frame.iter().any(|e| e.len() != n) {
        return Err(Error::Precondition(format!("frame must contain {} vectors of length {n}", n - 1)));
    }
    let mut all = vec![v.to_vec()];
    all.extend(frame.iter().cloned());
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            let got = m.inner(x, &all[i], &all[j]);
            if (got - want).abs() > tol {
                return Err(Error::Precondition(format!("frame not g-orthonormal: ⟨e{i}, e{j}⟩ = {got}")));
            }
        }
    }
    Ok(())
}

/// Exit data `(l₋, l₊, tangential₋, tangential₊)`; trapped directions report ±∞.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ExitTimes {
    pub l_minus: f64,
    pub l_plus: f64,
    pub tangential_minus: bool,
    pub tangential_plus: bool,
}

pub fn exit_time(path: &GeodesicPath) -> ExitTimes {
    ExitTimes {
        l_minus: path.minus.time(),
        l_plus: path.plus.time(),
        tangential_minus: path.minus.is_tangential(),
        tangential_plus: path.plus.is_tangential(),
    }
}

fn hermite(t0: f64, t1: f64, y0: &[f64], d0: &[f64], y1: &[f64], d1: &[f64], t: f64, out: &mut [f64]) {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for i in 0..out.len() {
        out[i] = h00 * y0[i] + h10 * h * d0[i] + h01 * y1[i] + h11 * h * d1[i];
    }
}

/// Cubic Hermite interpolation over flow samples; returns `(chart, state)`.
pub(crate) fn interpolate(samples: &[FlowSample], t: f64) -> (usize, Vec<f64>) {
    let k = samples.partition_point(|s| s.t <= t);
    if k == 0 {
        return (samples[0].chart, samples[0].y.clone());
    }
    if k >= samples.len() {
        let s = samples.last().expect("non-empty");
        return (s.chart, s.y.clone());
    }
    let a = &samples[k - 1];
    let b = &samples[k];
    if a.t == t {
        return (a.chart, a.y.clone());
    }
    let mut out = vec![0.0; a.y.len()];
    hermite(a.t, b.t, &a.y, &a.dy, &b.y, &b.dy, t, &mut out);
    (a.chart, out)
}

/// Re-integrates from the nearest earlier (in the direction away from the
/// origin) sample to obtain the state at `t` to integrator accuracy.
pub(crate) fn exact_state(
    flow: &Flow,
    samples: &[FlowSample],
    origin_t: f64,
    t: f64,
    opts: &OdeOptions,
) -> Result<(usize, Vec<f64>)> {
    // choose a base sample between the origin and t, as close to t as possible
    let k = samples.partition_point(|s| s.t <= t);
    let base = if t >= origin_t {
        samples[..k].last()
    } else {
        samples[k..].first()
    }
    .unwrap_or(&samples[0]);
    if base.t == t {
        return Ok((base.chart, base.y.clone()));
    }
    let run = run_flow(flow, base.chart, base.t, &base.y, t, &[], false, false, opts)?;
    let s = run.samples.last().expect("sample");
    Ok((s.chart, s.y.clone()))
}

impl GeodesicPath {
    pub fn manifold(&self) -> &ChartedManifold {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn samples(&self) -> &[FlowSample] {
        &self.samples
    }

    pub fn minus(&self) -> Exit {
        self.minus
    }

    pub fn plus(&self) -> Exit {
        self.plus
    }

    /// Parameter span `[l₋, l₊]` actually integrated (cutoffs for trapped ends).
    pub fn span(&self) -> (f64, f64) {
        (self.minus.span_end(), self.plus.span_end())
    }

    pub fn length(&self) -> f64 {
        self.plus.time() - self.minus.time()
    }

    pub fn ode_options(&self) -> &OdeOptions {
        &self.opts
    }

    pub fn origin_sample(&self) -> &FlowSample {
        &self.samples[self.origin]
    }

    /// Both ends leave through the boundary transversally.
    pub fn is_non_tangential(&self) -> bool {
        self.minus.is_finite() && self.plus.is_finite() && !self.minus.is_tangential() && !self.plus.is_tangential()
    }

    pub fn state(&self, t: f64) -> (usize, Vec<f64>) {
        interpolate(&self.samples, t)
    }

    pub fn state_exact(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        let flow = Flow { m: &self.m, transport: &NoTransport };
        exact_state(&flow, &self.samples, 0.0, t, &self.opts)
    }

    pub fn point(&self, t: f64) -> Point {
        let n = self.dim();
        let (chart, y) = self.state(t);
        Point { chart, x: y[..n].to_vec() }
    }

    pub fn velocity(&self, t: f64) -> Vec<f64> {
        let n = self.dim();
        self.state(t).1[n..2 * n].to_vec()
    }

    /// Normal frame `E₁ … E_{n−1}` at `t`.
    pub fn frame(&self, t: f64) -> Vec<Vec<f64>> {
        let n = self.dim();
        let (_, y) = self.state(t);
        (1..n).map(|b| y[n + b * n..n + (b + 1) * n].to_vec()).collect()
    }

    /// Largest deviation of `|γ̇|_g` from 1 over the samples.
    pub fn speed_drift(&self) -> f64 {
        let n = self.dim();
        self.samples
            .iter()
            .map(|s| (self.m.norm(&s.y[..n], &s.y[n..2 * n]) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest deviation of the Gram matrix of `{γ̇, E_i}` from the identity.
    pub fn frame_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for s in &self.samples {
            let x = &s.y[..n];
            for a in 0..n {
                for b in a..n {
                    let u = &s.y[n + a * n..n + (a + 1) * n];
                    let w = &s.y[n + b * n..n + (b + 1) * n];
                    let want = if a == b { 1.0 } else { 0.0 };
                    worst = worst.max((self.m.inner(x, u, w) - want).abs());
                }
            }
        }
        worst
    }

    /// Writes `t, chart, x…, v…, e1_…` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "chart".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..n).map(|i| format!("v{i}")));
        for b in 1..n {
            header.extend((0..n).map(|i| format!("e{b}_{i}")));
        }
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![fmt(s.t), s.chart.to_string()];
            row.extend(s.y[..n * (n + 1)].iter().map(|v| fmt(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Per-sample orthonormal frames `{γ̇, E₁, …}`; fails if orthonormality has
/// drifted by more than `1e-6`.
pub fn parallel_frame(path: &GeodesicPath) -> Result<Vec<(f64, Vec<Vec<f64>>)>> {
    let defect = path.frame_defect();
    if defect > 1e-6 {
        return Err(Error::Accuracy(format!("frame drifted from orthonormal by {defect:e}")));
    }
    let n = path.dim();
    Ok(path
        .samples
        .iter()
        .map(|s| (s.t, (0..n).map(|b| s.y[n + b * n..n + (b + 1) * n].to_vec()).collect()))
        .collect())
}

/// All passes of a flat-model geodesic near `x`: `(t, y)` with `t` in
/// `window` and `|y| < radius`, over every periodic image of `x`.
pub fn flat_fermi_passes(path: &GeodesicPath, x: &[f64], window: (f64, f64), radius: f64) -> Vec<(f64, Vec<f64>)> {
    let m = &path.m;
    let n = m.dim();
    let o = path.origin_sample();
    let x0 = &o.y[..n];
    let v = &o.y[n..2 * n];
    let frame: Vec<&[f64]> = (1..n).map(|b| &o.y[n + b * n..n + (b + 1) * n]).collect();
    let (t_lo, t_hi) = window;
    // coordinate bounding box of the segment, widened by the radius
    let mut ranges = Vec::with_capacity(n);
    for i in 0..n {
        let a = x0[i] + t_lo * v[i];
        let b = x0[i] + t_hi * v[i];
        let (lo, hi) = (a.min(b) - radius, a.max(b) + radius);
        ranges.push(match m.periods()[i] {
            Some(p) => {
                let kmin = ((lo - x[i]) / p).ceil() as i64;
                let kmax = ((hi - x[i]) / p).floor() as i64;
                (kmin, kmax.max(kmin - 1), p)
            }
            None => (0, 0, 0.0),
        });
    }
    let mut out = Vec::new();
    let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    if ranges.iter().any(|r| r.1 < r.0) {
        return out;
    }
    loop {
        let img: Vec<f64> = (0..n).map(|i| x[i] + idx[i] as f64 * ranges[i].2 - x0[i]).collect();
        let t: f64 = img.iter().zip(v).map(|(a, b)| a * b).sum();
        if t >= t_lo && t <= t_hi {
            let y: Vec<f64> = frame.iter().map(|e| img.iter().zip(e.iter()).map(|(a, b)| a * b).sum()).collect();
            if y.iter().map(|c| c * c).sum::<f64>() < radius * radius {
                out.push((t, y));
            }
        }
        let mut k = 0;
        loop {
            if k == n {
                return out;
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

/// `exp_{γ(t)}(Σ yᵢ Eᵢ(t))`.
pub fn fermi_point(path: &GeodesicPath, t: f64, y: &[f64]) -> Result<Point> {
    let m = &path.m;
    let n = m.dim();
    if y.len() != n - 1 {
        return Err(Error::Precondition(format!("expected {} normal coordinates", n - 1)));
    }
    let (chart, st) = path.state(t);
    let base = &st[..n];
    let mut w = vec![0.0; n];
    for (b, yb) in y.iter().enumerate() {
        for i in 0..n {
            w[i] += yb * st[n + (b + 1) * n + i];
        }
    }
    let len = y.iter().map(|c| c * c).sum::<f64>().sqrt();
    if len == 0.0 {
        return Ok(Point { chart, x: base.to_vec() });
    }
    if m.is_flat() {
        let x = base.iter().zip(&w).map(|(a, b)| a + b).collect();
        return Ok(Point { chart, x });
    }
    shoot(m, chart, base, &w.iter().map(|c| c / len).collect::<Vec<_>>(), len, &path.opts)
}

/// End point of the geodesic from `x` with unit velocity `u` after time `len`,
/// in the natural extension.
pub fn shoot(m: &ChartedManifold, chart: usize, x: &[f64], u: &[f64], len: f64, opts: &OdeOptions) -> Result<Point> {
    let n = m.dim();
    let mut y0 = x.to_vec();
    y0.extend_from_slice(u);
    // the flow always carries a frame; its content does not matter here
    for e in complete_frame(m, x, u) {
        y0.extend_from_slice(&e);
    }
    let flow = Flow { m, transport: &NoTransport };
    let run = run_flow(&flow, chart, 0.0, &y0, len, &[], false, false, opts)?;
    let s = run.samples.last().expect("sample");
    Ok(Point { chart: s.chart, x: s.y[..n].to_vec() })
}

/// Fermi coordinates `(t, y)` of `x` relative to `path`, restricted to
/// `t ∈ window`.
pub fn fermi_coordinates(path: &GeodesicPath, x: &Point, window: (f64, f64)) -> Result<(f64, Vec<f64>)> {
    let m = &path.m;
    let n = m.dim();
    let inj = m.injectivity_radius();
    let limit = if inj.is_finite() { inj / 2.0 } else { f64::INFINITY };
    if m.is_flat() {
        let r = if limit.is_finite() { limit } else { 1e300 };
        let passes = flat_fermi_passes(path, &x.x, window, r);
        return passes
            .into_iter()
            .min_by(|a, b| {
                let na: f64 = a.1.iter().map(|c| c * c).sum();
                let nb: f64 = b.1.iter().map(|c| c * c).sum();
                na.partial_cmp(&nb).unwrap_or(std::cmp::Ordering::Equal)
            })
            .ok_or_else(|| Error::Domain("point is outside the Fermi tube of the geodesic".into()));
    }
    let target = m.embed(x.chart, &x.x);
    let dist = |p: &Point| -> f64 {
        m.embed(p.chart, &p.x)
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    // starting guess: nearest sample in the window
    let mut t = f64::NAN;
    let mut best = f64::INFINITY;
    for s in &path.samples {
        if s.t < window.0 || s.t > window.1 {
            continue;
        }
        let d = dist(&Point { chart: s.chart, x: s.y[..n].to_vec() });
        if d < best {
            best = d;
            t = s.t;
        }
    }
    if !t.is_finite() {
        return Err(Error::Domain("window contains no part of the geodesic".into()));
    }
    let mut p = vec![0.0; n];
    p[0] = t;
    let residual = |p: &[f64]| -> Result<Vec<f64>> {
        let q = fermi_point(path, p[0], &p[1..])?;
        Ok(m.embed(q.chart, &q.x).iter().zip(&target).map(|(a, b)| a - b).collect())
    };
    let mut r = residual(&p)?;
    let norm = |r: &[f64]| r.iter().map(|c| c * c).sum::<f64>().sqrt();
    for _ in 0..60 {
        if norm(&r) < 1e-12 {
            break;
        }
        let h = 1e-6;
        let mut jac = DMatrix::zeros(r.len(), n);
        for j in 0..n {
            let mut pp = p.clone();
            pp[j] += h;
            let rp = residual(&pp)?;
            pp[j] -= 2.0 * h;
            let rm = residual(&pp)?;
            for i in 0..r.len() {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let jt = jac.transpose();
        let Some(step) = (&jt * &jac).try_inverse().map(|inv| inv * (&jt * DVector::from_vec(r.clone()))) else {
            return Err(Error::Domain("Fermi coordinate Jacobian is singular".into()));
        };
        let mut lam = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let cand: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a - lam * b).collect();
            let rc = residual(&cand)?;
            if norm(&rc) < norm(&r) {
                p = cand;
                r = rc;
                improved = true;
                break;
            }
            lam *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if norm(&r) > 1e-8 {
        return Err(Error::Domain(format!("Fermi coordinates did not converge (residual {:e})", norm(&r))));
    }
    let ylen = p[1..].iter().map(|c| c * c).sum::<f64>().sqrt();
    if ylen >= limit || p[0] < window.0 - 1e-9 || p[0] > window.1 + 1e-9 {
        return Err(Error::Domain("point is outside the Fermi tube of the geodesic".into()));
    }
    Ok((p[0], p[1..].to_vec()))
}
