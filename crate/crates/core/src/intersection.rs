//! Pairs of geodesics meeting at a single interior point: witness search,
//! the separation constant `c₀`, the local distance lower bound and the
//! direction perturbation that removes extra intersections.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geodesic::{complete_frame, direction_grid, fibonacci_sphere, integrate_geodesic, GeodesicOptions, GeodesicPath};
use crate::jacobi::{jacobi_along, order_of_conjugacy};
use crate::manifold::{chord_to_arc, ChartedManifold, Mat, ModelTag, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Flat,
    Sphere,
}

fn kind(m: &ChartedManifold) -> Result<Kind> {
    match m.tag() {
        ModelTag::EuclideanDisc { .. } | ModelTag::FlatCylinder { .. } | ModelTag::FlatTorus { .. } => Ok(Kind::Flat),
        ModelTag::RoundSphere { .. } | ModelTag::SpherePolarPatch => Ok(Kind::Sphere),
        ModelTag::Custom => Err(Error::Capability("intersection geometry needs a closed-form distance".into())),
    }
}

/// Path sampled on the grid `t = k·h` (anchored at the intersection, so
/// halving `h` gives a superset).
#[derive(Debug, Clone)]
struct Track {
    t: Vec<f64>,
    p: Vec<Vec<f64>>,
}

fn track(path: &GeodesicPath, lo: f64, hi: f64, h: f64, kind: Kind) -> Track {
    let m = path.manifold();
    let k0 = (lo / h).ceil() as i64;
    let k1 = (hi / h).floor() as i64;
    let mut t = Vec::with_capacity((k1 - k0 + 1).max(0) as usize);
    let mut p = Vec::with_capacity(t.capacity());
    for k in k0..=k1 {
        let s = k as f64 * h;
        let q = path.point(s);
        p.push(match kind {
            Kind::Flat => q.x,
            Kind::Sphere => m.embed(q.chart, &q.x),
        });
        t.push(s);
    }
    Track { t, p }
}

struct Dist<'a> {
    kind: Kind,
    periods: &'a [Option<f64>],
}

impl Dist<'_> {
    fn new(m: &ChartedManifold) -> Result<Dist<'_>> {
        Ok(Dist { kind: kind(m)?, periods: m.periods() })
    }

    fn d(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            Kind::Sphere => chord_to_arc(a, b),
            Kind::Flat => {
                let mut s = 0.0;
                for i in 0..a.len() {
                    let mut d = b[i] - a[i];
                    if let Some(p) = self.periods[i] {
                        d -= p * (d / p).round();
                    }
                    s += d * d;
                }
                s.sqrt()
            }
        }
    }
}

fn point_key(m: &ChartedManifold, p: &Point, kind: Kind) -> Vec<f64> {
    match kind {
        Kind::Flat => p.x.clone(),
        Kind::Sphere => m.embed(p.chart, &p.x),
    }
}

/// Minimum of `d(a(t), b(τ))` over grid pairs not rejected by `skip`.
fn grid_min(dist: &Dist, a: &Track, b: &Track, skip: impl Fn(f64, f64) -> bool) -> (f64, f64, f64) {
    let mut best = (f64::INFINITY, f64::NAN, f64::NAN);
    for (i, pa) in a.p.iter().enumerate() {
        for (j, pb) in b.p.iter().enumerate() {
            if skip(a.t[i], b.t[j]) {
                continue;
            }
            let d = dist.d(pa, pb);
            if d < best.0 {
                best = (d, a.t[i], b.t[j]);
            }
        }
    }
    best
}

fn self_min(dist: &Dist, a: &Track, x0: &[f64], r: f64) -> f64 {
    a.t.iter()
        .zip(&a.p)
        .filter(|(t, _)| t.abs() > r)
        .map(|(_, p)| dist.d(p, x0))
        .fold(f64::INFINITY, f64::min)
}

/// Acute intersection angle `θ ∈ [0, π/2]` from `cos θ = |g(u, w)|`.
pub fn acute_angle(m: &ChartedManifold, x: &[f64], u: &[f64], w: &[f64]) -> f64 {
    m.inner(x, u, w).abs().min(1.0).acos()
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessOptions {
    /// Direction count (default 360 in two dimensions, 256 otherwise).
    pub directions: Option<usize>,
    pub t_max: Option<f64>,
    /// Grid spacing as a fraction of the shorter geodesic.
    pub grid_fraction: f64,
    /// Off-region minima must exceed this multiple of the grid spacing.
    pub separation: f64,
    /// Accept geodesics that do not reach `∂M` (their cutoff windows are used).
    pub allow_trapped: bool,
    pub max_pairs: usize,
}

impl Default for WitnessOptions {
    fn default() -> Self {
        WitnessOptions {
            directions: None,
            t_max: None,
            grid_fraction: 1e-2,
            separation: 10.0,
            allow_trapped: false,
            max_pairs: 4000,
        }
    }
}

/// Outcome of sampling one pair of geodesics through `x₀`.
#[derive(Debug, Clone, Serialize)]
pub struct PairCheck {
    pub theta: f64,
    pub grid: f64,
    /// Exclusion radius around the intersection parameters.
    pub r_excl: f64,
    pub off_min: f64,
    pub off_at: (f64, f64),
    pub self_min: f64,
    pub non_tangential: bool,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct GeodesicPairWitness {
    pub gamma: GeodesicPath,
    pub eta: GeodesicPath,
    pub x0: Point,
    pub t0: f64,
    pub tau0: f64,
    pub theta: f64,
    pub lengths: [f64; 2],
    pub check: PairCheck,
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessSummary {
    pub x0: Vec<f64>,
    pub gamma_direction: Vec<f64>,
    pub eta_direction: Vec<f64>,
    pub theta: f64,
    pub lengths: [f64; 2],
    pub grid: f64,
    pub off_min: f64,
}

impl GeodesicPairWitness {
    pub fn summary(&self) -> WitnessSummary {
        WitnessSummary {
            x0: self.x0.x.clone(),
            gamma_direction: self.gamma.velocity(0.0),
            eta_direction: self.eta.velocity(0.0),
            theta: self.theta,
            lengths: self.lengths,
            grid: self.check.grid,
            off_min: self.check.off_min,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NearMiss {
    pub directions: (Vec<f64>, Vec<f64>),
    pub theta: f64,
    pub off_min: f64,
    pub off_at: (f64, f64),
    pub self_min: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessFailure {
    pub x0: Vec<f64>,
    pub candidates: usize,
    pub pairs_tried: usize,
    pub near_misses: Vec<NearMiss>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub enum HCheck {
    Witness(Box<GeodesicPairWitness>),
    Failure(WitnessFailure),
}

impl HCheck {
    pub fn witness(&self) -> Option<&GeodesicPairWitness> {
        match self {
            HCheck::Witness(w) => Some(w),
            HCheck::Failure(_) => None,
        }
    }
}

fn path_window(p: &GeodesicPath) -> (f64, f64) {
    p.span()
}

/// Samples the pair `(γ, η)`, both with parameter 0 at `x₀`.
pub fn validate_pair(gamma: &GeodesicPath, eta: &GeodesicPath, opts: &WitnessOptions) -> Result<PairCheck> {
    let m = gamma.manifold();
    let dist = Dist::new(m)?;
    let x0 = gamma.point(0.0);
    let theta = acute_angle(m, &x0.x, &gamma.velocity(0.0), &eta.velocity(0.0));
    let (ga, gb) = path_window(gamma);
    let (ea, eb) = path_window(eta);
    let h = opts.grid_fraction * (gb - ga).min(eb - ea);
    if !(h > 0.0) {
        return Err(Error::Degenerate("geodesic of zero length".into()));
    }
    let non_tangential = gamma.is_non_tangential() && eta.is_non_tangential();
    if theta < 1e-9 {
        return Ok(PairCheck {
            theta,
            grid: h,
            r_excl: f64::INFINITY,
            off_min: 0.0,
            off_at: (0.0, 0.0),
            self_min: 0.0,
            non_tangential,
            accepted: false,
        });
    }
    let r_excl = (0.999 * m.injectivity_radius() / 2.0).min(2.0 * opts.separation * h / theta.sin());
    let a = track(gamma, ga, gb, h, dist.kind);
    let b = track(eta, ea, eb, h, dist.kind);
    let (off_min, t, tau) = grid_min(&dist, &a, &b, |t, tau| t.abs() <= r_excl && tau.abs() <= r_excl);
    let key = point_key(m, &x0, dist.kind);
    let s = self_min(&dist, &a, &key, r_excl).min(self_min(&dist, &b, &key, r_excl));
    let bar = opts.separation * h;
    let accepted = (non_tangential || opts.allow_trapped) && off_min > bar && s > bar;
    Ok(PairCheck {
        theta,
        grid: h,
        r_excl,
        off_min,
        off_at: (t, tau),
        self_min: s,
        non_tangential,
        accepted,
    })
}

fn geodesic_opts(t_max: Option<f64>) -> GeodesicOptions {
    GeodesicOptions { t_max, ..Default::default() }
}

/// Builds the pair through `x₀` with directions `u`, `w`, reversing `w` when
/// needed for an acute angle.
pub fn pair_through(m: &ChartedManifold, x0: &Point, u: &[f64], w: &[f64], t_max: Option<f64>) -> Result<(GeodesicPath, GeodesicPath)> {
    let w: Vec<f64> = if m.inner(&x0.x, u, w) < 0.0 { w.iter().map(|c| -c).collect() } else { w.to_vec() };
    let o = geodesic_opts(t_max);
    Ok((integrate_geodesic(m, x0, u, &o)?, integrate_geodesic(m, x0, &w, &o)?))
}

fn witness_from(gamma: GeodesicPath, eta: GeodesicPath, check: PairCheck) -> GeodesicPairWitness {
    let x0 = gamma.point(0.0);
    GeodesicPairWitness {
        lengths: [gamma.span().1 - gamma.span().0, eta.span().1 - eta.span().0],
        theta: check.theta,
        gamma,
        eta,
        x0,
        t0: 0.0,
        tau0: 0.0,
        check,
    }
}

/// Searches direction pairs at `x₀` (widest angles first) for two geodesics
/// meeting only at `x₀`.
pub fn check_h_at_point(m: &ChartedManifold, x0: &Point, opts: &WitnessOptions) -> Result<HCheck> {
    kind(m)?;
    if m.boundary_fn(&x0.x) <= 0.0 && !m.is_closed() {
        return Err(Error::Domain(format!("x₀ = {:?} is not interior", x0.x)));
    }
    let n = m.dim();
    let count = opts.directions.unwrap_or(if n == 2 { 360 } else { 256 });
    let mut dirs = direction_grid(m, &x0.x, count);
    if n == 2 {
        // v and −v give the same geodesic
        dirs.truncate(count.div_ceil(2));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let c = m.inner(&x0.x, &dirs[i], &dirs[j]).abs();
            pairs.push((c, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut cache: Vec<Option<GeodesicPath>> = vec![None; dirs.len()];
    let mut usable: Vec<Option<bool>> = vec![None; dirs.len()];
    let get = |k: usize, cache: &mut Vec<Option<GeodesicPath>>| -> Result<GeodesicPath> {
        if cache[k].is_none() {
            cache[k] = Some(integrate_geodesic(m, x0, &dirs[k], &geodesic_opts(opts.t_max))?);
        }
        Ok(cache[k].clone().expect("cached"))
    };
    let mut near: Vec<NearMiss> = Vec::new();
    let mut tried = 0;
    for &(_, i, j) in &pairs {
        if tried >= opts.max_pairs {
            break;
        }
        let mut ok = true;
        for k in [i, j] {
            if usable[k].is_none() {
                let p = get(k, &mut cache)?;
                usable[k] = Some(opts.allow_trapped || p.is_non_tangential());
            }
            ok &= usable[k] == Some(true);
        }
        if !ok {
            continue;
        }
        tried += 1;
        let g = get(i, &mut cache)?;
        let mut e = get(j, &mut cache)?;
        if m.inner(&x0.x, &g.velocity(0.0), &e.velocity(0.0)) < 0.0 {
            let w: Vec<f64> = dirs[j].iter().map(|c| -c).collect();
            e = integrate_geodesic(m, x0, &w, &geodesic_opts(opts.t_max))?;
        }
        let check = validate_pair(&g, &e, opts)?;
        if check.accepted {
            return Ok(HCheck::Witness(Box::new(witness_from(g, e, check))));
        }
        near.push(NearMiss {
            directions: (dirs[i].clone(), dirs[j].clone()),
            theta: check.theta,
            off_min: check.off_min,
            off_at: check.off_at,
            self_min: check.self_min,
        });
    }
    near.sort_by(|a, b| b.off_min.min(b.self_min).total_cmp(&a.off_min.min(a.self_min)));
    near.truncate(5);
    let candidates = usable.iter().filter(|u| **u == Some(true)).count();
    let reason = if candidates < 2 && tried == 0 {
        "fewer than two usable (non-tangential) geodesics through x₀".to_string()
    } else {
        format!("no sampled pair separates beyond {}× the grid spacing", opts.separation)
    };
    Ok(HCheck::Failure(WitnessFailure {
        x0: x0.x.clone(),
        candidates,
        pairs_tried: tried,
        near_misses: near,
        reason,
    }))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct C0Estimate {
    pub c0: f64,
    pub at: (f64, f64),
    pub pairs: usize,
    pub grid: f64,
    pub r: f64,
}

/// `c₀ = max (max(|t − t₀|, |τ − τ₀|) / d(γ(t), η(τ)))` over grid pairs with
/// `0 < d < r`, on the grid of spacing `h` (the witness grid by default).
pub fn estimate_c0(w: &GeodesicPairWitness, r: f64, h: Option<f64>) -> Result<C0Estimate> {
    let m = w.gamma.manifold();
    if !(r > 0.0 && r < m.injectivity_radius() / 2.0) {
        return Err(Error::Precondition(format!("r = {r} must lie in (0, Inj/2)")));
    }
    let dist = Dist::new(m)?;
    let h = h.unwrap_or(w.check.grid);
    let (ga, gb) = path_window(&w.gamma);
    let (ea, eb) = path_window(&w.eta);
    let a = track(&w.gamma, ga, gb, h, dist.kind);
    let b = track(&w.eta, ea, eb, h, dist.kind);
    let mut best = C0Estimate { c0: 0.0, at: (0.0, 0.0), pairs: 0, grid: h, r };
    for (i, pa) in a.p.iter().enumerate() {
        for (j, pb) in b.p.iter().enumerate() {
            let d = dist.d(pa, pb);
            if d >= r || d < 1e-13 {
                continue;
            }
            best.pairs += 1;
            let q = (a.t[i] - w.t0).abs().max((b.t[j] - w.tau0).abs()) / d;
            if q > best.c0 {
                best.c0 = q;
                best.at = (a.t[i], b.t[j]);
            }
        }
    }
    if best.pairs == 0 {
        return Err(Error::Degenerate(format!("no grid pair within distance {r}")));
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeparationReport {
    pub c: f64,
    pub at: (f64, f64),
    pub theta: f64,
    pub rho: f64,
    pub grid: f64,
}

/// Empirical `C = min d(γ(t), η(τ)) / (|t| sin θ)` for geodesics through `x₀`
/// with directions `u` and `u` rotated by `θ`, over `t, τ ∈ (−ρ, ρ)`, `t ≠ 0`.
pub fn verify_separation(m: &ChartedManifold, x0: &Point, u: &[f64], theta: f64, rho: f64, h: f64) -> Result<SeparationReport> {
    let dist = Dist::new(m)?;
    if let Some(k) = m.constant_curvature() {
        if k > 0.0 && rho >= std::f64::consts::PI / k.sqrt() {
            return Err(Error::Precondition(format!("ρ = {rho} must be below π/√κ")));
        }
    }
    if !(theta > 0.0 && theta <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::Precondition("θ must lie in (0, π/2]".into()));
    }
    let e = &complete_frame(m, &x0.x, u)[0];
    let w: Vec<f64> = u.iter().zip(e).map(|(a, b)| theta.cos() * a + theta.sin() * b).collect();
    let o = GeodesicOptions {
        t_max: Some(rho),
        stop_at_boundary: false,
        ..Default::default()
    };
    let g = integrate_geodesic(m, x0, u, &o)?;
    let et = integrate_geodesic(m, x0, &w, &o)?;
    let inner = rho * (1.0 - 1e-12);
    let a = track(&g, -inner, inner, h, dist.kind);
    let b = track(&et, -inner, inner, h, dist.kind);
    let mut best = SeparationReport {
        c: f64::INFINITY,
        at: (0.0, 0.0),
        theta,
        rho,
        grid: h,
    };
    let s = theta.sin();
    for (i, pa) in a.p.iter().enumerate() {
        let t = a.t[i];
        if t == 0.0 {
            continue;
        }
        for (j, pb) in b.p.iter().enumerate() {
            let d = dist.d(pa, pb);
            if d <= 0.0 {
                return Err(Error::Geometry(format!("geodesics meet at t = {t}, τ = {}", b.t[j])));
            }
            let q = d / (t.abs() * s);
            if q < best.c {
                best.c = q;
                best.at = (t, b.t[j]);
            }
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// direction perturbation

#[derive(Debug, Clone, Serialize)]
pub struct PerturbOptions {
    pub steps: usize,
    /// `‖α‖` of the tangent perturbation on the direction sphere.
    pub alpha_norm: f64,
    /// Time window for the geodesics.
    pub window: f64,
    pub grid: f64,
    /// Directions sampled for the conjugacy order.
    pub conjugacy_directions: usize,
    /// Number of the largest `n` that are verified by sampling.
    pub verify_last: usize,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        PerturbOptions {
            steps: 8,
            alpha_norm: 0.3,
            window: 3.0,
            grid: 1e-2,
            conjugacy_directions: 24,
            verify_last: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PerturbStatus {
    /// Every verified `γ_{x,v_n}` misses `γ_{x,u}` away from `x`.
    Success,
    /// Conjugacy order at `x` exceeds `n − 3`.
    HypothesisViolated,
    /// Every sampled `α` lies in some blocked plane.
    Blocked,
    /// `n = 2`: the blocked planes fill the tangent space of the direction
    /// circle; the perturbation only moves intersections.
    LowDimension,
    /// A perturbation was chosen but sampling still finds intersections.
    Unverified,
}

#[derive(Debug, Clone, Serialize)]
pub struct Intersection {
    pub t: f64,
    pub r: f64,
    pub residual: f64,
    /// Dimension of the blocked subspace of `T_v S_x M`.
    pub blocked_dim: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbCheck {
    pub n: usize,
    pub off_min: f64,
    pub self_min: f64,
    /// Distance from `γ_{x,v_n}` to the old intersection points.
    pub old_points_min: f64,
    pub grid: f64,
    pub clear: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbReport {
    pub status: PerturbStatus,
    pub conjugacy_order: Option<usize>,
    pub intersections: Vec<Intersection>,
    /// `α` in the frame `E₁ … E_{n−1}` at `x` (unit; scaled by `alpha_norm`).
    pub alpha: Vec<f64>,
    pub min_angle: f64,
    pub directions: Vec<Vec<f64>>,
    pub distance_to_v: Vec<f64>,
    pub checks: Vec<PerturbCheck>,
}

/// Ambient difference `b − a` for Gauss–Newton refinement.
fn delta(dist: &Dist, a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|i| {
            let mut d = b[i] - a[i];
            if dist.kind == Kind::Flat {
                if let Some(p) = dist.periods[i] {
                    d -= p * (d / p).round();
                }
            }
            d
        })
        .collect()
}

fn refine(m: &ChartedManifold, dist: &Dist, gv: &GeodesicPath, gu: &GeodesicPath, t: f64, r: f64) -> (f64, f64, f64) {
    let key = |p: &GeodesicPath, s: f64| point_key(m, &p.point(s), dist.kind);
    let (mut t, mut r) = (t, r);
    let eps = 1e-6;
    for _ in 0..30 {
        let f = delta(dist, &key(gu, r), &key(gv, t));
        let ft: Vec<f64> = delta(dist, &key(gv, t - eps), &key(gv, t + eps)).iter().map(|c| c / (2.0 * eps)).collect();
        let fr: Vec<f64> = delta(dist, &key(gu, r + eps), &key(gu, r - eps)).iter().map(|c| c / (2.0 * eps)).collect();
        let k = f.len();
        let jac = Mat::from_fn(k, 2, |i, j| if j == 0 { ft[i] } else { fr[i] });
        let rhs = DVector::from_vec(f.iter().map(|c| -c).collect());
        let jt = jac.transpose();
        let Some(step) = (&jt * &jac).try_inverse().map(|inv| inv * (jt * rhs)) else {
            break;
        };
        t += step[0];
        r += step[1];
        if step.norm() < 1e-13 {
            break;
        }
    }
    let d = dist.d(&key(gv, t), &key(gu, r));
    (t, r, d)
}

/// Velocity `w` at chart point `x` expressed in chart `to`.
fn vector_in_chart(m: &ChartedManifold, from: usize, x: &[f64], w: &[f64], to: usize) -> (Vec<f64>, Vec<f64>) {
    if from == to {
        return (x.to_vec(), w.to_vec());
    }
    match m.chart_transition(from, x) {
        Some((_, y, jac)) => {
            let v = &jac * DVector::from_column_slice(w);
            (y, v.as_slice().to_vec())
        }
        None => (x.to_vec(), w.to_vec()),
    }
}

fn orthonormalize(vs: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vs {
        let mut w = DVector::from_column_slice(v);
        let n0 = w.norm();
        for b in &out {
            let c = b.dot(&w);
            w -= b * c;
        }
        let nw = w.norm();
        if nw > 1e-8 * n0.max(1e-300) && nw > 1e-12 {
            out.push(w / nw);
        }
    }
    out
}

fn sphere_candidates(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..360)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 360.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => fibonacci_sphere(256),
        _ => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xa1fa);
            (0..512)
                .map(|_| {
                    let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let s = u.iter().map(|c| c * c).sum::<f64>().sqrt();
                    u.iter().map(|c| c / s).collect()
                })
                .collect()
        }
    }
}

/// Numerical version of the direction-perturbation argument: blocked planes
/// from `d(exp_x)` at every detected intersection, `α` chosen to maximise the
/// smallest principal angle to them, `v_n = cos(‖α‖/n) v + sin(‖α‖/n) α̂`.
pub fn perturb_direction_avoid(m: &ChartedManifold, x: &Point, u: &[f64], v: &[f64], opts: &PerturbOptions) -> Result<PerturbReport> {
    let dist = Dist::new(m)?;
    let n = m.dim();
    for w in [u, v] {
        if (m.norm(&x.x, w) - 1.0).abs() > 1e-8 {
            return Err(Error::Precondition("u and v must be unit vectors".into()));
        }
    }
    if acute_angle(m, &x.x, u, v) < 1e-9 {
        return Err(Error::Precondition("u and v must be distinct directions (u ≠ ±v)".into()));
    }
    let mut report = PerturbReport {
        status: PerturbStatus::Success,
        conjugacy_order: None,
        intersections: Vec::new(),
        alpha: Vec::new(),
        min_angle: 0.0,
        directions: Vec::new(),
        distance_to_v: Vec::new(),
        checks: Vec::new(),
    };
    if n >= 3 {
        // conjugate points may lie beyond the intersection window
        let cap = opts.window.max(1.25 * m.diameter());
        let order = order_of_conjugacy(m, x, opts.conjugacy_directions, cap)?;
        report.conjugacy_order = Some(order);
        if order > n - 3 {
            report.status = PerturbStatus::HypothesisViolated;
            return Ok(report);
        }
    }
    let gopts = geodesic_opts(Some(opts.window));
    let gu = integrate_geodesic(m, x, u, &gopts)?;
    let gv = integrate_geodesic(m, x, v, &gopts)?;
    let h = opts.grid;
    let theta = acute_angle(m, &x.x, u, v);
    let r_excl = 20.0 * h / theta.sin();
    let (ua, ub) = gu.span();
    let (va, vb) = gv.span();
    let tu = track(&gu, ua, ub, h, dist.kind);
    let tv = track(&gv, va, vb, h, dist.kind);

    // candidate intersections: grid local minima below 2h, then refined
    let nu = tu.t.len();
    let nv = tv.t.len();
    let mut dmat = vec![f64::INFINITY; nu * nv];
    for i in 0..nv {
        for j in 0..nu {
            dmat[i * nu + j] = dist.d(&tv.p[i], &tu.p[j]);
        }
    }
    let mut found: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..nv {
        for j in 0..nu {
            let d = dmat[i * nu + j];
            // every geodesic from x meets γ_u at x itself
            if d > 2.0 * h || tv.t[i].abs() <= r_excl {
                continue;
            }
            let mut is_min = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= nv as i64 || b >= nu as i64 {
                        continue;
                    }
                    if dmat[a as usize * nu + b as usize] < d {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if !is_min {
                continue;
            }
            let (t, r, res) = refine(m, &dist, &gv, &gu, tv.t[i], tu.t[j]);
            if res < 1e-6 && !found.iter().any(|f| (f.0 - t).abs() < 5.0 * h && (f.1 - r).abs() < 5.0 * h) {
                found.push((t, r, res));
            }
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // blocked subspaces of T_v S_x M (frame coordinates at x)
    let mut blocked: Vec<Vec<DVector<f64>>> = Vec::new();
    for &(t, r, res) in &found {
        let sol = jacobi_along(&gv, Some(t))?;
        let b = sol.exact(t)?.b;
        let (cv, yv) = gv.state(t);
        let (cu, yu) = gu.state(r);
        let (_, wu) = vector_in_chart(m, cu, &yu[..n], &yu[n..2 * n], cv);
        let xq = &yv[..n];
        let mut w = vec![m.inner(xq, &wu, &yv[n..2 * n])];
        for k in 1..n {
            w.push(m.inner(xq, &wu, &yv[n + k * n..n + (k + 1) * n]));
        }
        let svd = b.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let v_t = svd.v_t.as_ref().expect("v_t");
        let mut span: Vec<Vec<f64>> = Vec::new();
        for (k, s) in svd.singular_values.iter().enumerate() {
            if *s < 1e-4 * smax {
                span.push(v_t.row(k).iter().copied().collect());
            }
        }
        // particular preimage of γ̇_u: t·B⁺ w on the normal block
        let pinv = svd.pseudo_inverse(1e-4 * smax).map_err(|e| Error::Numerical(e.to_string()))?;
        let wr = DVector::from_column_slice(&w[1..]);
        let xi = pinv * wr * t;
        span.push(xi.as_slice().to_vec());
        let basis = orthonormalize(&span);
        report.intersections.push(Intersection { t, r, residual: res, blocked_dim: basis.len() });
        blocked.push(basis);
    }

    let cands = sphere_candidates(n - 1);
    let angle_to = |a: &DVector<f64>, s: &[DVector<f64>]| -> f64 {
        let p2: f64 = s.iter().map(|b| b.dot(a).powi(2)).sum();
        p2.sqrt().min(1.0).acos()
    };
    let mut best = (-1.0, 0usize);
    for (k, c) in cands.iter().enumerate() {
        let a = DVector::from_column_slice(c);
        let score = blocked.iter().map(|s| angle_to(&a, s)).fold(std::f64::consts::FRAC_PI_2, f64::min);
        if score > best.0 + 1e-12 {
            best = (score, k);
        }
    }
    report.alpha = cands[best.1].clone();
    report.min_angle = best.0;
    if n == 2 {
        report.status = PerturbStatus::LowDimension;
    } else if best.0 < 1e-3 {
        report.status = PerturbStatus::Blocked;
        return Ok(report);
    }

    let frame = complete_frame(m, &x.x, v);
    let alpha_vec: Vec<f64> = (0..n).map(|i| (0..n - 1).map(|k| report.alpha[k] * frame[k][i]).sum()).collect();
    for k in 1..=opts.steps {
        let s = opts.alpha_norm / k as f64;
        let vn: Vec<f64> = (0..n).map(|i| s.cos() * v[i] + s.sin() * alpha_vec[i]).collect();
        let diff: Vec<f64> = vn.iter().zip(v).map(|(a, b)| a - b).collect();
        report.distance_to_v.push(m.norm(&x.x, &diff));
        report.directions.push(vn);
    }
    let key = point_key(m, x, dist.kind);
    let old: Vec<Vec<f64>> = found.iter().map(|f| point_key(m, &gv.point(f.0), dist.kind)).collect();
    let first = opts.steps.saturating_sub(opts.verify_last) + 1;
    let mut all_clear = true;
    for k in first..=opts.steps {
        let vn = m.normalize(&x.x, &report.directions[k - 1]);
        let g = integrate_geodesic(m, x, &vn, &gopts)?;
        let (a, b) = g.span();
        let tn = track(&g, a, b, h, dist.kind);
        let th = acute_angle(m, &x.x, u, &vn);
        let rx = 20.0 * h / th.sin();
        let (off, _, _) = grid_min(&dist, &tn, &tu, |t, _| t.abs() <= rx);
        let sm = self_min(&dist, &tn, &key, rx);
        let om = old
            .iter()
            .map(|q| tn.p.iter().map(|p| dist.d(p, q)).fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);
        let clear = off > 2.0 * h && sm > 2.0 * h;
        all_clear &= clear;
        report.checks.push(PerturbCheck {
            n: k,
            off_min: off,
            self_min: sm,
            old_points_min: om,
            grid: h,
            clear,
        });
    }
    if n >= 3 && !all_clear {
        report.status = PerturbStatus::Unverified;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// cylinder construction and surveys

/// Largest helix angle (from the vertical) whose full crossing of the
/// cylinder `S¹ × [0, a]` turns by at most half a revolution, found by
/// bisection on integrated geodesics.
pub fn cylinder_half_turn_angle(m: &ChartedManifold) -> Result<f64> {
    let ModelTag::FlatCylinder { a } = *m.tag() else {
        return Err(Error::Capability("cylinder construction needs the flat cylinder".into()));
    };
    let x = Point::new(vec![std::f64::consts::PI, a / 2.0]);
    let turn = |th: f64| -> Result<f64> {
        let p = integrate_geodesic(m, &x, &[th.sin(), th.cos()], &GeodesicOptions::default())?;
        let (lo, hi) = p.span();
        Ok(p.point(hi).x[0] - p.point(lo).x[0])
    };
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2 - 1e-9);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if turn(mid)? <= std::f64::consts::PI {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Vertical geodesic and helix at angle `θ` through `x₀`.
pub fn cylinder_pair(m: &ChartedManifold, x0: &Point, theta: f64) -> Result<(GeodesicPath, GeodesicPath)> {
    let o = GeodesicOptions::default();
    Ok((integrate_geodesic(m, x0, &[0.0, 1.0], &o)?, integrate_geodesic(m, x0, &[theta.sin(), theta.cos()], &o)?))
}

/// Largest violation of `d ≥ sin θ · max(|t|, |τ|)` over the witness grid
/// (parameters measured from the intersection).
pub fn cylinder_bound_violation(w: &GeodesicPairWitness) -> Result<f64> {
    let m = w.gamma.manifold();
    let dist = Dist::new(m)?;
    let h = w.check.grid;
    let (ga, gb) = w.gamma.span();
    let (ea, eb) = w.eta.span();
    let a = track(&w.gamma, ga, gb, h, dist.kind);
    let b = track(&w.eta, ea, eb, h, dist.kind);
    let s = w.theta.sin();
    let mut worst = f64::NEG_INFINITY;
    for (i, pa) in a.p.iter().enumerate() {
        for (j, pb) in b.p.iter().enumerate() {
            let bound = s * a.t[i].abs().max(b.t[j].abs());
            worst = worst.max(bound - dist.d(pa, pb));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct SurveyPoint {
    pub index: usize,
    pub x: Vec<f64>,
    pub on_boundary: bool,
    pub witness: bool,
    pub theta: Vec<f64>,
    pub max_length: f64,
    pub c0: f64,
    pub off_min: f64,
    pub bound_violation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CylinderConstants {
    pub a: f64,
    pub half_turn_angle: f64,
    pub theta0: f64,
    pub theta0_formula: f64,
    pub t_formula: f64,
    pub c0_formula: f64,
    pub r_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct H1Survey {
    pub model: String,
    pub points: Vec<SurveyPoint>,
    pub t: f64,
    pub theta0: f64,
    pub r: f64,
    pub c0: f64,
    pub coverage: f64,
    pub incomplete: bool,
    pub max_bound_violation: Option<f64>,
    pub cylinder: Option<CylinderConstants>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SurveyOptions {
    pub witness: WitnessOptions,
    /// Helix angles per point on the cylinder, spread over `[θ₀, 2θ₀)`.
    pub angles: usize,
    pub r: Option<f64>,
}

impl Default for SurveyOptions {
    fn default() -> Self {
        SurveyOptions {
            witness: WitnessOptions::default(),
            angles: 8,
            r: None,
        }
    }
}

/// Runs the witness check and `c₀` estimate at every sample point and
/// aggregates `(T, θ₀, r, c₀)`.
pub fn h1_survey(m: &ChartedManifold, points: &[Point], opts: &SurveyOptions) -> Result<H1Survey> {
    kind(m)?;
    let inj = m.injectivity_radius();
    let r = opts.r.unwrap_or_else(|| (0.999 * inj / 2.0).min(0.5 * m.diameter()));
    let cyl = match *m.tag() {
        ModelTag::FlatCylinder { a } => {
            let half = cylinder_half_turn_angle(m)?;
            let th0 = half / 4.0;
            Some(CylinderConstants {
                a,
                half_turn_angle: half,
                theta0: th0,
                theta0_formula: 0.25 * (std::f64::consts::PI / a).atan(),
                t_formula: a / (2.0 * th0).cos(),
                c0_formula: 1.0 / th0.sin(),
                r_bound: std::f64::consts::FRAC_PI_2,
            })
        }
        _ => None,
    };
    let mut out = Vec::with_capacity(points.len());
    for (index, x) in points.iter().enumerate() {
        let mut rec = SurveyPoint {
            index,
            x: x.x.clone(),
            on_boundary: false,
            witness: false,
            theta: Vec::new(),
            max_length: 0.0,
            c0: 0.0,
            off_min: f64::INFINITY,
            bound_violation: None,
        };
        if !m.is_closed() && m.boundary_fn(&x.x) <= 1e-12 {
            rec.on_boundary = true;
            out.push(rec);
            continue;
        }
        let mut witnesses: Vec<GeodesicPairWitness> = Vec::new();
        if let Some(c) = &cyl {
            let k = opts.angles.max(1);
            for j in 0..k {
                let th = c.theta0 * (1.0 + j as f64 / k as f64);
                let (g, e) = cylinder_pair(m, x, th)?;
                let check = validate_pair(&g, &e, &opts.witness)?;
                if !check.accepted {
                    witnesses.clear();
                    break;
                }
                witnesses.push(witness_from(g, e, check));
            }
        } else if let HCheck::Witness(w) = check_h_at_point(m, x, &opts.witness)? {
            witnesses.push(*w);
        }
        if !witnesses.is_empty() {
            rec.witness = true;
            for w in &witnesses {
                rec.theta.push(w.theta);
                rec.max_length = rec.max_length.max(w.lengths[0]).max(w.lengths[1]);
                rec.c0 = rec.c0.max(estimate_c0(w, r, None)?.c0);
                rec.off_min = rec.off_min.min(w.check.off_min);
                if cyl.is_some() {
                    let v = cylinder_bound_violation(w)?;
                    rec.bound_violation = Some(rec.bound_violation.map_or(v, |b: f64| b.max(v)));
                }
            }
        }
        out.push(rec);
    }
    let interior: Vec<&SurveyPoint> = out.iter().filter(|p| !p.on_boundary).collect();
    let good: Vec<&&SurveyPoint> = interior.iter().filter(|p| p.witness).collect();
    let coverage = if interior.is_empty() { 0.0 } else { good.len() as f64 / interior.len() as f64 };
    let t = good.iter().map(|p| p.max_length).fold(0.0, f64::max);
    let c0 = good.iter().map(|p| p.c0).fold(0.0, f64::max);
    let theta0 = good
        .iter()
        .flat_map(|p| p.theta.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let max_bound_violation = if cyl.is_some() {
        Some(good.iter().filter_map(|p| p.bound_violation).fold(f64::NEG_INFINITY, f64::max))
    } else {
        None
    };
    Ok(H1Survey {
        model: m.tag_name().to_string(),
        incomplete: good.len() < interior.len(),
        points: out,
        t,
        theta0,
        r,
        c0,
        coverage,
        max_bound_violation,
        cylinder: cyl,
    })
}

/// `count` seeded points uniformly distributed in the interior (rejection
/// sampling in the chart box, shrunk away from boundary faces by `margin`).
/// Round spheres are sampled uniformly by normalising points of the ambient
/// unit ball.
pub fn sample_interior(m: &ChartedManifold, count: usize, margin: f64, seed: u64) -> Vec<Point> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = m.box_bounds();
    let mut out = Vec::with_capacity(count);
    if let ModelTag::RoundSphere { n } = *m.tag() {
        while out.len() < count {
            let y: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > 1e-3 && r <= 1.0 {
                let u: Vec<f64> = y.iter().map(|v| v / r).collect();
                out.extend(m.sphere_chart_point(&u));
            }
        }
        return out;
    }
    while out.len() < count {
        let x: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..*b)).collect();
        if m.boundary_fn(&x) > margin {
            out.push(Point::new(x));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn disc_centre_has_perpendicular_diameters() {
        let m = ChartedManifold::euclidean_disc(1.0).unwrap();
        let w = check_h_at_point(&m, &Point::new(vec![0.0, 0.0]), &WitnessOptions::default()).unwrap();
        let w = w.witness().expect("witness");
        assert!((w.theta - FRAC_PI_2).abs() < 1e-12);
        assert!((w.lengths[0] - 2.0).abs() < 1e-8);
        let c = estimate_c0(w, 0.5, None).unwrap();
        assert!((c.c0 - 1.0).abs() < 0.02, "{}", c.c0);
    }

    #[test]
    fn full_sphere_pairs_meet_at_antipode() {
        let m = ChartedManifold::round_sphere(2).unwrap();
        let opts = WitnessOptions {
            directions: Some(24),
            t_max: Some(3.5),
            allow_trapped: true,
            max_pairs: 20,
            ..Default::default()
        };
        let HCheck::Failure(f) = check_h_at_point(&m, &Point::new(vec![0.0, 0.0]), &opts).unwrap() else {
            panic!("expected failure");
        };
        // sampled minima sit within one grid step of the antipodal crossing
        assert!(!f.near_misses.is_empty());
        assert!(f.near_misses.iter().all(|n| n.off_min < 0.1));
    }

    #[test]
    fn cylinder_angle_and_bound() {
        let m = ChartedManifold::flat_cylinder(1.0).unwrap();
        let half = cylinder_half_turn_angle(&m).unwrap();
        assert!((half - PI.atan()).abs() < 1e-8);
        let x0 = Point::new(vec![1.0, 0.3]);
        let th = half / 4.0 * 1.5;
        let (g, e) = cylinder_pair(&m, &x0, th).unwrap();
        let check = validate_pair(&g, &e, &WitnessOptions::default()).unwrap();
        assert!(check.accepted);
        let w = witness_from(g, e, check);
        assert!(cylinder_bound_violation(&w).unwrap() < 1e-6);
        let c = estimate_c0(&w, 1.5, None).unwrap();
        assert!(c.c0 <= 1.02 / th.sin() && c.c0 >= 0.98 / th.sin(), "{} vs {}", c.c0, 1.0 / th.sin());
    }

    #[test]
    fn flat_separation_is_planar() {
        let m = ChartedManifold::flat_torus(&[10.0, 10.0]).unwrap();
        let r = verify_separation(&m, &Point::new(vec![5.0, 5.0]), &[1.0, 0.0], 0.7, 1.0, 0.01).unwrap();
        assert!(r.c >= 0.98 && r.c <= 1.0 + 1e-6, "{}", r.c);
    }

    #[test]
    fn perturbation_on_three_torus() {
        let m = ChartedManifold::flat_torus(&[1.0, 1.0, 1.0]).unwrap();
        let s = 5f64.sqrt();
        let rep = perturb_direction_avoid(
            &m,
            &Point::new(vec![0.2, 0.3, 0.4]),
            &[1.0, 0.0, 0.0],
            &[1.0 / s, 2.0 / s, 0.0],
            &PerturbOptions { window: 2.0, ..Default::default() },
        )
        .unwrap();
        assert_eq!(rep.conjugacy_order, Some(0));
        assert!(!rep.intersections.is_empty());
        assert_eq!(rep.status, PerturbStatus::Success, "{rep:?}");
        for (k, d) in rep.distance_to_v.iter().enumerate() {
            assert!(*d <= 0.3 / (k + 1) as f64 + 1e-9);
        }
    }
}
