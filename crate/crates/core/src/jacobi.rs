//! Matrix Jacobi fields in the parallel frame and conjugate points.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geodesic::{
    direction_grid, exact_state, integrate_geodesic, run_flow, Flow, FlowSample, GeodesicOptions, GeodesicPath,
    Transport,
};
use crate::manifold::{ChartedManifold, Mat, Point};

/// Default relative singular-value threshold for the order of conjugacy.
pub const CONJUGACY_REL_TOL: f64 = 1e-6;

/// `Y'' = −K Y` for the pair of fundamental solutions `A` (`A(0)=I, A'(0)=0`)
/// and `B` (`B(0)=0, B'(0)=I`), packed as `[A, B, A', B']`.
struct JacobiTransport {
    m: usize,
}

impl Transport for JacobiTransport {
    fn len(&self) -> usize {
        4 * self.m * self.m
    }

    fn rhs(&self, k: &Mat, e: &[f64], d: &mut [f64]) {
        let m = self.m;
        let q = m * m;
        d[..2 * q].copy_from_slice(&e[2 * q..4 * q]);
        for blk in 0..2 {
            let y = &e[blk * q..(blk + 1) * q];
            for i in 0..m {
                for j in 0..m {
                    let mut s = 0.0;
                    for l in 0..m {
                        s += k[(i, l)] * y[l * m + j];
                    }
                    d[2 * q + blk * q + i * m + j] = -s;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct JacobiSample {
    pub t: f64,
    pub a: Mat,
    pub b: Mat,
    pub a_dot: Mat,
    pub b_dot: Mat,
}

#[derive(Debug, Clone)]
pub struct JacobiMatrixSolution {
    m: ChartedManifold,
    flow_samples: Vec<FlowSample>,
    pub samples: Vec<JacobiSample>,
    opts: crate::ode::OdeOptions,
}

fn unpack(m: usize, geo: usize, y: &[f64]) -> (Mat, Mat, Mat, Mat) {
    let q = m * m;
    let blk = |k: usize| DMatrix::from_row_slice(m, m, &y[geo + k * q..geo + (k + 1) * q]);
    (blk(0), blk(1), blk(2), blk(3))
}

/// Integrates the matrix Jacobi equation along `path` from `t = 0` to
/// `t_end` (defaults to the forward end of the path), in the natural extension.
pub fn jacobi_along(path: &GeodesicPath, t_end: Option<f64>) -> Result<JacobiMatrixSolution> {
    let man = path.manifold().clone();
    let n = man.dim();
    if n < 2 {
        return Err(Error::Precondition("Jacobi fields need dimension at least 2".into()));
    }
    let m = n - 1;
    let t1 = t_end.unwrap_or(path.span().1);
    let o = path.origin_sample();
    let mut y0 = o.y.clone();
    let q = m * m;
    let mut extra = vec![0.0; 4 * q];
    for i in 0..m {
        extra[i * m + i] = 1.0; // A
        extra[3 * q + i * m + i] = 1.0; // B'
    }
    y0.extend_from_slice(&extra);
    let tr = JacobiTransport { m };
    let flow = Flow { m: &man, transport: &tr };
    let run = run_flow(&flow, o.chart, 0.0, &y0, t1, &[], true, false, path.ode_options())?;
    let geo = flow.geo_len();
    let samples = run
        .samples
        .iter()
        .map(|s| {
            let (a, b, a_dot, b_dot) = unpack(m, geo, &s.y);
            JacobiSample { t: s.t, a, b, a_dot, b_dot }
        })
        .collect();
    Ok(JacobiMatrixSolution {
        m: man,
        flow_samples: run.samples,
        samples,
        opts: *path.ode_options(),
    })
}

impl JacobiMatrixSolution {
    fn rank(&self) -> usize {
        self.m.dim() - 1
    }

    /// `max_t ‖AᵀB′ − A′ᵀB − I‖_max`.
    pub fn wronskian_defect(&self) -> f64 {
        let m = self.rank();
        self.samples
            .iter()
            .map(|s| (s.a.transpose() * &s.b_dot - s.a_dot.transpose() * &s.b - Mat::identity(m, m)).amax())
            .fold(0.0, f64::max)
    }

    /// `(A, B)` at `t`, re-integrated from the nearest stored sample.
    pub fn exact(&self, t: f64) -> Result<JacobiSample> {
        let m = self.rank();
        let tr = JacobiTransport { m };
        let flow = Flow { m: &self.m, transport: &tr };
        let (_, y) = exact_state(&flow, &self.flow_samples, 0.0, t, &self.opts)?;
        let (a, b, a_dot, b_dot) = unpack(m, flow.geo_len(), &y);
        Ok(JacobiSample { t, a, b, a_dot, b_dot })
    }

    pub fn singular_values(&self, i: usize) -> Vec<f64> {
        let mut s: Vec<f64> = self.samples[i].b.clone().singular_values().iter().copied().collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s
    }

    /// Frame vectors and chart state at sample `i`.
    pub fn flow_sample(&self, i: usize) -> &FlowSample {
        &self.flow_samples[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConjugatePoint {
    pub t: f64,
    pub order: usize,
    pub sigma_min: f64,
    pub scale: f64,
}

fn sigma_min(b: &Mat) -> f64 {
    b.clone().singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Times along the solution where `B(t)` becomes singular, located as local
/// minima of the smallest singular value refined by golden-section search.
/// The order counts singular values below `rel_tol` times the local scale
/// `max ‖B‖` over a window of half-width 0.5.
pub fn conjugate_points(sol: &JacobiMatrixSolution, rel_tol: f64) -> Result<Vec<ConjugatePoint>> {
    let s = &sol.samples;
    let sig: Vec<f64> = s.iter().map(|x| sigma_min(&x.b)).collect();
    let norms: Vec<f64> = s.iter().map(|x| x.b.clone().singular_values().max()).collect();
    let scale_at = |t: f64| -> f64 {
        let lo = s.partition_point(|x| x.t < t - 0.5);
        let hi = s.partition_point(|x| x.t <= t + 0.5);
        norms[lo..hi].iter().copied().fold(0.0, f64::max)
    };
    let mut out: Vec<ConjugatePoint> = Vec::new();
    for i in 1..s.len().saturating_sub(1) {
        if s[i].t < 0.05 {
            continue;
        }
        // neighbours with distinct times (chart switches duplicate a time)
        let mut l = i - 1;
        while l > 0 && s[l].t == s[i].t {
            l -= 1;
        }
        let mut r = i + 1;
        while r + 1 < s.len() && s[r].t == s[i].t {
            r += 1;
        }
        if !(sig[i] <= sig[l] && sig[i] <= sig[r]) || s[l].t == s[i].t || s[r].t == s[i].t {
            continue;
        }
        let scale = scale_at(s[i].t);
        if scale == 0.0 || sig[i] > 0.1 * scale {
            continue;
        }
        let (mut a, mut b) = (s[l].t, s[r].t);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let f = |t: f64| -> Result<f64> { Ok(sigma_min(&sol.exact(t)?.b)) };
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = f(c)?;
        let mut fd = f(d)?;
        while b - a > 1e-12 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d)?;
            }
        }
        let t = 0.5 * (a + b);
        let bt = sol.exact(t)?.b;
        let sv = bt.singular_values();
        let order = sv.iter().filter(|v| **v < rel_tol * scale).count();
        if order > 0 && !out.iter().any(|p| (p.t - t).abs() < 1e-6) {
            out.push(ConjugatePoint { t, order, sigma_min: sigma_min(&bt), scale });
        }
    }
    Ok(out)
}

/// Largest conjugacy order found along geodesics from `x` in `directions`
/// sampled directions, up to length `cap`.
pub fn order_of_conjugacy(m: &ChartedManifold, x: &Point, directions: usize, cap: f64) -> Result<usize> {
    let mut best = 0;
    for v in direction_grid(m, &x.x, directions) {
        let path = integrate_geodesic(
            m,
            x,
            &v,
            &GeodesicOptions {
                t_max: Some(cap),
                stop_at_boundary: false,
                ..Default::default()
            },
        )?;
        let sol = jacobi_along(&path, Some(cap))?;
        for p in conjugate_points(&sol, CONJUGACY_REL_TOL)? {
            best = best.max(p.order);
        }
    }
    Ok(best)
}

/// `d(exp_x)_{tv}(t e_k)` expressed in the frame at `t`, by central differences
/// of geodesics with directions rotated towards `E_k` by `±h`.
pub fn dexp_finite_difference(m: &ChartedManifold, x: &Point, v: &[f64], t: f64, h: f64) -> Result<Mat> {
    let n = m.dim();
    let opts = GeodesicOptions {
        t_max: Some(t + 0.1),
        stop_at_boundary: false,
        ..Default::default()
    };
    let base = integrate_geodesic(m, x, v, &opts)?;
    let frame0 = crate::geodesic::complete_frame(m, &x.x, v);
    let (chart, st) = base.state_exact(t)?;
    let xt = &st[..n];
    let frame_t: Vec<&[f64]> = (1..n).map(|b| &st[n + b * n..n + (b + 1) * n]).collect();
    let mut out = Mat::zeros(n - 1, n - 1);
    for (k, e) in frame0.iter().enumerate() {
        let mut ends = Vec::new();
        for sgn in [1.0, -1.0] {
            let (s, c) = (sgn * h).sin_cos();
            let w: Vec<f64> = v.iter().zip(e).map(|(a, b)| c * a + s * b).collect();
            let p = integrate_geodesic(m, x, &w, &opts)?;
            let (ch, y) = p.state_exact(t)?;
            if ch != chart {
                return Err(Error::Accuracy("perturbed geodesics ended in different charts".into()));
            }
            ends.push(y[..n].to_vec());
        }
        let j: Vec<f64> = (0..n).map(|i| (ends[0][i] - ends[1][i]) / (2.0 * h)).collect();
        for (i, ei) in frame_t.iter().enumerate() {
            out[(i, k)] = m.inner(xt, &j, ei);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn sphere_path(n: usize, cap: f64) -> GeodesicPath {
        let m = ChartedManifold::round_sphere(n).unwrap();
        let mut x = vec![0.0; n];
        x[0] = 0.3;
        let mut d = vec![0.0; n];
        d[1] = 1.0;
        d[0] = 0.4;
        let v = m.normalize(&x, &d);
        integrate_geodesic(&m, &Point::new(x), &v, &GeodesicOptions {
            t_max: Some(cap),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn flat_b_is_t() {
        let m = ChartedManifold::flat_torus(&[1.0, 1.0, 1.0]).unwrap();
        let v = m.normalize(&[0.0; 3], &[1.0, 0.3, 0.2]);
        let p = integrate_geodesic(&m, &Point::new(vec![0.0; 3]), &v, &GeodesicOptions {
            t_max: Some(10.0),
            ..Default::default()
        })
        .unwrap();
        let sol = jacobi_along(&p, None).unwrap();
        for s in &sol.samples {
            assert!((&s.b - Mat::identity(2, 2) * s.t).amax() < 1e-12);
        }
        assert!(conjugate_points(&sol, CONJUGACY_REL_TOL).unwrap().is_empty());
    }

    #[test]
    fn sphere_b_is_sin_and_wronskian_constant() {
        let p = sphere_path(2, 3.0 * PI);
        let sol = jacobi_along(&p, None).unwrap();
        for s in &sol.samples {
            assert_abs_diff_eq!(s.b[(0, 0)], s.t.sin(), epsilon = 1e-7);
        }
        assert!(sol.wronskian_defect() < 1e-6);
    }

    #[test]
    fn sphere_conjugate_points() {
        for n in [2, 3] {
            let p = sphere_path(n, 4.0);
            let sol = jacobi_along(&p, None).unwrap();
            let cps = conjugate_points(&sol, CONJUGACY_REL_TOL).unwrap();
            assert_eq!(cps.len(), 1, "{cps:?}");
            assert_abs_diff_eq!(cps[0].t, PI, epsilon = 1e-6);
            assert_eq!(cps[0].order, n - 1);
        }
    }

    #[test]
    fn jacobi_matches_finite_difference_dexp() {
        let s = ChartedManifold::round_sphere(2).unwrap();
        let x = Point::new(vec![0.0, 0.0]);
        let v = s.normalize(&x.x, &[1.0, 0.5]);
        let path = integrate_geodesic(&s, &x, &v, &GeodesicOptions { t_max: Some(2.0), ..Default::default() }).unwrap();
        let sol = jacobi_along(&path, None).unwrap();
        for t in [0.5, 1.0, 1.5] {
            let fd = dexp_finite_difference(&s, &x, &v, t, 1e-4).unwrap();
            let b = sol.exact(t).unwrap().b;
            assert!(((&fd - &b).amax() / b.amax()) < 1e-3, "{fd} {b}");
        }
    }

    #[test]
    fn conjugacy_orders() {
        let t2 = ChartedManifold::flat_torus(&[1.0, 1.0]).unwrap();
        assert_eq!(order_of_conjugacy(&t2, &Point::new(vec![0.2, 0.3]), 8, 10.0).unwrap(), 0);
        let s2 = ChartedManifold::round_sphere(2).unwrap();
        assert_eq!(order_of_conjugacy(&s2, &Point::new(vec![0.2, 0.3]), 6, 4.0).unwrap(), 1);
    }
}
