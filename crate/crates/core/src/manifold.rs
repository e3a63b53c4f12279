//! Model Riemannian manifolds described by charts.
//!
//! Every built-in model carries an analytic metric, Christoffel symbols and
//! curvature. The round sphere uses two stereographic charts (projection from
//! the north pole is chart 0, from the south pole chart 1) related by the
//! inversion `x ↦ x/|x|²`; all other models use a single chart.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

pub type Mat = DMatrix<f64>;

/// Radius (in chart units) beyond which a sphere geodesic switches chart.
pub(crate) const SPHERE_SWITCH_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelTag {
    EuclideanDisc { radius: f64 },
    FlatCylinder { a: f64 },
    RoundSphere { n: usize },
    FlatTorus { periods: Vec<f64> },
    SpherePolarPatch,
    Custom,
}

/// A boundary face `x[axis] = value`; `inward` is `+1` when the manifold lies
/// on the side `x[axis] > value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub value: f64,
    pub inward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Boundary {
    Closed,
    Faces(Vec<Face>),
    /// Euclidean ball of the given radius centred at the chart origin.
    Ball(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub chart: usize,
    pub x: Vec<f64>,
}

impl Point {
    pub fn new(x: Vec<f64>) -> Self {
        Point { chart: 0, x }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tangent {
    pub base: Point,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
struct CustomMetric {
    /// Row-major n×n component expressions.
    g: Vec<Expr>,
}

#[derive(Debug)]
struct Inner {
    tag: ModelTag,
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    periods: Vec<Option<f64>>,
    boundary: Boundary,
    inj: f64,
    custom: Option<CustomMetric>,
    /// Constant sectional curvature, when the model has one.
    kappa: Option<f64>,
}

/// Cheaply clonable handle to an immutable model manifold.
#[derive(Debug, Clone)]
pub struct ChartedManifold(Arc<Inner>);

/// JSON description of a custom manifold.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub dim: usize,
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub periods: Vec<Option<f64>>,
    #[serde(default)]
    pub boundary_faces: Vec<Face>,
    pub metric: Vec<Vec<String>>,
    #[serde(default)]
    pub coords: Vec<String>,
    #[serde(default)]
    pub injectivity_radius: Option<f64>,
}

impl ChartedManifold {
    pub fn euclidean_disc(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::config("radius", "must be positive"));
        }
        Ok(Self::build(Inner {
            tag: ModelTag::EuclideanDisc { radius },
            dim: 2,
            lo: vec![-radius; 2],
            hi: vec![radius; 2],
            periods: vec![None, None],
            boundary: Boundary::Ball(radius),
            inj: f64::INFINITY,
            custom: None,
            kappa: Some(0.0),
        }))
    }

    /// `S¹ × [0, a]` with coordinates `(θ, s)`, θ periodic with period 2π.
    pub fn flat_cylinder(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::config("a", "must be positive"));
        }
        Ok(Self::build(Inner {
            tag: ModelTag::FlatCylinder { a },
            dim: 2,
            lo: vec![0.0, 0.0],
            hi: vec![2.0 * PI, a],
            periods: vec![Some(2.0 * PI), None],
            boundary: Boundary::Faces(vec![
                Face { axis: 1, value: 0.0, inward: 1.0 },
                Face { axis: 1, value: a, inward: -1.0 },
            ]),
            inj: PI,
            custom: None,
            kappa: Some(0.0),
        }))
    }

    pub fn round_sphere(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::config("n", "sphere dimension must be at least 2"));
        }
        Ok(Self::build(Inner {
            tag: ModelTag::RoundSphere { n },
            dim: n,
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
            periods: vec![None; n],
            boundary: Boundary::Closed,
            inj: PI,
            custom: None,
            kappa: Some(1.0),
        }))
    }

    pub fn flat_torus(periods: &[f64]) -> Result<Self> {
        if periods.is_empty() || periods.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::config("periods", "need at least one positive period"));
        }
        let n = periods.len();
        let inj = periods.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
        Ok(Self::build(Inner {
            tag: ModelTag::FlatTorus { periods: periods.to_vec() },
            dim: n,
            lo: vec![0.0; n],
            hi: periods.to_vec(),
            periods: periods.iter().map(|p| Some(*p)).collect(),
            boundary: Boundary::Closed,
            inj,
            custom: None,
            kappa: Some(0.0),
        }))
    }

    /// The unit 2-sphere in geodesic polar coordinates `(r, φ)` about a pole,
    /// restricted to the band `r ∈ [0.05, π − 0.05]`.
    pub fn sphere_polar_patch() -> Self {
        let eps = 0.05;
        Self::build(Inner {
            tag: ModelTag::SpherePolarPatch,
            dim: 2,
            lo: vec![eps, 0.0],
            hi: vec![PI - eps, 2.0 * PI],
            periods: vec![None, Some(2.0 * PI)],
            boundary: Boundary::Faces(vec![
                Face { axis: 0, value: eps, inward: 1.0 },
                Face { axis: 0, value: PI - eps, inward: -1.0 },
            ]),
            inj: PI,
            custom: None,
            kappa: Some(1.0),
        })
    }

    pub fn custom(spec: &CustomSpec) -> Result<Self> {
        let n = spec.dim;
        if n == 0 || n > 8 {
            return Err(Error::config("dim", "must be between 1 and 8"));
        }
        if spec.bounds.len() != n {
            return Err(Error::config("box", format!("expected {n} intervals")));
        }
        for (i, b) in spec.bounds.iter().enumerate() {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return Err(Error::config("box", format!("interval {i} is empty or non-finite")));
            }
        }
        let periods = if spec.periods.is_empty() {
            vec![None; n]
        } else if spec.periods.len() == n {
            spec.periods.clone()
        } else {
            return Err(Error::config("periods", format!("expected {n} entries")));
        };
        if periods.iter().flatten().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::config("periods", "periods must be positive"));
        }
        for f in &spec.boundary_faces {
            if f.axis >= n || !f.value.is_finite() || (f.inward != 1.0 && f.inward != -1.0) {
                return Err(Error::config("boundary_faces", "axis out of range or inward not ±1"));
            }
        }
        let names: Vec<String> = if spec.coords.is_empty() {
            (0..n).map(|i| format!("x{i}")).collect()
        } else if spec.coords.len() == n {
            spec.coords.clone()
        } else {
            return Err(Error::config("coords", format!("expected {n} names")));
        };
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        if spec.metric.len() != n || spec.metric.iter().any(|r| r.len() != n) {
            return Err(Error::config("metric", format!("expected a {n}×{n} array of expressions")));
        }
        let mut g = Vec::with_capacity(n * n);
        for row in &spec.metric {
            for s in row {
                g.push(Expr::parse(s, &name_refs)?);
            }
        }
        let inj = match spec.injectivity_radius {
            Some(r) if r > 0.0 => r,
            Some(_) => return Err(Error::config("injectivity_radius", "must be positive")),
            None => f64::NAN,
        };
        let boundary = if spec.boundary_faces.is_empty() {
            Boundary::Closed
        } else {
            Boundary::Faces(spec.boundary_faces.clone())
        };
        let m = Self::build(Inner {
            tag: ModelTag::Custom,
            dim: n,
            lo: spec.bounds.iter().map(|b| b[0]).collect(),
            hi: spec.bounds.iter().map(|b| b[1]).collect(),
            periods,
            boundary,
            inj,
            custom: Some(CustomMetric { g }),
            kappa: None,
        });
        m.validate_metric()?;
        Ok(m)
    }

    pub fn custom_from_json(src: &str) -> Result<Self> {
        let spec: CustomSpec = serde_json::from_str(src)?;
        Self::custom(&spec)
    }

    fn build(inner: Inner) -> Self {
        ChartedManifold(Arc::new(inner))
    }

    /// Checks symmetry and positive definiteness on a coarse sample of the box.
    fn validate_metric(&self) -> Result<()> {
        let n = self.dim();
        let per_axis = match n {
            1 => 9,
            2 => 7,
            3 => 4,
            _ => 2,
        };
        let total = (per_axis as usize).pow(n as u32);
        for idx in 0..total {
            let mut k = idx;
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let j = k % per_axis;
                    k /= per_axis;
                    let (lo, hi) = (self.0.lo[i], self.0.hi[i]);
                    lo + (hi - lo) * (j as f64 + 0.5) / per_axis as f64
                })
                .collect();
            let g = self.metric_raw(&x);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("metric", format!("non-finite value at {x:?}")));
            }
            if (&g - g.transpose()).amax() > 1e-12 * (1.0 + g.amax()) {
                return Err(Error::config("metric", format!("not symmetric at {x:?}")));
            }
            if g.clone().cholesky().is_none() {
                return Err(Error::config("metric", format!("not positive definite at {x:?}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn tag(&self) -> &ModelTag {
        &self.0.tag
    }

    pub fn tag_name(&self) -> &'static str {
        match self.0.tag {
            ModelTag::EuclideanDisc { .. } => "euclidean-disc",
            ModelTag::FlatCylinder { .. } => "flat-cylinder",
            ModelTag::RoundSphere { .. } => "round-sphere",
            ModelTag::FlatTorus { .. } => "flat-torus",
            ModelTag::SpherePolarPatch => "sphere-polar-patch",
            ModelTag::Custom => "custom",
        }
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.0.periods
    }

    pub fn boundary(&self) -> &Boundary {
        &self.0.boundary
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.0.boundary, Boundary::Closed)
    }

    pub fn box_bounds(&self) -> (&[f64], &[f64]) {
        (&self.0.lo, &self.0.hi)
    }

    /// Injectivity radius of the natural closed extension (NaN if a custom
    /// model did not supply one).
    pub fn injectivity_radius(&self) -> f64 {
        self.0.inj
    }

    pub fn constant_curvature(&self) -> Option<f64> {
        self.0.kappa
    }

    pub fn is_flat(&self) -> bool {
        self.0.kappa == Some(0.0)
    }

    pub fn chart_count(&self) -> usize {
        match self.0.tag {
            ModelTag::RoundSphere { .. } => 2,
            _ => 1,
        }
    }

    /// Diameter of the model (box diagonal for custom models).
    pub fn diameter(&self) -> f64 {
        match &self.0.tag {
            ModelTag::EuclideanDisc { radius } => 2.0 * radius,
            ModelTag::FlatCylinder { a } => (PI * PI + a * a).sqrt(),
            ModelTag::RoundSphere { .. } | ModelTag::SpherePolarPatch => PI,
            ModelTag::FlatTorus { periods } => periods.iter().map(|p| (p / 2.0).powi(2)).sum::<f64>().sqrt(),
            ModelTag::Custom => self
                .0
                .lo
                .iter()
                .zip(&self.0.hi)
                .map(|(l, h)| (h - l).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Maps periodic coordinates into `[0, period)`.
    pub fn reduce(&self, p: &Point) -> Point {
        let mut x = p.x.clone();
        self.reduce_in_place(&mut x);
        Point { chart: p.chart, x }
    }

    pub fn reduce_in_place(&self, x: &mut [f64]) {
        for (xi, per) in x.iter_mut().zip(&self.0.periods) {
            if let Some(pp) = per {
                *xi = xi.rem_euclid(*pp);
                if *xi >= *pp {
                    *xi = 0.0;
                }
            }
        }
    }

    /// Signed boundary function: positive in the interior, zero on `∂M`,
    /// negative outside. `+∞` for closed models.
    pub fn boundary_fn(&self, x: &[f64]) -> f64 {
        match &self.0.boundary {
            Boundary::Closed => f64::INFINITY,
            Boundary::Ball(r) => r - x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Boundary::Faces(faces) => faces
                .iter()
                .map(|f| f.inward * (x[f.axis] - f.value))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Outward g-unit normal at the boundary point nearest to `x`.
    pub fn outward_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = self.dim();
        let covector: Vec<f64> = match &self.0.boundary {
            Boundary::Closed => return None,
            Boundary::Ball(_) => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r == 0.0 {
                    return None;
                }
                x.iter().map(|v| v / r).collect()
            }
            Boundary::Faces(faces) => {
                let f = faces
                    .iter()
                    .min_by(|a, b| {
                        let da = a.inward * (x[a.axis] - a.value);
                        let db = b.inward * (x[b.axis] - b.value);
                        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
                    })?;
                let mut c = vec![0.0; n];
                c[f.axis] = -f.inward;
                c
            }
        };
        // raise the index and normalise: ν = g⁻¹ dν / |dν|_{g⁻¹}
        let g = self.metric_raw(x);
        let ginv = g.try_inverse()?;
        let c = nalgebra::DVector::from_vec(covector);
        let nu = &ginv * &c;
        let norm = c.dot(&nu).sqrt();
        Some(nu.iter().map(|v| v / norm).collect())
    }

    /// Whether `p` lies in the manifold (after periodic reduction).
    pub fn contains(&self, p: &Point) -> bool {
        if p.chart >= self.chart_count() || p.x.len() != self.dim() || p.x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let x = self.reduce(p).x;
        for i in 0..self.dim() {
            if self.0.periods[i].is_none() && (x[i] < self.0.lo[i] - 1e-12 || x[i] > self.0.hi[i] + 1e-12) {
                return false;
            }
        }
        self.boundary_fn(&x) >= -1e-12
    }

    fn check(&self, p: &Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "point {:?} (chart {}) is outside the {} chart domain",
                p.x,
                p.chart,
                self.tag_name()
            )))
        }
    }

    pub fn metric_at(&self, p: &Point) -> Result<Mat> {
        self.check(p)?;
        Ok(self.metric_raw(&p.x))
    }

    /// Metric of the natural extension; no domain check.
    pub fn metric_raw(&self, x: &[f64]) -> Mat {
        let n = self.dim();
        match &self.0.tag {
            ModelTag::EuclideanDisc { .. } | ModelTag::FlatCylinder { .. } | ModelTag::FlatTorus { .. } => {
                Mat::identity(n, n)
            }
            ModelTag::RoundSphere { .. } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let c = 4.0 / (1.0 + r2).powi(2);
                Mat::identity(n, n) * c
            }
            ModelTag::SpherePolarPatch => {
                let s = x[0].sin();
                Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, s * s])
            }
            ModelTag::Custom => {
                let c = self.0.custom.as_ref().expect("custom metric present");
                Mat::from_fn(n, n, |i, j| c.g[i * n + j].eval(x))
            }
        }
    }

    /// `⟨u, w⟩_g` at `x`.
    pub fn inner(&self, x: &[f64], u: &[f64], w: &[f64]) -> f64 {
        match &self.0.tag {
            ModelTag::EuclideanDisc { .. } | ModelTag::FlatCylinder { .. } | ModelTag::FlatTorus { .. } => {
                u.iter().zip(w).map(|(a, b)| a * b).sum()
            }
            ModelTag::RoundSphere { .. } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                4.0 / (1.0 + r2).powi(2) * u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
            }
            _ => {
                let g = self.metric_raw(x);
                let n = self.dim();
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += g[(i, j)] * u[i] * w[j];
                    }
                }
                s
            }
        }
    }

    pub fn norm(&self, x: &[f64], u: &[f64]) -> f64 {
        self.inner(x, u, u).sqrt()
    }

    pub fn christoffel(&self, p: &Point) -> Result<Vec<f64>> {
        self.check(p)?;
        let n = self.dim();
        let mut out = vec![0.0; n * n * n];
        self.christoffel_into(&p.x, &mut out);
        Ok(out)
    }

    /// Fills `out[k*n*n + i*n + j] = Γ^k_{ij}(x)` for the natural extension.
    pub fn christoffel_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.0.tag {
            ModelTag::EuclideanDisc { .. } | ModelTag::FlatCylinder { .. } | ModelTag::FlatTorus { .. } => {}
            ModelTag::RoundSphere { .. } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let df: Vec<f64> = x.iter().map(|xi| -2.0 * xi / (1.0 + r2)).collect();
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            let mut v = 0.0;
                            if i == k {
                                v += df[j];
                            }
                            if j == k {
                                v += df[i];
                            }
                            if i == j {
                                v -= df[k];
                            }
                            out[k * n * n + i * n + j] = v;
                        }
                    }
                }
            }
            ModelTag::SpherePolarPatch => {
                let (s, c) = x[0].sin_cos();
                // Γ^r_{φφ}
                out[3] = -s * c;
                // Γ^φ_{rφ} = Γ^φ_{φr}
                out[4 + 1] = c / s;
                out[4 + 2] = c / s;
            }
            ModelTag::Custom => self.christoffel_fd(x, out),
        }
    }

    fn christoffel_fd(&self, x: &[f64], out: &mut [f64]) {
        const STEP: f64 = 1e-5;
        let n = self.dim();
        let g = self.metric_raw(x);
        let ginv = g.clone().try_inverse().unwrap_or_else(|| Mat::identity(n, n));
        // dg[l] = ∂_l g
        let mut dg = Vec::with_capacity(n);
        let mut xp = x.to_vec();
        for l in 0..n {
            xp[l] = x[l] + STEP;
            let gp = self.metric_raw(&xp);
            xp[l] = x[l] - STEP;
            let gm = self.metric_raw(&xp);
            xp[l] = x[l];
            dg.push((gp - gm) / (2.0 * STEP));
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    out[k * n * n + i * n + j] = 0.5 * s;
                }
            }
        }
    }

    /// `R^l_{ijk}` stored at `l*n³ + i*n² + j*n + k`, with
    /// `R(∂_i, ∂_j)∂_k = R^l_{ijk} ∂_l`.
    pub fn riemann_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let n2 = n * n;
        let n3 = n2 * n;
        if let Some(kappa) = self.0.kappa {
            // R(X,Y)Z = κ(⟨Y,Z⟩X − ⟨X,Z⟩Y)
            let g = self.metric_raw(x);
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            let mut v = 0.0;
                            if l == i {
                                v += g[(j, k)];
                            }
                            if l == j {
                                v -= g[(i, k)];
                            }
                            out[l * n3 + i * n2 + j * n + k] = kappa * v;
                        }
                    }
                }
            }
            return;
        }
        const STEP: f64 = 1e-4;
        let mut gam = vec![0.0; n3];
        self.christoffel_into(x, &mut gam);
        let mut dgam = vec![vec![0.0; n3]; n];
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; n3];
        let mut gm = vec![0.0; n3];
        for m in 0..n {
            xp[m] = x[m] + STEP;
            self.christoffel_into(&xp, &mut gp);
            xp[m] = x[m] - STEP;
            self.christoffel_into(&xp, &mut gm);
            xp[m] = x[m];
            for q in 0..n3 {
                dgam[m][q] = (gp[q] - gm[q]) / (2.0 * STEP);
            }
        }
        let gidx = |k: usize, i: usize, j: usize| k * n2 + i * n + j;
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut v = dgam[i][gidx(l, j, k)] - dgam[j][gidx(l, i, k)];
                        for m in 0..n {
                            v += gam[gidx(l, i, m)] * gam[gidx(m, j, k)] - gam[gidx(l, j, m)] * gam[gidx(m, i, k)];
                        }
                        out[l * n3 + i * n2 + j * n + k] = v;
                    }
                }
            }
        }
    }

    /// `K_{ij} = ⟨R(E_i, T)T, E_j⟩` for the normal frame vectors `frame`.
    pub fn jacobi_curvature(&self, x: &[f64], t: &[f64], frame: &[&[f64]]) -> Mat {
        let m = frame.len();
        if self.is_flat() {
            return Mat::zeros(m, m);
        }
        if let Some(kappa) = self.0.kappa {
            let tt = self.inner(x, t, t);
            let et: Vec<f64> = frame.iter().map(|e| self.inner(x, e, t)).collect();
            return Mat::from_fn(m, m, |i, j| kappa * (tt * self.inner(x, frame[i], frame[j]) - et[i] * et[j]));
        }
        let n = self.dim();
        let mut r = vec![0.0; n * n * n * n];
        self.riemann_into(x, &mut r);
        let n2 = n * n;
        let n3 = n2 * n;
        let g = self.metric_raw(x);
        let mut rt = vec![vec![0.0; n]; m];
        for (a, e) in frame.iter().enumerate() {
            for l in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            s += r[l * n3 + i * n2 + j * n + k] * e[i] * t[j] * t[k];
                        }
                    }
                }
                rt[a][l] = s;
            }
        }
        let k = Mat::from_fn(m, m, |i, j| {
            let mut s = 0.0;
            for l in 0..n {
                for q in 0..n {
                    s += g[(l, q)] * rt[i][l] * frame[j][q];
                }
            }
            s
        });
        (&k + k.transpose()) * 0.5
    }

    pub fn volume_density(&self, p: &Point) -> Result<f64> {
        self.check(p)?;
        Ok(self.volume_density_raw(&p.x))
    }

    pub fn volume_density_raw(&self, x: &[f64]) -> f64 {
        match &self.0.tag {
            ModelTag::EuclideanDisc { .. } | ModelTag::FlatCylinder { .. } | ModelTag::FlatTorus { .. } => 1.0,
            ModelTag::RoundSphere { n } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (2.0 / (1.0 + r2)).powi(*n as i32)
            }
            ModelTag::SpherePolarPatch => x[0].sin().abs(),
            ModelTag::Custom => self.metric_raw(x).determinant().max(0.0).sqrt(),
        }
    }

    /// Embedding used for distances and chart-independent comparisons:
    /// ambient ℝ^{n+1} for spheres, chart coordinates otherwise.
    pub fn embed(&self, chart: usize, x: &[f64]) -> Vec<f64> {
        match &self.0.tag {
            ModelTag::RoundSphere { .. } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let d = 1.0 + r2;
                let mut out: Vec<f64> = x.iter().map(|v| 2.0 * v / d).collect();
                let last = (r2 - 1.0) / d;
                out.push(if chart == 0 { last } else { -last });
                out
            }
            ModelTag::SpherePolarPatch => {
                let (sr, cr) = x[0].sin_cos();
                let (sp, cp) = x[1].sin_cos();
                vec![sr * cp, sr * sp, cr]
            }
            _ => x.to_vec(),
        }
    }

    /// Inverse of [`embed`](Self::embed) for the sphere: picks the chart in
    /// which the point is closest to the chart origin.
    pub fn sphere_chart_point(&self, ambient: &[f64]) -> Option<Point> {
        if !matches!(self.0.tag, ModelTag::RoundSphere { .. }) {
            return None;
        }
        let n = self.dim();
        let last = ambient[n];
        // chart 0 (from north) is best near the south pole, where last < 0
        let (chart, denom) = if last <= 0.0 { (0, 1.0 - last) } else { (1, 1.0 + last) };
        Some(Point {
            chart,
            x: ambient[..n].iter().map(|v| v / denom).collect(),
        })
    }

    /// Riemannian distance for built-in models.
    pub fn distance(&self, p: &Point, q: &Point) -> Result<f64> {
        match &self.0.tag {
            ModelTag::EuclideanDisc { .. } | ModelTag::FlatCylinder { .. } | ModelTag::FlatTorus { .. } => {
                Ok(self.flat_delta(&p.x, &q.x).iter().map(|d| d * d).sum::<f64>().sqrt())
            }
            ModelTag::RoundSphere { .. } | ModelTag::SpherePolarPatch => {
                let a = self.embed(p.chart, &p.x);
                let b = self.embed(q.chart, &q.x);
                Ok(chord_to_arc(&a, &b))
            }
            ModelTag::Custom => Err(Error::Capability("distance is not available for custom metrics".into())),
        }
    }

    /// Shortest coordinate difference `q − p`, reducing periodic axes into
    /// `[−P/2, P/2]`.
    pub fn flat_delta(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(q)
            .zip(&self.0.periods)
            .map(|((a, b), per)| {
                let d = b - a;
                match per {
                    Some(pp) => d - pp * (d / pp).round(),
                    None => d,
                }
            })
            .collect()
    }

    /// If a sphere geodesic has wandered far from its chart origin, returns
    /// the other chart together with the Jacobian of the inversion at `x`.
    pub(crate) fn chart_transition(&self, chart: usize, x: &[f64]) -> Option<(usize, Vec<f64>, Mat)> {
        if !matches!(self.0.tag, ModelTag::RoundSphere { .. }) {
            return None;
        }
        let n = self.dim();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let y: Vec<f64> = x.iter().map(|v| v / r2).collect();
        // d(x/|x|²) = (I |x|² − 2 x xᵀ)/|x|⁴
        let jac = Mat::from_fn(n, n, |i, j| {
            let delta = if i == j { r2 } else { 0.0 };
            (delta - 2.0 * x[i] * x[j]) / (r2 * r2)
        });
        Some((1 - chart, y, jac))
    }

    /// Event function for chart switching; negative once a switch is due.
    pub(crate) fn chart_fn(&self, x: &[f64]) -> f64 {
        match self.0.tag {
            ModelTag::RoundSphere { .. } => {
                SPHERE_SWITCH_RADIUS * SPHERE_SWITCH_RADIUS - x.iter().map(|v| v * v).sum::<f64>()
            }
            _ => f64::INFINITY,
        }
    }

    pub fn normalize(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let s = self.norm(x, v);
        v.iter().map(|c| c / s).collect()
    }
}

/// Great-circle distance between unit vectors, accurate at both small and
/// near-antipodal separations.
pub fn chord_to_arc(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x + y).powi(2)).sum::<f64>().sqrt();
    2.0 * diff.atan2(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn models() -> Vec<ChartedManifold> {
        vec![
            ChartedManifold::euclidean_disc(1.0).unwrap(),
            ChartedManifold::flat_cylinder(1.0).unwrap(),
            ChartedManifold::round_sphere(2).unwrap(),
            ChartedManifold::round_sphere(3).unwrap(),
            ChartedManifold::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap(),
            ChartedManifold::sphere_polar_patch(),
        ]
    }

    #[test]
    fn flat_metrics_are_identity() {
        let t = ChartedManifold::flat_torus(&[1.0, 2.0]).unwrap();
        assert_eq!(t.metric_at(&Point::new(vec![0.3, 1.7])).unwrap(), Mat::identity(2, 2));
        let c = ChartedManifold::flat_cylinder(1.0).unwrap();
        assert_eq!(c.metric_at(&Point::new(vec![5.0, 0.5])).unwrap(), Mat::identity(2, 2));
        assert!(c.metric_at(&Point::new(vec![0.0, 1.5])).is_err());
    }

    #[test]
    fn polar_patch_metric_and_volume() {
        let m = ChartedManifold::sphere_polar_patch();
        let r = 0.8;
        let g = m.metric_at(&Point::new(vec![r, 1.0])).unwrap();
        assert_abs_diff_eq!(g[(1, 1)], r.sin().powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(m.volume_density(&Point::new(vec![r, 1.0])).unwrap(), r.sin(), epsilon = 1e-15);
    }

    #[test]
    fn polar_patch_christoffel_matches_hand_formula_and_fd() {
        let m = ChartedManifold::sphere_polar_patch();
        let x = [0.9, 0.4];
        let mut g = vec![0.0; 8];
        m.christoffel_into(&x, &mut g);
        assert_abs_diff_eq!(g[3], -x[0].sin() * x[0].cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(g[5], 1.0 / x[0].tan(), epsilon = 1e-15);
        assert_abs_diff_eq!(g[6], 1.0 / x[0].tan(), epsilon = 1e-15);
        // same metric entered as a custom model, differentiated numerically
        let c = ChartedManifold::custom_from_json(
            r#"{"dim":2,"box":[[0.1,3.0],[0,6.283185307179586]],"metric":[["1","0"],["0","sin(r)^2"]],"coords":["r","phi"]}"#,
        )
        .unwrap();
        let mut h = vec![0.0; 8];
        c.christoffel_into(&x, &mut h);
        for (a, b) in g.iter().zip(&h) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        let mut r = vec![0.0; 16];
        c.riemann_into(&x, &mut r);
        let fr = [1.0, 0.0];
        let t = [0.0, 1.0 / x[0].sin()];
        let k = c.jacobi_curvature(&x, &t, &[&fr]);
        assert_abs_diff_eq!(k[(0, 0)], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn custom_flat_metric_has_zero_christoffel() {
        let c = ChartedManifold::custom_from_json(
            r#"{"dim":2,"box":[[0,1],[0,1]],"metric":[["1","0"],["0","1"]]}"#,
        )
        .unwrap();
        let mut g = vec![1.0; 8];
        c.christoffel_into(&[0.3, 0.6], &mut g);
        assert!(g.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn custom_rejects_bad_input() {
        assert!(ChartedManifold::custom_from_json("{").is_err());
        assert!(ChartedManifold::custom_from_json(
            r#"{"dim":2,"box":[[0,1],[0,1]],"metric":[["1","0"],["0","-1"]]}"#
        )
        .is_err());
        assert!(ChartedManifold::custom_from_json(
            r#"{"dim":2,"box":[[0,1],[0,1]],"metric":[["1","x"],["0","1"]],"coords":["x","y"]}"#
        )
        .is_err());
        assert!(ChartedManifold::custom_from_json(r#"{"dim":2,"box":[[0,1]],"metric":[["1"]]}"#).is_err());
    }

    #[test]
    fn sphere_chart_transition_preserves_embedding() {
        let s = ChartedManifold::round_sphere(2).unwrap();
        let x = [1.5, -1.6];
        let (c, y, _) = s.chart_transition(0, &x).unwrap();
        let a = s.embed(0, &x);
        let b = s.embed(c, &y);
        for (p, q) in a.iter().zip(&b) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-14);
        }
        let p = s.sphere_chart_point(&a).unwrap();
        let e = s.embed(p.chart, &p.x);
        for (p, q) in a.iter().zip(&e) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-14);
        }
    }

    #[test]
    fn distances() {
        let c = ChartedManifold::flat_cylinder(1.0).unwrap();
        let d = c.distance(&Point::new(vec![1.0, 0.2]), &Point::new(vec![1.0, 0.9])).unwrap();
        assert_abs_diff_eq!(d, 0.7, epsilon = 1e-15);
        let d = c.distance(&Point::new(vec![0.1, 0.0]), &Point::new(vec![2.0 * PI - 0.2, 0.4])).unwrap();
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-12);
        let s = ChartedManifold::round_sphere(2).unwrap();
        let d = s.distance(&Point::new(vec![0.0, 0.0]), &Point { chart: 1, x: vec![0.0, 0.0] }).unwrap();
        assert_abs_diff_eq!(d, PI, epsilon = 1e-15);
        let custom = ChartedManifold::custom_from_json(
            r#"{"dim":1,"box":[[0,1]],"metric":[["1"]]}"#,
        )
        .unwrap();
        assert!(matches!(
            custom.distance(&Point::new(vec![0.0]), &Point::new(vec![1.0])),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn metric_is_spd_on_samples() {
        for m in models() {
            let n = m.dim();
            let (lo, hi) = m.box_bounds();
            for i in 0..50 {
                for j in 0..50 {
                    let mut x = vec![0.0; n];
                    let f = [(i as f64 + 0.5) / 50.0, (j as f64 + 0.5) / 50.0];
                    for k in 0..n {
                        let (l, h) = if lo[k].is_finite() { (lo[k], hi[k]) } else { (-3.0, 3.0) };
                        x[k] = l + (h - l) * f[k % 2];
                    }
                    let g = m.metric_raw(&x);
                    assert!((&g - g.transpose()).amax() == 0.0);
                    assert!(g.symmetric_eigenvalues().min() > 0.0, "{} {x:?}", m.tag_name());
                }
            }
        }
    }
}
