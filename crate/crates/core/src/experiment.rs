//! Experiment configurations and runners behind the command-line tool.
//!
//! A run is a pure function of its [`ExperimentConfig`]: it returns a
//! [`Report`] and the CSV/JSON/SVG artifacts, never touching the clock or the
//! filesystem. Writing the artifacts is left to the caller.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::json;

use crate::beam::{beam_norms, min_eig, residual_norm, BeamProfile, Grid};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fit::loglog_fit;
use crate::geodesic::{direction_grid, integrate_geodesic, GeodesicOptions};
use crate::intersection::{h1_survey, sample_interior, verify_separation, SurveyOptions};
use crate::jacobi::{conjugate_points, dexp_finite_difference, jacobi_along};
use crate::manifold::{ChartedManifold, Mat, Point};
use crate::recovery::{
    beam_pair, boundary_concentration, error_decay, BoundaryOptions, PotentialField, PotentialSpec, ProductOptions,
};
use crate::report::{loglog_svg, to_csv, to_json, Artifacts, Check, Report, Series};
use crate::spectral::{build_bad_set, sample_outside, spectrum, verify_polynomial_bound, weyl_count, SpectrumModel};
use crate::stationary::{
    cubic_phase, holder_amplitude, holder_norm, oscillatory_integral, remainder_rate, smooth_bump, Amplitude,
    HolderFunction, PhaseModel, QuadratureOptions,
};

// ---------------------------------------------------------------------------
// shared value types

/// Strictly increasing list of positive values, written `lo:hi:count`
/// (geometric spacing) or as an explicit list.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder(pub Vec<f64>);

impl Ladder {
    pub fn geometric(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 || !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config("ladder", "need 0 < lo < hi and at least two rungs"));
        }
        let step = (hi / lo).ln() / (count - 1) as f64;
        let v = (0..count)
            .map(|k| match k {
                0 => lo,
                k if k == count - 1 => hi,
                k => round_sig(lo * (step * k as f64).exp()),
            })
            .collect();
        Ok(Ladder(v))
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::config(field, "ladder is empty"));
        }
        if self.0.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config(field, "rungs must be positive and finite"));
        }
        if self.0.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(field, "ladder must be strictly increasing"));
        }
        Ok(())
    }
}

fn round_sig(v: f64) -> f64 {
    format!("{v:.11e}").parse().unwrap_or(v)
}

impl FromStr for Ladder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("ladder", format!("`{t}` is not a number")))
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.len() {
            1 => Ok(Ladder(s.split(',').map(num).collect::<Result<_>>()?)),
            3 => {
                let count: usize = parts[2]
                    .trim()
                    .parse()
                    .map_err(|_| Error::config("ladder", "count must be a positive integer"))?;
                Ladder::geometric(num(parts[0])?, num(parts[1])?, count)
            }
            _ => Err(Error::config("ladder", "expected `lo:hi:count` or a comma-separated list")),
        }
    }
}

impl Serialize for Ladder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ladder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            List(Vec<f64>),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::List(v) => Ok(Ladder(v)),
        }
    }
}

/// Closed interval written `lo:hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for Span {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::config("range", "expected `lo:hi`"))?;
        let p = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("range", format!("`{t}` is not a number")))
        };
        Ok(Span { lo: p(a)?, hi: p(b)? })
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Built-in models addressable by short name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Torus2,
    Torus3,
    Sphere2,
    Sphere3,
    Cylinder,
    Disc,
    Patch,
}

impl ModelName {
    /// `a` is the cylinder height; other models ignore it.
    pub fn build(self, a: f64) -> Result<ChartedManifold> {
        match self {
            ModelName::Torus2 => ChartedManifold::flat_torus(&[2.0 * PI; 2]),
            ModelName::Torus3 => ChartedManifold::flat_torus(&[2.0 * PI; 3]),
            ModelName::Sphere2 => ChartedManifold::round_sphere(2),
            ModelName::Sphere3 => ChartedManifold::round_sphere(3),
            ModelName::Cylinder => ChartedManifold::flat_cylinder(a),
            ModelName::Disc => ChartedManifold::euclidean_disc(1.0),
            ModelName::Patch => Ok(ChartedManifold::sphere_polar_patch()),
        }
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(json!(s)).map_err(|_| {
            Error::config("model", format!("unknown model `{s}` (torus2, torus3, sphere2, sphere3, cylinder, disc, patch)"))
        })
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be positive and finite"))
    }
}

// ---------------------------------------------------------------------------
// configurations

/// Top-level document: `{"seed": 7, "run": {"weyl": {...}}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; not part of the echoed configuration.
    #[serde(default, skip_serializing)]
    pub output: Option<String>,
    pub run: Experiment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Resolvent(ResolventConfig),
    Weyl(WeylConfig),
    Beam(BeamConfig),
    StationaryPhase(StationaryConfig),
    Recover(RecoverConfig),
    H1Check(H1Config),
    Conjugate(ConjugateConfig),
    Boundary(BoundaryConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Resolvent(_) => "resolvent",
            Experiment::Weyl(_) => "weyl",
            Experiment::Beam(_) => "beam",
            Experiment::StationaryPhase(_) => "stationary-phase",
            Experiment::Recover(_) => "recover",
            Experiment::H1Check(_) => "h1-check",
            Experiment::Conjugate(_) => "conjugate",
            Experiment::Boundary(_) => "boundary",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolventConfig {
    pub model: ModelName,
    pub delta: f64,
    pub eps: f64,
    pub range: Span,
    pub samples: usize,
    /// Spectrum cutoff; defaults to the smallest value the construction needs.
    pub spectrum_max: Option<f64>,
    pub measure_max: f64,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        ResolventConfig {
            model: ModelName::Torus2,
            delta: 0.5,
            eps: 0.5,
            range: Span { lo: 1.0, hi: 50.0 },
            samples: 200,
            spectrum_max: None,
            measure_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeylConfig {
    pub model: ModelName,
    pub h: Vec<f64>,
    /// Allowed max/min ratio of `count·hⁿ` across `h`.
    pub band: f64,
}

impl Default for WeylConfig {
    fn default() -> Self {
        WeylConfig {
            model: ModelName::Torus2,
            h: vec![0.125, 0.0625, 0.03125, 0.015625],
            band: 4.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub model: ModelName,
    pub a: f64,
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
    pub delta1: f64,
    pub ladder: Ladder,
    /// Norm grid nodes per Gaussian width `λ^{−1/2}`.
    pub points_per_width: f64,
    pub norm_band: f64,
    pub residual_slope_max: f64,
    pub structure_tol: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            model: ModelName::Cylinder,
            a: 1.0,
            point: vec![PI, 0.5],
            direction: vec![0.0, 1.0],
            delta1: 4.0,
            ladder: Ladder(vec![40.0, 80.0, 160.0, 320.0]),
            points_per_width: 8.0,
            norm_band: 2.0,
            residual_slope_max: -1.0,
            structure_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryConfig {
    pub alpha: f64,
    pub ladder: Ladder,
    /// Coefficient of the cubic term in `Ψ = |x|²/2 + κ x₁³`.
    pub kappa: f64,
    pub radius: f64,
    pub holder_per_axis: usize,
    pub points_per_width: f64,
    pub tail: f64,
    pub holder_slope: [f64; 2],
    pub smooth_slope_max: f64,
    pub leading_tol: f64,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        StationaryConfig {
            alpha: 0.5,
            ladder: Ladder(vec![100.0, 316.227766017, 1000.0, 3162.27766017, 10000.0]),
            kappa: 0.1,
            radius: 1.0,
            holder_per_axis: 41,
            points_per_width: 16.0,
            tail: 160.0,
            holder_slope: [-0.6, -0.2],
            smooth_slope_max: -0.45,
            leading_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverConfig {
    pub model: ModelName,
    pub a: f64,
    pub point: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub delta1: f64,
    /// Defaults to a bump of radius 0.35 centred at `point`.
    pub potential: Option<PotentialSpec>,
    pub alpha: f64,
    pub ladder: Ladder,
    pub points_per_width: f64,
    pub tail: f64,
    pub rel_error_max: f64,
    pub slope_max: f64,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        RecoverConfig {
            model: ModelName::Cylinder,
            a: 1.0,
            point: vec![PI, 0.5],
            u: vec![1.0, 1.0],
            w: vec![-1.0, 1.0],
            delta1: 1.2,
            potential: None,
            alpha: 0.9,
            ladder: Ladder(vec![40.0, 80.0, 160.0, 320.0]),
            points_per_width: 12.0,
            tail: 36.0,
            rel_error_max: 0.2,
            slope_max: -0.4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct H1Config {
    pub model: ModelName,
    pub a: f64,
    pub samples: usize,
    /// Minimum distance of sample points from `∂M`.
    pub margin: f64,
    pub angles: usize,
    pub theta0_tol: f64,
    pub c0_factor: f64,
    pub bound_tol: f64,
    /// Rotation angle, radius and grid of the local separation check.
    pub sep_theta: f64,
    pub sep_rho: f64,
    pub sep_grid: f64,
}

impl Default for H1Config {
    fn default() -> Self {
        H1Config {
            model: ModelName::Cylinder,
            a: 1.0,
            samples: 100,
            margin: 0.05,
            angles: 8,
            theta0_tol: 1e-6,
            c0_factor: 1.05,
            bound_tol: 1e-6,
            sep_theta: PI / 4.0,
            sep_rho: 1.0,
            sep_grid: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjugateConfig {
    pub model: ModelName,
    pub a: f64,
    /// Defaults to `(0.2, 0.3, 0.1, …)` truncated to the dimension.
    pub point: Option<Vec<f64>>,
    pub directions: usize,
    pub cap: f64,
    pub rel_tol: f64,
    pub fd_step: f64,
    pub fd_times: Vec<f64>,
    pub time_tol: f64,
    pub dexp_tol: f64,
}

impl Default for ConjugateConfig {
    fn default() -> Self {
        ConjugateConfig {
            model: ModelName::Sphere2,
            a: 1.0,
            point: None,
            directions: 8,
            cap: 4.0,
            rel_tol: crate::jacobi::CONJUGACY_REL_TOL,
            fd_step: 1e-4,
            fd_times: vec![0.5, 1.0, 1.5],
            time_tol: 1e-6,
            dexp_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub n: usize,
    /// Expressions in `x, y, z`; the last coordinate is the normal one.
    pub q: String,
    pub u3: String,
    pub u4: String,
    pub center: Option<Vec<f64>>,
    /// Concentration scales, visited from largest to smallest.
    pub mu: Ladder,
    pub alpha: f64,
    pub tangential_intervals: usize,
    pub normal_per_mu: f64,
    pub normal_extent: f64,
    pub tolerance: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        let o = BoundaryOptions::default();
        BoundaryConfig {
            n: 2,
            q: "1".into(),
            u3: "1".into(),
            u4: "1".into(),
            center: None,
            mu: Ladder(vec![0.001, 0.00316227766017, 0.01, 0.0316227766017, 0.1]),
            alpha: o.alpha,
            tangential_intervals: o.tangential_intervals,
            normal_per_mu: o.normal_per_mu,
            normal_extent: o.normal_extent,
            tolerance: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(src: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(src)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.run {
            Experiment::Resolvent(c) => {
                positive("delta", c.delta)?;
                positive("eps", c.eps)?;
                positive("measure_max", c.measure_max)?;
                if let Some(s) = c.spectrum_max {
                    positive("spectrum_max", s)?;
                }
                if !(c.range.lo >= 1.0 && c.range.hi > c.range.lo && c.range.hi.is_finite()) {
                    return Err(Error::config("range", "need 1 ≤ lo < hi"));
                }
                if c.samples == 0 {
                    return Err(Error::config("samples", "must be positive"));
                }
            }
            Experiment::Weyl(c) => {
                positive("band", c.band)?;
                if c.h.is_empty() {
                    return Err(Error::config("h", "need at least one value"));
                }
                for h in &c.h {
                    positive("h", *h)?;
                }
            }
            Experiment::Beam(c) => {
                positive("a", c.a)?;
                positive("delta1", c.delta1)?;
                positive("points_per_width", c.points_per_width)?;
                positive("norm_band", c.norm_band)?;
                positive("structure_tol", c.structure_tol)?;
                c.ladder.validate("ladder")?;
            }
            Experiment::StationaryPhase(c) => {
                if !(c.alpha > 0.0 && c.alpha < 1.0) {
                    return Err(Error::config("alpha", "must lie in (0, 1)"));
                }
                positive("radius", c.radius)?;
                positive("points_per_width", c.points_per_width)?;
                positive("tail", c.tail)?;
                positive("leading_tol", c.leading_tol)?;
                if !c.kappa.is_finite() {
                    return Err(Error::config("kappa", "must be finite"));
                }
                if c.holder_per_axis < 2 {
                    return Err(Error::config("holder_per_axis", "need at least 2"));
                }
                if !(c.holder_slope[0] < c.holder_slope[1]) {
                    return Err(Error::config("holder_slope", "need lo < hi"));
                }
                c.ladder.validate("ladder")?;
            }
            Experiment::Recover(c) => {
                positive("a", c.a)?;
                positive("delta1", c.delta1)?;
                positive("points_per_width", c.points_per_width)?;
                positive("tail", c.tail)?;
                positive("rel_error_max", c.rel_error_max)?;
                if !(c.alpha > 0.0 && c.alpha <= 1.0) {
                    return Err(Error::config("alpha", "must lie in (0, 1]"));
                }
                c.ladder.validate("ladder")?;
            }
            Experiment::H1Check(c) => {
                positive("a", c.a)?;
                positive("margin", c.margin)?;
                positive("theta0_tol", c.theta0_tol)?;
                positive("c0_factor", c.c0_factor)?;
                positive("bound_tol", c.bound_tol)?;
                positive("sep_theta", c.sep_theta)?;
                positive("sep_rho", c.sep_rho)?;
                positive("sep_grid", c.sep_grid)?;
                if c.samples == 0 {
                    return Err(Error::config("samples", "must be positive"));
                }
            }
            Experiment::Conjugate(c) => {
                positive("a", c.a)?;
                positive("cap", c.cap)?;
                positive("rel_tol", c.rel_tol)?;
                positive("fd_step", c.fd_step)?;
                positive("time_tol", c.time_tol)?;
                positive("dexp_tol", c.dexp_tol)?;
                if c.directions == 0 {
                    return Err(Error::config("directions", "must be positive"));
                }
            }
            Experiment::Boundary(c) => {
                if !(2..=3).contains(&c.n) {
                    return Err(Error::config("n", "must be 2 or 3"));
                }
                positive("tolerance", c.tolerance)?;
                positive("normal_per_mu", c.normal_per_mu)?;
                positive("normal_extent", c.normal_extent)?;
                c.mu.validate("mu")?;
                if c.mu.0.iter().any(|m| *m >= 1.0) {
                    return Err(Error::config("mu", "scales must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// runners

/// Report plus every artifact (including `report.json`).
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub artifacts: Artifacts,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let (checks, data, mut artifacts) = match &cfg.run {
        Experiment::Resolvent(c) => run_resolvent(c, cfg.seed)?,
        Experiment::Weyl(c) => run_weyl(c)?,
        Experiment::Beam(c) => run_beam(c)?,
        Experiment::StationaryPhase(c) => run_stationary(c)?,
        Experiment::Recover(c) => run_recover(c)?,
        Experiment::H1Check(c) => run_h1(c, cfg.seed)?,
        Experiment::Conjugate(c) => run_conjugate(c)?,
        Experiment::Boundary(c) => run_boundary(c)?,
    };
    let report = Report::new(cfg.run.name(), cfg.seed, serde_json::to_value(cfg)?, checks, data);
    artifacts.add("report.json", to_json(&report)?);
    Ok(Outcome { report, artifacts })
}

type Run = (Vec<Check>, serde_json::Value, Artifacts);

fn band(values: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

#[derive(Serialize)]
struct SpectrumRow {
    value: f64,
    multiplicity: u64,
}

fn spectrum_csv(spec: &crate::spectral::SpectrumTable) -> Result<String> {
    let rows: Vec<SpectrumRow> = spec
        .entries
        .iter()
        .map(|e| SpectrumRow {
            value: e.value,
            multiplicity: e.multiplicity,
        })
        .collect();
    to_csv(&rows)
}

#[derive(Serialize)]
struct ResolventRow {
    lambda: f64,
    distance: f64,
    resolvent_norm: f64,
    bound: f64,
    ratio: f64,
}

fn run_resolvent(c: &ResolventConfig, seed: u64) -> Result<Run> {
    let m = c.model.build(1.0)?;
    let model = SpectrumModel::from_manifold(&m)?;
    let n = model.dim() as f64;
    let top = (c.range.hi * c.range.hi).log2().floor().max(0.0) as i32;
    let smax = c.spectrum_max.unwrap_or(2f64.powi(top + 2));
    let spec = spectrum(&model, smax)?;
    let bad = build_bad_set(&spec, c.delta, c.eps, c.range.hi)?;
    let samples = sample_outside(&bad, c.range.lo, c.range.hi, c.samples, seed);
    let bound = verify_polynomial_bound(&spec, &bad, &samples, c.eps)?;
    let mut rows = Vec::with_capacity(samples.len());
    for &l in &samples {
        let (d, _) = spec.distance(l * l)?;
        let r = spec.resolvent_norm(l * l)?.norm();
        let b = bad.constant * l.powf(n + c.eps);
        rows.push(ResolventRow {
            lambda: l,
            distance: d,
            resolvent_norm: r,
            bound: b,
            ratio: r / b,
        });
    }
    let measure = bad.measure_below(c.range.hi) - bad.measure_below(c.range.lo);
    let checks = vec![
        Check::at_most("bad_set_measure", measure, c.measure_max + 1e-9),
        Check::at_most("bound_violations", bound.violations as f64, 0.0),
        Check::at_most("radius_violations", bound.radius_violations as f64, 0.0),
    ];
    let mut art = Artifacts::default();
    art.add("spectrum.csv", spectrum_csv(&spec)?);
    art.add("bad_set.json", to_json(&bad)?);
    art.add("resolvent.csv", to_csv(&rows)?);
    art.add(
        "resolvent.svg",
        loglog_svg(
            "Resolvent norm off the bad set",
            "λ",
            "‖R(λ²)‖",
            &[
                Series {
                    label: "‖R(λ²)‖".into(),
                    points: rows.iter().map(|r| (r.lambda, r.resolvent_norm)).collect(),
                    scatter: true,
                },
                Series {
                    label: "C λ^(n+ε)".into(),
                    points: rows.iter().map(|r| (r.lambda, r.bound)).collect(),
                    scatter: false,
                },
            ],
        ),
    );
    let data = json!({
        "spectrum_max": smax,
        "measure": measure,
        "intervals": bad.intervals.len(),
        "constant": bad.constant,
        "bound": bound,
    });
    Ok((checks, data, art))
}

fn run_weyl(c: &WeylConfig) -> Result<Run> {
    let m = c.model.build(1.0)?;
    let model = SpectrumModel::from_manifold(&m)?;
    let hmin = c.h.iter().copied().fold(f64::INFINITY, f64::min);
    let spec = spectrum(&model, 2.0 / (hmin * hmin))?;
    let rows: Vec<_> = c.h.iter().map(|h| weyl_count(&spec, *h)).collect::<Result<_>>()?;
    let spread = band(rows.iter().map(|r| r.ratio));
    let checks = vec![Check::at_most("weyl_band", spread, c.band)];
    let mut art = Artifacts::default();
    art.add("weyl.csv", to_csv(&rows)?);
    art.add("spectrum.csv", spectrum_csv(&spec)?);
    Ok((checks, json!({ "counts": rows, "band": spread }), art))
}

#[derive(Serialize)]
struct BeamRow {
    lambda: f64,
    l2: f64,
    l4: f64,
    linf: f64,
    l4_ratio: f64,
    linf_ratio: f64,
    residual_ratio: f64,
}

#[derive(Serialize)]
struct RiccatiRow {
    t: f64,
    tau: f64,
    trace_re: f64,
    trace_im: f64,
    min_im_eigenvalue: f64,
    a0_abs: f64,
}

/// Largest entry deviation of `H` from its closed form on flat and unit
/// sphere models with the identity seed.
fn riccati_defect(b: &BeamProfile) -> Option<f64> {
    let m = b.manifold();
    let k = m.constant_curvature()?;
    let n1 = m.dim() - 1;
    let i = Complex64::new(0.0, 1.0);
    let seeded = (0..n1).all(|r| (0..n1).all(|s| b.h0[(r, s)] == if r == s { i } else { Complex64::new(0.0, 0.0) }));
    if !seeded || !(k == 0.0 || k == 1.0) {
        return None;
    }
    let mut worst = 0.0f64;
    for s in &b.samples {
        let tau = s.t - b.t_origin;
        let want = if k == 0.0 { 1.0 / Complex64::new(tau, -1.0) } else { i };
        for r in 0..n1 {
            for q in 0..n1 {
                let w = if r == q { want } else { Complex64::new(0.0, 0.0) };
                worst = worst.max((s.h[(r, q)] - w).norm());
            }
        }
    }
    Some(worst)
}

fn run_beam(c: &BeamConfig) -> Result<Run> {
    let m = c.model.build(c.a)?;
    if c.point.len() != m.dim() || c.direction.len() != m.dim() {
        return Err(Error::config("point", format!("need {} coordinates", m.dim())));
    }
    let x = Point::new(c.point.clone());
    let v = m.normalize(&x.x, &c.direction);
    let path = integrate_geodesic(&m, &x, &v, &GeodesicOptions::default())?;
    let base = BeamProfile::with_identity_seed(path, c.ladder.0[0], c.delta1)?;
    let (lo, hi) = m.box_bounds();
    let mut rows = Vec::new();
    for &lambda in &c.ladder.0 {
        let b = base.at_frequency(lambda);
        let grid = Grid::with_spacing(lo.to_vec(), hi.to_vec(), lambda.powf(-0.5) / c.points_per_width);
        let norms = beam_norms(&b, &grid)?;
        let res = residual_norm(&b)?;
        rows.push(BeamRow {
            lambda,
            l2: norms.l2,
            l4: norms.l4,
            linf: norms.linf,
            l4_ratio: norms.l4_ratio,
            linf_ratio: norms.linf_ratio,
            residual_ratio: res.ratio,
        });
    }
    let lam: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let res: Vec<f64> = rows.iter().map(|r| r.residual_ratio).collect();
    let slope = if rows.len() >= 2 {
        loglog_fit(&lam, &res).map_or(f64::NAN, |f| f.slope)
    } else {
        f64::NAN
    };
    let riccati: Vec<RiccatiRow> = base
        .samples
        .iter()
        .map(|s| RiccatiRow {
            t: s.t,
            tau: s.t - base.t_origin,
            trace_re: s.h.trace().re,
            trace_im: s.h.trace().im,
            min_im_eigenvalue: min_eig(&s.h.map(|z| z.im)),
            a0_abs: s.a0.norm(),
        })
        .collect();
    let mut checks = vec![
        Check::at_most("l4_ratio_band", band(rows.iter().map(|r| r.l4_ratio)), c.norm_band),
        Check::at_most("linf_ratio_band", band(rows.iter().map(|r| r.linf_ratio)), c.norm_band),
        Check::at_most("residual_slope", slope, c.residual_slope_max),
        Check::positive("min_im_eigenvalue", base.min_im_eigenvalue()),
        Check::at_most("amplitude_consistency", base.amplitude_consistency(), c.structure_tol),
        Check::at_most("symmetry_defect", base.symmetry_defect(), c.structure_tol),
    ];
    let defect = riccati_defect(&base);
    if let Some(d) = defect {
        checks.push(Check::at_most("riccati_closed_form", d, c.structure_tol));
    }
    let mut art = Artifacts::default();
    art.add("beam.csv", to_csv(&rows)?);
    art.add("riccati.csv", to_csv(&riccati)?);
    art.add(
        "residual.svg",
        loglog_svg(
            "Normalised Helmholtz residual",
            "λ",
            "ρ(λ)",
            &[Series {
                label: "ρ(λ)".into(),
                points: lam.iter().copied().zip(res.iter().copied()).collect(),
                scatter: false,
            }],
        ),
    );
    let data = json!({
        "residual_slope": slope,
        "t_origin": base.t_origin,
        "t_end": base.t_end,
        "min_im_eigenvalue": base.min_im_eigenvalue(),
        "amplitude_consistency": base.amplitude_consistency(),
        "riccati_defect": defect,
    });
    Ok((checks, data, art))
}

#[derive(Serialize)]
struct RemainderCsv {
    amplitude: &'static str,
    lambda: f64,
    integral_re: f64,
    integral_im: f64,
    leading_re: f64,
    remainder: f64,
    quadrature_error: f64,
    constant: f64,
    used: bool,
}

#[derive(Serialize)]
struct QuadraticRow {
    lambda: f64,
    value: f64,
    rel_error: f64,
}

fn run_stationary(c: &StationaryConfig) -> Result<Run> {
    let opts = QuadratureOptions {
        points_per_width: c.points_per_width,
        tail: c.tail,
    };
    let phase = PhaseModel::new(cubic_phase(c.kappa), Mat::identity(2, 2), c.radius)?;
    let quad = PhaseModel::new(cubic_phase(0.0), Mat::identity(2, 2), c.radius)?;
    let one: Amplitude = Arc::new(|_| Complex64::new(1.0, 0.0));
    let mut quadratic = Vec::new();
    for &lambda in &c.ladder.0 {
        let v = oscillatory_integral(&quad, &one, lambda, &opts)?.value.re;
        quadratic.push(QuadraticRow {
            lambda,
            value: v,
            rel_error: (v - 2.0 * PI).abs() / (2.0 * PI),
        });
    }
    let s = smooth_bump(c.radius);
    let smooth: Amplitude = Arc::new(move |x| Complex64::new(s(x), 0.0));
    let smooth_fit = remainder_rate(&phase, &smooth, 1.0, c.alpha, &c.ladder.0, &opts)?;
    let h = holder_amplitude(c.alpha, c.radius);
    let hf = HolderFunction::on_ball(2, c.radius, c.holder_per_axis, c.alpha, &h)?;
    let hnorm = holder_norm(&hf)?.norm;
    let holder: Amplitude = Arc::new(move |x| Complex64::new(h(x), 0.0));
    let holder_fit = remainder_rate(&phase, &holder, hnorm, c.alpha, &c.ladder.0, &opts)?;
    let mut rows = Vec::new();
    for (name, fit) in [("smooth", &smooth_fit), ("holder", &holder_fit)] {
        for r in &fit.rows {
            rows.push(RemainderCsv {
                amplitude: name,
                lambda: r.lambda,
                integral_re: r.integral.re,
                integral_im: r.integral.im,
                leading_re: r.leading.re,
                remainder: r.remainder,
                quadrature_error: r.quadrature_error,
                constant: r.constant,
                used: r.used,
            });
        }
    }
    let checks = vec![
        Check::at_most(
            "quadratic_leading_term",
            quadratic.iter().map(|q| q.rel_error).fold(0.0, f64::max),
            c.leading_tol,
        ),
        Check::within("holder_slope", holder_fit.slope(), c.holder_slope[0], c.holder_slope[1]),
        Check::at_most("smooth_slope", smooth_fit.slope(), c.smooth_slope_max),
    ];
    let series = |label: &str, fit: &crate::stationary::RemainderFit| Series {
        label: label.into(),
        points: fit.rows.iter().map(|r| (r.lambda, r.remainder)).collect(),
        scatter: false,
    };
    let mut art = Artifacts::default();
    art.add("remainder.csv", to_csv(&rows)?);
    art.add("quadratic.csv", to_csv(&quadratic)?);
    art.add(
        "remainder.svg",
        loglog_svg(
            "Stationary phase remainder",
            "λ",
            "|I(λ) − leading|",
            &[series("smooth", &smooth_fit), series("Hölder", &holder_fit)],
        ),
    );
    let data = json!({
        "expected_holder_slope": -c.alpha / 2.0,
        "holder_norm": hnorm,
        "smooth": smooth_fit,
        "holder": holder_fit,
    });
    Ok((checks, data, art))
}

fn run_recover(c: &RecoverConfig) -> Result<Run> {
    let m = c.model.build(c.a)?;
    let n = m.dim();
    if c.point.len() != n || c.u.len() != n || c.w.len() != n {
        return Err(Error::config("point", format!("point, u and w need {n} coordinates")));
    }
    let x0 = Point::new(c.point.clone());
    let spec = c.potential.clone().unwrap_or(PotentialSpec::Bump {
        center: c.point.clone(),
        radius: 0.35,
        amplitude: 1.0,
    });
    let p = PotentialField::new(&m, spec, c.alpha)?;
    let (v, w) = beam_pair(&m, &x0, &c.u, &c.w, c.ladder.0[0], c.delta1)?;
    let opts = ProductOptions {
        points_per_width: c.points_per_width,
        tail: c.tail,
        ..ProductOptions::default()
    };
    let rep = error_decay(&p, &v, &w, &x0, &c.ladder.0, &opts)?;
    let last = rep.rows.last().map_or(f64::NAN, |r| r.rel_error);
    let checks = vec![
        Check::at_most("final_rel_error", last, c.rel_error_max),
        Check::at_most("error_slope", rep.slope(), c.slope_max),
    ];
    let mut art = Artifacts::default();
    art.add("recovery.csv", to_csv(&rep.rows)?);
    art.add("recovery.json", to_json(&rep)?);
    art.add(
        "decay.svg",
        loglog_svg(
            "Point-value recovery error",
            "λ",
            "|p̂(x₀) − p(x₀)|",
            &[Series {
                label: "error".into(),
                points: rep.rows.iter().map(|r| (r.lambda, r.abs_error)).collect(),
                scatter: false,
            }],
        ),
    );
    let data = json!({
        "slope": rep.slope(),
        "theta": rep.theta,
        "coercivity": rep.coercivity,
        "frequency": p.frequency,
        "warnings": rep.warnings,
    });
    Ok((checks, data, art))
}

#[derive(Serialize)]
struct SurveyRow {
    index: usize,
    x0: f64,
    x1: f64,
    x2: Option<f64>,
    on_boundary: bool,
    witness: bool,
    theta_min: Option<f64>,
    c0: f64,
    bound_violation: Option<f64>,
}

#[derive(Serialize)]
struct SeparationRow {
    index: usize,
    x0: f64,
    x1: f64,
    c: f64,
    t: f64,
    tau: f64,
}

fn run_h1(c: &H1Config, seed: u64) -> Result<Run> {
    let m = c.model.build(c.a)?;
    let mut art = Artifacts::default();
    if c.model == ModelName::Patch {
        // the ρ-ball around each point must stay inside the band
        let points = sample_interior(&m, c.samples, c.margin.max(c.sep_rho + 0.01), seed);
        let mut rows = Vec::with_capacity(points.len());
        for (index, x) in points.iter().enumerate() {
            let u = m.normalize(&x.x, &[1.0, 0.0]);
            let r = verify_separation(&m, x, &u, c.sep_theta, c.sep_rho, c.sep_grid)?;
            rows.push(SeparationRow {
                index,
                x0: x.x[0],
                x1: x.x[1],
                c: r.c,
                t: r.at.0,
                tau: r.at.1,
            });
        }
        let cmin = rows.iter().map(|r| r.c).fold(f64::INFINITY, f64::min);
        art.add("separation.csv", to_csv(&rows)?);
        let checks = vec![Check::positive("separation_constant", cmin)];
        return Ok((checks, json!({ "c_min": cmin, "points": rows.len() }), art));
    }
    let points = sample_interior(&m, c.samples, c.margin, seed);
    let survey = h1_survey(
        &m,
        &points,
        &SurveyOptions {
            angles: c.angles,
            ..SurveyOptions::default()
        },
    )?;
    let rows: Vec<SurveyRow> = survey
        .points
        .iter()
        .map(|p| SurveyRow {
            index: p.index,
            x0: p.x[0],
            x1: p.x[1],
            x2: p.x.get(2).copied(),
            on_boundary: p.on_boundary,
            witness: p.witness,
            theta_min: p.theta.iter().copied().reduce(f64::min),
            c0: p.c0,
            bound_violation: p.bound_violation,
        })
        .collect();
    let mut checks = vec![Check::at_least("coverage", survey.coverage, 1.0)];
    if let Some(cyl) = &survey.cylinder {
        checks.push(Check::at_most(
            "theta0_error",
            (survey.theta0 - cyl.theta0_formula).abs(),
            c.theta0_tol,
        ));
        checks.push(Check::at_most("c0", survey.c0, c.c0_factor * cyl.c0_formula));
        checks.push(Check::at_most(
            "bound_violation",
            survey.max_bound_violation.unwrap_or(f64::INFINITY),
            c.bound_tol,
        ));
    }
    art.add("survey.csv", to_csv(&rows)?);
    art.add("survey.json", to_json(&survey)?);
    let data = json!({
        "t": survey.t,
        "theta0": survey.theta0,
        "r": survey.r,
        "c0": survey.c0,
        "coverage": survey.coverage,
        "incomplete": survey.incomplete,
        "cylinder": survey.cylinder,
    });
    Ok((checks, data, art))
}

#[derive(Serialize)]
struct ConjugateRow {
    direction: usize,
    t: f64,
    order: usize,
    sigma_min: f64,
    scale: f64,
}

#[derive(Serialize)]
struct DexpRow {
    t: f64,
    rel_error: f64,
}

fn run_conjugate(c: &ConjugateConfig) -> Result<Run> {
    let m = c.model.build(c.a)?;
    let n = m.dim();
    let x = Point::new(match &c.point {
        Some(p) if p.len() == n => p.clone(),
        Some(_) => return Err(Error::config("point", format!("need {n} coordinates"))),
        None => [0.2, 0.3, 0.1][..n].to_vec(),
    });
    let opts = GeodesicOptions {
        t_max: Some(c.cap),
        stop_at_boundary: false,
        ..Default::default()
    };
    let dirs = direction_grid(&m, &x.x, c.directions);
    let mut rows = Vec::new();
    for (k, v) in dirs.iter().enumerate() {
        let path = integrate_geodesic(&m, &x, v, &opts)?;
        let sol = jacobi_along(&path, Some(c.cap))?;
        for p in conjugate_points(&sol, c.rel_tol)? {
            rows.push(ConjugateRow {
                direction: k,
                t: p.t,
                order: p.order,
                sigma_min: p.sigma_min,
                scale: p.scale,
            });
        }
    }
    let path = integrate_geodesic(&m, &x, &dirs[0], &opts)?;
    let sol = jacobi_along(&path, Some(c.cap))?;
    let mut dexp = Vec::new();
    for &t in c.fd_times.iter().filter(|t| **t > 0.0 && **t < c.cap) {
        let fd = dexp_finite_difference(&m, &x, &dirs[0], t, c.fd_step)?;
        let b = sol.exact(t)?.b;
        dexp.push(DexpRow {
            t,
            rel_error: (&fd - &b).amax() / b.amax(),
        });
    }
    let order = rows.iter().map(|r| r.order).max().unwrap_or(0);
    let mut checks = vec![Check::at_most(
        "dexp_rel_error",
        dexp.iter().map(|d| d.rel_error).fold(0.0, f64::max),
        c.dexp_tol,
    )];
    let kappa = m.constant_curvature();
    if let Some(k) = kappa {
        let expected = if k > 0.0 { n - 1 } else { 0 };
        checks.push(Check::within("order", order as f64, expected as f64, expected as f64));
        if k > 0.0 {
            let first = PI / k.sqrt();
            let mut worst = 0.0f64;
            for d in 0..dirs.len() {
                let t = rows.iter().find(|r| r.direction == d).map_or(f64::INFINITY, |r| r.t);
                worst = worst.max((t - first).abs());
            }
            checks.push(Check::at_most("first_conjugate_time_error", worst, c.time_tol));
        }
    }
    let mut art = Artifacts::default();
    art.add("conjugate.csv", to_csv(&rows)?);
    art.add("dexp.csv", to_csv(&dexp)?);
    let data = json!({ "order": order, "curvature": kappa, "directions": dirs.len() });
    Ok((checks, data, art))
}

fn run_boundary(c: &BoundaryConfig) -> Result<Run> {
    const VARS: [&str; 3] = ["x", "y", "z"];
    let vars = &VARS[..c.n];
    let parse = |field: &str, s: &str| {
        Expr::parse(s, vars).map_err(|e| Error::config(field, e.to_string()))
    };
    let (q, u3, u4) = (parse("q", &c.q)?, parse("u3", &c.u3)?, parse("u4", &c.u4)?);
    let center = match &c.center {
        Some(v) if v.len() == c.n - 1 => v.clone(),
        Some(_) => return Err(Error::config("center", format!("need {} tangential coordinates", c.n - 1))),
        None => vec![0.0; c.n - 1],
    };
    let mus: Vec<f64> = c.mu.0.iter().rev().copied().collect();
    let opts = BoundaryOptions {
        alpha: c.alpha,
        tangential_intervals: c.tangential_intervals,
        normal_per_mu: c.normal_per_mu,
        normal_extent: c.normal_extent,
    };
    let rep = boundary_concentration(
        &|x| q.eval(x),
        &|x| u3.eval(x),
        &|x| u4.eval(x),
        &center,
        &mus,
        &opts,
    )?;
    let limit = rep.limit();
    let err = if rep.expected == 0.0 {
        limit.abs()
    } else {
        ((limit - rep.expected) / rep.expected).abs()
    };
    let checks = vec![Check::at_most("limit_error", err, c.tolerance)];
    let mut art = Artifacts::default();
    art.add("boundary.csv", to_csv(&rep.rows)?);
    art.add(
        "boundary.svg",
        loglog_svg(
            "Boundary concentration",
            "μ",
            "|value − expected|",
            &[Series {
                label: "error".into(),
                points: rep.rows.iter().map(|r| (r.mu, (r.value - rep.expected).abs())).collect(),
                scatter: false,
            }],
        ),
    );
    let data = json!({ "limit": limit, "expected": rep.expected, "aitken": rep.aitken, "richardson": rep.richardson });
    Ok((checks, data, art))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_forms() {
        let l: Ladder = "40:320:4".parse().unwrap();
        assert_eq!(l.0, vec![40.0, 80.0, 160.0, 320.0]);
        let l: Ladder = "1,2.5,3".parse().unwrap();
        assert_eq!(l.0, vec![1.0, 2.5, 3.0]);
        assert!("1:2".parse::<Ladder>().is_err());
        assert!("5:1:3".parse::<Ladder>().is_err());
        assert!(Ladder(vec![1.0, 1.0]).validate("ladder").is_err());
        let j: Ladder = serde_json::from_str("\"100:10000:3\"").unwrap();
        assert_eq!(j.0, vec![100.0, 1000.0, 10000.0]);
    }

    #[test]
    fn config_errors_name_the_field() {
        assert!(ExperimentConfig::from_json("{}").is_err());
        let e = ExperimentConfig::from_json(r#"{"run":{"weyl":{"band":-1}}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "band"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"run":{"recover":{"ladder":[80,40,160,320]}}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "ladder"), "{e}");
        assert!(ExperimentConfig::from_json(r#"{"run":{"weyl":{"bogus":1}}}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"seed":3,"run":{"boundary":{}}}"#).unwrap();
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn weyl_run_echoes_config() {
        let c = ExperimentConfig::from_json(r#"{"seed":9,"run":{"weyl":{"h":[0.125]}}}"#).unwrap();
        let out = run(&c).unwrap();
        assert!(out.report.pass);
        assert_eq!(out.report.config["run"]["weyl"]["h"][0], 0.125);
        assert_eq!(out.report.seed, 9);
        let csv = out.artifacts.get("weyl.csv").unwrap();
        assert!(csv.starts_with("h,count,ratio\n0.125,"));
        assert!(out.artifacts.get("report.json").unwrap().contains("\"seed\": 9"));
    }
}
