//! Exact Laplace spectra of flat tori and round spheres, resolvent norms, the
//! Weyl count and the bad frequency set off which the resolvent grows at most
//! polynomially.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{ChartedManifold, ModelTag};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpectrumModel {
    FlatTorus { periods: Vec<f64> },
    RoundSphere { n: usize },
}

impl SpectrumModel {
    pub fn from_manifold(m: &ChartedManifold) -> Result<Self> {
        match m.tag() {
            ModelTag::FlatTorus { periods } => Ok(SpectrumModel::FlatTorus { periods: periods.clone() }),
            ModelTag::RoundSphere { n } => Ok(SpectrumModel::RoundSphere { n: *n }),
            _ => Err(Error::Capability(format!("no closed-form spectrum for {}", m.tag_name()))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpectrumModel::FlatTorus { periods } => periods.len(),
            SpectrumModel::RoundSphere { n } => *n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub value: f64,
    pub multiplicity: u64,
}

/// Eigenvalues of `−Δ` up to `lambda_max`, sorted, with multiplicities.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumTable {
    pub model: SpectrumModel,
    pub entries: Vec<Eigenvalue>,
    pub lambda_max: f64,
}

fn sphere_multiplicity(l: u64, n: u64) -> u64 {
    // (2l+n−1)(l+n−2)!/(l!(n−1)!) = (2l+n−1)·C(l+n−2, n−2)/(n−1)
    let mut c: u128 = 1;
    for i in 1..=(n - 2) as u128 {
        c = c * (l as u128 + i) / i;
    }
    ((2 * l + n - 1) as u128 * c / (n - 1) as u128) as u64
}

fn lattice(periods: &[f64], lambda_max: f64) -> Vec<f64> {
    let freq: Vec<f64> = periods.iter().map(|l| 2.0 * PI / l).collect();
    let mut out = Vec::new();
    let mut stack = vec![(0usize, 0.0f64)];
    while let Some((d, acc)) = stack.pop() {
        if d == freq.len() {
            out.push(acc);
            continue;
        }
        let kmax = ((lambda_max - acc).max(0.0).sqrt() / freq[d]).floor() as i64;
        for k in -kmax..=kmax {
            let v = acc + (k as f64 * freq[d]).powi(2);
            if v <= lambda_max {
                stack.push((d + 1, v));
            }
        }
    }
    out
}

pub fn spectrum(model: &SpectrumModel, lambda_max: f64) -> Result<SpectrumTable> {
    if !(lambda_max >= 0.0 && lambda_max.is_finite()) {
        return Err(Error::Range("Λ_max must be finite and nonnegative".into()));
    }
    let entries = match model {
        SpectrumModel::FlatTorus { periods } => {
            if periods.is_empty() || periods.iter().any(|p| !(*p > 0.0)) {
                return Err(Error::Precondition("torus periods must be positive".into()));
            }
            let mut vals = lattice(periods, lambda_max);
            vals.sort_by(f64::total_cmp);
            let mut entries: Vec<Eigenvalue> = Vec::new();
            for v in vals {
                match entries.last_mut() {
                    Some(e) if (v - e.value).abs() <= 1e-12 * v.max(1.0) => e.multiplicity += 1,
                    _ => entries.push(Eigenvalue { value: v, multiplicity: 1 }),
                }
            }
            entries
        }
        SpectrumModel::RoundSphere { n } => {
            if *n < 2 {
                return Err(Error::Precondition("sphere dimension must be at least 2".into()));
            }
            let n = *n as u64;
            (0u64..)
                .map(|l| Eigenvalue {
                    value: (l * (l + n - 1)) as f64,
                    multiplicity: sphere_multiplicity(l, n),
                })
                .take_while(|e| e.value <= lambda_max)
                .collect()
        }
    };
    Ok(SpectrumTable {
        model: model.clone(),
        entries,
        lambda_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Resolvent {
    Finite { norm: f64, distance: f64, nearest: f64 },
    EigenvalueHit { eigenvalue: f64 },
}

impl Resolvent {
    pub fn norm(&self) -> f64 {
        match self {
            Resolvent::Finite { norm, .. } => *norm,
            Resolvent::EigenvalueHit { .. } => f64::INFINITY,
        }
    }
}

impl SpectrumTable {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Distance from `z` to the spectrum and the nearest eigenvalue; `z` must
    /// be far enough below `Λ_max` that no unlisted eigenvalue can be closer.
    pub fn distance(&self, z: f64) -> Result<(f64, f64)> {
        let i = self.entries.partition_point(|e| e.value < z);
        let mut best = (f64::INFINITY, f64::NAN);
        for j in [i.wrapping_sub(1), i] {
            if let Some(e) = self.entries.get(j) {
                let d = (e.value - z).abs();
                if d < best.0 {
                    best = (d, e.value);
                }
            }
        }
        if z + best.0 > self.lambda_max {
            return Err(Error::Range(format!("λ² = {z} is too close to Λ_max = {}", self.lambda_max)));
        }
        Ok(best)
    }

    /// `‖(−Δ − z)^{−1}‖ = 1/dist(z, Spec)`.
    pub fn resolvent_norm(&self, z: f64) -> Result<Resolvent> {
        let (d, e) = self.distance(z)?;
        if d <= 1e-12 * z.abs().max(1.0) {
            return Ok(Resolvent::EigenvalueHit { eigenvalue: e });
        }
        Ok(Resolvent::Finite {
            norm: 1.0 / d,
            distance: d,
            nearest: e,
        })
    }

    /// Eigenvalues in `[lo, hi]` counted with multiplicity.
    pub fn count_in(&self, lo: f64, hi: f64) -> u64 {
        let a = self.entries.partition_point(|e| e.value < lo);
        let b = self.entries.partition_point(|e| e.value <= hi);
        self.entries[a..b.max(a)].iter().map(|e| e.multiplicity).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeylCount {
    pub h: f64,
    pub count: u64,
    /// `count·hⁿ`.
    pub ratio: f64,
}

/// `#(Spec(−h²Δ) ∩ [1, 2])`.
pub fn weyl_count(spec: &SpectrumTable, h: f64) -> Result<WeylCount> {
    if !(h > 0.0) {
        return Err(Error::Precondition("h must be positive".into()));
    }
    let hi = 2.0 / (h * h);
    if spec.lambda_max < hi * (1.0 - 1e-12) {
        return Err(Error::Range(format!("Λ_max = {} is below 2/h² = {hi}", spec.lambda_max)));
    }
    let count = spec.count_in(1.0 / (h * h) * (1.0 - 1e-12), hi * (1.0 + 1e-12));
    Ok(WeylCount {
        h,
        count,
        ratio: count as f64 * h.powi(spec.dim() as i32),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BadLevel {
    pub level: u32,
    pub h: f64,
    /// Exclusion radius in the `λ²` variable.
    pub radius: f64,
    pub eigenvalues: u64,
}

/// Open intervals of `λ ∈ [1, λ_max]` around the square roots of eigenvalues.
#[derive(Debug, Clone, Serialize)]
pub struct BadSet {
    pub intervals: Vec<Interval>,
    pub measure: f64,
    /// Measure of the union in the `λ²` variable.
    pub measure_squared: f64,
    pub delta: f64,
    pub eps: f64,
    pub delta_prime: f64,
    pub eps_prime: f64,
    /// `max_l count_l · h_lⁿ` over the level windows.
    pub weyl_constant: f64,
    /// `C = 1/δ′` in `‖R(λ²)‖ ≤ C λ^{n+ε}` off the set.
    pub constant: f64,
    pub lambda_range: (f64, f64),
    pub levels: Vec<BadLevel>,
}

fn merge(mut v: Vec<Interval>) -> Vec<Interval> {
    v.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut out: Vec<Interval> = Vec::with_capacity(v.len());
    for i in v {
        match out.last_mut() {
            Some(last) if i.lo <= last.hi => last.hi = last.hi.max(i.hi),
            _ => out.push(i),
        }
    }
    out
}

/// Eigenvalue window attached to dyadic level `l`: eigenvalues of `−Δ` in
/// `[2^{l−1}, 2^{l+2}]`, so every `λ² ∈ [2^l, 2^{l+1})` is at least `2^{l−1}`
/// from any eigenvalue outside it.
fn level_window(l: u32) -> (f64, f64) {
    (2f64.powi(l as i32 - 1), 2f64.powi(l as i32 + 2))
}

impl BadSet {
    /// Membership in the union of intervals, open relative to `[1, ∞)`.
    pub fn contains(&self, lambda: f64) -> bool {
        let i = self.intervals.partition_point(|iv| iv.hi <= lambda);
        self.intervals
            .get(i)
            .is_some_and(|iv| (iv.lo < lambda || iv.lo == 1.0 && lambda == 1.0) && lambda < iv.hi)
    }

    /// Level and exclusion radius that apply at frequency `λ`.
    pub fn level_of(&self, lambda: f64) -> Option<&BadLevel> {
        let l = (lambda * lambda).log2().floor().max(0.0) as usize;
        self.levels.get(l)
    }

    /// `|J ∩ [1, Λ]|`.
    pub fn measure_below(&self, cap: f64) -> f64 {
        self.intervals.iter().map(|iv| (iv.hi.min(cap) - iv.lo.max(1.0)).max(0.0)).sum()
    }
}

/// Dyadic construction: at level `l` (`λ² ∈ [2^l, 2^{l+1})`, `h = 2^{−l/2}`)
/// every eigenvalue in the level window is surrounded by an open `λ²`-interval
/// of radius `2^l δ′ h^{n+ε′}` with `ε′ = 2 + ε`. `δ′ = δ(1 − 2^{−ε/2})/W`
/// keeps the `λ²`-measure below `2δ`, hence `|J| ≤ δ` since `λ ≥ 1`.
pub fn build_bad_set(spec: &SpectrumTable, delta: f64, eps: f64, lambda_max: f64) -> Result<BadSet> {
    if !(delta > 0.0 && eps > 0.0) {
        return Err(Error::Precondition("δ and ε must be positive".into()));
    }
    if !(lambda_max >= 1.0) {
        return Err(Error::Range("λ range must reach 1".into()));
    }
    let n = spec.dim() as i32;
    let top = (lambda_max * lambda_max).log2().floor().max(0.0) as u32;
    let needed = level_window(top).1;
    if spec.lambda_max < needed {
        return Err(Error::Range(format!(
            "Λ_max = {} does not cover the level window up to {needed}",
            spec.lambda_max
        )));
    }
    let eps_prime = 2.0 + eps;
    let mut weyl = 0.0f64;
    let mut counts = Vec::new();
    for l in 0..=top {
        let h = 2f64.powf(-(l as f64) / 2.0);
        let (lo, hi) = level_window(l);
        let c = spec.count_in(lo, hi);
        weyl = weyl.max(c as f64 * h.powi(n));
        counts.push((l, h, c));
    }
    let weyl = weyl.max(1e-300);
    let delta_prime = delta * (1.0 - 2f64.powf(-eps / 2.0)) / weyl;
    let mut squared = Vec::new();
    let mut lam = Vec::new();
    let mut levels = Vec::new();
    for &(l, h, c) in &counts {
        let radius = 2f64.powi(l as i32) * delta_prime * h.powf(n as f64 + eps_prime);
        let (wlo, whi) = level_window(l);
        let (blo, bhi) = (2f64.powi(l as i32), 2f64.powi(l as i32 + 1).min(lambda_max * lambda_max));
        let a = spec.entries.partition_point(|e| e.value < wlo);
        for e in spec.entries[a..].iter().take_while(|e| e.value <= whi) {
            let lo = (e.value - radius).max(blo);
            let hi = (e.value + radius).min(bhi);
            if hi > lo {
                squared.push(Interval { lo, hi });
                lam.push(Interval {
                    lo: lo.sqrt(),
                    hi: hi.sqrt(),
                });
            }
        }
        levels.push(BadLevel {
            level: l,
            h,
            radius,
            eigenvalues: c,
        });
    }
    let squared = merge(squared);
    let intervals = merge(lam);
    Ok(BadSet {
        measure: intervals.iter().map(Interval::len).sum(),
        measure_squared: squared.iter().map(Interval::len).sum(),
        intervals,
        delta,
        eps,
        delta_prime,
        eps_prime,
        weyl_constant: weyl,
        constant: 1.0 / delta_prime,
        lambda_range: (1.0, lambda_max),
        levels,
    })
}

/// Uniform samples of `[lo, hi] ∖ J` by rejection.
pub fn sample_outside(bad: &BadSet, lo: f64, hi: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let l = rng.random_range(lo..=hi);
        if !bad.contains(l) {
            out.push(l);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    /// `max ‖R(λ²)‖ λ^{−(n+ε)}` over the samples.
    pub max_ratio: f64,
    pub witness: f64,
    pub constant: f64,
    /// Samples with ratio above the construction constant.
    pub violations: usize,
    /// Samples with `dist(λ², Spec) < r(h(λ))`.
    pub radius_violations: usize,
    pub samples: usize,
}

pub fn verify_polynomial_bound(spec: &SpectrumTable, bad: &BadSet, samples: &[f64], eps: f64) -> Result<BoundCheck> {
    let p = spec.dim() as f64 + eps;
    let mut out = BoundCheck {
        max_ratio: 0.0,
        witness: f64::NAN,
        constant: bad.constant,
        violations: 0,
        radius_violations: 0,
        samples: samples.len(),
    };
    for &l in samples {
        if bad.contains(l) {
            return Err(Error::Sampling(format!("λ = {l} lies in the bad set")));
        }
        if !(l >= 1.0 && l <= bad.lambda_range.1) {
            return Err(Error::Sampling(format!("λ = {l} is outside the constructed range")));
        }
        let (d, _) = spec.distance(l * l)?;
        let r = bad.level_of(l).map_or(0.0, |lv| lv.radius);
        if d < r * (1.0 - 1e-9) {
            out.radius_violations += 1;
        }
        if d == 0.0 {
            out.violations += 1;
            out.max_ratio = f64::INFINITY;
            out.witness = l;
            continue;
        }
        let ratio = l.powf(-p) / d;
        if ratio > out.max_ratio {
            out.max_ratio = ratio;
            out.witness = l;
        }
        if ratio > bad.constant {
            out.violations += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus2(lmax: f64) -> SpectrumTable {
        spectrum(&SpectrumModel::FlatTorus { periods: vec![2.0 * PI; 2] }, lmax).unwrap()
    }

    #[test]
    fn torus_and_sphere_tables() {
        let t = torus2(5.0);
        let v: Vec<(f64, u64)> = t.entries.iter().map(|e| (e.value.round(), e.multiplicity)).collect();
        assert_eq!(v, vec![(0.0, 1), (1.0, 4), (2.0, 4), (4.0, 4), (5.0, 8)]);
        let s = spectrum(&SpectrumModel::RoundSphere { n: 2 }, 6.0).unwrap();
        let v: Vec<(f64, u64)> = s.entries.iter().map(|e| (e.value, e.multiplicity)).collect();
        assert_eq!(v, vec![(0.0, 1), (2.0, 3), (6.0, 5)]);
        assert_eq!(torus2(0.5).entries.len(), 1);
        assert_eq!(sphere_multiplicity(2, 3), 9);
        assert_eq!(sphere_multiplicity(1, 4), 5);
    }

    #[test]
    fn resolvent_values() {
        let t = torus2(20.0);
        assert!((t.resolvent_norm(1.5).unwrap().norm() - 2.0).abs() < 1e-12);
        assert!((t.resolvent_norm(3.0).unwrap().norm() - 1.0).abs() < 1e-12);
        assert!(matches!(t.resolvent_norm(2.0).unwrap(), Resolvent::EigenvalueHit { .. }));
        assert!(matches!(t.resolvent_norm(20.6), Err(Error::Range(_))));
    }

    #[test]
    fn weyl_small_cases() {
        let s = spectrum(&SpectrumModel::RoundSphere { n: 2 }, 10.0).unwrap();
        assert_eq!(weyl_count(&s, 1.0).unwrap().count, 3);
        assert!(matches!(weyl_count(&s, 0.1), Err(Error::Range(_))));
    }

    #[test]
    fn merged_intervals() {
        let m = merge(vec![
            Interval { lo: 3.0, hi: 4.0 },
            Interval { lo: 1.0, hi: 2.0 },
            Interval { lo: 1.5, hi: 2.5 },
        ]);
        assert_eq!(m, vec![Interval { lo: 1.0, hi: 2.5 }, Interval { lo: 3.0, hi: 4.0 }]);
    }
}
