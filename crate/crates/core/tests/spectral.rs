use std::f64::consts::PI;

use beamlab::spectral::*;
use beamlab::ChartedManifold;
use proptest::prelude::*;

fn torus2() -> SpectrumModel {
    SpectrumModel::FlatTorus { periods: vec![2.0 * PI; 2] }
}

fn brute_count(lo: i64, hi: i64) -> u64 {
    let r = (hi as f64).sqrt().ceil() as i64 + 1;
    let mut c = 0;
    for a in -r..=r {
        for b in -r..=r {
            let v = a * a + b * b;
            if lo <= v && v <= hi {
                c += 1;
            }
        }
    }
    c
}

#[test]
fn torus_weyl_matches_lattice_oracle() {
    let spec = spectrum(&torus2(), 2.0 * 64.0 * 64.0).unwrap();
    let w = weyl_count(&spec, 0.125).unwrap();
    assert_eq!(w.count, brute_count(64, 128));
    for k in 3..=6 {
        let h = 2f64.powi(-k);
        let w = weyl_count(&spec, h).unwrap();
        assert_eq!(w.count, brute_count(1 << (2 * k), 2 << (2 * k)));
        assert!((PI / 2.0..=2.0 * PI).contains(&w.ratio), "{}", w.ratio);
    }
}

#[test]
fn spectrum_from_manifold() {
    let m = ChartedManifold::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
    assert_eq!(SpectrumModel::from_manifold(&m).unwrap(), torus2());
    let d = ChartedManifold::euclidean_disc(1.0).unwrap();
    assert!(SpectrumModel::from_manifold(&d).is_err());
    let rect = spectrum(&SpectrumModel::FlatTorus { periods: vec![PI, 2.0 * PI] }, 5.0).unwrap();
    // eigenvalues (2a)² + b²
    let v: Vec<(f64, u64)> = rect.entries.iter().map(|e| (e.value.round(), e.multiplicity)).collect();
    assert_eq!(v, vec![(0.0, 1), (1.0, 2), (4.0, 4), (5.0, 4)]);
}

#[test]
fn bad_set_on_torus() {
    let spec = spectrum(&torus2(), 4.0 * 2500.0).unwrap();
    let bad = build_bad_set(&spec, 0.5, 0.5, 50.0).unwrap();
    assert!(bad.measure <= 0.5 + 1e-12);
    assert!(bad.measure <= bad.measure_squared / 2.0 + 1e-9);
    for e in spec.entries.iter().filter(|e| e.value >= 1.0 && e.value < 2500.0) {
        assert!(bad.contains(e.value.sqrt()), "{}", e.value);
    }
    for w in bad.intervals.windows(2) {
        assert!(w[0].hi < w[1].lo);
    }
    let mut prev = 0.0;
    for cap in [2.0, 5.0, 10.0, 20.0, 50.0] {
        let m = bad.measure_below(cap);
        assert!(m >= prev && m <= 0.5 + 1e-12);
        prev = m;
    }
    let half = build_bad_set(&spec, 0.25, 0.5, 50.0).unwrap();
    assert!(half.measure <= 0.25 + 1e-12 && half.measure <= bad.measure);
    assert!(half.measure >= bad.measure / 2.0 * (1.0 - 1e-6));

    let samples = sample_outside(&bad, 1.0, 50.0, 200, 7);
    let check = verify_polynomial_bound(&spec, &bad, &samples, 0.5).unwrap();
    assert_eq!(check.violations, 0);
    assert_eq!(check.radius_violations, 0);
    assert!(check.max_ratio.is_finite() && check.max_ratio <= 10.0 * bad.constant);

    let inside = (bad.intervals[3].lo + bad.intervals[3].hi) / 2.0;
    assert!(verify_polynomial_bound(&spec, &bad, &[inside], 0.5).is_err());

    // just outside an interval the distance is the level radius
    let iv = bad.intervals.iter().find(|iv| iv.lo > 10.0).unwrap();
    let edge = iv.hi * (1.0 + 1e-12);
    let c = verify_polynomial_bound(&spec, &bad, &[edge], 0.5).unwrap();
    let r = bad.level_of(edge).unwrap().radius;
    let predicted = 1.0 / (r * edge.powf(2.5));
    assert!(c.max_ratio > 0.5 * predicted && c.max_ratio <= bad.constant);
}

#[test]
fn bad_set_on_sphere() {
    let spec = spectrum(&SpectrumModel::RoundSphere { n: 2 }, 4.0 * 2500.0).unwrap();
    let bad = build_bad_set(&spec, 0.5, 0.5, 50.0).unwrap();
    assert!(bad.measure <= 0.5 + 1e-12);
    let samples = sample_outside(&bad, 1.0, 50.0, 200, 11);
    let check = verify_polynomial_bound(&spec, &bad, &samples, 0.5).unwrap();
    assert!(check.max_ratio.is_finite());
    assert_eq!(check.violations, 0);
}

#[test]
fn sphere_weyl_band() {
    let spec = spectrum(&SpectrumModel::RoundSphere { n: 2 }, 2.0 * 64.0 * 64.0).unwrap();
    let r: Vec<f64> = (3..=6).map(|k| weyl_count(&spec, 2f64.powi(-k)).unwrap().ratio).collect();
    let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(hi / lo <= 4.0, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn resolvent_is_inverse_distance(z in 0.0..400.0f64) {
        let spec = spectrum(&torus2(), 500.0).unwrap();
        let oracle = (0..=25i64)
            .flat_map(|a| (0..=25i64).map(move |b| (a * a + b * b) as f64))
            .map(|v| (v - z).abs())
            .fold(f64::INFINITY, f64::min);
        match spec.resolvent_norm(z).unwrap() {
            Resolvent::Finite { distance, .. } => prop_assert!((distance - oracle).abs() < 1e-12),
            Resolvent::EigenvalueHit { .. } => prop_assert!(oracle < 1e-9),
        }
    }
}
