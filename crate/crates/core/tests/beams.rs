use std::f64::consts::PI;

use beamlab::beam::{beam_norms, min_eig, BeamProfile, CMat, Grid};
use beamlab::geodesic::{integrate_geodesic, GeodesicOptions, GeodesicPath};
use beamlab::recovery::beam_pair;
use beamlab::{ChartedManifold, Point};
use num_complex::Complex64;

fn path(m: &ChartedManifold, x: &[f64], d: &[f64], t_max: Option<f64>) -> GeodesicPath {
    let v = m.normalize(x, d);
    integrate_geodesic(m, &Point::new(x.to_vec()), &v, &GeodesicOptions {
        t_max,
        ..Default::default()
    })
    .unwrap()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn flat_riccati_matches_closed_form_with_general_seed() {
    let m = ChartedManifold::flat_torus(&[2.0 * PI; 3]).unwrap();
    let p = path(&m, &[1.0, 1.0, 1.0], &[1.0, 0.2, 0.1], Some(4.0));
    let h0 = CMat::from_row_slice(2, 2, &[c(0.3, 1.5), c(-0.2, 0.4), c(-0.2, 0.4), c(0.1, 0.8)]);
    let b = BeamProfile::new(p, h0.clone(), 10.0, 1.0).unwrap();
    let inv0 = h0.clone().try_inverse().unwrap();
    let mut covered = 0.0f64;
    for s in &b.samples {
        let t = s.t - b.t_origin;
        if !(0.0..=3.0).contains(&t) {
            continue;
        }
        covered = covered.max(t);
        let want = (&inv0 + CMat::identity(2, 2) * c(t, 0.0)).try_inverse().unwrap();
        let err = (&s.h - &want).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err <= 1e-7, "t = {t}: {err}");
        assert!((&s.h - s.h.transpose()).iter().all(|z| z.norm() < 1e-12));
        assert!(min_eig(&s.h.map(|z| z.im)) > 0.0);
    }
    assert!(covered >= 2.5, "{covered}");
    let want = (&inv0 + CMat::identity(2, 2) * c(3.0, 0.0)).try_inverse().unwrap();
    let at3 = b.hessian(b.t_origin + 3.0);
    assert!((&at3 - &want).iter().all(|z| z.norm() <= 1e-6));
    assert!(b.amplitude_consistency() <= 1e-7);
}

#[test]
fn acceptance_beams_are_symmetric_with_positive_imaginary_part() {
    let cyl = ChartedManifold::flat_cylinder(1.0).unwrap();
    let vertical = BeamProfile::with_identity_seed(path(&cyl, &[PI, 0.5], &[0.0, 1.0], None), 40.0, 4.0).unwrap();
    let (v, w) = beam_pair(&cyl, &Point::new(vec![PI, 0.5]), &[1.0, 1.0], &[-1.0, 1.0], 40.0, 1.2).unwrap();
    let s2 = ChartedManifold::round_sphere(2).unwrap();
    let sph = BeamProfile::with_identity_seed(path(&s2, &[0.1, 0.2], &[1.0, -0.4], Some(7.0)), 40.0, 1.0).unwrap();
    let s3 = ChartedManifold::round_sphere(3).unwrap();
    let sph3 = BeamProfile::with_identity_seed(path(&s3, &[0.1, 0.2, 0.0], &[1.0, -0.4, 0.3], Some(7.0)), 40.0, 1.0).unwrap();
    for b in [&vertical, &v, &w, &sph, &sph3] {
        assert!(b.symmetry_defect() < 1e-12);
        assert!(b.min_im_eigenvalue() > 0.0);
        assert!(b.amplitude_consistency() <= 1e-7);
    }
    // S³ fixed point h ≡ iI
    for s in &sph3.samples {
        assert!((&s.h - CMat::identity(2, 2) * c(0.0, 1.0)).iter().all(|z| z.norm() < 1e-9));
    }
}

/// `d arg v / λ` by central differences of the ratio (no unwrapping needed).
fn phase_gradient(b: &BeamProfile, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[k] += h;
            q[k] -= h;
            let vp = b.evaluate(&Point::new(p)).unwrap();
            let vq = b.evaluate(&Point::new(q)).unwrap();
            (vp / vq).arg() / (2.0 * h * b.lambda)
        })
        .collect()
}

#[test]
fn phase_gradient_on_the_axis_is_the_velocity() {
    let lambda = 1e5;
    let cyl = ChartedManifold::flat_cylinder(1.0).unwrap();
    let d = [0.6, 0.8];
    let p = path(&cyl, &[2.0, 0.5], &d, None);
    let b = BeamProfile::with_identity_seed(p.clone(), lambda, 1.0).unwrap();
    for t in [-0.3, 0.0, 0.2] {
        let x = p.point(t);
        let g = phase_gradient(&b, &x.x, 1e-6);
        let vel = p.velocity(t);
        assert!(g.iter().zip(&vel).all(|(a, b)| (a - b).abs() < 1e-4), "{g:?} vs {vel:?}");
    }

    // curved case: the coordinate differential is the lowered velocity g·γ̇
    let s2 = ChartedManifold::round_sphere(2).unwrap();
    let p = path(&s2, &[0.1, 0.2], &[1.0, -0.4], Some(7.0));
    let b = BeamProfile::with_identity_seed(p.clone(), lambda, 1.0).unwrap();
    for t in [0.5, 1.5] {
        let x = p.point(t);
        let g = phase_gradient(&b, &x.x, 1e-6);
        let vel = p.velocity(t);
        let gm = s2.metric_raw(&x.x);
        let low: Vec<f64> = (0..2).map(|i| gm[(i, 0)] * vel[0] + gm[(i, 1)] * vel[1]).collect();
        assert!(g.iter().zip(&low).all(|(a, b)| (a - b).abs() < 1e-4), "{g:?} vs {low:?}");
    }
}

#[test]
fn norm_ratios_are_order_one_on_a_doubling_ladder() {
    let cyl = ChartedManifold::flat_cylinder(1.0).unwrap();
    let base = BeamProfile::with_identity_seed(path(&cyl, &[PI, 0.5], &[0.0, 1.0], None), 40.0, 4.0).unwrap();
    let mut l4 = Vec::new();
    for lambda in [40.0, 80.0, 160.0, 320.0] {
        let b = base.at_frequency(lambda);
        let g = Grid::with_spacing(vec![0.0, 0.0], vec![2.0 * PI, 1.0], lambda.powf(-0.5) / 8.0);
        let n = beam_norms(&b, &g).unwrap();
        // transverse Gaussian oracle: ∫|v|⁴ = λ^{1/2}∫∫|a₀|⁴ e^{−2λ Im h y²} dy dτ
        let oracle: f64 = {
            let steps = 4000;
            let dt = 1.0 / steps as f64;
            (0..steps)
                .map(|k| {
                    let tau = (k as f64 + 0.5) * dt;
                    let imh = 1.0 / (1.0 + tau * tau);
                    let a4 = 1.0 / (1.0 + tau * tau);
                    a4 * (PI / (2.0 * imh)).sqrt() * dt
                })
                .sum::<f64>()
                .powf(0.25)
        };
        assert!((n.l4_ratio / oracle - 1.0).abs() < 0.01, "λ = {lambda}: {} vs {oracle}", n.l4_ratio);
        l4.push(n.l4_ratio);
    }
    let (lo, hi) = l4.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(hi / lo < 2.0);
}
