use std::f64::consts::PI;

use beamlab::error::Error;
use beamlab::geodesic::flat_fermi_passes;
use beamlab::recovery::*;
use beamlab::{ChartedManifold, Point};

fn cylinder_setup(lambda: f64) -> (ChartedManifold, Point, beamlab::beam::BeamProfile, beamlab::beam::BeamProfile) {
    let m = ChartedManifold::flat_cylinder(1.0).unwrap();
    let x0 = Point::new(vec![PI, 0.5]);
    let (v, w) = beam_pair(&m, &x0, &[1.0, 1.0], &[-1.0, 1.0], lambda, 1.2).unwrap();
    (m, x0, v, w)
}

const LADDER: [f64; 4] = [40.0, 80.0, 160.0, 320.0];

#[test]
fn perpendicular_torus_beams() {
    let m = ChartedManifold::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
    let x0 = Point::new(vec![1.0, 2.0]);
    let (v, w) = beam_pair(&m, &x0, &[1.0, 0.0], &[0.0, 1.0], 10.0, 1.0).unwrap();
    let h = hessian_psi(&v, &w, &x0).unwrap();
    assert!((h.matrix[(0, 0)] - 2.0).abs() < 1e-9 && (h.matrix[(1, 1)] - 2.0).abs() < 1e-9);
    assert!(h.matrix[(0, 1)].abs() < 1e-9);
    assert!((h.det - 4.0).abs() < 1e-8);

    let mut prev = 0.0;
    for k in 1..=8 {
        let th = PI / 2.0 * k as f64 / 8.0;
        let (v, w) = beam_pair(&m, &x0, &[1.0, 0.0], &[th.cos(), th.sin()], 10.0, 1.0).unwrap();
        let h = hessian_psi(&v, &w, &x0).unwrap();
        assert!(h.coercivity > prev);
        assert!(h.coercivity >= 0.9 * h.lower_bound);
        prev = h.coercivity;
    }
    assert!((prev - 2.0).abs() < 1e-8);
    let (v, w) = beam_pair(&m, &x0, &[1.0, 0.0], &[1.0, 0.0], 10.0, 1.0).unwrap();
    assert!(matches!(hessian_psi(&v, &w, &x0), Err(Error::Precondition(_))));
    let elsewhere = Point::new(vec![1.5, 2.0]);
    assert!(matches!(hessian_psi(&v, &w, &elsewhere), Err(Error::Geometry(_))));
}

#[test]
fn psi_dominates_quarter_quadratic() {
    let (m, x0, v, w) = cylinder_setup(40.0);
    let h = hessian_psi(&v, &w, &x0).unwrap();
    let c = h.coercivity;
    for i in -20..=20 {
        for j in -20..=20 {
            let z = [0.015 * i as f64, 0.015 * j as f64];
            let x = [x0.x[0] + z[0], x0.x[1] + z[1]];
            let mut psi = 0.0;
            for b in [&v, &w] {
                let pass = flat_fermi_passes(b.path(), &x, (b.t_origin, b.t_end), 0.5)
                    .into_iter()
                    .min_by(|a, b| a.1[0].abs().total_cmp(&b.1[0].abs()))
                    .unwrap();
                psi += b.hessian(pass.0)[(0, 0)].im * pass.1[0] * pass.1[0];
            }
            let r2 = z[0] * z[0] + z[1] * z[1];
            assert!(psi >= c / 4.0 * r2 - 1e-12, "{z:?}");
        }
    }
    let _ = m;
}

#[test]
fn product_integral_basics() {
    let (_, x0, v, w) = cylinder_setup(160.0);
    let h = hessian_psi(&v, &w, &x0).unwrap();
    let zero = |_: &[f64]| 0.0;
    let o = ProductOptions::default();
    assert_eq!(quadruple_product_integral(&zero, &v, &w, &x0, &h, &o).unwrap().value, 0.0);
    let bump = |x: &[f64]| {
        let s = ((x[0] - PI).powi(2) + (x[1] - 0.5).powi(2)) / 0.35f64.powi(2);
        if s < 1.0 {
            (1.0 - 1.0 / (1.0 - s)).exp()
        } else {
            0.0
        }
    };
    let coarse = quadruple_product_integral(&bump, &v, &w, &x0, &h, &o).unwrap();
    let fine = ProductOptions {
        points_per_width: 4.0 * o.points_per_width,
        ..o
    };
    let oracle = quadruple_product_integral(&bump, &v, &w, &x0, &h, &fine).unwrap();
    assert!((coarse.value - oracle.value).abs() <= 0.01 * oracle.value.abs());
    let under = ProductOptions { points_per_width: 4.0, ..o };
    assert!(matches!(
        quadruple_product_integral(&bump, &v, &w, &x0, &h, &under),
        Err(Error::Resolution(_))
    ));
    let short = ProductOptions { tail: 1.0, ..o };
    assert!(matches!(quadruple_product_integral(&bump, &v, &w, &x0, &h, &short), Err(Error::Support(_))));
}

#[test]
fn disjoint_tubes_give_zero() {
    let m = ChartedManifold::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
    let x0 = Point::new(vec![1.0, 1.0]);
    let (v, _) = beam_pair(&m, &x0, &[1.0, 0.0], &[0.0, 1.0], 40.0, 0.5).unwrap();
    let (w, _) = beam_pair(&m, &Point::new(vec![1.0, 1.0 + PI]), &[1.0, 0.0], &[0.0, 1.0], 40.0, 0.5).unwrap();
    let mut total = 0.0;
    for i in 0..200 {
        for j in 0..200 {
            let x = [2.0 * PI * i as f64 / 200.0, 2.0 * PI * j as f64 / 200.0];
            total += v.evaluate_flat(&x).norm_sqr() * w.evaluate_flat(&x).norm_sqr();
        }
    }
    assert_eq!(total, 0.0);
}

#[test]
fn recovery_decays_on_the_cylinder() {
    let (m, x0, v, w) = cylinder_setup(40.0);
    let p = PotentialField::from_json(&m, r#"{"kind":"bump","center":[3.141592653589793,0.5],"radius":0.35}"#, 0.9).unwrap();
    let r = error_decay(&p, &v, &w, &x0, &LADDER, &ProductOptions::default()).unwrap();
    let last = r.rows.last().unwrap();
    assert!(last.rel_error <= 0.2, "{}", last.rel_error);
    assert!(r.slope() <= -0.4, "{}", r.slope());
    assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    assert!(r.rows.windows(2).all(|w| w[1].abs_error < w[0].abs_error));

    // constant potential: p̂ → c
    let c = PotentialField::from_json(&m, r#"{"kind":"constant","value":0.7}"#, 0.9).unwrap();
    let r = error_decay(&c, &v, &w, &x0, &LADDER, &ProductOptions::default()).unwrap();
    assert!(r.rows.last().unwrap().rel_error < 0.05 && r.slope() <= -0.4);

    // vanishing at x₀ but not nearby
    let off = PotentialField::from_json(&m, r#"{"kind":"expr","expr":"(x-pi)^2+(y-0.5)^2"}"#, 0.9).unwrap();
    let r = error_decay(&off, &v, &w, &x0, &LADDER, &ProductOptions::default()).unwrap();
    assert_eq!(r.rows[0].p_true, 0.0);
    assert!(r.slope() <= -0.4, "{}", r.slope());

    assert!(error_decay(&p, &v, &w, &x0, &LADDER[..3], &ProductOptions::default()).is_err());
}

#[test]
fn boundary_concentration_limits() {
    let mus: Vec<f64> = (2..=6).map(|k| 10f64.powf(-0.5 * k as f64)).collect();
    let o = BoundaryOptions::default();
    let one = |_: &[f64]| 1.0;
    let r = boundary_concentration(&one, &one, &one, &[0.0], &mus, &o).unwrap();
    assert!((r.limit() - 0.5).abs() <= 0.025);
    assert!((r.rows.last().unwrap().value - 0.5).abs() <= 0.025);

    let q0 = |x: &[f64]| x[1] * (-x[0] * x[0]).exp();
    let r = boundary_concentration(&q0, &one, &one, &[0.0], &mus, &o).unwrap();
    assert!(r.limit().abs() < 1e-3 && r.expected == 0.0);

    // separable oracle: the tangential factor of |v|² is even, so u₃ = 1 + x₁
    // integrates exactly like u₃ ≡ 1
    let u3 = |x: &[f64]| 1.0 + x[0];
    let r3 = boundary_concentration(&one, &u3, &one, &[0.0], &mus, &o).unwrap();
    let r1 = boundary_concentration(&one, &one, &one, &[0.0], &mus, &o).unwrap();
    for (a, b) in r3.rows.iter().zip(&r1.rows) {
        assert!((a.value - b.value).abs() < 1e-12);
    }

    // translation covariance
    let s = 0.37;
    let q = |x: &[f64]| 1.0 + (x[0] - s).sin() + x[1];
    let q_shift = |x: &[f64]| 1.0 + x[0].sin() + x[1];
    let a = boundary_concentration(&q, &one, &one, &[s], &mus, &o).unwrap();
    let b = boundary_concentration(&q_shift, &one, &one, &[0.0], &mus, &o).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert!((x.value - y.value).abs() < 1e-10);
    }

    let coarse = BoundaryOptions {
        normal_per_mu: 10.0,
        ..o.clone()
    };
    assert!(matches!(
        boundary_concentration(&one, &one, &one, &[0.0], &mus, &coarse),
        Err(Error::Resolution(_))
    ));

    let r = boundary_concentration(&one, &one, &one, &[0.0, 0.0], &mus[..3], &o).unwrap();
    assert!((r.rows.last().unwrap().value - 0.5).abs() < 0.01);
}
