//! Acceptance criteria, one line each. Runs without the libtest harness so the
//! lines show up in plain `cargo test` output; exits non-zero on any failure.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use beamlab::beam::BeamProfile;
use beamlab::experiment::{run, ExperimentConfig, Outcome};
use beamlab::geodesic::{integrate_geodesic, GeodesicOptions};
use beamlab::recovery::beam_pair;
use beamlab::{ChartedManifold, Point};
use num_complex::Complex64;

const SEED: u64 = 20240601;

// pinned tolerances
const MEASURE_MAX: f64 = 0.5;
const MEASURE_SLACK: f64 = 1e-9;
const WEYL_BAND: f64 = 4.0;
const LEADING_TOL: f64 = 1e-3;
const HOLDER_SLOPE: [f64; 2] = [-0.6, -0.2];
const SMOOTH_SLOPE_MAX: f64 = -0.45;
const RICCATI_TOL: f64 = 1e-7;
const SPHERE_FIXED_POINT_TOL: f64 = 1e-9;
const NORM_BAND: f64 = 2.0;
const RESIDUAL_SLOPE_MAX: f64 = -1.0;
const CONJUGATE_TIME_TOL: f64 = 1e-6;
const DEXP_TOL: f64 = 1e-3;
const C0_FACTOR: f64 = 1.05;
const BOUND_TOL: f64 = 1e-6;
const THETA0_TOL: f64 = 1e-6;
const RECOVERY_REL_MAX: f64 = 0.2;
const RECOVERY_SLOPE_MAX: f64 = -0.4;
const BOUNDARY_TOL: f64 = 0.05;

struct Line {
    id: usize,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn config(src: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(src).unwrap_or_else(|e| panic!("config {src}: {e}"))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn check(o: &Outcome, name: &str) -> (bool, f64) {
    let c = o
        .report
        .checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("{} has no check `{name}`", o.report.experiment));
    (c.pass, c.value)
}

/// Runs every config once, failing the line on any error.
fn run_all(cfgs: &[ExperimentConfig]) -> Result<Vec<Outcome>, String> {
    cfgs.iter().map(|c| run(c).map_err(|e| e.to_string())).collect()
}

fn resolvent() -> ExperimentConfig {
    config(&format!(
        r#"{{"seed":{SEED},"run":{{"resolvent":{{"model":"torus2","delta":0.5,"eps":0.5,"range":"1:50","samples":200,"measure_max":{MEASURE_MAX}}}}}}}"#
    ))
}

fn weyl(model: &str) -> ExperimentConfig {
    config(&format!(
        r#"{{"seed":{SEED},"run":{{"weyl":{{"model":"{model}","h":[0.125,0.0625,0.03125,0.015625],"band":{WEYL_BAND}}}}}}}"#
    ))
}

fn stationary() -> ExperimentConfig {
    config(&format!(
        r#"{{"seed":{SEED},"run":{{"stationary-phase":{{"alpha":0.5,"ladder":"100:10000:5","leading_tol":{LEADING_TOL},
            "holder_slope":[{},{}],"smooth_slope_max":{SMOOTH_SLOPE_MAX}}}}}}}"#,
        HOLDER_SLOPE[0], HOLDER_SLOPE[1]
    ))
}

fn beam() -> ExperimentConfig {
    config(&format!(
        r#"{{"seed":{SEED},"run":{{"beam":{{"model":"cylinder","a":1.0,"ladder":"40:320:4","points_per_width":8,
            "norm_band":{NORM_BAND},"residual_slope_max":{RESIDUAL_SLOPE_MAX},"structure_tol":{RICCATI_TOL}}}}}}}"#
    ))
}

fn conjugate(model: &str) -> ExperimentConfig {
    config(&format!(
        r#"{{"seed":{SEED},"run":{{"conjugate":{{"model":"{model}","directions":8,"cap":4.0,"time_tol":{CONJUGATE_TIME_TOL},"dexp_tol":{DEXP_TOL}}}}}}}"#
    ))
}

fn h1(model: &str) -> ExperimentConfig {
    config(&format!(
        r#"{{"seed":{SEED},"run":{{"h1-check":{{"model":"{model}","a":1.0,"samples":100,"c0_factor":{C0_FACTOR},"bound_tol":{BOUND_TOL},"theta0_tol":{THETA0_TOL}}}}}}}"#
    ))
}

fn recover() -> ExperimentConfig {
    config(&format!(
        r#"{{"seed":{SEED},"run":{{"recover":{{"model":"cylinder","a":1.0,"ladder":"40:320:4",
            "potential":{{"kind":"bump","center":[{PI},0.5],"radius":0.35}},
            "rel_error_max":{RECOVERY_REL_MAX},"slope_max":{RECOVERY_SLOPE_MAX}}}}}}}"#
    ))
}

fn boundary() -> ExperimentConfig {
    config(&format!(
        r#"{{"seed":{SEED},"run":{{"boundary":{{"n":2,"q":"1","mu":"0.001:0.1:5","tolerance":{BOUNDARY_TOL}}}}}}}"#
    ))
}

fn criterion(id: usize, budget_s: u64, cfgs: Vec<ExperimentConfig>, judge: impl Fn(&[Outcome]) -> (bool, String)) -> Line {
    let (res, elapsed) = timed(|| run_all(&cfgs));
    let (pass, detail) = match res {
        Ok(out) => judge(&out),
        Err(e) => (false, format!("error: {e}")),
    };
    Line {
        id,
        pass,
        detail,
        elapsed,
        budget: Duration::from_secs(budget_s),
    }
}

fn c1() -> Line {
    criterion(1, 10, vec![resolvent()], |o| {
        let (a, m) = check(&o[0], "bad_set_measure");
        let (b, v) = check(&o[0], "bound_violations");
        let (c, r) = check(&o[0], "radius_violations");
        (
            a && b && c,
            format!("measure(J∩[1,50]) = {m:.4e} (≤ {MEASURE_MAX} + {MEASURE_SLACK:e}), violations {v}, radius violations {r} of 200"),
        )
    })
}

fn c2() -> Line {
    criterion(2, 5, vec![weyl("torus2"), weyl("sphere2")], |o| {
        let (a, t) = check(&o[0], "weyl_band");
        let (b, s) = check(&o[1], "weyl_band");
        (a && b, format!("max/min of count·hⁿ: torus {t:.3}, sphere {s:.3} (≤ {WEYL_BAND})"))
    })
}

fn c3() -> Line {
    criterion(3, 30, vec![stationary()], |o| {
        let (a, q) = check(&o[0], "quadratic_leading_term");
        let (b, h) = check(&o[0], "holder_slope");
        let (c, s) = check(&o[0], "smooth_slope");
        (
            a && b && c,
            format!(
                "quadratic rel err {q:.2e} (≤ {LEADING_TOL:e}), Hölder slope {h:.3} in [{}, {}], smooth slope {s:.3} (≤ {SMOOTH_SLOPE_MAX})",
                HOLDER_SLOPE[0], HOLDER_SLOPE[1]
            ),
        )
    })
}

fn c4() -> Line {
    let (res, elapsed) = timed(|| -> Result<(bool, String), String> {
        let e = |e: beamlab::Error| e.to_string();
        let out = run(&beam()).map_err(e)?;
        let (a, flat) = check(&out, "riccati_closed_form");
        let (b, cons) = check(&out, "amplitude_consistency");
        let (c, im_v) = check(&out, "min_im_eigenvalue");
        // sphere fixed point h ≡ i
        let s = ChartedManifold::round_sphere(2).map_err(e)?;
        let x = Point::new(vec![0.1, 0.2]);
        let v = s.normalize(&x.x, &[1.0, -0.4]);
        let opts = GeodesicOptions {
            t_max: Some(7.0),
            ..Default::default()
        };
        let p = integrate_geodesic(&s, &x, &v, &opts).map_err(e)?;
        let sb = BeamProfile::with_identity_seed(p, 40.0, 1.0).map_err(e)?;
        let i = Complex64::new(0.0, 1.0);
        let fixed = sb.samples.iter().map(|q| (q.h[(0, 0)] - i).norm()).fold(0.0, f64::max);
        // the two recovery beams
        let m = ChartedManifold::flat_cylinder(1.0).map_err(e)?;
        let (rv, rw) = beam_pair(&m, &Point::new(vec![PI, 0.5]), &[1.0, 1.0], &[-1.0, 1.0], 40.0, 1.2).map_err(e)?;
        let im_min = im_v.min(sb.min_im_eigenvalue()).min(rv.min_im_eigenvalue()).min(rw.min_im_eigenvalue());
        let cons_max = cons
            .max(sb.amplitude_consistency())
            .max(rv.amplitude_consistency())
            .max(rw.amplitude_consistency());
        let pass = a && b && c && fixed <= SPHERE_FIXED_POINT_TOL && im_min > 0.0 && cons_max <= RICCATI_TOL;
        Ok((
            pass,
            format!(
                "flat H defect {flat:.2e} (≤ {RICCATI_TOL:e}), sphere |h − i| {fixed:.2e} (≤ {SPHERE_FIXED_POINT_TOL:e}), \
                 min Im-eig {im_min:.3} (> 0), |a₀| consistency {cons_max:.2e} (≤ {RICCATI_TOL:e})"
            ),
        ))
    });
    let (pass, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
    Line {
        id: 4,
        pass,
        detail,
        elapsed,
        budget: Duration::from_secs(60),
    }
}

fn c5() -> Line {
    criterion(5, 120, vec![beam()], |o| {
        let (a, l4) = check(&o[0], "l4_ratio_band");
        let (b, li) = check(&o[0], "linf_ratio_band");
        let (c, s) = check(&o[0], "residual_slope");
        (
            a && b && c,
            format!("L⁴ band {l4:.4}, L∞/λ^(1/8) band {li:.4} (≤ {NORM_BAND}), residual slope {s:.3} (≤ {RESIDUAL_SLOPE_MAX})"),
        )
    })
}

fn c6() -> Line {
    criterion(6, 60, vec![conjugate("sphere2"), conjugate("sphere3"), conjugate("torus2")], |o| {
        let (a, t) = check(&o[0], "first_conjugate_time_error");
        let (b, o2) = check(&o[0], "order");
        let (c, o3) = check(&o[1], "order");
        let (d, ot) = check(&o[2], "order");
        let mut dexp = 0.0f64;
        let mut e = true;
        for x in o {
            let (p, v) = check(x, "dexp_rel_error");
            e &= p;
            dexp = dexp.max(v);
        }
        (
            a && b && c && d && e,
            format!(
                "S² first conjugate |t − π| {t:.2e} (≤ {CONJUGATE_TIME_TOL:e}), orders S² {o2}, S³ {o3}, T² {ot}, d exp rel err {dexp:.2e} (≤ {DEXP_TOL:e})"
            ),
        )
    })
}

fn c7() -> Line {
    criterion(7, 60, vec![h1("cylinder"), h1("patch")], |o| {
        let (a, th) = check(&o[0], "theta0_error");
        let (b, c0) = check(&o[0], "c0");
        let (c, bv) = check(&o[0], "bound_violation");
        let (d, cov) = check(&o[0], "coverage");
        let (e, cp) = check(&o[1], "separation_constant");
        let th0 = 0.25 * PI.atan();
        (
            a && b && c && d && e,
            format!(
                "cylinder |θ₀ − ¼arctan π| {th:.1e}, c₀ {c0:.4} (≤ {:.4}), bound violation {bv:.1e} (≤ {BOUND_TOL:e}), coverage {cov}; patch C {cp:.4} (> 0)",
                C0_FACTOR / th0.sin()
            ),
        )
    })
}

fn c8() -> Line {
    criterion(8, 300, vec![recover()], |o| {
        let (a, r) = check(&o[0], "final_rel_error");
        let (b, s) = check(&o[0], "error_slope");
        (
            a && b,
            format!("relative error at λ = 320 {r:.4} (≤ {RECOVERY_REL_MAX}), slope {s:.3} (≤ {RECOVERY_SLOPE_MAX})"),
        )
    })
}

fn c9() -> Line {
    criterion(9, 60, vec![boundary()], |o| {
        let (a, e) = check(&o[0], "limit_error");
        let limit = o[0].report.data["limit"].as_f64().unwrap_or(f64::NAN);
        (a, format!("extrapolated limit {limit:.6}, relative error {e:.2e} (≤ {BOUNDARY_TOL})"))
    })
}

fn c10() -> Line {
    let cfgs = vec![
        resolvent(),
        weyl("torus2"),
        weyl("sphere2"),
        stationary(),
        beam(),
        conjugate("sphere2"),
        conjugate("sphere3"),
        conjugate("torus2"),
        h1("cylinder"),
        h1("patch"),
        recover(),
        boundary(),
    ];
    let (res, elapsed) = timed(|| -> Result<(usize, Vec<String>), String> {
        let a = run_all(&cfgs)?;
        let b = run_all(&cfgs)?;
        let mut files = 0;
        let mut differ = Vec::new();
        for (x, y) in a.iter().zip(&b) {
            for (name, content) in &x.artifacts.files {
                if !(name.ends_with(".csv") || name.ends_with(".json")) {
                    continue;
                }
                files += 1;
                if y.artifacts.get(name) != Some(content.as_str()) {
                    differ.push(format!("{}/{name}", x.report.experiment));
                }
            }
        }
        Ok((files, differ))
    });
    let (pass, detail) = match res {
        Ok((n, d)) if d.is_empty() => (true, format!("{n} CSV/JSON artifacts byte-identical across two runs")),
        Ok((n, d)) => (false, format!("{} of {n} artifacts differ: {}", d.len(), d.join(", "))),
        Err(e) => (false, format!("error: {e}")),
    };
    Line {
        id: 10,
        pass,
        detail,
        elapsed,
        budget: Duration::from_secs(600),
    }
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if filter.iter().any(|f| !"acceptance".contains(f.as_str())) {
        return;
    }
    let all: [fn() -> Line; 10] = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10];
    let mut failed = 0;
    for f in all {
        let l = f();
        let in_time = l.elapsed <= l.budget;
        let ok = l.pass && in_time;
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2}: {}  {}; runtime {:.2} s (≤ {} s{})",
            l.id,
            if ok { "PASS" } else { "FAIL" },
            l.detail,
            l.elapsed.as_secs_f64(),
            l.budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
