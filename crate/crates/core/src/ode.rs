//! Dormand–Prince 5(4) integrator with step control, output-time landing and
//! event location by re-stepping bisection.

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-9,
            atol: 1e-9,
            max_step: 0.02,
            min_step: 1e-14,
            max_steps: 2_000_000,
        }
    }
}

/// Accepted states. `t` is monotone in the integration direction.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// Time of the first event sign change, if an event function was supplied and fired.
    pub event_time: Option<f64>,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }
}

/// One Dormand–Prince step from `(t, y)` with `k[0] = f(t, y)` already filled.
/// Writes the 5th order solution to `out` and returns the scaled error norm.
fn dp_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    h: f64,
    ws: &mut Workspace,
    out: &mut [f64],
    opts: &OdeOptions,
) -> f64 {
    let n = y.len();
    let Workspace { k, tmp } = ws;
    let [k1, k2, k3, k4, k5, k6, k7] = k;
    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    sys.rhs(t + C2 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    sys.rhs(t + C3 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    sys.rhs(t + C4 * h, tmp, k4);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    sys.rhs(t + C5 * h, tmp, k5);
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    sys.rhs(t + h, tmp, k6);
    for i in 0..n {
        out[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
    }
    sys.rhs(t + h, out, k7);
    let mut acc = 0.0;
    for i in 0..n {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = opts.atol + opts.rtol * y[i].abs().max(out[i].abs());
        acc += (e / sc).powi(2);
    }
    (acc / n as f64).sqrt()
}

/// Integrates from `t0` to `t_end` (either direction). Every time in `t_eval`
/// that lies in the span is hit exactly and recorded; accepted internal steps
/// are recorded too when `record_steps` is set. If `event` is given, the
/// integration stops at the first time `event(y)` turns negative, located to
/// `1e-12` in `t` by bisection over fresh single steps.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    t_eval: &[f64],
    record_steps: bool,
    event: Option<&dyn Fn(&[f64]) -> f64>,
    opts: &OdeOptions,
) -> Result<Trajectory> {
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::Precondition(format!("state length {} != system dimension {n}", y0.len())));
    }
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut stops: Vec<f64> = t_eval
        .iter()
        .copied()
        .filter(|&s| (s - t0) * dir > 0.0 && (t_end - s) * dir >= 0.0)
        .collect();
    stops.sort_by(|a, b| (a * dir).partial_cmp(&(b * dir)).unwrap());
    stops.dedup();
    let mut stop_idx = 0;

    let mut traj = Trajectory {
        t: vec![t0],
        y: vec![y0.to_vec()],
        event_time: None,
    };
    if t_end == t0 {
        return Ok(traj);
    }

    let mut ws = Workspace::new(n);
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut ynew = vec![0.0; n];
    sys.rhs(t, &y, &mut ws.k[0]);
    let span = (t_end - t0).abs();
    let mut h = (1e-3 * span).min(opts.max_step).max(opts.min_step);
    let mut ev_prev = event.map(|f| f(&y));
    let mut steps = 0usize;

    while (t_end - t) * dir > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integration(format!("step budget {} exhausted at t = {t}", opts.max_steps)));
        }
        let mut target = t_end;
        let mut landing = false;
        if stop_idx < stops.len() {
            target = stops[stop_idx];
            landing = true;
        }
        let remaining = (target - t).abs();
        let mut hs = h.min(opts.max_step);
        let mut lands = false;
        if hs >= remaining {
            hs = remaining;
            lands = true;
        }
        let err = dp_step(sys, t, &y, dir * hs, &mut ws, &mut ynew, opts);
        if !err.is_finite() {
            h = hs * 0.2;
            if h < opts.min_step {
                return Err(Error::Integration(format!("non-finite state at t = {t}, step collapsed")));
            }
            continue;
        }
        if err > 1.0 {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h = hs * fac;
            if h < opts.min_step {
                return Err(Error::Integration(format!(
                    "step size collapsed to {h:e} at t = {t} (error norm {err:e})"
                )));
            }
            continue;
        }
        let t_new = if lands { target } else { t + dir * hs };

        if let (Some(f), Some(prev)) = (event, ev_prev) {
            let cur = f(&ynew);
            if prev >= 0.0 && cur < 0.0 {
                let (te, ye) = locate_event(sys, t, &y, dir * hs, f, opts, &mut ws)?;
                traj.t.push(te);
                traj.y.push(ye);
                traj.event_time = Some(te);
                return Ok(traj);
            }
            ev_prev = Some(cur);
        }

        t = t_new;
        std::mem::swap(&mut y, &mut ynew);
        let k7 = ws.k[6].clone();
        ws.k[0].copy_from_slice(&k7);
        let at_stop = lands && landing;
        if at_stop {
            stop_idx += 1;
        }
        if record_steps || at_stop || (t_end - t) * dir <= 0.0 {
            traj.t.push(t);
            traj.y.push(y.clone());
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if !lands {
            h = hs * fac;
        } else {
            h = h.max(hs * fac.min(1.0));
        }
    }
    Ok(traj)
}

fn locate_event<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    h: f64,
    f: &dyn Fn(&[f64]) -> f64,
    opts: &OdeOptions,
    ws: &mut Workspace,
) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let mut out = vec![0.0; n];
    let mut lo = 0.0f64;
    let mut hi = h.abs();
    let dir = h.signum();
    let mut best = y.to_vec();
    let mut fx = vec![0.0; n];
    sys.rhs(t, y, &mut fx);
    for _ in 0..200 {
        if hi - lo <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        ws.k[0].copy_from_slice(&fx);
        dp_step(sys, t, y, dir * mid, ws, &mut out, opts);
        if f(&out) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best.copy_from_slice(&out);
        }
    }
    // report the state just past the crossing so callers see the boundary value at the exit time
    ws.k[0].copy_from_slice(&fx);
    dp_step(sys, t, y, dir * hi, ws, &mut out, opts);
    best.copy_from_slice(&out);
    Ok((t + dir * hi, best))
}

/// Convenience: state at `t1` starting from `(t0, y0)`.
pub fn state_at<S: OdeSystem + ?Sized>(sys: &S, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Result<Vec<f64>> {
    let traj = integrate(sys, t0, y0, t1, &[], false, None, opts)?;
    Ok(traj.y.last().cloned().unwrap_or_else(|| y0.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Sho;
    impl OdeSystem for Sho {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn harmonic_oscillator_period() {
        let opts = OdeOptions {
            max_step: 1.0,
            ..Default::default()
        };
        let tr = integrate(&Sho, 0.0, &[1.0, 0.0], 2.0 * std::f64::consts::PI, &[], true, None, &opts).unwrap();
        let y = tr.y.last().unwrap();
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8, "{y:?}");
    }

    #[test]
    fn lands_on_eval_times_backwards() {
        let opts = OdeOptions::default();
        let ts = [-0.5, -1.0, -0.25];
        let tr = integrate(&Sho, 0.0, &[1.0, 0.0], -1.0, &ts, false, None, &opts).unwrap();
        assert_eq!(tr.t, vec![0.0, -0.25, -0.5, -1.0]);
        for (t, y) in tr.t.iter().zip(&tr.y) {
            assert!((y[0] - t.cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn event_located() {
        let opts = OdeOptions::default();
        let ev = |y: &[f64]| y[0];
        let tr = integrate(&Sho, 0.0, &[1.0, 0.0], 10.0, &[], false, Some(&ev), &opts).unwrap();
        let te = tr.event_time.unwrap();
        assert!((te - std::f64::consts::FRAC_PI_2).abs() < 1e-10, "{te}");
    }
}
