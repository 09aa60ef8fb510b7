//! Autonomous ODE integration: Dormand-Prince 5(4) with dense output, plus a
//! fixed-step classical RK4 mode for bit-reproducible runs.

use serde::{Deserialize, Serialize};

use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    pub max_steps: usize,
    /// When set, classical RK4 with this step replaces the adaptive pair.
    pub fixed_step: Option<f64>,
    /// A step below `collapse_factor · |t_end − t0|` is read as blow-up.
    pub collapse_factor: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            h_init: None,
            max_steps: 1_000_000,
            fixed_step: None,
            collapse_factor: 1e-13,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Reached the requested end time.
    Completed,
    /// The state left the admissible domain; the solution is truncated at the
    /// crossing.
    LeftDomain,
    /// Step size collapsed (or the state became non-finite).
    BlowUp,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct OdeStats {
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
enum Interp {
    /// Dormand-Prince continuous extension coefficients.
    Dopri([Vector; 5]),
    /// Cubic Hermite from endpoint values and slopes.
    Hermite { y0: Vector, y1: Vector, f0: Vector, f1: Vector },
}

#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    h: f64,
    interp: Interp,
}

impl Segment {
    fn eval(&self, t: f64) -> Vector {
        let th = (t - self.t0) / self.h;
        match &self.interp {
            Interp::Dopri(r) => {
                let th1 = 1.0 - th;
                &r[0] + (&r[1] + (&r[2] + (&r[3] + &r[4] * th1) * th) * th1) * th
            }
            Interp::Hermite { y0, y1, f0, f1 } => {
                let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
                let h10 = th * (1.0 - th) * (1.0 - th);
                let h01 = th * th * (3.0 - 2.0 * th);
                let h11 = th * th * (th - 1.0);
                y0 * h00 + f0 * (h10 * self.h) + y1 * h01 + f1 * (h11 * self.h)
            }
        }
    }
}

/// Output of [`integrate`]: the accepted steps with their interpolants.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    t0: f64,
    y0: Vector,
    t_reached: f64,
    y_reached: Vector,
    segments: Vec<Segment>,
    pub reason: StopReason,
    pub stats: OdeStats,
    /// Size of the last attempted step (useful for blow-up brackets).
    pub last_step: f64,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_reached
    }

    pub fn final_state(&self) -> &Vector {
        &self.y_reached
    }

    pub fn completed(&self) -> bool {
        self.reason == StopReason::Completed
    }

    /// True if `t` lies between the start and the reached time.
    pub fn covers(&self, t: f64) -> bool {
        let (a, b) = ordered(self.t0, self.t_reached);
        t >= a - 1e-15 * a.abs().max(1.0) && t <= b + 1e-15 * b.abs().max(1.0)
    }

    /// Dense evaluation; `t` is clamped into the covered interval.
    pub fn eval(&self, t: f64) -> Vector {
        if self.segments.is_empty() || t == self.t0 {
            return self.y0.clone();
        }
        if t == self.t_reached {
            return self.y_reached.clone();
        }
        let forward = self.t_reached >= self.t0;
        let (a, b) = ordered(self.t0, self.t_reached);
        let t = t.clamp(a, b);
        // Segments are ordered along the integration direction.
        let idx = self.segments.partition_point(|s| {
            let end = s.t0 + s.h;
            if forward {
                end < t
            } else {
                end > t
            }
        });
        self.segments[idx.min(self.segments.len() - 1)].eval(t)
    }

    /// Derivative of the dense output by a short central difference.
    pub fn eval_derivative(&self, t: f64, delta: f64) -> Vector {
        let (a, b) = ordered(self.t0, self.t_reached);
        let lo = (t - delta).max(a);
        let hi = (t + delta).min(b);
        (self.eval(hi) - self.eval(lo)) / (hi - lo)
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrates `y' = f(y)` from `(t0, y0)` towards `t_end` (either direction).
///
/// Integration stops early when `inside` rejects a state (the crossing is
/// located on the dense output) or when the step size collapses.
pub fn integrate<F, D>(mut f: F, t0: f64, y0: &Vector, t_end: f64, opts: &OdeOptions, inside: D) -> DenseSolution
where
    F: FnMut(&Vector) -> Vector,
    D: Fn(&Vector) -> bool,
{
    let mut sol = DenseSolution {
        t0,
        y0: y0.clone(),
        t_reached: t0,
        y_reached: y0.clone(),
        segments: Vec::new(),
        reason: StopReason::Completed,
        stats: OdeStats::default(),
        last_step: 0.0,
    };
    if t_end == t0 {
        return sol;
    }
    if !inside(y0) {
        sol.reason = StopReason::LeftDomain;
        return sol;
    }
    match opts.fixed_step {
        Some(h) => rk4_fixed(&mut f, &mut sol, t_end, h.abs(), &inside),
        None => dopri(&mut f, &mut sol, t_end, opts, &inside),
    }
    sol
}

fn locate_exit<D: Fn(&Vector) -> bool>(seg: &Segment, inside: &D) -> f64 {
    // Bisection on the fraction of the step that stays inside.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(&seg.eval(seg.t0 + mid * seg.h)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn dopri<F, D>(f: &mut F, sol: &mut DenseSolution, t_end: f64, opts: &OdeOptions, inside: &D)
where
    F: FnMut(&Vector) -> Vector,
    D: Fn(&Vector) -> bool,
{
    let dir = (t_end - sol.t0).signum();
    let span = (t_end - sol.t0).abs();
    let h_min = opts.collapse_factor * span;
    let mut t = sol.t0;
    let mut y = sol.y0.clone();
    let mut k1 = f(&y);
    sol.stats.evaluations += 1;
    if !all_finite(&k1) {
        sol.reason = StopReason::BlowUp;
        return;
    }
    let scale = |a: &Vector, b: &Vector| -> Vector { Vector::from_fn(a.len(), |i, _| opts.atol + opts.rtol * a[i].abs().max(b[i].abs())) };
    let mut h = match opts.h_init {
        Some(h) => h.abs().min(span),
        None => {
            // Hairer-Nørsett-Wanner starting step.
            let sc = scale(&y, &y);
            let d0 = rms_scaled(&y, &sc);
            let d1 = rms_scaled(&k1, &sc);
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            let h0 = h0.min(span);
            let y1 = &y + &k1 * (dir * h0);
            let k2 = f(&y1);
            sol.stats.evaluations += 1;
            let d2 = rms_scaled(&(k2 - &k1), &sc) / h0;
            let dm = d1.max(d2);
            let h1 = if dm <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dm).powf(0.2) };
            (100.0 * h0).min(h1).min(span)
        }
    };
    let mut last_rejected = false;
    loop {
        if sol.stats.steps + sol.stats.rejected >= opts.max_steps {
            sol.reason = StopReason::MaxSteps;
            break;
        }
        let remaining = (t_end - t).abs();
        if remaining <= 1e-15 * t_end.abs().max(1.0) {
            sol.reason = StopReason::Completed;
            break;
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h < h_min {
            sol.reason = StopReason::BlowUp;
            sol.last_step = h;
            break;
        }
        let hs = dir * h;
        let k2 = f(&(&y + &k1 * (hs * A21)));
        let k3 = f(&(&y + (&k1 * A31 + &k2 * A32) * hs));
        let k4 = f(&(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * hs));
        let k5 = f(&(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * hs));
        let k6 = f(&(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * hs));
        let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * hs;
        let k7 = f(&y_new);
        sol.stats.evaluations += 6;
        let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * hs;
        let err = rms_scaled(&err_vec, &scale(&y, &y_new));
        sol.last_step = h;
        if !err.is_finite() || !all_finite(&y_new) {
            sol.stats.rejected += 1;
            h *= 0.2;
            last_rejected = true;
            continue;
        }
        if err <= 1.0 {
            let dense = [
                y.clone(),
                &y_new - &y,
                &k1 * hs - (&y_new - &y),
                (&y_new - &y) - &k7 * hs - (&k1 * hs - (&y_new - &y)),
                (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * hs,
            ];
            let seg = Segment {
                t0: t,
                h: hs,
                interp: Interp::Dopri(dense),
            };
            sol.stats.steps += 1;
            if !inside(&y_new) {
                let frac = locate_exit(&seg, inside);
                let t_exit = t + frac * hs;
                sol.y_reached = seg.eval(t_exit);
                sol.t_reached = t_exit;
                sol.segments.push(seg);
                sol.reason = StopReason::LeftDomain;
                return;
            }
            sol.segments.push(seg);
            t = if last { t_end } else { t + hs };
            y = y_new;
            k1 = k7;
            sol.t_reached = t;
            sol.y_reached = y.clone();
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            last_rejected = false;
            h *= fac;
            if last {
                sol.reason = StopReason::Completed;
                break;
            }
        } else {
            sol.stats.rejected += 1;
            last_rejected = true;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
    }
}

fn rk4_fixed<F, D>(f: &mut F, sol: &mut DenseSolution, t_end: f64, h: f64, inside: &D)
where
    F: FnMut(&Vector) -> Vector,
    D: Fn(&Vector) -> bool,
{
    let dir = (t_end - sol.t0).signum();
    let span = (t_end - sol.t0).abs();
    let n = (span / h).ceil().max(1.0) as usize;
    let mut y = sol.y0.clone();
    let mut t = sol.t0;
    let mut f0 = f(&y);
    for i in 0..n {
        let t_next = if i + 1 == n { t_end } else { sol.t0 + dir * h * (i + 1) as f64 };
        let hs = t_next - t;
        let k1 = f0.clone();
        let k2 = f(&(&y + &k1 * (hs / 2.0)));
        let k3 = f(&(&y + &k2 * (hs / 2.0)));
        let k4 = f(&(&y + &k3 * hs));
        let y_new = &y + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (hs / 6.0);
        let f1 = f(&y_new);
        sol.stats.evaluations += 4;
        sol.stats.steps += 1;
        sol.last_step = hs.abs();
        if !all_finite(&y_new) {
            sol.reason = StopReason::BlowUp;
            return;
        }
        let seg = Segment {
            t0: t,
            h: hs,
            interp: Interp::Hermite {
                y0: y.clone(),
                y1: y_new.clone(),
                f0: f0.clone(),
                f1: f1.clone(),
            },
        };
        if !inside(&y_new) {
            let frac = locate_exit(&seg, inside);
            sol.t_reached = t + frac * hs;
            sol.y_reached = seg.eval(sol.t_reached);
            sol.segments.push(seg);
            sol.reason = StopReason::LeftDomain;
            return;
        }
        sol.segments.push(seg);
        y = y_new;
        f0 = f1;
        t = t_next;
        sol.t_reached = t;
        sol.y_reached = y.clone();
    }
    sol.reason = StopReason::Completed;
}

fn rms_scaled(v: &Vector, sc: &Vector) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter().zip(sc.iter()).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_slice;

    fn everywhere(_: &Vector) -> bool {
        true
    }

    #[test]
    fn exponential_growth() {
        let sol = integrate(|y| y.clone(), 0.0, &from_slice(&[1.0]), 1.0, &OdeOptions::default(), everywhere);
        assert!(sol.completed());
        assert!((sol.final_state()[0] - 1f64.exp()).abs() < 1e-8);
        // Dense output between steps.
        assert!((sol.eval(0.37)[0] - 0.37f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn backward_integration() {
        let sol = integrate(|y| y.clone(), 0.0, &from_slice(&[1.0]), -2.0, &OdeOptions::default(), everywhere);
        assert!((sol.final_state()[0] - (-2f64).exp()).abs() < 1e-9);
        assert!((sol.eval(-1.3)[0] - (-1.3f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rotation_quarter_turn() {
        let f = |y: &Vector| from_slice(&[-y[1], y[0]]);
        let sol = integrate(
            f,
            0.0,
            &from_slice(&[1.0, 0.0]),
            std::f64::consts::FRAC_PI_2,
            &OdeOptions::default(),
            everywhere,
        );
        let y = sol.final_state();
        assert!(y[0].abs() < 1e-8 && (y[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn blow_up_is_reported() {
        let sol = integrate(|y| y.map(|v| v * v), 0.0, &from_slice(&[2.0]), 1.0, &OdeOptions::default(), everywhere);
        assert_eq!(sol.reason, StopReason::BlowUp);
        assert!((sol.t_end() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn domain_exit_is_located() {
        let sol = integrate(
            |_| from_slice(&[1.0]),
            0.0,
            &from_slice(&[0.0]),
            5.0,
            &OdeOptions::default(),
            |y: &Vector| y[0] < 1.25,
        );
        assert_eq!(sol.reason, StopReason::LeftDomain);
        assert!((sol.t_end() - 1.25).abs() < 1e-9);
    }

    #[test]
    fn fixed_step_rk4_is_reproducible() {
        let opts = OdeOptions {
            fixed_step: Some(1e-3),
            ..OdeOptions::default()
        };
        let a = integrate(|y| y.clone(), 0.0, &from_slice(&[1.0]), 1.0, &opts, everywhere);
        let b = integrate(|y| y.clone(), 0.0, &from_slice(&[1.0]), 1.0, &opts, everywhere);
        assert_eq!(a.final_state()[0].to_bits(), b.final_state()[0].to_bits());
        assert!((a.final_state()[0] - 1f64.exp()).abs() < 1e-10);
    }
}
