//! Adaptive integration of small ODE systems.
//!
//! The explicit driver is the Dormand-Prince 5(4) pair with FSAL. When the step
//! size collapses or the step budget runs out (the usual sign of stiffness) the
//! integration continues from the last accepted point with the L-stable
//! two-stage Rosenbrock method ROS2, which has an embedded first-order solution
//! for error control.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::error::{Error, Result};

pub trait OdeSystem<const D: usize> {
    fn rhs(&self, t: f64, y: &SVector<f64, D>) -> SVector<f64, D>;

    /// Jacobian of `rhs` with respect to `y`. The default uses central differences.
    fn jacobian(&self, t: f64, y: &SVector<f64, D>) -> SMatrix<f64, D, D> {
        let mut jac = SMatrix::<f64, D, D>::zeros();
        for j in 0..D {
            let h = 1e-7 * y[j].abs().max(1e-7);
            let mut yp = *y;
            let mut ym = *y;
            yp[j] += h;
            ym[j] -= h;
            let col = (self.rhs(t, &yp) - self.rhs(t, &ym)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rel: 1e-9, abs: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub tol: Tolerances,
    /// Explicit steps allowed before switching to the stiff solver.
    pub max_explicit_steps: usize,
    /// Total step budget for the stiff solver.
    pub max_stiff_steps: usize,
    /// Smallest step relative to the integration span before giving up on a method.
    pub min_step_fraction: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            tol: Tolerances::default(),
            max_explicit_steps: 200_000,
            max_stiff_steps: 2_000_000,
            min_step_fraction: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdeSolution<const D: usize> {
    pub times: Vec<f64>,
    pub states: Vec<SVector<f64, D>>,
    /// Time at which the driver switched to the stiff solver, if it did.
    pub stiff_switch_at: Option<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

// Dormand-Prince 5(4) tableau.
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

fn error_norm<const D: usize>(err: &SVector<f64, D>, y0: &SVector<f64, D>, y1: &SVector<f64, D>, tol: Tolerances) -> f64 {
    let mut acc = 0.0;
    for i in 0..D {
        let sc = tol.abs + tol.rel * y0[i].abs().max(y1[i].abs());
        acc += (err[i] / sc).powi(2);
    }
    (acc / D as f64).sqrt()
}

fn initial_step<S: OdeSystem<D>, const D: usize>(
    sys: &S,
    t0: f64,
    y0: &SVector<f64, D>,
    f0: &SVector<f64, D>,
    span: f64,
    tol: Tolerances,
) -> f64 {
    let scale = y0.map(|v| tol.abs + tol.rel * v.abs());
    let d0 = y0.component_div(&scale).norm() / (D as f64).sqrt();
    let d1 = f0.component_div(&scale).norm() / (D as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = y0 + f0 * h0;
    let f1 = sys.rhs(t0 + h0, &y1);
    let d2 = (f1 - f0).component_div(&scale).norm() / (D as f64).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6 * span)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `sys` from `(t0, y0)` to `t_end`. With `outputs` the solution is
/// recorded exactly at those (increasing, within `(t0, t_end]`) times, otherwise
/// at every accepted step. The initial point is always recorded first.
pub fn integrate<S: OdeSystem<D>, const D: usize>(
    sys: &S,
    t0: f64,
    y0: SVector<f64, D>,
    t_end: f64,
    outputs: Option<&[f64]>,
    opts: &OdeOptions,
) -> Result<OdeSolution<D>> {
    if !(t_end > t0) {
        return Err(Error::Domain(format!("t_end = {t_end} must exceed t0 = {t0}")));
    }
    if !(opts.tol.rel > 0.0) || !(opts.tol.abs > 0.0) {
        return Err(Error::Domain("tolerances must be positive".into()));
    }
    if let Some(out) = outputs {
        if out.windows(2).any(|w| w[1] <= w[0]) || out.iter().any(|&t| t < t0 || t > t_end) {
            return Err(Error::Domain("output times must be increasing and inside the span".into()));
        }
    }
    let mut sol = OdeSolution {
        times: vec![t0],
        states: vec![y0],
        stiff_switch_at: None,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let mut stops: Vec<f64> = outputs.map(|o| o.iter().copied().filter(|&t| t > t0).collect()).unwrap_or_default();
    let record_all = outputs.is_none();
    // stops past this index are internal and not recorded
    let n_recorded_stops = if record_all { 1 } else { stops.len() };
    if stops.last().is_none_or(|&t| t < t_end) {
        stops.push(t_end);
    }
    let span = t_end - t0;
    let h_min = opts.min_step_fraction * span.max(t0.abs());

    let mut t = t0;
    let mut y = y0;
    let mut f = sys.rhs(t, &y);
    let mut h = initial_step(sys, t, &y, &f, span, opts.tol);
    let mut stop_idx = 0;
    let mut explicit_steps = 0usize;

    // explicit phase
    while stop_idx < stops.len() {
        let target = stops[stop_idx];
        if explicit_steps >= opts.max_explicit_steps || h < h_min {
            sol.stiff_switch_at = Some(t);
            log::debug!("switching to ROS2 at t = {t} (h = {h:e}, {explicit_steps} explicit steps)");
            break;
        }
        let mut step = h;
        let mut lands = false;
        if t + step >= target || (target - t - step) < 1e-12 * span {
            step = target - t;
            lands = true;
        }
        let k1 = f;
        let k2 = sys.rhs(t + C2 * step, &(y + k1 * (A21 * step)));
        let k3 = sys.rhs(t + C3 * step, &(y + (k1 * A31 + k2 * A32) * step));
        let k4 = sys.rhs(t + C4 * step, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * step));
        let k5 = sys.rhs(t + C5 * step, &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * step));
        let k6 = sys.rhs(t + step, &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * step));
        let y_new = y + (k1 * B1 + k3 * B3 + k4 * B4 + k5 * B5 + k6 * B6) * step;
        let k7 = sys.rhs(t + step, &y_new);
        let err = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * step;
        let en = error_norm(&err, &y, &y_new, opts.tol);
        explicit_steps += 1;
        if en <= 1.0 && en.is_finite() {
            t = if lands { target } else { t + step };
            y = y_new;
            f = k7;
            sol.accepted_steps += 1;
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * fac;
            if lands {
                if stop_idx < n_recorded_stops {
                    sol.times.push(t);
                    sol.states.push(y);
                }
                stop_idx += 1;
            } else if record_all {
                sol.times.push(t);
                sol.states.push(y);
            }
        } else {
            sol.rejected_steps += 1;
            let fac = if en.is_finite() { (0.9 * en.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h = step * fac;
        }
    }
    if stop_idx == stops.len() {
        return Ok(sol);
    }

    // stiff phase: ROS2 with the linearly implicit Euler step as error estimator
    let gamma = 1.0 + std::f64::consts::FRAC_1_SQRT_2;
    let mut stiff_steps = 0usize;
    h = h.max(1e3 * h_min).min(span);
    while stop_idx < stops.len() {
        let target = stops[stop_idx];
        if stiff_steps >= opts.max_stiff_steps || h < h_min {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let mut step = h;
        let mut lands = false;
        if t + step >= target || (target - t - step) < 1e-12 * span {
            step = target - t;
            lands = true;
        }
        let jac = sys.jacobian(t, &y);
        let w = SMatrix::<f64, D, D>::identity() - jac * (gamma * step);
        let lu = DMatrix::from_column_slice(D, D, w.as_slice()).lu();
        let solve = |b: &SVector<f64, D>| {
            lu.solve(&DVector::from_column_slice(b.as_slice()))
                .map(|x| SVector::<f64, D>::from_column_slice(x.as_slice()))
        };
        let f0 = sys.rhs(t, &y);
        let Some(k1) = solve(&f0) else {
            h *= 0.25;
            stiff_steps += 1;
            continue;
        };
        let f1 = sys.rhs(t + step, &(y + k1 * step));
        let Some(k2) = solve(&(f1 - k1 * 2.0)) else {
            h *= 0.25;
            stiff_steps += 1;
            continue;
        };
        let y_new = y + k1 * (1.5 * step) + k2 * (0.5 * step);
        let err = (k1 + k2) * (0.5 * step);
        let en = error_norm(&err, &y, &y_new, opts.tol);
        stiff_steps += 1;
        if en <= 1.0 && en.is_finite() {
            t = if lands { target } else { t + step };
            y = y_new;
            sol.accepted_steps += 1;
            let fac = if en == 0.0 { 4.0 } else { (0.8 * en.powf(-0.5)).clamp(0.2, 4.0) };
            h = step * fac;
            if lands {
                if stop_idx < n_recorded_stops {
                    sol.times.push(t);
                    sol.states.push(y);
                }
                stop_idx += 1;
            } else if record_all {
                sol.times.push(t);
                sol.states.push(y);
            }
        } else {
            sol.rejected_steps += 1;
            let fac = if en.is_finite() { (0.8 * en.powf(-0.5)).clamp(0.1, 0.9) } else { 0.1 };
            h = step * fac;
        }
    }
    Ok(sol)
}
