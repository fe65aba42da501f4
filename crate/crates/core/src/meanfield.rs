//! Mean-field rate equations for the condensate photon number `n` and the
//! excited-molecule number `m_up`.
//!
//! ```text
//! dn/dt    = -kappa n - B_abs (M - m) n + B_em (n + 1) m
//! dm/dt    = G_up (M - m) - G_down m + B_abs (M - m) n - B_em (n + 1) m
//! ```
//!
//! At experimental scale the absorption and emission terms are each about three
//! orders of magnitude larger than their difference, so the right-hand side is
//! evaluated through the effective rate `gamma_tilde_m = B_abs (M - m) - B_em m`
//! computed with compensated products.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_csv;
use crate::numeric::compensated::{two_prod, two_sum};
use crate::numeric::ode::{integrate as integrate_ode, OdeOptions, OdeSystem, Tolerances};
use crate::numeric::roots::{brent, RootOptions};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub n: f64,
    pub m_up: f64,
}

impl MeanFieldState {
    pub fn new(n: f64, m_up: f64) -> Self {
        MeanFieldState { n, m_up }
    }

    /// Checks `n >= 0` and `0 <= m_up <= M`.
    pub fn validate(&self, molecules: f64) -> Result<()> {
        if !(self.n >= 0.0) || !self.n.is_finite() {
            return Err(Error::Domain(format!("photon number must be >= 0, got {}", self.n)));
        }
        if !(self.m_up >= 0.0 && self.m_up <= molecules) {
            return Err(Error::Domain(format!("m_up must lie in [0, {molecules}], got {}", self.m_up)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub states: Vec<MeanFieldState>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&MeanFieldState> {
        self.states.last()
    }

    /// Writes the series as CSV with header `t_ns,n,m_up`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_csv(
            w,
            &["t_ns", "n", "m_up"],
            self.times.iter().zip(&self.states).map(|(t, s)| vec![*t, s.n, s.m_up]),
        )
    }
}

/// `B_abs (M - m) - B_em m`, accumulated with error-free products.
pub fn gamma_tilde_m(p: &ModelParams, m_up: f64) -> f64 {
    let (a, ea) = two_prod(p.b_abs, p.molecules);
    let (b, eb) = two_prod(-p.b_total(), m_up);
    let (s, es) = two_sum(a, b);
    s + (es + ea + eb)
}

/// `B_abs n + B_em (n + 1)`.
pub fn gamma_tilde_n(p: &ModelParams, n: f64) -> f64 {
    p.b_total() * n + p.b_em
}

/// Time derivatives `(dn/dt, dm_up/dt)`.
pub fn mean_field_rhs(state: &MeanFieldState, p: &ModelParams) -> (f64, f64) {
    let gm = gamma_tilde_m(p, state.m_up);
    let emit_spont = p.b_em * state.m_up;
    let exchange = gm * state.n;
    let dn = -p.kappa * state.n - exchange + emit_spont;
    let dm = p.gamma_up * (p.molecules - state.m_up) - p.gamma_down * state.m_up + exchange - emit_spont;
    (dn, dm)
}

/// Jacobian of [`mean_field_rhs`] with respect to `(n, m_up)`. It coincides
/// with the coupling matrix of the linearized correlation dynamics.
pub fn jacobian(state: &MeanFieldState, p: &ModelParams) -> Matrix2<f64> {
    let gm = gamma_tilde_m(p, state.m_up);
    let gn = gamma_tilde_n(p, state.n);
    Matrix2::new(-p.kappa - gm, gn, gm, -(p.gamma_up + p.gamma_down) - gn)
}

struct MeanFieldOde<'a>(&'a ModelParams);

impl OdeSystem<2> for MeanFieldOde<'_> {
    fn rhs(&self, _t: f64, y: &Vector2<f64>) -> Vector2<f64> {
        let (dn, dm) = mean_field_rhs(&MeanFieldState::new(y[0], y[1]), self.0);
        Vector2::new(dn, dm)
    }

    fn jacobian(&self, _t: f64, y: &Vector2<f64>) -> Matrix2<f64> {
        jacobian(&MeanFieldState::new(y[0], y[1]), self.0)
    }
}

/// Integrates the rate equations from `initial` up to `t_end` ns, recording
/// every accepted step.
pub fn integrate(p: &ModelParams, initial: MeanFieldState, t_end: f64, tol: Tolerances) -> Result<TimeSeries> {
    integrate_with(p, initial, t_end, None, tol)
}

/// Like [`integrate`] but records the solution only at `times` (plus `t = 0`).
pub fn integrate_at(p: &ModelParams, initial: MeanFieldState, times: &[f64], tol: Tolerances) -> Result<TimeSeries> {
    let t_end = *times.last().ok_or_else(|| Error::Domain("empty output grid".into()))?;
    integrate_with(p, initial, t_end, Some(times), tol)
}

fn integrate_with(
    p: &ModelParams,
    initial: MeanFieldState,
    t_end: f64,
    outputs: Option<&[f64]>,
    tol: Tolerances,
) -> Result<TimeSeries> {
    p.validate()?;
    initial.validate(p.molecules)?;
    if !(t_end > 0.0) {
        return Err(Error::Domain(format!("t_end must be positive, got {t_end}")));
    }
    let opts = OdeOptions { tol, ..OdeOptions::default() };
    let sol = integrate_ode(&MeanFieldOde(p), 0.0, Vector2::new(initial.n, initial.m_up), t_end, outputs, &opts)?;
    Ok(TimeSeries {
        times: sol.times,
        states: sol.states.iter().map(|y| MeanFieldState::new(y[0], y[1])).collect(),
    })
}

/// Residual bound used to accept a steady state.
pub fn steady_state_tolerance(p: &ModelParams) -> f64 {
    1e-10 * p.kappa.max(p.gamma_up).max(p.gamma_down) * p.molecules
}

/// Residual accepted at `s`: [`steady_state_tolerance`], or the rounding floor
/// of the rate terms when they are so large that the fixed bound lies below it.
pub fn residual_bound(s: &MeanFieldState, p: &ModelParams) -> f64 {
    let exchange = (p.b_abs * (p.molecules - s.m_up) + p.b_em * s.m_up) * s.n;
    let scale = p.kappa * s.n
        + exchange
        + p.b_em * s.m_up
        + p.gamma_up * (p.molecules - s.m_up)
        + p.gamma_down * s.m_up;
    steady_state_tolerance(p).max(16.0 * f64::EPSILON * scale)
}

fn residual_norm(s: &MeanFieldState, p: &ModelParams) -> f64 {
    let (dn, dm) = mean_field_rhs(s, p);
    dn.hypot(dm)
}

/// Photon number on the physical branch, from the quadratic obtained by
/// eliminating `m_up` between the two stationarity conditions:
/// `kappa B n^2 + [kappa (G_up + G_down) + B_abs M G_down - G_up M B_em + kappa B_em] n - G_up M B_em = 0`.
fn photon_number_seed(p: &ModelParams) -> Option<f64> {
    let g = p.gamma_up + p.gamma_down;
    let a = p.kappa * p.b_total();
    let b = p.kappa * g + p.b_abs * p.molecules * p.gamma_down - p.gamma_up * p.molecules * p.b_em + p.kappa * p.b_em;
    let c = -p.gamma_up * p.molecules * p.b_em;
    if c == 0.0 {
        // n = 0 is a root; the other one is negative or the system is degenerate
        return if a > 0.0 && -b / a > 0.0 { None } else { Some(0.0) };
    }
    if a == 0.0 {
        let n = -c / b;
        return (n.is_finite() && n >= 0.0).then_some(n);
    }
    let disc = (b * b - 4.0 * a * c).sqrt();
    let n = if b > 0.0 { 2.0 * c / (-b - disc) } else { (-b + disc) / (2.0 * a) };
    (n.is_finite() && n >= 0.0).then_some(n)
}

fn excited_for_photons(p: &ModelParams, n: f64) -> f64 {
    let gn = gamma_tilde_n(p, n);
    let g = p.gamma_up + p.gamma_down;
    if n > 0.0 && gn > 0.0 {
        (n * (p.kappa + p.b_abs * p.molecules) / gn).min(p.molecules)
    } else if g > 0.0 {
        ((p.gamma_up * p.molecules - p.kappa * n) / g).clamp(0.0, p.molecules)
    } else {
        0.0
    }
}

/// Damped Newton on the 2-D system, confined to the physical box.
fn newton(p: &ModelParams, start: MeanFieldState) -> Option<MeanFieldState> {
    let mut s = start;
    let mut r = residual_norm(&s, p);
    for _ in 0..100 {
        if r <= residual_bound(&s, p) {
            return Some(s);
        }
        let (dn, dm) = mean_field_rhs(&s, p);
        let step = jacobian(&s, p).lu().solve(&Vector2::new(-dn, -dm))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-10 {
            let trial = MeanFieldState::new(s.n + lambda * step[0], s.m_up + lambda * step[1]);
            if trial.n >= 0.0 && trial.m_up >= 0.0 && trial.m_up <= p.molecules {
                let rt = residual_norm(&trial, p);
                if rt < r || rt <= residual_bound(&trial, p) {
                    s = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return (r <= residual_bound(&s, p)).then_some(s);
        }
    }
    (r <= residual_bound(&s, p)).then_some(s)
}

fn relax_by_integration(p: &ModelParams) -> Result<MeanFieldState> {
    let slowest = [p.kappa, p.gamma_up + p.gamma_down, p.b_total()]
        .into_iter()
        .filter(|&r| r > 0.0)
        .fold(f64::INFINITY, f64::min);
    let mut s = MeanFieldState::new(0.0, p.molecules * p.gamma_up / (p.gamma_up + p.gamma_down).max(f64::MIN_POSITIVE));
    s.m_up = s.m_up.min(p.molecules);
    let mut horizon = 50.0 / slowest;
    for _ in 0..8 {
        let ts = integrate(p, s, horizon, Tolerances::default())?;
        s = *ts.last().expect("non-empty series");
        s.n = s.n.max(0.0);
        s.m_up = s.m_up.clamp(0.0, p.molecules);
        if let Some(root) = newton(p, s) {
            return Ok(root);
        }
        horizon *= 4.0;
    }
    Err(Error::NoConvergence("mean-field steady state: long-time integration did not settle".into()))
}

/// Physical root of the rate equations.
pub fn steady_state(p: &ModelParams) -> Result<MeanFieldState> {
    p.validate()?;
    if p.kappa == 0.0 && p.gamma_down == 0.0 {
        return Err(Error::Domain("steady state needs kappa > 0 or gamma_down > 0".into()));
    }
    if let Some(n0) = photon_number_seed(p) {
        let seed = MeanFieldState::new(n0, excited_for_photons(p, n0));
        if let Some(root) = newton(p, seed) {
            return Ok(root);
        }
        log::debug!("Newton from the quadratic seed failed, falling back to integration");
    }
    relax_by_integration(p)
}

/// Leading-order large-`M` steady state:
/// `n = M (B_em G_up - B_abs G_down) / (kappa (B_em + B_abs))`,
/// `m_up = (M B_abs + kappa) / (B_abs + B_em)`.
pub fn steady_state_closed_form(p: &ModelParams) -> Result<MeanFieldState> {
    let denom = p.kappa * p.b_total();
    if denom == 0.0 {
        return Err(Error::Domain("closed form needs kappa (B_em + B_abs) != 0".into()));
    }
    if p.molecules < 1e3 {
        log::warn!("closed-form steady state is a large-M expansion; M = {} is small", p.molecules);
    }
    let n = p.molecules * (p.b_em * p.gamma_up - p.b_abs * p.gamma_down) / denom;
    let m_up = (p.molecules * p.b_abs + p.kappa) / p.b_total();
    Ok(MeanFieldState::new(n, m_up))
}

/// Pump rate whose steady state has photon number `n_target`. The bracket is
/// grown geometrically around the estimate `kappa n_target / M`.
pub fn pump_for_target_n(p: &ModelParams, n_target: f64) -> Result<f64> {
    if !(n_target > 0.0) || !n_target.is_finite() {
        return Err(Error::Domain(format!("target photon number must be positive, got {n_target}")));
    }
    p.validate()?;
    let f = |g: f64| -> f64 {
        match steady_state(&p.with_gamma_up(g)) {
            Ok(s) => s.n - n_target,
            Err(_) => f64::NAN,
        }
    };
    let guess = (p.kappa * n_target / p.molecules).max(f64::MIN_POSITIVE);
    let mut lo = guess;
    let mut hi = guess;
    let mut f_lo = f(lo);
    let mut f_hi = f_lo;
    let mut tries = 0;
    while !(f_lo < 0.0) {
        lo *= 0.5;
        f_lo = f(lo);
        tries += 1;
        if tries > 200 || lo == 0.0 {
            return Err(Error::NoConvergence(format!("could not bracket pump rate for n = {n_target} from below")));
        }
    }
    tries = 0;
    while !(f_hi > 0.0) {
        hi *= 2.0;
        f_hi = f(hi);
        tries += 1;
        if tries > 200 || !hi.is_finite() {
            return Err(Error::NoConvergence(format!(
                "photon number {n_target} is not reachable by pumping (steady state saturates)"
            )));
        }
    }
    brent(f, lo, hi, RootOptions { xtol: 0.0, rtol: 2.0 * f64::EPSILON, max_iter: 300 })
}
