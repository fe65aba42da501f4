//! Closed second-moment hierarchy for `(n, m_up)`.
//!
//! The five unknowns are the means and the raw second moments `<n^2>`,
//! `<n m_up>` and `<m_up^2>`. Third moments enter through the absorption and
//! emission rates, which are bilinear in `n` and `m_up`; they are eliminated by
//! setting the mixed third cumulants to zero, e.g.
//! `<n m^2> = 2 <m><n m> + <n><m^2> - 2 <n><m>^2`.
//!
//! Two right-hand sides are provided. [`ClosureForm::Consistent`] follows from
//! the birth-death structure of the five transition channels with that closure.
//! [`ClosureForm::Published`] is a literal transcription of the widely quoted
//! appendix equations, whose `<m_up^2>` equation differs by
//! `G_up (M - <m>) - B_em (<n m> - <n><m>)`. The difference is negligible at
//! large `M` but not for `M ~ 100`, so the consistent form is the default.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{self, gamma_tilde_n, jacobian, mean_field_rhs, MeanFieldState};
use crate::params::ModelParams;

type Vector5 = SVector<f64, 5>;
type Matrix5 = SMatrix<f64, 5, 5>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub n: f64,
    pub m_up: f64,
    pub n2: f64,
    pub nm: f64,
    pub m2: f64,
}

impl MomentState {
    pub fn new(n: f64, m_up: f64, n2: f64, nm: f64, m2: f64) -> Self {
        MomentState { n, m_up, n2, nm, m2 }
    }

    /// Builds raw moments from means and covariances.
    pub fn from_central(n: f64, m_up: f64, var_n: f64, cov_nm: f64, var_m: f64) -> Self {
        MomentState { n, m_up, n2: n.mul_add(n, var_n), nm: n.mul_add(m_up, cov_nm), m2: m_up.mul_add(m_up, var_m) }
    }

    pub fn mean_field(&self) -> MeanFieldState {
        MeanFieldState::new(self.n, self.m_up)
    }

    pub fn var_n(&self) -> f64 {
        (-self.n).mul_add(self.n, self.n2)
    }

    pub fn cov_nm(&self) -> f64 {
        (-self.n).mul_add(self.m_up, self.nm)
    }

    pub fn var_m(&self) -> f64 {
        (-self.m_up).mul_add(self.m_up, self.m2)
    }

    /// Checks `var_n >= 0`, `var_m >= 0` and the Cauchy-Schwarz bound on the
    /// covariance, each up to `tol` relative to the moment scale.
    pub fn check_variances(&self, tol: f64) -> Result<()> {
        let (vn, c, vm) = (self.var_n(), self.cov_nm(), self.var_m());
        let sn = tol * self.n2.abs().max(1.0);
        let sm = tol * self.m2.abs().max(1.0);
        if vn < -sn {
            return Err(Error::Domain(format!("negative photon-number variance {vn}")));
        }
        if vm < -sm {
            return Err(Error::Domain(format!("negative excitation variance {vm}")));
        }
        if c.abs() > (vn.max(0.0) * vm.max(0.0)).sqrt() + tol * self.nm.abs().max(1.0) {
            return Err(Error::Domain(format!("covariance {c} violates the Cauchy-Schwarz bound")));
        }
        Ok(())
    }

    fn central(&self) -> Vector5 {
        Vector5::from([self.n, self.m_up, self.var_n(), self.cov_nm(), self.var_m()])
    }

    fn from_central_vec(x: &Vector5) -> Self {
        MomentState::from_central(x[0], x[1], x[2], x[3], x[4])
    }
}

/// Operator ordering of the correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    /// Shot-noise self term removed: `(<n^2> - <n>) / <n>^2` at zero delay.
    #[default]
    Normal,
    /// `<n(t + tau) n(t)> / <n>^2` literally.
    Direct,
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ordering::Normal => "normal",
            Ordering::Direct => "direct",
        })
    }
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Ordering::Normal),
            "direct" => Ok(Ordering::Direct),
            other => Err(Error::Domain(format!("unknown ordering `{other}` (expected normal or direct)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosureForm {
    #[default]
    Consistent,
    Published,
}

/// Transition rates of the five channels (loss, pump, nonradiative decay,
/// absorption, emission) averaged over a state with the given covariance.
fn channel_rates(p: &ModelParams, n: f64, m: f64, cov_nm: f64) -> [f64; 5] {
    [
        p.kappa * n,
        p.gamma_up * (p.molecules - m),
        p.gamma_down * m,
        p.b_abs * (n * (p.molecules - m) - cov_nm),
        p.b_em * (n * m + cov_nm + m),
    ]
}

/// Right-hand side in central variables `(n, m, var_n, cov_nm, var_m)`.
/// Under the closure the covariance obeys `dC/dt = J C + C J^T + D`, with `J`
/// the mean-field Jacobian at the means and `D` the channel diffusion matrix.
fn central_rhs(x: &Vector5, p: &ModelParams) -> Vector5 {
    let (n, m, vn, c, vm) = (x[0], x[1], x[2], x[3], x[4]);
    let s = MeanFieldState::new(n, m);
    let (dn_mf, dm_mf) = mean_field_rhs(&s, p);
    let b = p.b_total();
    let dn = dn_mf + b * c;
    let dm = dm_mf - b * c;
    let j = jacobian(&s, p);
    let cm = Matrix2::new(vn, c, c, vm);
    let a = channel_rates(p, n, m, c);
    let exch = a[3] + a[4];
    let d = Matrix2::new(a[0] + exch, -exch, -exch, a[1] + a[2] + exch);
    let dc = j * cm + cm * j.transpose() + d;
    Vector5::from([dn, dm, dc[(0, 0)], dc[(0, 1)], dc[(1, 1)]])
}

/// Time derivative of all five raw moments.
pub fn moment_rhs(state: &MomentState, p: &ModelParams, form: ClosureForm) -> MomentState {
    match form {
        ClosureForm::Consistent => {
            let d = central_rhs(&state.central(), p);
            let (n, m) = (state.n, state.m_up);
            MomentState {
                n: d[0],
                m_up: d[1],
                n2: d[2] + 2.0 * n * d[0],
                nm: d[3] + n * d[1] + m * d[0],
                m2: d[4] + 2.0 * m * d[1],
            }
        }
        ClosureForm::Published => published_rhs(state, p),
    }
}

fn published_rhs(s: &MomentState, p: &ModelParams) -> MomentState {
    let MomentState { n, m_up: m, n2, nm, m2 } = *s;
    let big_m = p.molecules;
    let (k, gu, gd, be, ba) = (p.kappa, p.gamma_up, p.gamma_down, p.b_em, p.b_abs);
    let dn = -k * n - ba * (big_m * n - nm) + be * (nm + m);
    let dm = gu * (big_m - m) - gd * m + ba * (big_m * n - nm) - be * (nm + m);
    let dn2 = k * (n - 2.0 * n2) - ba * (2.0 * n2 * (big_m - m) + 4.0 * m * n * n - 4.0 * n * nm - (big_m * n - nm))
        + be * (4.0 * n * nm + 2.0 * m * n2 - 4.0 * m * n * n + (3.0 * nm + m));
    let dnm = -k * nm + gu * (big_m * n - nm) - gd * nm
        + ba * (2.0 * m * n * (n - m) - big_m * (n + nm) + n * m2 + 2.0 * (m - n + 0.5) * nm + (big_m - m) * n2)
        + be * (2.0 * m * n * (n - m) - m + (n + 1.0) * m2 + 2.0 * (m - n - 1.0) * nm - m * n2);
    let dm2 = 2.0 * gu * (big_m * m + big_m - m - m2)
        + gd * (m - 2.0 * m2)
        + ba * ((2.0 * big_m - 1.0) * nm + big_m * n - 4.0 * m * nm - 2.0 * n * m2 + 4.0 * n * m * m)
        - be * (4.0 * m * nm + 2.0 * n * m2 - 4.0 * n * m * m + 2.0 * m2 - (n + 1.0) * m);
    MomentState { n: dn, m_up: dm, n2: dn2, nm: dnm, m2: dm2 }
}

/// Converged moment steady state with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSolution {
    pub moments: MomentState,
    /// False below threshold (`<n> < 1`), where the closure is not trustworthy.
    pub closure_reliable: bool,
    /// Largest component of the right-hand side, each relative to the dominant
    /// rate times the magnitude of the corresponding variable.
    pub residual: f64,
    pub iterations: usize,
}

fn dominant_rate(p: &ModelParams, s: &MeanFieldState) -> f64 {
    p.kappa
        .max(p.gamma_up + p.gamma_down)
        .max(gamma_tilde_n(p, s.n))
        .max(meanfield::gamma_tilde_m(p, s.m_up).abs())
}

fn scales(x: &Vector5) -> Vector5 {
    let cov_scale = (x[2].abs() * x[4].abs()).sqrt();
    Vector5::from([
        x[0].abs().max(1.0),
        x[1].abs().max(1.0),
        x[2].abs().max(1.0),
        x[3].abs().max(cov_scale).max(1.0),
        x[4].abs().max(1.0),
    ])
}

fn scaled_residual(x: &Vector5, p: &ModelParams, rate: f64) -> f64 {
    let f = central_rhs(x, p);
    let s = scales(x);
    (0..5).map(|i| (f[i] / (rate * s[i])).abs()).fold(0.0, f64::max)
}

/// Solves `J C + C J^T + D = 0` for the symmetric 2x2 covariance.
fn lyapunov_2x2(j: &Matrix2<f64>, d: &Matrix2<f64>) -> Option<(f64, f64, f64)> {
    let a = Matrix3::new(
        2.0 * j[(0, 0)],
        2.0 * j[(0, 1)],
        0.0,
        j[(1, 0)],
        j[(0, 0)] + j[(1, 1)],
        j[(0, 1)],
        0.0,
        2.0 * j[(1, 0)],
        2.0 * j[(1, 1)],
    );
    let rhs = Vector3::new(-d[(0, 0)], -d[(0, 1)], -d[(1, 1)]);
    let c = a.lu().solve(&rhs)?;
    Some((c[0], c[1], c[2]))
}

const NEWTON_STEP_TOL: f64 = 1e-13;
const RESIDUAL_TOL: f64 = 1e-10;
// The published equations are evaluated in raw moments, where the squares of
// the means swamp the covariances at large M.
const RESIDUAL_TOL_RAW: f64 = 1e-6;

/// Steady state of the closed five-moment system.
///
/// Newton iteration on scaled central variables, warm-started from the
/// mean-field root and the covariance of the linearized fluctuations.
pub fn moment_steady_state(p: &ModelParams) -> Result<MomentSolution> {
    moment_steady_state_with(p, ClosureForm::Consistent)
}

pub fn moment_steady_state_with(p: &ModelParams, form: ClosureForm) -> Result<MomentSolution> {
    p.validate()?;
    if p.gamma_up == 0.0 && p.kappa == 0.0 {
        return Err(Error::Domain("moment steady state is not unique for gamma_up = kappa = 0".into()));
    }
    let mf = meanfield::steady_state(p)?;
    let j = jacobian(&mf, p);
    let a = channel_rates(p, mf.n, mf.m_up, 0.0);
    let exch = a[3] + a[4];
    let d = Matrix2::new(a[0] + exch, -exch, -exch, a[1] + a[2] + exch);
    let (vn, c, vm) = lyapunov_2x2(&j, &d).unwrap_or((mf.n, 0.0, mf.m_up));
    let mut x = Vector5::from([mf.n, mf.m_up, vn, c, vm]);
    let rate = dominant_rate(p, &mf).max(f64::MIN_POSITIVE);

    let eval = |x: &Vector5| -> Vector5 {
        match form {
            ClosureForm::Consistent => central_rhs(x, p),
            ClosureForm::Published => {
                // published equations are in raw moments; map their residual
                // to central coordinates so the same Newton scaling applies
                let s = MomentState::from_central_vec(x);
                let r = published_rhs(&s, p);
                Vector5::from([
                    r.n,
                    r.m_up,
                    r.n2 - 2.0 * s.n * r.n,
                    r.nm - s.n * r.m_up - s.m_up * r.n,
                    r.m2 - 2.0 * s.m_up * r.m_up,
                ])
            }
        }
    };
    let resid = |x: &Vector5| -> f64 {
        let f = eval(x);
        let s = scales(x);
        (0..5).map(|i| (f[i] / (rate * s[i])).abs()).fold(0.0, f64::max)
    };

    let tol = match form {
        ClosureForm::Consistent => RESIDUAL_TOL,
        ClosureForm::Published => RESIDUAL_TOL_RAW,
    };
    let mut r = resid(&x);
    let mut iterations = 0;
    for it in 0..200 {
        iterations = it;
        let s = scales(&x);
        let f = eval(&x);
        let mut jac = Matrix5::zeros();
        for col in 0..5 {
            let h = 1e-7 * s[col];
            let mut xp = x;
            let mut xm = x;
            xp[col] += h;
            xm[col] -= h;
            let dcol = (eval(&xp) - eval(&xm)) / (2.0 * h);
            jac.set_column(col, &dcol);
        }
        let Some(step) = jac.lu().solve(&(-f)) else {
            return Err(Error::NoConvergence("singular Jacobian in moment steady state".into()));
        };
        let rel_step = (0..5).map(|i| (step[i] / s[i]).abs()).fold(0.0, f64::max);
        let mut lambda = 1.0;
        let mut moved = false;
        while lambda > 1e-8 {
            let trial = x + step * lambda;
            let rt = resid(&trial);
            if rt.is_finite() && (rt < r || rt <= tol) {
                x = trial;
                r = rt;
                moved = true;
                break;
            }
            lambda *= 0.5;
        }
        if rel_step * lambda < NEWTON_STEP_TOL || (!moved && r <= tol) {
            break;
        }
        if !moved {
            return Err(Error::NoConvergence(format!("moment Newton stalled at scaled residual {r:e}")));
        }
    }
    if !(r <= tol) {
        return Err(Error::NoConvergence(format!("moment steady state residual {r:e} above {tol:e}")));
    }
    let moments = MomentState::from_central_vec(&x);
    let closure_reliable = moments.n >= 1.0;
    if !closure_reliable {
        log::warn!("moment closure is unreliable below threshold (<n> = {:.3e})", moments.n);
    }
    Ok(MomentSolution { moments, closure_reliable, residual: r, iterations })
}

/// Scaled residual of the consistent closure at `state`, as reported in
/// [`MomentSolution::residual`].
pub fn residual(state: &MomentState, p: &ModelParams) -> f64 {
    let x = state.central();
    scaled_residual(&x, p, dominant_rate(p, &state.mean_field()).max(f64::MIN_POSITIVE))
}

/// Zero-delay second-order correlation.
pub fn g2_zero(m: &MomentState, ordering: Ordering) -> Result<f64> {
    if !(m.n > 0.0) {
        return Err(Error::Domain("g2(0) is undefined for <n> = 0".into()));
    }
    let n_sq = m.n * m.n;
    Ok(match ordering {
        Ordering::Direct => m.n2 / n_sq,
        Ordering::Normal => (m.n2 - m.n) / n_sq,
    })
}
