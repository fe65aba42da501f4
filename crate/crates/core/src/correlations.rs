//! Linearized dynamics of the second-order correlation deviations.
//!
//! The deviations `dg = (dg_n, dg_nm)` of `<n(t + tau) n(t)>` and
//! `<m_up(t + tau) n(t)>` from their factorized values obey
//! `d dg / d tau = A dg`, where `A` is the mean-field Jacobian at the steady
//! state. The photon component then has the closed form
//! `g2(tau) = 1 + exp(l' tau) [c1 cos(l'' tau) + c2 sin(l'' tau)]`
//! in the underdamped regime.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_csv, write_csv};
use crate::meanfield::{gamma_tilde_m, gamma_tilde_n, MeanFieldState};
use crate::moments::{MomentState, Ordering};
use crate::numeric::compensated::{two_prod, two_sum};
use crate::numeric::ode::{integrate, OdeOptions, OdeSystem, Tolerances};
use crate::params::ModelParams;

/// Relative width of the band `|gamma^2 - omega0^2| <= CRITICAL_RTOL gamma^2`
/// treated as critical damping.
pub const CRITICAL_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl CouplingMatrix {
    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        CouplingMatrix { a11: m[(0, 0)], a12: m[(0, 1)], a21: m[(1, 0)], a22: m[(1, 1)] }
    }

    pub fn as_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.a11, self.a12, self.a21, self.a22)
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    /// Determinant with an error-free product difference.
    pub fn determinant(&self) -> f64 {
        let (p, ep) = two_prod(self.a11, self.a22);
        let (q, eq) = two_prod(-self.a12, self.a21);
        let (s, es) = two_sum(p, q);
        s + (es + ep + eq)
    }

    pub fn apply(&self, g: &GVector) -> GVector {
        GVector {
            dg_n: self.a11 * g.dg_n + self.a12 * g.dg_nm,
            dg_nm: self.a21 * g.dg_n + self.a22 * g.dg_nm,
        }
    }
}

/// Coupling matrix at the steady state `ss`:
/// `a11 = -kappa - Gt_M`, `a12 = Gt_n`, `a21 = Gt_M`, `a22 = -(G_up + G_down) - Gt_n`
/// with `Gt_M = B_abs (M - m) - B_em m` and `Gt_n = B_abs n + B_em (n + 1)`.
pub fn coupling_matrix(p: &ModelParams, ss: &MeanFieldState) -> CouplingMatrix {
    let gm = gamma_tilde_m(p, ss.m_up);
    let gn = gamma_tilde_n(p, ss.n);
    CouplingMatrix { a11: -p.kappa - gm, a12: gn, a21: gm, a22: -(p.gamma_up + p.gamma_down) - gn }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Underdamped,
    Critical,
    Overdamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    pub gamma: f64,
    pub omega0_sq: f64,
    /// Real part of the complex pair, or the slower real eigenvalue when overdamped.
    pub lambda_real: f64,
    pub lambda_imag: f64,
    /// The other real eigenvalue when overdamped; equal to `lambda_real` otherwise.
    pub lambda_fast: f64,
    pub regime: Regime,
}

impl EigenResult {
    /// Classifies and solves `l^2 + 2 gamma l + omega0^2 = 0`.
    pub fn from_gamma_omega(gamma: f64, omega0_sq: f64) -> Self {
        let disc = gamma * gamma - omega0_sq;
        if disc.abs() <= CRITICAL_RTOL * gamma * gamma {
            EigenResult { gamma, omega0_sq, lambda_real: -gamma, lambda_imag: 0.0, lambda_fast: -gamma, regime: Regime::Critical }
        } else if disc < 0.0 {
            EigenResult {
                gamma,
                omega0_sq,
                lambda_real: -gamma,
                lambda_imag: (-disc).sqrt(),
                lambda_fast: -gamma,
                regime: Regime::Underdamped,
            }
        } else {
            let sq = disc.sqrt();
            // larger-magnitude root first, the other from the product of roots
            let l1 = -gamma - if gamma >= 0.0 { sq } else { -sq };
            let l2 = if l1 != 0.0 { omega0_sq / l1 } else { 0.0 };
            let (slow, fast) = if l1 >= l2 { (l1, l2) } else { (l2, l1) };
            EigenResult { gamma, omega0_sq, lambda_real: slow, lambda_imag: 0.0, lambda_fast: fast, regime: Regime::Overdamped }
        }
    }

    pub fn eigenvalues(&self) -> [Complex64; 2] {
        match self.regime {
            Regime::Underdamped => [
                Complex64::new(self.lambda_real, self.lambda_imag),
                Complex64::new(self.lambda_real, -self.lambda_imag),
            ],
            _ => [Complex64::new(self.lambda_real, 0.0), Complex64::new(self.lambda_fast, 0.0)],
        }
    }

    /// `1 / |lambda_real|`, infinite for a zero eigenvalue.
    pub fn relaxation_time(&self) -> f64 {
        1.0 / self.lambda_real.abs()
    }
}

pub fn eigen(m: &CouplingMatrix) -> EigenResult {
    EigenResult::from_gamma_omega(-0.5 * m.trace(), m.determinant())
}

/// Leading-order large-`M` eigenvalues for `G_down = 0`:
/// `gamma = M G_up B_em / (2 kappa)`, `omega0^2 = M G_up B_em`.
pub fn eigen_approx(p: &ModelParams) -> Result<EigenResult> {
    if p.kappa == 0.0 {
        return Err(Error::Domain("approximate eigenvalues need kappa > 0".into()));
    }
    if p.gamma_down != 0.0 {
        log::warn!("approximate eigenvalues assume gamma_down = 0 (got {})", p.gamma_down);
    }
    let g = p.molecules * p.gamma_up * p.b_em;
    Ok(EigenResult::from_gamma_omega(g / (2.0 * p.kappa), g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GVector {
    pub dg_n: f64,
    pub dg_nm: f64,
}

impl GVector {
    /// Zero-delay deviations from steady-state moments. Normal ordering removes
    /// the shot-noise term `<n>` from the photon component.
    pub fn initial(m: &MomentState, ordering: Ordering) -> Self {
        let dg_n = match ordering {
            Ordering::Direct => m.var_n(),
            Ordering::Normal => m.var_n() - m.n,
        };
        GVector { dg_n, dg_nm: m.cov_nm() }
    }
}

/// `g2 - 1` as a function of delay, in one of three closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Relaxation {
    /// `exp(l' t) [c1 cos(l'' t) + c2 sin(l'' t)]`
    Oscillatory { c1: f64, c2: f64, lambda_real: f64, lambda_imag: f64 },
    /// `(c1 + c_lin t) exp(l t)`
    Critical { c1: f64, c_lin: f64, lambda: f64 },
    /// `c_slow exp(l_slow t) + c_fast exp(l_fast t)`
    TwoExponential { c_slow: f64, lambda_slow: f64, c_fast: f64, lambda_fast: f64 },
}

impl Relaxation {
    /// Matches value `c1 = g2(0) - 1` and slope `s1 = d g2 / d tau (0)`.
    pub fn from_initial(e: &EigenResult, c1: f64, s1: f64) -> Self {
        match e.regime {
            Regime::Underdamped => Relaxation::Oscillatory {
                c1,
                c2: (s1 - e.lambda_real * c1) / e.lambda_imag,
                lambda_real: e.lambda_real,
                lambda_imag: e.lambda_imag,
            },
            Regime::Critical => Relaxation::Critical { c1, c_lin: s1 + e.gamma * c1, lambda: -e.gamma },
            Regime::Overdamped => {
                let (ls, lf) = (e.lambda_real, e.lambda_fast);
                let c_slow = (s1 - lf * c1) / (ls - lf);
                Relaxation::TwoExponential { c_slow, lambda_slow: ls, c_fast: c1 - c_slow, lambda_fast: lf }
            }
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        match *self {
            Relaxation::Oscillatory { c1, c2, lambda_real, lambda_imag } => {
                model_function(c1, c2, lambda_real, lambda_imag, tau) - 1.0
            }
            Relaxation::Critical { c1, c_lin, lambda } => (c1 + c_lin * tau) * (lambda * tau).exp(),
            Relaxation::TwoExponential { c_slow, lambda_slow, c_fast, lambda_fast } => {
                c_slow * (lambda_slow * tau).exp() + c_fast * (lambda_fast * tau).exp()
            }
        }
    }

    pub fn c1(&self) -> f64 {
        match *self {
            Relaxation::Oscillatory { c1, .. } | Relaxation::Critical { c1, .. } => c1,
            Relaxation::TwoExponential { c_slow, c_fast, .. } => c_slow + c_fast,
        }
    }
}

/// `1 + exp(l' tau) [c1 cos(l'' tau) + c2 sin(l'' tau)]`.
pub fn model_function(c1: f64, c2: f64, lambda_real: f64, lambda_imag: f64, tau: f64) -> f64 {
    let (s, c) = (lambda_imag * tau).sin_cos();
    1.0 + (lambda_real * tau).exp() * (c1 * c + c2 * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Curve {
    pub tau: Vec<f64>,
    pub g2: Vec<f64>,
    pub ordering: Ordering,
    pub stderr: Option<Vec<f64>>,
}

impl G2Curve {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// CSV with header `tau_ns,g2` or `tau_ns,g2,stderr`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        match &self.stderr {
            Some(se) => write_csv(
                w,
                &["tau_ns", "g2", "stderr"],
                (0..self.len()).map(|i| vec![self.tau[i], self.g2[i], se[i]]),
            ),
            None => write_csv(w, &["tau_ns", "g2"], (0..self.len()).map(|i| vec![self.tau[i], self.g2[i]])),
        }
    }

    pub fn from_csv(text: &str, ordering: Ordering) -> Result<Self> {
        let t = parse_csv(text)?;
        let tau = t.column("tau_ns").ok_or(Error::Parse { line: 1, message: "missing column tau_ns".into() })?;
        let g2 = t.column("g2").ok_or(Error::Parse { line: 1, message: "missing column g2".into() })?;
        Ok(G2Curve { tau, g2, ordering, stderr: t.column("stderr") })
    }
}

/// Closed-form solution of the correlation dynamics at a steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Solution {
    pub matrix: CouplingMatrix,
    pub eigen: EigenResult,
    pub initial: GVector,
    pub n_mean: f64,
    pub ordering: Ordering,
    pub relaxation: Relaxation,
}

impl G2Solution {
    pub fn new(p: &ModelParams, moments: &MomentState, ordering: Ordering) -> Result<Self> {
        if !(moments.n > 0.0) {
            return Err(Error::Domain("g2 is undefined for <n> = 0".into()));
        }
        let matrix = coupling_matrix(p, &moments.mean_field());
        let eigen = eigen(&matrix);
        let initial = GVector::initial(moments, ordering);
        let n_sq = moments.n * moments.n;
        let slope = matrix.apply(&initial).dg_n / n_sq;
        let relaxation = Relaxation::from_initial(&eigen, initial.dg_n / n_sq, slope);
        Ok(G2Solution { matrix, eigen, initial, n_mean: moments.n, ordering, relaxation })
    }

    pub fn g2(&self, tau: f64) -> f64 {
        1.0 + self.relaxation.eval(tau)
    }

    /// Samples the closed form on `tau_grid`.
    pub fn curve(&self, tau_grid: &[f64]) -> Result<G2Curve> {
        check_grid(tau_grid)?;
        Ok(G2Curve {
            tau: tau_grid.to_vec(),
            g2: tau_grid.iter().map(|&t| self.g2(t)).collect(),
            ordering: self.ordering,
            stderr: None,
        })
    }
}

pub(crate) fn check_grid(tau: &[f64]) -> Result<()> {
    if tau.first() != Some(&0.0) {
        return Err(Error::Domain("tau grid must start at 0".into()));
    }
    if tau.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("tau grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `g2(tau)` from steady-state moments, evaluated in closed form.
pub fn g2_curve(p: &ModelParams, moments: &MomentState, tau_grid: &[f64], ordering: Ordering) -> Result<G2Curve> {
    G2Solution::new(p, moments, ordering)?.curve(tau_grid)
}

struct LinearSystem(Matrix2<f64>);

impl OdeSystem<2> for LinearSystem {
    fn rhs(&self, _t: f64, y: &Vector2<f64>) -> Vector2<f64> {
        self.0 * y
    }

    fn jacobian(&self, _t: f64, _y: &Vector2<f64>) -> Matrix2<f64> {
        self.0
    }
}

/// `g2(tau)` by numerically integrating the linear initial-value problem.
pub fn g2_curve_numerical(
    p: &ModelParams,
    moments: &MomentState,
    tau_grid: &[f64],
    ordering: Ordering,
    tol: Tolerances,
) -> Result<G2Curve> {
    check_grid(tau_grid)?;
    let sol = G2Solution::new(p, moments, ordering)?;
    let y0 = Vector2::new(sol.initial.dg_n, sol.initial.dg_nm);
    let n_sq = moments.n * moments.n;
    let g2 = if tau_grid.len() == 1 {
        vec![1.0 + y0[0] / n_sq]
    } else {
        let opts = OdeOptions { tol, ..OdeOptions::default() };
        let t_end = *tau_grid.last().expect("non-empty");
        let out = integrate(&LinearSystem(sol.matrix.as_matrix()), 0.0, y0, t_end, Some(&tau_grid[1..]), &opts)?;
        out.states.iter().map(|y| 1.0 + y[0] / n_sq).collect()
    };
    Ok(G2Curve { tau: tau_grid.to_vec(), g2, ordering, stderr: None })
}

/// Evenly spaced grid `0, dt, ..., tau_max` with `points` entries.
pub fn uniform_grid(tau_max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(tau_max > 0.0) {
        return Err(Error::Domain("grid needs at least two points and tau_max > 0".into()));
    }
    let dt = tau_max / (points - 1) as f64;
    Ok((0..points).map(|i| if i + 1 == points { tau_max } else { i as f64 * dt }).collect())
}
