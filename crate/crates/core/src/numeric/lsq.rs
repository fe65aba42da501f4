//! Levenberg-Marquardt for small nonlinear least-squares problems.
//!
//! Damping is applied to the diagonal of `J^T J` (Marquardt scaling) so that
//! the iteration is invariant under rescaling of the parameters, and the damping
//! update follows Nielsen's gain-ratio rule.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquares {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Jacobian of the residuals. The default uses central differences.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let r0 = self.residuals(x);
        let mut jac = DMatrix::zeros(r0.len(), x.len());
        for j in 0..x.len() {
            let h = 1e-6 * x[j].abs().max(1e-8);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (self.residuals(&xp) - self.residuals(&xm)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    /// Relative step tolerance.
    pub xtol: f64,
    /// Tolerance on the cosine between residual and Jacobian columns.
    pub gtol: f64,
    /// Relative reduction of the cost below which the iteration stops.
    pub ftol: f64,
    pub max_iter: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { xtol: 1e-12, gtol: 1e-12, ftol: 1e-15, max_iter: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStop {
    Gradient,
    Step,
    Cost,
    MaxIter,
    /// Damping grew without bound: no descent direction could be found.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    /// Sum of squared residuals at `x`.
    pub ssr: f64,
    pub iterations: usize,
    pub stop: LmStop,
    /// `J^T J` at the returned point.
    pub jtj: DMatrix<f64>,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        !matches!(self.stop, LmStop::MaxIter | LmStop::Stalled)
    }
}

fn scaled_gradient(jac: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    let g = jac.tr_mul(r);
    let mut worst = 0.0f64;
    for j in 0..jac.ncols() {
        let cn = jac.column(j).norm();
        if cn > 0.0 {
            worst = worst.max(g[j].abs() / (cn * rn));
        }
    }
    worst
}

pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(problem: &P, x0: DVector<f64>, opts: &LmOptions) -> LmReport {
    let n = x0.len();
    let mut x = x0;
    let mut r = problem.residuals(&x);
    let mut cost = r.norm_squared();
    let mut jac = problem.jacobian(&x);
    let mut jtj = jac.tr_mul(&jac);
    let mut g = jac.tr_mul(&r);
    let dmax = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
    let mut mu = 1e-3;
    let mut nu = 2.0;
    let mut it = 0;
    if !cost.is_finite() {
        return LmReport { x, ssr: cost, iterations: 0, stop: LmStop::Stalled, jtj };
    }
    let stop = loop {
        if scaled_gradient(&jac, &r) <= opts.gtol {
            break LmStop::Gradient;
        }
        if it >= opts.max_iter {
            break LmStop::MaxIter;
        }
        it += 1;
        let diag: Vec<f64> = (0..n).map(|i| jtj[(i, i)].max(1e-30 * dmax.max(1e-300))).collect();
        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += mu * diag[i];
        }
        let Some(h) = a.cholesky().map(|c| c.solve(&(-&g))) else {
            mu *= nu;
            nu *= 2.0;
            if mu > 1e30 {
                break LmStop::Stalled;
            }
            continue;
        };
        let xs_norm = (0..n).map(|i| diag[i] * x[i] * x[i]).sum::<f64>().sqrt();
        let hs_norm = (0..n).map(|i| diag[i] * h[i] * h[i]).sum::<f64>().sqrt();
        let x_new = &x + &h;
        let r_new = problem.residuals(&x_new);
        let cost_new = r_new.norm_squared();
        // predicted reduction of 0.5 * ssr
        let pred = 0.5 * (0..n).map(|i| h[i] * (mu * diag[i] * h[i] - g[i])).sum::<f64>();
        let actual = 0.5 * (cost - cost_new);
        let rho = if pred > 0.0 { actual / pred } else { -1.0 };
        if cost_new.is_finite() && rho > 0.0 {
            let rel_drop = (cost - cost_new) / cost.max(f64::MIN_POSITIVE);
            x = x_new;
            r = r_new;
            cost = cost_new;
            jac = problem.jacobian(&x);
            jtj = jac.tr_mul(&jac);
            g = jac.tr_mul(&r);
            mu *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            if hs_norm <= opts.xtol * (xs_norm + opts.xtol) {
                break LmStop::Step;
            }
            if rel_drop <= opts.ftol && rho > 0.25 {
                break LmStop::Cost;
            }
            if cost == 0.0 {
                break LmStop::Cost;
            }
        } else {
            if hs_norm <= opts.xtol * (xs_norm + opts.xtol) {
                break LmStop::Step;
            }
            mu *= nu;
            nu *= 2.0;
            if mu > 1e30 {
                break LmStop::Stalled;
            }
        }
    };
    LmReport { x, ssr: cost, iterations: it, stop, jtj }
}
