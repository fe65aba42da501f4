//! Fitting the damped-oscillation model to g2(tau), and the oscillation
//! frequency as a function of the steady-state photon number.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::{coupling_matrix, eigen, model_function, G2Curve, Regime};
use crate::error::{Error, Result};
use crate::io::{parse_csv, write_csv};
use crate::meanfield::pump_for_target_n;
use crate::moments::{g2_zero, moment_steady_state, Ordering};
use crate::numeric::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::params::ModelParams;

/// Minimum number of points accepted by [`fit_g2`].
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `exp(l' t) [c1 cos(l'' t) + c2 sin(l'' t)]`
    DampedOscillation,
    /// `a exp(l1 t) + b exp(l2 t)`, reported through its slow rate.
    TwoExponential,
    /// Constant data; only `c1` is meaningful.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub c1: f64,
    pub c2: f64,
    /// GHz, nonpositive for decaying data.
    pub lambda_real: f64,
    /// GHz, zero unless the model oscillates.
    pub lambda_imag: f64,
    /// `1 / |lambda_real|` in ns.
    pub tau_c: f64,
    /// Oscillation frequency, equal to `lambda_imag`.
    pub omega2: f64,
    pub model: FitModel,
    /// Second exponential `(amplitude, rate)` of the two-exponential model.
    pub fast: Option<(f64, f64)>,
    /// Set when the data carry no decay or oscillation to fit.
    pub degenerate: bool,
    /// Parameter covariance, ordered `[c1, c2, l', l'']` or `[a, l_slow, b, l_fast]`.
    pub covariance: Vec<Vec<f64>>,
    /// Root of the (weighted) sum of squared residuals.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl FitResult {
    /// Fitted `g2(tau)`.
    pub fn eval(&self, tau: f64) -> f64 {
        match self.model {
            FitModel::DampedOscillation => model_function(self.c1, self.c2, self.lambda_real, self.lambda_imag, tau),
            FitModel::TwoExponential => {
                let (b, l2) = self.fast.expect("two-exponential fit has a fast term");
                1.0 + self.c1 * (self.lambda_real * tau).exp() + b * (l2 * tau).exp()
            }
            FitModel::Constant => 1.0 + self.c1,
        }
    }
}

/// Residuals `sqrt(w) (model - y)` of the damped cosine in `x = [c1, c2, l', l'']`.
struct DampedCosine<'a> {
    tau: &'a [f64],
    y: &'a [f64],
    sw: &'a [f64],
}

impl LeastSquares for DampedCosine<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.tau.len(),
            self.tau.iter().zip(self.y).zip(self.sw).map(|((&t, &y), &w)| w * (model_function(x[0], x[1], x[2], x[3], t) - 1.0 - y)),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (c1, c2, lr, li) = (x[0], x[1], x[2], x[3]);
        let mut j = DMatrix::zeros(self.tau.len(), 4);
        for (i, (&t, &w)) in self.tau.iter().zip(self.sw).enumerate() {
            let e = (lr * t).exp();
            let (s, c) = (li * t).sin_cos();
            let f = e * (c1 * c + c2 * s);
            j[(i, 0)] = w * e * c;
            j[(i, 1)] = w * e * s;
            j[(i, 2)] = w * t * f;
            j[(i, 3)] = w * t * e * (c2 * c - c1 * s);
        }
        j
    }
}

/// Residuals of `a exp(l1 t) + b exp(l2 t)` in `x = [a, l1, b, l2]`.
struct TwoExp<'a> {
    tau: &'a [f64],
    y: &'a [f64],
    sw: &'a [f64],
}

impl LeastSquares for TwoExp<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.tau.len(),
            self.tau
                .iter()
                .zip(self.y)
                .zip(self.sw)
                .map(|((&t, &y), &w)| w * (x[0] * (x[1] * t).exp() + x[2] * (x[3] * t).exp() - y)),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.tau.len(), 4);
        for (i, (&t, &w)) in self.tau.iter().zip(self.sw).enumerate() {
            let e1 = (x[1] * t).exp();
            let e2 = (x[3] * t).exp();
            j[(i, 0)] = w * e1;
            j[(i, 1)] = w * x[0] * t * e1;
            j[(i, 2)] = w * e2;
            j[(i, 3)] = w * x[2] * t * e2;
        }
        j
    }
}

/// Weighted linear least squares for the two amplitudes of basis functions
/// `f` and `g`.
fn amplitudes(tau: &[f64], y: &[f64], sw: &[f64], f: impl Fn(f64) -> (f64, f64)) -> (f64, f64) {
    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for ((&t, &y), &w) in tau.iter().zip(y).zip(sw) {
        let (u, v) = f(t);
        let (u, v, y) = (u * w, v * w, y * w);
        a[(0, 0)] += u * u;
        a[(0, 1)] += u * v;
        a[(1, 1)] += v * v;
        b[0] += u * y;
        b[1] += v * y;
    }
    a[(1, 0)] = a[(0, 1)];
    let sol: Option<Vector2<f64>> = a.lu().solve(&b);
    match sol {
        Some(c) if c.iter().all(|v| v.is_finite()) => (c[0], c[1]),
        _ => {
            let c = if a[(0, 0)] > 0.0 { b[0] / a[(0, 0)] } else { 0.0 };
            (c, 0.0)
        }
    }
}

/// Frequency of the largest nonzero peak of the (nonuniform) Fourier
/// transform of `y`, or `None` when the spectrum decreases from zero.
fn dominant_frequency(tau: &[f64], y: &[f64]) -> Option<f64> {
    let n = tau.len();
    let span = tau[n - 1] - tau[0];
    let min_dt = tau.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let nyquist = std::f64::consts::PI / min_dt;
    let d_omega = 2.0 * std::f64::consts::PI / (8.0 * span);
    let steps = ((nyquist / d_omega) as usize).min(8 * n).max(8);
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            let l = if i > 0 { tau[i] - tau[i - 1] } else { 0.0 };
            let r = if i + 1 < n { tau[i + 1] - tau[i] } else { 0.0 };
            0.5 * (l + r)
        })
        .collect();
    let power: Vec<f64> = (0..=steps)
        .map(|k| {
            let w = k as f64 * d_omega;
            let (mut re, mut im) = (0.0, 0.0);
            for ((&t, &v), &q) in tau.iter().zip(y).zip(&weights) {
                let (s, c) = (w * t).sin_cos();
                re += q * v * c;
                im -= q * v * s;
            }
            re * re + im * im
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for k in 1..steps {
        if power[k] > power[k - 1] && power[k] >= power[k + 1] && best.is_none_or(|(_, p)| power[k] > p) {
            best = Some((k, power[k]));
        }
    }
    best.map(|(k, _)| k as f64 * d_omega)
}

/// Decay rate from a log-linear fit of the envelope: local maxima of `|y|`
/// when there are at least two, otherwise all points above a floor.
fn envelope_rate(tau: &[f64], y: &[f64]) -> f64 {
    let abs: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    let peak = abs.iter().copied().fold(0.0, f64::max);
    let mut pts: Vec<(f64, f64)> = (1..abs.len().saturating_sub(1))
        .filter(|&i| abs[i] >= abs[i - 1] && abs[i] > abs[i + 1] && abs[i] > 1e-3 * peak)
        .map(|i| (tau[i], abs[i].ln()))
        .collect();
    if abs[0] > 1e-3 * peak {
        pts.insert(0, (tau[0], abs[0].ln()));
    }
    if pts.len() < 2 {
        pts = tau.iter().zip(&abs).filter(|(_, &a)| a > 1e-3 * peak).map(|(&t, &a)| (t, a.ln())).collect();
    }
    let span = tau[tau.len() - 1] - tau[0];
    let fallback = -1.0 / span;
    if pts.len() < 2 {
        return fallback;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if slope.is_finite() && slope < 0.0 {
        slope
    } else {
        fallback
    }
}

/// Data rescaled so that `max |y| = 1` and the largest weight is 1. The fit
/// then sees identical numbers for curves differing only in amplitude.
struct Prepared {
    tau: Vec<f64>,
    y: Vec<f64>,
    sw: Vec<f64>,
    weighted: bool,
    raw_mean: f64,
    raw_spread: f64,
    amp: f64,
    wscale: f64,
}

fn prepare(curve: &G2Curve) -> Result<Prepared> {
    let n = curve.len();
    if n < MIN_POINTS || curve.g2.len() != n {
        return Err(Error::InsufficientData(format!("fit needs at least {MIN_POINTS} points, got {n}")));
    }
    if curve.tau.windows(2).any(|w| !(w[1] > w[0])) || curve.tau.iter().chain(&curve.g2).any(|v| !v.is_finite()) {
        return Err(Error::Domain("delays must be finite and strictly increasing with finite g2".into()));
    }
    let (sw, weighted) = match &curve.stderr {
        Some(se) if se.len() == n && se.iter().all(|s| *s > 0.0 && s.is_finite()) => {
            (se.iter().map(|s| 1.0 / s).collect(), true)
        }
        _ => (vec![1.0; n], false),
    };
    let y: Vec<f64> = curve.g2.iter().map(|g| g - 1.0).collect();
    let raw_mean = y.iter().sum::<f64>() / n as f64;
    let raw_spread = y.iter().map(|v| (v - raw_mean).abs()).fold(0.0, f64::max);
    let amp = match y.iter().map(|v| v.abs()).fold(0.0, f64::max) {
        a if a > 0.0 => a,
        _ => 1.0,
    };
    let wscale = sw.iter().fold(0.0f64, |m, w| m.max(w * amp));
    Ok(Prepared {
        tau: curve.tau.clone(),
        y: y.iter().map(|v| v / amp).collect(),
        sw: sw.iter().map(|w| w * amp / wscale).collect(),
        weighted,
        raw_mean,
        raw_spread,
        amp,
        wscale,
    })
}

impl Prepared {
    /// Covariance of the physical parameters from the normalized fit;
    /// `amplitude[k]` marks parameters that scale with the data.
    fn covariance(&self, jtj: &DMatrix<f64>, ssr: f64, amplitude: [bool; 4]) -> Vec<Vec<f64>> {
        let dof = self.tau.len().saturating_sub(4).max(1) as f64;
        let s = if self.weighted { 1.0 } else { ssr / dof };
        let inv = jtj.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(4, 4, f64::NAN));
        let d = |k: usize| if amplitude[k] { self.amp } else { 1.0 };
        (0..4)
            .map(|i| (0..4).map(|j| s * d(i) * d(j) * inv[(i, j)] / (self.wscale * self.wscale)).collect())
            .collect()
    }

    /// Sum of squared residuals in data units.
    fn true_ssr(&self, ssr: f64) -> f64 {
        self.wscale * self.wscale * ssr
    }
}

fn gradient_cosine<P: LeastSquares>(problem: &P, x: &DVector<f64>) -> f64 {
    let r = problem.residuals(x);
    let j = problem.jacobian(x);
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    let g = j.tr_mul(&r);
    (0..j.ncols())
        .map(|c| {
            let cn = j.column(c).norm();
            if cn == 0.0 {
                0.0
            } else {
                (g[c] / (cn * rn)).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Converged fits must reach a stationary point within this cosine.
const STATIONARY_COS: f64 = 1e-6;

struct Candidate {
    x: DVector<f64>,
    ssr: f64,
    iterations: usize,
    jtj: DMatrix<f64>,
}

fn best_fit<P: LeastSquares>(problem: &P, starts: &[DVector<f64>], opts: LmOptions) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for x0 in starts {
        let rep = levenberg_marquardt(problem, x0.clone(), &opts);
        if !rep.ssr.is_finite() || rep.x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let ok = rep.converged() || gradient_cosine(problem, &rep.x) < STATIONARY_COS;
        if ok && best.as_ref().is_none_or(|b| rep.ssr < b.ssr) {
            best = Some(Candidate { x: rep.x, ssr: rep.ssr, iterations: rep.iterations, jtj: rep.jtj });
        }
    }
    best
}

/// Least-squares fit of the damped-oscillation model to `g2 - 1`.
///
/// Without an initial guess `[c1, c2, l', l'']`, starting points come from the
/// dominant Fourier frequency and the envelope decay, with the amplitudes
/// solved linearly for each. Data without an oscillation are refitted with two
/// real exponentials and the better model is kept.
pub fn fit_g2(curve: &G2Curve, initial_guess: Option<[f64; 4]>) -> Result<FitResult> {
    let d = prepare(curve)?;
    let (tau, y, sw) = (&d.tau[..], &d.y[..], &d.sw[..]);
    let npts = tau.len();
    let span = tau[npts - 1] - tau[0];

    if d.raw_spread <= 1e-12 * (1.0 + d.raw_mean.abs()) {
        return Ok(FitResult {
            c1: d.raw_mean,
            c2: 0.0,
            lambda_real: 0.0,
            lambda_imag: 0.0,
            tau_c: f64::INFINITY,
            omega2: 0.0,
            model: FitModel::Constant,
            fast: None,
            degenerate: true,
            covariance: vec![vec![0.0; 4]; 4],
            residual_norm: 0.0,
            iterations: 0,
        });
    }

    let opts = LmOptions::default();
    let osc = DampedCosine { tau, y, sw };
    let omega_dft = dominant_frequency(tau, y);
    let env = envelope_rate(tau, y);
    let mut starts = Vec::new();
    if let Some(g) = initial_guess {
        starts.push(DVector::from_row_slice(&g));
    } else {
        let omegas: Vec<f64> = match omega_dft {
            Some(w) => vec![w, 0.8 * w, 1.25 * w],
            None => vec![0.5 / span],
        };
        for &w in &omegas {
            for lr in [env, 0.5 * env, 2.0 * env] {
                let (c1, c2) = amplitudes(tau, y, sw, |t| {
                    let e = (lr * t).exp();
                    (e * (w * t).cos(), e * (w * t).sin())
                });
                starts.push(DVector::from_row_slice(&[c1, c2, lr, w]));
            }
        }
    }
    let osc_fit = best_fit(&osc, &starts, opts);

    // a quarter period or less inside the window cannot be told from a decay
    let weak_oscillation = osc_fit.as_ref().is_none_or(|c| c.x[3].abs() * span < 0.5 * std::f64::consts::PI);
    let exp_fit = if omega_dft.is_none() || weak_oscillation {
        let two = TwoExp { tau, y, sw };
        let mut starts = Vec::new();
        for (slow, fast) in [(env, 4.0 * env), (0.5 * env, 2.0 * env), (env, 20.0 * env)] {
            let (a, b) = amplitudes(tau, y, sw, |t| ((slow * t).exp(), (fast * t).exp()));
            starts.push(DVector::from_row_slice(&[a, slow, b, fast]));
        }
        best_fit(&two, &starts, opts)
    } else {
        None
    };

    match (osc_fit, exp_fit) {
        (Some(o), e) if e.as_ref().is_none_or(|e| o.ssr <= e.ssr) => {
            let ssr = d.true_ssr(o.ssr);
            let (mut c2, mut li) = (d.amp * o.x[1], o.x[3]);
            let mut cov = d.covariance(&o.jtj, ssr, [true, true, false, false]);
            if li < 0.0 {
                // sin is odd: the same curve with a positive frequency
                li = -li;
                c2 = -c2;
                for (i, row) in cov.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let flip = |k: usize| k == 1 || k == 3;
                        if flip(i) != flip(j) {
                            *v = -*v;
                        }
                    }
                }
            }
            let lr = o.x[2];
            Ok(FitResult {
                c1: d.amp * o.x[0],
                c2,
                lambda_real: lr,
                lambda_imag: li,
                tau_c: 1.0 / lr.abs(),
                omega2: li,
                model: FitModel::DampedOscillation,
                fast: None,
                degenerate: false,
                covariance: cov,
                residual_norm: ssr.sqrt(),
                iterations: o.iterations,
            })
        }
        (_, Some(e)) => {
            // order the exponentials so that the slow one is reported first
            let ssr = d.true_ssr(e.ssr);
            let mut cov = d.covariance(&e.jtj, ssr, [true, false, true, false]);
            let (a, l1, b, l2) = if e.x[1] >= e.x[3] {
                (e.x[0], e.x[1], e.x[2], e.x[3])
            } else {
                let perm = [2, 3, 0, 1];
                cov = (0..4).map(|i| (0..4).map(|j| cov[perm[i]][perm[j]]).collect()).collect();
                (e.x[2], e.x[3], e.x[0], e.x[1])
            };
            let (a, b) = (d.amp * a, d.amp * b);
            Ok(FitResult {
                c1: a,
                c2: 0.0,
                lambda_real: l1,
                lambda_imag: 0.0,
                tau_c: 1.0 / l1.abs(),
                omega2: 0.0,
                model: FitModel::TwoExponential,
                fast: Some((b, l2)),
                degenerate: false,
                covariance: cov,
                residual_norm: ssr.sqrt(),
                iterations: e.iterations,
            })
        }
        _ => Err(Error::NoConvergence("no start converged for the g2 fit".into())),
    }
}

/// Pointwise `g2 -> 1 + V (g2 - 1)`, the effect of imperfect mode filtering.
pub fn apply_visibility(curve: &G2Curve, visibility: f64) -> Result<G2Curve> {
    if !(visibility > 0.0 && visibility <= 1.0) {
        return Err(Error::Domain(format!("visibility must lie in (0, 1], got {visibility}")));
    }
    let mut out = curve.clone();
    for g in &mut out.g2 {
        *g = 1.0 + visibility * (*g - 1.0);
    }
    if let Some(se) = &mut out.stderr {
        se.iter_mut().for_each(|s| *s *= visibility);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_infty: f64,
    pub gamma_up: f64,
    /// Imaginary part of the eigenvalue, zero when overdamped.
    pub omega2: f64,
    /// Real part, the slow rate when overdamped.
    pub lambda_real: f64,
    /// Normal-ordered g2(0).
    pub g2_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const HEADER: [&'static str; 5] = ["n_infty", "gamma_up_GHz", "omega2_GHz", "lambda_real_GHz", "g2_zero"];

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_csv(
            w,
            &Self::HEADER,
            self.rows.iter().map(|r| vec![r.n_infty, r.gamma_up, r.omega2, r.lambda_real, r.g2_zero]),
        )
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let t = parse_csv(text)?;
        let cols: Vec<Vec<f64>> = Self::HEADER
            .iter()
            .map(|h| t.column(h).ok_or(Error::Parse { line: 1, message: format!("missing column {h}") }))
            .collect::<Result<_>>()?;
        Ok(SweepTable {
            rows: (0..cols[0].len())
                .map(|i| SweepRow {
                    n_infty: cols[0][i],
                    gamma_up: cols[1][i],
                    omega2: cols[2][i],
                    lambda_real: cols[3][i],
                    g2_zero: cols[4][i],
                })
                .collect(),
        })
    }
}

/// `points` photon numbers spaced evenly on `[lo, hi]`.
pub fn linear_n_list(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

/// One row per target photon number: the pump is inverted on the mean-field
/// equations, then the moment hierarchy is solved and the correlation matrix
/// assembled at its means.
pub fn sweep_omega2(params: &ModelParams, n_list: &[f64]) -> Result<SweepTable> {
    if n_list.is_empty() {
        return Err(Error::Domain("empty photon-number list".into()));
    }
    if n_list.iter().any(|n| !(*n > 0.0)) || n_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("photon numbers must be positive and strictly increasing".into()));
    }
    params.validate()?;
    let rows = n_list
        .par_iter()
        .map(|&n| {
            let gamma_up = pump_for_target_n(params, n)?;
            let p = params.with_gamma_up(gamma_up);
            let moments = moment_steady_state(&p)?.moments;
            let e = eigen(&coupling_matrix(&p, &moments.mean_field()));
            let omega2 = if e.regime == Regime::Underdamped { e.lambda_imag } else { 0.0 };
            Ok(SweepRow { n_infty: n, gamma_up, omega2, lambda_real: e.lambda_real, g2_zero: g2_zero(&moments, Ordering::Normal)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlations::{g2_curve, uniform_grid};
    use crate::presets;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(c1: f64, c2: f64, lr: f64, li: f64, tau_max: f64, points: usize) -> G2Curve {
        let tau = uniform_grid(tau_max, points).unwrap();
        let g2 = tau.iter().map(|&t| model_function(c1, c2, lr, li, t)).collect();
        G2Curve { tau, g2, ordering: Ordering::Normal, stderr: None }
    }

    #[test]
    fn exact_model_recovery() {
        let c = synthetic(0.8, 0.1, -0.25, 0.75, 20.0, 201);
        let f = fit_g2(&c, None).unwrap();
        assert_eq!(f.model, FitModel::DampedOscillation);
        for (got, want) in [(f.c1, 0.8), (f.c2, 0.1), (f.lambda_real, -0.25), (f.lambda_imag, 0.75)] {
            assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
        }
        assert!((f.tau_c - 4.0).abs() < 1e-5);
    }

    #[test]
    fn noisy_recovery_of_frequency() {
        let clean = synthetic(0.8, 0.1, -0.25, 0.75, 20.0, 201);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut errors: Vec<f64> = (0..100u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut c = clean.clone();
                c.g2.iter_mut().for_each(|g| *g += noise.sample(&mut rng));
                let f = fit_g2(&c, None).unwrap();
                (f.lambda_imag - 0.75).abs() / 0.75
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        assert!(errors[50] < 0.02, "median relative error {}", errors[50]);
    }

    #[test]
    fn visibility_leaves_exponents_unchanged() {
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut c = synthetic(0.8, 0.1, -0.25, 0.75, 20.0, 201);
        c.g2.iter_mut().for_each(|g| *g += noise.sample(&mut rng));
        let base = fit_g2(&c, None).unwrap();
        for v in [1.0, 0.7, 0.3, 0.05] {
            let f = fit_g2(&apply_visibility(&c, v).unwrap(), None).unwrap();
            assert!((f.lambda_real - base.lambda_real).abs() < 1e-8);
            assert!((f.lambda_imag - base.lambda_imag).abs() < 1e-8);
            assert!((f.c1 - v * base.c1).abs() < 1e-8);
        }
    }

    #[test]
    fn visibility_map() {
        let c = G2Curve { tau: vec![0.0, 1.0], g2: vec![2.0, 1.2], ordering: Ordering::Normal, stderr: None };
        assert_eq!(apply_visibility(&c, 1.0).unwrap(), c);
        assert_eq!(apply_visibility(&c, 0.5).unwrap().g2, vec![1.5, 1.1]);
        assert!(apply_visibility(&c, 0.0).is_err());
        assert!(apply_visibility(&c, 1.5).is_err());
    }

    #[test]
    fn overdamped_data_use_two_exponentials() {
        let tau = uniform_grid(10.0, 101).unwrap();
        let g2 = tau.iter().map(|&t| 1.0 + 0.7 * (-0.3 * t).exp() + 0.2 * (-2.0 * t).exp()).collect();
        let c = G2Curve { tau, g2, ordering: Ordering::Normal, stderr: None };
        let f = fit_g2(&c, None).unwrap();
        assert_eq!(f.model, FitModel::TwoExponential);
        assert!((f.lambda_real + 0.3).abs() < 1e-6);
        assert!((f.fast.unwrap().1 + 2.0).abs() < 1e-5);
        assert_eq!(f.omega2, 0.0);
    }

    #[test]
    fn constant_data_flagged() {
        let tau = uniform_grid(10.0, 20).unwrap();
        let c = G2Curve { g2: vec![1.0; tau.len()], tau, ordering: Ordering::Normal, stderr: None };
        let f = fit_g2(&c, None).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.lambda_imag, 0.0);
        assert!(f.tau_c > 0.0);
    }

    #[test]
    fn too_few_points() {
        let c = synthetic(0.8, 0.1, -0.25, 0.75, 20.0, 5);
        assert!(matches!(fit_g2(&c, None), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn fit_reconstructs_within_residual() {
        let c = synthetic(0.5, -0.2, -0.1, 1.3, 30.0, 301);
        let f = fit_g2(&c, None).unwrap();
        let ssr: f64 = c.tau.iter().zip(&c.g2).map(|(&t, &g)| (f.eval(t) - g).powi(2)).sum();
        assert!((ssr.sqrt() - f.residual_norm).abs() < 1e-12);
    }

    #[test]
    fn sweep_rows_match_fits_and_closed_form() {
        let p = presets::fig4();
        let table = sweep_omega2(&p, &[4620.0, 10000.0, 17100.0]).unwrap();
        let w: Vec<f64> = table.rows.iter().map(|r| r.omega2).collect();
        assert!(w[0] < w[1] && w[1] < w[2]);
        let r = table.rows[1];
        let a = p.molecules * r.gamma_up * p.b_em;
        let closed = (a - (a / (2.0 * p.kappa)).powi(2)).sqrt();
        assert!((r.omega2 - closed).abs() / closed < 0.05);
        assert!((table.rows[0].g2_zero - 2.0).abs() < 0.1);
        assert!((table.rows[2].g2_zero - 1.3).abs() < 0.1);

        for row in &table.rows[1..] {
            let q = p.with_gamma_up(row.gamma_up);
            let m = moment_steady_state(&q).unwrap().moments;
            let grid = uniform_grid(12.0 / row.lambda_real.abs(), 400).unwrap();
            let curve = g2_curve(&q, &m, &grid, Ordering::Normal).unwrap();
            let f = fit_g2(&curve, None).unwrap();
            assert!((f.lambda_imag - row.omega2).abs() / row.omega2 < 0.01);
            assert!((f.lambda_real - row.lambda_real).abs() / row.lambda_real.abs() < 0.01);
        }
    }

    #[test]
    fn sweep_csv_round_trip() {
        let t = SweepTable {
            rows: vec![SweepRow { n_infty: 1e4, gamma_up: 5e-6, omega2: 0.79, lambda_real: -0.14, g2_zero: 1.6 }],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n_infty,gamma_up_GHz,omega2_GHz,lambda_real_GHz,g2_zero\n"));
        assert_eq!(SweepTable::from_csv(&text).unwrap(), t);
    }

    #[test]
    fn sweep_rejects_unsorted_lists() {
        assert!(sweep_omega2(&presets::fig4(), &[2.0, 1.0]).is_err());
        assert!(sweep_omega2(&presets::fig4(), &[]).is_err());
    }
}
