//! g2(tau) and mean photon number estimated from sample paths, with
//! delete-one-group jackknife errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::Channel;
use super::gillespie::{run, stream_rng, LatticeState, Trajectory};
use crate::correlations::{check_grid, eigen, coupling_matrix, G2Curve};
use crate::error::{Error, Result};
use crate::moments::{moment_steady_state, Ordering};
use crate::params::ModelParams;

/// Upper bound on the number of jackknife groups.
pub const MAX_GROUPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub ordering: Ordering,
    /// Sampling interval of the photon number for the direct estimator; delays
    /// must be multiples of it.
    pub bin_width: f64,
    /// Initial stretch of every path that is discarded.
    pub burn_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimate {
    /// g2 with jackknife standard errors in `stderr`.
    pub curve: G2Curve,
    pub mean_n: f64,
    pub mean_n_stderr: f64,
    pub groups: usize,
}

/// Sufficient statistics of one stretch of path.
///
/// Direct ordering: `lag[l]` sums `n(t_k) n(t_k + tau_l)` over `count` sample
/// times, `den` sums `n(t_k)` over `den_count` samples.
/// Normal ordering: `lag[l]` sums `n(t_e + tau_l)` over `count` loss events,
/// `den` integrates `n` over `den_count` ns.
#[derive(Debug, Clone, PartialEq)]
struct Accumulator {
    lag: Vec<f64>,
    count: f64,
    den: f64,
    den_count: f64,
    n_integral: f64,
    duration: f64,
}

impl Accumulator {
    fn zeros(lags: usize) -> Self {
        Accumulator { lag: vec![0.0; lags], count: 0.0, den: 0.0, den_count: 0.0, n_integral: 0.0, duration: 0.0 }
    }

    fn add(&mut self, o: &Accumulator, sign: f64) {
        for (a, b) in self.lag.iter_mut().zip(&o.lag) {
            *a += sign * b;
        }
        self.count += sign * o.count;
        self.den += sign * o.den;
        self.den_count += sign * o.den_count;
        self.n_integral += sign * o.n_integral;
        self.duration += sign * o.duration;
    }

    fn g2(&self, ordering: Ordering) -> Vec<f64> {
        let mean = self.den / self.den_count;
        let norm = match ordering {
            Ordering::Direct => mean * mean,
            Ordering::Normal => mean,
        };
        self.lag.iter().map(|s| s / self.count / norm).collect()
    }

    fn mean_n(&self) -> f64 {
        self.n_integral / self.duration
    }
}

/// Piecewise-constant photon number as parallel arrays of jump times and
/// values, starting at `t = 0`.
struct Path {
    times: Vec<f64>,
    n: Vec<f64>,
    loss: Vec<f64>,
    t_end: f64,
}

impl Path {
    fn from_trajectory(t: &Trajectory) -> Self {
        let mut p = Path::start(t.initial, t.t_end);
        for j in &t.jumps {
            p.push(j.t, j.state.n, j.channel);
        }
        p
    }

    fn start(initial: LatticeState, t_end: f64) -> Self {
        Path { times: vec![0.0], n: vec![initial.n as f64], loss: Vec::new(), t_end }
    }

    fn push(&mut self, t: f64, n: u64, channel: Channel) {
        self.times.push(t);
        self.n.push(n as f64);
        if channel == Channel::Loss {
            self.loss.push(t);
        }
    }

    /// Values at the ascending times `ts`, right-continuous.
    fn sample_sorted(&self, ts: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut k = 0;
        ts.map(|t| {
            while k + 1 < self.times.len() && self.times[k + 1] <= t {
                k += 1;
            }
            self.n[k]
        })
        .collect()
    }

    fn integral(&self, t0: f64, t1: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &n) in self.n.iter().enumerate() {
            let a = self.times[i].max(t0);
            let b = self.times.get(i + 1).copied().unwrap_or(self.t_end).min(t1);
            if b > a {
                acc += n * (b - a);
            }
        }
        acc
    }
}

struct Plan {
    ordering: Ordering,
    burn_in: f64,
    bin_width: f64,
    taus: Vec<f64>,
    lag_bins: Vec<usize>,
    blocks: usize,
}

impl Plan {
    fn new(tau_grid: &[f64], opts: &EstimatorOptions, t_end: f64, trajectories: usize) -> Result<Self> {
        check_grid(tau_grid)?;
        if !(opts.burn_in >= 0.0) {
            return Err(Error::Domain("burn-in must be nonnegative".into()));
        }
        if !(opts.bin_width > 0.0) {
            return Err(Error::Domain("bin width must be positive".into()));
        }
        let tau_max = *tau_grid.last().expect("checked nonempty");
        if t_end <= opts.burn_in + tau_max {
            return Err(Error::InsufficientData(format!(
                "paths of {t_end} ns do not cover burn-in {} ns plus delay {tau_max} ns",
                opts.burn_in
            )));
        }
        let mut lag_bins = Vec::with_capacity(tau_grid.len());
        if opts.ordering == Ordering::Direct {
            for &tau in tau_grid {
                let l = (tau / opts.bin_width).round();
                if (l * opts.bin_width - tau).abs() > 1e-9 * opts.bin_width.max(tau) {
                    return Err(Error::Domain(format!("delay {tau} ns is not a multiple of the bin width")));
                }
                lag_bins.push(l as usize);
            }
        }
        let blocks = MAX_GROUPS.div_ceil(trajectories.max(1));
        Ok(Plan {
            ordering: opts.ordering,
            burn_in: opts.burn_in,
            bin_width: opts.bin_width,
            taus: tau_grid.to_vec(),
            lag_bins,
            blocks,
        })
    }

    fn tau_max(&self) -> f64 {
        *self.taus.last().expect("nonempty")
    }

    /// Statistics of one path split into `blocks` consecutive stretches,
    /// attributed by the time of the first factor.
    fn accumulate(&self, path: &Path) -> Vec<Accumulator> {
        let lags = self.taus.len();
        let mut acc = vec![Accumulator::zeros(lags); self.blocks];
        let origin_end = path.t_end - self.tau_max();
        let span = origin_end - self.burn_in;
        let block_of = |t: f64| (((t - self.burn_in) / span * self.blocks as f64) as usize).min(self.blocks - 1);

        for (b, a) in acc.iter_mut().enumerate() {
            let t0 = self.burn_in + span * b as f64 / self.blocks as f64;
            let t1 = self.burn_in + span * (b + 1) as f64 / self.blocks as f64;
            a.n_integral = path.integral(t0, t1);
            a.duration = t1 - t0;
        }

        match self.ordering {
            Ordering::Direct => {
                let origins = ((span / self.bin_width).floor() as usize) + 1;
                let max_bin = *self.lag_bins.last().expect("nonempty");
                let samples = path.sample_sorted((0..origins + max_bin).map(|k| self.burn_in + k as f64 * self.bin_width));
                for k in 0..origins {
                    let a = &mut acc[block_of(self.burn_in + k as f64 * self.bin_width)];
                    let x = samples[k];
                    a.count += 1.0;
                    a.den += x;
                    a.den_count += 1.0;
                    for (s, &l) in a.lag.iter_mut().zip(&self.lag_bins) {
                        *s += x * samples[k + l];
                    }
                }
            }
            Ordering::Normal => {
                for a in acc.iter_mut() {
                    a.den = a.n_integral;
                    a.den_count = a.duration;
                }
                let events: Vec<f64> =
                    path.loss.iter().copied().filter(|&t| t >= self.burn_in && t <= origin_end).collect();
                for a in acc.iter_mut() {
                    a.count = 0.0;
                }
                for &t in &events {
                    acc[block_of(t)].count += 1.0;
                }
                for (l, &tau) in self.taus.iter().enumerate() {
                    let values = path.sample_sorted(events.iter().map(|t| t + tau));
                    for (&t, v) in events.iter().zip(values) {
                        acc[block_of(t)].lag[l] += v;
                    }
                }
            }
        }
        acc
    }
}

fn combine(plan: &Plan, segments: Vec<Accumulator>) -> Result<TrajectoryEstimate> {
    let lags = plan.taus.len();
    let groups = segments.len().min(MAX_GROUPS);
    if groups < 2 {
        return Err(Error::InsufficientData("need at least two segments for jackknife errors".into()));
    }
    let mut grouped = vec![Accumulator::zeros(lags); groups];
    let total_segments = segments.len();
    for (i, s) in segments.iter().enumerate() {
        grouped[i * groups / total_segments].add(s, 1.0);
    }
    let mut total = Accumulator::zeros(lags);
    for g in &grouped {
        total.add(g, 1.0);
    }
    if total.count == 0.0 || total.den == 0.0 {
        return Err(Error::InsufficientData("no photons or detection events after burn-in".into()));
    }
    let g2 = total.g2(plan.ordering);
    let mean_n = total.mean_n();

    let mut replicates_g2 = Vec::with_capacity(groups);
    let mut replicates_n = Vec::with_capacity(groups);
    for g in &grouped {
        let mut loo = total.clone();
        loo.add(g, -1.0);
        if loo.count == 0.0 || loo.den == 0.0 {
            return Err(Error::InsufficientData("a jackknife replicate has no data".into()));
        }
        replicates_g2.push(loo.g2(plan.ordering));
        replicates_n.push(loo.mean_n());
    }
    let jackknife = |values: &[f64]| -> f64 {
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        ((k - 1.0) / k * values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
    };
    let stderr: Vec<f64> = (0..lags)
        .map(|l| jackknife(&replicates_g2.iter().map(|r| r[l]).collect::<Vec<_>>()))
        .collect();

    Ok(TrajectoryEstimate {
        curve: G2Curve { tau: plan.taus.clone(), g2, ordering: plan.ordering, stderr: Some(stderr) },
        mean_n,
        mean_n_stderr: jackknife(&replicates_n),
        groups,
    })
}

/// Estimates g2 from stored trajectories, all of the same length.
///
/// Direct ordering correlates photon numbers sampled every `bin_width`.
/// Normal ordering averages `n(t + tau)` over photon-loss events at `t`,
/// divided by the time-averaged photon number; this mirrors a detector that
/// clicks on cavity loss.
pub fn trajectory_g2(trajectories: &[Trajectory], tau_grid: &[f64], opts: &EstimatorOptions) -> Result<TrajectoryEstimate> {
    let first = trajectories.first().ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    if trajectories.iter().any(|t| t.t_end != first.t_end) {
        return Err(Error::Domain("trajectories must share the same duration".into()));
    }
    let plan = Plan::new(tau_grid, opts, first.t_end, trajectories.len())?;
    let segments = trajectories
        .par_iter()
        .map(|t| plan.accumulate(&Path::from_trajectory(t)))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    combine(&plan, segments)
}

/// Ensemble description for [`ensemble_g2`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub master_seed: u64,
    pub trajectories: usize,
    pub t_end: f64,
    pub initial: LatticeState,
}

/// Simulates and estimates in one pass, without storing the paths. Gives the
/// same result as [`trajectory_g2`] on [`super::gillespie_ensemble`] output.
pub fn ensemble_g2(
    params: &ModelParams,
    cfg: &EnsembleConfig,
    tau_grid: &[f64],
    opts: &EstimatorOptions,
) -> Result<TrajectoryEstimate> {
    params.validate()?;
    let molecules = params.molecule_count()? as u64;
    if cfg.initial.m > molecules {
        return Err(Error::Domain(format!("initial m = {} exceeds M = {molecules}", cfg.initial.m)));
    }
    let plan = Plan::new(tau_grid, opts, cfg.t_end, cfg.trajectories)?;
    let segments = (0..cfg.trajectories as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.master_seed, i);
            let mut path = Path::start(cfg.initial, cfg.t_end);
            run(params, &mut rng, cfg.t_end, cfg.initial, |j| path.push(j.t, j.state.n, j.channel));
            plan.accumulate(&path)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    combine(&plan, segments)
}

/// `10 / min(|lambda'|, kappa)` from the linearized correlation dynamics.
pub fn default_burn_in(params: &ModelParams) -> Result<f64> {
    let moments = moment_steady_state(params)?.moments;
    let e = eigen(&coupling_matrix(params, &moments.mean_field()));
    let rate = e.lambda_real.abs().min(params.kappa);
    if !(rate > 0.0) {
        return Err(Error::Domain("no relaxation rate to set a burn-in".into()));
    }
    Ok(10.0 / rate)
}
