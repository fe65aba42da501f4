//! Exact stochastic sample paths of the jump process.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::Channel;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatticeState {
    pub n: u64,
    pub m: u64,
}

impl LatticeState {
    pub fn new(n: u64, m: u64) -> Self {
        LatticeState { n, m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub t: f64,
    /// State right after the jump.
    pub state: LatticeState,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: LatticeState,
    pub t_end: f64,
    pub jumps: Vec<Jump>,
}

impl Trajectory {
    /// State at time `t`, right-continuous.
    pub fn state_at(&self, t: f64) -> LatticeState {
        let k = self.jumps.partition_point(|j| j.t <= t);
        if k == 0 {
            self.initial
        } else {
            self.jumps[k - 1].state
        }
    }

    /// Time average of `n` over `[t0, t1]`.
    pub fn time_average_n(&self, t0: f64, t1: f64) -> f64 {
        let mut acc = 0.0;
        let mut t = t0;
        let mut n = self.state_at(t0).n as f64;
        for j in self.jumps.iter().filter(|j| j.t > t0 && j.t <= t1) {
            acc += n * (j.t - t);
            t = j.t;
            n = j.state.n as f64;
        }
        acc += n * (t1 - t);
        acc / (t1 - t0)
    }

    /// CSV `t_ns,n,m,channel`; the first row is the initial state at `t = 0`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_ns,n,m,channel")?;
        writeln!(w, "{},{},{},initial", fmt_f64(0.0), self.initial.n, self.initial.m)?;
        for j in &self.jumps {
            writeln!(w, "{},{},{},{}", fmt_f64(j.t), j.state.n, j.state.m, j.channel)?;
        }
        Ok(())
    }
}

/// Generator for trajectory `index` of an ensemble seeded with `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn check_inputs(params: &ModelParams, t_end: f64, initial: LatticeState) -> Result<u64> {
    params.validate()?;
    let molecules = params.molecule_count()? as u64;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::Domain(format!("t_end must be positive, got {t_end}")));
    }
    if initial.m > molecules {
        return Err(Error::Domain(format!("initial m = {} exceeds M = {molecules}", initial.m)));
    }
    Ok(molecules)
}

/// Simulates one path, calling `visit` after every jump.
pub(crate) fn run<R: Rng>(
    params: &ModelParams,
    rng: &mut R,
    t_end: f64,
    initial: LatticeState,
    mut visit: impl FnMut(&Jump),
) {
    let mut t = 0.0;
    let mut s = initial;
    loop {
        let (n, m) = (s.n as f64, s.m as f64);
        let rates = Channel::ALL.map(|c| c.rate(params, n, m));
        let total: f64 = rates.iter().sum();
        if !(total > 0.0) {
            return;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
        t += wait;
        if t > t_end {
            return;
        }
        let mut u = rng.random::<f64>() * total;
        let mut chosen = Channel::ALL[4];
        for (c, r) in Channel::ALL.into_iter().zip(rates) {
            if r > 0.0 {
                chosen = c;
                if u < r {
                    break;
                }
                u -= r;
            }
        }
        let (dn, dm) = chosen.shift();
        s = LatticeState::new(s.n.wrapping_add_signed(dn), s.m.wrapping_add_signed(dm));
        visit(&Jump { t, state: s, channel: chosen });
    }
}

/// One sample path, fully determined by `(params, seed, t_end, initial)`.
/// Equal to trajectory 0 of [`gillespie_ensemble`] with the same seed.
pub fn gillespie_simulate(params: &ModelParams, seed: u64, t_end: f64, initial: LatticeState) -> Result<Trajectory> {
    check_inputs(params, t_end, initial)?;
    let mut rng = stream_rng(seed, 0);
    Ok(simulate_with(params, &mut rng, t_end, initial))
}

fn simulate_with<R: Rng>(params: &ModelParams, rng: &mut R, t_end: f64, initial: LatticeState) -> Trajectory {
    let mut jumps = Vec::new();
    run(params, rng, t_end, initial, |j| jumps.push(*j));
    Trajectory { initial, t_end, jumps }
}

/// Independent trajectories on per-index streams, returned in index order.
pub fn gillespie_ensemble(
    params: &ModelParams,
    master_seed: u64,
    count: usize,
    t_end: f64,
    initial: LatticeState,
) -> Result<Vec<Trajectory>> {
    check_inputs(params, t_end, initial)?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| simulate_with(params, &mut stream_rng(master_seed, i), t_end, initial))
        .collect())
}
