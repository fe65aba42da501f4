//! The incoherent master equation as a birth-death process on `(n, m)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Default limit on `(n_max + 1)(M + 1)`.
pub const DEFAULT_STATE_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Cavity loss `(n, m) -> (n - 1, m)` at `kappa n`.
    Loss,
    /// Pump `(n, m) -> (n, m + 1)` at `G_up (M - m)`.
    Pump,
    /// Nonradiative decay `(n, m) -> (n, m - 1)` at `G_down m`.
    Nonradiative,
    /// Absorption `(n, m) -> (n - 1, m + 1)` at `B_abs n (M - m)`.
    Absorption,
    /// Emission `(n, m) -> (n + 1, m - 1)` at `B_em (n + 1) m`.
    Emission,
}

impl Channel {
    pub const ALL: [Channel; 5] = [Channel::Loss, Channel::Pump, Channel::Nonradiative, Channel::Absorption, Channel::Emission];

    /// Change of `(n, m)` caused by one jump.
    pub fn shift(self) -> (i64, i64) {
        match self {
            Channel::Loss => (-1, 0),
            Channel::Pump => (0, 1),
            Channel::Nonradiative => (0, -1),
            Channel::Absorption => (-1, 1),
            Channel::Emission => (1, -1),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Channel::Loss => "loss",
            Channel::Pump => "pump",
            Channel::Nonradiative => "nonradiative",
            Channel::Absorption => "absorption",
            Channel::Emission => "emission",
        }
    }

    /// Rate of this channel at `(n, m)` without truncation.
    pub fn rate(self, p: &ModelParams, n: f64, m: f64) -> f64 {
        match self {
            Channel::Loss => p.kappa * n,
            Channel::Pump => p.gamma_up * (p.molecules - m),
            Channel::Nonradiative => p.gamma_down * m,
            Channel::Absorption => p.b_abs * n * (p.molecules - m),
            Channel::Emission => p.b_em * (n + 1.0) * m,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::Domain(format!("unknown channel `{s}`")))
    }
}

/// Transition-rate operator on the truncated lattice `0 <= n <= n_max`,
/// `0 <= m <= M`. Emission out of `n = n_max` is switched off, so the
/// truncated process is still a proper Markov generator.
#[derive(Debug, Clone)]
pub struct Generator {
    params: ModelParams,
    molecules: usize,
    n_max: usize,
}

pub fn build_generator(params: &ModelParams, n_max: usize, cap: usize) -> Result<Generator> {
    params.validate()?;
    let molecules = params.molecule_count()?;
    if n_max < 1 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    let states = (n_max + 1).saturating_mul(molecules + 1);
    if states > cap {
        return Err(Error::StateCap { states, cap });
    }
    Ok(Generator { params: *params, molecules, n_max })
}

impl Generator {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn molecules(&self) -> usize {
        self.molecules
    }

    pub fn n_states(&self) -> usize {
        (self.n_max + 1) * (self.molecules + 1)
    }

    /// Canonical index, photon number major.
    #[inline]
    pub fn index(&self, n: usize, m: usize) -> usize {
        n * (self.molecules + 1) + m
    }

    #[inline]
    pub fn state(&self, idx: usize) -> (usize, usize) {
        (idx / (self.molecules + 1), idx % (self.molecules + 1))
    }

    /// Rate of `channel` at `(n, m)` on the truncated lattice.
    pub fn rate(&self, channel: Channel, n: usize, m: usize) -> f64 {
        let allowed = match channel {
            Channel::Loss => n > 0,
            Channel::Pump => m < self.molecules,
            Channel::Nonradiative => m > 0,
            Channel::Absorption => n > 0 && m < self.molecules,
            Channel::Emission => m > 0 && n < self.n_max,
        };
        if allowed {
            channel.rate(&self.params, n as f64, m as f64)
        } else {
            0.0
        }
    }

    /// Nonzero outgoing transitions `(channel, target index, rate)` from `idx`.
    pub fn transitions(&self, idx: usize) -> impl Iterator<Item = (Channel, usize, f64)> + '_ {
        let (n, m) = self.state(idx);
        Channel::ALL.into_iter().filter_map(move |c| {
            let r = self.rate(c, n, m);
            if r > 0.0 {
                let (dn, dm) = c.shift();
                let target = self.index((n as i64 + dn) as usize, (m as i64 + dm) as usize);
                Some((c, target, r))
            } else {
                None
            }
        })
    }

    pub fn exit_rate(&self, idx: usize) -> f64 {
        self.transitions(idx).map(|(_, _, r)| r).sum()
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n_states()).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    /// `out = G p`, the time derivative of the probability vector.
    pub fn apply(&self, p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, &pj) in p.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            let mut exit = 0.0;
            for (_, target, r) in self.transitions(j) {
                out[target] += r * pj;
                exit += r;
            }
            out[j] -= exit * pj;
        }
    }

    /// Sparse entries `(row, column, value)` with `G[row][col]` the rate from
    /// `col` to `row` and the negative exit rate on the diagonal.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 0..self.n_states() {
            let mut exit = 0.0;
            for (_, target, r) in self.transitions(j) {
                out.push((target, j, r));
                exit += r;
            }
            out.push((j, j, -exit));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn minimal_loss_only_generator() {
        let p = ModelParams::new(1.0, 0.8, 0.0, 0.0, 0.0, 0.0);
        let g = build_generator(&p, 1, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(g.n_states(), 4);
        let t = g.triplets();
        let off: Vec<_> = t.iter().filter(|(r, c, _)| r != c).collect();
        assert_eq!(off.len(), 2);
        for &&(r, c, v) in &off {
            let (n0, m0) = g.state(c);
            let (n1, m1) = g.state(r);
            assert_eq!((n0, m0 == m1, n1), (1, true, 0));
            assert_eq!(v, 0.8);
        }
    }

    #[test]
    fn emission_rate_instance() {
        let p = ModelParams::new(10.0, 1.0, 0.0, 0.0, 0.03, 0.0);
        let g = build_generator(&p, 20, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(g.rate(Channel::Emission, 3, 5), 0.03 * 4.0 * 5.0);
        assert_eq!(g.rate(Channel::Emission, 20, 5), 0.0);
    }

    #[test]
    fn columns_sum_to_zero() {
        let g = build_generator(&presets::oracle_m100(), 30, DEFAULT_STATE_CAP).unwrap();
        let mut sums = vec![0.0; g.n_states()];
        for (r, c, v) in g.triplets() {
            sums[c] += v;
            if r != c {
                assert!(v >= 0.0);
            }
        }
        assert!(sums.iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn state_cap_is_enforced() {
        let err = build_generator(&presets::oracle_m100(), 5000, 1000).unwrap_err();
        assert!(matches!(err, Error::StateCap { .. }));
    }

    #[test]
    fn channel_labels_round_trip() {
        for c in Channel::ALL {
            assert_eq!(c.label().parse::<Channel>().unwrap(), c);
        }
    }
}
