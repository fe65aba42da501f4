//! Regression-theorem g2(tau) on the exact generator.

use super::generator::Generator;
use super::steady::DistributionGrid;
use crate::correlations::{check_grid, G2Curve};
use crate::error::{Error, Result};
use crate::moments::Ordering;

/// Largest Poisson mean handled in one uniformization step.
const MAX_STEP_MEAN: f64 = 400.0;
const POISSON_TAIL: f64 = 1e-15;

/// `exp(G t) q` by uniformization: `sum_k Pois(k; L t) P^k q` with
/// `P = I + G / L` and `L` above every exit rate.
struct Propagator<'a> {
    gen: &'a Generator,
    rate: f64,
    scratch: Vec<f64>,
}

impl<'a> Propagator<'a> {
    fn new(gen: &'a Generator) -> Self {
        let rate = gen.max_exit_rate() * 1.05;
        Propagator { gen, rate, scratch: vec![0.0; gen.n_states()] }
    }

    /// `v <- P v`.
    fn jump(&mut self, v: &mut [f64]) {
        self.gen.apply(v, &mut self.scratch);
        let inv = 1.0 / self.rate;
        for (x, d) in v.iter_mut().zip(&self.scratch) {
            *x += d * inv;
        }
    }

    fn advance(&mut self, q: &mut Vec<f64>, dt: f64) -> Result<()> {
        if dt <= 0.0 || self.rate == 0.0 {
            return Ok(());
        }
        let pieces = (self.rate * dt / MAX_STEP_MEAN).ceil().max(1.0) as usize;
        let h = dt / pieces as f64;
        for _ in 0..pieces {
            self.step(q, self.rate * h)?;
        }
        Ok(())
    }

    fn step(&mut self, q: &mut Vec<f64>, mean: f64) -> Result<()> {
        let mut term = q.clone();
        let mut weight = (-mean).exp();
        let mut acc: Vec<f64> = term.iter().map(|x| weight * x).collect();
        let limit = (mean + 20.0 * mean.sqrt() + 50.0) as usize;
        let mut k = 0usize;
        // Past the mode the remaining mass is below `w_k r / (1 - r)`, `r = mean / (k + 1)`.
        let tail = |k: usize, w: f64| {
            let r = mean / (k + 1) as f64;
            r >= 1.0 || w * r / (1.0 - r) > POISSON_TAIL
        };
        while tail(k, weight) {
            k += 1;
            if k > limit {
                return Err(Error::NoConvergence("uniformization series did not converge".into()));
            }
            self.jump(&mut term);
            weight *= mean / k as f64;
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += weight * t;
            }
        }
        *q = acc;
        Ok(())
    }
}

/// `g2(tau)` from the exact steady state.
///
/// Direct ordering propagates `n p(n, m)`. Normal ordering propagates the
/// state just after a photon leaves the cavity, `q(n - 1, m) = n p(n, m)`,
/// which is what a detector click prepares.
pub fn oracle_g2(gen: &Generator, p_inf: &DistributionGrid, tau_grid: &[f64], ordering: Ordering) -> Result<G2Curve> {
    check_grid(tau_grid)?;
    if p_inf.n_max != gen.n_max() || p_inf.molecules != gen.molecules() {
        return Err(Error::Domain("distribution and generator lattices differ".into()));
    }
    let mean_n = p_inf.moments().n;
    if !(mean_n > 0.0) {
        return Err(Error::Domain("g2 undefined for an empty cavity".into()));
    }
    let w = gen.molecules() + 1;
    let mut q = vec![0.0; gen.n_states()];
    for (n, m, p) in p_inf.iter() {
        let weight = n as f64 * p;
        match ordering {
            Ordering::Direct => q[n * w + m] = weight,
            Ordering::Normal if n > 0 => q[(n - 1) * w + m] = weight,
            Ordering::Normal => {}
        }
    }
    let photon_number = |q: &[f64]| -> f64 { q.iter().enumerate().map(|(i, v)| (i / w) as f64 * v).sum() };
    let norm = mean_n * mean_n;

    let mut prop = Propagator::new(gen);
    let mut g2 = Vec::with_capacity(tau_grid.len());
    let mut t = 0.0;
    for &tau in tau_grid {
        prop.advance(&mut q, tau - t)?;
        t = tau;
        g2.push(photon_number(&q) / norm);
    }
    Ok(G2Curve { tau: tau_grid.to_vec(), g2, ordering, stderr: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::generator::DEFAULT_STATE_CAP;
    use crate::oracle::steady::oracle_steady_state_auto;
    use crate::presets;

    #[test]
    fn zero_delay_identities() {
        let (gen, ss) = oracle_steady_state_auto(&presets::oracle_m100(), DEFAULT_STATE_CAP).unwrap();
        let d = &ss.distribution;
        let mm = d.moments();
        let grid = [0.0];
        let direct = oracle_g2(&gen, d, &grid, Ordering::Direct).unwrap().g2[0];
        let normal = oracle_g2(&gen, d, &grid, Ordering::Normal).unwrap().g2[0];
        assert!((direct - mm.n2 / (mm.n * mm.n)).abs() < 1e-12);
        assert!((direct - normal - 1.0 / mm.n).abs() < 1e-12);
    }

    #[test]
    fn decorrelates_at_long_delay() {
        let (gen, ss) = oracle_steady_state_auto(&presets::oracle_m100(), DEFAULT_STATE_CAP).unwrap();
        let curve = oracle_g2(&gen, &ss.distribution, &[0.0, 1.0, 200.0], Ordering::Normal).unwrap();
        assert!((curve.g2[2] - 1.0).abs() < 1e-8, "{}", curve.g2[2]);
    }
}
