//! Exact stationary distribution of the truncated generator.

use std::collections::VecDeque;
use std::io::Write;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use super::generator::{build_generator, Generator};
use crate::error::{Error, Result};
use crate::io::write_csv;
use crate::moments::{moment_steady_state, MomentState};
use crate::numeric::BandMatrix;
use crate::params::ModelParams;

/// Tail mass allowed at `n = n_max`.
pub const TAIL_TOL: f64 = 1e-10;

/// Probability vector on `0 <= n <= n_max`, `0 <= m <= M`, photon number major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionGrid {
    pub n_max: usize,
    pub molecules: usize,
    pub p: Vec<f64>,
}

/// Exact moments of a distribution, including the third-order ones entering
/// the closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMoments {
    pub n: f64,
    pub m_up: f64,
    pub n2: f64,
    pub nm: f64,
    pub m2: f64,
    pub nm2: f64,
}

impl ExactMoments {
    pub fn second_order(&self) -> MomentState {
        MomentState::new(self.n, self.m_up, self.n2, self.nm, self.m2)
    }
}

impl DistributionGrid {
    pub fn new(n_max: usize, molecules: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != (n_max + 1) * (molecules + 1) {
            return Err(Error::Domain(format!(
                "probability vector has {} entries, lattice needs {}",
                p.len(),
                (n_max + 1) * (molecules + 1)
            )));
        }
        Ok(DistributionGrid { n_max, molecules, p })
    }

    /// Builds a grid from a function of `(n, m)`, normalizing the result.
    pub fn from_fn(n_max: usize, molecules: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut p = Vec::with_capacity((n_max + 1) * (molecules + 1));
        for n in 0..=n_max {
            for m in 0..=molecules {
                p.push(f(n, m));
            }
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        DistributionGrid { n_max, molecules, p }
    }

    #[inline]
    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.p[n * (self.molecules + 1) + m]
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.molecules + 1;
        self.p.iter().enumerate().map(move |(i, &p)| (i / w, i % w, p))
    }

    pub fn marginal_n(&self) -> Vec<f64> {
        self.p.chunks(self.molecules + 1).map(|row| row.iter().sum()).collect()
    }

    /// Mass on the truncation boundary `n = n_max`.
    pub fn tail_mass(&self) -> f64 {
        self.marginal_n()[self.n_max]
    }

    pub fn moments(&self) -> ExactMoments {
        let mut acc = [0.0f64; 6];
        for (n, m, p) in self.iter() {
            if p == 0.0 {
                continue;
            }
            let (n, m) = (n as f64, m as f64);
            acc[0] += p * n;
            acc[1] += p * m;
            acc[2] += p * n * n;
            acc[3] += p * n * m;
            acc[4] += p * m * m;
            acc[5] += p * n * m * m;
        }
        ExactMoments { n: acc[0], m_up: acc[1], n2: acc[2], nm: acc[3], m2: acc[4], nm2: acc[5] }
    }

    /// CSV with header `n,m,p`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_csv(w, &["n", "m", "p"], self.iter().map(|(n, m, p)| vec![n as f64, m as f64, p]))
    }
}

/// Stationary distribution together with solver diagnostics.
#[derive(Debug, Clone)]
pub struct OracleSteadyState {
    pub distribution: DistributionGrid,
    /// `||G p||_inf`.
    pub residual: f64,
}

/// States reachable from `start` that form the closed communicating classes.
fn closed_classes_from(gen: &Generator, start: usize) -> Vec<Vec<usize>> {
    let n = gen.n_states();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 5 * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (j, &node) in nodes.iter().enumerate() {
        for (_, target, _) in gen.transitions(j) {
            graph.add_edge(node, nodes[target], ());
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0usize; n];
    for (c, scc) in sccs.iter().enumerate() {
        for v in scc {
            component[v.index()] = c;
        }
    }
    let mut closed = vec![true; sccs.len()];
    for j in 0..n {
        for (_, target, _) in gen.transitions(j) {
            if component[target] != component[j] {
                closed[component[j]] = false;
            }
        }
    }

    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut reached = vec![false; sccs.len()];
    while let Some(j) = queue.pop_front() {
        reached[component[j]] = true;
        for (_, target, _) in gen.transitions(j) {
            if !seen[target] {
                seen[target] = true;
                queue.push_back(target);
            }
        }
    }
    sccs.into_iter()
        .enumerate()
        .filter(|(c, _)| closed[*c] && reached[*c])
        .map(|(_, scc)| scc.into_iter().map(|v| v.index()).collect())
        .collect()
}

/// Maps canonical indices to an ordering with the smaller bandwidth.
struct SolverOrder {
    w_n: usize,
    w_m: usize,
    m_major: bool,
}

impl SolverOrder {
    fn new(gen: &Generator) -> Self {
        SolverOrder { w_n: gen.n_max() + 1, w_m: gen.molecules() + 1, m_major: gen.n_max() < gen.molecules() }
    }

    fn bandwidth(&self) -> usize {
        if self.m_major {
            self.w_n
        } else {
            self.w_m
        }
    }

    #[inline]
    fn map(&self, canonical: usize) -> usize {
        if self.m_major {
            let (n, m) = (canonical / self.w_m, canonical % self.w_m);
            m * self.w_n + n
        } else {
            canonical
        }
    }
}

fn solve_pinned(gen: &Generator, class: &[bool], pin: usize) -> Result<Vec<f64>> {
    let order = SolverOrder::new(gen);
    let bw = order.bandwidth();
    let size = gen.n_states();
    let mut a = BandMatrix::zeros(size, bw, bw);
    for j in 0..size {
        if !class[j] {
            continue;
        }
        let col = order.map(j);
        let mut exit = 0.0;
        for (_, target, r) in gen.transitions(j) {
            a.add(order.map(target), col, r);
            exit += r;
        }
        a.add(col, col, -exit);
    }
    for (j, &inside) in class.iter().enumerate() {
        if !inside || j == pin {
            let row = order.map(j);
            a.clear_row(row);
            a.add(row, row, 1.0);
        }
    }
    let mut rhs = vec![0.0; size];
    rhs[order.map(pin)] = 1.0;
    let x = a.factorize()?.solve(&rhs);
    Ok((0..size).map(|j| x[order.map(j)]).collect())
}

/// Stationary distribution reached from the empty state `(0, 0)`.
///
/// The closed class reachable from the vacuum must be unique. States outside
/// it carry no weight. Within the class one equation is replaced by pinning a
/// high-probability state, and the banded system is solved directly.
pub fn oracle_steady_state(gen: &Generator) -> Result<OracleSteadyState> {
    let classes = closed_classes_from(gen, gen.index(0, 0));
    if classes.len() != 1 {
        return Err(Error::NoConvergence(format!(
            "stationary distribution is not unique: {} closed classes reachable from the vacuum",
            classes.len()
        )));
    }
    let mut class = vec![false; gen.n_states()];
    for &j in &classes[0] {
        class[j] = true;
    }

    let mut pin = pin_guess(gen, &classes[0]);
    let mut x = solve_pinned(gen, &class, pin)?;
    // A poorly chosen pin scales the solution badly; re-pin at the mode.
    let (argmax, max) = x.iter().enumerate().fold((pin, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    if max > 1e3 {
        pin = argmax;
        x = solve_pinned(gen, &class, pin)?;
    }

    for v in &mut x {
        if *v < 0.0 {
            if *v < -1e-12 * max.max(1.0) {
                return Err(Error::NoConvergence(format!("negative stationary probability {v:e}")));
            }
            *v = 0.0;
        }
    }
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);

    let mut gp = vec![0.0; x.len()];
    gen.apply(&x, &mut gp);
    let residual = gp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = gen.max_exit_rate().max(1.0);
    if residual > 1e-12 * scale {
        return Err(Error::NoConvergence(format!("stationary residual {residual:e} too large")));
    }
    Ok(OracleSteadyState {
        distribution: DistributionGrid { n_max: gen.n_max(), molecules: gen.molecules(), p: x },
        residual,
    })
}

fn pin_guess(gen: &Generator, class: &[usize]) -> usize {
    let (n0, m0) = match crate::meanfield::steady_state(gen.params()) {
        Ok(s) => (s.n, s.m_up),
        Err(_) => (0.0, 0.0),
    };
    *class
        .iter()
        .min_by(|&&a, &&b| {
            let d = |i: usize| {
                let (n, m) = gen.state(i);
                (n as f64 - n0).powi(2) + (m as f64 - m0).powi(2)
            };
            d(a).total_cmp(&d(b))
        })
        .expect("closed class is nonempty")
}

/// Initial truncation from the moment estimate, `ceil(mean + 12 sd)`.
pub fn initial_n_max(params: &ModelParams) -> usize {
    let (mean, var) = match moment_steady_state(params) {
        Ok(s) => (s.moments.n, s.moments.var_n().max(0.0)),
        Err(_) => match crate::meanfield::steady_state(params) {
            Ok(s) => (s.n, s.n * (s.n + 1.0)),
            Err(_) => (0.0, 1.0),
        },
    };
    ((mean + 12.0 * var.sqrt()).ceil() as usize).max(8)
}

/// Solves with `n_max` chosen automatically, doubling until the boundary
/// mass drops below [`TAIL_TOL`].
pub fn oracle_steady_state_auto(params: &ModelParams, cap: usize) -> Result<(Generator, OracleSteadyState)> {
    let mut n_max = initial_n_max(params);
    loop {
        let gen = build_generator(params, n_max, cap)?;
        let ss = oracle_steady_state(&gen)?;
        if ss.distribution.tail_mass() < TAIL_TOL {
            return Ok((gen, ss));
        }
        n_max *= 2;
    }
}

/// Residuals of the pair-decomposition identities and of the third-order
/// closure, evaluated on an exact distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    /// Relative residual of `M(M-1)<s+ s- t+ t-> = <M_up^2> - <M_up>`.
    pub pair_excited: f64,
    /// Relative residual of `M(M-1)<s+ s- t- t+> = M<M_up> - <M_up^2>`.
    pub pair_mixed: f64,
    /// `(<n M_up^2>_closure - <n M_up^2>) / <n M_up^2>`.
    pub closure_relative: f64,
}

/// The pair terms are computed by counting molecule pairs in each occupation
/// sector, independently of the moment sums they are compared with.
pub fn verify_truncation_identity(dist: &DistributionGrid) -> TruncationReport {
    let big_m = dist.molecules as f64;
    let pairs = big_m * (big_m - 1.0) / 2.0;
    let mut both_up = 0.0;
    let mut mixed = 0.0;
    for (_, m, p) in dist.iter() {
        let m = m as f64;
        if pairs > 0.0 {
            // probability that an ordered pair of distinct molecules is (up, up) or (up, down)
            both_up += p * (m * (m - 1.0) / 2.0) / pairs;
            mixed += p * (m * (big_m - m) / 2.0) / pairs;
        }
    }
    let mm = dist.moments();
    let lhs_up = big_m * (big_m - 1.0) * both_up;
    let rhs_up = mm.m2 - mm.m_up;
    let lhs_mixed = big_m * (big_m - 1.0) * mixed;
    let rhs_mixed = big_m * mm.m_up - mm.m2;
    let rel = |a: f64, b: f64| {
        let s = a.abs().max(b.abs());
        if s == 0.0 {
            0.0
        } else {
            (a - b).abs() / s
        }
    };
    let closure = 2.0 * mm.m_up * mm.nm + mm.n * mm.m2 - 2.0 * mm.n * mm.m_up * mm.m_up;
    TruncationReport {
        pair_excited: rel(lhs_up, rhs_up),
        pair_mixed: rel(lhs_mixed, rhs_mixed),
        closure_relative: if mm.nm2 == 0.0 { 0.0 } else { (closure - mm.nm2) / mm.nm2 },
    }
}
