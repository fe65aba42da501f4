//! Acceptance run: one PASS/FAIL line per criterion, executed sequentially so
//! the wall-clock budgets are measured without competing tests.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pbec_core::correlations::{coupling_matrix, eigen, g2_curve_numerical, uniform_grid, G2Solution};
use pbec_core::fitting::{apply_visibility, fit_g2, linear_n_list, sweep_omega2};
use pbec_core::meanfield::{gamma_tilde_m, gamma_tilde_n, pump_for_target_n, steady_state, steady_state_closed_form};
use pbec_core::moments::{g2_zero, moment_steady_state, Ordering};
use pbec_core::numeric::Tolerances;
use pbec_core::oracle::{
    default_burn_in, ensemble_g2, gillespie_ensemble, gillespie_simulate, oracle_g2, oracle_steady_state_auto,
    EnsembleConfig, EstimatorOptions, LatticeState, DEFAULT_STATE_CAP,
};
use pbec_core::spectrum::{critical_number, fit_spectrum, spectrum_curve, wavelength_grid, TrapModel};
use pbec_core::{presets, MeanFieldState, ModelParams, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn fig4_at(n: f64) -> Result<ModelParams> {
    let p = presets::fig4();
    Ok(p.with_gamma_up(pump_for_target_n(&p, n)?))
}

fn within(elapsed: Duration, secs: f64) -> bool {
    elapsed.as_secs_f64() < secs
}

fn critical_number_of_the_trap() -> Result<Outcome> {
    let nc = critical_number(300.0, 2.0 * PI * 40.0)?;
    Ok(Outcome::new(rel(nc, 80660.0) <= 0.01, format!("N_c = {nc:.1}, target 80660 +- 1%")))
}

fn zero_delay_correlations() -> Result<Outcome> {
    let start = Instant::now();
    let mut values = Vec::new();
    for n in [4620.0, 17100.0] {
        let m = moment_steady_state(&fig4_at(n)?)?.moments;
        values.push(g2_zero(&m, Ordering::Normal)?);
    }
    let t = start.elapsed();
    let pass = (values[0] - 2.0).abs() <= 0.1 && (values[1] - 1.3).abs() <= 0.1 && within(t, 1.0);
    Ok(Outcome::new(
        pass,
        format!("g2(0) = {:.4} at 4620, {:.4} at 17100; {:.3} s", values[0], values[1], t.as_secs_f64()),
    ))
}

fn oscillation_frequency_sweep() -> Result<Outcome> {
    let p = presets::fig4();
    let start = Instant::now();
    let table = sweep_omega2(&p, &linear_n_list(2e3, 2.5e4, 50))?;
    let t = start.elapsed();
    let omegas: Vec<f64> = table.rows.iter().map(|r| r.omega2).collect();
    let increasing = omegas.windows(2).all(|w| w[1] > w[0]);
    let flat = omegas.iter().filter(|&&w| w == 0.0).count();

    let at = sweep_omega2(&p, &[1e4])?.rows[0].omega2;
    let q = fig4_at(1e4)?;
    let a = q.molecules * q.gamma_up * q.b_em;
    let estimate = (a - (a / (2.0 * q.kappa)).powi(2)).sqrt();
    let close = rel(at, estimate) <= 0.05;
    Ok(Outcome::new(
        increasing && close && within(t, 5.0),
        format!(
            "strictly increasing: {increasing} ({flat} overdamped rows with omega = 0); \
             omega(1e4) = {at:.4} vs closed form {estimate:.4} ({:.2}%); {:.3} s",
            100.0 * rel(at, estimate),
            t.as_secs_f64()
        ),
    ))
}

fn relaxation_time_scale() -> Result<Outcome> {
    let start = Instant::now();
    let p = fig4_at(17100.0)?;
    let m = moment_steady_state(&p)?.moments;
    let e = eigen(&coupling_matrix(&p, &m.mean_field()));
    let time = 1.0 / e.lambda_real.abs();
    let t = start.elapsed();
    Ok(Outcome::new(
        (2.0..=8.0).contains(&time) && within(t, 1.0),
        format!("1/|lambda'| = {time:.3} ns; {:.3} s", t.as_secs_f64()),
    ))
}

fn zero_drive_eigenstructure() -> Result<Outcome> {
    let mut p = presets::fig4();
    p.gamma_up = 0.0;
    p.kappa = 0.0;
    p.gamma_down = 0.0;
    let mut worst: f64 = 0.0;
    for (n, m_up) in [(4620.0, 1e6), (1e4, 5e7), (17100.0, 8.5e7), (1.0, 10.0)] {
        let s = MeanFieldState::new(n, m_up);
        let e = eigen(&coupling_matrix(&p, &s));
        let fast = -(gamma_tilde_m(&p, m_up) + gamma_tilde_n(&p, n));
        let scale = fast.abs();
        let (zero, other) = if e.lambda_real.abs() < e.lambda_fast.abs() {
            (e.lambda_real, e.lambda_fast)
        } else {
            (e.lambda_fast, e.lambda_real)
        };
        let err = (zero.abs() / scale).max(rel(other, fast));
        worst = worst.max(err);
    }
    Ok(Outcome::new(
        worst <= 8.0 * f64::EPSILON,
        format!("largest relative deviation from {{0, -(G_M + G_n)}}: {worst:.2e}"),
    ))
}

fn closed_form_matches_integration() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for n in [4620.0, 1e4, 17100.0] {
        let p = fig4_at(n)?;
        let m = moment_steady_state(&p)?.moments;
        let sol = G2Solution::new(&p, &m, Ordering::Normal)?;
        let grid = uniform_grid(20.0 / sol.eigen.lambda_real.abs(), 400)?;
        let a = sol.curve(&grid)?;
        let tol = Tolerances { rel: 1e-13, abs: 1e-13 * sol.initial.dg_n.abs() };
        let b = g2_curve_numerical(&p, &m, &grid, Ordering::Normal, tol)?;
        for (x, y) in a.g2.iter().zip(&b.g2) {
            worst = worst.max((x - y).abs() / x.abs());
        }
    }
    Ok(Outcome::new(worst <= 1e-10, format!("largest pointwise relative difference {worst:.2e}")))
}

fn oracle_equivalence() -> Result<Outcome> {
    let start = Instant::now();
    let p = presets::oracle_m100();
    let closure = moment_steady_state(&p)?.moments;
    let (gen, ss) = oracle_steady_state_auto(&p, DEFAULT_STATE_CAP)?;
    let exact = ss.distribution.moments();
    let pairs = [
        (closure.n, exact.n),
        (closure.m_up, exact.m_up),
        (closure.n2, exact.n2),
        (closure.nm, exact.nm),
        (closure.m2, exact.m2),
    ];
    let moment_err = pairs.iter().map(|&(a, b)| rel(a, b)).fold(0.0, f64::max);

    let e = eigen(&coupling_matrix(&p, &closure.mean_field()));
    let grid = uniform_grid(12.0 / e.lambda_real.abs(), 301)?;
    let curve = oracle_g2(&gen, &ss.distribution, &grid, Ordering::Normal)?;
    let fit = fit_g2(&curve, None)?;
    let re = rel(fit.lambda_real, e.lambda_real);
    let im = rel(fit.lambda_imag, e.lambda_imag);
    let t = start.elapsed();
    Ok(Outcome::new(
        moment_err <= 0.05 && re <= 0.10 && im <= 0.10 && within(t, 60.0),
        format!(
            "moments within {:.2}%; fitted lambda = {:.4} + {:.4}i vs matrix {:.4} + {:.4}i \
             ({:.1}%, {:.1}%); {} states; {:.2} s",
            100.0 * moment_err,
            fit.lambda_real,
            fit.lambda_imag,
            e.lambda_real,
            e.lambda_imag,
            100.0 * re,
            100.0 * im,
            gen.n_states(),
            t.as_secs_f64()
        ),
    ))
}

/// Trajectory-equivalents are trajectories of one burn-in plus twenty
/// relaxation times each.
fn stochastic_consistency() -> Result<Outcome> {
    const TRAJECTORIES: usize = 10_000;
    let start = Instant::now();
    let p = presets::oracle_m100();
    let (gen, ss) = oracle_steady_state_auto(&p, DEFAULT_STATE_CAP)?;
    let exact_g2 = oracle_g2(&gen, &ss.distribution, &[0.0], Ordering::Normal)?.g2[0];
    let mf = steady_state(&p)?;
    let closure = moment_steady_state(&p)?.moments;
    let e = eigen(&coupling_matrix(&p, &closure.mean_field()));

    let burn_in = default_burn_in(&p)?;
    let t_end = burn_in + 20.0 / e.lambda_real.abs();
    let initial = LatticeState::new(mf.n.round() as u64, mf.m_up.round() as u64);
    let cfg = EnsembleConfig { master_seed: 20_240_917, trajectories: TRAJECTORIES, t_end, initial };
    let opts = EstimatorOptions { ordering: Ordering::Normal, bin_width: 0.05, burn_in };
    let est = ensemble_g2(&p, &cfg, &[0.0], &opts)?;
    let g_se = est.curve.stderr.as_ref().map_or(f64::NAN, |s| s[0]);
    let g_dev = (est.curve.g2[0] - exact_g2).abs() / g_se;
    let n_dev = (est.mean_n - mf.n).abs() / est.mean_n_stderr;
    let n_dev_exact = (est.mean_n - ss.distribution.moments().n).abs() / est.mean_n_stderr;

    let a = gillespie_simulate(&p, 77, 50.0, initial)?;
    let b = gillespie_simulate(&p, 77, 50.0, initial)?;
    let c = gillespie_ensemble(&p, 77, 2, 50.0, initial)?;
    let reproducible = a == b && c[0] == a && c[1] != a;
    let t = start.elapsed();
    Ok(Outcome::new(
        g_dev <= 3.0 && n_dev <= 3.0 && reproducible && within(t, 120.0),
        format!(
            "g2(0) = {:.5} +- {:.5} vs oracle {:.5} ({g_dev:.2} SE); <n> = {:.4} +- {:.4} vs mean-field {:.4} \
             ({n_dev:.1} SE; exact {:.4} at {n_dev_exact:.1} SE); reproducible: {reproducible}; \
             {TRAJECTORIES} x {t_end:.1} ns in {:.2} s",
            est.curve.g2[0],
            g_se,
            exact_g2,
            est.mean_n,
            est.mean_n_stderr,
            mf.n,
            ss.distribution.moments().n,
            t.as_secs_f64()
        ),
    ))
}

fn fit_robustness() -> Result<Outcome> {
    let p = fig4_at(1e4)?;
    let m = moment_steady_state(&p)?.moments;
    let sol = G2Solution::new(&p, &m, Ordering::Normal)?;
    let grid = uniform_grid(20.0 / sol.eigen.lambda_real.abs(), 401)?;
    let clean = sol.curve(&grid)?;
    let truth = sol.eigen.lambda_imag;
    let noise = Normal::new(0.0, 0.01).expect("valid deviation");

    let mut errors = Vec::with_capacity(100);
    let mut first = None;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = clean.clone();
        c.g2.iter_mut().for_each(|g| *g += noise.sample(&mut rng));
        errors.push(rel(fit_g2(&c, None)?.lambda_imag, truth));
        first.get_or_insert(c);
    }
    errors.sort_by(f64::total_cmp);
    let median = 0.5 * (errors[49] + errors[50]);

    let noisy = first.expect("at least one seed");
    let base = fit_g2(&noisy, None)?;
    let mut drift: f64 = 0.0;
    for v in [1.0, 0.7, 0.3, 0.05, 1e-3] {
        let f = fit_g2(&apply_visibility(&noisy, v)?, None)?;
        drift = drift.max(rel(f.lambda_real, base.lambda_real)).max(rel(f.lambda_imag, base.lambda_imag));
    }
    Ok(Outcome::new(
        median <= 0.02 && drift <= 1e-8,
        format!(
            "median |d lambda''|/lambda'' = {:.3}% over 100 seeds (g2(0) - 1 = {:.3}); visibility drift {drift:.2e}",
            100.0 * median,
            clean.g2[0] - 1.0
        ),
    ))
}

fn steady_state_closed_forms() -> Result<Outcome> {
    let p = presets::fig4();
    let mut worst: f64 = 0.0;
    for k in 0..=20 {
        let gamma_up = 1e-6 * 10f64.powf(k as f64 / 20.0);
        let q = p.with_gamma_up(gamma_up);
        let root = steady_state(&q)?;
        let closed = steady_state_closed_form(&q)?;
        worst = worst.max(rel(closed.n, root.n)).max(rel(closed.m_up, root.m_up));
    }
    let mut trip: f64 = 0.0;
    for n in [2e3, 4620.0, 1e4, 17100.0, 2.5e4] {
        trip = trip.max(rel(steady_state(&fig4_at(n)?)?.n, n));
    }
    Ok(Outcome::new(
        worst <= 1e-3 && trip <= 1e-8,
        format!("closed forms within {worst:.2e}; pump conversion round trip within {trip:.2e}"),
    ))
}

fn spectrum_round_trip() -> Result<Outcome> {
    let trap = TrapModel::experiment();
    let lambda_c = trap.wavelength(0.0);
    let nc = critical_number(trap.temperature, trap.trap_frequency)?;
    let grid = wavelength_grid(555.0, 574.0, 951)?;
    let noise = Normal::new(0.0, 0.002).expect("valid deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(571);
    let mut worst: f64 = 0.0;
    for n in [0.1 * nc, 0.5 * nc, nc, 3.0 * nc] {
        let mut data = spectrum_curve(&trap, n, 0.3, &grid)?;
        data.intensity.iter_mut().for_each(|v| *v = 4.0 * *v + noise.sample(&mut rng));
        worst = worst.max(rel(fit_spectrum(&data, &trap)?.n_condensate, n));
    }
    Ok(Outcome::new(
        worst <= 0.01 && (lambda_c - 571.3).abs() < 1e-9,
        format!("lambda_c = {lambda_c:.1} nm; largest relative error in <n> {:.3}%", 100.0 * worst),
    ))
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("critical photon number", critical_number_of_the_trap),
        ("zero-delay correlations", zero_delay_correlations),
        ("oscillation frequency sweep", oscillation_frequency_sweep),
        ("relaxation time scale", relaxation_time_scale),
        ("zero-drive eigenstructure", zero_drive_eigenstructure),
        ("closed form vs integration", closed_form_matches_integration),
        ("oracle equivalence", oracle_equivalence),
        ("stochastic consistency", stochastic_consistency),
        ("fit robustness", fit_robustness),
        ("steady-state closed forms", steady_state_closed_forms),
        ("spectrum round trip", spectrum_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict} {name}: {}", i + 1, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
