use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pbec_core::correlations::{g2_curve, g2_curve_numerical, uniform_grid};
use pbec_core::fitting::{fit_g2, linear_n_list, sweep_omega2};
use pbec_core::meanfield::{pump_for_target_n, steady_state};
use pbec_core::moments::{moment_steady_state, Ordering};
use pbec_core::numeric::Tolerances;
use pbec_core::oracle::{gillespie_ensemble, oracle_g2, oracle_steady_state_auto, LatticeState, DEFAULT_STATE_CAP};
use pbec_core::spectrum::{fit_spectrum, spectrum_curve, wavelength_grid};
use pbec_core::{presets, TrapModel};

fn steady_states(c: &mut Criterion) {
    let base = presets::fig4();
    let p = base.with_gamma_up(pump_for_target_n(&base, 1e4).unwrap());
    c.bench_function("mean_field_steady_state", |b| b.iter(|| steady_state(black_box(&p)).unwrap()));
    c.bench_function("moment_steady_state", |b| b.iter(|| moment_steady_state(black_box(&p)).unwrap()));
    let list = linear_n_list(2e3, 2.5e4, 50);
    c.bench_function("sweep_50_points", |b| b.iter(|| sweep_omega2(black_box(&base), &list).unwrap()));
}

fn correlation_curves(c: &mut Criterion) {
    let base = presets::fig4();
    let p = base.with_gamma_up(pump_for_target_n(&base, 17100.0).unwrap());
    let m = moment_steady_state(&p).unwrap().moments;
    let grid = uniform_grid(30.0, 301).unwrap();
    c.bench_function("g2_closed_form", |b| b.iter(|| g2_curve(&p, black_box(&m), &grid, Ordering::Normal).unwrap()));
    let tol = Tolerances { rel: 1e-10, abs: 1e-10 * m.n * m.n };
    c.bench_function("g2_integrated", |b| {
        b.iter(|| g2_curve_numerical(&p, black_box(&m), &grid, Ordering::Normal, tol).unwrap())
    });
    let curve = g2_curve(&p, &m, &grid, Ordering::Normal).unwrap();
    c.bench_function("fit_damped_oscillation", |b| b.iter(|| fit_g2(black_box(&curve), None).unwrap()));
}

fn oracles(c: &mut Criterion) {
    let p = presets::oracle_m100();
    let mut group = c.benchmark_group("oracle_m100");
    group.sample_size(10);
    group.bench_function("exact_steady_state", |b| {
        b.iter(|| oracle_steady_state_auto(black_box(&p), DEFAULT_STATE_CAP).unwrap())
    });
    let (gen, ss) = oracle_steady_state_auto(&p, DEFAULT_STATE_CAP).unwrap();
    let grid = uniform_grid(5.0, 51).unwrap();
    group.bench_function("regression_g2_5ns", |b| {
        b.iter(|| oracle_g2(&gen, black_box(&ss.distribution), &grid, Ordering::Normal).unwrap())
    });
    let start = LatticeState::new(30, 25);
    group.bench_function("gillespie_100_x_50ns", |b| {
        b.iter(|| gillespie_ensemble(black_box(&p), 1, 100, 50.0, start).unwrap())
    });
    group.finish();
}

fn spectra(c: &mut Criterion) {
    let trap = TrapModel::experiment();
    let grid = wavelength_grid(555.0, 574.0, 951).unwrap();
    let data = spectrum_curve(&trap, 5e4, 0.3, &grid).unwrap();
    c.bench_function("spectrum_curve", |b| b.iter(|| spectrum_curve(&trap, black_box(5e4), 0.3, &grid).unwrap()));
    c.bench_function("spectrum_fit", |b| b.iter(|| fit_spectrum(black_box(&data), &trap).unwrap()));
}

criterion_group!(benches, steady_states, correlation_curves, oracles, spectra);
criterion_main!(benches);
