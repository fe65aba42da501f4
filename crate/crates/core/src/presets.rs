//! Named parameter sets.

use crate::params::ModelParams;

/// Molecule number of the experimental condensate.
pub const FIG4_MOLECULES: f64 = 5.17e9;
pub const FIG4_KAPPA: f64 = 2.33;
pub const FIG4_B_EM: f64 = 2.50e-5;
/// Emission to absorption ratio `B_em / B_abs`.
pub const FIG4_EMISSION_RATIO: f64 = 57.0;

/// Experimental parameter set with the pump switched off. Set `gamma_up`
/// directly or through [`crate::meanfield::pump_for_target_n`].
pub fn fig4() -> ModelParams {
    ModelParams::new(
        FIG4_MOLECULES,
        FIG4_KAPPA,
        0.0,
        0.0,
        FIG4_B_EM,
        FIG4_B_EM / FIG4_EMISSION_RATIO,
    )
}

/// `M = 100` above threshold with an underdamped correlation matrix; the
/// exact master-equation steady state is cheap to compute here.
pub fn oracle_m100() -> ModelParams {
    ModelParams::new(100.0, 1.0, 0.4, 0.0, 0.04, 0.04 / FIG4_EMISSION_RATIO)
}

/// `M = 100` with a weak pump, mean photon number well below one.
pub fn below_threshold_m100() -> ModelParams {
    ModelParams::new(100.0, 1.0, 0.005, 0.0, 0.04, 0.04 / FIG4_EMISSION_RATIO)
}

/// A single molecule; every identity of the exact model is checkable by hand.
pub fn trivial_m1() -> ModelParams {
    ModelParams::new(1.0, 1.0, 0.5, 0.1, 0.3, 0.05)
}

pub fn by_name(name: &str) -> Option<ModelParams> {
    match name {
        "fig4" => Some(fig4()),
        "oracle-m100" => Some(oracle_m100()),
        "below-threshold" => Some(below_threshold_m100()),
        "trivial-m1" => Some(trivial_m1()),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 4] = ["fig4", "oracle-m100", "below-threshold", "trivial-m1"];
