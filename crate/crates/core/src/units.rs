//! Unit conventions and physical constants.
//!
//! Times are in nanoseconds and rates in GHz, so that `rate * time` is a plain
//! number with no conversion factor. Angular frequencies (detuning, trap
//! frequency) are in rad/ns. Temperatures are in kelvin.

/// Reduced Planck constant, J s (CODATA 2018, exact digits used: 1.054571817e-34).
pub const HBAR_J_S: f64 = 1.054_571_817e-34;

/// Boltzmann constant, J/K (exact SI value).
pub const KB_J_PER_K: f64 = 1.380_649e-23;

/// Speed of light in vacuum, nm/ns.
pub const SPEED_OF_LIGHT_NM_PER_NS: f64 = 2.997_924_58e8;

/// Nanoseconds per second.
pub const NS_PER_S: f64 = 1e9;

/// `hbar / k_B` expressed in K ns, so that `HBAR_OVER_KB * omega / T` is
/// dimensionless for `omega` in rad/ns and `T` in K.
pub const HBAR_OVER_KB_K_NS: f64 = HBAR_J_S / KB_J_PER_K * NS_PER_S;

/// Marker type documenting the unit system shared by all modules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UnitConvention;

impl UnitConvention {
    pub const TIME: &'static str = "ns";
    pub const RATE: &'static str = "GHz";
    pub const ANGULAR_FREQUENCY: &'static str = "rad/ns";

    /// Product of one rate unit with one time unit. Exactly one.
    pub const fn ghz_times_ns() -> f64 {
        1.0
    }

    /// `hbar * omega / (k_B * T)` for `omega` in rad/ns and `T` in K.
    pub fn energy_ratio(omega_rad_per_ns: f64, temperature_k: f64) -> f64 {
        HBAR_OVER_KB_K_NS * omega_rad_per_ns / temperature_k
    }

    /// Thermal angular frequency `k_B T / hbar` in rad/ns.
    pub fn thermal_frequency(temperature_k: f64) -> f64 {
        temperature_k / HBAR_OVER_KB_K_NS
    }
}
