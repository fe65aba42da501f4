//! Model parameters, the Kennard-Stepanov constraint and the key-value
//! configuration format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::HBAR_OVER_KB_K_NS;

/// Relative tolerance on `B_em / B_abs = exp(-hbar Delta / k_B T)`.
pub const KENNARD_STEPANOV_RTOL: f64 = 1e-9;

/// Rate-equation parameter set. Rates in GHz, detuning in rad/ns, temperature in K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of dye molecules `M`.
    pub molecules: f64,
    /// Cavity loss rate.
    pub kappa: f64,
    /// Pump rate.
    pub gamma_up: f64,
    /// Non-radiative decay rate of excited molecules.
    pub gamma_down: f64,
    /// Phonon-assisted emission rate.
    pub b_em: f64,
    /// Phonon-assisted absorption rate.
    pub b_abs: f64,
    /// Cavity detuning `omega_c - delta`, expected negative.
    pub detuning: Option<f64>,
    pub temperature: Option<f64>,
}

impl ModelParams {
    /// Parameters with explicit rates and no detuning/temperature attached.
    pub fn new(molecules: f64, kappa: f64, gamma_up: f64, gamma_down: f64, b_em: f64, b_abs: f64) -> Self {
        ModelParams {
            molecules,
            kappa,
            gamma_up,
            gamma_down,
            b_em,
            b_abs,
            detuning: None,
            temperature: None,
        }
    }

    pub fn with_gamma_up(mut self, gamma_up: f64) -> Self {
        self.gamma_up = gamma_up;
        self
    }

    /// Total emission plus absorption rate `B_em + B_abs`.
    pub fn b_total(&self) -> f64 {
        self.b_em + self.b_abs
    }

    /// `B_abs / B_em`, or zero when there is no emission.
    pub fn absorption_ratio(&self) -> f64 {
        if self.b_em > 0.0 {
            self.b_abs / self.b_em
        } else {
            0.0
        }
    }

    pub fn validate(self) -> Result<Self> {
        validate(self)
    }

    /// Molecule count as an integer lattice size. Fails unless `M` is integral.
    pub fn molecule_count(&self) -> Result<usize> {
        let m = self.molecules;
        if m.fract() != 0.0 || m < 1.0 || m > u32::MAX as f64 {
            return Err(Error::invalid("M", format!("{m} is not a representable integer molecule count")));
        }
        Ok(m as usize)
    }
}

/// `B_abs = B_em exp(hbar Delta / k_B T)`.
pub fn kennard_stepanov(b_em: f64, detuning: f64, temperature: f64) -> Result<f64> {
    if !(b_em > 0.0) {
        return Err(Error::Domain(format!("B_em must be positive, got {b_em}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("T must be positive, got {temperature}")));
    }
    if !detuning.is_finite() {
        return Err(Error::Domain(format!("detuning must be finite, got {detuning}")));
    }
    Ok(b_em * (HBAR_OVER_KB_K_NS * detuning / temperature).exp())
}

/// Detuning (rad/ns) that produces `B_em / B_abs = ratio` at `temperature`.
pub fn detuning_for_ratio(ratio: f64, temperature: f64) -> Result<f64> {
    if !(ratio > 0.0) || !(temperature > 0.0) {
        return Err(Error::Domain(format!(
            "ratio and temperature must be positive, got {ratio}, {temperature}"
        )));
    }
    Ok(-ratio.ln() * temperature / HBAR_OVER_KB_K_NS)
}

fn check_rate(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::invalid(name, format!("{value} is not finite")));
    }
    if value < 0.0 {
        return Err(Error::invalid(name, format!("{value} is negative")));
    }
    Ok(())
}

/// Checks every invariant of [`ModelParams`], reporting the first violation by name.
pub fn validate(params: ModelParams) -> Result<ModelParams> {
    if !params.molecules.is_finite() || params.molecules < 1.0 {
        return Err(Error::invalid("M", format!("{} is below 1", params.molecules)));
    }
    check_rate("kappa", params.kappa)?;
    check_rate("gamma_up", params.gamma_up)?;
    check_rate("gamma_down", params.gamma_down)?;
    check_rate("B_em", params.b_em)?;
    check_rate("B_abs", params.b_abs)?;
    if let Some(t) = params.temperature {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::invalid("T", format!("{t} is not a positive temperature")));
        }
    }
    if let Some(d) = params.detuning {
        if !d.is_finite() {
            return Err(Error::invalid("delta", format!("{d} is not finite")));
        }
    }
    let has_rates = params.b_em > 0.0 || params.b_abs > 0.0;
    if let (Some(d), Some(t), true) = (params.detuning, params.temperature, has_rates) {
        let expected = params.b_em * (HBAR_OVER_KB_K_NS * d / t).exp();
        let scale = expected.abs().max(params.b_abs.abs());
        if (expected - params.b_abs).abs() > KENNARD_STEPANOV_RTOL * scale {
            return Err(Error::invalid(
                "kennard_stepanov",
                format!(
                    "B_em/B_abs = {} but exp(-hbar Delta/k_B T) = {}",
                    params.b_em / params.b_abs,
                    (-HBAR_OVER_KB_K_NS * d / t).exp()
                ),
            ));
        }
    }
    if let (Some(d), true) = (params.detuning, has_rates) {
        if d < 0.0 && params.b_em <= params.b_abs {
            return Err(Error::invalid(
                "delta",
                "negative detuning requires B_em > B_abs".to_string(),
            ));
        }
    }
    Ok(params)
}

/// Partially specified parameters, as read from a config file or flags.
/// Later sources are layered on top of earlier ones with [`ParamsBuilder::overlay`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParamsBuilder {
    pub molecules: Option<f64>,
    pub kappa: Option<f64>,
    pub gamma_up: Option<f64>,
    pub gamma_down: Option<f64>,
    pub b_em: Option<f64>,
    pub b_abs: Option<f64>,
    pub detuning: Option<f64>,
    pub temperature: Option<f64>,
}

const CONFIG_KEYS: [&str; 8] = [
    "M",
    "kappa_GHz",
    "gamma_up_GHz",
    "gamma_down_GHz",
    "B_em_GHz",
    "B_abs_GHz",
    "delta_rad_per_ns",
    "T_K",
];

impl ParamsBuilder {
    pub fn from_params(p: &ModelParams) -> Self {
        ParamsBuilder {
            molecules: Some(p.molecules),
            kappa: Some(p.kappa),
            gamma_up: Some(p.gamma_up),
            gamma_down: Some(p.gamma_down),
            b_em: Some(p.b_em),
            b_abs: Some(p.b_abs),
            detuning: p.detuning,
            temperature: p.temperature,
        }
    }

    /// Values set in `top` replace the ones in `self`.
    pub fn overlay(self, top: ParamsBuilder) -> Self {
        ParamsBuilder {
            molecules: top.molecules.or(self.molecules),
            kappa: top.kappa.or(self.kappa),
            gamma_up: top.gamma_up.or(self.gamma_up),
            gamma_down: top.gamma_down.or(self.gamma_down),
            b_em: top.b_em.or(self.b_em),
            b_abs: top.b_abs.or(self.b_abs),
            detuning: top.detuning.or(self.detuning),
            temperature: top.temperature.or(self.temperature),
        }
    }

    fn slot(&mut self, key: &str) -> Option<&mut Option<f64>> {
        Some(match key {
            "M" => &mut self.molecules,
            "kappa_GHz" => &mut self.kappa,
            "gamma_up_GHz" => &mut self.gamma_up,
            "gamma_down_GHz" => &mut self.gamma_down,
            "B_em_GHz" => &mut self.b_em,
            "B_abs_GHz" => &mut self.b_abs,
            "delta_rad_per_ns" => &mut self.detuning,
            "T_K" => &mut self.temperature,
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut out = ParamsBuilder::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: idx + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad number for `{key}`: {e}")))?;
            let slot = out.slot(key).ok_or_else(|| {
                parse_err(format!("unknown key `{key}` (expected one of {})", CONFIG_KEYS.join(", ")))
            })?;
            if slot.is_some() {
                return Err(parse_err(format!("duplicate key `{key}`")));
            }
            *slot = Some(value);
        }
        Ok(out)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_config(&std::fs::read_to_string(path)?)
    }

    /// Resolves into validated parameters. An explicit `B_abs` wins over
    /// `(delta, T)`; if both are given and disagree, a warning is logged and
    /// the detuning/temperature pair is dropped.
    pub fn build(self) -> Result<ModelParams> {
        let molecules = self.molecules.ok_or_else(|| Error::invalid("M", "missing"))?;
        let kappa = self.kappa.ok_or_else(|| Error::invalid("kappa", "missing"))?;
        let b_em = self.b_em.ok_or_else(|| Error::invalid("B_em", "missing"))?;
        let mut detuning = self.detuning;
        let mut temperature = self.temperature;
        let implied = match (detuning, temperature) {
            (Some(d), Some(t)) if b_em > 0.0 => Some(kennard_stepanov(b_em, d, t)?),
            _ => None,
        };
        let b_abs = match (self.b_abs, implied) {
            (Some(explicit), Some(ks)) => {
                if (explicit - ks).abs() > KENNARD_STEPANOV_RTOL * explicit.abs().max(ks.abs()) {
                    log::warn!(
                        "explicit B_abs = {explicit} GHz disagrees with Kennard-Stepanov value {ks} GHz; \
                         using the explicit value and ignoring delta/T"
                    );
                    detuning = None;
                    temperature = None;
                }
                explicit
            }
            (Some(explicit), None) => explicit,
            (None, Some(ks)) => ks,
            (None, None) => {
                return Err(Error::invalid("B_abs", "missing (give B_abs_GHz or delta_rad_per_ns with T_K)"))
            }
        };
        validate(ModelParams {
            molecules,
            kappa,
            gamma_up: self.gamma_up.unwrap_or(0.0),
            gamma_down: self.gamma_down.unwrap_or(0.0),
            b_em,
            b_abs,
            detuning,
            temperature,
        })
    }
}

/// Renders parameters in the key-value config format.
pub fn to_config(p: &ModelParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "M = {:e}", p.molecules);
    let _ = writeln!(s, "kappa_GHz = {:e}", p.kappa);
    let _ = writeln!(s, "gamma_up_GHz = {:e}", p.gamma_up);
    let _ = writeln!(s, "gamma_down_GHz = {:e}", p.gamma_down);
    let _ = writeln!(s, "B_em_GHz = {:e}", p.b_em);
    let _ = writeln!(s, "B_abs_GHz = {:e}", p.b_abs);
    if let Some(d) = p.detuning {
        let _ = writeln!(s, "delta_rad_per_ns = {d:e}");
    }
    if let Some(t) = p.temperature {
        let _ = writeln!(s, "T_K = {t:e}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    #[test]
    fn zero_detuning_is_identity() {
        assert_eq!(kennard_stepanov(2.5e-5, 0.0, 300.0).unwrap(), 2.5e-5);
    }

    #[test]
    fn ratio_57_gives_published_absorption_rate() {
        let delta = detuning_for_ratio(57.0, 300.0).unwrap();
        let b_abs = kennard_stepanov(2.5e-5, delta, 300.0).unwrap();
        assert!((b_abs - 4.386e-7).abs() / 4.386e-7 < 1e-3, "{b_abs}");
        // hbar Delta / k_B T = -ln 57
        let x = HBAR_OVER_KB_K_NS * delta / 300.0;
        assert!((x + 57f64.ln()).abs() < 1e-12);
        assert!((x + 4.043).abs() < 1e-3);
        assert!(((-x).exp() - 57.0).abs() / 57.0 < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(kennard_stepanov(0.0, -1.0, 300.0), Err(Error::Domain(_))));
        assert!(matches!(kennard_stepanov(1.0, -1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(kennard_stepanov(1.0, -1.0, -5.0), Err(Error::Domain(_))));
    }

    #[test]
    fn validate_examples() {
        assert!(validate(ModelParams::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)).is_ok());
        assert!(validate(presets::fig4()).is_ok());
        let bad = ModelParams { kappa: -1.0, ..presets::fig4() };
        match validate(bad) {
            Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "kappa"),
            other => panic!("{other:?}"),
        }
        let bad = ModelParams { molecules: 0.5, ..presets::fig4() };
        assert!(matches!(validate(bad), Err(Error::InvalidParameter { name: "M", .. })));
    }

    #[test]
    fn validate_rejects_inconsistent_detuning() {
        let mut p = presets::fig4();
        p.detuning = Some(detuning_for_ratio(57.0, 300.0).unwrap());
        p.temperature = Some(300.0);
        p.b_abs = p.b_em / 57.0;
        assert!(validate(p).is_ok());
        p.b_abs *= 1.01;
        assert!(matches!(
            validate(p),
            Err(Error::InvalidParameter { name: "kennard_stepanov", .. })
        ));
    }

    #[test]
    fn negative_detuning_requires_emission_dominance() {
        let mut p = ModelParams::new(10.0, 1.0, 0.1, 0.0, 1.0, 2.0);
        p.detuning = Some(-1.0);
        assert!(matches!(validate(p), Err(Error::InvalidParameter { name: "delta", .. })));
    }

    #[test]
    fn config_round_trip_and_precedence() {
        let text = "# fig 4\nM = 5.17e9\nkappa_GHz = 2.33 # loss\nB_em_GHz = 2.5e-5\n\
                    delta_rad_per_ns = -1.588e5\nT_K = 300\n";
        let b = ParamsBuilder::parse_config(text).unwrap();
        let p = b.build().unwrap();
        assert!(p.b_abs < p.b_em);
        assert_eq!(p.gamma_up, 0.0);
        let again = ParamsBuilder::parse_config(&to_config(&p)).unwrap().build().unwrap();
        assert_eq!(p, again);

        // explicit B_abs wins and the inconsistent pair is dropped
        let b2 = b.overlay(ParamsBuilder { b_abs: Some(1e-7), ..Default::default() });
        let p2 = b2.build().unwrap();
        assert_eq!(p2.b_abs, 1e-7);
        assert_eq!(p2.detuning, None);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            ParamsBuilder::parse_config("M = 1\nfoo = 2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(ParamsBuilder::parse_config("M 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(ParamsBuilder::parse_config("M = x\n"), Err(Error::Parse { .. })));
        assert!(ParamsBuilder::parse_config("M = 1\nkappa_GHz = 1\n").unwrap().build().is_err());
    }

    proptest! {
        #[test]
        fn ratio_round_trip(ratio in 1.0001f64..1e4, t in 10.0f64..2000.0) {
            let d = detuning_for_ratio(ratio, t).unwrap();
            let b_abs = kennard_stepanov(1.0, d, t).unwrap();
            prop_assert!(((1.0 / b_abs) - ratio).abs() <= 1e-12 * ratio);
        }

        #[test]
        fn absorption_decreases_with_red_detuning(d1 in -1e4f64..-1.0, frac in 1.001f64..3.0) {
            let a = kennard_stepanov(1.0, d1, 300.0).unwrap();
            let b = kennard_stepanov(1.0, d1 * frac, 300.0).unwrap();
            prop_assert!(b < a);
            prop_assert!(a < 1.0);
        }
    }
}
