use std::f64::consts::PI;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pbec_core::meanfield::pump_for_target_n;
use pbec_core::presets::{self, PRESET_NAMES};
use pbec_core::{ModelParams, Ordering, ParamsBuilder};

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "pbec", version, about = "Fluctuation dynamics of a driven-dissipative photon condensate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean-field and second-moment steady state with g2(0), as JSON.
    Steady(SteadyArgs),
    /// Linearized g2(tau) curve (CSV) and a damped-oscillation fit (JSON).
    G2(G2Args),
    /// Oscillation frequency and damping against the mean photon number (CSV).
    Sweep(SweepArgs),
    /// Compare the closure against the exact small-system master equation.
    Oracle(OracleArgs),
    /// Equilibrium spectrum of the trapped photon gas.
    Spectrum {
        #[command(subcommand)]
        command: SpectrumCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpectrumCommand {
    /// Synthetic spectrum on a wavelength grid (CSV).
    Curve(CurveArgs),
    /// Fit the condensate number to a measured spectrum.
    Fit(FitArgs),
    /// Critical photon number of the trap.
    CriticalNumber(TrapArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderingArg {
    Normal,
    Direct,
}

impl From<OrderingArg> for Ordering {
    fn from(o: OrderingArg) -> Self {
        match o {
            OrderingArg::Normal => Ordering::Normal,
            OrderingArg::Direct => Ordering::Direct,
        }
    }
}

/// Model parameters: a preset or config file, overridden key by key by flags.
/// Without `--params` or `--preset` the `fig4` preset is the base.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    /// Config file with `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Named parameter set.
    #[arg(long, value_name = "NAME", value_parser = PRESET_NAMES)]
    pub preset: Option<String>,
    /// Number of molecules M.
    #[arg(long = "molecules", visible_alias = "M", value_name = "M")]
    pub molecules: Option<f64>,
    #[arg(long = "kappa-GHz", value_name = "RATE")]
    pub kappa: Option<f64>,
    #[arg(long = "gamma-up-GHz", visible_alias = "gamma-up", value_name = "RATE")]
    pub gamma_up: Option<f64>,
    #[arg(long = "gamma-down-GHz", visible_alias = "gamma-down", value_name = "RATE")]
    pub gamma_down: Option<f64>,
    #[arg(long = "B-em-GHz", value_name = "RATE")]
    pub b_em: Option<f64>,
    #[arg(long = "B-abs-GHz", value_name = "RATE")]
    pub b_abs: Option<f64>,
    /// Dye-cavity detuning, used with `--T-K` when no absorption rate is given.
    #[arg(long = "delta-rad-per-ns", value_name = "DELTA", allow_negative_numbers = true)]
    pub detuning: Option<f64>,
    #[arg(long = "T-K", value_name = "KELVIN")]
    pub temperature: Option<f64>,
    /// Choose the pump so that the mean-field photon number equals this value.
    #[arg(long, value_name = "N", conflicts_with = "gamma_up")]
    pub target_n: Option<f64>,
}

impl ParamArgs {
    fn flags(&self) -> ParamsBuilder {
        ParamsBuilder {
            molecules: self.molecules,
            kappa: self.kappa,
            gamma_up: self.gamma_up,
            gamma_down: self.gamma_down,
            b_em: self.b_em,
            b_abs: self.b_abs,
            detuning: self.detuning,
            temperature: self.temperature,
        }
    }

    pub fn resolve(&self) -> Result<ModelParams, Failure> {
        let mut base = ParamsBuilder::default();
        if let Some(name) = &self.preset {
            let p = presets::by_name(name).ok_or_else(|| Failure::Usage(format!("unknown preset `{name}`")))?;
            base = ParamsBuilder::from_params(&p);
        }
        if let Some(path) = &self.params {
            base = base.overlay(ParamsBuilder::from_file(path)?);
        }
        if self.preset.is_none() && self.params.is_none() {
            base = ParamsBuilder::from_params(&presets::fig4());
        }
        let params = base.overlay(self.flags()).build()?;
        match self.target_n {
            Some(n) => Ok(params.with_gamma_up(pump_for_target_n(&params, n)?)),
            None => Ok(params),
        }
    }
}

#[derive(Debug, Args)]
pub struct SteadyArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Also write the JSON report here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct G2Args {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long = "tau-max-ns", default_value_t = 30.0, value_name = "NS")]
    pub tau_max: f64,
    #[arg(long = "tau-points", default_value_t = 301, value_name = "N")]
    pub tau_points: usize,
    #[arg(long, value_enum, default_value_t = OrderingArg::Normal)]
    pub ordering: OrderingArg,
    /// Integrate the linear system numerically instead of using the closed form.
    #[arg(long)]
    pub numerical: bool,
    /// Write the curve as CSV here; the JSON summary always goes to stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long = "n-min", default_value_t = 2000.0, value_name = "N")]
    pub n_min: f64,
    #[arg(long = "n-max", default_value_t = 25000.0, value_name = "N")]
    pub n_max: f64,
    #[arg(long, default_value_t = 50, value_name = "COUNT")]
    pub points: usize,
    /// Explicit comma-separated photon numbers; replaces the linear range.
    #[arg(long = "n-list", value_delimiter = ',', value_name = "N,...")]
    pub n_list: Option<Vec<f64>>,
    /// CSV destination; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 1, value_name = "SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 2000, value_name = "COUNT")]
    pub trajectories: usize,
    /// Length of the lag grid; defaults to twelve relaxation times.
    #[arg(long = "tau-max-ns", value_name = "NS")]
    pub tau_max: Option<f64>,
    #[arg(long = "tau-points", default_value_t = 301, value_name = "N")]
    pub tau_points: usize,
    #[arg(long, value_enum, default_value_t = OrderingArg::Normal)]
    pub ordering: OrderingArg,
    /// Largest lattice size accepted for the exact solver.
    #[arg(long = "state-cap", default_value_t = pbec_core::oracle::DEFAULT_STATE_CAP, value_name = "STATES")]
    pub state_cap: usize,
    /// Also write the JSON report here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrapArgs {
    #[arg(long = "T-K", default_value_t = 300.0, value_name = "KELVIN")]
    pub temperature: f64,
    /// Trap frequency in rad/ns.
    #[arg(long = "trap-frequency", default_value_t = 2.0 * PI * 40.0, value_name = "RAD_PER_NS")]
    pub trap_frequency: f64,
    #[arg(long = "cutoff-nm", default_value_t = 571.3, value_name = "NM")]
    pub cutoff: f64,
    /// Transverse polarizations per level.
    #[arg(long, default_value_t = 2, value_name = "COUNT")]
    pub polarizations: u32,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub trap: TrapArgs,
    /// Condensate photon number.
    #[arg(long = "n", value_name = "N")]
    pub n_condensate: f64,
    /// Gaussian spectrometer resolution, full width at half maximum.
    #[arg(long = "fwhm-nm", default_value_t = 0.3, value_name = "NM")]
    pub fwhm: f64,
    #[arg(long = "lambda-min-nm", default_value_t = 555.0, value_name = "NM")]
    pub lambda_min: f64,
    #[arg(long = "lambda-max-nm", default_value_t = 574.0, value_name = "NM")]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 951, value_name = "COUNT")]
    pub points: usize,
    /// CSV destination; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub trap: TrapArgs,
    /// CSV with `wavelength_nm,intensity` columns.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long = "fwhm-nm", default_value_t = 0.3, value_name = "NM")]
    pub fwhm: f64,
    /// Also write the JSON result here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}
