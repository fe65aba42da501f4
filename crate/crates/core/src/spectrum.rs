//! Equilibrium spectrum of the harmonically trapped two-dimensional photon gas.
//!
//! Level `k` of the trap has energy `hbar (omega_c + k Omega)` and `k + 1`
//! transverse modes per polarization. Intensity is taken proportional to the
//! photon number per level.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_csv, write_csv};
use crate::units::{UnitConvention, SPEED_OF_LIGHT_NM_PER_NS};

/// Terms below this fraction of the running thermal total end the level sum.
pub const SERIES_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapModel {
    /// Temperature, K.
    pub temperature: f64,
    /// Trap frequency `Omega`, rad/ns.
    pub trap_frequency: f64,
    /// Cutoff wavelength, nm.
    pub cutoff_wavelength: f64,
    /// Polarization states per transverse mode.
    pub polarizations: u32,
}

impl TrapModel {
    pub fn new(temperature: f64, trap_frequency: f64, cutoff_wavelength: f64) -> Result<Self> {
        TrapModel { temperature, trap_frequency, cutoff_wavelength, polarizations: 2 }.validate()
    }

    /// Room-temperature trap of the experiment: 300 K, `Omega = 2 pi 40 GHz`,
    /// cutoff at 571.3 nm.
    pub fn experiment() -> Self {
        TrapModel { temperature: 300.0, trap_frequency: 2.0 * PI * 40.0, cutoff_wavelength: 571.3, polarizations: 2 }
    }

    pub fn validate(self) -> Result<Self> {
        for (name, v) in [("T", self.temperature), ("Omega", self.trap_frequency), ("lambda_c", self.cutoff_wavelength)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.polarizations == 0 {
            return Err(Error::invalid("polarizations", "must be at least 1"));
        }
        Ok(self)
    }

    /// Cutoff angular frequency `omega_c = 2 pi c / lambda_c`, rad/ns.
    pub fn omega_c(&self) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT_NM_PER_NS / self.cutoff_wavelength
    }

    /// `hbar Omega / k_B T`.
    pub fn level_spacing(&self) -> f64 {
        UnitConvention::energy_ratio(self.trap_frequency, self.temperature)
    }

    /// Wavelength of level `k` in nm.
    pub fn wavelength(&self, k: f64) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT_NM_PER_NS / (self.omega_c() + k * self.trap_frequency)
    }

    /// Fractional level index emitting at `lambda`.
    fn level_at(&self, lambda: f64) -> f64 {
        (2.0 * PI * SPEED_OF_LIGHT_NM_PER_NS / lambda - self.omega_c()) / self.trap_frequency
    }
}

/// `pi^2 / 3 (k_B T / hbar Omega)^2`.
pub fn critical_number(temperature: f64, trap_frequency: f64) -> Result<f64> {
    let trap = TrapModel { temperature, trap_frequency, cutoff_wavelength: 1.0, polarizations: 2 }.validate()?;
    Ok(PI * PI / 3.0 / trap.level_spacing().powi(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOccupations {
    /// `(hbar omega_c - mu) / k_B T`.
    pub x0: f64,
    /// Chemical potential relative to the cutoff, `(mu - hbar omega_c) / k_B T`.
    pub mu_offset: f64,
    /// Photon number in level `k`, all degenerate modes included.
    pub per_level: Vec<f64>,
}

impl LevelOccupations {
    pub fn total(&self) -> f64 {
        self.per_level.iter().sum()
    }

    /// Photons outside the ground level.
    pub fn excited(&self) -> f64 {
        self.per_level[1..].iter().sum()
    }
}

/// Bose-Einstein occupations with the ground mode holding `n_condensate`
/// photons per polarization, so `per_level[0] = polarizations * n_condensate`.
/// The chemical potential follows in closed form from inverting the
/// ground-mode Bose factor.
pub fn level_occupations(trap: &TrapModel, n_condensate: f64) -> Result<LevelOccupations> {
    level_occupations_tol(trap, n_condensate, SERIES_TOL)
}

pub fn level_occupations_tol(trap: &TrapModel, n_condensate: f64, tol: f64) -> Result<LevelOccupations> {
    trap.validate()?;
    if !(n_condensate > 0.0) || !n_condensate.is_finite() {
        return Err(Error::Domain(format!("condensate number must be positive, got {n_condensate}")));
    }
    let x0 = (1.0 / n_condensate).ln_1p();
    let eps = trap.level_spacing();
    let pol = trap.polarizations as f64;
    let mut per_level = Vec::new();
    // measured against the thermal part, which a large condensate would swamp
    let mut excited = 0.0;
    let decreasing_from = (1.0 / eps).ceil() as usize;
    for k in 0.. {
        let x = x0 + k as f64 * eps;
        let term = pol * (k + 1) as f64 / x.exp_m1();
        per_level.push(term);
        if k > 0 {
            excited += term;
        }
        if k > decreasing_from && term < tol * excited {
            break;
        }
    }
    Ok(LevelOccupations { x0, mu_offset: -x0, per_level })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCurve {
    pub wavelength_nm: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Gaussian instrument resolution, FWHM in nm.
    pub resolution_fwhm: f64,
}

impl SpectrumCurve {
    /// CSV with header `wavelength_nm,intensity`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_csv(
            w,
            &["wavelength_nm", "intensity"],
            self.wavelength_nm.iter().zip(&self.intensity).map(|(&l, &i)| vec![l, i]),
        )
    }

    pub fn from_csv(text: &str, resolution_fwhm: f64) -> Result<Self> {
        let t = parse_csv(text)?;
        let missing = |c: &str| Error::Parse { line: 1, message: format!("missing column {c}") };
        Ok(SpectrumCurve {
            wavelength_nm: t.column("wavelength_nm").ok_or_else(|| missing("wavelength_nm"))?,
            intensity: t.column("intensity").ok_or_else(|| missing("intensity"))?,
            resolution_fwhm,
        })
    }
}

/// Evaluates the broadened spectrum at arbitrary wavelengths.
struct Broadened<'a> {
    trap: &'a TrapModel,
    occ: &'a [f64],
    sigma: f64,
}

impl Broadened<'_> {
    fn at(&self, lambda: f64) -> f64 {
        let reach = 8.0 * self.sigma;
        let k_lo = self.trap.level_at(lambda + reach).floor().max(0.0) as usize;
        let k_hi = (self.trap.level_at((lambda - reach).max(1e-9)).ceil().max(0.0) as usize).min(self.occ.len() - 1);
        let norm = 1.0 / (self.sigma * (2.0 * PI).sqrt());
        (k_lo..=k_hi.max(k_lo))
            .filter(|&k| k < self.occ.len())
            .map(|k| {
                let d = (lambda - self.trap.wavelength(k as f64)) / self.sigma;
                self.occ[k] * norm * (-0.5 * d * d).exp()
            })
            .sum()
    }

    /// Maximum of the continuous curve on `[lo, hi]`.
    fn peak(&self, lo: f64, hi: f64) -> f64 {
        let step = self.sigma / 8.0;
        let count = ((hi - lo) / step).ceil() as usize + 1;
        let (mut best_x, mut best) = (lo, f64::NEG_INFINITY);
        for i in 0..count {
            let x = (lo + i as f64 * step).min(hi);
            let v = self.at(x);
            if v > best {
                best = v;
                best_x = x;
            }
        }
        let (a, b) = ((best_x - step).max(lo), (best_x + step).min(hi));
        let x = golden_max(|x| self.at(x), a, b, 1e-9 * self.sigma);
        best.max(self.at(x))
    }
}

/// Golden-section search for a maximum of a unimodal function on `[a, b]`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn check_wavelength_grid(trap: &TrapModel, grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Domain("wavelength grid must be positive and strictly increasing".into()));
    }
    let lc = trap.cutoff_wavelength;
    if grid[0] > lc || grid[grid.len() - 1] < lc {
        return Err(Error::Domain(format!(
            "grid [{}, {}] nm does not cover the cutoff at {lc} nm",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    Ok(())
}

/// Spectrum on `grid`, convolved with a Gaussian of the given FWHM and scaled
/// to unit peak. With zero resolution every level is binned to its nearest
/// grid point.
pub fn spectrum_curve(trap: &TrapModel, n_condensate: f64, resolution_fwhm: f64, grid: &[f64]) -> Result<SpectrumCurve> {
    check_wavelength_grid(trap, grid)?;
    if !(resolution_fwhm >= 0.0) || !resolution_fwhm.is_finite() {
        return Err(Error::Domain(format!("resolution must be nonnegative, got {resolution_fwhm}")));
    }
    let occ = level_occupations(trap, n_condensate)?.per_level;
    let mut intensity = vec![0.0; grid.len()];
    if resolution_fwhm == 0.0 {
        let (lo, hi) = (grid[0], grid[grid.len() - 1]);
        for (k, &o) in occ.iter().enumerate() {
            let l = trap.wavelength(k as f64);
            if l < lo {
                break;
            }
            if l > hi {
                continue;
            }
            let j = grid.partition_point(|&g| g < l);
            let nearest = if j == 0 {
                0
            } else if j == grid.len() || l - grid[j - 1] <= grid[j] - l {
                j - 1
            } else {
                j
            };
            intensity[nearest] += o;
        }
        let peak = intensity.iter().copied().fold(0.0, f64::max);
        intensity.iter_mut().for_each(|v| *v /= peak);
    } else {
        let b = Broadened { trap, occ: &occ, sigma: resolution_fwhm / (8.0 * 2f64.ln()).sqrt() };
        let peak = b.peak(grid[0], grid[grid.len() - 1]);
        for (v, &l) in intensity.iter_mut().zip(grid) {
            *v = b.at(l) / peak;
        }
    }
    Ok(SpectrumCurve { wavelength_nm: grid.to_vec(), intensity, resolution_fwhm })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    pub n_condensate: f64,
    /// Overall intensity factor multiplying the unit-peak model.
    pub scale: f64,
    pub residual_norm: f64,
}

/// One-parameter least squares for the condensate number, with the
/// intensity scale eliminated in closed form at every trial value.
pub fn fit_spectrum(data: &SpectrumCurve, trap: &TrapModel) -> Result<SpectrumFit> {
    check_wavelength_grid(trap, &data.wavelength_nm)?;
    if data.intensity.len() != data.wavelength_nm.len() || data.intensity.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("intensity must be finite and match the wavelength grid".into()));
    }
    let objective = |u: f64| -> Result<(f64, f64)> {
        let model = spectrum_curve(trap, u.exp(), data.resolution_fwhm, &data.wavelength_nm)?;
        let mm: f64 = model.intensity.iter().map(|m| m * m).sum();
        let dm: f64 = model.intensity.iter().zip(&data.intensity).map(|(m, d)| m * d).sum();
        let scale = dm / mm;
        let ssr = model.intensity.iter().zip(&data.intensity).map(|(m, d)| (scale * m - d).powi(2)).sum();
        Ok((ssr, scale))
    };

    let nc = critical_number(trap.temperature, trap.trap_frequency)?;
    let (u_lo, u_hi) = ((1e-3f64).ln(), (1e3 * nc).ln());
    let samples = 80;
    let us: Vec<f64> = (0..=samples).map(|i| u_lo + (u_hi - u_lo) * i as f64 / samples as f64).collect();
    let costs: Vec<f64> = us.iter().map(|&u| objective(u).map(|c| c.0)).collect::<Result<_>>()?;
    let best = (0..costs.len()).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).expect("nonempty scan");
    let a = us[best.saturating_sub(1)];
    let b = us[(best + 1).min(samples)];
    let u = golden_max(|u| objective(u).map_or(f64::NEG_INFINITY, |c| -c.0), a, b, 1e-12);
    let (ssr, scale) = objective(u)?;
    if !ssr.is_finite() {
        return Err(Error::NoConvergence("spectrum fit produced a non-finite residual".into()));
    }
    Ok(SpectrumFit { n_condensate: u.exp(), scale, residual_norm: ssr.sqrt() })
}

/// Evenly spaced wavelengths, `points >= 2`.
pub fn wavelength_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(hi > lo) {
        return Err(Error::Domain("wavelength grid needs hi > lo and at least two points".into()));
    }
    Ok((0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const OMEGA: f64 = 2.0 * PI * 40.0;

    #[test]
    fn critical_number_value_and_scaling() {
        let nc = critical_number(300.0, OMEGA).unwrap();
        assert!((nc - 80660.0).abs() / 80660.0 < 0.01, "{nc}");
        let quarter = critical_number(300.0, 2.0 * OMEGA).unwrap();
        assert!((quarter - nc / 4.0).abs() < 1e-9 * nc);
        let cold = critical_number(150.0, OMEGA).unwrap();
        assert!((cold - nc / 4.0).abs() < 1e-9 * nc);
        assert!(critical_number(0.0, OMEGA).is_err());
    }

    #[test]
    fn single_photon_condensate_fixes_mu() {
        let occ = level_occupations(&TrapModel::experiment(), 1.0).unwrap();
        assert!((occ.mu_offset + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_condensate_saturates_the_thermal_cloud() {
        let trap = TrapModel::experiment();
        let occ = level_occupations(&trap, 1e12).unwrap();
        assert!(occ.x0 < 1e-11);
        let nc = critical_number(300.0, OMEGA).unwrap();
        assert!((occ.excited() - nc).abs() / nc < 0.02, "{} vs {nc}", occ.excited());
        // low levels approach the classical equipartition value
        let eps = trap.level_spacing();
        for k in 1..4 {
            let asym = 2.0 * (k + 1) as f64 / (k as f64 * eps);
            assert!((occ.per_level[k] - asym).abs() / asym < 0.01);
        }
    }

    #[test]
    fn series_truncation_converged() {
        let trap = TrapModel::experiment();
        for n in [10.0, 1e4, 1e6] {
            let a = level_occupations_tol(&trap, n, SERIES_TOL).unwrap().total();
            let b = level_occupations_tol(&trap, n, 0.5 * SERIES_TOL).unwrap().total();
            assert!((a - b).abs() / a < 1e-6);
        }
    }

    #[test]
    fn unbroadened_condensate_spike_sits_at_cutoff() {
        let trap = TrapModel::experiment();
        let grid = wavelength_grid(540.0, 575.0, 3501).unwrap();
        let s = spectrum_curve(&trap, 1e7, 0.0, &grid).unwrap();
        let (imax, _) = s.intensity.iter().enumerate().fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert!((grid[imax] - 571.3).abs() <= 0.005 + 1e-9);
        let longest = grid.iter().zip(&s.intensity).filter(|(_, &v)| v > 0.0).map(|(&l, _)| l).fold(0.0, f64::max);
        assert!((longest - 571.3).abs() <= 0.005 + 1e-9);
    }

    #[test]
    fn condensate_peak_grows_with_population() {
        let trap = TrapModel::experiment();
        let nc = critical_number(300.0, OMEGA).unwrap();
        let grid = wavelength_grid(550.0, 575.0, 2501).unwrap();
        let tail = grid.iter().position(|&l| l >= 560.0).unwrap();
        let peak = grid.iter().position(|&l| l >= 571.3).unwrap();
        let ratios: Vec<f64> = [0.1, 1.0, 10.0]
            .iter()
            .map(|f| {
                let s = spectrum_curve(&trap, f * nc, 0.3, &grid).unwrap();
                s.intensity[peak] / s.intensity[tail]
            })
            .collect();
        assert!(ratios[0] < ratios[1] && ratios[1] < ratios[2], "{ratios:?}");
    }

    #[test]
    fn refinement_does_not_move_values() {
        let trap = TrapModel::experiment();
        let coarse = wavelength_grid(560.0, 574.0, 141).unwrap();
        let fine = wavelength_grid(560.0, 574.0, 1401).unwrap();
        let a = spectrum_curve(&trap, 3e4, 0.4, &coarse).unwrap();
        let b = spectrum_curve(&trap, 3e4, 0.4, &fine).unwrap();
        for (i, v) in a.intensity.iter().enumerate() {
            assert!((v - b.intensity[10 * i]).abs() < 1e-4 * v.max(1e-3));
        }
    }

    #[test]
    fn grid_must_cover_cutoff() {
        let trap = TrapModel::experiment();
        let grid = wavelength_grid(540.0, 560.0, 100).unwrap();
        assert!(spectrum_curve(&trap, 10.0, 0.3, &grid).is_err());
    }

    #[test]
    fn fit_round_trips() {
        let trap = TrapModel::experiment();
        let nc = critical_number(300.0, OMEGA).unwrap();
        let grid = wavelength_grid(555.0, 574.0, 951).unwrap();
        for n in [nc, 0.2 * nc, 3.0 * nc] {
            let data = spectrum_curve(&trap, n, 0.3, &grid).unwrap();
            let f = fit_spectrum(&data, &trap).unwrap();
            assert!((f.n_condensate - n).abs() / n < 1e-6, "{} vs {n}", f.n_condensate);
            assert!((f.scale - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn noisy_fit_within_one_percent_and_monotone() {
        let trap = TrapModel::experiment();
        let grid = wavelength_grid(555.0, 574.0, 951).unwrap();
        let noise = Normal::new(0.0, 0.002).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut fitted = Vec::new();
        for n in [2e4, 6e4] {
            let mut data = spectrum_curve(&trap, n, 0.3, &grid).unwrap();
            data.intensity.iter_mut().for_each(|v| *v = 7.0 * *v + noise.sample(&mut rng));
            let f = fit_spectrum(&data, &trap).unwrap();
            assert!((f.n_condensate - n).abs() / n < 0.01, "{} vs {n}", f.n_condensate);
            fitted.push(f.n_condensate);
        }
        assert!(fitted[1] > fitted[0]);
    }

    #[test]
    fn csv_round_trip() {
        let s = SpectrumCurve { wavelength_nm: vec![570.0, 571.0], intensity: vec![0.5, 1.0], resolution_fwhm: 0.2 };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("wavelength_nm,intensity\n"));
        assert_eq!(SpectrumCurve::from_csv(&text, 0.2).unwrap(), s);
    }
}
