//! Multilevel emitter decay model: bulk transition rates, per-transition
//! Purcell/inhibition factors, the modified lifetime and branching they
//! produce, magnetically tuned lifetime curves, and Monte-Carlo ensembles
//! over dipole position and orientation.
//!
//! The excited state decays to eight ground levels Z1..Z8 with rates
//! A_i = A_total p_i. A structured photonic environment multiplies each
//! channel by its Purcell factor F_i, so the modified lifetime is
//! τ' = 1/Σ_i F_i A_i and the modified branching p'_i = F_i A_i / Σ F_j A_j.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bands::{GroupIndexCurve, TeMode};
use crate::ldos::LdosSpectrum;
use crate::{Error, Result, C_NM_PER_PS};

pub const N_LEVELS: usize = 8;

/// Ground-state crystal-field levels reachable from the lowest excited
/// level. Frequencies in THz; `z_offsets[0]` is zero by convention (the
/// Z1 transition defines the reference).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelScheme {
    /// Frequency of the transition to Z1 (≈ 194.9 THz, 1538 nm).
    pub y1_frequency_thz: f64,
    /// Offsets of the Z1..Z8 transitions below the Z1 frequency, ascending,
    /// first entry 0.
    pub z_offsets_thz: [f64; N_LEVELS],
}

impl Default for LevelScheme {
    /// Z1 at 1538 nm; Z2..Z8 spread uniformly over 1550-1650 nm.
    fn default() -> Self {
        let y1 = C_NM_PER_PS / 1538.0;
        let mut z = [0.0; N_LEVELS];
        for (i, zi) in z.iter_mut().enumerate().skip(1) {
            let lambda = 1550.0 + (i - 1) as f64 * 100.0 / 6.0;
            *zi = y1 - C_NM_PER_PS / lambda;
        }
        LevelScheme {
            y1_frequency_thz: y1,
            z_offsets_thz: z,
        }
    }
}

impl LevelScheme {
    pub fn validate(&self) -> Result<()> {
        if self.z_offsets_thz[0] != 0.0 {
            return Err(Error::invalid("Z1 offset must be zero"));
        }
        for w in self.z_offsets_thz.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("Z offsets must be strictly increasing"));
            }
        }
        Ok(())
    }

    /// Transition frequency Y1 -> Zi (1-based level index).
    pub fn transition_thz(&self, level: usize) -> f64 {
        self.y1_frequency_thz - self.z_offsets_thz[level - 1]
    }
}

/// Branching probabilities into Z1..Z8bulk (must sum to 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchingTable {
    pub p: [f64; N_LEVELS],
}

impl BranchingTable {
    pub fn new(p: [f64; N_LEVELS]) -> Result<Self> {
        let t = BranchingTable { p };
        t.validate()?;
        Ok(t)
    }

    /// p_Z1 from the bulk measurement, remainder split equally over Z2..Z8
    /// (the individual higher-level fractions are not known; the lifetime
    /// model depends only on their sum).
    pub fn with_z1(p_z1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_z1) {
            return Err(Error::invalid("p_Z1 must lie in [0, 1]"));
        }
        let rest = (1.0 - p_z1) / (N_LEVELS - 1) as f64;
        let mut p = [rest; N_LEVELS];
        p[0] = p_z1;
        Ok(BranchingTable { p })
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("branching fractions must be non-negative"));
        }
        let sum: f64 = self.p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "branching fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

impl Default for BranchingTable {
    /// Bulk branching of the paper device: p_Z1 = 23%.
    fn default() -> Self {
        BranchingTable::with_z1(0.23).unwrap()
    }
}

/// Per-transition decay rates in 1/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionRates {
    pub a_per_s: [f64; N_LEVELS],
    pub a_total_per_s: f64,
    pub tau_bulk_us: f64,
}

/// Per-transition Purcell (or inhibition) factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PurcellVector {
    pub f: [f64; N_LEVELS],
}

impl PurcellVector {
    pub fn uniform(f: f64) -> Self {
        PurcellVector { f: [f; N_LEVELS] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("Purcell factors must be non-negative"));
        }
        Ok(())
    }
}

/// A_total = 1/τ_bulk and A_i = A_total p_i.
pub fn rates_from_bulk(tau_bulk_us: f64, branching: &BranchingTable) -> Result<TransitionRates> {
    if !(tau_bulk_us > 0.0) {
        return Err(Error::invalid("bulk lifetime must be positive"));
    }
    branching.validate()?;
    let a_total = 1.0 / (tau_bulk_us * 1e-6);
    let mut a = [0.0; N_LEVELS];
    for (ai, pi) in a.iter_mut().zip(&branching.p) {
        *ai = a_total * pi;
    }
    Ok(TransitionRates {
        a_per_s: a,
        a_total_per_s: a_total,
        tau_bulk_us,
    })
}

fn total_modified_rate(rates: &TransitionRates, purcell: &PurcellVector) -> Result<f64> {
    purcell.validate()?;
    let total: f64 = rates
        .a_per_s
        .iter()
        .zip(&purcell.f)
        .map(|(a, f)| a * f)
        .sum();
    if total <= 0.0 {
        return Err(Error::invalid(
            "all decay channels are closed (no radiative decay)",
        ));
    }
    Ok(total)
}

/// Modified lifetime τ' = 1/Σ F_i A_i in µs.
pub fn modified_lifetime(rates: &TransitionRates, purcell: &PurcellVector) -> Result<f64> {
    Ok(1e6 / total_modified_rate(rates, purcell)?)
}

/// Modified branching p'_i = F_i A_i / Σ F_j A_j.
pub fn modified_branching(rates: &TransitionRates, purcell: &PurcellVector) -> Result<BranchingTable> {
    let total = total_modified_rate(rates, purcell)?;
    let mut p = [0.0; N_LEVELS];
    for i in 0..N_LEVELS {
        p[i] = rates.a_per_s[i] * purcell.f[i] / total;
    }
    Ok(BranchingTable { p })
}

/// Maximum slow-light Purcell factor of an optimally placed and oriented
/// dipole in a W1 waveguide, with the standard effective mode volume
/// V_eff = a (λ/n)²/3: the general formula collapses to F = 9 n_g / (4π n).
pub fn purcell_max(ng: f64, n: f64) -> f64 {
    9.0 * ng / (4.0 * std::f64::consts::PI * n)
}

/// General form F = (3/(4πn)) (λ²/n²)/(V_eff/a) n_g with an explicit
/// effective mode volume in nm³.
pub fn purcell_max_with_veff(ng: f64, n: f64, lambda_nm: f64, a_nm: f64, v_eff_nm3: f64) -> f64 {
    (3.0 / (4.0 * std::f64::consts::PI * n)) * (lambda_nm * lambda_nm / (n * n))
        / (v_eff_nm3 / a_nm)
        * ng
}

/// A single emitter with its position, dipole orientation (unit 3-vector),
/// static detuning from the inhomogeneous center, and spectral diffusion
/// linewidth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmitterInstance {
    pub position_nm: (f64, f64),
    pub dipole: [f64; 3],
    pub detuning_ghz: f64,
    pub spectral_diffusion_fwhm_mhz: f64,
}

impl EmitterInstance {
    pub fn validate(&self) -> Result<()> {
        let norm = self.dipole.iter().map(|d| d * d).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("dipole orientation must be a unit vector"));
        }
        if self.spectral_diffusion_fwhm_mhz < 0.0 {
            return Err(Error::invalid("spectral diffusion width must be >= 0"));
        }
        Ok(())
    }
}

/// In-plane guided-mode profile used to evaluate the position and
/// orientation dependence of the Z1 enhancement.
#[derive(Debug, Clone)]
pub struct ModeProfile {
    pub nx: usize,
    pub ny: usize,
    pub dx_nm: f64,
    pub dy_nm: f64,
    pub origin_nm: (f64, f64),
    pub ex: Vec<Complex64>,
    pub ey: Vec<Complex64>,
    max_intensity: f64,
}

impl ModeProfile {
    pub fn new(
        nx: usize,
        ny: usize,
        dx_nm: f64,
        dy_nm: f64,
        origin_nm: (f64, f64),
        ex: Vec<Complex64>,
        ey: Vec<Complex64>,
    ) -> Result<Self> {
        if ex.len() != nx * ny || ey.len() != nx * ny {
            return Err(Error::invalid("field arrays do not match grid dimensions"));
        }
        let max_intensity = ex
            .iter()
            .zip(&ey)
            .map(|(x, y)| x.norm_sqr() + y.norm_sqr())
            .fold(0.0f64, f64::max);
        if max_intensity <= 0.0 {
            return Err(Error::invalid("mode profile is identically zero"));
        }
        Ok(ModeProfile {
            nx,
            ny,
            dx_nm,
            dy_nm,
            origin_nm,
            ex,
            ey,
            max_intensity,
        })
    }

    pub fn from_te_mode(mode: &TeMode) -> Result<Self> {
        ModeProfile::new(
            mode.nx,
            mode.ny,
            mode.dx_nm,
            mode.dy_nm,
            mode.origin_nm,
            mode.ex.clone(),
            mode.ey.clone(),
        )
    }

    /// Cosine-squared toy profile with Ey even about the axis and Ex odd;
    /// useful for closed-form checks.
    pub fn synthetic_cosine(nx: usize, ny: usize, dx_nm: f64, dy_nm: f64) -> Self {
        let origin = (0.0, -0.5 * ny as f64 * dy_nm);
        let height = ny as f64 * dy_nm;
        let mut ex = vec![Complex64::default(); nx * ny];
        let mut ey = vec![Complex64::default(); nx * ny];
        for iy in 0..ny {
            let y = origin.1 + (iy as f64 + 0.5) * dy_nm;
            let t = std::f64::consts::PI * y / height;
            for ix in 0..nx {
                let x = (ix as f64 + 0.5) / nx as f64;
                let phase = std::f64::consts::TAU * x;
                ey[iy * nx + ix] = Complex64::new(t.cos() * t.cos() * phase.cos(), 0.0);
                ex[iy * nx + ix] = Complex64::new(0.5 * (2.0 * t).sin() * phase.sin(), 0.0);
            }
        }
        ModeProfile::new(nx, ny, dx_nm, dy_nm, origin, ex, ey).unwrap()
    }

    fn interp(&self, field: &[Complex64], x: f64, y: f64) -> Option<Complex64> {
        let fx = (x - self.origin_nm.0) / self.dx_nm - 0.5;
        let fy = (y - self.origin_nm.1) / self.dy_nm - 0.5;
        // periodic in x (one waveguide period), clamped in y
        let nx = self.nx as f64;
        let fx = fx.rem_euclid(nx);
        if fy < -0.5 || fy > self.ny as f64 - 0.5 {
            return None;
        }
        let fy = fy.clamp(0.0, self.ny as f64 - 1.0);
        let ix0 = fx.floor() as usize % self.nx;
        let ix1 = (ix0 + 1) % self.nx;
        let iy0 = fy.floor() as usize;
        let iy1 = (iy0 + 1).min(self.ny - 1);
        let tx = fx - fx.floor();
        let ty = fy - fy.floor();
        let f00 = field[iy0 * self.nx + ix0];
        let f10 = field[iy0 * self.nx + ix1];
        let f01 = field[iy1 * self.nx + ix0];
        let f11 = field[iy1 * self.nx + ix1];
        Some(f00 * (1.0 - tx) * (1.0 - ty) + f10 * tx * (1.0 - ty) + f01 * (1.0 - tx) * ty + f11 * tx * ty)
    }

    /// Normalized coupling |ê·E(r)|² / max|E|² for an in-plane projection of
    /// the dipole; the out-of-plane component does not couple to the TE
    /// guided mode.
    pub fn coupling(&self, position_nm: (f64, f64), dipole: &[f64; 3]) -> Result<f64> {
        let ex = self
            .interp(&self.ex, position_nm.0, position_nm.1)
            .ok_or_else(|| Error::invalid("position outside the mode profile"))?;
        let ey = self.interp(&self.ey, position_nm.0, position_nm.1).unwrap();
        let proj = ex * dipole[0] + ey * dipole[1];
        Ok(proj.norm_sqr() / self.max_intensity)
    }

    /// Position of the in-plane intensity maximum.
    pub fn max_position(&self) -> (f64, f64) {
        let mut best = (0usize, 0.0f64);
        for (idx, (x, y)) in self.ex.iter().zip(&self.ey).enumerate() {
            let v = x.norm_sqr() + y.norm_sqr();
            if v > best.1 {
                best = (idx, v);
            }
        }
        (
            self.origin_nm.0 + ((best.0 % self.nx) as f64 + 0.5) * self.dx_nm,
            self.origin_nm.1 + ((best.0 / self.nx) as f64 + 0.5) * self.dy_nm,
        )
    }
}

/// Purcell factor of one emitter: F = F_max |ê·E(r)|² / max|E|².
pub fn purcell_at(instance: &EmitterInstance, profile: &ModeProfile, f_max: f64) -> Result<f64> {
    instance.validate()?;
    Ok(f_max * profile.coupling(instance.position_nm, &instance.dipole)?)
}

/// Inhibition factors for the Z2..Z8 transitions: the normalized LDOS
/// evaluated at each transition frequency (F for Z1 is set separately from
/// the slow-light model and left at 1 here).
pub fn inhibition_vector(spectrum: &LdosSpectrum, scheme: &LevelScheme) -> Result<PurcellVector> {
    scheme.validate()?;
    let mut f = [1.0; N_LEVELS];
    for level in 2..=N_LEVELS {
        let nu = scheme.transition_thz(level);
        f[level - 1] = spectrum.rho_at(nu).map_err(|_| {
            Error::invalid(format!(
                "LDOS spectrum does not cover the Y1->Z{level} transition at {nu:.2} THz"
            ))
        })?;
    }
    Ok(PurcellVector { f })
}

/// Position/orientation-averaged variant over several scan spectra.
pub fn inhibition_vector_averaged(
    spectra: &[LdosSpectrum],
    scheme: &LevelScheme,
) -> Result<PurcellVector> {
    if spectra.is_empty() {
        return Err(Error::invalid("no spectra to average"));
    }
    let mut acc = [0.0; N_LEVELS];
    for s in spectra {
        let v = inhibition_vector(s, scheme)?;
        for i in 0..N_LEVELS {
            acc[i] += v.f[i];
        }
    }
    for a in &mut acc {
        *a /= spectra.len() as f64;
    }
    Ok(PurcellVector { f: acc })
}

/// Magnetic tuning model: linear Zeeman shift of the Z1 transition. The
/// coefficient is a placeholder configuration value, not a measured one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeemanModel {
    pub tuning_coefficient_ghz_per_t: f64,
    pub field_max_t: f64,
}

impl Default for ZeemanModel {
    fn default() -> Self {
        ZeemanModel {
            tuning_coefficient_ghz_per_t: 33.0,
            field_max_t: 3.0,
        }
    }
}

impl ZeemanModel {
    pub fn detuning_ghz(&self, field_t: f64) -> Result<f64> {
        if field_t < 0.0 || field_t > self.field_max_t {
            return Err(Error::invalid(format!(
                "field {field_t} T outside 0..{} T",
                self.field_max_t
            )));
        }
        Ok(self.tuning_coefficient_ghz_per_t * field_t)
    }
}

/// Lifetime versus emission frequency as the Z1 transition is tuned across
/// the slow-light region: τ'(ν) = 1/(s F_max(n_g(ν)) A_1 + Σ_{i≥2} F_i A_i)
/// with the spatial factor s and the inhibition factors held constant.
pub fn zeeman_lifetime_curve(
    ng_curve: &GroupIndexCurve,
    rates: &TransitionRates,
    inhibition: &PurcellVector,
    spatial_factor: f64,
    n_slab: f64,
    nu_range_thz: (f64, f64),
    n_points: usize,
) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    if spatial_factor < 0.0 {
        return Err(Error::invalid("spatial factor must be >= 0"));
    }
    let rest_rate: f64 = rates
        .a_per_s
        .iter()
        .zip(&inhibition.f)
        .skip(1)
        .map(|(a, f)| a * f)
        .sum();
    let mut out = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let nu = nu_range_thz.0 + (nu_range_thz.1 - nu_range_thz.0) * i as f64 / (n_points - 1) as f64;
        let ng = ng_curve.ng_at(nu).map_err(|_| {
            Error::invalid(format!("ν = {nu:.3} THz outside the group-index curve"))
        })?;
        let z1_rate = spatial_factor * purcell_max(ng, n_slab) * rates.a_per_s[0];
        let total = z1_rate + rest_rate;
        if total <= 0.0 {
            return Err(Error::invalid("no radiative decay at requested frequency"));
        }
        out.push((nu, 1e6 / total));
    }
    Ok(out)
}

/// One sampled emitter of an ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleEmitter {
    pub instance: EmitterInstance,
    pub f_z1: f64,
    pub tau_us: f64,
    pub p_z1: f64,
}

/// Summary statistics of an ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub mean_tau_us: f64,
    pub sd_tau_us: f64,
    pub skewness: f64,
    pub mean_p_z1: f64,
    pub histogram_edges_us: Vec<f64>,
    pub histogram_counts: Vec<usize>,
}

/// Region emitters are implanted into, spanning full waveguide periods in x.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingRegion {
    pub x_range_nm: (f64, f64),
    pub y_range_nm: (f64, f64),
}

/// Sample `n` emitters with uniform positions in the region and dipole
/// orientations uniform on the sphere; per-emitter lifetimes and branching
/// from the closed-form model with F_Z1 = F_max·coupling. Per-emitter RNG
/// streams make the result independent of evaluation order.
pub fn sample_ensemble(
    n: usize,
    profile: &ModeProfile,
    region: &SamplingRegion,
    f_max: f64,
    rates: &TransitionRates,
    inhibition: &PurcellVector,
    inhomogeneous_sd_ghz: f64,
    diffusion_fwhm_mhz: f64,
    seed: u64,
) -> Result<(Vec<EnsembleEmitter>, EnsembleSummary)> {
    if n == 0 {
        return Err(Error::invalid("ensemble size must be >= 1"));
    }
    let mut emitters = Vec::with_capacity(n);
    for idx in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64 + 1);
        let x = rng.gen_range(region.x_range_nm.0..region.x_range_nm.1);
        let y = rng.gen_range(region.y_range_nm.0..region.y_range_nm.1);
        // uniform on the sphere
        let z: f64 = rng.gen_range(-1.0..1.0f64);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        let dipole = [s * phi.cos(), s * phi.sin(), z];
        let detuning = inhomogeneous_sd_ghz * normal_draw(&mut rng);
        let instance = EmitterInstance {
            position_nm: (x, y),
            dipole,
            detuning_ghz: detuning,
            spectral_diffusion_fwhm_mhz: diffusion_fwhm_mhz,
        };
        let f_z1 = purcell_at(&instance, profile, f_max)?;
        let mut purcell = inhibition.clone();
        purcell.f[0] = f_z1;
        let tau = modified_lifetime(rates, &purcell)?;
        let p_z1 = modified_branching(rates, &purcell)?.p[0];
        emitters.push(EnsembleEmitter {
            instance,
            f_z1,
            tau_us: tau,
            p_z1,
        });
    }
    let summary = summarize(&emitters);
    Ok((emitters, summary))
}

fn normal_draw<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn summarize(emitters: &[EnsembleEmitter]) -> EnsembleSummary {
    let n = emitters.len() as f64;
    let mean = emitters.iter().map(|e| e.tau_us).sum::<f64>() / n;
    let var = emitters.iter().map(|e| (e.tau_us - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let skew = if sd > 0.0 {
        emitters.iter().map(|e| ((e.tau_us - mean) / sd).powi(3)).sum::<f64>() / n
    } else {
        0.0
    };
    let mean_p = emitters.iter().map(|e| e.p_z1).sum::<f64>() / n;
    let lo = emitters.iter().map(|e| e.tau_us).fold(f64::INFINITY, f64::min);
    let hi = emitters.iter().map(|e| e.tau_us).fold(0.0f64, f64::max);
    let n_bins = 30;
    let width = ((hi - lo) / n_bins as f64).max(1e-9);
    let mut counts = vec![0usize; n_bins];
    for e in emitters {
        let b = (((e.tau_us - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let edges = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    EnsembleSummary {
        mean_tau_us: mean,
        sd_tau_us: sd,
        skewness: skew,
        mean_p_z1: mean_p,
        histogram_edges_us: edges,
        histogram_counts: counts,
    }
}

/// Monte-Carlo estimate of the position/orientation-averaged coupling
/// ⟨|ê·E|²⟩/max|E|², the spatial factor applied to the Z1 enhancement.
pub fn estimate_spatial_factor(
    profile: &ModeProfile,
    region: &SamplingRegion,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let mut acc = 0.0;
    for idx in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64 + 1);
        let x = rng.gen_range(region.x_range_nm.0..region.x_range_nm.1);
        let y = rng.gen_range(region.y_range_nm.0..region.y_range_nm.1);
        let z: f64 = rng.gen_range(-1.0..1.0f64);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        let dipole = [s * phi.cos(), s * phi.sin(), z];
        acc += profile.coupling((x, y), &dipole)?;
    }
    Ok(acc / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn paper_rates() -> TransitionRates {
        rates_from_bulk(142.0, &BranchingTable::default()).unwrap()
    }

    #[test]
    fn default_level_scheme_is_sane() {
        let s = LevelScheme::default();
        s.validate().unwrap();
        assert_relative_eq!(s.y1_frequency_thz, 194.92, epsilon = 0.01);
        for level in 2..=8 {
            let lambda = C_NM_PER_PS / s.transition_thz(level);
            assert!((1550.0..=1650.0).contains(&lambda), "Z{level} at {lambda} nm");
        }
    }

    #[test]
    fn rates_from_bulk_matches_paper_numbers() {
        let r = paper_rates();
        assert_relative_eq!(r.a_total_per_s, 7042.25, epsilon = 0.01);
        assert_relative_eq!(r.a_per_s[0], 0.23 / 142e-6, max_relative = 1e-12);
        // single-channel and uniform branchings
        let single = rates_from_bulk(100.0, &BranchingTable::new({
            let mut p = [0.0; N_LEVELS];
            p[0] = 1.0;
            p
        }).unwrap())
        .unwrap();
        assert_relative_eq!(single.a_per_s[0], single.a_total_per_s);
        let uniform = rates_from_bulk(100.0, &BranchingTable::new([1.0 / 8.0; N_LEVELS]).unwrap()).unwrap();
        for a in uniform.a_per_s {
            assert_relative_eq!(a, uniform.a_total_per_s / 8.0);
        }
    }

    #[test]
    fn unnormalized_branching_rejected() {
        let mut p = [0.1; N_LEVELS];
        p[0] = 0.5; // sums to 1.2
        assert!(BranchingTable::new(p).is_err());
        assert!(rates_from_bulk(142.0, &BranchingTable { p }).is_err());
    }

    #[test]
    fn bulk_fixed_point() {
        let r = paper_rates();
        let f1 = PurcellVector::uniform(1.0);
        assert_relative_eq!(modified_lifetime(&r, &f1).unwrap(), 142.0, max_relative = 1e-12);
        let p = modified_branching(&r, &f1).unwrap();
        for (a, b) in p.p.iter().zip(&BranchingTable::default().p) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn z1_only_channel_gives_617us() {
        let r = paper_rates();
        let mut f = PurcellVector::uniform(0.0);
        f.f[0] = 1.0;
        let tau = modified_lifetime(&r, &f).unwrap();
        assert_relative_eq!(tau, 142.0 / 0.23, max_relative = 1e-12); // ≈ 617.4 µs
        let p = modified_branching(&r, &f).unwrap();
        assert_relative_eq!(p.p[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn balanced_enhancement_recovers_bulk_lifetime() {
        // F1 solving F1·0.23 + 0.1·0.77 = 1
        let r = paper_rates();
        let f1 = (1.0 - 0.1 * 0.77) / 0.23;
        assert_relative_eq!(f1, 4.0130434782608695, max_relative = 1e-12);
        let mut f = PurcellVector::uniform(0.1);
        f.f[0] = f1;
        assert_relative_eq!(modified_lifetime(&r, &f).unwrap(), 142.0, max_relative = 1e-9);
        let p = modified_branching(&r, &f).unwrap();
        assert_relative_eq!(p.p[0], 0.923, epsilon = 5e-4);
        assert_relative_eq!(p.p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lifetime_consistency_identity() {
        let r = paper_rates();
        let f = PurcellVector {
            f: [2.0, 0.3, 0.1, 0.05, 0.4, 0.9, 1.3, 0.0],
        };
        let tau_s = modified_lifetime(&r, &f).unwrap() * 1e-6;
        let total: f64 = r.a_per_s.iter().zip(&f.f).map(|(a, g)| a * g).sum();
        assert_relative_eq!(tau_s * total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn monotonicity_in_single_factor() {
        let r = paper_rates();
        let base = PurcellVector::uniform(0.5);
        let tau0 = modified_lifetime(&r, &base).unwrap();
        let p0 = modified_branching(&r, &base).unwrap().p[2];
        let mut up = base.clone();
        up.f[2] *= 2.0;
        let tau1 = modified_lifetime(&r, &up).unwrap();
        let p1 = modified_branching(&r, &up).unwrap().p[2];
        assert!(tau1 < tau0);
        assert!(p1 > p0);
    }

    #[test]
    fn all_channels_closed_is_error() {
        let r = paper_rates();
        assert!(modified_lifetime(&r, &PurcellVector::uniform(0.0)).is_err());
    }

    #[test]
    fn purcell_max_values() {
        // bulk-like n_g = n: the waveguide coupling factor 9/(4π)
        assert_relative_eq!(purcell_max(3.45, 3.45) / 1.0, 9.0 / (4.0 * std::f64::consts::PI), max_relative = 1e-12);
        // paper numbers: n_g = 140, n = 3.45
        assert_relative_eq!(purcell_max(140.0, 3.45), 29.063, epsilon = 1e-3);
        // linearity
        assert_relative_eq!(purcell_max(280.0, 3.45), 2.0 * purcell_max(140.0, 3.45), max_relative = 1e-12);
        // general formula with the stated V_eff collapses to the reduced one
        let (lambda, a, n) = (1538.0, 420.0, 3.45);
        let v_eff = a * (lambda / n) * (lambda / n) / 3.0;
        assert_relative_eq!(
            purcell_max_with_veff(77.0, n, lambda, a, v_eff),
            purcell_max(77.0, n),
            max_relative = 1e-12
        );
    }

    /// Real in-plane unit vector along the field at a point (fields of the
    /// synthetic profile are real).
    fn in_plane_field_direction(profile: &ModeProfile, pos: (f64, f64)) -> [f64; 3] {
        let fx = (pos.0 - profile.origin_nm.0) / profile.dx_nm - 0.5;
        let fy = (pos.1 - profile.origin_nm.1) / profile.dy_nm - 0.5;
        let ix = fx.round() as usize % profile.nx;
        let iy = (fy.round() as usize).min(profile.ny - 1);
        let ex = profile.ex[iy * profile.nx + ix].re;
        let ey = profile.ey[iy * profile.nx + ix].re;
        let n = ex.hypot(ey);
        [ex / n, ey / n, 0.0]
    }

    #[test]
    fn purcell_at_geometry_limits() {
        let profile = ModeProfile::synthetic_cosine(16, 64, 10.0, 10.0);
        let peak = profile.max_position();
        // dipole parallel to the local field at the intensity maximum
        // -> full F_max
        let dipole = in_plane_field_direction(&profile, peak);
        let inst = EmitterInstance {
            position_nm: peak,
            dipole,
            detuning_ghz: 0.0,
            spectral_diffusion_fwhm_mhz: 20.0,
        };
        let f = purcell_at(&inst, &profile, 7.0).unwrap();
        assert_relative_eq!(f, 7.0, max_relative = 1e-6);
        // perpendicular (out-of-plane) dipole -> zero coupling
        let inst_z = EmitterInstance {
            dipole: [0.0, 0.0, 1.0],
            ..inst.clone()
        };
        assert_relative_eq!(purcell_at(&inst_z, &profile, 7.0).unwrap(), 0.0);
        // dipole perpendicular to the local field -> exactly zero
        let perp = [-dipole[1], dipole[0], 0.0];
        let inst_perp = EmitterInstance { dipole: perp, ..inst };
        assert!(purcell_at(&inst_perp, &profile, 7.0).unwrap() < 1e-24);
    }

    #[test]
    fn inhibition_vector_reads_spectrum() {
        let scheme = LevelScheme::default();
        let nu: Vec<f64> = (0..200).map(|i| 175.0 + 25.0 * i as f64 / 199.0).collect();
        let flat = LdosSpectrum {
            rho_rel: vec![1.0; nu.len()],
            nu_thz: nu.clone(),
            position_nm: (0.0, 0.0),
            orientation: crate::ldos::DipoleOrientation::Y,
            normalized: true,
            filtered: true,
            residual_warning: false,
            approximate_polarization: false,
            clamped_points: 0,
        };
        let v = inhibition_vector(&flat, &scheme).unwrap();
        for f in v.f {
            assert_relative_eq!(f, 1.0);
        }
        // spectrum not covering the transitions errors with the level name
        let short = LdosSpectrum {
            nu_thz: nu.iter().map(|n| n + 30.0).collect(),
            ..flat
        };
        let err = inhibition_vector(&short, &scheme).unwrap_err();
        assert!(err.to_string().contains("Z"), "{err}");
    }

    #[test]
    fn zeeman_curve_limits() {
        let rates = paper_rates();
        let inhibition = PurcellVector::uniform(0.3);
        // reciprocal-model group index over a small band
        let nu: Vec<f64> = (0..50).map(|i| 193.0 + 0.05 * i as f64).collect();
        let ng: Vec<f64> = nu.iter().map(|v| 4000.0 / (v - 192.0)).collect();
        let curve = GroupIndexCurve {
            nu_thz: nu.clone(),
            ng,
            omitted_nu_thz: vec![],
        };
        // spatial factor 0 -> constant lifetime
        let flat = zeeman_lifetime_curve(&curve, &rates, &inhibition, 0.0, 2.85, (193.2, 195.0), 10).unwrap();
        let t0 = flat[0].1;
        for (_, t) in &flat {
            assert_relative_eq!(*t, t0, max_relative = 1e-12);
        }
        // doubling the spatial factor strictly decreases the lifetime
        let a = zeeman_lifetime_curve(&curve, &rates, &inhibition, 0.217, 2.85, (193.2, 195.0), 10).unwrap();
        let b = zeeman_lifetime_curve(&curve, &rates, &inhibition, 0.434, 2.85, (193.2, 195.0), 10).unwrap();
        for ((_, ta), (_, tb)) in a.iter().zip(&b) {
            assert!(tb < ta);
        }
        // reciprocal n_g -> lifetime approximately linear in ν, and
        // monotone decreasing toward the band edge trend direction
        let lin = zeeman_lifetime_curve(&curve, &rates, &inhibition, 0.217, 2.85, (193.4, 194.6), 25).unwrap();
        let n = lin.len() as f64;
        let mx = lin.iter().map(|p| p.0).sum::<f64>() / n;
        let my = lin.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = lin.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / lin.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let mut worst = 0.0f64;
        for (x, y) in &lin {
            let fitted = my + slope * (x - mx);
            worst = worst.max(((y - fitted) / y).abs());
        }
        assert!(worst < 0.02, "lifetime vs ν deviates from a line by {worst}");
        assert!(slope > 0.0, "τ' increases with ν away from the band edge");
    }

    #[test]
    fn ensemble_degenerate_matches_closed_form() {
        let profile = ModeProfile::synthetic_cosine(16, 64, 10.0, 10.0);
        let rates = paper_rates();
        let inhibition = PurcellVector::uniform(0.3);
        let peak = profile.max_position();
        // a degenerate "ensemble" pinned to the maximum with an aligned
        // dipole reduces to the closed-form model
        let inst = EmitterInstance {
            position_nm: peak,
            dipole: in_plane_field_direction(&profile, peak),
            detuning_ghz: 0.0,
            spectral_diffusion_fwhm_mhz: 20.0,
        };
        let f_max = 5.0;
        let f_z1 = purcell_at(&inst, &profile, f_max).unwrap();
        let mut pv = inhibition.clone();
        pv.f[0] = f_z1;
        let tau_direct = modified_lifetime(&rates, &pv).unwrap();
        assert_relative_eq!(f_z1, f_max, max_relative = 1e-6);
        assert!(tau_direct > 0.0);
    }

    #[test]
    fn ensemble_is_deterministic_and_summarized() {
        let profile = ModeProfile::synthetic_cosine(16, 64, 10.0, 26.0);
        let rates = paper_rates();
        let inhibition = PurcellVector::uniform(0.3);
        let region = SamplingRegion {
            x_range_nm: (0.0, 160.0),
            y_range_nm: (-300.0, 300.0),
        };
        let (e1, s1) = sample_ensemble(500, &profile, &region, 8.0, &rates, &inhibition, 1.0, 25.0, 42).unwrap();
        let (e2, _) = sample_ensemble(500, &profile, &region, 8.0, &rates, &inhibition, 1.0, 25.0, 42).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            assert_eq!(a.tau_us.to_bits(), b.tau_us.to_bits());
        }
        assert!(s1.mean_tau_us > 0.0);
        assert_eq!(s1.histogram_counts.iter().sum::<usize>(), 500);
    }
}
