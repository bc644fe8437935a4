//! Local-density-of-states spectra from 2D FDTD.
//!
//! A dipole source is driven at a point, the radiated power is accumulated
//! on the fly as -Re[E(ν)·J*(ν)]/|J(ν)|² at the source pixel, and the raw
//! spectrum is normalized against the same run in a uniform slab map. In the
//! band gap, where very little power radiates, finite-run spectra carry
//! high-frequency oscillation artifacts; the zero-phase Butterworth
//! post-filter removes them.
//!
//! In-plane (x, y) dipoles use the TE polarization. 2D TE cannot host an
//! out-of-plane E, so z dipoles fall back to the scalar TM polarization of
//! the same permittivity map and are flagged as an approximate polarization
//! model.

pub mod fdtd;
pub mod filter;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::EpsilonMap;
use crate::{Error, Result, C_NM_PER_PS};

use fdtd::{Boundary, BoundarySet, DftAccumulator, FdtdTe, FdtdTm, RunControl, SourceWaveform, TeComponent};
pub use filter::{design_butterworth2, filtfilt, Biquad, FILTFILT_PAD};

/// Numerical parameters of an FDTD LDOS run. Grid spacing comes from the
/// permittivity map itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdtdConfig {
    /// Courant factor; stability requires <= 1/√2 in 2D.
    pub courant: f64,
    /// Run-time budget after which the residual-energy criterion gives up,
    /// in optical periods of the source center frequency.
    pub max_run_time_periods: f64,
    /// PML thickness in cells (>= 8).
    pub pml_cells: usize,
    /// Full source bandwidth (20 dB amplitude) as a fraction of the center
    /// frequency; the spectrum covers exactly this band.
    pub source_bandwidth: f64,
    /// Number of frequency bins across the source band.
    pub n_freq: usize,
    /// Stop once the field energy falls below this fraction of its peak.
    pub residual_energy_threshold: f64,
}

impl Default for FdtdConfig {
    fn default() -> Self {
        FdtdConfig {
            courant: 0.5,
            max_run_time_periods: 1500.0,
            pml_cells: 12,
            source_bandwidth: 0.35,
            n_freq: 240,
            residual_energy_threshold: 1e-6,
        }
    }
}

impl FdtdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.courant > 0.0 && self.courant <= std::f64::consts::FRAC_1_SQRT_2 + 1e-12) {
            return Err(Error::invalid("courant must lie in (0, 1/√2]"));
        }
        if self.pml_cells < 8 {
            return Err(Error::invalid("pml_cells must be >= 8"));
        }
        if self.n_freq < FILTFILT_PAD + 1 {
            return Err(Error::invalid("n_freq too small for the post-filter"));
        }
        if !(self.source_bandwidth > 0.0 && self.source_bandwidth < 2.0) {
            return Err(Error::invalid("source_bandwidth must be a positive fraction"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DipoleOrientation {
    X,
    Y,
    /// Out-of-plane; computed in the scalar TM model.
    Z,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DipoleSource {
    /// Position in nm relative to the map origin.
    pub position_nm: (f64, f64),
    pub orientation: DipoleOrientation,
    pub center_frequency_thz: f64,
}

/// LDOS spectrum of one dipole, raw or normalized to bulk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdosSpectrum {
    pub nu_thz: Vec<f64>,
    /// ρ(ν)/ρ_bulk once normalized; unnormalized radiated-power estimate
    /// before that (see `normalized`).
    pub rho_rel: Vec<f64>,
    pub position_nm: (f64, f64),
    pub orientation: DipoleOrientation,
    pub normalized: bool,
    pub filtered: bool,
    /// Residual energy stayed above threshold: finite-run-time artifacts
    /// are expected in low-LDOS regions.
    pub residual_warning: bool,
    /// z-dipole spectra are computed in the scalar TM polarization.
    pub approximate_polarization: bool,
    /// Number of points clamped to zero by the post-filter.
    pub clamped_points: usize,
}

impl LdosSpectrum {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "nu_THz,rho_rel")?;
        for (nu, r) in self.nu_thz.iter().zip(&self.rho_rel) {
            writeln!(w, "{nu},{r}")?;
        }
        Ok(())
    }

    pub fn rho_at(&self, nu_thz: f64) -> Result<f64> {
        crate::numeric::interp_linear(&self.nu_thz, &self.rho_rel, nu_thz)
    }
}

fn frequency_grid(source: &DipoleSource, cfg: &FdtdConfig) -> Vec<f64> {
    let nu0 = source.center_frequency_thz;
    let half = 0.5 * cfg.source_bandwidth * nu0;
    (0..cfg.n_freq)
        .map(|i| nu0 - half + 2.0 * half * i as f64 / (cfg.n_freq - 1) as f64)
        .collect()
}

fn time_step(map: &EpsilonMap, courant: f64) -> f64 {
    // stability: c dt sqrt(1/dx² + 1/dy²) <= 1; courant = 1/√2 saturates it
    // and dt = courant·dx on square grids
    let inv = (1.0 / (map.dx_nm * map.dx_nm) + 1.0 / (map.dy_nm * map.dy_nm)).sqrt();
    courant * std::f64::consts::SQRT_2 / inv
}

/// Run one FDTD LDOS simulation and return the raw (unnormalized,
/// unfiltered) spectrum over the source's 20 dB band.
pub fn run_fdtd_ldos(device: &EpsilonMap, source: &DipoleSource, cfg: &FdtdConfig) -> Result<LdosSpectrum> {
    run_fdtd_ldos_bounded(device, source, cfg, BoundarySet::all_pml())
}

/// As [`run_fdtd_ldos`] with explicit boundary conditions (PEC walls are
/// used by the parallel-mirror validation cavity).
pub fn run_fdtd_ldos_bounded(
    device: &EpsilonMap,
    source: &DipoleSource,
    cfg: &FdtdConfig,
    bounds: BoundarySet,
) -> Result<LdosSpectrum> {
    cfg.validate()?;
    let dt = time_step(device, cfg.courant);
    let waveform = SourceWaveform::from_bandwidth(source.center_frequency_thz, cfg.source_bandwidth * source.center_frequency_thz);
    let period = C_NM_PER_PS / source.center_frequency_thz; // nm of light travel
    let max_steps = ((cfg.max_run_time_periods * period) / dt).ceil() as usize;
    let ctrl = RunControl {
        dt,
        max_steps,
        source_off: waveform.off_after(),
        residual_threshold: cfg.residual_energy_threshold,
        check_interval: 64,
    };
    let mut dft = DftAccumulator::new(frequency_grid(source, cfg));
    let (x, y) = (
        source.position_nm.0 - device.origin_nm.0,
        source.position_nm.1 - device.origin_nm.1,
    );
    let diag = match source.orientation {
        DipoleOrientation::X | DipoleOrientation::Y => {
            let comp = if source.orientation == DipoleOrientation::X {
                TeComponent::Ex
            } else {
                TeComponent::Ey
            };
            let mut engine = FdtdTe::new(device, dt, cfg.pml_cells, bounds);
            let idx = engine.source_index(x, y, comp)?;
            engine.run_ldos(comp, idx, &waveform, &mut dft, &ctrl)?
        }
        DipoleOrientation::Z => {
            let mut engine = FdtdTm::new(device, dt, cfg.pml_cells, bounds);
            let idx = engine.source_index(x, y)?;
            engine.run_ldos(idx, &waveform, &mut dft, &ctrl)?
        }
    };
    Ok(LdosSpectrum {
        nu_thz: dft.nu_thz.clone(),
        rho_rel: dft.ldos(),
        position_nm: source.position_nm,
        orientation: source.orientation,
        normalized: false,
        filtered: false,
        residual_warning: diag.residual_warning,
        approximate_polarization: source.orientation == DipoleOrientation::Z,
        clamped_points: 0,
    })
}

/// Pointwise ratio of a device spectrum to the bulk reference computed on an
/// identical frequency grid.
pub fn normalize_to_bulk(raw: &LdosSpectrum, bulk: &LdosSpectrum) -> Result<LdosSpectrum> {
    if raw.nu_thz.len() != bulk.nu_thz.len()
        || raw
            .nu_thz
            .iter()
            .zip(&bulk.nu_thz)
            .any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
    {
        return Err(Error::invalid("frequency grids differ between raw and bulk spectra"));
    }
    let mut rho = Vec::with_capacity(raw.rho_rel.len());
    for (i, (&r, &b)) in raw.rho_rel.iter().zip(&bulk.rho_rel).enumerate() {
        if b <= 0.0 {
            return Err(Error::numerical(format!(
                "bulk LDOS non-positive at ν = {:.3} THz; bulk run invalid",
                bulk.nu_thz[i]
            )));
        }
        rho.push(r / b);
    }
    Ok(LdosSpectrum {
        nu_thz: raw.nu_thz.clone(),
        rho_rel: rho,
        normalized: true,
        filtered: raw.filtered,
        residual_warning: raw.residual_warning || bulk.residual_warning,
        ..raw.clone()
    })
}

/// Apply the zero-phase second-order Butterworth lowpass (cutoff 0.2 of the
/// Nyquist frequency of the spectral sampling) to the spectrum and clamp
/// negative excursions to zero.
pub fn butterworth_postfilter(spec: &LdosSpectrum) -> Result<LdosSpectrum> {
    butterworth_postfilter_with(spec, 0.2)
}

pub fn butterworth_postfilter_with(spec: &LdosSpectrum, cutoff_frac_nyquist: f64) -> Result<LdosSpectrum> {
    if spec.nu_thz.len() >= 2 {
        let d0 = spec.nu_thz[1] - spec.nu_thz[0];
        for w in spec.nu_thz.windows(2) {
            if ((w[1] - w[0]) - d0).abs() > 1e-6 * d0.abs() {
                return Err(Error::invalid("post-filter requires uniformly spaced frequencies"));
            }
        }
    }
    let bq = design_butterworth2(cutoff_frac_nyquist)?;
    let mut rho = filtfilt(&bq, &spec.rho_rel)?;
    let mut clamped = 0;
    for v in &mut rho {
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        }
    }
    Ok(LdosSpectrum {
        rho_rel: rho,
        filtered: true,
        clamped_points: clamped,
        ..spec.clone()
    })
}

/// One filtered, normalized spectrum per (position, orientation) pair, with
/// the bulk reference simulated once per orientation in a uniform map of the
/// same size, resolution and boundaries. Runs are independent and evaluated
/// in parallel; results keep the input order.
pub fn ldos_position_scan(
    device: &EpsilonMap,
    bulk_eps: f64,
    positions: &[(f64, f64)],
    orientations: &[DipoleOrientation],
    center_frequency_thz: f64,
    cfg: &FdtdConfig,
) -> Result<Vec<LdosSpectrum>> {
    cfg.validate()?;
    if positions.is_empty() || orientations.is_empty() {
        return Ok(Vec::new());
    }
    let bulk_map = device.to_bulk(bulk_eps);
    // one bulk reference per orientation (cancels discretization bias)
    let bulk_runs: Result<Vec<LdosSpectrum>> = orientations
        .par_iter()
        .map(|&orientation| {
            let src = DipoleSource {
                position_nm: bulk_center(&bulk_map),
                orientation,
                center_frequency_thz,
            };
            run_fdtd_ldos(&bulk_map, &src, cfg)
        })
        .collect();
    let bulk_runs = bulk_runs?;

    let jobs: Vec<(usize, (f64, f64), DipoleOrientation)> = positions
        .iter()
        .flat_map(|&p| orientations.iter().map(move |&o| (p, o)))
        .enumerate()
        .map(|(i, (p, o))| (i, p, o))
        .collect();
    let mut results: Vec<(usize, LdosSpectrum)> = jobs
        .par_iter()
        .map(|&(i, position_nm, orientation)| {
            let src = DipoleSource {
                position_nm,
                orientation,
                center_frequency_thz,
            };
            let raw = run_fdtd_ldos(device, &src, cfg)?;
            let bulk = &bulk_runs[orientations.iter().position(|&o| o == orientation).unwrap()];
            let normalized = normalize_to_bulk(&raw, bulk)?;
            let filtered = butterworth_postfilter(&normalized)?;
            Ok((i, filtered))
        })
        .collect::<Result<_>>()?;
    results.sort_by_key(|(i, _)| *i);
    Ok(results.into_iter().map(|(_, s)| s).collect())
}

fn bulk_center(map: &EpsilonMap) -> (f64, f64) {
    (
        map.origin_nm.0 + 0.5 * map.width_nm(),
        map.origin_nm.1 + 0.5 * map.height_nm(),
    )
}

/// Boundary set with PEC walls on x and PML on y: a 1D parallel-mirror
/// cavity within the 2D solver, used by the analytic mode-comb oracle.
pub fn mirror_cavity_bounds() -> BoundarySet {
    BoundarySet {
        x_lo: Boundary::Pec,
        x_hi: Boundary::Pec,
        y_lo: Boundary::Pml,
        y_hi: Boundary::Pml,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = FdtdConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.courant = 0.9;
        assert!(cfg.validate().is_err());
        cfg.courant = 0.5;
        cfg.pml_cells = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn normalize_checks_grids_and_positivity() {
        let mk = |nu: Vec<f64>, rho: Vec<f64>| LdosSpectrum {
            nu_thz: nu,
            rho_rel: rho,
            position_nm: (0.0, 0.0),
            orientation: DipoleOrientation::Y,
            normalized: false,
            filtered: false,
            residual_warning: false,
            approximate_polarization: false,
            clamped_points: 0,
        };
        let a = mk(vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]);
        let b = mk(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]);
        let r = normalize_to_bulk(&a, &b).unwrap();
        assert!(r.rho_rel.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        // identical spectra -> constant 1; halved bulk -> doubled ratio
        let same = normalize_to_bulk(&a, &a).unwrap();
        assert!(same.rho_rel.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let halved = mk(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]);
        let doubled = normalize_to_bulk(&a, &halved).unwrap();
        assert!(doubled.rho_rel.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let bad_grid = mk(vec![1.0, 2.0, 3.5], vec![1.0, 2.0, 3.0]);
        assert!(normalize_to_bulk(&a, &bad_grid).is_err());
        let bad_bulk = mk(vec![1.0, 2.0, 3.0], vec![1.0, -0.5, 3.0]);
        assert!(normalize_to_bulk(&a, &bad_bulk).is_err());
    }

    #[test]
    fn postfilter_constant_is_identity_and_flags() {
        let spec = LdosSpectrum {
            nu_thz: (0..64).map(|i| 100.0 + i as f64).collect(),
            rho_rel: vec![1.5; 64],
            position_nm: (0.0, 0.0),
            orientation: DipoleOrientation::Y,
            normalized: true,
            filtered: false,
            residual_warning: false,
            approximate_polarization: false,
            clamped_points: 0,
        };
        let f = butterworth_postfilter(&spec).unwrap();
        assert!(f.filtered);
        assert_eq!(f.clamped_points, 0);
        for v in &f.rho_rel {
            assert!((v - 1.5).abs() < 1e-9);
        }
        // non-uniform grid rejected
        let mut bad = spec.clone();
        bad.nu_thz[5] += 0.3;
        assert!(butterworth_postfilter(&bad).is_err());
        // short record rejected
        let mut short = spec.clone();
        short.nu_thz.truncate(10);
        short.rho_rel.truncate(10);
        assert!(butterworth_postfilter(&short).is_err());
    }

    #[test]
    fn empty_scan_is_empty() {
        let map = EpsilonMap::uniform(32, 32, 10.0, 10.0, (0.0, 0.0), 4.0).unwrap();
        let out = ldos_position_scan(&map, 4.0, &[], &[DipoleOrientation::Y], 200.0, &FdtdConfig::default()).unwrap();
        assert!(out.is_empty());
    }
}
