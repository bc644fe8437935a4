//! Run configuration: one TOML file with per-module sections, every key
//! validated, unknown keys rejected with location info, and dotted-path
//! `--set key=value` overrides for sweeps.

use serde::{Deserialize, Serialize};

use pcw_core::emitter::ZeemanModel;
use pcw_core::expsim::{DetectorModel, EfficiencyChain, ExcitationModel};
use pcw_core::geometry::{LatticeSpec, WaveguideLayout};
use pcw_core::ldos::FdtdConfig;
use pcw_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 keeps the library default.
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 1, jobs: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub a_nm: f64,
    pub r_over_a: f64,
    pub slab_thickness_nm: f64,
    pub n_slab: f64,
    pub n_hole: f64,
    /// Raster resolution in pixels per lattice constant.
    pub resolution: usize,
    pub layout: WaveguideLayout,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            a_nm: 420.0,
            r_over_a: 0.28,
            slab_thickness_nm: 220.0,
            n_slab: 2.85,
            n_hole: 1.0,
            resolution: 16,
            layout: WaveguideLayout::paper_device(),
        }
    }
}

impl GeometrySection {
    pub fn lattice_spec(&self) -> Result<LatticeSpec> {
        let spec = LatticeSpec {
            a_nm: self.a_nm,
            r_over_a: self.r_over_a,
            slab_thickness_nm: self.slab_thickness_nm,
            n_slab: self.n_slab,
            n_hole: self.n_hole,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandsSection {
    pub pw_cutoff: usize,
    pub n_bands: usize,
    pub rows_per_side: usize,
    /// Re-run the supercell with 12 rows per side as a convergence check.
    pub high_accuracy: bool,
    pub k_min: f64,
    pub k_max: f64,
    pub k_points: usize,
    pub unit_cell_resolution: usize,
    pub unit_cell_cutoff: usize,
    pub supercell_resolution: usize,
    /// Minimum core-energy fraction for the guided-band tracker.
    pub core_concentration: f64,
}

impl Default for BandsSection {
    fn default() -> Self {
        BandsSection {
            pw_cutoff: 4,
            n_bands: 30,
            rows_per_side: 8,
            high_accuracy: false,
            k_min: 0.32,
            k_max: 0.5,
            k_points: 16,
            unit_cell_resolution: 32,
            unit_cell_cutoff: 5,
            supercell_resolution: 24,
            core_concentration: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdosSection {
    pub courant: f64,
    pub max_run_time_periods: f64,
    pub pml_cells: usize,
    pub source_bandwidth: f64,
    pub n_freq: usize,
    pub residual_energy_threshold: f64,
    /// Zero-phase Butterworth cutoff as a fraction of Nyquist.
    pub filter_cutoff: f64,
    /// Dipole orientations to scan.
    pub orientations: Vec<String>,
    /// Source center frequency; 0 = centered on the computed band edge.
    pub center_frequency_thz: f64,
}

impl Default for LdosSection {
    fn default() -> Self {
        let fdtd = FdtdConfig::default();
        LdosSection {
            courant: fdtd.courant,
            max_run_time_periods: fdtd.max_run_time_periods,
            pml_cells: fdtd.pml_cells,
            source_bandwidth: fdtd.source_bandwidth,
            n_freq: fdtd.n_freq,
            residual_energy_threshold: fdtd.residual_energy_threshold,
            filter_cutoff: 0.2,
            orientations: vec!["y".into()],
            center_frequency_thz: 0.0,
        }
    }
}

impl LdosSection {
    pub fn fdtd_config(&self) -> FdtdConfig {
        FdtdConfig {
            courant: self.courant,
            max_run_time_periods: self.max_run_time_periods,
            pml_cells: self.pml_cells,
            source_bandwidth: self.source_bandwidth,
            n_freq: self.n_freq,
            residual_energy_threshold: self.residual_energy_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitterSection {
    pub tau_bulk_us: f64,
    pub p_z1: f64,
    pub y1_frequency_thz: f64,
    /// Calibration constant multiplying the Z1 enhancement (fitted 0.217).
    pub spatial_factor: f64,
    /// Inhibition factors for Z2..Z8 (uniform value).
    pub inhibition_rest: f64,
    pub zeeman: ZeemanModel,
}

impl Default for EmitterSection {
    fn default() -> Self {
        EmitterSection {
            tau_bulk_us: 142.0,
            p_z1: 0.23,
            y1_frequency_thz: 194.92,
            spatial_factor: 0.217,
            inhibition_rest: 0.3,
            zeeman: ZeemanModel::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifetimeSection {
    /// Purcell factor on the Z1 transition.
    pub f_z1: f64,
    /// Factors on Z2..Z8.
    pub f_rest: [f64; 7],
}

impl Default for LifetimeSection {
    fn default() -> Self {
        LifetimeSection {
            f_z1: 1.0,
            f_rest: [1.0; 7],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSection {
    pub pulse_length_us: f64,
    pub chirp_width_mhz: f64,
    pub repetitions: usize,
    pub detection_window_us: f64,
    pub rep_period_us: f64,
    pub detuning_min_mhz: f64,
    pub detuning_max_mhz: f64,
    pub detuning_points: usize,
}

impl Default for SequenceSection {
    fn default() -> Self {
        SequenceSection {
            pulse_length_us: 2.0,
            chirp_width_mhz: 10.0,
            repetitions: 8000,
            detection_window_us: 600.0,
            rep_period_us: 700.0,
            detuning_min_mhz: -2500.0,
            detuning_max_mhz: 2500.0,
            detuning_points: 501,
        }
    }
}

impl SequenceSection {
    pub fn pulse_sequence(&self) -> pcw_core::expsim::PulseSequence {
        let n = self.detuning_points.max(2);
        let grid = (0..n)
            .map(|i| {
                self.detuning_min_mhz
                    + (self.detuning_max_mhz - self.detuning_min_mhz) * i as f64 / (n - 1) as f64
            })
            .collect();
        pcw_core::expsim::PulseSequence {
            pulse_length_us: self.pulse_length_us,
            chirp_width_mhz: self.chirp_width_mhz,
            repetitions: self.repetitions,
            detection_window_us: self.detection_window_us,
            rep_period_us: self.rep_period_us,
            laser_detuning_grid_mhz: grid,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_emitters: usize,
    pub inhomogeneous_sd_ghz: f64,
    pub diffusion_mean_mhz: f64,
    pub diffusion_sd_mhz: f64,
    pub diffusion_floor_mhz: f64,
    pub tau_mean_us: f64,
    pub tau_sd_us: f64,
    pub p_z1_mean: f64,
    pub p_z1_sd: f64,
    pub filter_on: bool,
    pub excitation: Option<ExcitationModel>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            n_emitters: 30,
            inhomogeneous_sd_ghz: 0.6,
            diffusion_mean_mhz: 27.0,
            diffusion_sd_mhz: 12.0,
            diffusion_floor_mhz: 13.0,
            tau_mean_us: 295.0,
            tau_sd_us: 97.0,
            p_z1_mean: 0.72,
            p_z1_sd: 0.14,
            filter_on: false,
            excitation: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub n: usize,
    pub f_max: f64,
    /// Sampled region half-width around the axis, in rows (√3 a / 2).
    pub region_halfwidth_rows: f64,
    pub inhomogeneous_sd_ghz: f64,
    pub diffusion_fwhm_mhz: f64,
    /// "synthetic" closed-form mode profile or "supercell" to solve the W1
    /// eigenmode first.
    pub profile: String,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            n: 10_000,
            f_max: 8.0,
            region_halfwidth_rows: 1.0,
            inhomogeneous_sd_ghz: 0.6,
            diffusion_fwhm_mhz: 27.0,
            profile: "synthetic".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeemanSection {
    /// Reciprocal dispersion model n_g = A/(ν - ν_e); by default ν_e is
    /// placed just below Y1 so the tuning range stays in the slow-light
    /// region.
    pub ng_a_thz: f64,
    pub ng_nu_e_offset_ghz: f64,
    pub n_points: usize,
}

impl Default for ZeemanSection {
    fn default() -> Self {
        ZeemanSection {
            ng_a_thz: 2.0,
            ng_nu_e_offset_ghz: 30.0,
            n_points: 81,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NgSection {
    pub resonator_length_um: f64,
    /// Synthetic comb parameters, used when no resonance file is given.
    pub comb_a_thz: f64,
    pub comb_nu_e_thz: f64,
    pub comb_start_thz: f64,
    pub comb_points: usize,
}

impl Default for NgSection {
    fn default() -> Self {
        NgSection {
            resonator_length_um: 31.0 * 0.42,
            comb_a_thz: 2.0,
            comb_nu_e_thz: 194.5,
            comb_start_thz: 194.75,
            comb_points: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub min_prominence: f64,
    pub filter_chi: f64,
    pub measured_p: f64,
    pub measured_sigma: f64,
    pub n_delay_bins: usize,
    pub g2_max_lag: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            min_prominence: 0.2,
            filter_chi: 0.476,
            measured_p: 0.0341,
            measured_sigma: 0.0023,
            n_delay_bins: 60,
            g2_max_lag: 25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub geometry: GeometrySection,
    pub bands: BandsSection,
    pub ldos: LdosSection,
    pub emitter: EmitterSection,
    pub lifetime: LifetimeSection,
    pub sequence: SequenceSection,
    pub excitation: Option<ExcitationModel>,
    pub chain: Option<EfficiencyChain>,
    pub detector: DetectorModel,
    pub synth: SynthSection,
    pub ensemble: EnsembleSection,
    pub zeeman: ZeemanSection,
    pub ng: NgSection,
    pub analysis: AnalysisSection,
}

impl RunConfig {
    pub fn chain(&self) -> EfficiencyChain {
        self.chain.clone().unwrap_or_else(EfficiencyChain::paper_values)
    }
}

/// Load a config file (or defaults when none given) and apply
/// `--set key=value` overrides by dotted path. The file and the overrides
/// are deep-merged onto the default configuration, so partial sections are
/// fine; the final typed conversion still rejects unknown keys.
pub fn load_config(path: Option<&std::path::Path>, sets: &[String]) -> Result<RunConfig> {
    let mut value = toml::Value::try_from(RunConfig::default())
        .map_err(|e| Error::invalid(format!("default config: {e}")))?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)?;
        let overlay: toml::Value = toml::from_str(&text)
            .map_err(|e| Error::invalid(format!("config {}: {e}", p.display())))?;
        merge_value(&mut value, overlay);
    }
    for set in sets {
        apply_set(&mut value, set)?;
    }
    value
        .try_into::<RunConfig>()
        .map_err(|e| Error::invalid(format!("config: {e}")))
}

/// Overlay tables recursively; scalar and array values replace.
fn merge_value(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge_value(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_set(root: &mut toml::Value, set: &str) -> Result<()> {
    let (path, raw) = set
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("--set needs key=value, got '{set}'")))?;
    let parsed: toml::Value = toml::from_str(&format!("x = {raw}"))
        .map(|v: toml::Value| v.get("x").cloned().unwrap())
        .or_else(|_| {
            toml::from_str(&format!("x = \"{raw}\"")).map(|v: toml::Value| v.get("x").cloned().unwrap())
        })
        .map_err(|e| Error::invalid(format!("--set {set}: cannot parse value: {e}")))?;
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("--set {set}: '{part}' is not a table")))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!()
}
