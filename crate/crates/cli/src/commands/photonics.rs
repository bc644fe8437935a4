//! Band-structure, LDOS, and group-index commands.

use pcw_core::analysis::{fit_reciprocal, ng_from_fsr};
use pcw_core::bands::{
    classify_guided_modes, find_band_gap, group_index_of_track, mode_field, solve_te_bands_with,
    track_guided_band, triangular_ibz_path, BandDiagram, BandGap, BlochVector, FieldComponent,
    LatticeKind, SolveOptions,
};
use pcw_core::geometry::{build_finite_device, build_unit_cell, build_w1_supercell};
use pcw_core::ldos::{ldos_position_scan, DipoleOrientation};
use pcw_core::{Error, Result, C_M_PER_S};

use crate::config::RunConfig;
use crate::output::RunDir;

pub struct SupercellSolution {
    pub bulk_gap: BandGap,
    pub diagram: BandDiagram,
    pub track: Vec<Option<usize>>,
    pub guided_edge_thz: f64,
}

/// Solve the unit cell for the bulk gap and the W1 supercell for the guided
/// band; shared by the bands and ldos commands.
pub fn solve_w1(cfg: &RunConfig, rows_per_side: usize) -> Result<SupercellSolution> {
    let spec = cfg.geometry.lattice_spec()?;
    let b = &cfg.bands;

    let cell = build_unit_cell(&spec, b.unit_cell_resolution)?;
    let bulk = solve_te_bands_with(
        &cell,
        &triangular_ibz_path(8),
        3,
        b.unit_cell_cutoff,
        &SolveOptions {
            lattice: LatticeKind::TriangularPrimitive,
            keep_modes: false,
        },
    )?;
    let bulk_gap = find_band_gap(&bulk)
        .ok_or_else(|| Error::numerical("no TE band gap in the bulk crystal"))?;

    let supercell = build_w1_supercell(&spec, rows_per_side, b.supercell_resolution)?;
    let ks: Vec<BlochVector> = (0..b.k_points)
        .map(|i| BlochVector::new(b.k_min + (b.k_max - b.k_min) * i as f64 / (b.k_points - 1) as f64))
        .collect();
    let diagram = solve_te_bands_with(
        &supercell,
        &ks,
        b.n_bands,
        b.pw_cutoff,
        &SolveOptions {
            lattice: LatticeKind::Rectangular,
            keep_modes: true,
        },
    )?;
    let core_half = 3f64.sqrt() * spec.a_nm;
    let track = track_guided_band(
        &diagram,
        (bulk_gap.lo_thz, bulk_gap.hi_thz),
        core_half,
        b.core_concentration,
    )?;
    let guided_edge_thz = track
        .iter()
        .zip(&diagram.bands)
        .filter_map(|(t, f)| t.map(|bi| f[bi]))
        .fold(f64::INFINITY, f64::min);
    if !guided_edge_thz.is_finite() {
        return Err(Error::numerical("guided band not found inside the bulk gap"));
    }
    Ok(SupercellSolution {
        bulk_gap,
        diagram,
        track,
        guided_edge_thz,
    })
}

pub fn cmd_bands(cfg: &RunConfig, out: &RunDir) -> Result<()> {
    let rows = if cfg.bands.high_accuracy { 12 } else { cfg.bands.rows_per_side };
    let mut sol = solve_w1(cfg, rows)?;
    let gap = sol.bulk_gap;
    classify_guided_modes(&mut sol.diagram, (gap.lo_thz, gap.hi_thz))?;
    let ng = group_index_of_track(&sol.diagram, &sol.track)?;

    out.write_csv("supercell_bands.csv", |w| sol.diagram.write_csv(w))?;
    out.write_csv("guided_ng.csv", |w| ng.write_csv(w))?;

    let guided_parities: Vec<(usize, String)> = sol
        .track
        .iter()
        .flatten()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|&b| (b, format!("{:?}", sol.diagram.parity[b])))
        .collect();
    let device_gap = (gap.lo_thz, sol.guided_edge_thz);
    let report = serde_json::json!({
        "a_nm": cfg.geometry.a_nm,
        "n_slab": cfg.geometry.n_slab,
        "rows_per_side": rows,
        "bulk_gap_thz": [gap.lo_thz, gap.hi_thz],
        "bulk_gap_u": [gap.lo_thz * cfg.geometry.a_nm / pcw_core::C_NM_PER_PS,
                        gap.hi_thz * cfg.geometry.a_nm / pcw_core::C_NM_PER_PS],
        "guided_band_edge_thz": sol.guided_edge_thz,
        "device_gap_thz": [device_gap.0, device_gap.1],
        "guided_band_parity": guided_parities,
        "max_ng": ng.ng.iter().cloned().fold(0.0f64, f64::max),
    });
    out.write_json("gap_report.json", &report)?;
    println!(
        "bulk TE gap: {:.3} - {:.3} THz; guided band edge {:.3} THz; device gap width {:.3} THz; max n_g {:.1}",
        gap.lo_thz,
        gap.hi_thz,
        sol.guided_edge_thz,
        sol.guided_edge_thz - gap.lo_thz,
        ng.ng.iter().cloned().fold(0.0f64, f64::max)
    );
    Ok(())
}

fn parse_orientation(s: &str) -> Result<DipoleOrientation> {
    match s {
        "x" => Ok(DipoleOrientation::X),
        "y" => Ok(DipoleOrientation::Y),
        "z" => Ok(DipoleOrientation::Z),
        other => Err(Error::invalid(format!("unknown orientation '{other}' (use x|y|z)"))),
    }
}

pub fn cmd_ldos(cfg: &RunConfig, out: &RunDir) -> Result<()> {
    let spec = cfg.geometry.lattice_spec()?;
    let sol = solve_w1(cfg, cfg.bands.rows_per_side)?;

    // canonical dipole positions from the guided mode near the zone edge
    let near_edge = sol
        .track
        .iter()
        .rposition(|t| t.is_some())
        .ok_or_else(|| Error::numerical("guided band not tracked"))?;
    let band = sol.track[near_edge].unwrap();
    let mode = mode_field(&sol.diagram, near_edge, band)?;
    let ey_max = mode.max_position_of(FieldComponent::Ey);
    let ex_max = mode.max_position_of(FieldComponent::Ex);

    // map the intra-period mode coordinates into the middle of the
    // slow-light section of the finite device
    let device = build_finite_device(&spec, &cfg.geometry.layout, cfg.geometry.resolution)?;
    let layout = &cfg.geometry.layout;
    let x_slow_start = 2.0 * spec.a_nm + layout.mirror_holes as f64 * spec.a_nm;
    let mid_period = (layout.slow_periods / 2) as f64;
    let to_device = |(x, y): (f64, f64)| {
        (
            x_slow_start + mid_period * spec.a_nm + x.rem_euclid(spec.a_nm),
            y,
        )
    };
    let positions = vec![to_device(ey_max), to_device(ex_max)];
    let labels = ["eymax", "exmax"];

    let orientations: Vec<DipoleOrientation> = cfg
        .ldos
        .orientations
        .iter()
        .map(|s| parse_orientation(s))
        .collect::<Result<_>>()?;
    let nu0 = if cfg.ldos.center_frequency_thz > 0.0 {
        cfg.ldos.center_frequency_thz
    } else {
        sol.guided_edge_thz
    };
    let spectra = ldos_position_scan(
        &device,
        spec.eps_slab(),
        &positions,
        &orientations,
        nu0,
        &cfg.ldos.fdtd_config(),
    )?;

    let mut files = Vec::new();
    for (i, s) in spectra.iter().enumerate() {
        let pos = labels[i / orientations.len()];
        let orient = match s.orientation {
            DipoleOrientation::X => "x",
            DipoleOrientation::Y => "y",
            DipoleOrientation::Z => "z",
        };
        let name = format!("ldos_{orient}_at_{pos}.csv");
        out.write_csv(&name, |w| s.write_csv(w))?;
        files.push(serde_json::json!({
            "file": name,
            "orientation": orient,
            "position": pos,
            "position_nm": s.position_nm,
            "residual_warning": s.residual_warning,
            "approximate_polarization": s.approximate_polarization,
            "clamped_points": s.clamped_points,
        }));
    }
    let report = serde_json::json!({
        "center_frequency_thz": nu0,
        "bulk_gap_thz": [sol.bulk_gap.lo_thz, sol.bulk_gap.hi_thz],
        "guided_band_edge_thz": sol.guided_edge_thz,
        "spectra": files,
    });
    out.write_json("ldos_report.json", &report)?;
    println!(
        "computed {} LDOS spectra around {:.2} THz (device gap {:.3} - {:.3} THz)",
        spectra.len(),
        nu0,
        sol.bulk_gap.lo_thz,
        sol.guided_edge_thz
    );
    Ok(())
}

/// Generate a synthetic Fabry-Perot resonance comb from the reciprocal
/// dispersion model: successive resonances separated by the local FSR
/// c/(2 n_g L). One fixed-point refinement per step evaluates n_g at the
/// interval midpoint.
pub fn synthesize_comb(a_thz: f64, nu_e_thz: f64, start_thz: f64, n: usize, length_um: f64) -> Vec<f64> {
    let ng = |nu: f64| a_thz / (nu - nu_e_thz);
    let fsr_thz = |nu: f64| C_M_PER_S / (2.0 * ng(nu) * length_um * 1e-6) * 1e-12;
    let mut out = vec![start_thz];
    for _ in 1..n {
        let nu = *out.last().unwrap();
        let mut step = fsr_thz(nu);
        for _ in 0..3 {
            step = fsr_thz(nu + 0.5 * step);
        }
        out.push(nu + step);
    }
    out
}

pub fn cmd_ng(cfg: &RunConfig, out: &RunDir, input: Option<&std::path::Path>) -> Result<()> {
    let resonances: Vec<f64> = match input {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut v = Vec::new();
            for (ln, line) in text.lines().enumerate() {
                let t = line.trim();
                if t.is_empty() || t.starts_with('#') || t.starts_with("resonance") {
                    continue;
                }
                v.push(t.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("{}:{}: bad resonance frequency", path.display(), ln + 1))
                })?);
            }
            v
        }
        None => synthesize_comb(
            cfg.ng.comb_a_thz,
            cfg.ng.comb_nu_e_thz,
            cfg.ng.comb_start_thz,
            cfg.ng.comb_points,
            cfg.ng.resonator_length_um,
        ),
    };
    let curve = ng_from_fsr(&resonances, cfg.ng.resonator_length_um)?;
    let fit = fit_reciprocal(&curve)?;
    out.write_csv("ng_curve.csv", |w| curve.write_csv(w))?;
    out.write_csv("resonances.csv", |w| {
        writeln!(w, "resonance_THz").map_err(pcw_core::Error::from)?;
        for r in &resonances {
            writeln!(w, "{r}").map_err(pcw_core::Error::from)?;
        }
        Ok(())
    })?;
    let max_ng = curve.ng.iter().cloned().fold(0.0f64, f64::max);
    let report = serde_json::json!({
        "resonator_length_um": cfg.ng.resonator_length_um,
        "n_resonances": resonances.len(),
        "fit_a_thz": fit.a_thz,
        "fit_nu_e_thz": fit.nu_e_thz,
        "fit_sigma_a": fit.sigma_a,
        "fit_sigma_nu_e": fit.sigma_nu_e,
        "max_ng": max_ng,
    });
    out.write_json("ng_fit.json", &report)?;
    println!(
        "n_g from {} resonances: max {:.1}; reciprocal fit A = {:.4} THz, nu_e = {:.4} THz",
        resonances.len(),
        max_ng,
        fit.a_thz,
        fit.nu_e_thz
    );
    Ok(())
}
