//! Closed-form lifetime table, Monte-Carlo ensembles, and Zeeman-tuned
//! lifetime curves.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pcw_core::bands::GroupIndexCurve;
use pcw_core::emitter::{
    estimate_spatial_factor, modified_branching, modified_lifetime, rates_from_bulk,
    sample_ensemble, zeeman_lifetime_curve, BranchingTable, ModeProfile, PurcellVector,
    SamplingRegion, N_LEVELS,
};
use pcw_core::geometry::ROW_SPACING;
use pcw_core::{Error, Result};

use crate::config::RunConfig;
use crate::output::RunDir;

fn purcell_from_lifetime_section(cfg: &RunConfig) -> PurcellVector {
    let mut f = [1.0; N_LEVELS];
    f[0] = cfg.lifetime.f_z1;
    f[1..].copy_from_slice(&cfg.lifetime.f_rest);
    PurcellVector { f }
}

pub fn cmd_lifetime(cfg: &RunConfig, out: &RunDir) -> Result<()> {
    let branching = BranchingTable::with_z1(cfg.emitter.p_z1)?;
    let rates = rates_from_bulk(cfg.emitter.tau_bulk_us, &branching)?;
    let purcell = purcell_from_lifetime_section(cfg);
    let tau = modified_lifetime(&rates, &purcell)?;
    let p = modified_branching(&rates, &purcell)?;
    let report = serde_json::json!({
        "tau_bulk_us": cfg.emitter.tau_bulk_us,
        "p_z1_bulk": cfg.emitter.p_z1,
        "purcell": purcell.f,
        "tau_modified_us": tau,
        "branching_modified": p.p,
        "branching_sum": p.p.iter().sum::<f64>(),
    });
    out.write_json("lifetime.json", &report)?;
    println!("tau' = {tau:.3} us, p'_Z1 = {:.4}", p.p[0]);
    Ok(())
}

fn build_profile(cfg: &RunConfig) -> Result<ModeProfile> {
    let spec = cfg.geometry.lattice_spec()?;
    match cfg.ensemble.profile.as_str() {
        "synthetic" => {
            let nx = 32;
            let ny = 64;
            let height = 2.0 * 3f64.sqrt() * spec.a_nm;
            Ok(ModeProfile::synthetic_cosine(nx, ny, spec.a_nm / nx as f64, height / ny as f64))
        }
        "supercell" => {
            let sol = super::photonics::solve_w1(cfg, cfg.bands.rows_per_side)?;
            let near_edge = sol
                .track
                .iter()
                .rposition(|t| t.is_some())
                .ok_or_else(|| Error::numerical("guided band not tracked"))?;
            let band = sol.track[near_edge].unwrap();
            let mode = pcw_core::bands::mode_field(&sol.diagram, near_edge, band)?;
            ModeProfile::from_te_mode(&mode)
        }
        other => Err(Error::invalid(format!(
            "ensemble.profile must be 'synthetic' or 'supercell', got '{other}'"
        ))),
    }
}

pub fn cmd_ensemble(cfg: &RunConfig, out: &RunDir) -> Result<()> {
    let spec = cfg.geometry.lattice_spec()?;
    let branching = BranchingTable::with_z1(cfg.emitter.p_z1)?;
    let rates = rates_from_bulk(cfg.emitter.tau_bulk_us, &branching)?;
    let mut inhibition = PurcellVector::uniform(cfg.emitter.inhibition_rest);
    inhibition.f[0] = 1.0;
    let profile = build_profile(cfg)?;
    let half = cfg.ensemble.region_halfwidth_rows * ROW_SPACING * spec.a_nm;
    let region = SamplingRegion {
        x_range_nm: (0.0, spec.a_nm),
        y_range_nm: (-half, half),
    };
    let (emitters, summary) = sample_ensemble(
        cfg.ensemble.n,
        &profile,
        &region,
        cfg.ensemble.f_max,
        &rates,
        &inhibition,
        cfg.ensemble.inhomogeneous_sd_ghz,
        cfg.ensemble.diffusion_fwhm_mhz,
        cfg.run.seed,
    )?;
    let spatial = estimate_spatial_factor(&profile, &region, 20_000, cfg.run.seed ^ 0x5bd1)?;

    out.write_csv("ensemble.csv", |w| {
        writeln!(w, "x_nm,y_nm,dipole_x,dipole_y,dipole_z,tau_us,p_z1").map_err(Error::from)?;
        for e in &emitters {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.instance.position_nm.0,
                e.instance.position_nm.1,
                e.instance.dipole[0],
                e.instance.dipole[1],
                e.instance.dipole[2],
                e.tau_us,
                e.p_z1
            )
            .map_err(Error::from)?;
        }
        Ok(())
    })?;
    // the closed-form mean-rate approximation uses the estimated spatial
    // factor on the Z1 channel
    let rest_rate: f64 = rates
        .a_per_s
        .iter()
        .zip(&inhibition.f)
        .skip(1)
        .map(|(a, f)| a * f)
        .sum();
    let mean_rate = spatial * cfg.ensemble.f_max * rates.a_per_s[0] + rest_rate;
    let report = serde_json::json!({
        "n": cfg.ensemble.n,
        "f_max": cfg.ensemble.f_max,
        "inhibition_rest": cfg.emitter.inhibition_rest,
        "estimated_spatial_factor": spatial,
        "configured_spatial_factor": cfg.emitter.spatial_factor,
        "mean_tau_us": summary.mean_tau_us,
        "sd_tau_us": summary.sd_tau_us,
        "skewness": summary.skewness,
        "mean_p_z1": summary.mean_p_z1,
        "closed_form_mean_rate_tau_us": 1e6 / mean_rate,
        "fraction_above_bulk": emitters
            .iter()
            .filter(|e| e.tau_us > cfg.emitter.tau_bulk_us)
            .count() as f64 / emitters.len() as f64,
        "histogram_edges_us": summary.histogram_edges_us,
        "histogram_counts": summary.histogram_counts,
    });
    out.write_json("ensemble_summary.json", &report)?;
    println!(
        "ensemble of {}: mean tau' = {:.1} us (sd {:.1}), skewness {:.2}, mean p'_Z1 = {:.3}, spatial factor {:.3}",
        cfg.ensemble.n, summary.mean_tau_us, summary.sd_tau_us, summary.skewness, summary.mean_p_z1, spatial
    );
    Ok(())
}

pub fn cmd_zeeman(cfg: &RunConfig, out: &RunDir) -> Result<()> {
    let branching = BranchingTable::with_z1(cfg.emitter.p_z1)?;
    let rates = rates_from_bulk(cfg.emitter.tau_bulk_us, &branching)?;
    let mut inhibition = PurcellVector::uniform(cfg.emitter.inhibition_rest);
    inhibition.f[0] = 1.0;

    let y1 = cfg.emitter.y1_frequency_thz;
    let nu_e = y1 - cfg.zeeman.ng_nu_e_offset_ghz * 1e-3;
    let span_ghz = cfg.emitter.zeeman.tuning_coefficient_ghz_per_t * cfg.emitter.zeeman.field_max_t;
    let lo = (y1 - span_ghz * 1e-3).max(nu_e + 5e-3);
    let hi = y1 + span_ghz * 1e-3;
    // tabulated reciprocal dispersion over a slightly wider window
    let n_tab = 400;
    let pad = 0.1 * (hi - lo);
    let nu_tab: Vec<f64> = (0..n_tab)
        .map(|i| (lo - pad).max(nu_e + 1e-3) + ((hi + pad) - (lo - pad).max(nu_e + 1e-3)) * i as f64 / (n_tab - 1) as f64)
        .collect();
    let ng_tab: Vec<f64> = nu_tab.iter().map(|v| cfg.zeeman.ng_a_thz / (v - nu_e)).collect();
    let curve = GroupIndexCurve {
        nu_thz: nu_tab,
        ng: ng_tab,
        omitted_nu_thz: vec![],
    };
    let pts = zeeman_lifetime_curve(
        &curve,
        &rates,
        &inhibition,
        cfg.emitter.spatial_factor,
        cfg.geometry.n_slab,
        (lo, hi),
        cfg.zeeman.n_points,
    )?;
    out.write_csv("zeeman_lifetime.csv", |w| {
        writeln!(w, "nu_GHz_detuning,tau_us").map_err(Error::from)?;
        for (nu, tau) in &pts {
            writeln!(w, "{},{}", (nu - y1) * 1e3, tau).map_err(Error::from)?;
        }
        Ok(())
    })?;
    let report = serde_json::json!({
        "y1_frequency_thz": y1,
        "band_edge_thz": nu_e,
        "ng_model_a_thz": cfg.zeeman.ng_a_thz,
        "spatial_factor": cfg.emitter.spatial_factor,
        "inhibition_rest": cfg.emitter.inhibition_rest,
        "zeeman_coefficient_ghz_per_t": cfg.emitter.zeeman.tuning_coefficient_ghz_per_t,
        "zeeman_coefficient_is_placeholder": true,
        "detuning_span_ghz": span_ghz,
        "tau_range_us": [
            pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
            pts.iter().map(|p| p.1).fold(0.0f64, f64::max),
        ],
    });
    out.write_json("zeeman_report.json", &report)?;
    println!(
        "Zeeman lifetime curve over ±{span_ghz:.0} GHz: tau' from {:.1} to {:.1} us",
        pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.1).fold(0.0f64, f64::max)
    );
    Ok(())
}

/// Gaussian draw via Box-Muller, shared by the synthetic-ensemble command.
pub fn normal<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0f64);
    mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Deterministic RNG for a command, derived from the run seed.
pub fn command_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}
