//! Analysis pipeline for fluorescence data: prominence-gated peak detection,
//! Lorentzian/exponential/reciprocal least-squares fits, dark-count-corrected
//! g², free-spectral-range group-index extraction, filter-based branching
//! estimation, and the filtering-vs-inhibition efficiency test.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::expsim::EfficiencyChain;
use crate::numeric::{least_squares, LsqFit};
use crate::{Error, Result, C_M_PER_S};

/// Binned fluorescence counts versus laser detuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluorescenceSpectrum {
    pub detuning_mhz: Vec<f64>,
    pub counts_per_pulse: Vec<f64>,
    pub dark_floor: f64,
}

impl FluorescenceSpectrum {
    pub fn validate(&self) -> Result<()> {
        if self.detuning_mhz.len() != self.counts_per_pulse.len() {
            return Err(Error::invalid("detuning and counts lengths differ"));
        }
        if self.counts_per_pulse.iter().any(|&c| c < 0.0) {
            return Err(Error::invalid("counts must be non-negative"));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "detuning_MHz,counts_per_pulse")?;
        for (d, c) in self.detuning_mhz.iter().zip(&self.counts_per_pulse) {
            writeln!(w, "{d},{c}")?;
        }
        Ok(())
    }

    /// Two-column CSV (detuning, counts); a `# dark_floor=` comment line is
    /// honored when present.
    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut detuning = Vec::new();
        let mut counts = Vec::new();
        let mut dark_floor = 0.0;
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix("# dark_floor=") {
                dark_floor = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad dark_floor on line {}", ln + 1)))?;
                continue;
            }
            if t.starts_with('#') || t.starts_with("detuning") {
                continue;
            }
            let mut parts = t.split(',');
            let d: f64 = parts
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad detuning on line {}", ln + 1)))?;
            let c: f64 = parts
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad counts on line {}", ln + 1)))?;
            detuning.push(d);
            counts.push(c);
        }
        let spec = FluorescenceSpectrum {
            detuning_mhz: detuning,
            counts_per_pulse: counts,
            dark_floor,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A detected peak: an index window extending to the surrounding prominence bases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeakWindow {
    pub peak_index: usize,
    pub lo_index: usize,
    pub hi_index: usize,
    /// Topographic prominence on the normalized (max = 1) spectrum.
    pub prominence: f64,
}

/// Topographic-prominence peak detection on the dark-floor-subtracted,
/// max-normalized spectrum. Returns windows for peaks with prominence of at
/// least `min_prominence` (on the 0..1 scale).
pub fn find_peaks(spec: &FluorescenceSpectrum, min_prominence: f64) -> Result<Vec<PeakWindow>> {
    spec.validate()?;
    let n = spec.counts_per_pulse.len();
    if n < 5 {
        return Err(Error::invalid("spectrum must have at least 5 points"));
    }
    let y: Vec<f64> = spec
        .counts_per_pulse
        .iter()
        .map(|&c| (c - spec.dark_floor).max(0.0))
        .collect();
    let max = y.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let y: Vec<f64> = y.iter().map(|v| v / max).collect();

    let mut out = Vec::new();
    for i in 1..n - 1 {
        if !(y[i] > y[i - 1] && y[i] >= y[i + 1]) {
            continue; // plateaus credit their left edge
        }
        // walk left until a higher point; base = minimum along the way
        let mut left_base = y[i];
        let mut lo = i;
        let mut j = i;
        loop {
            if j == 0 {
                break;
            }
            j -= 1;
            if y[j] > y[i] {
                break;
            }
            if y[j] < left_base {
                left_base = y[j];
                lo = j;
            }
        }
        let mut right_base = y[i];
        let mut hi = i;
        let mut j = i;
        loop {
            if j == n - 1 {
                break;
            }
            j += 1;
            if y[j] > y[i] {
                break;
            }
            if y[j] < right_base {
                right_base = y[j];
                hi = j;
            }
        }
        let prominence = y[i] - left_base.max(right_base);
        if prominence >= min_prominence {
            out.push(PeakWindow {
                peak_index: i,
                lo_index: lo,
                hi_index: hi,
                prominence,
            });
        }
    }
    Ok(out)
}

/// Lorentzian line fit A (Γ/2)² / ((x-x₀)² + (Γ/2)²) + B.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeakFit {
    pub center_mhz: f64,
    pub fwhm_mhz: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub sigma_center: f64,
    pub sigma_fwhm: f64,
    pub sigma_amplitude: f64,
    pub sigma_offset: f64,
    /// Reduced residual norm of the converged fit.
    pub goodness: f64,
}

fn lorentz(p: &[f64], x: f64) -> f64 {
    let (a, x0, g, b) = (p[0], p[1], p[2], p[3]);
    let hw = 0.5 * g;
    a * hw * hw / ((x - x0) * (x - x0) + hw * hw) + b
}

fn lorentz_jac(p: &[f64], x: f64) -> Vec<f64> {
    let (a, x0, g, _) = (p[0], p[1], p[2], p[3]);
    let hw = 0.5 * g;
    let d2 = (x - x0) * (x - x0);
    let den = d2 + hw * hw;
    let shape = hw * hw / den;
    vec![
        shape,
        a * hw * hw * 2.0 * (x - x0) / (den * den),
        // d/dΓ [ (Γ/2)²/(d²+(Γ/2)²) ] = (Γ/2) d² / (d²+(Γ/2)²)²
        a * hw * d2 / (den * den),
        1.0,
    ]
}

/// Fit a Lorentzian to a window of (detuning, counts) data.
pub fn fit_lorentzian(x: &[f64], y: &[f64]) -> Result<PeakFit> {
    if x.len() < 5 || x.len() != y.len() {
        return Err(Error::invalid("need at least 5 points to fit a line profile"));
    }
    let b0 = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let (imax, ymax) = y
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let a0 = (ymax - b0).max(1e-12);
    // half-maximum crossing estimate for the width
    let half = b0 + 0.5 * a0;
    let mut lo = x[0];
    let mut hi = x[x.len() - 1];
    for i in (0..imax).rev() {
        if y[i] < half {
            lo = x[i];
            break;
        }
    }
    for i in imax..x.len() {
        if y[i] < half {
            hi = x[i];
            break;
        }
    }
    let g0 = (hi - lo).abs().max((x[1] - x[0]).abs());
    let fit = least_squares(lorentz, lorentz_jac, x, y, &[a0, x[imax], g0, b0], 200)?;
    let p = &fit.params;
    if p[2].abs() <= 0.0 || p[0] <= 0.0 {
        return Err(Error::FitFailure {
            residual: fit.residual_norm,
            iterations: fit.iterations,
        });
    }
    Ok(PeakFit {
        amplitude: p[0],
        center_mhz: p[1],
        fwhm_mhz: p[2].abs(),
        offset: p[3],
        sigma_amplitude: fit.sigmas[0],
        sigma_center: fit.sigmas[1],
        sigma_fwhm: fit.sigmas[2],
        sigma_offset: fit.sigmas[3],
        goodness: fit.reduced_chi2.sqrt(),
    })
}

/// Exponential decay fit A exp(-t/τ) + B.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub tau_us: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub sigma_tau: f64,
    pub sigma_amplitude: f64,
    pub sigma_offset: f64,
    pub goodness: f64,
}

fn expdec(p: &[f64], t: f64) -> f64 {
    p[0] * (-t / p[1]).exp() + p[2]
}

fn expdec_jac(p: &[f64], t: f64) -> Vec<f64> {
    let e = (-t / p[1]).exp();
    vec![e, p[0] * e * t / (p[1] * p[1]), 1.0]
}

/// Fit an exponential decay to a delay histogram (bin centers, counts).
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<DecayFit> {
    let nonzero = y.iter().filter(|&&v| v > 0.0).count();
    if t.len() != y.len() || nonzero < 5 {
        return Err(Error::invalid("need at least 5 nonzero bins to fit a decay"));
    }
    let b0 = y.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    let a0 = (y[0] - b0).max(1e-12);
    // crude log-slope estimate over the early part
    let span = t[t.len() - 1] - t[0];
    let mut tau0 = span / 3.0;
    for (i, &v) in y.iter().enumerate() {
        if v - b0 < a0 / std::f64::consts::E {
            if t[i] > t[0] {
                tau0 = t[i] - t[0];
            }
            break;
        }
    }
    let fit = least_squares(expdec, expdec_jac, t, y, &[a0, tau0, b0], 200)?;
    let p = &fit.params;
    if p[1] <= 0.0 {
        return Err(Error::FitFailure {
            residual: fit.residual_norm,
            iterations: fit.iterations,
        });
    }
    Ok(DecayFit {
        amplitude: p[0],
        tau_us: p[1],
        offset: p[2],
        sigma_amplitude: fit.sigmas[0],
        sigma_tau: fit.sigmas[1],
        sigma_offset: fit.sigmas[2],
        goodness: fit.reduced_chi2.sqrt(),
    })
}

/// Dark-count-corrected g²(0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct G2Result {
    pub g2_raw: f64,
    pub g2_corrected: f64,
    /// Signal fraction ρ = S/(S+B).
    pub rho: f64,
    /// The correction drove the value below zero and it was clamped.
    pub clamped: bool,
}

/// Remove Poissonian background coincidences: with signal fraction
/// ρ = S/(S+B), g²_raw = 1 - ρ² + ρ² g²_true, inverted here for g²_true.
pub fn correct_g2(g2_raw: f64, signal_rate: f64, background_rate: f64) -> Result<G2Result> {
    if g2_raw < 0.0 {
        return Err(Error::invalid("raw g² must be non-negative"));
    }
    if signal_rate < 0.0 || background_rate < 0.0 {
        return Err(Error::invalid("rates must be non-negative"));
    }
    let total = signal_rate + background_rate;
    if total <= 0.0 {
        return Err(Error::invalid("signal and background rates are both zero"));
    }
    let rho = signal_rate / total;
    if rho == 0.0 {
        return Err(Error::invalid("signal fraction is zero; nothing to correct"));
    }
    let corrected = (g2_raw - (1.0 - rho * rho)) / (rho * rho);
    let clamped = corrected < 0.0;
    Ok(G2Result {
        g2_raw,
        g2_corrected: corrected.max(0.0),
        rho,
        clamped,
    })
}

/// Group index from the free spectral range of Fabry-Perot resonances:
/// n_g = c / (2 Δν L), one point per adjacent resonance pair, placed at the
/// midpoint frequency.
pub fn ng_from_fsr(resonance_thz: &[f64], length_um: f64) -> Result<crate::bands::GroupIndexCurve> {
    if resonance_thz.len() < 2 {
        return Err(Error::invalid("need at least two resonances"));
    }
    if length_um <= 0.0 {
        return Err(Error::invalid("resonator length must be positive"));
    }
    let mut nu = Vec::with_capacity(resonance_thz.len() - 1);
    let mut ng = Vec::with_capacity(resonance_thz.len() - 1);
    for w in resonance_thz.windows(2) {
        let dv = w[1] - w[0];
        if dv <= 0.0 {
            return Err(Error::invalid("resonances must be strictly increasing (duplicates?)"));
        }
        nu.push(0.5 * (w[0] + w[1]));
        ng.push(C_M_PER_S / (2.0 * dv * 1e12 * length_um * 1e-6));
    }
    Ok(crate::bands::GroupIndexCurve {
        nu_thz: nu,
        ng,
        omitted_nu_thz: Vec::new(),
    })
}

/// Reciprocal dispersion fit n_g(ν) = A/(ν - ν_e).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReciprocalFit {
    pub a_thz: f64,
    pub nu_e_thz: f64,
    pub sigma_a: f64,
    pub sigma_nu_e: f64,
    pub goodness: f64,
}

pub fn fit_reciprocal(curve: &crate::bands::GroupIndexCurve) -> Result<ReciprocalFit> {
    let nu = &curve.nu_thz;
    let ng = &curve.ng;
    if nu.len() < 3 {
        return Err(Error::invalid("need at least 3 points for the reciprocal fit"));
    }
    let spread = ng.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ng.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread <= 1e-9 * ng[0].abs() {
        return Err(Error::FitFailure {
            residual: spread,
            iterations: 0,
        });
    }
    // two-point initialization: n1(ν1-νe) = n2(ν2-νe)
    let (n1, v1) = (ng[0], nu[0]);
    let (n2, v2) = (ng[ng.len() - 1], nu[nu.len() - 1]);
    let nu_e0 = (n1 * v1 - n2 * v2) / (n1 - n2);
    let a0 = n1 * (v1 - nu_e0);
    let model = |p: &[f64], x: f64| p[0] / (x - p[1]);
    let jac = |p: &[f64], x: f64| {
        let d = x - p[1];
        vec![1.0 / d, p[0] / (d * d)]
    };
    let fit: LsqFit = least_squares(model, jac, nu, ng, &[a0, nu_e0], 200)?;
    let p = &fit.params;
    if !p[1].is_finite() || p[1] >= nu[0] {
        return Err(Error::FitFailure {
            residual: fit.residual_norm,
            iterations: fit.iterations,
        });
    }
    Ok(ReciprocalFit {
        a_thz: p[0],
        nu_e_thz: p[1],
        sigma_a: fit.sigmas[0],
        sigma_nu_e: fit.sigmas[1],
        goodness: fit.reduced_chi2.sqrt(),
    })
}

/// Fraction of photons detected on the Z1 transition, from filtered and
/// unfiltered line amplitudes and the calibrated filter transmission.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchingEstimate {
    pub value: f64,
    pub sigma: f64,
    /// Values above one are kept (measurement noise) but flagged.
    pub exceeds_unity: bool,
}

pub fn branching_from_filter(
    i_filter: f64,
    sigma_i_filter: f64,
    i_0: f64,
    sigma_i_0: f64,
    chi: f64,
    sigma_chi: f64,
) -> Result<BranchingEstimate> {
    if i_0 <= 0.0 {
        return Err(Error::invalid("unfiltered amplitude must be positive"));
    }
    if !(chi > 0.0 && chi <= 1.0) {
        return Err(Error::invalid("filter transmission must lie in (0, 1]"));
    }
    if i_filter < 0.0 {
        return Err(Error::invalid("filtered amplitude must be non-negative"));
    }
    let value = i_filter / (i_0 * chi);
    let rel2 = if i_filter > 0.0 {
        (sigma_i_filter / i_filter).powi(2) + (sigma_i_0 / i_0).powi(2) + (sigma_chi / chi).powi(2)
    } else {
        0.0
    };
    Ok(BranchingEstimate {
        value,
        sigma: value * rel2.sqrt(),
        exceeds_unity: value > 1.0,
    })
}

/// Verdict of the filtering-only hypothesis test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilteringTestReport {
    pub bound: f64,
    pub bound_sigma: f64,
    pub measured: f64,
    pub measured_sigma: f64,
    /// (measured - bound) / sqrt(σ_b² + σ_m²); negative when measured is
    /// below the bound.
    pub excess_sigma: f64,
    pub rejected: bool,
}

/// Compare the unchanged-branching detection bound from the efficiency chain
/// with a measured detection probability; the filtering-only hypothesis is
/// rejected when the measurement exceeds the bound by more than 3σ.
pub fn filtering_hypothesis_test(
    chain: &EfficiencyChain,
    measured_p: f64,
    measured_sigma: f64,
) -> Result<FilteringTestReport> {
    let (bound, bound_sigma) = crate::expsim::chain_probability(chain)?;
    let combined = (bound_sigma * bound_sigma + measured_sigma * measured_sigma).sqrt();
    let excess = if combined > 0.0 {
        (measured_p - bound) / combined
    } else if measured_p > bound {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(FilteringTestReport {
        bound,
        bound_sigma,
        measured: measured_p,
        measured_sigma,
        excess_sigma: excess,
        rejected: excess > 3.0,
    })
}
