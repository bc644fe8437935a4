//! Two-level optical Bloch equations under a linearly chirped pulse, and
//! the excitation probability averaged over a Lorentzian spectral-diffusion
//! line.
//!
//! State (u, v, w) in the rotating frame with detuning Δ(t) and Rabi
//! frequency Ω (both rad/µs):
//!
//!   u' = -Δ v,   v' = Δ u + Ω w,   w' = -Ω v
//!
//! starting from w = -1. The excited-state population is (w+1)/2. Without
//! dephasing the Bloch vector stays on the unit sphere, which is checked at
//! every accepted integrator step.

use serde::{Deserialize, Serialize};

use crate::numeric::integrate_rk45;
use crate::{Error, Result};

use super::PulseSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DephasingMode {
    /// Coherent evolution; the Lorentzian average runs over static
    /// detunings (slow spectral diffusion).
    Slow,
    /// Rate-equation limit for dephasing faster than the pulse: population
    /// transfer saturates at 1/2.
    Fast,
}

/// Excited-state population after one chirped pulse at a fixed detuning
/// (MHz), fully coherent.
pub fn chirped_pulse_population(
    rabi_mhz: f64,
    pulse_length_us: f64,
    chirp_width_mhz: f64,
    detuning_mhz: f64,
) -> Result<f64> {
    if rabi_mhz < 0.0 {
        return Err(Error::invalid("Rabi frequency must be >= 0"));
    }
    if rabi_mhz == 0.0 {
        return Ok(0.0);
    }
    let omega = std::f64::consts::TAU * rabi_mhz;
    let t_p = pulse_length_us;
    let delta = move |t: f64| {
        std::f64::consts::TAU * (detuning_mhz + chirp_width_mhz * (t / t_p - 0.5))
    };
    let rhs = move |t: f64, y: &[f64; 3]| {
        let d = delta(t);
        [-d * y[1], d * y[0] + omega * y[2], -omega * y[1]]
    };
    let y = integrate_rk45(rhs, [0.0, 0.0, -1.0], 0.0, t_p, 1e-8, 1e-10, |_, y| {
        let norm = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
        if norm > 1.0 + 1e-9 {
            return Err(Error::numerical(format!(
                "Bloch vector left the unit sphere: |r|² = {norm}"
            )));
        }
        Ok(())
    })?;
    Ok(((y[2] + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Rate-equation population for fast dephasing: p' = R(t)(1 - 2p) with
/// R = (Ω²/2) γ₂ / (γ₂² + Δ(t)²), γ₂ the half-linewidth of the (now
/// homogeneously broadened) line.
fn fast_dephasing_population(
    rabi_mhz: f64,
    pulse_length_us: f64,
    chirp_width_mhz: f64,
    line_fwhm_mhz: f64,
) -> Result<f64> {
    if rabi_mhz == 0.0 {
        return Ok(0.0);
    }
    let omega = std::f64::consts::TAU * rabi_mhz;
    let gamma2 = std::f64::consts::PI * line_fwhm_mhz.max(1e-6); // rad/µs
    let t_p = pulse_length_us;
    let rhs = move |t: f64, y: &[f64; 1]| {
        let d = std::f64::consts::TAU * chirp_width_mhz * (t / t_p - 0.5);
        let r = 0.5 * omega * omega * gamma2 / (gamma2 * gamma2 + d * d);
        [r * (1.0 - 2.0 * y[0])]
    };
    let y = integrate_rk45(rhs, [0.0], 0.0, t_p, 1e-8, 1e-12, |_, _| Ok(()))?;
    Ok(y[0].clamp(0.0, 0.5))
}

/// Number of quantile nodes for the Lorentzian detuning average.
const LORENTZIAN_NODES: usize = 101;

/// Mean excitation probability of an emitter whose frequency wanders over a
/// Lorentzian of the given FWHM, driven by the sequence's chirped pulse.
pub fn excitation_probability(
    rabi_mhz: f64,
    seq: &PulseSequence,
    diffusion_fwhm_mhz: f64,
    mode: DephasingMode,
) -> Result<f64> {
    if rabi_mhz < 0.0 {
        return Err(Error::invalid("Rabi frequency must be >= 0"));
    }
    if rabi_mhz == 0.0 {
        return Ok(0.0);
    }
    match mode {
        DephasingMode::Fast => fast_dephasing_population(
            rabi_mhz,
            seq.pulse_length_us,
            seq.chirp_width_mhz,
            diffusion_fwhm_mhz,
        ),
        DephasingMode::Slow => {
            if diffusion_fwhm_mhz <= 0.0 {
                return chirped_pulse_population(rabi_mhz, seq.pulse_length_us, seq.chirp_width_mhz, 0.0);
            }
            // equal-weight quantile quadrature of the Lorentzian: the
            // midpoint quantiles map to detunings (Γ/2) tan(π(u - 1/2)),
            // handling the heavy tails without explicit weights
            let gamma_half = 0.5 * diffusion_fwhm_mhz;
            let mut acc = 0.0;
            for j in 0..LORENTZIAN_NODES {
                let u = (j as f64 + 0.5) / LORENTZIAN_NODES as f64;
                let delta = gamma_half * (std::f64::consts::PI * (u - 0.5)).tan();
                acc += chirped_pulse_population(
                    rabi_mhz,
                    seq.pulse_length_us,
                    seq.chirp_width_mhz,
                    delta,
                )?;
            }
            Ok(acc / LORENTZIAN_NODES as f64)
        }
    }
}

/// Bisection for the Rabi frequency that reaches a target mean excitation
/// probability; used to bracket the regime the measured pulses operated in.
pub fn rabi_for_target_excitation(
    target: f64,
    seq: &PulseSequence,
    diffusion_fwhm_mhz: f64,
    mode: DephasingMode,
    bracket_mhz: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let (mut lo, mut hi) = bracket_mhz;
    let f_lo = excitation_probability(lo, seq, diffusion_fwhm_mhz, mode)?;
    let f_hi = excitation_probability(hi, seq, diffusion_fwhm_mhz, mode)?;
    if (f_lo - target) * (f_hi - target) > 0.0 {
        return Err(Error::numerical(format!(
            "target {target} not bracketed: η({lo}) = {f_lo:.4}, η({hi}) = {f_hi:.4}"
        )));
    }
    let rising = f_hi > f_lo;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let f_mid = excitation_probability(mid, seq, diffusion_fwhm_mhz, mode)?;
        if (f_mid - target).abs() < tol {
            return Ok(mid);
        }
        if (f_mid > target) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn plain_seq(pulse_us: f64, chirp_mhz: f64) -> PulseSequence {
        PulseSequence {
            pulse_length_us: pulse_us,
            chirp_width_mhz: chirp_mhz,
            repetitions: 1,
            detection_window_us: 1.0,
            rep_period_us: 10.0,
            laser_detuning_grid_mhz: vec![0.0],
        }
    }

    #[test]
    fn zero_rabi_means_zero_excitation() {
        let seq = plain_seq(2.0, 10.0);
        assert_eq!(excitation_probability(0.0, &seq, 23.0, DephasingMode::Slow).unwrap(), 0.0);
        assert_eq!(excitation_probability(0.0, &seq, 23.0, DephasingMode::Fast).unwrap(), 0.0);
    }

    #[test]
    fn resonant_pi_pulse_inverts() {
        // Ω T = π with no chirp: full inversion
        let t = 2.0;
        let rabi = 0.5 / t; // Ω = 2π·rabi, Ω·T = π
        let p = chirped_pulse_population(rabi, t, 0.0, 0.0).unwrap();
        assert_relative_eq!(p, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn detuned_rabi_matches_closed_form() {
        // P = Ω²/(Ω²+Δ²) sin²(√(Ω²+Δ²) T / 2)
        let t = 1.3;
        for (rabi, det) in [(0.4, 0.0), (0.7, 0.3), (0.2, 0.9), (1.1, -0.6)] {
            let omega = std::f64::consts::TAU * rabi;
            let delta = std::f64::consts::TAU * det;
            let gen = (omega * omega + delta * delta).sqrt();
            let expect = omega * omega / (gen * gen) * (0.5 * gen * t).sin().powi(2);
            let got = chirped_pulse_population(rabi, t, 0.0, det).unwrap();
            assert_relative_eq!(got, expect, epsilon = 1e-4);
        }
    }

    #[test]
    fn excitation_bounded_and_monotone_weak_drive() {
        let seq = plain_seq(2.0, 10.0);
        let mut last = 0.0;
        // pulse areas up to π/2: Ω T ≤ π/2 -> rabi ≤ 1/(4T)
        for i in 1..=6 {
            let rabi = i as f64 / 6.0 * 0.125;
            let p = excitation_probability(rabi, &seq, 23.0, DephasingMode::Slow).unwrap();
            assert!(p <= 1.0);
            assert!(p >= last, "η not monotone at weak drive: {p} < {last}");
            last = p;
        }
    }

    #[test]
    fn fast_mode_saturates_at_half() {
        let seq = plain_seq(2.0, 10.0);
        let p = excitation_probability(50.0, &seq, 23.0, DephasingMode::Fast).unwrap();
        assert!(p <= 0.5 + 1e-12);
        assert!(p > 0.45, "strong drive should saturate: {p}");
    }
}
