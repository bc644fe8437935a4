//! Zero-phase second-order Butterworth lowpass for LDOS spectra.
//!
//! The filter runs as a biquad difference equation applied forward and
//! backward over the frequency bins, so the net response is the squared
//! magnitude |H(f)|² with no phase shift. The biquad coefficients are
//! designed so |H(f)| reproduces the analog second-order Butterworth
//! magnitude 1/sqrt(1 + (f/fc)^4): a bilinear-transform design warps badly
//! above ~0.3 Nyquist, so starting from it we least-squares match |H|² to
//! the analog response on a dense frequency grid and then pin the DC gain
//! to exactly one.

use crate::numeric::least_squares;
use crate::{Error, Result};

/// Normalized biquad y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2]
///                        - a1 y[n-1] - a2 y[n-2].
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Magnitude-squared response at digital frequency w in rad/sample.
    pub fn mag2(&self, w: f64) -> f64 {
        let (c1, s1) = (w.cos(), w.sin());
        let (c2, s2) = ((2.0 * w).cos(), (2.0 * w).sin());
        let nr = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let ni = -(self.b[1] * s1 + self.b[2] * s2);
        let dr = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let di = -(self.a[0] * s1 + self.a[1] * s2);
        (nr * nr + ni * ni) / (dr * dr + di * di)
    }

    pub fn is_stable(&self) -> bool {
        let (a1, a2) = (self.a[0], self.a[1]);
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }

    /// One forward pass with the given initial conditions (direct form II
    /// transposed). `zi` is scaled by the caller.
    fn filter(&self, x: &[f64], zi: [f64; 2]) -> Vec<f64> {
        let mut z1 = zi[0];
        let mut z2 = zi[1];
        let mut out = Vec::with_capacity(x.len());
        for &xi in x {
            let y = self.b[0] * xi + z1;
            z1 = self.b[1] * xi - self.a[0] * y + z2;
            z2 = self.b[2] * xi - self.a[1] * y;
            out.push(y);
        }
        out
    }

    /// Steady-state initial condition per unit step input.
    fn zi_unit(&self) -> [f64; 2] {
        [
            self.b[1] + self.b[2] - self.a[0] - self.a[1],
            self.b[2] - self.a[1],
        ]
    }
}

/// Bilinear-transform second-order Butterworth; the least-squares starting
/// point. `cutoff` is the cutoff as a fraction of Nyquist.
fn bilinear_butter2(cutoff: f64) -> Biquad {
    let k = (std::f64::consts::FRAC_PI_2 * cutoff).tan();
    let sqrt2 = std::f64::consts::SQRT_2;
    let norm = k * k + sqrt2 * k + 1.0;
    Biquad {
        b: [k * k / norm, 2.0 * k * k / norm, k * k / norm],
        a: [2.0 * (k * k - 1.0) / norm, (k * k - sqrt2 * k + 1.0) / norm],
    }
}

/// Design the analog-magnitude-matched biquad for a cutoff given as a
/// fraction of the Nyquist frequency.
pub fn design_butterworth2(cutoff_frac_nyquist: f64) -> Result<Biquad> {
    if !(0.02..=0.45).contains(&cutoff_frac_nyquist) {
        return Err(Error::invalid(
            "Butterworth cutoff must lie in [0.02, 0.45] of Nyquist",
        ));
    }
    let wc = cutoff_frac_nyquist * std::f64::consts::PI;
    let n_grid = 600;
    let ws: Vec<f64> = (0..n_grid)
        .map(|i| 0.95 * std::f64::consts::PI * i as f64 / (n_grid - 1) as f64)
        .collect();
    // weighted target: emphasize the band up to 0.85π where the acceptance
    // band (0..0.8π in tests) lives
    let weight = |w: f64| if w <= 0.85 * std::f64::consts::PI { 1.0 } else { 0.3 };
    let target: Vec<f64> = ws
        .iter()
        .map(|&w| weight(w) / (1.0 + (w / wc).powi(4)))
        .collect();
    let model = |p: &[f64], w: f64| -> f64 {
        let bq = Biquad {
            b: [p[0], p[1], p[2]],
            a: [p[3], p[4]],
        };
        weight(w) * bq.mag2(w)
    };
    let jac = |p: &[f64], w: f64| -> Vec<f64> {
        let mut g = vec![0.0; 5];
        let f0 = model(p, w);
        for i in 0..5 {
            let h = 1e-7 * p[i].abs().max(1e-3);
            let mut pp = p.to_vec();
            pp[i] += h;
            g[i] = (model(&pp, w) - f0) / h;
        }
        g
    };
    let start = bilinear_butter2(cutoff_frac_nyquist);
    let p0 = [start.b[0], start.b[1], start.b[2], start.a[0], start.a[1]];
    let fit = least_squares(model, jac, &ws, &target, &p0, 200)?;
    let p = fit.params;
    let mut bq = Biquad {
        b: [p[0], p[1], p[2]],
        a: [p[3], p[4]],
    };
    // pin DC gain to exactly 1
    let dc = (bq.b[0] + bq.b[1] + bq.b[2]) / (1.0 + bq.a[0] + bq.a[1]);
    for b in &mut bq.b {
        *b /= dc;
    }
    if !bq.is_stable() {
        return Err(Error::numerical("matched Butterworth design is unstable"));
    }
    Ok(bq)
}

/// Padding used by the forward-backward pass; sequences must be longer than
/// this for the transient to be absorbed.
pub const FILTFILT_PAD: usize = 12;

/// Zero-phase (forward-backward) filtering with odd-reflection padding of
/// [`FILTFILT_PAD`] samples on each end.
pub fn filtfilt(bq: &Biquad, x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < FILTFILT_PAD + 1 {
        return Err(Error::invalid(format!(
            "need at least {} samples (got {n}); the filter transient exceeds the record",
            FILTFILT_PAD + 1
        )));
    }
    let mut padded = Vec::with_capacity(n + 2 * FILTFILT_PAD);
    for i in (1..=FILTFILT_PAD).rev() {
        padded.push(2.0 * x[0] - x[i]);
    }
    padded.extend_from_slice(x);
    for i in 1..=FILTFILT_PAD {
        padded.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let zi = bq.zi_unit();
    let scale = |v: f64| [zi[0] * v, zi[1] * v];
    let fwd = bq.filter(&padded, scale(padded[0]));
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    let z0 = scale(rev[0]);
    rev = bq.filter(&rev, z0);
    rev.reverse();
    Ok(rev[FILTFILT_PAD..FILTFILT_PAD + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dc_gain_is_exactly_one() {
        let bq = design_butterworth2(0.2).unwrap();
        let dc = (bq.b[0] + bq.b[1] + bq.b[2]) / (1.0 + bq.a[0] + bq.a[1]);
        assert_relative_eq!(dc, 1.0, epsilon = 1e-15);
        let x = vec![3.7; 64];
        let y = filtfilt(&bq, &x).unwrap();
        for v in y {
            assert_relative_eq!(v, 3.7, epsilon = 1e-9);
        }
    }

    #[test]
    fn matched_design_tracks_analog_magnitude() {
        let bq = design_butterworth2(0.2).unwrap();
        let wc = 0.2 * std::f64::consts::PI;
        let mut worst: f64 = 0.0;
        for i in 0..=400 {
            let w = 0.8 * std::f64::consts::PI * i as f64 / 400.0;
            let target = 1.0 / (1.0 + (w / wc).powi(4));
            worst = worst.max((bq.mag2(w) - target).abs());
        }
        assert!(worst < 1e-3, "max |H|² error {worst:.2e}");
    }

    #[test]
    fn impulse_response_matches_direct_biquad_recursion() {
        // oracle: evaluate the difference equation directly, forward then
        // backward, on the same padded record
        let bq = design_butterworth2(0.2).unwrap();
        let n = 512;
        let mut x = vec![0.0; n];
        x[n / 2] = 1.0;
        let got = filtfilt(&bq, &x).unwrap();

        let run = |input: &[f64]| -> Vec<f64> {
            let mut y = Vec::with_capacity(input.len());
            let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
            for &xi in input {
                let yi = bq.b[0] * xi + bq.b[1] * x1 + bq.b[2] * x2 - bq.a[0] * y1 - bq.a[1] * y2;
                x2 = x1;
                x1 = xi;
                y2 = y1;
                y1 = yi;
                y.push(yi);
            }
            y
        };
        let fwd = run(&x);
        let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
        rev = run(&rev);
        rev.reverse();
        for (g, o) in got.iter().zip(&rev) {
            assert!((g - o).abs() < 1e-12, "{g} vs {o}");
        }
        // DC gain 1 twice over: the impulse response sums to 1
        let sum: f64 = got.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "impulse sum {sum}");
    }

    #[test]
    fn rejects_short_records() {
        let bq = design_butterworth2(0.2).unwrap();
        assert!(filtfilt(&bq, &vec![1.0; FILTFILT_PAD]).is_err());
        assert!(filtfilt(&bq, &vec![1.0; FILTFILT_PAD + 1]).is_ok());
    }

    #[test]
    fn tone_suppression_and_passband_fidelity() {
        // smooth curve + oscillation at 0.45 Nyquist: oscillation drops by
        // >= 20 dB while the smooth part deforms by < 2%
        let bq = design_butterworth2(0.2).unwrap();
        let n = 1024;
        let smooth: Vec<f64> = (0..n).map(|i| 2.0 + (i as f64 / n as f64 * 2.2).sin()).collect();
        let tone_amp = 0.5;
        let x: Vec<f64> = smooth
            .iter()
            .enumerate()
            .map(|(i, &s)| s + tone_amp * (std::f64::consts::PI * 0.45 * i as f64).sin())
            .collect();
        let y = filtfilt(&bq, &x).unwrap();
        // residual oscillation amplitude in the interior
        let mut osc_max: f64 = 0.0;
        let mut smooth_err: f64 = 0.0;
        let smooth_filtered = filtfilt(&bq, &smooth).unwrap();
        for i in n / 8..7 * n / 8 {
            osc_max = osc_max.max((y[i] - smooth_filtered[i]).abs());
            smooth_err = smooth_err.max((smooth_filtered[i] - smooth[i]).abs() / smooth[i].abs());
        }
        assert!(osc_max < tone_amp * 0.1, "oscillation residual {osc_max}"); // -20 dB
        assert!(smooth_err < 0.02, "smooth deformation {smooth_err}");
    }
}
