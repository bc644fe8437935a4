//! Synthetic pulsed resonant-fluorescence experiments.
//!
//! Emitters are repeatedly excited by chirped laser pulses while their
//! transition frequencies wander (spectral diffusion); fluorescence photons
//! survive a chain of collection efficiencies and land on a detector with
//! dark counts. The output is a time-tag stream, the raw material for
//! spectra, lifetime histograms and g² correlation analysis.

pub mod bloch;

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::FluorescenceSpectrum;
use crate::emitter::EmitterInstance;
use crate::{Error, Result};

pub use bloch::{chirped_pulse_population, excitation_probability, rabi_for_target_excitation, DephasingMode};

/// Pulse train parameters of the experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence {
    pub pulse_length_us: f64,
    pub chirp_width_mhz: f64,
    pub repetitions: usize,
    /// Fluorescence is recorded within this window after each pulse.
    pub detection_window_us: f64,
    /// Pulse-to-pulse period; not stated in the measurements, defaulted to
    /// window plus margin.
    pub rep_period_us: f64,
    pub laser_detuning_grid_mhz: Vec<f64>,
}

impl Default for PulseSequence {
    fn default() -> Self {
        PulseSequence {
            pulse_length_us: 2.0,
            chirp_width_mhz: 10.0,
            repetitions: 8000,
            detection_window_us: 600.0,
            rep_period_us: 700.0,
            laser_detuning_grid_mhz: Vec::new(),
        }
    }
}

impl PulseSequence {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::invalid("need at least one repetition"));
        }
        if self.detection_window_us > self.rep_period_us - self.pulse_length_us {
            return Err(Error::invalid(
                "detection window must fit between pulses (window <= period - pulse)",
            ));
        }
        Ok(())
    }
}

/// Every efficiency between excitation and detector click, with 1σ
/// uncertainties for the budget arithmetic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyChain {
    pub eta_exc: f64,
    pub p_z1: f64,
    pub beta: f64,
    pub eta_sc: f64,
    pub eta_ftc: f64,
    pub eta_ft: f64,
    pub eta_bs: f64,
    pub eta_os: f64,
    pub eta_flt: f64,
    pub eta_qe: f64,
    #[serde(default)]
    pub sigma_eta_exc: f64,
    #[serde(default)]
    pub sigma_p_z1: f64,
    #[serde(default)]
    pub sigma_beta: f64,
    #[serde(default)]
    pub sigma_eta_sc: f64,
    #[serde(default)]
    pub sigma_eta_ftc: f64,
    #[serde(default)]
    pub sigma_eta_ft: f64,
    #[serde(default)]
    pub sigma_eta_bs: f64,
    #[serde(default)]
    pub sigma_eta_os: f64,
    #[serde(default)]
    pub sigma_eta_flt: f64,
    #[serde(default)]
    pub sigma_eta_qe: f64,
}

impl EfficiencyChain {
    /// Published best-case budget: 50% excitation, bulk branching 23±5%,
    /// unity waveguide coupling, and the independently characterized losses
    /// of the detection path.
    pub fn paper_values() -> Self {
        EfficiencyChain {
            eta_exc: 0.50,
            p_z1: 0.23,
            beta: 1.0,
            eta_sc: 0.92,
            eta_ftc: 0.73,
            eta_ft: 0.90,
            eta_bs: 0.95,
            eta_os: 0.78,
            eta_flt: 0.476,
            eta_qe: 0.75,
            sigma_eta_exc: 0.0,
            sigma_p_z1: 0.05,
            sigma_beta: 0.0,
            sigma_eta_sc: 0.02,
            sigma_eta_ftc: 0.04,
            sigma_eta_ft: 0.01,
            sigma_eta_bs: 0.015,
            sigma_eta_os: 0.01,
            sigma_eta_flt: 0.005,
            sigma_eta_qe: 0.05,
        }
    }

    fn terms(&self) -> [(f64, f64); 10] {
        [
            (self.eta_exc, self.sigma_eta_exc),
            (self.p_z1, self.sigma_p_z1),
            (self.beta, self.sigma_beta),
            (self.eta_sc, self.sigma_eta_sc),
            (self.eta_ftc, self.sigma_eta_ftc),
            (self.eta_ft, self.sigma_eta_ft),
            (self.eta_bs, self.sigma_eta_bs),
            (self.eta_os, self.sigma_eta_os),
            (self.eta_flt, self.sigma_eta_flt),
            (self.eta_qe, self.sigma_eta_qe),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (v, s) in self.terms() {
            if !(0.0..=1.0).contains(&v) || s < 0.0 {
                return Err(Error::invalid("chain terms must lie in [0, 1] with σ >= 0"));
            }
        }
        Ok(())
    }

    /// Optical path from the waveguide to the detector click, excluding
    /// excitation, branching, and the tunable filter (those are handled
    /// per-photon by the simulator).
    pub fn detection_path_probability(&self) -> f64 {
        self.beta * self.eta_sc * self.eta_ftc * self.eta_ft * self.eta_bs * self.eta_os * self.eta_qe
    }
}

/// Product of all chain terms with first-order uncertainty (relative σ in
/// quadrature).
pub fn chain_probability(chain: &EfficiencyChain) -> Result<(f64, f64)> {
    chain.validate()?;
    let mut p = 1.0;
    for (v, _) in chain.terms() {
        p *= v;
    }
    let mut rel2 = 0.0;
    if p > 0.0 {
        for (v, s) in chain.terms() {
            if s > 0.0 {
                rel2 += (s / v) * (s / v);
            }
        }
    }
    Ok((p, p * rel2.sqrt()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub dark_count_rate_hz: f64,
    /// Detector quantum efficiency; carried for budget wiring. The
    /// simulator takes the optical+detector efficiency from the chain's
    /// eta_qe so the two are never double-counted.
    pub quantum_efficiency: f64,
    pub dead_time_ns: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            dark_count_rate_hz: 100.0,
            quantum_efficiency: 0.75,
            dead_time_ns: 0.0,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if self.dark_count_rate_hz < 0.0 || self.dead_time_ns < 0.0 {
            return Err(Error::invalid("detector parameters must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return Err(Error::invalid("quantum efficiency must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// How likely a pulse excites an emitter at a given detuning: a unit-peak
/// Lorentzian profile around the laser. The default width is the Fourier
/// scale of the pulse, narrow against spectral diffusion, so the measured
/// line reproduces the diffusion linewidth; a Bloch-computed profile can
/// replace it for realism studies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationModel {
    pub peak_probability: f64,
    pub profile_fwhm_mhz: f64,
}

impl ExcitationModel {
    pub fn for_sequence(seq: &PulseSequence) -> Self {
        ExcitationModel {
            peak_probability: 0.5,
            profile_fwhm_mhz: 1.0 / seq.pulse_length_us,
        }
    }

    fn probability(&self, detuning_mhz: f64) -> f64 {
        let hw = 0.5 * self.profile_fwhm_mhz;
        self.peak_probability * hw * hw / (detuning_mhz * detuning_mhz + hw * hw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagOrigin {
    Signal,
    Dark,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimeTag {
    pub pulse_index: u32,
    pub time_us: f64,
    pub origin: TagOrigin,
}

/// Detection events of one pulsed run, sorted by (pulse, time).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeTagStream {
    pub events: Vec<TimeTag>,
    pub seq: PulseSequence,
    pub seed: u64,
    pub laser_detuning_mhz: f64,
}

impl TimeTagStream {
    const MAGIC: &'static [u8; 8] = b"PCWTTS01";

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        for v in [
            self.seq.pulse_length_us,
            self.seq.chirp_width_mhz,
            self.seq.detection_window_us,
            self.seq.rep_period_us,
            self.laser_detuning_mhz,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.seq.repetitions as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.events.len() as u64).to_le_bytes())?;
        for e in &self.events {
            w.write_all(&e.pulse_index.to_le_bytes())?;
            w.write_all(&e.time_us.to_le_bytes())?;
            w.write_all(&[match e.origin {
                TagOrigin::Signal => 0u8,
                TagOrigin::Dark => 1u8,
            }])?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse("not a PCWTTS01 stream".into()));
        }
        let mut b8 = [0u8; 8];
        let mut scal = [0f64; 5];
        for s in &mut scal {
            r.read_exact(&mut b8)?;
            *s = f64::from_le_bytes(b8);
        }
        r.read_exact(&mut b8)?;
        let repetitions = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut events = Vec::with_capacity(n.min(1 << 28));
        let mut b4 = [0u8; 4];
        let mut b1 = [0u8; 1];
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            let pulse_index = u32::from_le_bytes(b4);
            r.read_exact(&mut b8)?;
            let time_us = f64::from_le_bytes(b8);
            r.read_exact(&mut b1)?;
            let origin = match b1[0] {
                0 => TagOrigin::Signal,
                1 => TagOrigin::Dark,
                other => return Err(Error::Parse(format!("bad origin tag {other}"))),
            };
            events.push(TimeTag {
                pulse_index,
                time_us,
                origin,
            });
        }
        Ok(TimeTagStream {
            events,
            seq: PulseSequence {
                pulse_length_us: scal[0],
                chirp_width_mhz: scal[1],
                repetitions,
                detection_window_us: scal[2],
                rep_period_us: scal[3],
                laser_detuning_grid_mhz: Vec::new(),
            },
            seed,
            laser_detuning_mhz: scal[4],
        })
    }

    pub fn write_binary_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn read_binary_file(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "pulse_index,time_us,origin")?;
        for e in &self.events {
            writeln!(
                w,
                "{},{},{}",
                e.pulse_index,
                e.time_us,
                match e.origin {
                    TagOrigin::Signal => "signal",
                    TagOrigin::Dark => "dark",
                }
            )?;
        }
        Ok(())
    }

    /// Delay histogram of signal+dark events over the detection window.
    pub fn delay_histogram(&self, n_bins: usize) -> (Vec<f64>, Vec<f64>) {
        let width = self.seq.detection_window_us / n_bins as f64;
        let mut counts = vec![0.0; n_bins];
        for e in &self.events {
            let b = ((e.time_us / width) as usize).min(n_bins - 1);
            counts[b] += 1.0;
        }
        let centers = (0..n_bins).map(|i| (i as f64 + 0.5) * width).collect();
        (centers, counts)
    }
}

/// One emitter as the stream simulator sees it: its spectral parameters plus
/// the modified lifetime and branching from the decay model.
#[derive(Debug, Clone)]
pub struct StreamEmitter {
    pub detuning_mhz: f64,
    pub diffusion_fwhm_mhz: f64,
    pub tau_us: f64,
    pub p_z1: f64,
}

impl StreamEmitter {
    pub fn from_instance(instance: &EmitterInstance, tau_us: f64, p_z1: f64) -> Self {
        StreamEmitter {
            detuning_mhz: instance.detuning_ghz * 1e3,
            diffusion_fwhm_mhz: instance.spectral_diffusion_fwhm_mhz,
            tau_us,
            p_z1,
        }
    }
}

fn cauchy_draw<R: Rng>(rng: &mut R, fwhm: f64) -> f64 {
    if fwhm <= 0.0 {
        return 0.0;
    }
    let u: f64 = rng.gen_range(0.0..1.0);
    0.5 * fwhm * (std::f64::consts::PI * (u - 0.5)).tan()
}

/// Simulate one pulsed run at a fixed laser detuning.
///
/// Per repetition and emitter: the instantaneous frequency is the static
/// detuning plus an i.i.d. Lorentzian diffusion draw; excitation is
/// Bernoulli with the excitation profile evaluated at the offset from the
/// laser; on excitation one photon is emitted after an Exp(τ') delay
/// (at most one per pulse) and is detected with the chain's detection-path
/// probability, gated by the narrowband filter when `filter_on` (only Z1
/// photons pass, with probability eta_flt). Dark counts are Poissonian over
/// the window. Fixed seeds give byte-identical streams; repetitions carry
/// independent RNG streams so parallel evaluation cannot reorder draws.
pub fn simulate_stream(
    emitters: &[StreamEmitter],
    seq: &PulseSequence,
    excitation: &ExcitationModel,
    chain: &EfficiencyChain,
    detector: &DetectorModel,
    filter_on: bool,
    laser_detuning_mhz: f64,
    seed: u64,
) -> Result<TimeTagStream> {
    seq.validate()?;
    chain.validate()?;
    detector.validate()?;
    let path_prob = chain.detection_path_probability();
    let dark_mean = detector.dark_count_rate_hz * seq.detection_window_us * 1e-6;

    let per_rep: Vec<Vec<TimeTag>> = (0..seq.repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            let mut events: Vec<TimeTag> = Vec::new();
            for em in emitters {
                let freq = em.detuning_mhz + cauchy_draw(&mut rng, em.diffusion_fwhm_mhz);
                let p_exc = excitation.probability(freq - laser_detuning_mhz);
                if rng.gen_range(0.0..1.0f64) >= p_exc {
                    continue;
                }
                let delay = -em.tau_us * rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln();
                if delay > seq.detection_window_us {
                    continue; // decays after the window closes
                }
                let mut p_detect = path_prob;
                if filter_on {
                    let on_z1 = rng.gen_range(0.0..1.0f64) < em.p_z1;
                    p_detect = if on_z1 { p_detect * chain.eta_flt } else { 0.0 };
                }
                if p_detect > 0.0 && rng.gen_range(0.0..1.0f64) < p_detect {
                    events.push(TimeTag {
                        pulse_index: rep as u32,
                        time_us: delay,
                        origin: TagOrigin::Signal,
                    });
                }
            }
            if dark_mean > 0.0 {
                let n_dark = Poisson::new(dark_mean).unwrap().sample(&mut rng) as usize;
                for _ in 0..n_dark {
                    events.push(TimeTag {
                        pulse_index: rep as u32,
                        time_us: rng.gen_range(0.0..seq.detection_window_us),
                        origin: TagOrigin::Dark,
                    });
                }
            }
            events.sort_by(|a, b| a.time_us.partial_cmp(&b.time_us).unwrap());
            if detector.dead_time_ns > 0.0 {
                let dead_us = detector.dead_time_ns * 1e-3;
                let mut kept: Vec<TimeTag> = Vec::with_capacity(events.len());
                for e in events {
                    if kept.last().map_or(true, |k| e.time_us - k.time_us >= dead_us) {
                        kept.push(e);
                    }
                }
                events = kept;
            }
            events
        })
        .collect();

    Ok(TimeTagStream {
        events: per_rep.into_iter().flatten().collect(),
        seq: seq.clone(),
        seed,
        laser_detuning_mhz,
    })
}

/// Sweep the laser over the sequence's detuning grid and record the mean
/// detected counts per pulse at each point.
pub fn scan_spectrum(
    emitters: &[StreamEmitter],
    seq: &PulseSequence,
    excitation: &ExcitationModel,
    chain: &EfficiencyChain,
    detector: &DetectorModel,
    seed: u64,
) -> Result<FluorescenceSpectrum> {
    if seq.laser_detuning_grid_mhz.is_empty() {
        return Err(Error::invalid("laser detuning grid is empty"));
    }
    let counts: Result<Vec<f64>> = seq
        .laser_detuning_grid_mhz
        .par_iter()
        .enumerate()
        .map(|(i, &det)| {
            let sub_seed = seed ^ ((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let stream = simulate_stream(emitters, seq, excitation, chain, detector, false, det, sub_seed)?;
            Ok(stream.events.len() as f64 / seq.repetitions as f64)
        })
        .collect();
    Ok(FluorescenceSpectrum {
        detuning_mhz: seq.laser_detuning_grid_mhz.clone(),
        counts_per_pulse: counts?,
        dark_floor: detector.dark_count_rate_hz * seq.detection_window_us * 1e-6,
    })
}

/// Pulsed g² histogram over pulse-separation lags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct G2Histogram {
    pub lags: Vec<i64>,
    pub g2: Vec<f64>,
    /// Raw (uncorrected) zero-delay value.
    pub g2_zero_raw: f64,
    pub total_events: usize,
}

impl G2Histogram {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lag_pulses,g2")?;
        for (l, g) in self.lags.iter().zip(&self.g2) {
            writeln!(w, "{l},{g}")?;
        }
        Ok(())
    }
}

/// Photon coincidences between pulses separated by Δ pulses, normalized by
/// the mean of the |Δ| >= 1 lags. Zero delay counts ordered pairs within a
/// pulse (n(n-1)), so a Poissonian stream gives g² = 1 at every lag and a
/// single emitter with at most one photon per pulse gives g²(0) = 0.
pub fn g2_from_stream(stream: &TimeTagStream, max_lag_pulses: usize) -> Result<G2Histogram> {
    if stream.events.len() < 2 {
        return Err(Error::invalid("need at least two events for g²"));
    }
    let n_pulses = stream.seq.repetitions;
    if max_lag_pulses == 0 || max_lag_pulses >= n_pulses {
        return Err(Error::invalid("max lag must lie in 1..repetitions"));
    }
    let mut counts = vec![0.0f64; n_pulses];
    for e in &stream.events {
        counts[e.pulse_index as usize] += 1.0;
    }
    let norm_at = |lag: usize| -> f64 {
        let mut acc = 0.0;
        if lag == 0 {
            for &n in &counts {
                acc += n * (n - 1.0);
            }
            acc / n_pulses as f64
        } else {
            for p in 0..n_pulses - lag {
                acc += counts[p] * counts[p + lag];
            }
            acc / (n_pulses - lag) as f64
        }
    };
    let c0 = norm_at(0);
    let side: Vec<f64> = (1..=max_lag_pulses).map(norm_at).collect();
    let baseline = side.iter().sum::<f64>() / side.len() as f64;
    if baseline <= 0.0 {
        return Err(Error::numerical("no coincidences at nonzero lags; cannot normalize"));
    }
    let mut lags = Vec::with_capacity(2 * max_lag_pulses + 1);
    let mut g2 = Vec::with_capacity(2 * max_lag_pulses + 1);
    for l in (1..=max_lag_pulses).rev() {
        lags.push(-(l as i64));
        g2.push(side[l - 1] / baseline);
    }
    lags.push(0);
    g2.push(c0 / baseline);
    for l in 1..=max_lag_pulses {
        lags.push(l as i64);
        g2.push(side[l - 1] / baseline);
    }
    Ok(G2Histogram {
        lags,
        g2,
        g2_zero_raw: c0 / baseline,
        total_events: stream.events.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_seq(reps: usize) -> PulseSequence {
        PulseSequence {
            repetitions: reps,
            ..Default::default()
        }
    }

    fn no_loss_chain() -> EfficiencyChain {
        EfficiencyChain {
            eta_exc: 1.0,
            p_z1: 0.23,
            beta: 1.0,
            eta_sc: 1.0,
            eta_ftc: 1.0,
            eta_ft: 1.0,
            eta_bs: 1.0,
            eta_os: 1.0,
            eta_flt: 1.0,
            eta_qe: 1.0,
            ..EfficiencyChain::paper_values()
        }
    }

    #[test]
    fn chain_probability_paper_budget() {
        let (p, sigma) = chain_probability(&EfficiencyChain::paper_values()).unwrap();
        assert_relative_eq!(p, 0.0184, epsilon = 5e-5); // 1.84%
        assert_relative_eq!(sigma, 0.0043, epsilon = 1e-4); // 0.43%
        // degenerate cases
        let mut zero = EfficiencyChain::paper_values();
        zero.eta_os = 0.0;
        assert_eq!(chain_probability(&zero).unwrap().0, 0.0);
        let ones = no_loss_chain();
        let mut ones = ones;
        ones.p_z1 = 1.0;
        assert_eq!(chain_probability(&ones).unwrap().0, 1.0);
    }

    #[test]
    fn stream_determinism() {
        let seq = test_seq(200);
        let em = StreamEmitter {
            detuning_mhz: 0.0,
            diffusion_fwhm_mhz: 20.0,
            tau_us: 200.0,
            p_z1: 0.8,
        };
        let exc = ExcitationModel::for_sequence(&seq);
        let chain = EfficiencyChain::paper_values();
        let det = DetectorModel::default();
        let s1 = simulate_stream(&[em.clone()], &seq, &exc, &chain, &det, false, 0.0, 7).unwrap();
        let s2 = simulate_stream(&[em], &seq, &exc, &chain, &det, false, 0.0, 7).unwrap();
        assert_eq!(s1.events.len(), s2.events.len());
        for (a, b) in s1.events.iter().zip(&s2.events) {
            assert_eq!(a.pulse_index, b.pulse_index);
            assert_eq!(a.time_us.to_bits(), b.time_us.to_bits());
        }
    }

    #[test]
    fn dark_only_stream_is_poissonian() {
        let seq = test_seq(4000);
        let det = DetectorModel {
            dark_count_rate_hz: 1000.0,
            ..Default::default()
        };
        let chain = EfficiencyChain {
            beta: 0.0,
            ..EfficiencyChain::paper_values()
        };
        let stream = simulate_stream(&[], &seq, &ExcitationModel::for_sequence(&seq), &chain, &det, false, 0.0, 3).unwrap();
        // expected count = rate * window * reps, within 3 sigma
        let mean = det.dark_count_rate_hz * seq.detection_window_us * 1e-6;
        let expect = mean * seq.repetitions as f64;
        let got = stream.events.len() as f64;
        assert!(
            (got - expect).abs() < 3.0 * expect.sqrt() + 1.0,
            "dark counts {got} vs expected {expect}"
        );
        assert!(stream.events.iter().all(|e| e.origin == TagOrigin::Dark));
        // Poissonian: g² = 1 at every lag within statistics
        let g2 = g2_from_stream(&stream, 8).unwrap();
        for (l, g) in g2.lags.iter().zip(&g2.g2) {
            assert!((g - 1.0).abs() < 0.25, "g²({l}) = {g}");
        }
    }

    #[test]
    fn single_emitter_antibunches() {
        let seq = test_seq(6000);
        let em = StreamEmitter {
            detuning_mhz: 0.0,
            diffusion_fwhm_mhz: 0.0,
            tau_us: 100.0,
            p_z1: 0.9,
        };
        let mut exc = ExcitationModel::for_sequence(&seq);
        exc.peak_probability = 1.0;
        let chain = no_loss_chain();
        let det = DetectorModel {
            dark_count_rate_hz: 0.0,
            ..Default::default()
        };
        let stream = simulate_stream(&[em], &seq, &exc, &chain, &det, false, 0.0, 11).unwrap();
        assert!(stream.events.len() > 4000);
        let g2 = g2_from_stream(&stream, 10).unwrap();
        assert_eq!(g2.g2_zero_raw, 0.0);
        for (l, g) in g2.lags.iter().zip(&g2.g2) {
            if *l != 0 {
                assert!((g - 1.0).abs() < 0.15, "g²({l}) = {g}");
            }
        }
    }

    #[test]
    fn exponential_delay_statistics() {
        // delays follow Exp(τ'); the MLE of τ is the sample mean
        let seq = PulseSequence {
            repetitions: 60_000,
            detection_window_us: 3000.0,
            rep_period_us: 3010.0,
            ..Default::default()
        };
        let tau = 295.0;
        let em = StreamEmitter {
            detuning_mhz: 0.0,
            diffusion_fwhm_mhz: 0.0,
            tau_us: tau,
            p_z1: 1.0,
        };
        let mut exc = ExcitationModel::for_sequence(&seq);
        exc.peak_probability = 1.0;
        let chain = no_loss_chain();
        let det = DetectorModel {
            dark_count_rate_hz: 0.0,
            ..Default::default()
        };
        let stream = simulate_stream(&[em], &seq, &exc, &chain, &det, false, 0.0, 17).unwrap();
        let n = stream.events.len() as f64;
        assert!(n > 50_000.0);
        let mean = stream.events.iter().map(|e| e.time_us).sum::<f64>() / n;
        // window is 10τ; truncation bias on the mean is below 0.5%
        assert_relative_eq!(mean, tau, max_relative = 0.02);
    }

    #[test]
    fn filter_scales_detection_by_branching_times_transmission() {
        let seq = test_seq(40_000);
        let em = StreamEmitter {
            detuning_mhz: 0.0,
            diffusion_fwhm_mhz: 0.0,
            tau_us: 50.0,
            p_z1: 0.9,
        };
        let mut exc = ExcitationModel::for_sequence(&seq);
        exc.peak_probability = 1.0;
        let mut chain = no_loss_chain();
        chain.eta_flt = 0.476;
        let det = DetectorModel {
            dark_count_rate_hz: 0.0,
            ..Default::default()
        };
        let open = simulate_stream(&[em.clone()], &seq, &exc, &chain, &det, false, 0.0, 23).unwrap();
        let filt = simulate_stream(&[em], &seq, &exc, &chain, &det, true, 0.0, 29).unwrap();
        let ratio = filt.events.len() as f64 / open.events.len() as f64;
        let expect = 0.9 * 0.476;
        assert!(
            (ratio - expect).abs() < 0.02,
            "filter ratio {ratio} vs p_z1·χ = {expect}"
        );
    }

    #[test]
    fn stream_binary_roundtrip() {
        let seq = test_seq(100);
        let em = StreamEmitter {
            detuning_mhz: 3.0,
            diffusion_fwhm_mhz: 20.0,
            tau_us: 150.0,
            p_z1: 0.7,
        };
        let stream = simulate_stream(
            &[em],
            &seq,
            &ExcitationModel::for_sequence(&seq),
            &EfficiencyChain::paper_values(),
            &DetectorModel::default(),
            false,
            1.5,
            99,
        )
        .unwrap();
        let mut buf = Vec::new();
        stream.write_binary(&mut buf).unwrap();
        let back = TimeTagStream::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.events.len(), stream.events.len());
        assert_eq!(back.seed, 99);
        assert_eq!(back.laser_detuning_mhz, 1.5);
        for (a, b) in stream.events.iter().zip(&back.events) {
            assert_eq!(a.pulse_index, b.pulse_index);
            assert_eq!(a.time_us.to_bits(), b.time_us.to_bits());
            assert_eq!(a.origin, b.origin);
        }
    }

    #[test]
    fn rate_additivity_over_sources() {
        // expected events = emitter expectation + dark expectation
        let seq = test_seq(20_000);
        let em = StreamEmitter {
            detuning_mhz: 0.0,
            diffusion_fwhm_mhz: 0.0,
            tau_us: 60.0,
            p_z1: 1.0,
        };
        let mut exc = ExcitationModel::for_sequence(&seq);
        exc.peak_probability = 0.4;
        let chain = no_loss_chain();
        let det = DetectorModel {
            dark_count_rate_hz: 500.0,
            ..Default::default()
        };
        let stream = simulate_stream(&[em], &seq, &exc, &chain, &det, false, 0.0, 31).unwrap();
        let p_window = 1.0 - (-seq.detection_window_us / 60.0f64).exp();
        let expect_signal = 0.4 * p_window * seq.repetitions as f64;
        let expect_dark = 500.0 * seq.detection_window_us * 1e-6 * seq.repetitions as f64;
        let expect = expect_signal + expect_dark;
        let got = stream.events.len() as f64;
        assert!(
            (got - expect).abs() < 3.0 * expect.sqrt(),
            "events {got} vs {expect}"
        );
    }
}
