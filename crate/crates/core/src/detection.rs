//! From an event trajectory to a detected transmission trace.
//!
//! The normalized signal `s` is 1 for an empty coupled manifold and
//! `I_k/I₀` otherwise. Each raw sample is the exact average of `s` over its
//! sample interval, so no telegraph switch is aliased away. White Gaussian
//! noise is added per raw sample, then the detector stage and the digital
//! stage, both single-pole low-pass filters, smooth the record.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::physics::intensity_level;
use crate::sim::EventTrajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    /// Hz.
    pub sample_rate: f64,
    /// -3 dB frequency of the detector stage (Hz).
    pub detector_bandwidth: f64,
    /// -3 dB frequency of the digital post-filter (Hz).
    pub digital_bandwidth: f64,
    /// Standard deviation of the additive noise on each raw sample, in
    /// normalized signal units.
    pub noise_rms: f64,
    /// Factor from normalized signal to `|⟨a⟩|`, normally `√n̄`.
    pub amplitude_scale: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            sample_rate: 1.0e4,
            detector_bandwidth: 1.0e3,
            digital_bandwidth: 100.0,
            noise_rms: 0.18,
            amplitude_scale: 0.02f64.sqrt(),
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = self.sample_rate > 2.0 * self.detector_bandwidth
            && self.detector_bandwidth > self.digital_bandwidth
            && self.digital_bandwidth > 0.0;
        if !(ordered && self.sample_rate.is_finite()) {
            return Err(Error::param(
                "detection",
                "need sample_rate > 2*detector_bandwidth > 2*digital_bandwidth > 0",
            ));
        }
        if !(self.noise_rms.is_finite() && self.noise_rms >= 0.0) {
            return Err(Error::param(
                "detection.noise_rms",
                "must be finite and >= 0",
            ));
        }
        if !(self.amplitude_scale.is_finite() && self.amplitude_scale > 0.0) {
            return Err(Error::param(
                "detection.amplitude_scale",
                "must be finite and > 0",
            ));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }
}

/// Piecewise-constant signal: `initial` from `t_start`, then each
/// `(time, level)` step holds until the next one or `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSignal {
    pub t_start: f64,
    pub t_end: f64,
    pub initial: f64,
    pub steps: Vec<(f64, f64)>,
}

impl PiecewiseSignal {
    pub fn constant(level: f64, t_start: f64, t_end: f64) -> Self {
        Self {
            t_start,
            t_end,
            initial: level,
            steps: Vec::new(),
        }
    }

    /// Exact mean over `[t_start, t_end]`.
    pub fn time_average(&self) -> f64 {
        let mut acc = 0.0;
        let mut level = self.initial;
        let mut cur = self.t_start;
        for &(t, l) in &self.steps {
            acc += level * (t - cur);
            cur = t;
            level = l;
        }
        acc += level * (self.t_end - cur);
        acc / (self.t_end - self.t_start)
    }
}

/// Map a trajectory onto normalized transmission levels. Only level changes
/// are kept; a loss event that leaves `k` unchanged adds no step.
pub fn render_levels(traj: &EventTrajectory, i1_over_i0: f64) -> PiecewiseSignal {
    let initial = intensity_level(traj.initial.k as usize, i1_over_i0);
    let mut steps = Vec::new();
    let mut k = traj.initial.k;
    for e in &traj.events {
        if e.state.k != k {
            k = e.state.k;
            steps.push((e.time, intensity_level(k as usize, i1_over_i0)));
        }
    }
    PiecewiseSignal {
        t_start: traj.t_start,
        t_end: traj.t_end,
        initial,
        steps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    /// Empty cavity at 1.
    Normalized,
    /// `|⟨a⟩|`, i.e. normalized times `amplitude_scale`.
    Amplitude,
}

impl Units {
    pub fn as_str(self) -> &'static str {
        match self {
            Units::Normalized => "normalized",
            Units::Amplitude => "amplitude",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normalized" => Some(Units::Normalized),
            "amplitude" => Some(Units::Amplitude),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub seed: Option<u64>,
    pub units: Units,
    pub amplitude_scale: f64,
    /// Bandwidths (Hz) of the low-pass stages applied so far, in order.
    pub filters: Vec<f64>,
    /// Free-form provenance, e.g. the rate model that produced the trace.
    pub extra: BTreeMap<String, String>,
}

impl Default for TraceMeta {
    fn default() -> Self {
        Self {
            seed: None,
            units: Units::Normalized,
            amplitude_scale: 1.0,
            filters: Vec::new(),
            extra: BTreeMap::new(),
        }
    }
}

/// Uniformly sampled detection record. Sample `i` sits at `t0 + i·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub t0: f64,
    pub samples: Vec<f64>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn new(dt: f64, t0: f64, samples: Vec<f64>) -> Result<Self> {
        let trace = Self {
            dt,
            t0,
            samples,
            meta: TraceMeta::default(),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0 && self.t0.is_finite()) {
            return Err(Error::param("trace", "dt must be > 0 and t0 finite"));
        }
        if self.samples.is_empty() {
            return Err(Error::param("trace", "no samples"));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trace samples"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// End of the last sample interval.
    pub fn t_end(&self) -> f64 {
        self.time_at(self.samples.len())
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    /// Index of the sample whose interval contains `t`, if any.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let x = ((t - self.t0) / self.dt).floor();
        if x >= 0.0 && (x as usize) < self.samples.len() {
            Some(x as usize)
        } else {
            None
        }
    }

    /// The same record in `|⟨a⟩|` units.
    pub fn to_amplitude(&self) -> Trace {
        match self.meta.units {
            Units::Amplitude => self.clone(),
            Units::Normalized => {
                let scale = self.meta.amplitude_scale;
                let mut out = self.clone();
                out.samples.iter_mut().for_each(|v| *v *= scale);
                out.meta.units = Units::Amplitude;
                out
            }
        }
    }

    /// The same record in normalized units.
    pub fn to_normalized(&self) -> Trace {
        match self.meta.units {
            Units::Normalized => self.clone(),
            Units::Amplitude => {
                let scale = self.meta.amplitude_scale;
                let mut out = self.clone();
                out.samples.iter_mut().for_each(|v| *v /= scale);
                out.meta.units = Units::Normalized;
                out
            }
        }
    }
}

/// Single-pole low-pass filter, exact for input held constant over each
/// sample interval: `y += (1 − e^(−2πB·dt))·(x − y)`.
///
/// The state starts at the first input, so a constant record passes through
/// unchanged from the first sample on.
#[derive(Debug, Clone)]
pub struct LowPass {
    alpha: f64,
    state: Option<f64>,
}

impl LowPass {
    pub fn new(bandwidth: f64, sample_rate: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0 && bandwidth < sample_rate / 2.0) {
            return Err(Error::param(
                "bandwidth",
                format!(
                    "need 0 < {bandwidth} < sample_rate/2 = {}",
                    sample_rate / 2.0
                ),
            ));
        }
        let alpha = -(-2.0 * PI * bandwidth / sample_rate).exp_m1();
        Ok(Self { alpha, state: None })
    }

    pub fn update(&mut self, x: f64) -> f64 {
        let y = match self.state {
            None => x,
            Some(y) => y + self.alpha * (x - y),
        };
        self.state = Some(y);
        y
    }

    pub fn reset(&mut self) {
        self.state = None;
    }
}

/// Apply one low-pass stage at `bandwidth` Hz and record it in the metadata.
pub fn filter_trace(trace: &Trace, bandwidth: f64) -> Result<Trace> {
    let mut lp = LowPass::new(bandwidth, trace.sample_rate())?;
    let mut out = trace.clone();
    out.samples.iter_mut().for_each(|v| *v = lp.update(*v));
    out.meta.filters.push(bandwidth);
    Ok(out)
}

/// Apply the stage at `bandwidth` unless the trace already carries it.
pub fn ensure_filtered(trace: &Trace, bandwidth: f64) -> Result<Trace> {
    if trace.meta.filters.contains(&bandwidth) {
        Ok(trace.clone())
    } else {
        filter_trace(trace, bandwidth)
    }
}

/// Exact average of `signal` over each interval `[t0 + i·dt, t0 + (i+1)·dt)`.
fn integrate_onto_grid(signal: &PiecewiseSignal, dt: f64, n: usize) -> Vec<f64> {
    let t0 = signal.t_start;
    let mut out = Vec::with_capacity(n);
    let mut level = signal.initial;
    let mut steps = signal.steps.iter().peekable();
    for i in 0..n {
        let a = t0 + i as f64 * dt;
        let b = t0 + (i + 1) as f64 * dt;
        let mut cur = a;
        let mut acc = 0.0;
        while let Some(&&(ts, next)) = steps.peek() {
            if ts >= b {
                break;
            }
            if ts > cur {
                acc += level * (ts - cur);
                cur = ts;
            }
            level = next;
            steps.next();
        }
        acc += level * (b - cur);
        out.push(acc / (b - a));
    }
    out
}

/// Raw detector record: interval averages plus noise, through the detector
/// stage only.
pub fn detect_raw(signal: &PiecewiseSignal, cfg: &DetectionConfig, seed: u64) -> Result<Trace> {
    cfg.validate()?;
    let dt = cfg.dt();
    let span = signal.t_end - signal.t_start;
    // tolerate representation error in span/dt before flooring
    let n = (span / dt * (1.0 + 1e-12)).floor();
    if !(n >= 1.0) {
        return Err(Error::SpanTooShort { span, dt });
    }
    let mut samples = integrate_onto_grid(signal, dt, n as usize);
    if cfg.noise_rms > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in samples.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += cfg.noise_rms * z;
        }
    }
    let trace = Trace {
        dt,
        t0: signal.t_start,
        samples,
        meta: TraceMeta {
            seed: Some(seed),
            units: Units::Normalized,
            amplitude_scale: cfg.amplitude_scale,
            filters: Vec::new(),
            extra: BTreeMap::new(),
        },
    };
    filter_trace(&trace, cfg.detector_bandwidth)
}

/// Full detection chain: [`detect_raw`] followed by the digital stage.
pub fn sample_and_detect(
    signal: &PiecewiseSignal,
    cfg: &DetectionConfig,
    seed: u64,
) -> Result<Trace> {
    let raw = detect_raw(signal, cfg, seed)?;
    filter_trace(&raw, cfg.digital_bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_trajectory, Event, InitialDistribution, RateModel, State};

    fn quiet() -> DetectionConfig {
        DetectionConfig {
            noise_rms: 0.0,
            ..DetectionConfig::default()
        }
    }

    fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    fn variance(xs: &[f64]) -> f64 {
        let m = mean(xs);
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    }

    fn fixed_k(k: u32) -> EventTrajectory {
        EventTrajectory {
            t_start: 0.0,
            t_end: 1.0,
            initial: State::new(k, k),
            events: vec![],
        }
    }

    #[test]
    fn render_constant_levels() {
        let s = render_levels(&fixed_k(0), 3.6e-4);
        assert_eq!(s.initial, 1.0);
        assert!(s.steps.is_empty());
        let s = render_levels(&fixed_k(1), 3.6e-4);
        assert_eq!(s.initial, 3.6e-4);
    }

    #[test]
    fn render_alternating_averages_to_half() {
        let events = (1..100)
            .map(|i| Event {
                time: i as f64 * 0.01,
                state: State::new(1, (i % 2) as u32),
            })
            .collect();
        let traj = EventTrajectory {
            t_start: 0.0,
            t_end: 1.0,
            initial: State::new(1, 0),
            events,
        };
        let s = render_levels(&traj, 1e-15);
        assert_close!(s.time_average(), 0.5, 1e-12);
    }

    #[test]
    fn render_skips_loss_without_level_change() {
        let traj = EventTrajectory {
            t_start: 0.0,
            t_end: 1.0,
            initial: State::new(2, 1),
            events: vec![
                Event {
                    time: 0.2,
                    state: State::new(1, 1),
                },
                Event {
                    time: 0.5,
                    state: State::new(0, 0),
                },
            ],
        };
        let s = render_levels(&traj, 0.01);
        assert_eq!(s.steps, vec![(0.5, 1.0)]);
    }

    #[test]
    fn interval_averaging_is_exact() {
        let sig = PiecewiseSignal {
            t_start: 0.0,
            t_end: 3e-4,
            initial: 0.0,
            steps: vec![(0.25e-4, 1.0), (0.5e-4, 0.0), (1.5e-4, 1.0)],
        };
        let got = integrate_onto_grid(&sig, 1e-4, 3);
        assert_close!(got[0], 0.25, 1e-12);
        assert_close!(got[1], 0.5, 1e-12);
        assert_close!(got[2], 1.0, 1e-12);
    }

    #[test]
    fn dc_passes_unchanged() {
        let sig = PiecewiseSignal::constant(1.0, 0.0, 0.5);
        let trace = sample_and_detect(&sig, &quiet(), 1).unwrap();
        assert_eq!(trace.len(), 5000);
        assert!(trace.samples.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert_eq!(trace.meta.filters, vec![1000.0, 100.0]);
    }

    #[test]
    fn noise_is_zero_mean() {
        let cfg = DetectionConfig {
            noise_rms: 0.05,
            ..DetectionConfig::default()
        };
        let sig = PiecewiseSignal::constant(0.4, 0.0, 20.0);
        let trace = sample_and_detect(&sig, &cfg, 9).unwrap();
        // effective independent samples ≈ duration / (2 τ) with τ = 1/(2π·100 Hz)
        let tau = 1.0 / (2.0 * PI * 100.0);
        let n_eff = 20.0 / (2.0 * tau);
        let sigma = variance(&trace.samples).sqrt();
        assert!((mean(&trace.samples) - 0.4).abs() < 3.0 * sigma / n_eff.sqrt());
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = DetectionConfig::default();
        let sig = PiecewiseSignal::constant(0.5, 0.0, 0.1);
        let a = sample_and_detect(&sig, &cfg, 4).unwrap();
        let b = sample_and_detect(&sig, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_and_detect(&sig, &cfg, 5).unwrap());
    }

    #[test]
    fn telegraph_averages_to_steady_state() {
        let rates = RateModel {
            gamma_loss: 0.0,
            ..RateModel::default()
        };
        let traj =
            simulate_trajectory(&rates, &InitialDistribution::Fixed(1), (0.0, 2.0), 21).unwrap();
        let sig = render_levels(&traj, rates.i1_over_i0);
        let trace = sample_and_detect(&sig, &quiet(), 0).unwrap();
        let settled = &trace.samples[1000..];
        let p0 = (2.0 + rates.i1_over_i0) / 3.0;
        let rms =
            (settled.iter().map(|v| (v - p0).powi(2)).sum::<f64>() / settled.len() as f64).sqrt();
        assert!(rms < 0.05, "ripple rms {rms}");
        assert_close!(mean(settled), p0, 0.01);
    }

    #[test]
    fn plateau_mean_matches_prediction() {
        let rates = RateModel {
            gamma_loss: 0.0,
            ..RateModel::default()
        };
        let traj =
            simulate_trajectory(&rates, &InitialDistribution::Fixed(2), (0.0, 2.0), 5).unwrap();
        let trace = sample_and_detect(
            &render_levels(&traj, rates.i1_over_i0),
            &DetectionConfig::default(),
            6,
        )
        .unwrap();
        let settled = &trace.samples[500..];
        // noise plus telegraph ripple, ≈ 0.045 rms after both stages
        let tau = 1.0 / (2.0 * PI * 100.0);
        let n_eff = 1.95 / (2.0 * tau);
        let bound = 3.0 * variance(settled).sqrt() / n_eff.sqrt();
        assert!((mean(settled) - 0.4).abs() < bound + 1e-3);
    }

    #[test]
    fn step_response_reaches_one_over_e() {
        // fine grid so the time constant is resolved to well under 2%
        for bandwidth in [1000.0, 100.0] {
            let fs = 1.0e6;
            let n = (20.0 / bandwidth * fs) as usize;
            let mut samples = vec![0.0; n];
            let onset = 100;
            samples[onset..].iter_mut().for_each(|v| *v = 1.0);
            let trace = Trace::new(1.0 / fs, 0.0, samples).unwrap();
            let out = filter_trace(&trace, bandwidth).unwrap();
            let target = 1.0 - (-1.0f64).exp();
            let first = out.samples.iter().position(|v| *v >= target).unwrap();
            // output index j after the onset reflects (j + 1) samples of input
            let t_cross = (first - onset + 1) as f64 / fs;
            let tau = 1.0 / (2.0 * PI * bandwidth);
            assert!((t_cross - tau).abs() / tau < 0.02, "{t_cross} vs {tau}");
            assert_close!(*out.samples.last().unwrap(), 1.0, 1e-9);
        }
    }

    #[test]
    fn step_is_exact_exponential_on_sample_grid() {
        let fs = 1.0e4;
        let mut samples = vec![0.0; 200];
        samples[10..].iter_mut().for_each(|v| *v = 1.0);
        let out = filter_trace(&Trace::new(1.0 / fs, 0.0, samples).unwrap(), 1000.0).unwrap();
        let tau = 1.0 / (2.0 * PI * 1000.0);
        for j in 0..20 {
            let t = (j + 1) as f64 / fs;
            assert_close!(out.samples[10 + j], 1.0 - (-t / tau).exp(), 1e-12);
        }
    }

    #[test]
    fn white_noise_variance_reduction() {
        let fs = 1.0e4;
        let b = 100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let input_var = variance(&samples);
        let out = filter_trace(&Trace::new(1.0 / fs, 0.0, samples).unwrap(), b).unwrap();
        let x = PI * b / fs;
        let expected = input_var * x / (1.0 + x);
        let got = variance(&out.samples[1000..]);
        assert!((got / expected - 1.0).abs() < 0.10, "{got} vs {expected}");
    }

    #[test]
    fn default_noise_after_cascade() {
        let cfg = DetectionConfig::default();
        let sig = PiecewiseSignal::constant(0.0, 0.0, 50.0);
        let trace = sample_and_detect(&sig, &cfg, 2).unwrap();
        let sigma = variance(&trace.samples[1000..]).sqrt();
        assert!((sigma - 0.03).abs() < 0.003, "{sigma}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let sig = PiecewiseSignal::constant(1.0, 0.0, 5e-5);
        assert!(matches!(
            sample_and_detect(&sig, &quiet(), 0),
            Err(Error::SpanTooShort { .. })
        ));
        let trace = Trace::new(1e-4, 0.0, vec![1.0; 10]).unwrap();
        assert!(filter_trace(&trace, 5000.0).is_err());
        assert!(filter_trace(&trace, 0.0).is_err());
        let bad = DetectionConfig {
            detector_bandwidth: 50.0,
            ..DetectionConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(Trace::new(1e-4, 0.0, vec![]).is_err());
        assert!(Trace::new(1e-4, 0.0, vec![f64::NAN]).is_err());
    }

    #[test]
    fn ensure_filtered_is_idempotent() {
        let trace = Trace::new(1e-4, 0.0, (0..100).map(|i| (i % 3) as f64).collect()).unwrap();
        let once = ensure_filtered(&trace, 100.0).unwrap();
        let twice = ensure_filtered(&once, 100.0).unwrap();
        assert_eq!(once, twice);
        assert_eq!(twice.meta.filters, vec![100.0]);
    }

    #[test]
    fn amplitude_conversion_is_elementwise_scale() {
        let sig = PiecewiseSignal::constant(0.7, 0.0, 0.01);
        let trace = sample_and_detect(&sig, &DetectionConfig::default(), 3).unwrap();
        let amp = trace.to_amplitude();
        let scale = 0.02f64.sqrt();
        for (a, n) in amp.samples.iter().zip(&trace.samples) {
            assert_eq!(*a, n * scale);
        }
        assert_eq!(amp.meta.units, Units::Amplitude);
    }
}
