//! Experiment families: drive-amplitude regimes, amplitude and detuning
//! sweeps, and the continuous versus gated pump comparison.
//!
//! Everything here runs in `f64`. Sweep points are independent and run on
//! the rayon pool; results come back in axis order.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrator::{integrate, InitialCondition, IntegrationConfig, IntegrationError, ModelKind};
use crate::model::{
    larmor_frequency, triplet_prediction, DressedPrediction, FieldDrive, ModelError, PhysicalParams,
};
use crate::sequencer::{standard_pulse, Event, PulseSequence, PumpMode, SequenceError};
use crate::spectral::{
    envelope, extract_triplet, modulation_depth, observable, power_spectrum, ObservableSeries,
    trim_edges, SpectralError, Spectrum, TripletFeatures, Window,
};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("invalid sweep axis: {0}")]
    InvalidAxis(String),
    #[error("{found} points with resolved sidebands, at least {required} required")]
    TooFewPoints { found: usize, required: usize },
    #[error("{0}")]
    Unsupported(String),
}

/// Spectral analysis settings shared by every run of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub window: Window,
    pub zero_pad_factor: usize,
    /// Relative prominence below which a line is unfound.
    pub min_prominence: f64,
    /// Half-width of the sideband search around the center, Hz.
    pub search_halfwidth: f64,
    pub weight_mu_prime: f64,
    /// Gated-pump claim holds when center/max(sideband) falls below this.
    pub suppression_threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            window: Window::Hann,
            zero_pad_factor: 4,
            min_prominence: 0.05,
            search_halfwidth: 4.0,
            weight_mu_prime: 0.0,
            suppression_threshold: 0.15,
        }
    }
}

/// Timing of the drive and pump shutter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SequenceSpec {
    /// Optional lead-in, one drive pulse, optional free evolution.
    Standard {
        #[serde(default)]
        before: f64,
        pulse: f64,
        #[serde(default)]
        after: f64,
        #[serde(default = "continuous")]
        pump_mode: PumpMode,
    },
    Explicit {
        events: Vec<Event<f64>>,
        total_duration: f64,
    },
}

fn continuous() -> PumpMode {
    PumpMode::Continuous
}

impl SequenceSpec {
    pub fn build(&self, drive: FieldDrive<f64>, pump: f64) -> Result<PulseSequence<f64>, SequenceError> {
        let seq = match self {
            SequenceSpec::Standard {
                before,
                pulse,
                after,
                pump_mode,
            } => standard_pulse(*before, *pulse, *after, drive, *pump_mode)?,
            SequenceSpec::Explicit {
                events,
                total_duration,
            } => PulseSequence::new(events.clone(), *total_duration, drive, pump)?,
        };
        let seq = seq.with_pump_value(pump);
        seq.validate()?;
        Ok(seq)
    }
}

/// One fully specified run: physics, protocol, numerics and analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub params: PhysicalParams<f64>,
    pub drive: FieldDrive<f64>,
    pub sequence: SequenceSpec,
    #[serde(default)]
    pub integration: IntegrationConfig<f64>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Starting state when the drive is active.
    #[serde(default)]
    pub initial: InitialCondition<f64>,
    /// Starting state when the drive amplitude is zero; the pumped steady
    /// state has no transverse component to precess.
    #[serde(default = "tipped")]
    pub free_decay_initial: InitialCondition<f64>,
    #[serde(default = "reduced")]
    pub model: ModelKind,
}

fn tipped() -> InitialCondition<f64> {
    InitialCondition::Tipped { angle: FRAC_PI_2 }
}

fn reduced() -> ModelKind {
    ModelKind::Reduced
}

impl Experiment {
    /// Resonant 10 s pulse from the pumped steady state at the default rates.
    pub fn resonant(b_static: f64, b_osc: f64) -> Self {
        let params = PhysicalParams::default();
        Experiment {
            drive: FieldDrive::resonant(&params, b_static, b_osc),
            params,
            sequence: SequenceSpec::Standard {
                before: 0.0,
                pulse: 10.0,
                after: 0.0,
                pump_mode: PumpMode::Continuous,
            },
            integration: IntegrationConfig::default(),
            analysis: AnalysisConfig::default(),
            initial: InitialCondition::SteadyState,
            free_decay_initial: tipped(),
            model: ModelKind::Reduced,
        }
    }

    pub fn with_b_osc(&self, b_osc: f64) -> Self {
        let mut e = self.clone();
        e.drive.b_osc = b_osc;
        e
    }

    pub fn with_drive_freq(&self, f: f64) -> Self {
        let mut e = self.clone();
        e.drive.drive_freq = f;
        e
    }

    pub fn with_model(&self, model: ModelKind) -> Self {
        let mut e = self.clone();
        e.model = model;
        e
    }

    pub fn with_pump_mode(&self, mode: PumpMode) -> Result<Self, SweepError> {
        let mut e = self.clone();
        match &mut e.sequence {
            SequenceSpec::Standard { pump_mode, .. } => *pump_mode = mode,
            SequenceSpec::Explicit { .. } => {
                return Err(SweepError::Unsupported(
                    "pump mode can only be switched on a standard sequence".into(),
                ))
            }
        }
        Ok(e)
    }

    pub fn build_sequence(&self) -> Result<PulseSequence<f64>, SequenceError> {
        self.sequence.build(self.drive, self.params.pump_polarization)
    }

    /// Checks every part of the experiment without running it.
    pub fn validate(&self) -> Result<(), SweepError> {
        self.params.validate()?;
        let seq = self.build_sequence()?;
        self.integration.validate_for(&self.params, &seq)?;
        let a = &self.analysis;
        if ![1, 2, 4, 8].contains(&a.zero_pad_factor) {
            return Err(SpectralError::InvalidPadding(a.zero_pad_factor).into());
        }
        for (name, v) in [
            ("min_prominence", a.min_prominence),
            ("search_halfwidth", a.search_halfwidth),
            ("suppression_threshold", a.suppression_threshold),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SpectralError::InvalidSearch(format!("{name} must be positive, got {v}")).into());
            }
        }
        if !a.weight_mu_prime.is_finite() {
            return Err(SpectralError::InvalidSearch("weight_mu_prime must be finite".into()).into());
        }
        Ok(())
    }

    /// Line the analysis centres on: the drive frequency while driving, the
    /// Larmor frequency otherwise.
    pub fn expected_center(&self) -> f64 {
        if self.drive.b_osc > 0.0 {
            self.drive.drive_freq
        } else {
            larmor_frequency(&self.params, self.drive.b_static)
        }
    }
}

/// Everything one run produces.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutput {
    pub trajectory: crate::integrator::Trajectory<f64>,
    /// Observable over the analysis window.
    pub observable: ObservableSeries<f64>,
    pub spectrum: Spectrum<f64>,
    pub features: TripletFeatures<f64>,
    pub envelope: ObservableSeries<f64>,
    pub envelope_depth: f64,
    pub prediction: DressedPrediction<f64>,
    /// Analysis window, s.
    pub window: (f64, f64),
}

/// Runs one experiment: starting state, integration, observable over the
/// first drive window (the whole record if there is none), spectrum,
/// triplet features and envelope depth.
pub fn run(exp: &Experiment) -> Result<RunOutput, SweepError> {
    exp.validate()?;
    let seq = exp.build_sequence()?;
    let driven = seq.has_active_drive();
    let initial = if driven {
        exp.initial
    } else {
        exp.free_decay_initial
    };
    let p = &exp.params;
    let state0 = initial.resolve(p, exp.drive.b_static, p.pump_polarization, exp.model)?;
    let traj = integrate(exp.model, &state0, (0.0, seq.total_duration), p, &seq, &exp.integration)?;
    let window = seq
        .drive_windows()
        .into_iter()
        .find(|(a, b)| b > a)
        .filter(|_| driven)
        .unwrap_or((0.0, seq.total_duration));
    let analysed = traj.window(window.0, window.1);
    let obs = observable(&analysed, exp.analysis.weight_mu_prime);
    let spectrum = power_spectrum(&obs, exp.analysis.window, exp.analysis.zero_pad_factor)?;
    let center = exp.expected_center();
    let features = extract_triplet(
        &spectrum,
        center,
        exp.analysis.search_halfwidth,
        exp.analysis.min_prominence,
    )?;
    let env = envelope(&obs, center)?;
    let envelope_depth = modulation_depth(&trim_edges(&env, center));
    Ok(RunOutput {
        prediction: triplet_prediction(p, &exp.drive),
        trajectory: traj,
        observable: obs,
        spectrum,
        features,
        envelope: env,
        envelope_depth,
        window,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// B_M, nT.
    Amplitude,
    /// ω/2π, Hz.
    Frequency,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub axis_values: Vec<f64>,
    pub spectra: Vec<Spectrum<f64>>,
    pub features: Vec<TripletFeatures<f64>>,
    pub envelope_depths: Vec<f64>,
    pub predictions: Vec<DressedPrediction<f64>>,
}

impl SweepResult {
    pub fn len(&self) -> usize {
        self.axis_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis_values.is_empty()
    }
}

fn check_axis(values: &[f64]) -> Result<(), SweepError> {
    if values.is_empty() {
        return Err(SweepError::InvalidAxis("no axis values".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(SweepError::InvalidAxis(format!("non-finite value {v}")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SweepError::InvalidAxis("values must be strictly increasing".into()));
    }
    Ok(())
}

fn sweep(
    axis: SweepAxis,
    values: &[f64],
    make: impl Fn(f64) -> Experiment + Sync,
) -> Result<SweepResult, SweepError> {
    check_axis(values)?;
    let runs: Vec<RunOutput> = values
        .par_iter()
        .map(|&v| run(&make(v)))
        .collect::<Result<_, _>>()?;
    let mut out = SweepResult {
        axis,
        axis_values: values.to_vec(),
        spectra: Vec::with_capacity(runs.len()),
        features: Vec::with_capacity(runs.len()),
        envelope_depths: Vec::with_capacity(runs.len()),
        predictions: Vec::with_capacity(runs.len()),
    };
    for r in runs {
        out.spectra.push(r.spectrum);
        out.features.push(r.features);
        out.envelope_depths.push(r.envelope_depth);
        out.predictions.push(r.prediction);
    }
    Ok(out)
}

/// Full pipeline at each drive amplitude (nT), other settings from `base`.
pub fn run_regimes(b_m_list: &[f64], base: &Experiment) -> Result<SweepResult, SweepError> {
    sweep(SweepAxis::Amplitude, b_m_list, |b| base.with_b_osc(b))
}

/// Full pipeline at each drive frequency (Hz) with the amplitude fixed.
pub fn run_detuning_sweep(
    freq_list: &[f64],
    b_m: f64,
    base: &Experiment,
) -> Result<SweepResult, SweepError> {
    let base = base.with_b_osc(b_m);
    sweep(SweepAxis::Frequency, freq_list, |f| base.with_drive_freq(f))
}

/// Least-squares line with goodness of fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Fewer than two distinct abscissae, or no spread in the ordinates.
    pub degenerate: bool,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len().min(ys.len());
    let nf = n as f64;
    let mx = xs[..n].iter().sum::<f64>() / nf;
    let my = ys[..n].iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if n < 2 || sxx == 0.0 {
        return LinearFit {
            slope: 0.0,
            intercept: if n > 0 { my } else { 0.0 },
            r_squared: 0.0,
            points: n,
            degenerate: true,
        };
    }
    let slope = sxy / sxx;
    let degenerate = syy == 0.0;
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared: if degenerate { 0.0 } else { sxy * sxy / (sxx * syy) },
        points: n,
        degenerate,
    }
}

/// Splitting versus B_M line through the points with at least one resolved
/// sideband.
pub fn fit_rabi_linearity(result: &SweepResult) -> Result<LinearFit, SweepError> {
    if result.axis != SweepAxis::Amplitude {
        return Err(SweepError::InvalidAxis("linearity fit needs an amplitude sweep".into()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = result
        .axis_values
        .iter()
        .zip(&result.features)
        .filter_map(|(&b, f)| f.splitting.map(|s| (b, s)))
        .unzip();
    if xs.len() < 4 {
        return Err(SweepError::TooFewPoints {
            found: xs.len(),
            required: 4,
        });
    }
    Ok(fit_line(&xs, &ys))
}

/// Measured splittings of a detuning sweep against `√(δω² + Ω_R²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetuningLaw {
    /// RMS of `(measured − predicted)/predicted` over points with a splitting.
    pub rms_relative_error: f64,
    pub points: usize,
    /// Per axis value: exactly one sideband was resolved.
    pub single_sideband: Vec<bool>,
}

pub fn detuning_law(result: &SweepResult) -> Result<DetuningLaw, SweepError> {
    if result.axis != SweepAxis::Frequency {
        return Err(SweepError::InvalidAxis("detuning law needs a frequency sweep".into()));
    }
    let rel: Vec<f64> = result
        .features
        .iter()
        .zip(&result.predictions)
        .filter_map(|(f, p)| f.splitting.map(|s| (s - p.splitting) / p.splitting))
        .collect();
    if rel.is_empty() {
        return Err(SweepError::TooFewPoints {
            found: 0,
            required: 1,
        });
    }
    let single_sideband = result
        .features
        .iter()
        .map(|f| f.found_mask.sideband_low != f.found_mask.sideband_high)
        .collect();
    Ok(DetuningLaw {
        rms_relative_error: (rel.iter().map(|r| r * r).sum::<f64>() / rel.len() as f64).sqrt(),
        points: rel.len(),
        single_sideband,
    })
}

/// Feature sets of two runs that differ only in the pump mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PumpComparison {
    pub continuous: TripletFeatures<f64>,
    pub gated: TripletFeatures<f64>,
    pub continuous_ratio: Option<f64>,
    pub gated_ratio: Option<f64>,
    pub threshold: f64,
    /// Gated ratio below the threshold.
    pub center_suppressed: bool,
    pub continuous_spectrum: Spectrum<f64>,
    pub gated_spectrum: Spectrum<f64>,
    pub gated_envelope_depth: f64,
}

/// Center amplitude over the larger sideband.
///
/// An unfound center is read off the spectrum at the expected center bin,
/// so a suppressed line still gives a ratio.
pub fn center_sideband_ratio(
    features: &TripletFeatures<f64>,
    spectrum: &Spectrum<f64>,
    expected_center: f64,
) -> Option<f64> {
    let side = features.max_sideband_amp()?;
    let center = features
        .center_amp()
        .unwrap_or_else(|| spectrum.magnitudes[spectrum.nearest_bin(expected_center)]);
    Some(center / side)
}

pub fn run_pump_comparison(base: &Experiment) -> Result<PumpComparison, SweepError> {
    let cont = base.with_pump_mode(PumpMode::Continuous)?;
    let gated = base.with_pump_mode(PumpMode::GatedOffDuringDrive)?;
    let (a, b) = rayon::join(|| run(&cont), || run(&gated));
    let (a, b) = (a?, b?);
    let center = base.expected_center();
    let continuous_ratio = center_sideband_ratio(&a.features, &a.spectrum, center);
    let gated_ratio = center_sideband_ratio(&b.features, &b.spectrum, center);
    let threshold = base.analysis.suppression_threshold;
    Ok(PumpComparison {
        continuous: a.features,
        gated: b.features,
        continuous_ratio,
        gated_ratio,
        threshold,
        center_suppressed: gated_ratio.is_some_and(|r| r < threshold),
        continuous_spectrum: a.spectrum,
        gated_spectrum: b.spectrum,
        gated_envelope_depth: b.envelope_depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{FoundMask, Peak};

    fn fake(axis: SweepAxis, values: &[f64], splittings: &[Option<f64>]) -> SweepResult {
        let peak = |freq| Peak {
            freq,
            amp: 1.0,
            prominence: 1.0,
            bin: 0,
        };
        let features = splittings
            .iter()
            .map(|s| TripletFeatures {
                center: Some(peak(4.0)),
                sideband_low: s.map(|d| peak(4.0 - d)),
                sideband_high: s.map(|d| peak(4.0 + d)),
                splitting: *s,
                found_mask: FoundMask {
                    sideband_low: s.is_some(),
                    center: true,
                    sideband_high: s.is_some(),
                },
            })
            .collect();
        let params = PhysicalParams::default();
        SweepResult {
            axis,
            axis_values: values.to_vec(),
            spectra: Vec::new(),
            features,
            envelope_depths: vec![0.0; values.len()],
            predictions: values
                .iter()
                .map(|&f| triplet_prediction(&params, &FieldDrive::new(125.0, 70.0, f)))
                .collect(),
        }
    }

    #[test]
    fn exact_splittings_give_formula_slope() {
        let b: Vec<f64> = (1..=6).map(|k| 25.0 * k as f64).collect();
        let s: Vec<Option<f64>> = b.iter().map(|&b| Some(0.5 * 3200.0 * b * 1e-5)).collect();
        let fit = fit_rabi_linearity(&fake(SweepAxis::Amplitude, &b, &s)).unwrap();
        assert!((fit.slope - 0.016).abs() < 1e-15);
        assert!(fit.intercept.abs() < 1e-13);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(!fit.degenerate);
    }

    #[test]
    fn identical_splittings_are_degenerate() {
        let b = [30.0, 50.0, 70.0, 90.0];
        let fit = fit_rabi_linearity(&fake(SweepAxis::Amplitude, &b, &[Some(0.4); 4])).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 0.0);
        assert!(fit.degenerate);
    }

    #[test]
    fn linearity_needs_four_resolved_points() {
        let b = [30.0, 50.0, 70.0, 90.0, 110.0];
        let s = [Some(0.5), None, Some(1.1), None, Some(1.8)];
        assert!(matches!(
            fit_rabi_linearity(&fake(SweepAxis::Amplitude, &b, &s)),
            Err(SweepError::TooFewPoints { found: 3, required: 4 })
        ));
        let single = fit_line(&[1.0], &[2.0]);
        assert!(single.degenerate);
    }

    #[test]
    fn detuning_law_of_exact_splittings_is_zero() {
        let f = [3.0, 3.5, 4.0, 4.5, 5.0];
        let exp = fake(SweepAxis::Frequency, &f, &[None; 5]);
        let s: Vec<Option<f64>> = exp.predictions.iter().map(|p| Some(p.splitting)).collect();
        let law = detuning_law(&fake(SweepAxis::Frequency, &f, &s)).unwrap();
        assert!(law.rms_relative_error < 1e-15);
        assert_eq!(law.points, 5);
        assert!(law.single_sideband.iter().all(|&x| !x));
        // splitting 1.50 Hz one hertz off resonance at 70 nT
        assert!((exp.predictions[0].splitting - 1.5).abs() < 0.01);
    }

    #[test]
    fn axis_must_increase() {
        let base = Experiment::resonant(125.0, 21.0);
        assert!(matches!(
            run_regimes(&[9.0, 3.0], &base),
            Err(SweepError::InvalidAxis(_))
        ));
        assert!(run_regimes(&[], &base).is_err());
    }

    #[test]
    fn regime_ladder() {
        let base = Experiment::resonant(125.0, 0.0);
        let r = run_regimes(&[0.0, 3.0, 21.0], &base).unwrap();
        let [free, weak, strong] = [&r.features[0], &r.features[1], &r.features[2]];
        assert!(free.found_mask.center && free.splitting.is_none());
        assert!((free.center_freq().unwrap() - 4.0).abs() < 0.05);
        assert!(weak.found_mask.center && weak.splitting.is_none());
        assert!(strong.found_mask.all(), "{strong:?}");
        assert!(r.envelope_depths[2] > 0.5);
    }

    #[test]
    fn sweeps_are_deterministic() {
        let base = Experiment::resonant(125.0, 0.0);
        let a = run_regimes(&[21.0, 40.0], &base).unwrap();
        let b = run_regimes(&[21.0, 40.0], &base).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pump_gating_needs_standard_sequence() {
        let mut e = Experiment::resonant(125.0, 70.0);
        e.sequence = SequenceSpec::Explicit {
            events: Vec::new(),
            total_duration: 10.0,
        };
        assert!(matches!(run_pump_comparison(&e), Err(SweepError::Unsupported(_))));
    }

    #[test]
    fn free_decay_in_both_pump_modes() {
        let cmp = run_pump_comparison(&Experiment::resonant(125.0, 0.0)).unwrap();
        for f in [&cmp.continuous, &cmp.gated] {
            assert!(f.found_mask.center);
            assert!(f.splitting.is_none());
        }
        assert_eq!(cmp.gated_ratio, None);
    }

    #[test]
    fn experiment_serde_round_trip() {
        let e = Experiment::resonant(125.0, 21.0);
        let json = serde_json::to_string(&e).unwrap();
        let back: Experiment = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }
}
