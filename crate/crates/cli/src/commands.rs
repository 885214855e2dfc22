use std::path::{Path, PathBuf};

use mollow::model::{b_osc_from_splitting, triplet_prediction, NT_PER_GAUSS};
use mollow::spectral::{
    envelope, extract_triplet, modulation_depth, power_spectrum, trim_edges, ObservableSeries, SpectralError,
    TripletFeatures,
};
use mollow::sweep::{
    detuning_law, fit_rabi_linearity, run, run_detuning_sweep, run_pump_comparison, run_regimes, AnalysisConfig,
    DetuningLaw, LinearFit, SweepError, SweepResult,
};
use mollow::{Drive64, Params64, Prediction64};
use serde::Serialize;

use crate::config::{read, Scenario, SweepSpec, SCHEMA_VERSION};
use crate::error::CliError;
use crate::output::{
    comment_line, ensure_dir, found_peaks, generator, parse_comment_hash, write_json, write_series, write_spectrum,
    write_sweep_features, write_sweep_spectra, write_trajectory, AnalysisProvenance, FeatureRecord, Provenance,
};

#[derive(Serialize)]
struct SimulateReport {
    provenance: Provenance,
    expected_center: f64,
    /// Analysis window, s.
    window: (f64, f64),
    found_peaks: usize,
    features: TripletFeatures<f64>,
    prediction: Prediction64,
    envelope_depth: f64,
    freq_resolution: f64,
    native_resolution: f64,
}

/// Writes trajectory.csv, observable.csv, spectrum.csv and features.json.
pub fn simulate(sc: &Scenario, seed: Option<u64>) -> Result<Vec<PathBuf>, CliError> {
    let exp = sc.experiment();
    let out = run(&exp)?;
    let prov = Provenance::new(sc, seed);
    let comment = prov.comment();
    let dir = &sc.output_dir;
    ensure_dir(dir)?;
    let paths = ["trajectory.csv", "observable.csv", "spectrum.csv", "features.json"].map(|f| dir.join(f));
    write_trajectory(&paths[0], &comment, &out.trajectory)?;
    write_series(&paths[1], &comment, &out.observable)?;
    write_spectrum(&paths[2], &comment, &out.spectrum)?;
    let report = SimulateReport {
        expected_center: exp.expected_center(),
        window: out.window,
        found_peaks: found_peaks(&out.features),
        features: out.features,
        prediction: out.prediction,
        envelope_depth: out.envelope_depth,
        freq_resolution: out.spectrum.freq_resolution,
        native_resolution: out.spectrum.native_resolution,
        provenance: prov,
    };
    write_json(&paths[3], &report)?;
    Ok(paths.to_vec())
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FitReport {
    Amplitude {
        fit: Option<LinearFit>,
        degenerate: bool,
        reason: Option<String>,
        /// ½·γ_g in Hz/nT.
        predicted_slope: f64,
    },
    Detuning {
        law: Option<DetuningLaw>,
        degenerate: bool,
        reason: Option<String>,
    },
    PumpComparison {
        continuous: TripletFeatures<f64>,
        gated: TripletFeatures<f64>,
        continuous_ratio: Option<f64>,
        gated_ratio: Option<f64>,
        threshold: f64,
        center_suppressed: bool,
        gated_envelope_depth: f64,
    },
}

#[derive(Serialize)]
struct FitFile {
    provenance: Provenance,
    #[serde(flatten)]
    report: FitReport,
}

/// Fewer usable points than a fit needs is an outcome, not a failure.
fn degenerate<T>(r: Result<T, SweepError>) -> Result<(Option<T>, Option<String>), CliError> {
    match r {
        Ok(v) => Ok((Some(v), None)),
        Err(e @ SweepError::TooFewPoints { .. }) => Ok((None, Some(e.to_string()))),
        Err(e) => Err(e.into()),
    }
}

fn feature_records(r: &SweepResult) -> Vec<FeatureRecord<'_>> {
    (0..r.len())
        .map(|k| FeatureRecord {
            axis_value: r.axis_values[k].to_string(),
            features: &r.features[k],
            envelope_depth: Some(r.envelope_depths[k]),
            predicted_splitting: r.predictions[k].splitting,
        })
        .collect()
}

/// Runs the scenario's sweep, writing sweep_spectra.csv, sweep_features.csv
/// and fit.json.
pub fn sweep(sc: &Scenario, seed: Option<u64>) -> Result<Vec<PathBuf>, CliError> {
    let spec = sc.sweep.as_ref().ok_or_else(|| {
        CliError::Validation("no sweep given: add a `sweep` block to the scenario or pass --sweep".into())
    })?;
    let exp = sc.experiment();
    let prov = Provenance::new(sc, seed);
    let comment = prov.comment();
    let dir = &sc.output_dir;
    ensure_dir(dir)?;
    let paths = ["sweep_spectra.csv", "sweep_features.csv", "fit.json"].map(|f| dir.join(f));
    let report = match spec {
        SweepSpec::Amplitude { values } => {
            let r = run_regimes(values.as_deref().unwrap_or_default(), &exp)?;
            write_sweep_outputs(&paths, &comment, &r)?;
            let (fit, reason) = degenerate(fit_rabi_linearity(&r))?;
            FitReport::Amplitude {
                degenerate: fit.is_none_or(|f| f.degenerate),
                fit,
                reason,
                predicted_slope: 0.5 * sc.params.gamma_g / NT_PER_GAUSS,
            }
        }
        SweepSpec::Detuning { b_osc, frequencies } => {
            let b = b_osc.unwrap_or(sc.drive.b_osc);
            let r = run_detuning_sweep(frequencies.as_deref().unwrap_or_default(), b, &exp)?;
            write_sweep_outputs(&paths, &comment, &r)?;
            let (law, reason) = degenerate(detuning_law(&r))?;
            FitReport::Detuning {
                degenerate: law.is_none(),
                law,
                reason,
            }
        }
        SweepSpec::PumpComparison => {
            let c = run_pump_comparison(&exp)?;
            let labels = ["continuous", "gated_off_during_drive"].map(String::from);
            write_sweep_spectra(
                &paths[0],
                &comment,
                [(labels[0].clone(), &c.continuous_spectrum), (labels[1].clone(), &c.gated_spectrum)],
            )?;
            let predicted = triplet_prediction(&sc.params, &sc.drive).splitting;
            write_sweep_features(
                &paths[1],
                &comment,
                [
                    FeatureRecord {
                        axis_value: labels[0].clone(),
                        features: &c.continuous,
                        envelope_depth: None,
                        predicted_splitting: predicted,
                    },
                    FeatureRecord {
                        axis_value: labels[1].clone(),
                        features: &c.gated,
                        envelope_depth: Some(c.gated_envelope_depth),
                        predicted_splitting: predicted,
                    },
                ],
            )?;
            FitReport::PumpComparison {
                continuous: c.continuous,
                gated: c.gated,
                continuous_ratio: c.continuous_ratio,
                gated_ratio: c.gated_ratio,
                threshold: c.threshold,
                center_suppressed: c.center_suppressed,
                gated_envelope_depth: c.gated_envelope_depth,
            }
        }
    };
    write_json(&paths[2], &FitFile { provenance: prov, report })?;
    Ok(paths.to_vec())
}

fn write_sweep_outputs(paths: &[PathBuf; 3], comment: &str, r: &SweepResult) -> Result<(), CliError> {
    write_sweep_spectra(
        &paths[0],
        comment,
        r.axis_values.iter().map(|v| v.to_string()).zip(&r.spectra),
    )?;
    write_sweep_features(&paths[1], comment, feature_records(r))
}

pub struct PredictInput {
    pub params: Params64,
    pub drive: Option<Drive64>,
    pub splitting: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Inverse {
    /// Resonant splitting the amplitude is inferred from, Hz.
    pub splitting: f64,
    /// B_M = 2·splitting/γ_g, nT.
    pub b_osc: f64,
}

#[derive(Debug, Serialize)]
pub struct PredictReport {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction64>,
    pub inverse: Inverse,
}

/// Closed-form dressed frequencies and the splitting-to-amplitude inverse.
/// Without an explicit splitting the inverse is taken at the predicted one.
pub fn predict(input: &PredictInput) -> Result<PredictReport, CliError> {
    input.params.validate().map_err(SweepError::from)?;
    let prediction = input
        .drive
        .map(|d| {
            d.validate().map_err(SweepError::from)?;
            Ok::<_, CliError>(triplet_prediction(&input.params, &d))
        })
        .transpose()?;
    let splitting = match (input.splitting, prediction) {
        (Some(s), _) => {
            if !(s.is_finite() && s >= 0.0) {
                return Err(CliError::Validation(format!("splitting must be non-negative, got {s}")));
            }
            s
        }
        (None, Some(p)) => p.splitting,
        (None, None) => {
            return Err(CliError::Validation(
                "nothing to predict: give a drive (--config or --b-static/--b-osc) or --splitting".into(),
            ))
        }
    };
    Ok(PredictReport {
        schema_version: SCHEMA_VERSION,
        prediction,
        inverse: Inverse {
            splitting,
            b_osc: b_osc_from_splitting(&input.params, splitting),
        },
    })
}

#[derive(Serialize)]
struct AnalyzeReport {
    provenance: AnalysisProvenance,
    found_peaks: usize,
    features: TripletFeatures<f64>,
    /// Absent when the record is too short for the envelope filter.
    envelope_depth: Option<f64>,
    freq_resolution: f64,
    native_resolution: f64,
}

/// Reads an `observable.csv` (time in s, signal), rejecting gaps and
/// non-uniform sampling.
pub fn read_observable(path: &Path) -> Result<(ObservableSeries<f64>, Option<String>), CliError> {
    let text = read(path)?;
    let source_hash = text.lines().next().and_then(parse_comment_hash);
    let bad = |msg: String| CliError::Validation(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_s", "observable"] {
        return Err(bad(format!("expected columns t_s,observable, found {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let rows: Vec<(f64, f64)> = rdr
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| bad(e.to_string()))?;
    if rows.len() < 2 {
        return Err(bad(format!("{} samples, need at least 2", rows.len())));
    }
    let t0 = rows[0].0;
    let dt = rows[1].0 - t0;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(bad(format!("time step {dt} is not positive")));
    }
    if let Some((k, (t, _))) = rows
        .iter()
        .enumerate()
        .find(|(k, (t, _))| (t - (t0 + *k as f64 * dt)).abs() > 1e-6 * dt)
    {
        return Err(bad(format!("sample {k} at t = {t} s is off the uniform grid")));
    }
    let series = ObservableSeries::new(t0, dt, rows.into_iter().map(|r| r.1).collect())
        .map_err(|e| bad(e.to_string()))?;
    Ok((series, source_hash))
}

pub struct AnalyzeInput {
    pub input: PathBuf,
    pub analysis: AnalysisConfig,
    pub center: f64,
    pub out: PathBuf,
}

/// Spectral extraction on an existing observable; writes spectrum.csv and
/// features.json to `out`.
pub fn analyze(a: &AnalyzeInput) -> Result<Vec<PathBuf>, CliError> {
    let (series, source_hash) = read_observable(&a.input)?;
    let cfg = &a.analysis;
    let spectrum = power_spectrum(&series, cfg.window, cfg.zero_pad_factor)?;
    let features = extract_triplet(&spectrum, a.center, cfg.search_halfwidth, cfg.min_prominence)?;
    let envelope_depth = match envelope(&series, a.center) {
        Ok(env) => Some(modulation_depth(&trim_edges(&env, a.center))),
        Err(SpectralError::CarrierOutOfRange { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    ensure_dir(&a.out)?;
    let paths = [a.out.join("spectrum.csv"), a.out.join("features.json")];
    let hash = source_hash.clone().unwrap_or_else(|| "none".into());
    write_spectrum(&paths[0], &comment_line(&hash), &spectrum)?;
    let report = AnalyzeReport {
        provenance: AnalysisProvenance {
            schema_version: SCHEMA_VERSION,
            generator: generator(),
            input: a.input.clone(),
            source_scenario_sha256: source_hash,
            analysis: *cfg,
            expected_center: a.center,
        },
        found_peaks: found_peaks(&features),
        features,
        envelope_depth,
        freq_resolution: spectrum.freq_resolution,
        native_resolution: spectrum.native_resolution,
    };
    write_json(&paths[1], &report)?;
    Ok(paths.to_vec())
}
