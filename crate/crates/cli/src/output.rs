use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mollow::spectral::TripletFeatures;
use mollow::sweep::AnalysisConfig;
use mollow::{Spectrum64, Trajectory64, Series64};
use serde::{Deserialize, Serialize};

use crate::config::{Scenario, SCHEMA_VERSION};
use crate::error::CliError;

/// Attached to every JSON artifact; `scenario` re-runs the computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub scenario_sha256: String,
    /// Reserved; runs are deterministic.
    pub seed: Option<u64>,
    pub generator: String,
    pub scenario: Scenario,
}

impl Provenance {
    pub fn new(scenario: &Scenario, seed: Option<u64>) -> Self {
        Provenance {
            schema_version: SCHEMA_VERSION,
            scenario_sha256: scenario.hash(),
            seed,
            generator: generator(),
            scenario: scenario.clone(),
        }
    }

    pub fn comment(&self) -> String {
        comment_line(&self.scenario_sha256)
    }
}

/// Provenance of `analyze`, which starts from data instead of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisProvenance {
    pub schema_version: u32,
    pub generator: String,
    pub input: PathBuf,
    /// Hash carried by the input file's header, if it had one.
    pub source_scenario_sha256: Option<String>,
    pub analysis: AnalysisConfig,
    pub expected_center: f64,
}

pub fn generator() -> String {
    format!("mollow {}", env!("CARGO_PKG_VERSION"))
}

pub fn comment_line(hash: &str) -> String {
    format!("# mollow schema_version={SCHEMA_VERSION} scenario_sha256={hash}")
}

/// Hash recorded in a `comment_line`, if `line` is one.
pub fn parse_comment_hash(line: &str) -> Option<String> {
    line.strip_prefix('#')?
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix("scenario_sha256="))
        .map(str::to_owned)
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// CSV writer whose file starts with `comment`.
pub fn csv_writer(path: &Path, comment: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{comment}").map_err(CliError::io(path))?;
    Ok(csv::Writer::from_writer(w))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

pub fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(CliError::io(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "t_s", "I_x", "I_y", "I_z", "F_mu_x", "F_mu_y", "F_mu_z", "F_mup_x", "F_mup_y", "F_mup_z",
];

/// Time in seconds, one column per spin component (dimensionless polarization).
pub fn write_trajectory(path: &Path, comment: &str, traj: &Trajectory64) -> Result<(), CliError> {
    let mut w = csv_writer(path, comment)?;
    w.write_record(TRAJECTORY_HEADER).map_err(csv_io(path))?;
    for (k, s) in traj.states.iter().enumerate() {
        let v = s.to_array();
        let row = (traj.time(k), v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        w.serialize(row).map_err(csv_io(path))?;
    }
    finish(w, path)
}

pub fn write_series(path: &Path, comment: &str, series: &Series64) -> Result<(), CliError> {
    let mut w = csv_writer(path, comment)?;
    w.write_record(["t_s", "observable"]).map_err(csv_io(path))?;
    for (k, &v) in series.samples.iter().enumerate() {
        w.serialize((series.time(k), v)).map_err(csv_io(path))?;
    }
    finish(w, path)
}

pub fn write_spectrum(path: &Path, comment: &str, spec: &Spectrum64) -> Result<(), CliError> {
    let mut w = csv_writer(path, comment)?;
    w.write_record(["freq_hz", "magnitude"]).map_err(csv_io(path))?;
    for (f, m) in spec.frequencies.iter().zip(&spec.magnitudes) {
        w.serialize((f, m)).map_err(csv_io(path))?;
    }
    finish(w, path)
}

/// Long format: one row per (axis value, frequency bin).
pub fn write_sweep_spectra<'a>(
    path: &Path,
    comment: &str,
    spectra: impl IntoIterator<Item = (String, &'a Spectrum64)>,
) -> Result<(), CliError> {
    let mut w = csv_writer(path, comment)?;
    w.write_record(["axis_value", "freq_hz", "magnitude"]).map_err(csv_io(path))?;
    for (axis, spec) in spectra {
        for (f, m) in spec.frequencies.iter().zip(&spec.magnitudes) {
            w.serialize((&axis, f, m)).map_err(csv_io(path))?;
        }
    }
    finish(w, path)
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    axis_value: &'a str,
    center_hz: Option<f64>,
    center_amp: Option<f64>,
    sideband_low_hz: Option<f64>,
    sideband_low_amp: Option<f64>,
    sideband_high_hz: Option<f64>,
    sideband_high_amp: Option<f64>,
    splitting_hz: Option<f64>,
    found_peaks: usize,
    envelope_depth: Option<f64>,
    predicted_splitting_hz: f64,
}

pub struct FeatureRecord<'a> {
    pub axis_value: String,
    pub features: &'a TripletFeatures<f64>,
    pub envelope_depth: Option<f64>,
    pub predicted_splitting: f64,
}

pub fn found_peaks(f: &TripletFeatures<f64>) -> usize {
    let m = f.found_mask;
    [m.sideband_low, m.center, m.sideband_high].iter().filter(|&&b| b).count()
}

/// Empty cells mark lines that were not found.
pub fn write_sweep_features<'a>(
    path: &Path,
    comment: &str,
    records: impl IntoIterator<Item = FeatureRecord<'a>>,
) -> Result<(), CliError> {
    let mut w = csv_writer(path, comment)?;
    for r in records {
        let f = r.features;
        w.serialize(FeatureRow {
            axis_value: &r.axis_value,
            center_hz: f.center.map(|p| p.freq),
            center_amp: f.center.map(|p| p.amp),
            sideband_low_hz: f.sideband_low.map(|p| p.freq),
            sideband_low_amp: f.sideband_low.map(|p| p.amp),
            sideband_high_hz: f.sideband_high.map(|p| p.freq),
            sideband_high_amp: f.sideband_high.map(|p| p.amp),
            splitting_hz: f.splitting,
            found_peaks: found_peaks(f),
            envelope_depth: r.envelope_depth,
            predicted_splitting_hz: r.predicted_splitting,
        })
        .map_err(csv_io(path))?;
    }
    finish(w, path)
}
