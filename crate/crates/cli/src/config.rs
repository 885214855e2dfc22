use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use mollow::integrator::{InitialCondition, ModelKind};
use mollow::model::{larmor_frequency, NT_PER_GAUSS};
use mollow::sweep::{AnalysisConfig, Experiment, SequenceSpec};
use mollow::{Drive64, IntegrationConfig64, Params64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Version of the scenario and output schema written by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    /// Default ³He rates when omitted.
    #[serde(default)]
    pub params: Params64,
    pub drive: Drive64,
    pub sequence: SequenceSpec,
    #[serde(default)]
    pub integration: IntegrationConfig64,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub initial: InitialCondition<f64>,
    #[serde(default = "tipped")]
    pub free_decay_initial: InitialCondition<f64>,
    #[serde(default = "reduced")]
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn tipped() -> InitialCondition<f64> {
    InitialCondition::Tipped { angle: FRAC_PI_2 }
}

fn reduced() -> ModelKind {
    ModelKind::Reduced
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Which experiment family `sweep` runs. Omitted lists are filled with the
/// default ranges before the run, so the recorded scenario is explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SweepSpec {
    /// Drive amplitude stepped in nT, frequency as configured.
    Amplitude {
        #[serde(default)]
        values: Option<Vec<f64>>,
    },
    /// Fixed amplitude (nT), drive frequency stepped in Hz.
    Detuning {
        #[serde(default)]
        b_osc: Option<f64>,
        #[serde(default)]
        frequencies: Option<Vec<f64>>,
    },
    /// Continuous against gated pumping, everything else as configured.
    PumpComparison,
}

impl SweepSpec {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Same sweep with every default range written out.
    pub fn resolved(&self, sc: &Scenario) -> SweepSpec {
        let rabi_to_nt = 2.0 * NT_PER_GAUSS / sc.params.gamma_g;
        match self {
            SweepSpec::Amplitude { values } => SweepSpec::Amplitude {
                // Ω_R from 0.1 to 2.5 Hz in 0.2 Hz steps
                values: Some(values.clone().unwrap_or_else(|| {
                    (0..13).map(|k| (0.1 + 0.2 * k as f64) * rabi_to_nt).collect()
                })),
            },
            SweepSpec::Detuning { b_osc, frequencies } => {
                let larmor = larmor_frequency(&sc.params, sc.drive.b_static);
                SweepSpec::Detuning {
                    b_osc: Some(b_osc.unwrap_or(sc.drive.b_osc)),
                    // δω from −3 to 3 Hz in 0.5 Hz steps
                    frequencies: Some(frequencies.clone().unwrap_or_else(|| {
                        (0..13).map(|k| larmor - 3.0 + 0.5 * k as f64).collect()
                    })),
                }
            }
            SweepSpec::PumpComparison => SweepSpec::PumpComparison,
        }
    }
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        let sc: Scenario =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            params: self.params,
            drive: self.drive,
            sequence: self.sequence.clone(),
            integration: self.integration,
            analysis: self.analysis,
            initial: self.initial,
            free_decay_initial: self.free_decay_initial,
            model: self.model,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "schema_version {} not supported, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.experiment().validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    ///
    /// Keys are sorted and `output_dir` is left out: where results land does
    /// not change them.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("scenario serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
