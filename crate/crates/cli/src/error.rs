use std::path::PathBuf;

use mollow::integrator::IntegrationError;
use mollow::spectral::SpectralError;
use mollow::sweep::SweepError;

pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;
pub const EXIT_IO: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: config, parameters, sequence, analysis settings or data.
    #[error("validation error: {0}")]
    Validation(String),
    /// The computation itself failed.
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

fn integration_is_numerical(e: &IntegrationError) -> bool {
    use IntegrationError::*;
    match e {
        StepSizeUnderflow { .. } | StepBudgetExceeded { .. } | NonFinite { .. } | Singular(_) | Linalg(_) => true,
        InvalidConfig { .. } | DriveActive | Sequence(_) | Model(_) => false,
    }
}

fn spectral_is_numerical(e: &SpectralError) -> bool {
    matches!(e, SpectralError::NonFinite(_) | SpectralError::NonPositive { .. })
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        let numerical = match &e {
            SweepError::Integration(i) => integration_is_numerical(i),
            SweepError::Spectral(s) => spectral_is_numerical(s),
            SweepError::TooFewPoints { .. } => true,
            SweepError::Model(_) | SweepError::Sequence(_) | SweepError::InvalidAxis(_) | SweepError::Unsupported(_) => {
                false
            }
        };
        if numerical {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        SweepError::from(e).into()
    }
}
