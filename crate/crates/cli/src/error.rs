use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("missing artifact {path}: run `{stage}` first")]
    MissingArtifact { stage: &'static str, path: PathBuf },
    #[error("run directory {0} is in use by another process (delete its .lock file if stale)")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// 2 config, 3 data, 4 missing artifact, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::MissingArtifact { .. } => 4,
            CliError::Locked(_) | CliError::Io { .. } => 1,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_errors!(
    occutrend_core::ingest::IngestError,
    occutrend_core::trends::TrendsError,
    occutrend_core::calendar::CalendarError,
    occutrend_core::screening::ScreeningError,
    occutrend_core::features::FeatureError,
    occutrend_core::gbdt::GbdtError,
    occutrend_core::evaluation::EvalError,
    occutrend_core::synth::SynthError,
    csv::Error,
    serde_json::Error,
);
