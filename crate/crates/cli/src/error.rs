use std::fmt;
use std::path::Path;

use gif_fusion::checkpoint::CheckpointError;
use gif_fusion::detector::TrainError;
use gif_fusion::lidar::LidarError;
use gif_fusion::synth::DatasetError;
use gif_fusion::tensor::TensorError;

/// Failure classes, each with its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Config,
    Io,
    Numeric,
}

impl Class {
    pub fn exit_code(self) -> i32 {
        match self {
            Class::Config => 2,
            Class::Io => 3,
            Class::Numeric => 4,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Class::Config => "config error",
            Class::Io => "i/o error",
            Class::Numeric => "numeric failure",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: Class,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(class: Class, error: impl Into<anyhow::Error>) -> Self {
        Self { class, error: error.into() }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(Class::Config, anyhow::anyhow!("{msg}"))
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        Self::new(Class::Numeric, anyhow::anyhow!("{msg}"))
    }

    pub fn context(self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self { class: self.class, error: self.error.context(ctx) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:#}", self.class.label(), self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let class = match &e {
            TrainError::Config(_) | TrainError::EmptyDataset => Class::Config,
            TrainError::Diverged { .. } | TrainError::Tensor(_) => Class::Numeric,
            TrainError::Checkpoint(_) => Class::Io,
        };
        Self::new(class, e)
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        Self::new(Class::Numeric, e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let class = if matches!(e, DatasetError::Invalid(_)) { Class::Config } else { Class::Io };
        Self::new(class, e)
    }
}

impl From<LidarError> for CliError {
    fn from(e: LidarError) -> Self {
        let class = if matches!(e, LidarError::Config(_)) { Class::Config } else { Class::Io };
        Self::new(class, e)
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::new(Class::Io, e)
    }
}

/// Attaches a path to I/O failures.
pub trait IoContext<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> IoContext<T> for Result<T, E> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::new(Class::Io, e.into().context(path.display().to_string())))
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    std::fs::write(path, contents).at(path)
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}
