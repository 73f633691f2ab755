use std::path::Path;

use rulemine_core::dataset::DatasetError;
use rulemine_core::detector::DetectorError;
use rulemine_core::pipeline::PipelineError;
use rulemine_core::rules::RuleError;
use rulemine_core::synthetic::SyntheticError;
use rulemine_service::ServiceError;

pub const RUNTIME: u8 = 1;
pub const INVALID: u8 = 2;
pub const NOT_FOUND: u8 = 3;

/// A command error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: RUNTIME,
            error: e.into(),
        }
    }

    pub fn invalid(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: INVALID,
            error: e.into(),
        }
    }

    pub fn not_found(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: NOT_FOUND,
            error: e.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }

    pub fn error(&self) -> &anyhow::Error {
        &self.error
    }

    pub fn context(self, msg: impl std::fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            code: self.code,
            error: self.error.context(msg),
        }
    }
}

pub fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::not_found(anyhow::anyhow!(
            "{what} {} not found",
            path.display()
        )))
    }
}

fn io_code(e: &std::io::Error) -> u8 {
    if e.kind() == std::io::ErrorKind::NotFound {
        NOT_FOUND
    } else {
        RUNTIME
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let code = match &e {
            DatasetError::Io(io) => io_code(io),
            _ => INVALID,
        };
        Self { code, error: e.into() }
    }
}

impl From<DetectorError> for Failure {
    fn from(e: DetectorError) -> Self {
        let code = match &e {
            DetectorError::Io(io) => io_code(io),
            _ => INVALID,
        };
        Self { code, error: e.into() }
    }
}

impl From<RuleError> for Failure {
    fn from(e: RuleError) -> Self {
        let code = match &e {
            RuleError::UnknownRule(_) => NOT_FOUND,
            _ => INVALID,
        };
        Self { code, error: e.into() }
    }
}

impl From<SyntheticError> for Failure {
    fn from(e: SyntheticError) -> Self {
        let code = match &e {
            SyntheticError::Io(io) => io_code(io),
            SyntheticError::Csv(_) => RUNTIME,
            _ => INVALID,
        };
        Self { code, error: e.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Dataset(d) => d.into(),
            PipelineError::Detect(d) => d.into(),
            PipelineError::Rules(r) => r.into(),
            PipelineError::Config(_) => Self::invalid(e),
            PipelineError::Io(ref io) => Self {
                code: io_code(io),
                error: e.into(),
            },
            _ => Self::runtime(e),
        }
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Pipeline(p) => p.into(),
            ServiceError::NotFound(_) => Self::not_found(e),
            ServiceError::Startup(_) | ServiceError::BadRequest(_) | ServiceError::Unprocessable(_) => Self::invalid(e),
            _ => Self::runtime(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: io_code(&e),
            error: e.into(),
        }
    }
}
