use std::process::ExitCode;

use rce_core::cases::CaseError;
use rce_core::primitive::PrimitiveError;
use rce_core::reduction::ReductionError;
use thiserror::Error;

use crate::problem::SchemaError;

/// Stable process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Usage = 1,
    Schema = 2,
    Reduction = 3,
    Numerical = 4,
    Io = 5,
    Inconclusive = 6,
}

#[derive(Debug, Error)]
#[error("{source}")]
pub struct Failure {
    pub code: Code,
    pub source: anyhow::Error,
}

impl Failure {
    pub fn new(code: Code, source: impl Into<anyhow::Error>) -> Self {
        Failure { code, source: source.into() }
    }

    pub fn usage(msg: impl std::fmt::Display) -> Self {
        Failure { code: Code::Usage, source: anyhow::anyhow!("{msg}") }
    }

    pub fn inconclusive(msg: impl std::fmt::Display) -> Self {
        Failure { code: Code::Inconclusive, source: anyhow::anyhow!("{msg}") }
    }

    /// Output cut short by a closed pipe, as with `rce ... | head`.
    pub fn is_broken_pipe(&self) -> bool {
        use std::io::ErrorKind::BrokenPipe;
        self.source.chain().any(|e| {
            e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == BrokenPipe)
                || e.downcast_ref::<serde_json::Error>().is_some_and(|j| j.io_error_kind() == Some(BrokenPipe))
                || e.downcast_ref::<csv::Error>().is_some_and(|c| matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == BrokenPipe))
        })
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code as u8)
    }
}

pub trait WithCode<T> {
    fn code(self, code: Code) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: Code) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(code, e))
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::Read { .. } => Failure::new(Code::Io, e),
            SchemaError::Case(CaseError::Reduction(_)) => Failure::new(Code::Reduction, e),
            _ => Failure::new(Code::Schema, e),
        }
    }
}

impl From<ReductionError> for Failure {
    fn from(e: ReductionError) -> Self {
        Failure::new(Code::Reduction, e)
    }
}

impl From<CaseError> for Failure {
    fn from(e: CaseError) -> Self {
        match e {
            CaseError::Reduction(_) | CaseError::Grid(_) => Failure::new(Code::Reduction, e),
            _ => Failure::new(Code::Schema, e),
        }
    }
}

impl From<rce_core::Error> for Failure {
    fn from(e: rce_core::Error) -> Self {
        match e {
            rce_core::Error::Reduction(r) => r.into(),
            rce_core::Error::Case(c) => c.into(),
            rce_core::Error::Parse(_) => Failure::new(Code::Schema, e),
            _ => Failure::new(Code::Numerical, e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(Code::Io, e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::new(Code::Io, e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::new(Code::Io, e)
    }
}

macro_rules! numerical {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::new(Code::Numerical, e)
            }
        })*
    };
}

numerical!(
    PrimitiveError,
    rce_core::odeengine::OdeError,
    rce_core::family::FamilyError,
    rce_core::timedomain::TimeDomainError,
    rce_core::floquet::FloquetError,
    rce_core::phaseportrait::PortraitError,
    rce_core::sweep::SweepError,
    rce_core::EvalError,
    rce_core::grid::GridError
);
