use thiserror::Error;

use crate::cases::CaseError;
use crate::coeffexpr::{EvalError, ParseError};
use crate::family::FamilyError;
use crate::floquet::FloquetError;
use crate::grid::GridError;
use crate::odeengine::OdeError;
use crate::phaseportrait::PortraitError;
use crate::primitive::PrimitiveError;
use crate::reduction::ReductionError;
use crate::sweep::SweepError;
use crate::timedomain::TimeDomainError;

/// Any error raised by the library, grouped by the stage that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Primitive(#[from] PrimitiveError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    TimeDomain(#[from] TimeDomainError),
    #[error(transparent)]
    Floquet(#[from] FloquetError),
    #[error(transparent)]
    Portrait(#[from] PortraitError),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
}
