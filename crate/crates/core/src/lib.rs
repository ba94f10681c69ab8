//! Second-order linear time-varying systems studied through their reduced Riccati equation (RCE).
//!
//! Any supported input (general Riccati equation, scalar second-order ODE or 2x2 state
//! matrix) is reduced to the canonical form `ν̇ = −ω₀₁ν² + ω₀₂`. From there the crate finds
//! the primitive solution pair `ν_R ± ν_I`, evaluates the whole solution continuum,
//! rebuilds time-domain solutions and fundamental matrices, and runs Floquet analysis and
//! parameter sweeps for periodic coefficients.

pub mod cases;
pub mod coeffexpr;
pub mod family;
pub mod floquet;
pub mod grid;
pub mod numerics;
pub mod odeengine;
pub mod phaseportrait;
pub mod primitive;
pub mod reduction;
pub mod sweep;
pub mod timedomain;

mod error;

pub use coeffexpr::{CoefficientFn, EvalError, Expr, ParseError};
pub use error::Error;
pub use family::{Branch, FamilySolution, PhaseAccumulator};
pub use floquet::FloquetResult;
pub use grid::{Direction, TimeGrid, Window};
pub use num_complex::Complex64;
pub use odeengine::{EscapeEvent, IntegrateOptions, RceTrajectory, Tolerance, VariableTag};
pub use phaseportrait::{PortraitKind, PortraitReport, Predisposition};
pub use primitive::{IntrinsicKind, PrimitivePair};
pub use reduction::{GeneralRiccati, ReducedRCE, ScalarSystem, SourceSystem, StateMatrix2x2};
pub use sweep::{SweepRow, SweepSpec, SweepTable};
pub use timedomain::{FundamentalMatrix, Shape, TimeDomainSolution};
