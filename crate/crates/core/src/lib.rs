//! Solvers and parameter gradients for Caputo fractional differential
//! equations `D^β z = f(t, z; θ)`, `0 < β <= 1`.
//!
//! The forward pass runs the fractional Adams-Bashforth predictor or the
//! PECE predictor-corrector on a uniform grid. Gradients of a terminal loss
//! with respect to θ come either from a reverse-time adjoint sweep that
//! reuses the stored trajectory ([`adjoint`]) or from exact reverse-mode
//! differentiation of the unrolled predictor ([`direct`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the usual double-precision choice.

// NaN-rejecting guards read as `!(x > 0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod checks;
pub mod direct;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod format;
pub mod forward;
pub mod instrumentation;
pub mod quadrature;
pub mod scalar;
pub mod verification;

pub use adjoint::{solve_adjoint, solve_adjoint_windowed, AccumulationMode, AdjointRun};
pub use direct::{grad_via_unrolled, CotangentSweep};
pub use dynamics::{
    make_linear_system, make_lotka_volterra, make_terminal_mse, Builtin, Dynamics, LinearSystem,
    LotkaVolterra, ParamVector, TerminalLinear, TerminalLoss, TerminalMse,
};
pub use error::{FdeError, Result};
pub use forward::{
    caputo_residual, solve, solve_pece, solve_predictor, Method, SolverConfig, Trajectory,
};
pub use instrumentation::InstrumentationCounters;
pub use quadrature::{gamma, FracOrder, TimeGrid, WeightKind, WeightTable};
pub use scalar::Scalar;

pub type FracOrder64 = FracOrder<f64>;
pub type TimeGrid64 = TimeGrid<f64>;
pub type WeightTable64 = WeightTable<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type ParamVector64 = ParamVector<f64>;
pub type AdjointRun64 = AdjointRun<f64>;
pub type CotangentSweep64 = CotangentSweep<f64>;
pub type TerminalMse64 = TerminalMse<f64>;

pub type FracOrder32 = FracOrder<f32>;
pub type SolverConfig32 = SolverConfig<f32>;
pub type Trajectory32 = Trajectory<f32>;
