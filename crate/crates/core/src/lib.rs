//! Simulation, convolution algebra and controllability analysis for linear
//! difference delay equations with distributed delays
//!
//! `x(t) = Σ_j A_j x(t - Λ_j) + ∫_0^{Λ_N} g(s) x(t - s) ds + B u(t)`.
//!
//! The crate is organised around [`DelaySystem`]:
//!
//! * [`simulator`] marches the initial-value problem on a uniform grid,
//! * [`fundamental`] builds the bounded-variation fundamental solution and the input map,
//! * [`measure`] implements compactly supported matrix measures and inverts `Q`,
//! * [`freq`] locates characteristic roots and decides approximate controllability,
//! * [`synthesis`] computes regularised least-squares controls.

pub mod error;
pub mod freq;
pub mod fundamental;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod measure;
pub mod simulator;
pub mod synthesis;
pub mod system;

pub use error::{DdecError, Result};
pub use freq::{
    char_eval, check_controllability, count_zeros, find_roots, CharacteristicEvaluation, ControllabilityVerdict,
    Outcome, Rectangle, RootInfo,
};
pub use fundamental::{
    fundamental_solution, input_map, lattice_points, Atom, BVFundamentalSolution, FundamentalOptions, InputMapMatrix,
    LatticePoint,
};
pub use grid::GridFunction;
pub use kernel::{PiecewisePolyKernel, C64};
pub use measure::{build_qp, convolution_defect, convolve, invert_q, transfer_output, CompactMeasure, NeumannReport};
pub use simulator::{extend_state, lq_norm, solve_ivp, state_segment, Trajectory};
pub use synthesis::{residual_curve, synthesize_control, verify_control, SynthesisOptions, SynthesisResult};
pub use system::{validate_system, DelaySystem, SystemDescription};
