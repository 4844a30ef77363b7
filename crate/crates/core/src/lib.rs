//! Finite-difference solver and verification tools for second-order mean
//! field games in which agents control both drift and diffusion.

pub mod control;
pub mod error;
pub mod fixed_point;
pub mod fp;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod regularity;
pub mod sde;
pub mod wasserstein;

pub use control::{
    ControlBounds, HamiltonianEval, HamiltonianSpec, InitialDensity, KernelCoupling, ModelSpec,
    TerminalBase, TerminalCost,
};
pub use error::{Error, Result};
pub use fixed_point::{picard_solve, FixedPointReport, FixedPointSolution, PicardOptions};
pub use fp::DensityPath;
pub use grid::{CflData, GridSpec, TimeField, Vector, MAX_DIM};
pub use io::RunConfig;
pub use regularity::KrylovSample;
pub use sde::{ConstantControl, McConfig, McEstimate};
