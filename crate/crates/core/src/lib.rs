//! Numerical Weyl calculus on weighted symbol spaces.

pub mod bargmann;
pub mod bspaces;
pub mod error;
pub mod fourier;
pub mod grid;
pub mod order_functions;
pub mod phase_space;
pub mod quadrature;
pub mod quantize;
pub mod schatten;
pub mod symbol_class;

pub use error::{Error, Result};
pub use grid::{AxisSpec, Grid, GridSymbol};
pub use order_functions::OrderFunction;
pub use phase_space::{Lattice, PhasePoint, SymplecticSpace};
