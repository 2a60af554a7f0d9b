//! Spin systems on complete d-ary trees.
//!
//! Broadcast kernels, Gibbs configurations and their exact enumeration,
//! single-site and component dynamics, belief-propagation ratios and the
//! coloring type recursions. Exact enumeration doubles as the oracle for
//! everything that is checkable at small size.

pub mod acceptance;
pub mod bp_ratio;
pub mod coloring_recursion;
pub mod error;
pub mod functionals;
pub mod glauber;
pub mod model_file;
pub mod output;
pub mod rng;
pub mod spin_model;
pub mod tree_config;

pub use error::{Error, Result};
pub use spin_model::{Energy, KestenStigum, Potentials, SpinKernel, State, MAX_STATES};
pub use tree_config::{Boundary, Configuration, Enumeration, TreeShape};

/// Default cap on the number of enumerated states.
pub const DEFAULT_GUARD: usize = 5_000_000;
