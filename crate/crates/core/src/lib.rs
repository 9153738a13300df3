//! Approximate message passing with nearest-neighbor sparsity pattern learning.
//!
//! Recovers clustered sparse signals `x` from underdetermined linear Gaussian
//! measurements `y = A x + w`. The prior on every coefficient is a spike and
//! slab mixture with its own sparse ratio; after each AMP sweep the sparse
//! ratios are reset to the average posterior support probability of the
//! coefficient's spatial neighbors, while the slab mean, slab variance and
//! noise variance are learned by closed-form EM updates.
//!
//! Module map:
//!
//! * [`model`]: measurement model, hyperparameters, solver configuration, random matrices.
//! * [`denoiser`]: the scalar Bernoulli-Gaussian posterior and its moments.
//! * [`learning`]: neighbor topologies and the EM hyperparameter updates.
//! * [`amp`]: the message passing loop.
//! * [`bench`]: block-sparse and cluster-image generators, metrics and sweeps.

pub mod amp;
pub mod bench;
pub mod denoiser;
pub mod error;
pub mod learning;
pub mod model;

pub use amp::{solve, AmpState, SolveResult, SolveStatus};
pub use error::{Error, Result};
pub use learning::{NeighborTopology, TopologyKind};
pub use model::{Hyperparams, Matrix, MeasurementModel, SolverConfig};
