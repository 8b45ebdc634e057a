//! CPU matrix factorization for collaborative filtering.
//!
//! The explicit-feedback engine is a two-step ALS: [`gram`] assembles the
//! per-row normal equations with tiled accumulation over the lower triangle,
//! and [`solvers`] solves them exactly or with a truncated conjugate gradient
//! that can read `A` from binary16 storage. [`implicit`] adapts the same
//! pipeline to confidence-weighted implicit feedback, and [`sgd`] provides the
//! serial and lock-free SGD baselines.

pub mod als;
pub mod bench;
pub mod data;
pub mod error;
pub mod factors;
pub mod gram;
pub mod implicit;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod report;
pub mod sgd;
pub mod solvers;

pub use als::{objective, rmse, train, update_side, AlsConfig, SideOptions, TrainOutput};
pub use data::{
    gen_synthetic, parse_coo, split_holdout, CooData, Delimiter, ParseOptions, RatingTriple,
    SparseRatings, SynthConfig, SyntheticTruth,
};
pub use error::{Error, Result};
pub use factors::{init_factors, FactorMatrix};
pub use gram::{
    get_bias, get_hermitian, pack_half, roofline_estimate, GramSystem, Precision, Regularization,
    SymMatrix, TileConfig,
};
pub use report::{EpochRecord, PhaseTimes, StopReason, TrainReport};
pub use solvers::{
    batch_solve, cg_solve, cg_solve_half, exact_solve, SolverConfig, SolverMethod,
};
