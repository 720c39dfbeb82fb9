//! Train entire subspaces of neural networks — lines, quadratic Bezier
//! curves, and simplexes — in a single run, then evaluate accuracy,
//! diversity, and calibration along the learned subspace.
//!
//! The crate is organized around a few pieces:
//!
//! - [`net`]: a small dense-network engine (forward, exact reverse-mode
//!   gradients, batch-norm statistic recomputation) over flat parameter
//!   vectors ([`params`]).
//! - [`subspace`]: the parameterizations `P(coord; endpoints)`, coordinate
//!   sampling, gradient routing, and the orthogonality regularizer.
//! - [`trainer`]: the single-run subspace training loop (SGD with momentum,
//!   cosine-annealed learning rate with warmup, multi-sample batches,
//!   feature-similarity regularization).
//! - [`evaluation`]: sweeps, output ensembles, calibration and distribution
//!   metrics, plane grids.
//! - [`experiments`]: instability analysis, random mixtures, the integral
//!   ensembling model, and the convex-case analytic oracle.
//! - [`data`]: synthetic blobs, IDX files, label noise, input corruption.
//! - [`cli`]: the `nn-subspaces` binary's subcommands; every run is
//!   reproducible from its manifest.
//!
//! See the `examples/` directory for one runnable walkthrough per
//! capability.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod loss;
pub mod net;
pub mod params;
pub mod report;
pub mod rng;
pub mod subspace;
pub mod trainer;

pub use error::{Error, Result};
pub use loss::LossKind;
pub use net::{BNStats, LayerSpec, Mode, NetworkSpec};
pub use params::{ParamVector, SegmentKind, SegmentTable};
pub use subspace::{Coord, SampleCoord, Subspace, SubspaceKind};
pub use trainer::TrainConfig;
