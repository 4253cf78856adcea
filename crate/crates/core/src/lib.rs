//! Multi-frame image superresolution with a learned-kernel probabilistic
//! neural network.
//!
//! The pipeline registers a low-resolution sequence, gathers for every node of
//! a high-resolution grid the nearest pixel of each projected frame, combines
//! those samples with a normalized weighted average whose weights come from a
//! small MLP of the sample distance, and finally applies a least-squares FIR
//! restoration filter.

pub mod bench;
pub mod error;
pub mod image;
pub mod kernelnet;
pub mod pgm;
pub mod pipeline;
pub mod projection;
pub mod registration;
pub mod restoration;
pub mod testimages;
pub mod training;

pub use error::{Error, PgmError, Result};
pub use image::{rmse, Image, Point2};
pub use registration::SimilarityTransform;
pub use kernelnet::{Kernel, KernelMlp, ModelFile};
pub use projection::{HighResGrid, NeighborArray, NeighborField, NeighborSample};
pub use training::{TrainConfig, TrainingPattern};
pub use pipeline::{superresolve, PipelineConfig, SynthConfig, SyntheticSequence};
pub use restoration::FirFilter;
pub use bench::{run_bench, BenchConfig, BenchReport, BenchRow};
