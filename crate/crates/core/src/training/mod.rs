//! Synthetic training data and conjugate-gradient training of the kernel MLP.

pub mod cg;
mod data;
mod train;

pub use data::{
    make_dataset, make_pattern, read_dataset_cache, read_dataset_file, sample_target_location, synth_lowres_pixel,
    write_dataset_cache, write_dataset_file, PatternSource,
};
pub(crate) use data::box_sample;
pub use train::{batch_loss, batch_rmse, initial_net, train, BatchObjective, RestartReport, TrainOutcome, TrainReport};

use crate::error::{Error, Result};
use crate::projection::NeighborArray;

/// Network input paired with the value it should reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPattern {
    pub samples: NeighborArray,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Input noise standard deviation in gray levels.
    pub sigma: f64,
    /// Sequence length N (samples per pattern).
    pub frames: usize,
    /// Low-to-high resolution factor L.
    pub scale: usize,
    pub patterns: usize,
    /// Radius of the sample scatter disk, in low-resolution pixels.
    pub scatter_radius: f64,
    pub restarts: usize,
    pub cg_max_iters: usize,
    /// Relative loss decrease over five iterations below which a run stops.
    pub cg_tol: f64,
    pub seed: u64,
    /// Run restarts concurrently. Results do not depend on this.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 0.0,
            frames: 25,
            scale: 3,
            patterns: 5000,
            scatter_radius: 1.5,
            restarts: 10,
            cg_max_iters: 300,
            cg_tol: 1e-5,
            seed: 1,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("train config: {m}")));
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad("sigma must be finite and >= 0");
        }
        if self.frames == 0 {
            return bad("frames must be >= 1");
        }
        if self.scale == 0 {
            return bad("scale must be >= 1");
        }
        if self.patterns == 0 {
            return bad("patterns must be >= 1");
        }
        if !(self.scatter_radius > 0.0) || !self.scatter_radius.is_finite() {
            return bad("scatter_radius must be > 0");
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1");
        }
        if !(self.cg_tol >= 0.0) {
            return bad("cg_tol must be >= 0");
        }
        Ok(())
    }

    /// Border, in high-resolution pixels, that keeps every low-resolution
    /// footprint of a pattern inside the source image.
    pub fn margin(&self) -> usize {
        (self.scale as f64 * (self.scatter_radius + 1.0)).ceil() as usize
    }
}
