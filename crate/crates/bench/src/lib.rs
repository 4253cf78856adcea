//! Fixtures shared by the criterion benchmarks.

use mlppnn::kernelnet::KernelMlp;
use mlppnn::pipeline::{synthesize, SynthConfig, SyntheticSequence};
use mlppnn::restoration::FirFilter;
use mlppnn::testimages::{texture, training_set};
use mlppnn::training::{initial_net, make_dataset};
use mlppnn::{Image, TrainConfig, TrainingPattern};

/// Jittered `frames`-long sequence of `frame_size`² frames at scale 3.
pub fn sequence(frame_size: usize, frames: usize, seed: u64) -> SyntheticSequence {
    let hr = texture(3 * frame_size, 3 * frame_size, seed);
    synthesize(
        &hr,
        &SynthConfig {
            frames,
            sigma: 5.0,
            seed,
            ..SynthConfig::default()
        },
    )
    .expect("valid synthetic sequence")
}

/// Randomly initialised network of the default size.
pub fn network(seed: u64) -> KernelMlp {
    initial_net(mlppnn::kernelnet::DEFAULT_HIDDEN, seed)
}

pub fn patterns(count: usize, seed: u64) -> Vec<TrainingPattern> {
    let cfg = TrainConfig {
        patterns: count,
        sigma: 5.0,
        seed,
        ..TrainConfig::default()
    };
    make_dataset(&training_set(96, seed), &cfg).expect("valid dataset")
}

pub fn image(size: usize, seed: u64) -> Image {
    texture(size, size, seed)
}

/// Smooth 7×7 filter with unit gain.
pub fn filter() -> FirFilter {
    let w: Vec<f64> = (0..49)
        .map(|i| {
            let (x, y) = ((i % 7) as f64 - 3.0, (i / 7) as f64 - 3.0);
            (-(x * x + y * y) / 4.0).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    FirFilter::new(7, w.into_iter().map(|v| v / sum).collect(), 0.0).expect("finite coefficients")
}
