use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cg::{self, CgOptions, StopReason};
use super::{TrainConfig, TrainingPattern};
use crate::error::{Error, Result};
use crate::kernelnet::{accumulate_backprop, pnn_combine, BackpropScratch, Kernel, KernelMlp, DEFAULT_HIDDEN};

/// Patterns per reduction chunk. Chunk partial sums are always combined in
/// chunk order, so results are bitwise identical with or without threads.
const CHUNK: usize = 128;

/// Mean pattern loss `½(o − t)²` and its gradient over a fixed dataset.
pub struct BatchObjective<'a> {
    data: &'a [TrainingPattern],
    hidden: usize,
    parallel: bool,
}

struct Partial {
    loss: f64,
    grad: Vec<f64>,
    skipped: usize,
}

impl<'a> BatchObjective<'a> {
    pub fn new(data: &'a [TrainingPattern], hidden: usize, parallel: bool) -> Self {
        assert!(!data.is_empty(), "empty dataset");
        BatchObjective { data, hidden, parallel }
    }

    fn chunk(&self, net: &KernelMlp, chunk: &[TrainingPattern]) -> Partial {
        let mut grad = vec![0.0; net.params().len()];
        let mut scratch = BackpropScratch::default();
        let mut loss = 0.0;
        let mut skipped = 0;
        for p in chunk {
            let (l, s) = accumulate_backprop(net, &p.samples, p.target, &mut grad, &mut scratch);
            loss += l;
            skipped += s as usize;
        }
        Partial { loss, grad, skipped }
    }

    /// Mean loss at `params`, mean gradient written into `grad`, plus the
    /// number of degenerate patterns left out of the gradient.
    pub fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> (f64, usize) {
        let net = KernelMlp::from_params_unchecked(self.hidden, params.to_vec());
        let partials: Vec<Partial> = if self.parallel {
            self.data.par_chunks(CHUNK).map(|c| self.chunk(&net, c)).collect()
        } else {
            self.data.chunks(CHUNK).map(|c| self.chunk(&net, c)).collect()
        };
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut skipped = 0;
        for p in &partials {
            loss += p.loss;
            skipped += p.skipped;
            for (g, pg) in grad.iter_mut().zip(&p.grad) {
                *g += pg;
            }
        }
        let inv = 1.0 / self.data.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        (loss * inv, skipped)
    }
}

/// Mean over patterns of `½(o − t)²`.
pub fn batch_loss(net: &KernelMlp, data: &[TrainingPattern]) -> f64 {
    assert!(!data.is_empty(), "empty dataset");
    let kernel = Kernel::Mlp(net.clone());
    let sum: f64 = data
        .iter()
        .map(|p| {
            let r = pnn_combine(&p.samples, &kernel) - p.target;
            0.5 * r * r
        })
        .sum();
    sum / data.len() as f64
}

/// Root-mean-square error of `kernel` over the patterns, in gray levels.
pub fn batch_rmse(kernel: &Kernel, data: &[TrainingPattern]) -> f64 {
    assert!(!data.is_empty(), "empty dataset");
    let sum: f64 = data
        .iter()
        .map(|p| (pnn_combine(&p.samples, kernel) - p.target).powi(2))
        .sum();
    (sum / data.len() as f64).sqrt()
}

/// Random starting network: hidden weights and biases uniform in (−1, 1),
/// output weights uniform in (−0.1, 0.1), output bias 1 so the starting
/// kernel is close to a positive constant.
pub fn initial_net(hidden: usize, seed: u64) -> KernelMlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(KernelMlp::param_count_for(hidden));
    for _ in 0..2 * hidden {
        params.push(rng.random_range(-1.0..1.0));
    }
    for _ in 0..hidden {
        params.push(rng.random_range(-0.1..0.1));
    }
    params.push(1.0);
    KernelMlp::from_params(hidden, params).expect("finite initial weights")
}

fn restart_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartReport {
    pub index: usize,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss after every accepted CG step.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
    /// Patterns whose weight sum was degenerate at the final weights.
    pub skipped_patterns: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub restarts: Vec<RestartReport>,
    pub best: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: KernelMlp,
    pub final_loss: f64,
    pub report: TrainReport,
}

fn run_restart(data: &[TrainingPattern], cfg: &TrainConfig, index: usize) -> (KernelMlp, RestartReport) {
    let seed = restart_seed(cfg.seed, index);
    let init = initial_net(DEFAULT_HIDDEN, seed);
    let objective = BatchObjective::new(data, DEFAULT_HIDDEN, cfg.parallel);
    let opts = CgOptions {
        max_iters: cfg.cg_max_iters,
        rel_tol: cfg.cg_tol,
        window: 5,
        restart_every: init.params().len(),
        ..CgOptions::default()
    };
    let result = cg::minimize(|x, g| objective.evaluate(x, g).0, init.params(), &opts);
    let diverged = !result.value.is_finite() || result.stop == StopReason::NonFinite;
    let mut grad = vec![0.0; result.x.len()];
    let skipped = if diverged { data.len() } else { objective.evaluate(&result.x, &mut grad).1 };
    let net = KernelMlp::from_params_unchecked(DEFAULT_HIDDEN, result.x);
    let report = RestartReport {
        index,
        seed,
        initial_loss: result.history[0],
        final_loss: result.value,
        iterations: result.iterations,
        history: result.history,
        stop: result.stop,
        skipped_patterns: skipped,
        diverged,
    };
    (net, report)
}

/// Multi-restart conjugate-gradient training; keeps the restart with the
/// lowest final loss (lowest index on ties).
pub fn train(data: &[TrainingPattern], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training needs at least one pattern"));
    }
    let runs: Vec<(KernelMlp, RestartReport)> = if cfg.parallel {
        (0..cfg.restarts)
            .into_par_iter()
            .map(|i| run_restart(data, cfg, i))
            .collect()
    } else {
        (0..cfg.restarts).map(|i| run_restart(data, cfg, i)).collect()
    };
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, (_, r))| !r.diverged)
        .fold(None::<(usize, f64)>, |acc, (i, (_, r))| match acc {
            Some((_, v)) if v <= r.final_loss => acc,
            _ => Some((i, r.final_loss)),
        });
    let Some((best, final_loss)) = best else {
        let diag: Vec<String> = runs
            .iter()
            .map(|(_, r)| format!("restart {} (seed {}): stop {:?}, loss {}", r.index, r.seed, r.stop, r.final_loss))
            .collect();
        return Err(Error::TrainingFailed(format!("all restarts diverged; {}", diag.join("; "))));
    };
    let net = runs[best].0.clone();
    Ok(TrainOutcome {
        net,
        final_loss,
        report: TrainReport {
            restarts: runs.into_iter().map(|(_, r)| r).collect(),
            best,
        },
    })
}
