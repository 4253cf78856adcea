//! Noise-level benchmark: sequence nearest neighbour against the trained
//! kernel and single-frame bilinear upsampling.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernelnet::{kernel_half_width, Kernel, ModelFile};
use crate::pipeline::{bilinear_upsample, blurred_truth, interpolate, synthesize, with_thread_pool, SynthConfig};
use crate::training::{batch_rmse, make_dataset, train, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Training setup; `sigma` is replaced by each benchmarked level.
    pub train: TrainConfig,
    pub heldout_patterns: usize,
    /// Low-resolution frame size of the timed reconstruction.
    pub timing_frame_size: usize,
    /// Worker threads, 0 for one per core.
    pub threads: usize,
    pub deterministic: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            train: TrainConfig::default(),
            heldout_patterns: 5000,
            timing_frame_size: 64,
            threads: 0,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub sigma: f64,
    pub rmse_seq_nn: f64,
    pub rmse_mlp_pnn: f64,
    pub rmse_bilinear: f64,
    pub half_width: f64,
    pub wall_time_interp_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// One row per level, ascending.
    pub rows: Vec<BenchRow>,
    pub models: Vec<ModelFile>,
    pub threads: usize,
    pub config: BenchConfig,
}

/// Seed of the evaluation stream, distinct from the training stream.
pub fn heldout_seed(seed: u64) -> u64 {
    let mut z = seed ^ 0xD1B5_4A32_D192_ED03;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn bilinear_rmse(images: &[Image], sigma: f64, scale: usize, margin: usize, seed: u64) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, img) in images.iter().enumerate() {
        let seq = synthesize(
            img,
            &SynthConfig {
                scale,
                frames: 1,
                sigma,
                seed: seed.wrapping_add(i as u64),
                ..SynthConfig::default()
            },
        )?;
        let up = bilinear_upsample(&seq.frames[0], scale)?;
        let target = blurred_truth(&seq.truth, scale);
        for y in margin..target.height().saturating_sub(margin) {
            for x in margin..target.width().saturating_sub(margin) {
                sum += (up.get(x, y) - target.get(x, y)).powi(2);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("images too small for the bilinear baseline"));
    }
    Ok((sum / count as f64).sqrt())
}

fn timed_interpolation(images: &[Image], cfg: &BenchConfig, net: &Kernel, sigma: f64) -> Result<Duration> {
    let l = cfg.train.scale;
    let src = &images[0];
    let side = (cfg.timing_frame_size * l).min(src.width()).min(src.height());
    let hr = src.crop(0, 0, side, side)?;
    let seq = synthesize(
        &hr,
        &SynthConfig {
            scale: l,
            frames: cfg.train.frames,
            sigma,
            seed: heldout_seed(cfg.train.seed),
            ..SynthConfig::default()
        },
    )?;
    let mut best = Duration::MAX;
    for _ in 0..3 {
        let start = Instant::now();
        interpolate(&seq.frames, &seq.transforms, net, l, 0, !cfg.deterministic)?;
        best = best.min(start.elapsed());
    }
    Ok(best)
}

fn bench_level(images: &[Image], cfg: &BenchConfig, sigma: f64) -> Result<(BenchRow, ModelFile)> {
    let tc = TrainConfig {
        sigma,
        parallel: !cfg.deterministic,
        ..cfg.train.clone()
    };
    let data = make_dataset(images, &tc)?;
    let outcome = train(&data, &tc)?;
    let held_cfg = TrainConfig {
        patterns: cfg.heldout_patterns,
        seed: heldout_seed(tc.seed),
        ..tc.clone()
    };
    let held = make_dataset(images, &held_cfg)?;
    let mlp = Kernel::Mlp(outcome.net.clone());
    let row = BenchRow {
        sigma,
        rmse_seq_nn: batch_rmse(&Kernel::NearestOnly, &held),
        rmse_mlp_pnn: batch_rmse(&mlp, &held),
        rmse_bilinear: bilinear_rmse(images, sigma, tc.scale, tc.margin(), heldout_seed(tc.seed))?,
        half_width: kernel_half_width(&mlp, tc.scale)?,
        wall_time_interp_ms: timed_interpolation(images, cfg, &mlp, sigma)?.as_secs_f64() * 1e3,
    };
    let model = ModelFile {
        net: outcome.net,
        noise_sigma: sigma,
        scale: tc.scale,
        frames: tc.frames,
    };
    Ok((row, model))
}

/// Trains one model per noise level and evaluates it on held-out data.
pub fn run_bench(images: &[Image], sigmas: &[f64], cfg: &BenchConfig) -> Result<BenchReport> {
    if images.is_empty() {
        return Err(Error::invalid("bench needs at least one image"));
    }
    if sigmas.is_empty() || sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::invalid("bench needs one or more finite noise levels >= 0"));
    }
    if cfg.heldout_patterns == 0 || cfg.timing_frame_size == 0 {
        return Err(Error::invalid("heldout_patterns and timing_frame_size must be >= 1"));
    }
    let mut levels = sigmas.to_vec();
    levels.sort_by(f64::total_cmp);
    let threads = if cfg.deterministic { 1 } else { cfg.threads };
    let (rows, models) = with_thread_pool(threads, || {
        let mut rows = Vec::with_capacity(levels.len());
        let mut models = Vec::with_capacity(levels.len());
        for &sigma in &levels {
            let (row, model) = bench_level(images, cfg, sigma).map_err(|e| Error::AtSigma {
                sigma,
                source: Box::new(e),
            })?;
            rows.push(row);
            models.push(model);
        }
        Ok::<_, Error>((rows, models))
    })??;
    Ok(BenchReport {
        rows,
        models,
        threads: if threads == 0 { rayon::current_num_threads() } else { threads },
        config: cfg.clone(),
    })
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:>8} {:>12} {:>12} {:>13} {:>11} {:>10}",
            "sigma", "rmse_seq_nn", "rmse_mlp_pnn", "rmse_bilinear", "half_width", "interp_ms"
        )
        .unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{:>8} {:>12.4} {:>12.4} {:>13.4} {:>11.4} {:>10.3}",
                r.sigma, r.rmse_seq_nn, r.rmse_mlp_pnn, r.rmse_bilinear, r.half_width, r.wall_time_interp_ms
            )
            .unwrap();
        }
        s
    }

    /// `bench.<sigma>.<field>=<value>` lines followed by the environment echo.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let fields = [
                ("rmse_seq_nn", r.rmse_seq_nn),
                ("rmse_mlp_pnn", r.rmse_mlp_pnn),
                ("rmse_bilinear", r.rmse_bilinear),
                ("half_width", r.half_width),
                ("wall_time_interp_ms", r.wall_time_interp_ms),
            ];
            for (name, v) in fields {
                writeln!(s, "bench.{}.{}={}", r.sigma, name, v).unwrap();
            }
        }
        let c = &self.config;
        let t = &c.train;
        writeln!(s, "bench.env.threads={}", self.threads).unwrap();
        writeln!(s, "bench.env.deterministic={}", c.deterministic).unwrap();
        writeln!(s, "bench.env.frames={}", t.frames).unwrap();
        writeln!(s, "bench.env.scale={}", t.scale).unwrap();
        writeln!(s, "bench.env.patterns={}", t.patterns).unwrap();
        writeln!(s, "bench.env.heldout_patterns={}", c.heldout_patterns).unwrap();
        writeln!(s, "bench.env.scatter_radius={}", t.scatter_radius).unwrap();
        writeln!(s, "bench.env.restarts={}", t.restarts).unwrap();
        writeln!(s, "bench.env.cg_max_iters={}", t.cg_max_iters).unwrap();
        writeln!(s, "bench.env.cg_tol={}", t.cg_tol).unwrap();
        writeln!(s, "bench.env.seed={}", t.seed).unwrap();
        writeln!(s, "bench.env.timing_frame_size={}", c.timing_frame_size).unwrap();
        s
    }

    /// The report with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> BenchReport {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.wall_time_interp_ms = 0.0);
        r
    }
}
