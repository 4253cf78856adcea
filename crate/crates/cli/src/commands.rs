use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mlppnn::bench::{run_bench, BenchConfig};
use mlppnn::kernelnet::{kernel_half_width, Kernel, ModelFile};
use mlppnn::pgm::{read_pgm_file, write_pgm_file};
use mlppnn::pipeline::{reconstruct, superresolve_detailed, synthesize, with_thread_pool, PipelineConfig, SynthConfig};
use mlppnn::registration::{self, degrees, RegistrationOptions};
use mlppnn::restoration::{design_filter, FirFilter, DEFAULT_FILTER_SIZE};
use mlppnn::training::{make_dataset, read_dataset_file, train, write_dataset_file, TrainConfig};
use mlppnn::{testimages, Image};

/// Multi-frame superresolution with a learned interpolation kernel.
#[derive(Debug, Parser)]
#[command(name = "mlppnn", version, arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate frame-to-reference similarity transforms.
    Register(RegisterArgs),
    /// Degrade a high-resolution image into a jittered low-resolution sequence.
    Synth(SynthArgs),
    /// Train an interpolation kernel on synthetic patterns.
    Train(TrainArgs),
    /// Reconstruct a high-resolution image from a sequence.
    Superres(SuperresArgs),
    /// Fit a restoration filter to (degraded, target) image pairs.
    DesignFilter(DesignFilterArgs),
    /// Compare nearest-neighbour, learned-kernel and bilinear errors per noise level.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct RegisterArgs {
    /// Input frames (PGM).
    #[arg(required = true)]
    frames: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    reference: usize,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// High-resolution source image (PGM).
    input: PathBuf,
    /// Directory receiving frames, truth, transforms and metadata.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 25)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    scale: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Maximum shift per axis in low-resolution pixels.
    #[arg(long, default_value_t = 1.0)]
    max_shift: f64,
    /// Maximum rotation in degrees.
    #[arg(long, default_value_t = 1.0)]
    max_rotation: f64,
    #[arg(long, default_value_t = 0.01)]
    scale_jitter: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ImageSource {
    /// Training stills (PGM).
    #[arg(long, num_args = 1..)]
    images: Vec<PathBuf>,
    /// Use the four built-in procedural stills of this size instead.
    #[arg(long, conflicts_with = "images")]
    builtin: Option<usize>,
}

impl ImageSource {
    fn load(&self, seed: u64) -> Result<Vec<Image>> {
        match self.builtin {
            Some(size) => Ok(testimages::training_set(size, seed)),
            None => {
                ensure!(!self.images.is_empty(), "give --images or --builtin");
                self.images.iter().map(|p| read_image(p)).collect()
            }
        }
    }
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 25)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    scale: usize,
    #[arg(long, default_value_t = 5000)]
    patterns: usize,
    #[arg(long, default_value_t = 1.5)]
    scatter_radius: f64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 300)]
    cg_max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    cg_tol: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Single-threaded, reproducible execution.
    #[arg(long)]
    deterministic: bool,
}

impl TrainFlags {
    fn config(&self, sigma: f64) -> TrainConfig {
        TrainConfig {
            sigma,
            frames: self.frames,
            scale: self.scale,
            patterns: self.patterns,
            scatter_radius: self.scatter_radius,
            restarts: self.restarts,
            cg_max_iters: self.cg_max_iters,
            cg_tol: self.cg_tol,
            seed: self.seed,
            parallel: !self.deterministic,
        }
    }

    fn threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ImageSource,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Binary pattern cache; reused when its configuration matches.
    #[arg(long)]
    dataset_cache: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelChoice {
    Mlp,
    Nearest,
}

#[derive(Debug, Args)]
struct SuperresArgs {
    /// Input frames (PGM).
    #[arg(required = true)]
    frames: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = KernelChoice::Mlp)]
    kernel: KernelChoice,
    /// Trained model; required with `--kernel mlp`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    filter: Option<PathBuf>,
    /// Known transforms; registration is skipped.
    #[arg(long)]
    transforms: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    scale: usize,
    #[arg(long, default_value_t = 0)]
    reference: usize,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    deterministic: bool,
    /// Write plain (P2) instead of binary PGM.
    #[arg(long)]
    ascii: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DesignFilterArgs {
    /// Degraded images (PGM), paired in order with `--target`.
    #[arg(long, required = true, num_args = 1..)]
    degraded: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    target: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FILTER_SIZE)]
    size: usize,
    /// Noise level recorded in the filter file.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    source: ImageSource,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 5.0, 10.0, 20.0])]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 5000)]
    heldout_patterns: usize,
    #[arg(long, default_value_t = 64)]
    timing_frame_size: usize,
    /// Directory receiving one trained model per noise level.
    #[arg(long)]
    model_dir: Option<PathBuf>,
}

fn read_image(path: &Path) -> Result<Image> {
    read_pgm_file(path).with_context(|| format!("loading {}", path.display()))
}

fn read_frames(paths: &[PathBuf]) -> Result<Vec<Image>> {
    paths.iter().map(|p| read_image(p)).collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Register(a) => register(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Superres(a) => superres(a),
        Command::DesignFilter(a) => design(a),
        Command::Bench(a) => bench(a),
    }
}

fn register(a: RegisterArgs) -> Result<()> {
    let frames = read_frames(&a.frames)?;
    let opts = RegistrationOptions {
        levels: a.levels,
        max_iters: a.max_iters,
        ..RegistrationOptions::default()
    };
    let transforms = with_thread_pool(a.threads, || registration::register_sequence_with(&frames, a.reference, &opts))??;
    for (k, t) in transforms.iter().enumerate() {
        eprintln!(
            "frame {k}: dx={:.4} dy={:.4} theta={:.4}deg scale={:.5}",
            t.dx,
            t.dy,
            degrees(t.theta),
            t.scale
        );
    }
    registration::write_transforms_file(&a.out, &transforms)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let hr = read_image(&a.input)?;
    let cfg = SynthConfig {
        scale: a.scale,
        frames: a.frames,
        sigma: a.sigma,
        max_shift: a.max_shift,
        max_rotation_deg: a.max_rotation,
        scale_jitter: a.scale_jitter,
        seed: a.seed,
    };
    let seq = synthesize(&hr, &cfg)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (k, f) in seq.frames.iter().enumerate() {
        write_pgm_file(a.out_dir.join(format!("frame_{k:03}.pgm")), f, true)?;
    }
    write_pgm_file(a.out_dir.join("truth.pgm"), &seq.truth, true)?;
    registration::write_transforms_file(a.out_dir.join("transforms.txt"), &seq.transforms)?;
    let meta = format!("source={}\n{}", a.input.display(), seq.metadata());
    let meta_path = a.out_dir.join("synth.meta");
    std::fs::write(&meta_path, meta).with_context(|| format!("writing {}", meta_path.display()))?;
    eprintln!("wrote {} frames to {}", seq.frames.len(), a.out_dir.display());
    Ok(())
}

fn same_data(a: &TrainConfig, b: &TrainConfig) -> bool {
    a.sigma == b.sigma
        && a.frames == b.frames
        && a.scale == b.scale
        && a.patterns == b.patterns
        && a.scatter_radius == b.scatter_radius
        && a.seed == b.seed
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.flags.config(a.sigma);
    cfg.validate()?;
    let images = a.source.load(cfg.seed)?;
    let data = match &a.dataset_cache {
        Some(path) if path.exists() => {
            let (cached, data) = read_dataset_file(path)?;
            if same_data(&cached, &cfg) {
                eprintln!("using cached patterns from {}", path.display());
                data
            } else {
                eprintln!("{} was built with other settings; regenerating", path.display());
                let data = make_dataset(&images, &cfg)?;
                write_dataset_file(path, &cfg, &data)?;
                data
            }
        }
        Some(path) => {
            let data = make_dataset(&images, &cfg)?;
            write_dataset_file(path, &cfg, &data)?;
            data
        }
        None => make_dataset(&images, &cfg)?,
    };
    let outcome = with_thread_pool(a.flags.threads(), || train(&data, &cfg))??;
    for r in &outcome.report.restarts {
        eprintln!(
            "restart {:2}: loss {:.6} -> {:.6} in {} iterations ({:?}), {} degenerate patterns",
            r.index, r.initial_loss, r.final_loss, r.iterations, r.stop, r.skipped_patterns
        );
    }
    let model = ModelFile {
        net: outcome.net,
        noise_sigma: cfg.sigma,
        scale: cfg.scale,
        frames: cfg.frames,
    };
    let hw = kernel_half_width(&Kernel::Mlp(model.net.clone()), cfg.scale)?;
    eprintln!(
        "best restart {}: loss {:.6}, half-width {:.4} px",
        outcome.report.best, outcome.final_loss, hw
    );
    model.write(&a.out)?;
    Ok(())
}

fn superres(a: SuperresArgs) -> Result<()> {
    let frames = read_frames(&a.frames)?;
    let rec = match a.kernel {
        KernelChoice::Mlp => {
            let Some(model) = a.model.clone() else {
                bail!("--kernel mlp needs --model");
            };
            let cfg = PipelineConfig {
                scale: a.scale,
                reference_index: a.reference,
                model_path: model,
                filter_path: a.filter.clone(),
                transforms_path: a.transforms.clone(),
                threads: a.threads,
                deterministic: a.deterministic,
            };
            superresolve_detailed(&frames, &cfg)?
        }
        KernelChoice::Nearest => {
            let filter = a.filter.as_ref().map(FirFilter::read).transpose()?;
            let transforms = a.transforms.as_ref().map(registration::read_transforms_file).transpose()?;
            let threads = if a.deterministic { 1 } else { a.threads };
            with_thread_pool(threads, || {
                reconstruct(
                    &frames,
                    transforms.as_deref(),
                    &Kernel::NearestOnly,
                    filter.as_ref(),
                    a.scale,
                    a.reference,
                    !a.deterministic,
                )
            })??
        }
    };
    eprintln!(
        "{}x{} output, interpolation {:.3} ms",
        rec.image.width(),
        rec.image.height(),
        rec.interpolation_time.as_secs_f64() * 1e3
    );
    write_pgm_file(&a.out, &rec.image, !a.ascii)?;
    Ok(())
}

fn design(a: DesignFilterArgs) -> Result<()> {
    ensure!(
        a.degraded.len() == a.target.len(),
        "{} degraded images but {} targets",
        a.degraded.len(),
        a.target.len()
    );
    let pairs = a
        .degraded
        .iter()
        .zip(&a.target)
        .map(|(d, t)| Ok((read_image(d)?, read_image(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut filter = design_filter(&pairs, a.size)?;
    filter.noise_sigma = a.noise_sigma;
    filter.write(&a.out)?;
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        train: a.flags.config(0.0),
        heldout_patterns: a.heldout_patterns,
        timing_frame_size: a.timing_frame_size,
        threads: a.flags.threads,
        deterministic: a.flags.deterministic,
    };
    let images = a.source.load(cfg.train.seed)?;
    let report = run_bench(&images, &a.sigmas, &cfg)?;
    if let Some(dir) = &a.model_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for m in &report.models {
            m.write(dir.join(format!("model_sigma{}.txt", m.noise_sigma)))?;
        }
    }
    let mut out = std::io::stdout().lock();
    write!(out, "{}\n{}", report.table(), report.key_values())?;
    Ok(())
}
