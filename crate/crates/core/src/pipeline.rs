//! End-to-end superresolution: registration, nearest-pixel gathering,
//! learned-kernel interpolation and optional restoration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, Point2};
use crate::kernelnet::{pnn_combine, Kernel, ModelFile};
use crate::projection::{HighResGrid, Projector};
use crate::registration::{self, SimilarityTransform};
use crate::restoration::{apply_filter_with, FirFilter};
use crate::training::box_sample;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scale: usize,
    pub reference_index: usize,
    pub model_path: PathBuf,
    pub filter_path: Option<PathBuf>,
    /// Frame→reference transforms; registration is skipped when given.
    pub transforms_path: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    pub threads: usize,
    /// Single-threaded evaluation.
    pub deterministic: bool,
}

impl PipelineConfig {
    pub fn new(model_path: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            scale: 3,
            reference_index: 0,
            model_path: model_path.into(),
            filter_path: None,
            transforms_path: None,
            threads: 0,
            deterministic: false,
        }
    }
}

/// Runs `f` on a pool of `threads` workers (0 = rayon's default).
pub fn with_thread_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Output of [`reconstruct`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: Image,
    /// Interpolated image before restoration.
    pub interpolated: Image,
    pub transforms: Vec<SimilarityTransform>,
    /// Time spent building the neighbour field and combining samples.
    pub interpolation_time: Duration,
}

fn check_frames(frames: &[Image], reference_index: usize) -> Result<()> {
    let Some(first) = frames.first() else {
        return Err(Error::invalid("superresolution needs at least one frame"));
    };
    for f in &frames[1..] {
        first.check_same_size(f)?;
    }
    if reference_index >= frames.len() {
        return Err(Error::invalid(format!(
            "reference index {reference_index} out of range for {} frames",
            frames.len()
        )));
    }
    Ok(())
}

/// Values every node of the `scale`× grid over the reference frame by
/// combining the nearest pixel of each projected frame.
pub fn interpolate(
    frames: &[Image],
    transforms: &[SimilarityTransform],
    kernel: &Kernel,
    scale: usize,
    reference_index: usize,
    parallel: bool,
) -> Result<Image> {
    check_frames(frames, reference_index)?;
    let grid = HighResGrid::for_frame(&frames[reference_index], scale)?;
    let projector = Projector::new(frames, transforms, grid)?;
    let field = projector.field(parallel);
    Ok(field.map_to_image(parallel, |samples| pnn_combine(samples, kernel)))
}

/// Full pipeline on in-memory inputs. Frames are registered against the
/// reference unless `transforms` is given.
pub fn reconstruct(
    frames: &[Image],
    transforms: Option<&[SimilarityTransform]>,
    kernel: &Kernel,
    filter: Option<&FirFilter>,
    scale: usize,
    reference_index: usize,
    parallel: bool,
) -> Result<Reconstruction> {
    check_frames(frames, reference_index)?;
    let transforms = match transforms {
        Some(t) => t.to_vec(),
        None => registration::register_sequence(frames, reference_index)?,
    };
    let start = Instant::now();
    let interpolated = interpolate(frames, &transforms, kernel, scale, reference_index, parallel)?;
    let interpolation_time = start.elapsed();
    let image = match filter {
        Some(f) => apply_filter_with(&interpolated, f, parallel),
        None => interpolated.clone(),
    };
    Ok(Reconstruction {
        image,
        interpolated,
        transforms,
        interpolation_time,
    })
}

/// Loads the model, filter and transforms named in `cfg` and superresolves
/// `frames`. The output is `scale` times the frame size.
pub fn superresolve(frames: &[Image], cfg: &PipelineConfig) -> Result<Image> {
    Ok(superresolve_detailed(frames, cfg)?.image)
}

pub fn superresolve_detailed(frames: &[Image], cfg: &PipelineConfig) -> Result<Reconstruction> {
    if cfg.scale == 0 {
        return Err(Error::invalid("scale must be >= 1"));
    }
    check_frames(frames, cfg.reference_index)?;
    let model = ModelFile::read(&cfg.model_path)?;
    if model.scale != cfg.scale {
        return Err(Error::ModelMismatch(format!(
            "model was trained for scale {}, pipeline runs at scale {}",
            model.scale, cfg.scale
        )));
    }
    let filter = cfg.filter_path.as_ref().map(FirFilter::read).transpose()?;
    let transforms = cfg
        .transforms_path
        .as_ref()
        .map(registration::read_transforms_file)
        .transpose()?;
    if let Some(t) = &transforms {
        if t.len() != frames.len() {
            return Err(Error::invalid(format!(
                "transforms file has {} entries for {} frames",
                t.len(),
                frames.len()
            )));
        }
    }
    let kernel = Kernel::Mlp(model.net);
    let threads = if cfg.deterministic { 1 } else { cfg.threads };
    with_thread_pool(threads, || {
        reconstruct(
            frames,
            transforms.as_deref(),
            &kernel,
            filter.as_ref(),
            cfg.scale,
            cfg.reference_index,
            !cfg.deterministic,
        )
    })?
}

/// Bilinear upsampling onto the same grid the pipeline reconstructs.
pub fn bilinear_upsample(img: &Image, scale: usize) -> Result<Image> {
    let grid = HighResGrid::for_frame(img, scale)?;
    Ok(Image::from_fn(grid.width, grid.height, |u, v| {
        img.sample_bilinear(grid.node_coord(u, v))
    }))
}

/// High-resolution pixel position of a reference-frame point.
fn to_high_res(p: Point2, scale: usize) -> Point2 {
    let l = scale as f64;
    let off = (l - 1.0) / 2.0;
    Point2::new(l * p.x + off, l * p.y + off)
}

/// The truth as the reference frame would see it: each node is the mean of
/// the low-resolution pixel footprint centred on it.
pub fn blurred_truth(truth: &Image, scale: usize) -> Image {
    Image::from_fn(truth.width(), truth.height(), |x, y| {
        box_sample(truth, Point2::new(x as f64, y as f64), scale)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scale: usize,
    pub frames: usize,
    pub sigma: f64,
    /// Maximum translation per axis, in low-resolution pixels.
    pub max_shift: f64,
    /// Maximum rotation, in degrees.
    pub max_rotation_deg: f64,
    /// Scale factors are drawn from `1 ± scale_jitter`.
    pub scale_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scale: 3,
            frames: 25,
            sigma: 0.0,
            max_shift: 1.0,
            max_rotation_deg: 1.0,
            scale_jitter: 0.01,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.scale >= 1
            && self.frames >= 1
            && self.sigma >= 0.0
            && self.sigma.is_finite()
            && self.max_shift >= 0.0
            && self.max_shift.is_finite()
            && self.max_rotation_deg >= 0.0
            && self.max_rotation_deg.is_finite()
            && (0.0..1.0).contains(&self.scale_jitter);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid synth config {self:?}")))
        }
    }
}

/// Degraded low-resolution sequence with the ground truth it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub frames: Vec<Image>,
    /// Exact frame→reference transforms; frame 0 is the reference.
    pub transforms: Vec<SimilarityTransform>,
    /// The high-resolution image cropped to `scale` times the frame size.
    pub truth: Image,
    pub config: SynthConfig,
}

impl SyntheticSequence {
    /// `key=value` lines describing how the sequence was generated.
    pub fn metadata(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        writeln!(s, "scale={}", c.scale).unwrap();
        writeln!(s, "frames={}", c.frames).unwrap();
        writeln!(s, "sigma={}", c.sigma).unwrap();
        writeln!(s, "max_shift={}", c.max_shift).unwrap();
        writeln!(s, "max_rotation_deg={}", c.max_rotation_deg).unwrap();
        writeln!(s, "scale_jitter={}", c.scale_jitter).unwrap();
        writeln!(s, "seed={}", c.seed).unwrap();
        writeln!(s, "frame_width={}", self.frames[0].width()).unwrap();
        writeln!(s, "frame_height={}", self.frames[0].height()).unwrap();
        writeln!(s, "reference_index=0").unwrap();
        s
    }
}

/// Warps `hr` with random similarity jitter, box-downsamples by the scale
/// and adds Gaussian noise.
pub fn synthesize(hr: &Image, cfg: &SynthConfig) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let l = cfg.scale;
    let (w, h) = (hr.width() / l, hr.height() / l);
    if w < 2 || h < 2 {
        return Err(Error::ImageTooSmall {
            width: hr.width(),
            height: hr.height(),
            min: 2 * l,
        });
    }
    let truth = hr.crop(0, 0, w * l, h * l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut transforms = Vec::with_capacity(cfg.frames);
    let mut frames = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let t = if k == 0 {
            SimilarityTransform::IDENTITY
        } else {
            let s = cfg.max_shift;
            let r = cfg.max_rotation_deg.to_radians();
            let j = cfg.scale_jitter;
            SimilarityTransform::new(
                rng.random_range(-s..=s),
                rng.random_range(-s..=s),
                rng.random_range(-r..=r),
                rng.random_range(1.0 - j..=1.0 + j),
            )?
        };
        let noise_seed: u64 = rng.random();
        let clean = Image::from_fn(w, h, |x, y| {
            let r = t.apply(Point2::new(x as f64, y as f64));
            box_sample(&truth, to_high_res(r, l), l)
        });
        frames.push(clean.add_gaussian_noise(cfg.sigma, noise_seed)?);
        transforms.push(t);
    }
    Ok(SyntheticSequence {
        frames,
        transforms,
        truth,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::rmse_interior;
    use crate::kernelnet::{seq_nn, KernelMlp};
    use crate::testimages::{shapes, texture};

    #[test]
    fn degenerate_single_frame_is_identity() {
        let img = texture(13, 9, 1);
        let r = reconstruct(
            &[img.clone()],
            Some(&[SimilarityTransform::IDENTITY]),
            &Kernel::NearestOnly,
            None,
            1,
            0,
            true,
        )
        .unwrap();
        assert_eq!(r.image, img);
    }

    #[test]
    fn bilinear_matches_grid_convention() {
        let img = Image::from_fn(6, 5, |x, y| 3.0 * x as f64 - 2.0 * y as f64 + 1.0);
        let up = bilinear_upsample(&img, 3).unwrap();
        assert_eq!((up.width(), up.height()), (18, 15));
        // linear field reproduced exactly away from the clamped border
        for v in 1..14 {
            for u in 1..17 {
                let p = HighResGrid::for_frame(&img, 3).unwrap().node_coord(u, v);
                assert!((up.get(u, v) - (3.0 * p.x - 2.0 * p.y + 1.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn synthesized_reference_matches_box_downsampling() {
        let hr = texture(60, 48, 2);
        let seq = synthesize(&hr, &SynthConfig { frames: 3, ..SynthConfig::default() }).unwrap();
        assert_eq!(seq.frames.len(), 3);
        assert_eq!(seq.transforms[0], SimilarityTransform::IDENTITY);
        assert_eq!((seq.frames[0].width(), seq.frames[0].height()), (20, 16));
        let blurred = blurred_truth(&seq.truth, 3);
        for y in 0..16 {
            for x in 0..20 {
                assert!((seq.frames[0].get(x, y) - blurred.get(3 * x + 1, 3 * y + 1)).abs() < 1e-9);
            }
        }
        for t in &seq.transforms[1..] {
            assert!(t.dx.abs() <= 1.0 && t.dy.abs() <= 1.0);
            assert!(t.theta.abs() <= 1f64.to_radians() && (t.scale - 1.0).abs() <= 0.01);
        }
        assert!(seq.metadata().contains("max_shift=1\n"));
    }

    #[test]
    fn synthesize_is_deterministic() {
        let hr = texture(48, 48, 3);
        let cfg = SynthConfig { frames: 4, sigma: 5.0, ..SynthConfig::default() };
        assert_eq!(synthesize(&hr, &cfg).unwrap(), synthesize(&hr, &cfg).unwrap());
    }

    #[test]
    fn nearest_kernel_equals_seq_nn_map() {
        let hr = texture(72, 72, 4);
        let seq = synthesize(&hr, &SynthConfig { frames: 6, ..SynthConfig::default() }).unwrap();
        let out = interpolate(&seq.frames, &seq.transforms, &Kernel::NearestOnly, 3, 0, true).unwrap();
        let grid = HighResGrid::for_frame(&seq.frames[0], 3).unwrap();
        let field = Projector::new(&seq.frames, &seq.transforms, grid).unwrap().field(false);
        let expect = field.map_to_image(false, seq_nn);
        assert_eq!(out, expect);
    }

    #[test]
    fn multi_frame_beats_bilinear() {
        let hr = shapes(96, 96, 5);
        let seq = synthesize(&hr, &SynthConfig::default()).unwrap();
        let out = interpolate(&seq.frames, &seq.transforms, &Kernel::exponential(1.0).unwrap(), 3, 0, true).unwrap();
        let bil = bilinear_upsample(&seq.frames[0], 3).unwrap();
        let a = rmse_interior(&out, &seq.truth, 6).unwrap();
        let b = rmse_interior(&bil, &seq.truth, 6).unwrap();
        assert!(a < b, "{a} >= {b}");
    }

    #[test]
    fn permuting_frames_keeps_output() {
        let hr = texture(60, 60, 6);
        let seq = synthesize(&hr, &SynthConfig { frames: 7, ..SynthConfig::default() }).unwrap();
        let kernel = Kernel::exponential(1.5).unwrap();
        let a = interpolate(&seq.frames, &seq.transforms, &kernel, 3, 0, true).unwrap();
        let order = [0, 4, 2, 6, 1, 5, 3];
        let frames: Vec<Image> = order.iter().map(|&i| seq.frames[i].clone()).collect();
        let transforms: Vec<SimilarityTransform> = order.iter().map(|&i| seq.transforms[i]).collect();
        let b = interpolate(&frames, &transforms, &kernel, 3, 0, true).unwrap();
        // the weighted sums add in a different order
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
        let n1 = interpolate(&seq.frames, &seq.transforms, &Kernel::NearestOnly, 3, 0, true).unwrap();
        let n2 = interpolate(&frames, &transforms, &Kernel::NearestOnly, 3, 0, true).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn superresolve_reads_files_and_checks_scale() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let net = KernelMlp::from_parts(&[(-1.0, 0.0)], &[1.0], 1.0).unwrap();
        let model = ModelFile { net, noise_sigma: 0.0, scale: 3, frames: 4 };
        let model_path = dir.join("m.txt");
        model.write(&model_path).unwrap();
        let hr = texture(48, 48, 7);
        let seq = synthesize(&hr, &SynthConfig { frames: 4, ..SynthConfig::default() }).unwrap();
        let tpath = dir.join("t.txt");
        registration::write_transforms_file(&tpath, &seq.transforms).unwrap();
        let mut cfg = PipelineConfig::new(&model_path);
        cfg.transforms_path = Some(tpath);
        cfg.deterministic = true;
        let out = superresolve(&seq.frames, &cfg).unwrap();
        assert_eq!((out.width(), out.height()), (48, 48));
        cfg.deterministic = false;
        cfg.threads = 2;
        assert_eq!(superresolve(&seq.frames, &cfg).unwrap(), out);
        cfg.scale = 2;
        assert!(matches!(superresolve(&seq.frames, &cfg), Err(Error::ModelMismatch(_))));
        cfg.scale = 3;
        cfg.model_path = dir.join("missing.txt");
        assert!(matches!(superresolve(&seq.frames, &cfg), Err(Error::Io { .. })));
    }
}
