use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{TrainConfig, TrainingPattern};
use crate::error::{Error, Result};
use crate::image::{Image, Point2};
use crate::projection::{NeighborArray, NeighborSample};

/// Mean of the `L × L` bilinear samples covering one low-resolution pixel
/// centred at `center` (high-resolution coordinates).
pub fn synth_lowres_pixel(img: &Image, center: Point2, scale: usize) -> Result<f64> {
    let half = (scale as f64 - 1.0) / 2.0;
    let (w, h) = ((img.width() - 1) as f64, (img.height() - 1) as f64);
    if scale == 0
        || center.x - half < 0.0
        || center.y - half < 0.0
        || center.x + half > w
        || center.y + half > h
    {
        return Err(Error::FootprintOutside {
            x: center.x,
            y: center.y,
        });
    }
    Ok(box_sample(img, center, scale))
}

/// [`synth_lowres_pixel`] without the footprint check; samples past the
/// border are clamped.
pub(crate) fn box_sample(img: &Image, center: Point2, scale: usize) -> f64 {
    let half = (scale as f64 - 1.0) / 2.0;
    let mut acc = 0.0;
    for j in 0..scale {
        for i in 0..scale {
            acc += img.sample_bilinear(Point2::new(
                center.x + i as f64 - half,
                center.y + j as f64 - half,
            ));
        }
    }
    acc / (scale * scale) as f64
}

/// Draws pattern sites preferring the vicinity of strong gray-level changes.
#[derive(Debug, Clone)]
struct SiteSampler {
    margin: usize,
    inner_width: usize,
    index: Option<WeightedIndex<f64>>,
    sites: usize,
}

impl SiteSampler {
    fn new(img: &Image, margin: usize) -> Result<Self> {
        let min = 2 * margin + 1;
        if img.width() < min || img.height() < min {
            return Err(Error::ImageTooSmall {
                width: img.width(),
                height: img.height(),
                min,
            });
        }
        let saliency = img.gradient_magnitude().box_smooth3();
        let inner_width = img.width() - 2 * margin;
        let inner_height = img.height() - 2 * margin;
        let mut weights = Vec::with_capacity(inner_width * inner_height);
        for y in margin..margin + inner_height {
            for x in margin..margin + inner_width {
                weights.push(saliency.get(x, y));
            }
        }
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        // flat images fall back to uniform sampling
        let index = if mean > 0.0 {
            let eps = 0.01 * mean;
            Some(WeightedIndex::new(weights.iter().map(|w| w + eps)).expect("positive weights"))
        } else {
            None
        };
        Ok(SiteSampler {
            margin,
            inner_width,
            index,
            sites: weights.len(),
        })
    }

    fn draw(&self, rng: &mut impl Rng) -> Point2 {
        let k = match &self.index {
            Some(idx) => idx.sample(rng),
            None => rng.random_range(0..self.sites),
        };
        let x = (k % self.inner_width + self.margin) as f64;
        let y = (k / self.inner_width + self.margin) as f64;
        Point2::new(x + rng.random_range(-0.5..0.5), y + rng.random_range(-0.5..0.5))
    }
}

/// One target site for `img`, with sub-pixel jitter. Sites lie at least
/// `cfg.margin()` pixels from the border.
pub fn sample_target_location(img: &Image, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Point2> {
    Ok(SiteSampler::new(img, cfg.margin())?.draw(rng))
}

/// Pattern generator bound to one still image.
#[derive(Debug, Clone)]
pub struct PatternSource<'a> {
    img: &'a Image,
    cfg: TrainConfig,
    sites: SiteSampler,
}

impl<'a> PatternSource<'a> {
    pub fn new(img: &'a Image, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PatternSource {
            img,
            cfg: cfg.clone(),
            sites: SiteSampler::new(img, cfg.margin())?,
        })
    }

    pub fn location(&self, rng: &mut impl Rng) -> Point2 {
        self.sites.draw(rng)
    }

    /// Offset uniform in the scatter disk, in low-resolution pixels.
    fn offset(&self, rng: &mut impl Rng) -> Point2 {
        let r = self.cfg.scatter_radius * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        Point2::new(r * a.cos(), r * a.sin())
    }

    pub fn pattern(&self, rng: &mut impl Rng) -> Result<TrainingPattern> {
        let location = self.location(rng);
        let offsets: Vec<Point2> = (0..self.cfg.frames).map(|_| self.offset(rng)).collect();
        self.pattern_at(location, &offsets, rng)
    }

    /// Pattern at a given target site and scatter offsets (low-resolution
    /// pixels); only the input noise is drawn from `rng`, one standard normal
    /// per sample whatever the noise level.
    pub fn pattern_at(&self, location: Point2, offsets: &[Point2], rng: &mut impl Rng) -> Result<TrainingPattern> {
        let l = self.cfg.scale as f64;
        let target = synth_lowres_pixel(self.img, location, self.cfg.scale)?;
        let mut samples = Vec::with_capacity(offsets.len());
        for off in offsets {
            let at = Point2::new(location.x + off.x * l, location.y + off.y * l);
            let clean = synth_lowres_pixel(self.img, at, self.cfg.scale)?;
            let z: f64 = rng.sample(StandardNormal);
            samples.push(NeighborSample::new(clean + self.cfg.sigma * z, off.norm() * l));
        }
        Ok(TrainingPattern {
            samples: NeighborArray(samples),
            target,
        })
    }
}

pub fn make_pattern(img: &Image, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<TrainingPattern> {
    PatternSource::new(img, cfg)?.pattern(rng)
}

/// `cfg.patterns` patterns drawn round-robin from `images`; a pure function of
/// the images and the config.
pub fn make_dataset(images: &[Image], cfg: &TrainConfig) -> Result<Vec<TrainingPattern>> {
    if images.is_empty() {
        return Err(Error::invalid("dataset needs at least one image"));
    }
    let sources = images
        .iter()
        .map(|img| PatternSource::new(img, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.patterns)
        .map(|i| sources[i % sources.len()].pattern(&mut rng))
        .collect()
}

const CACHE_MAGIC: &[u8; 4] = b"PNND";
const CACHE_VERSION: u32 = 1;

/// Binary dataset cache: magic, version, config echo, then each pattern as
/// `target, (value, distance) × N`, all little-endian.
pub fn write_dataset_cache(
    mut out: impl Write,
    cfg: &TrainConfig,
    data: &[TrainingPattern],
) -> std::io::Result<()> {
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&cfg.sigma.to_le_bytes())?;
    for v in [cfg.frames, cfg.scale, data.len()] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&cfg.scatter_radius.to_le_bytes())?;
    for v in [cfg.restarts, cfg.cg_max_iters] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&cfg.cg_tol.to_le_bytes())?;
    out.write_all(&cfg.seed.to_le_bytes())?;
    for p in data {
        if p.samples.len() != cfg.frames {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "pattern length differs from cfg.frames",
            ));
        }
        out.write_all(&p.target.to_le_bytes())?;
        for s in p.samples.iter() {
            out.write_all(&s.value.to_le_bytes())?;
            out.write_all(&s.distance.to_le_bytes())?;
        }
    }
    Ok(())
}

struct ByteReader {
    buf: Vec<u8>,
    pos: usize,
}

impl ByteReader {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .buf
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::parse("dataset cache", 0, format!("truncated at byte {}", self.pos)))?;
        self.pos += N;
        Ok(s.try_into().expect("slice length N"))
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::parse("dataset cache", 0, format!("count {v} too large")))
    }
}

pub fn read_dataset_cache(mut input: impl Read) -> Result<(TrainConfig, Vec<TrainingPattern>)> {
    let mut buf = Vec::new();
    input
        .read_to_end(&mut buf)
        .map_err(|e| Error::io("reading dataset cache", e))?;
    let mut r = ByteReader { buf, pos: 0 };
    if &r.take::<4>()? != CACHE_MAGIC {
        return Err(Error::parse("dataset cache", 0, "bad magic"));
    }
    let version = u32::from_le_bytes(r.take::<4>()?);
    if version != CACHE_VERSION {
        return Err(Error::parse("dataset cache", 0, format!("unsupported version {version}")));
    }
    let sigma = r.f64()?;
    let frames = r.usize()?;
    let scale = r.usize()?;
    let count = r.usize()?;
    let scatter_radius = r.f64()?;
    let restarts = r.usize()?;
    let cg_max_iters = r.usize()?;
    let cg_tol = r.f64()?;
    let seed = r.u64()?;
    let cfg = TrainConfig {
        sigma,
        frames,
        scale,
        patterns: count,
        scatter_radius,
        restarts,
        cg_max_iters,
        cg_tol,
        seed,
        ..TrainConfig::default()
    };
    let mut data = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let target = r.f64()?;
        let mut samples = Vec::with_capacity(frames.min(1 << 16));
        for _ in 0..frames {
            let value = r.f64()?;
            let distance = r.f64()?;
            samples.push(NeighborSample::new(value, distance));
        }
        data.push(TrainingPattern {
            samples: NeighborArray(samples),
            target,
        });
    }
    Ok((cfg, data))
}

pub fn write_dataset_file(path: &Path, cfg: &TrainConfig, data: &[TrainingPattern]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset_cache(&mut w, cfg, data)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_dataset_file(path: &Path) -> Result<(TrainConfig, Vec<TrainingPattern>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_dataset_cache(std::io::BufReader::new(file))
}
