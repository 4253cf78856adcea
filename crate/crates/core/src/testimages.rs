//! Procedural grayscale test images.
//!
//! Used by the test suites, the benchmarks and the CLI when no still images
//! are supplied. Everything here is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, Point2};
use crate::registration::SimilarityTransform;

/// Band-limited analytic texture: a sum of plane waves around mid-gray.
#[derive(Debug, Clone)]
pub struct WaveTexture {
    waves: Vec<(f64, f64, f64, f64)>,
    offset: f64,
}

impl WaveTexture {
    pub fn new(seed: u64, count: usize, min_period: f64, max_period: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = 90.0 / (count as f64).sqrt();
        let waves = (0..count)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let period = rng.random_range(min_period..max_period);
                let k = std::f64::consts::TAU / period;
                (
                    k * angle.cos(),
                    k * angle.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    amp * rng.random_range(0.5..1.0),
                )
            })
            .collect();
        WaveTexture {
            waves,
            offset: 128.0,
        }
    }

    #[inline]
    pub fn eval(&self, p: Point2) -> f64 {
        self.offset
            + self
                .waves
                .iter()
                .map(|&(kx, ky, phase, a)| a * (kx * p.x + ky * p.y + phase).sin())
                .sum::<f64>()
    }

    pub fn render(&self, width: usize, height: usize) -> Image {
        Image::from_fn(width, height, |x, y| self.eval(Point2::new(x as f64, y as f64)))
    }
}

/// Textured image suitable for registration tests.
pub fn texture(width: usize, height: usize, seed: u64) -> Image {
    WaveTexture::new(seed, 12, 6.0, 24.0).render(width, height)
}

/// `(reference, frame)` where `frame(x) = reference_fn(t(x))` is rendered from
/// the analytic texture, so `t` is the exact frame→reference transform.
pub fn warped_texture(width: usize, height: usize, seed: u64, t: &SimilarityTransform) -> (Image, Image) {
    let tex = WaveTexture::new(seed, 12, 6.0, 24.0);
    let reference = tex.render(width, height);
    let frame = Image::from_fn(width, height, |x, y| tex.eval(t.apply(Point2::new(x as f64, y as f64))));
    (reference, frame)
}

fn supersample(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> Image {
    const S: usize = 4;
    Image::from_fn(width, height, |x, y| {
        let mut acc = 0.0;
        for j in 0..S {
            for i in 0..S {
                let sx = x as f64 + (i as f64 + 0.5) / S as f64 - 0.5;
                let sy = y as f64 + (j as f64 + 0.5) / S as f64 - 0.5;
                acc += f(sx, sy);
            }
        }
        acc / (S * S) as f64
    })
}

/// Flat-shaded discs and rectangles with sharp (anti-aliased) edges.
pub fn shapes(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    enum Shape {
        Disc(f64, f64, f64, f64),
        Rect(f64, f64, f64, f64, f64),
    }
    let shapes: Vec<Shape> = (0..14)
        .map(|i| {
            let v = rng.random_range(20.0..235.0);
            if i % 2 == 0 {
                Shape::Disc(rng.random_range(0.0..w), rng.random_range(0.0..h), rng.random_range(4.0..w / 5.0), v)
            } else {
                let x0 = rng.random_range(0.0..w);
                let y0 = rng.random_range(0.0..h);
                Shape::Rect(x0, y0, x0 + rng.random_range(5.0..w / 3.0), y0 + rng.random_range(5.0..h / 3.0), v)
            }
        })
        .collect();
    let background = rng.random_range(60.0..120.0);
    supersample(width, height, |x, y| {
        let mut v = background;
        for s in &shapes {
            match *s {
                Shape::Disc(cx, cy, r, val) if (x - cx).hypot(y - cy) <= r => v = val,
                Shape::Rect(x0, y0, x1, y1, val) if x >= x0 && x <= x1 && y >= y0 && y <= y1 => v = val,
                _ => {}
            }
        }
        v
    })
}

/// Concentric rings with a slowly increasing frequency.
pub fn rings(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = width as f64 * rng.random_range(0.3..0.7);
    let cy = height as f64 * rng.random_range(0.3..0.7);
    let k = 1.0 / (width.max(height) as f64 * rng.random_range(14.0..20.0));
    supersample(width, height, |x, y| {
        let r2 = (x - cx).powi(2) + (y - cy).powi(2);
        128.0 + 100.0 * (std::f64::consts::PI * k * r2).cos()
    })
}

/// Smoothed random noise (fine texture with no dominant orientation).
pub fn speckle(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Image::from_fn(width, height, |_, _| rng.random_range(0.0..255.0));
    let smooth = raw.box_smooth3().box_smooth3();
    let (lo, hi) = smooth.min_max();
    let span = (hi - lo).max(1e-9);
    Image::from_fn(width, height, |x, y| 20.0 + 215.0 * (smooth.get(x, y) - lo) / span)
}

fn smoothed(img: Image, passes: usize) -> Image {
    (0..passes).fold(img, |i, _| i.box_smooth3())
}

/// Four stills of widely different content: waves, shapes, rings, speckle.
/// Shape edges and speckle get a mild blur, like a scene seen through optics.
pub fn training_set(size: usize, seed: u64) -> Vec<Image> {
    vec![
        WaveTexture::new(seed, 10, 12.0, 48.0).render(size, size),
        smoothed(shapes(size, size, seed.wrapping_add(1)), 2),
        rings(size, size, seed.wrapping_add(2)),
        smoothed(speckle(size, size, seed.wrapping_add(3)), 3),
    ]
}
