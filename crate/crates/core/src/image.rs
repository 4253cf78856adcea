//! Grayscale raster, sub-pixel sampling, gradients, noise and error metrics.
//!
//! Coordinates are continuous pixel units with pixel `(i, j)` centred at
//! `(i, j)`; `x` runs along columns and `y` along rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Row-major grayscale image with unclamped real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite intensity at index {i}")));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Image filled with `value`.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel value with coordinates clamped into the image (replicate padding).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_size(&self, other: &Image) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear interpolation at a continuous point; coordinates outside the
    /// image are clamped to the border first.
    pub fn sample_bilinear(&self, p: Point2) -> f64 {
        let x = p.x.clamp(0.0, (self.width - 1) as f64);
        let y = p.y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Horizontal and vertical derivative images: central differences inside,
    /// one-sided differences on the borders.
    pub fn gradients(&self) -> (Image, Image) {
        let (w, h) = (self.width, self.height);
        let diff = |lo: f64, hi: f64, span: usize| {
            if span == 0 {
                0.0
            } else {
                (hi - lo) / span as f64
            }
        };
        let gx = Image::from_fn(w, h, |x, y| {
            let (a, b) = (x.saturating_sub(1), (x + 1).min(w - 1));
            diff(self.get(a, y), self.get(b, y), b - a)
        });
        let gy = Image::from_fn(w, h, |x, y| {
            let (a, b) = (y.saturating_sub(1), (y + 1).min(h - 1));
            diff(self.get(x, a), self.get(x, b), b - a)
        });
        (gx, gy)
    }

    pub fn gradient_magnitude(&self) -> Image {
        let (gx, gy) = self.gradients();
        let data = gx
            .data
            .iter()
            .zip(&gy.data)
            .map(|(a, b)| a.hypot(*b))
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// 3×3 box mean with replicate padding.
    pub fn box_smooth3(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| {
            let mut acc = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    acc += self.get_clamped(x as isize + dx, y as isize + dy);
                }
            }
            acc / 9.0
        })
    }

    /// Adds independent `Normal(0, sigma²)` noise from a generator seeded by `seed`.
    pub fn add_gaussian_noise(&self, sigma: f64, seed: u64) -> Result<Image> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("sigma validated above");
        let data = self.data.iter().map(|v| v + normal.sample(&mut rng)).collect();
        Ok(Image {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Copy of the rectangle `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(Image::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }
}

/// Root-mean-square difference in gray levels.
pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / a.data.len() as f64).sqrt())
}

/// RMSE restricted to pixels at least `margin` away from every border.
pub fn rmse_interior(a: &Image, b: &Image, margin: usize) -> Result<f64> {
    a.check_same_size(b)?;
    if 2 * margin >= a.width || 2 * margin >= a.height {
        return Err(Error::invalid(format!(
            "margin {margin} leaves no interior in {}x{}",
            a.width, a.height
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in margin..a.height - margin {
        for x in margin..a.width - margin {
            let d = a.get(x, y) - b.get(x, y);
            sum += d * d;
            n += 1;
        }
    }
    Ok((sum / n as f64).sqrt())
}
