//! Least-squares FIR restoration filter applied to the interpolated image.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_FILTER_SIZE: usize = 7;
const RIDGE: f64 = 1e-8;

/// Odd-sized square correlation kernel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    size: usize,
    coeffs: Vec<f64>,
    /// Input noise level the filter was designed for, in gray levels.
    pub noise_sigma: f64,
}

impl FirFilter {
    pub fn new(size: usize, coeffs: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid(format!("filter size must be odd and >= 1, got {size}")));
        }
        if coeffs.len() != size * size {
            return Err(Error::invalid(format!(
                "filter of size {size} needs {} coefficients, got {}",
                size * size,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("filter coefficients must be finite"));
        }
        Ok(FirFilter {
            size,
            coeffs,
            noise_sigma,
        })
    }

    pub fn delta(size: usize) -> Result<Self> {
        let mut coeffs = vec![0.0; size * size];
        if let Some(c) = coeffs.get_mut(size * size / 2) {
            *c = 1.0;
        }
        Self::new(size, coeffs, 0.0)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient at offset `(dx, dy)` from the centre.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius() as isize;
        assert!(dx.abs() <= r && dy.abs() <= r, "offset outside filter support");
        self.coeffs[((dy + r) as usize) * self.size + (dx + r) as usize]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("FIRF 1\n");
        writeln!(
            s,
            "size={} noise_sigma={} orientation=correlation",
            self.size, self.noise_sigma
        )
        .unwrap();
        for row in self.coeffs.chunks(self.size) {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<FirFilter> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == "FIRF 1" => {}
            _ => return Err(Error::parse("filter", 1, "expected header \"FIRF 1\"")),
        }
        let (_, meta) = lines
            .next()
            .ok_or_else(|| Error::parse("filter", 2, "missing metadata line"))?;
        let (mut size, mut sigma) = (None, None);
        for tok in meta.split_whitespace() {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse("filter", 2, format!("expected key=value, got {tok:?}")))?;
            let bad = |what: &str| Error::parse("filter", 2, format!("bad {what} {value:?}"));
            match key {
                "size" => size = Some(value.parse::<usize>().map_err(|_| bad("size"))?),
                "noise_sigma" => sigma = Some(value.parse::<f64>().map_err(|_| bad("noise_sigma"))?),
                "orientation" if value == "correlation" => {}
                "orientation" => return Err(bad("orientation")),
                _ => return Err(Error::parse("filter", 2, format!("unknown key {key:?}"))),
            }
        }
        let size = size.ok_or_else(|| Error::parse("filter", 2, "missing size"))?;
        let sigma = sigma.ok_or_else(|| Error::parse("filter", 2, "missing noise_sigma"))?;
        let mut coeffs = Vec::with_capacity(size * size);
        for (i, line) in lines {
            for tok in line.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| Error::parse("filter", i + 1, format!("bad coefficient {tok:?}")))?;
                coeffs.push(v);
            }
        }
        FirFilter::new(size, coeffs, sigma).map_err(|e| Error::parse("filter", 3, e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<FirFilter> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn check_pairs(pairs: &[(Image, Image)], size: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid("filter design needs at least one pair"));
    }
    if size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!("filter size must be odd and >= 1, got {size}")));
    }
    for (degraded, target) in pairs {
        degraded.check_same_size(target)?;
        if degraded.width() < size || degraded.height() < size {
            return Err(Error::ImageTooSmall {
                width: degraded.width(),
                height: degraded.height(),
                min: size,
            });
        }
    }
    Ok(())
}

/// Least-squares filter mapping each degraded image onto its target, fitted
/// over pixels at least `size / 2` from the border.
pub fn design_filter(pairs: &[(Image, Image)], size: usize) -> Result<FirFilter> {
    check_pairs(pairs, size)?;
    let n = size * size;
    let r = size / 2;
    let mut ata = DMatrix::<f64>::zeros(n, n);
    let mut atb = DVector::<f64>::zeros(n);
    let mut patch = vec![0.0; n];
    for (degraded, target) in pairs {
        for y in r..degraded.height() - r {
            for x in r..degraded.width() - r {
                for (j, row) in patch.chunks_mut(size).enumerate() {
                    for (i, p) in row.iter_mut().enumerate() {
                        *p = degraded.get(x + i - r, y + j - r);
                    }
                }
                let t = target.get(x, y);
                for a in 0..n {
                    let pa = patch[a];
                    atb[a] += pa * t;
                    for b in a..n {
                        ata[(a, b)] += pa * patch[b];
                    }
                }
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            ata[(a, b)] = ata[(b, a)];
        }
        ata[(a, a)] += RIDGE;
    }
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::DesignFailed(format!("normal equations of the {size}x{size} filter are singular")))?;
    let c = chol.solve(&atb);
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::DesignFailed("non-finite filter coefficients".into()));
    }
    FirFilter::new(size, c.iter().copied().collect(), 0.0)
}

/// Sum of squared residuals the design minimizes, over the same pixels.
pub fn design_objective(pairs: &[(Image, Image)], filter: &FirFilter) -> Result<f64> {
    check_pairs(pairs, filter.size())?;
    let r = filter.radius();
    let mut total = 0.0;
    for (degraded, target) in pairs {
        let out = apply_filter(degraded, filter);
        for y in r..degraded.height() - r {
            for x in r..degraded.width() - r {
                total += (out.get(x, y) - target.get(x, y)).powi(2);
            }
        }
    }
    Ok(total)
}

fn filter_row(img: &Image, f: &FirFilter, y: usize, out: &mut [f64]) {
    let r = f.radius() as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let data = img.data();
    for (x, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for dy in -r..=r {
            let sy = (y as isize + dy).clamp(0, h - 1) as usize;
            let row = &data[sy * img.width()..(sy + 1) * img.width()];
            let coeffs = &f.coeffs[((dy + r) as usize) * f.size..((dy + r + 1) as usize) * f.size];
            for (dx, c) in (-r..=r).zip(coeffs) {
                let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                acc += c * row[sx];
            }
        }
        *o = acc;
    }
}

/// 2-D correlation with replicated borders, rows in parallel.
pub fn apply_filter(img: &Image, f: &FirFilter) -> Image {
    apply_filter_with(img, f, true)
}

pub fn apply_filter_with(img: &Image, f: &FirFilter, parallel: bool) -> Image {
    let mut out = Image::filled(img.width(), img.height(), 0.0);
    let w = img.width();
    if parallel {
        out.data_mut()
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| filter_row(img, f, y, row));
    } else {
        out.data_mut()
            .chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| filter_row(img, f, y, row));
    }
    out
}
