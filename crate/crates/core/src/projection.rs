//! Projection of a registered sequence onto the high-resolution grid.
//!
//! For every grid node the nearest pixel of each frame is found by mapping the
//! node back into the frame and rounding; its value and its distance to the
//! node (in high-resolution pixel units) form the network input.

use std::ops::Deref;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Point2};
use crate::registration::SimilarityTransform;

/// High-resolution output grid aligned to the reference frame.
///
/// Node `(u, v)` sits at reference coordinate `((u + ½)/L − ½, (v + ½)/L − ½)`,
/// so the `L × L` block of nodes covering one reference pixel is centred on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HighResGrid {
    pub scale: usize,
    pub width: usize,
    pub height: usize,
}

impl HighResGrid {
    pub fn new(reference_width: usize, reference_height: usize, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::invalid("scale factor must be >= 1"));
        }
        if reference_width == 0 || reference_height == 0 {
            return Err(Error::invalid("reference frame must be non-empty"));
        }
        Ok(HighResGrid {
            scale,
            width: reference_width * scale,
            height: reference_height * scale,
        })
    }

    pub fn for_frame(reference: &Image, scale: usize) -> Result<Self> {
        Self::new(reference.width(), reference.height(), scale)
    }

    #[inline]
    pub fn node_coord(&self, u: usize, v: usize) -> Point2 {
        let l = self.scale as f64;
        Point2::new((u as f64 + 0.5) / l - 0.5, (v as f64 + 0.5) / l - 0.5)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborSample {
    /// Gray level of the nearest pixel.
    pub value: f64,
    /// Distance to the node in high-resolution pixel units.
    pub distance: f64,
    /// The node maps more than one pixel outside this frame; the value is a
    /// clamped border pixel.
    pub out_of_frame: bool,
}

impl NeighborSample {
    pub const fn new(value: f64, distance: f64) -> Self {
        NeighborSample {
            value,
            distance,
            out_of_frame: false,
        }
    }
}

/// One sample per frame, in frame order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborArray(pub Vec<NeighborSample>);

impl Deref for NeighborArray {
    type Target = [NeighborSample];

    fn deref(&self) -> &[NeighborSample] {
        &self.0
    }
}

impl From<Vec<NeighborSample>> for NeighborArray {
    fn from(v: Vec<NeighborSample>) -> Self {
        NeighborArray(v)
    }
}

/// Neighbor arrays for every grid node, row-major, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborField {
    grid: HighResGrid,
    frames: usize,
    samples: Vec<NeighborSample>,
}

impl NeighborField {
    pub fn grid(&self) -> HighResGrid {
        self.grid
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Samples of node `index` (row-major).
    #[inline]
    pub fn node(&self, index: usize) -> &[NeighborSample] {
        &self.samples[index * self.frames..(index + 1) * self.frames]
    }

    pub fn at(&self, u: usize, v: usize) -> &[NeighborSample] {
        self.node(v * self.grid.width + u)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[NeighborSample]> + '_ {
        self.samples.chunks_exact(self.frames)
    }

    /// Evaluates `f` on every node and collects the results into an image of
    /// the grid size. Rows are evaluated in parallel when `parallel` is set;
    /// each node is computed independently, so the output does not depend on
    /// scheduling.
    pub fn map_to_image<F>(&self, parallel: bool, f: F) -> Image
    where
        F: Fn(&[NeighborSample]) -> f64 + Sync,
    {
        let w = self.grid.width;
        let mut out = vec![0.0; self.grid.len()];
        let row = |(v, dst): (usize, &mut [f64])| {
            for (u, d) in dst.iter_mut().enumerate() {
                *d = f(self.node(v * w + u));
            }
        };
        if parallel {
            out.par_chunks_mut(w).enumerate().for_each(row);
        } else {
            out.chunks_mut(w).enumerate().for_each(row);
        }
        Image::new(w, self.grid.height, out).expect("grid shape is consistent")
    }
}

/// Frames with their transforms, prepared for repeated nearest-pixel lookups.
pub struct Projector<'a> {
    frames: &'a [Image],
    forward: Vec<SimilarityTransform>,
    inverse: Vec<SimilarityTransform>,
    grid: HighResGrid,
}

impl<'a> Projector<'a> {
    pub fn new(frames: &'a [Image], transforms: &[SimilarityTransform], grid: HighResGrid) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("projection needs at least one frame"));
        }
        if frames.len() != transforms.len() {
            return Err(Error::invalid(format!(
                "{} frames but {} transforms",
                frames.len(),
                transforms.len()
            )));
        }
        for t in transforms {
            t.validate()?;
        }
        Ok(Projector {
            frames,
            forward: transforms.to_vec(),
            inverse: transforms.iter().map(|t| t.invert()).collect(),
            grid,
        })
    }

    /// Nearest pixel of frame `k` to the reference point `r`.
    #[inline]
    fn nearest(&self, k: usize, r: Point2) -> NeighborSample {
        let frame = &self.frames[k];
        let (w, h) = (frame.width() as f64, frame.height() as f64);
        let q = self.inverse[k].apply(r);
        let out_of_frame = q.x < -1.0 || q.y < -1.0 || q.x > w || q.y > h;
        let i = q.x.round().clamp(0.0, w - 1.0);
        let j = q.y.round().clamp(0.0, h - 1.0);
        let center = self.forward[k].apply(Point2::new(i, j));
        NeighborSample {
            value: frame.get(i as usize, j as usize),
            distance: r.dist(center) * self.grid.scale as f64,
            out_of_frame,
        }
    }

    fn fill_node(&self, u: usize, v: usize, dst: &mut [NeighborSample]) {
        let r = self.grid.node_coord(u, v);
        for (k, d) in dst.iter_mut().enumerate() {
            *d = self.nearest(k, r);
        }
    }

    pub fn gather(&self, u: usize, v: usize) -> Result<NeighborArray> {
        if u >= self.grid.width || v >= self.grid.height {
            return Err(Error::invalid(format!(
                "node ({u}, {v}) outside {}x{} grid",
                self.grid.width, self.grid.height
            )));
        }
        let mut out = vec![NeighborSample::new(0.0, 0.0); self.frames.len()];
        self.fill_node(u, v, &mut out);
        Ok(NeighborArray(out))
    }

    pub fn field(&self, parallel: bool) -> NeighborField {
        let n = self.frames.len();
        let w = self.grid.width;
        let mut samples = vec![NeighborSample::new(0.0, 0.0); self.grid.len() * n];
        let row = |(v, dst): (usize, &mut [NeighborSample])| {
            for (u, node) in dst.chunks_exact_mut(n).enumerate() {
                self.fill_node(u, v, node);
            }
        };
        if parallel {
            samples.par_chunks_mut(w * n).enumerate().for_each(row);
        } else {
            samples.chunks_mut(w * n).enumerate().for_each(row);
        }
        NeighborField {
            grid: self.grid,
            frames: n,
            samples,
        }
    }
}

pub fn gather_neighbors(
    frames: &[Image],
    transforms: &[SimilarityTransform],
    grid: HighResGrid,
    node: (usize, usize),
) -> Result<NeighborArray> {
    Projector::new(frames, transforms, grid)?.gather(node.0, node.1)
}

pub fn build_neighbor_field(
    frames: &[Image],
    transforms: &[SimilarityTransform],
    grid: HighResGrid,
) -> Result<NeighborField> {
    Ok(Projector::new(frames, transforms, grid)?.field(true))
}
