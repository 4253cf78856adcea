//! Sub-pixel similarity registration of a frame against a reference.
//!
//! Gauss–Newton on a four-parameter similarity model, coarse to fine over a
//! factor-2 pyramid. The estimator works on the reference→frame map
//! `G(p) = c + M (p − c) + t` with `M = [[1+a, −b], [b, 1+a]]`, which is linear
//! in `(a, b, tx, ty)`, and returns its inverse (frame→reference).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Point2};

/// Maps frame coordinates to reference coordinates:
/// `x' = s(cosθ·x − sinθ·y) + dx`, `y' = s(sinθ·x + cosθ·y) + dy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub dx: f64,
    pub dy: f64,
    pub theta: f64,
    pub scale: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        dx: 0.0,
        dy: 0.0,
        theta: 0.0,
        scale: 1.0,
    };

    pub fn new(dx: f64, dy: f64, theta: f64, scale: f64) -> Result<Self> {
        let t = SimilarityTransform {
            dx,
            dy,
            theta,
            scale,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        SimilarityTransform {
            dx,
            dy,
            ..Self::IDENTITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.dx, self.dy, self.theta, self.scale]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.scale <= 0.0 {
            return Err(Error::invalid(format!(
                "similarity transform needs finite fields and scale > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2 {
            x: self.scale * (c * p.x - s * p.y) + self.dx,
            y: self.scale * (s * p.x + c * p.y) + self.dy,
        }
    }

    pub fn invert(&self) -> SimilarityTransform {
        let inv_scale = 1.0 / self.scale;
        let (s, c) = (-self.theta).sin_cos();
        SimilarityTransform {
            dx: -inv_scale * (c * self.dx - s * self.dy),
            dy: -inv_scale * (s * self.dx + c * self.dy),
            theta: -self.theta,
            scale: inv_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationOptions {
    pub levels: usize,
    pub max_iters: usize,
    /// Stop once the parameter update norm (px / rad) drops below this.
    pub tolerance: f64,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        RegistrationOptions {
            levels: 3,
            max_iters: 50,
            tolerance: 1e-4,
        }
    }
}

/// Outcome of [`estimate_traced`]: the final transform plus the estimate left
/// by each pyramid level, coarsest first.
#[derive(Debug, Clone)]
pub struct RegistrationTrace {
    pub transform: SimilarityTransform,
    pub level_estimates: Vec<SimilarityTransform>,
}

const MIN_VALID_PIXELS: usize = 16;
const MIN_PYRAMID_SIDE: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Params {
    a: f64,
    b: f64,
    tx: f64,
    ty: f64,
}

impl Params {
    const ZERO: Params = Params {
        a: 0.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    fn stepped(self, d: &Vector4<f64>, frac: f64) -> Params {
        Params {
            a: self.a + frac * d[0],
            b: self.b + frac * d[1],
            tx: self.tx + frac * d[2],
            ty: self.ty + frac * d[3],
        }
    }

    /// Reference→frame map in level-0 coordinates, centred at `c`.
    #[inline]
    fn map(&self, c: Point2, p: Point2) -> Point2 {
        let (px, py) = (p.x - c.x, p.y - c.y);
        Point2 {
            x: c.x + (1.0 + self.a) * px - self.b * py + self.tx,
            y: c.y + self.b * px + (1.0 + self.a) * py + self.ty,
        }
    }

    /// Frame→reference transform.
    fn to_transform(self, c: Point2) -> SimilarityTransform {
        let m11 = 1.0 + self.a;
        let scale = m11.hypot(self.b);
        let theta = self.b.atan2(m11);
        // G(p) = M p + (c − M c + t)
        let forward = SimilarityTransform {
            dx: c.x - (m11 * c.x - self.b * c.y) + self.tx,
            dy: c.y - (self.b * c.x + m11 * c.y) + self.ty,
            theta,
            scale,
        };
        forward.invert()
    }
}

struct Level {
    reference: Image,
    frame: Image,
    gx: Image,
    gy: Image,
    factor: f64,
}

impl Level {
    #[inline]
    fn lift(&self, v: f64) -> f64 {
        self.factor * (v + 0.5) - 0.5
    }

    #[inline]
    fn lower(&self, v: f64) -> f64 {
        (v + 0.5) / self.factor - 0.5
    }

    fn in_frame(&self, q: Point2) -> bool {
        q.x >= 0.0
            && q.y >= 0.0
            && q.x <= (self.frame.width() - 1) as f64
            && q.y <= (self.frame.height() - 1) as f64
    }

    /// Mean squared residual over reference pixels whose back-projection lands
    /// inside the frame, and the number of such pixels.
    fn objective(&self, params: &Params, c: Point2) -> (f64, usize) {
        let mut sum = 0.0;
        let mut n = 0;
        for y in 0..self.reference.height() {
            for x in 0..self.reference.width() {
                let p0 = Point2::new(self.lift(x as f64), self.lift(y as f64));
                let q0 = params.map(c, p0);
                let q = Point2::new(self.lower(q0.x), self.lower(q0.y));
                if !self.in_frame(q) {
                    continue;
                }
                let r = self.frame.sample_bilinear(q) - self.reference.get(x, y);
                sum += r * r;
                n += 1;
            }
        }
        if n == 0 {
            (f64::INFINITY, 0)
        } else {
            (sum / n as f64, n)
        }
    }

    fn normal_equations(&self, params: &Params, c: Point2) -> (Matrix4<f64>, Vector4<f64>, usize) {
        let mut h = Matrix4::zeros();
        let mut g = Vector4::zeros();
        let mut n = 0;
        let inv = 1.0 / self.factor;
        for y in 0..self.reference.height() {
            for x in 0..self.reference.width() {
                let p0 = Point2::new(self.lift(x as f64), self.lift(y as f64));
                let q0 = params.map(c, p0);
                let q = Point2::new(self.lower(q0.x), self.lower(q0.y));
                if !self.in_frame(q) {
                    continue;
                }
                let r = self.frame.sample_bilinear(q) - self.reference.get(x, y);
                // frame gradient per level-0 pixel
                let fx = self.gx.sample_bilinear(q) * inv;
                let fy = self.gy.sample_bilinear(q) * inv;
                let (px, py) = (p0.x - c.x, p0.y - c.y);
                let j = Vector4::new(fx * px + fy * py, -fx * py + fy * px, fx, fy);
                h += j * j.transpose();
                g += j * r;
                n += 1;
            }
        }
        (h, g, n)
    }
}

fn downsample2(img: &Image) -> Image {
    let w = img.width().div_ceil(2);
    let h = img.height().div_ceil(2);
    Image::from_fn(w, h, |x, y| {
        let (x0, y0) = (2 * x as isize, 2 * y as isize);
        (img.get_clamped(x0, y0)
            + img.get_clamped(x0 + 1, y0)
            + img.get_clamped(x0, y0 + 1)
            + img.get_clamped(x0 + 1, y0 + 1))
            / 4.0
    })
}

fn build_levels(reference: &Image, frame: &Image, levels: usize) -> Vec<Level> {
    let mut out = Vec::with_capacity(levels);
    let (mut r, mut f) = (reference.clone(), frame.clone());
    let mut factor = 1.0;
    for l in 0..levels {
        if l > 0 {
            if r.width().min(r.height()) / 2 < MIN_PYRAMID_SIDE {
                break;
            }
            r = downsample2(&r);
            f = downsample2(&f);
            factor *= 2.0;
        }
        let (gx, gy) = f.gradients();
        out.push(Level {
            reference: r.clone(),
            frame: f.clone(),
            gx,
            gy,
            factor,
        });
    }
    out
}

/// Mean squared residual `frame(T⁻¹(p)) − reference(p)` over reference pixels
/// whose back-projection falls inside the frame.
pub fn alignment_objective(reference: &Image, frame: &Image, t: &SimilarityTransform) -> f64 {
    let inv = t.invert();
    let mut sum = 0.0;
    let mut n = 0usize;
    let (fw, fh) = ((frame.width() - 1) as f64, (frame.height() - 1) as f64);
    for y in 0..reference.height() {
        for x in 0..reference.width() {
            let q = inv.apply(Point2::new(x as f64, y as f64));
            if q.x < 0.0 || q.y < 0.0 || q.x > fw || q.y > fh {
                continue;
            }
            let r = frame.sample_bilinear(q) - reference.get(x, y);
            sum += r * r;
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

pub fn estimate(
    reference: &Image,
    frame: &Image,
    levels: usize,
    max_iters: usize,
) -> Result<SimilarityTransform> {
    let opts = RegistrationOptions {
        levels,
        max_iters,
        ..RegistrationOptions::default()
    };
    estimate_traced(reference, frame, &opts).map(|t| t.transform)
}

pub fn estimate_traced(
    reference: &Image,
    frame: &Image,
    opts: &RegistrationOptions,
) -> Result<RegistrationTrace> {
    reference.check_same_size(frame)?;
    if opts.levels == 0 {
        return Err(Error::invalid("registration needs at least one pyramid level"));
    }
    let c = Point2::new(
        (reference.width() - 1) as f64 / 2.0,
        (reference.height() - 1) as f64 / 2.0,
    );
    let pyramid = build_levels(reference, frame, opts.levels);
    let mut params = Params::ZERO;
    let mut level_estimates = Vec::with_capacity(pyramid.len());
    let fail = |reason: String, p: Params| Error::EstimationFailed {
        reason,
        last: p.to_transform(c),
    };

    for level in pyramid.iter().rev() {
        let (mut current, mut count) = level.objective(&params, c);
        for _ in 0..opts.max_iters {
            if count < MIN_VALID_PIXELS {
                return Err(fail(
                    format!("only {count} overlapping pixels at pyramid factor {}", level.factor),
                    params,
                ));
            }
            let (h, g, _) = level.normal_equations(&params, c);
            let Some(chol) = h.cholesky() else {
                return Err(fail("singular normal matrix".into(), params));
            };
            let delta = -chol.solve(&g);
            if !delta.iter().all(|v| v.is_finite()) {
                return Err(fail("non-finite update".into(), params));
            }
            // damp the step until the objective does not increase
            let mut frac = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let trial = params.stepped(&delta, frac);
                let (value, n) = level.objective(&trial, c);
                if n >= MIN_VALID_PIXELS && value <= current {
                    accepted = Some((trial, value, n));
                    break;
                }
                frac *= 0.5;
            }
            let Some((trial, value, n)) = accepted else {
                break;
            };
            params = trial;
            current = value;
            count = n;
            if frac * delta.norm() < opts.tolerance {
                break;
            }
        }
        level_estimates.push(params.to_transform(c));
    }

    let transform = params.to_transform(c);
    if transform.validate().is_err() {
        return Err(fail("degenerate transform".into(), params));
    }
    Ok(RegistrationTrace {
        transform,
        level_estimates,
    })
}

pub fn register_sequence(frames: &[Image], reference_index: usize) -> Result<Vec<SimilarityTransform>> {
    register_sequence_with(frames, reference_index, &RegistrationOptions::default())
}

/// Estimates every frame against `frames[reference_index]`; frames are
/// processed in parallel and returned in input order.
pub fn register_sequence_with(
    frames: &[Image],
    reference_index: usize,
    opts: &RegistrationOptions,
) -> Result<Vec<SimilarityTransform>> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames to register"));
    }
    if reference_index >= frames.len() {
        return Err(Error::invalid(format!(
            "reference index {reference_index} out of range for {} frames",
            frames.len()
        )));
    }
    let reference = &frames[reference_index];
    frames
        .par_iter()
        .enumerate()
        .map(|(k, frame)| {
            if k == reference_index {
                return Ok(SimilarityTransform::IDENTITY);
            }
            estimate_traced(reference, frame, opts)
                .map(|t| t.transform)
                .map_err(|e| Error::FrameRegistration {
                    frame: k,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// One `dx dy theta scale` line per transform.
pub fn format_transforms(transforms: &[SimilarityTransform]) -> String {
    let mut s = String::from("# dx dy theta scale (frame -> reference)\n");
    for t in transforms {
        writeln!(s, "{} {} {} {}", t.dx, t.dy, t.theta, t.scale).unwrap();
    }
    s
}

pub fn parse_transforms(text: &str) -> Result<Vec<SimilarityTransform>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse("transform", i + 1, e.to_string()))?;
        if vals.len() != 4 {
            return Err(Error::parse(
                "transform",
                i + 1,
                format!("expected 4 fields, found {}", vals.len()),
            ));
        }
        let t = SimilarityTransform::new(vals[0], vals[1], vals[2], vals[3])
            .map_err(|e| Error::parse("transform", i + 1, e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

pub fn read_transforms_file(path: impl AsRef<Path>) -> Result<Vec<SimilarityTransform>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_transforms(&text)
}

pub fn write_transforms_file(path: impl AsRef<Path>, transforms: &[SimilarityTransform]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_transforms(transforms))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn degrees(rad: f64) -> f64 {
    rad * 180.0 / PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testimages::{texture, warped_texture};
    use proptest::prelude::*;

    #[test]
    fn apply_examples() {
        let id = SimilarityTransform::IDENTITY;
        assert_eq!(id.apply(Point2::new(3.5, 2.0)), Point2::new(3.5, 2.0));
        let t = SimilarityTransform::translation(1.0, -2.0);
        assert_eq!(t.apply(Point2::new(0.0, 0.0)), Point2::new(1.0, -2.0));
        let r = SimilarityTransform::new(0.0, 0.0, PI / 2.0, 1.0).unwrap();
        let p = r.apply(Point2::new(1.0, 0.0));
        assert!(p.x.abs() < 1e-15 && (p.y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invert_examples() {
        assert_eq!(SimilarityTransform::IDENTITY.invert(), SimilarityTransform::IDENTITY);
        let inv = SimilarityTransform::translation(5.0, 0.0).invert();
        assert_eq!((inv.dx, inv.dy, inv.theta, inv.scale), (-5.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(SimilarityTransform::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(SimilarityTransform::new(f64::NAN, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn invert_round_trip_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let t = SimilarityTransform::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-PI..PI),
                rng.random_range(0.5..2.0),
            )
            .unwrap();
            let inv = t.invert();
            for _ in 0..50 {
                let p = Point2::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
                let back = inv.apply(t.apply(p));
                assert!(back.dist(p) < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip_property(
            dx in -50.0f64..50.0, dy in -50.0f64..50.0,
            theta in -3.2f64..3.2, scale in 0.2f64..5.0,
            x in -500.0f64..500.0, y in -500.0f64..500.0,
        ) {
            let t = SimilarityTransform::new(dx, dy, theta, scale).unwrap();
            let p = Point2::new(x, y);
            prop_assert!(t.invert().apply(t.apply(p)).dist(p) < 1e-9);
        }
    }

    #[test]
    fn identical_frames_give_identity() {
        let img = texture(64, 64, 7);
        let t = estimate(&img, &img, 3, 50).unwrap();
        assert!(t.dx.abs() < 1e-3 && t.dy.abs() < 1e-3);
        assert!(t.theta.abs() < 1e-4 && (t.scale - 1.0).abs() < 1e-4);
    }

    #[test]
    fn recovers_subpixel_shift() {
        let truth = SimilarityTransform::translation(0.3, -0.7);
        let (reference, frame) = warped_texture(64, 64, 3, &truth);
        let t = estimate(&reference, &frame, 3, 50).unwrap();
        assert!((t.dx - 0.3).abs() < 0.05, "{t:?}");
        assert!((t.dy + 0.7).abs() < 0.05, "{t:?}");
    }

    #[test]
    fn recovers_rotation_and_shift() {
        let truth = SimilarityTransform::new(1.2, 0.4, 2f64.to_radians(), 1.0).unwrap();
        let (reference, frame) = warped_texture(64, 64, 5, &truth);
        let t = estimate(&reference, &frame, 3, 50).unwrap();
        assert!(degrees((t.theta - truth.theta).abs()) < 0.1, "{t:?}");
        assert!((t.dx - 1.2).abs() < 0.1 && (t.dy - 0.4).abs() < 0.1, "{t:?}");
    }

    #[test]
    fn flat_images_fail_with_last_iterate() {
        let flat = Image::filled(32, 32, 50.0);
        match estimate(&flat, &flat, 2, 10) {
            Err(Error::EstimationFailed { last, .. }) => assert_eq!(last, SimilarityTransform::IDENTITY),
            other => panic!("expected estimation failure, got {other:?}"),
        }
    }

    #[test]
    fn rejects_zero_levels_and_size_mismatch() {
        let img = texture(32, 32, 1);
        assert!(estimate(&img, &img, 0, 10).is_err());
        assert!(estimate(&img, &texture(32, 31, 1), 1, 10).is_err());
    }

    #[test]
    fn sequence_basics() {
        let img = texture(48, 48, 2);
        assert_eq!(register_sequence(&[img.clone()], 0).unwrap(), vec![SimilarityTransform::IDENTITY]);
        let ts = register_sequence(&[img.clone(), img.clone(), img.clone()], 1).unwrap();
        assert_eq!(ts[1], SimilarityTransform::IDENTITY);
        for t in ts {
            assert!(t.dx.abs() < 1e-3 && t.dy.abs() < 1e-3 && t.theta.abs() < 1e-4);
        }
        assert!(register_sequence(&[img], 1).is_err());
    }

    #[test]
    fn sequence_failure_is_tagged() {
        let img = texture(32, 32, 2);
        let flat = Image::filled(32, 32, 0.0);
        let err = register_sequence(&[img.clone(), img, flat], 0).unwrap_err();
        assert!(matches!(err, Error::FrameRegistration { frame: 2, .. }), "{err}");
    }

    #[test]
    fn transform_file_round_trip() {
        let ts = vec![
            SimilarityTransform::IDENTITY,
            SimilarityTransform::new(0.1, -2.5, 0.0123, 1.01).unwrap(),
        ];
        let text = format_transforms(&ts);
        assert_eq!(parse_transforms(&text).unwrap(), ts);
        let parsed = parse_transforms("# c\n1 2 0 1 # trailing\n\n").unwrap();
        assert_eq!(parsed, vec![SimilarityTransform::translation(1.0, 2.0)]);
        assert!(matches!(
            parse_transforms("1 2 3"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_transforms("0 0 0 -1").is_err());
    }
}
