//! Synthetic warped pairs with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::{to_grayscale, Image, Point2};
use crate::learn::{CorrespondenceSet, Triplet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Translation,
    /// Rotation and uniform scale about the image centre, then translation.
    Similarity,
}

/// Parameter ranges are closed intervals `(lo, hi)`; translation ignores the
/// rotation and scale ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub transform: TransformKind,
    /// Radians.
    pub rotation: (f64, f64),
    pub scale: (f64, f64),
    pub tx: (f64, f64),
    pub ty: (f64, f64),
    /// Standard deviation of additive noise in image units.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Spacing of the ground-truth correspondence grid, pixels.
    pub grid_step: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            transform: TransformKind::Translation,
            rotation: (0.0, 0.0),
            scale: (1.0, 1.0),
            tx: (0.0, 0.0),
            ty: (0.0, 0.0),
            noise_sigma: 0.0,
            seed: 0,
            grid_step: 1,
        }
    }
}

/// `T(p) = s R (p - c) + c + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub angle: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Similarity {
    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (p.x - self.cx, p.y - self.cy);
        Point2::new(
            self.scale * (c * dx - s * dy) + self.cx + self.tx,
            self.scale * (s * dx + c * dy) + self.cy + self.ty,
        )
    }

    pub fn inverse(&self, q: Point2) -> Point2 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (q.x - self.cx - self.tx, q.y - self.cy - self.ty);
        Point2::new(
            (c * dx + s * dy) / self.scale + self.cx,
            (-s * dx + c * dy) / self.scale + self.cy,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair {
    /// Grayscale version of the input image.
    pub source: Image,
    pub target: Image,
    pub correspondences: CorrespondenceSet,
    /// Flow from source to target; invalid where `T(p)` leaves the image.
    pub gt_flow: FlowField,
    pub transform: Similarity,
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.gen();
    lo + (hi - lo) * u
}

fn in_bounds(p: Point2, w: usize, h: usize) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= (w - 1) as f64 && p.y <= (h - 1) as f64
}

pub fn sample_transform(spec: &SynthSpec, width: usize, height: usize, rng: &mut ChaCha8Rng) -> Similarity {
    let tx = draw(rng, spec.tx);
    let ty = draw(rng, spec.ty);
    let (angle, scale) = match spec.transform {
        TransformKind::Translation => (0.0, 1.0),
        TransformKind::Similarity => (draw(rng, spec.rotation), draw(rng, spec.scale)),
    };
    Similarity {
        angle,
        scale,
        tx,
        ty,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
    }
}

/// Warps `img` by a transform drawn from `spec` and adds clipped Gaussian
/// noise. Ground truth covers source pixels whose image stays in bounds.
pub fn synth_pair(img: &Image, spec: &SynthSpec) -> Result<SynthPair> {
    if spec.grid_step == 0 || !(spec.noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig("grid_step must be >= 1 and noise_sigma >= 0".into()));
    }
    let source = to_grayscale(img);
    let (w, h) = (source.width(), source.height());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t = sample_transform(spec, w, h, &mut rng);
    if !(t.scale > 0.0) || !t.scale.is_finite() {
        return Err(Error::DegenerateTransform(format!("scale {}", t.scale)));
    }

    let mut gt_flow = FlowField::new(w, h);
    let mut inside = 0usize;
    for y in 0..h {
        for x in 0..w {
            let p = Point2::new(x as f64, y as f64);
            let q = t.apply(p);
            let ok = in_bounds(q, w, h);
            inside += usize::from(ok);
            gt_flow.set(x, y, q.x - p.x, q.y - p.y, ok);
        }
    }
    if 2 * inside < w * h {
        return Err(Error::DegenerateTransform(format!(
            "only {inside} of {} pixels stay in bounds",
            w * h
        )));
    }

    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let src = t.inverse(Point2::new(x as f64, y as f64));
            let mut v = source.sample_bilinear(src.x, src.y);
            if let Some(n) = &noise {
                v = (v + n.sample(&mut rng)).clamp(0.0, 1.0);
            }
            data.push(v);
        }
    }
    let target = Image::gray(w, h, data)?;

    let mut triplets = Vec::new();
    for y in (0..h).step_by(spec.grid_step) {
        for x in (0..w).step_by(spec.grid_step) {
            if gt_flow.valid[y * w + x] {
                let p = Point2::new(x as f64, y as f64);
                triplets.push(Triplet::positive(p, t.apply(p)));
            }
        }
    }
    Ok(SynthPair {
        source,
        target,
        correspondences: CorrespondenceSet::new("source", "target", triplets),
        gt_flow,
        transform: t,
    })
}

/// Multi-octave value noise in `[0, 1]`, a stand-in for natural texture.
pub fn textured_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f64; width * height];
    let mut amplitude = 1.0;
    for period in [32usize, 16, 8, 4, 2] {
        let gw = width / period + 2;
        let gh = height / period + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen()).collect();
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        for y in 0..height {
            let (gy, fy) = (y / period, smooth((y % period) as f64 / period as f64));
            for x in 0..width {
                let (gx, fx) = (x / period, smooth((x % period) as f64 / period as f64));
                let l = |i: usize, j: usize| lattice[j * gw + i];
                let top = l(gx, gy) * (1.0 - fx) + l(gx + 1, gy) * fx;
                let bottom = l(gx, gy + 1) * (1.0 - fx) + l(gx + 1, gy + 1) * fx;
                acc[y * width + x] += amplitude * (top * (1.0 - fy) + bottom * fy);
            }
        }
        amplitude *= 0.6;
    }
    let lo = acc.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1e-12);
    Image::from_fn(width, height, |x, y| (acc[y * width + x] - lo) / range)
}

/// Dead-leaves image: opaque discs with radii drawn from `p(r) ~ r^-3` on
/// `[2, 40]`, painted back to front, each carrying a faint grating so flat
/// regions are not perfectly uniform. Large occluding shapes make local
/// patches repeat across the image, unlike [`textured_image`].
pub fn dead_leaves_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rmin, rmax) = (2.0f64, 40.0f64);
    let (a, b) = (rmin.powi(-2), rmax.powi(-2));
    let mut img = vec![0.5f64; width * height];
    // Expected disc area is 2*pi*rmin^2*ln(rmax/rmin)/(1 - (rmin/rmax)^2);
    // eight layers of coverage on average leaves almost no background.
    let mean_area = 2.0 * std::f64::consts::PI * rmin * rmin * (rmax / rmin).ln() / (1.0 - b / a);
    let count = (8.0 * (width * height) as f64 / mean_area).ceil() as usize;
    for _ in 0..count {
        let r = (a - rng.gen::<f64>() * (a - b)).powf(-0.5);
        let cx = rng.gen_range(-rmax..width as f64 + rmax);
        let cy = rng.gen_range(-rmax..height as f64 + rmax);
        let gray: f64 = rng.gen_range(0.1..0.9);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let freq: f64 = rng.gen_range(0.3..1.2);
        let (s, c) = theta.sin_cos();
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil().max(0.0) as usize).min(height);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil().max(0.0) as usize).min(width);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    img[y * width + x] = gray + 0.05 * (freq * (c * dx + s * dy)).sin();
                }
            }
        }
    }
    Image::from_fn(width, height, |x, y| img[y * width + x].clamp(0.0, 1.0))
}
