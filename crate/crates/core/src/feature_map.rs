//! Dense descriptor grids, L2 normalization and bilinear sampling.
//!
//! A [`FeatureMap`] stores one descriptor per cell. Cell `(cx, cy)` corresponds
//! to original-image pixel `(cx * f, cy * f)` where `f` is the map's scale factor.
//! The `HFM1` binary format lets descriptors computed elsewhere be plugged in.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Point2;

pub const DEFAULT_NORM_EPS: f64 = 1e-12;

/// Returns `v / max(||v||, eps)`.
pub fn l2_normalize(v: &[f64], eps: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    l2_normalize_in_place(&mut out, eps);
    out
}

/// In-place variant of [`l2_normalize`]; returns the pre-normalization norm.
pub fn l2_normalize_in_place(v: &mut [f64], eps: f64) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm.max(eps);
    for x in v.iter_mut() {
        *x /= denom;
    }
    norm
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Bilinear interpolation support of a point: up to four `(cell index, weight)` pairs.
///
/// Corners with a zero fractional weight are omitted, so integer coordinates
/// yield a single corner of weight exactly 1.
#[derive(Clone, Copy, Debug)]
pub struct Corners {
    items: [(usize, f64); 4],
    len: usize,
}

impl Corners {
    pub fn as_slice(&self) -> &[(usize, f64)] {
        &self.items[..self.len]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub level_id: u32,
    pub scale_factor: usize,
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub normalized: bool,
}

impl FeatureMap {
    pub fn new(
        level_id: u32,
        scale_factor: usize,
        width: usize,
        height: usize,
        dim: usize,
        data: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        if scale_factor == 0 {
            return Err(Error::InvalidConfig("scale factor must be >= 1".into()));
        }
        let expected = width * height * dim;
        if data.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            level_id,
            scale_factor,
            width,
            height,
            dim,
            data,
            normalized,
        })
    }

    pub fn zeros(level_id: u32, scale_factor: usize, width: usize, height: usize, dim: usize) -> Self {
        Self {
            level_id,
            scale_factor,
            width,
            height,
            dim,
            data: vec![0.0; width * height * dim],
            normalized: false,
        }
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn descriptor(&self, cell: usize) -> &[f64] {
        &self.data[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn descriptor_mut(&mut self, cell: usize) -> &mut [f64] {
        &mut self.data[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn at(&self, cx: usize, cy: usize) -> &[f64] {
        self.descriptor(cy * self.width + cx)
    }

    /// Original-image position of a cell.
    pub fn cell_origin(&self, cell: usize) -> Point2 {
        let f = self.scale_factor as f64;
        Point2::new((cell % self.width) as f64 * f, (cell / self.width) as f64 * f)
    }

    /// Converts an original-image point into this map's cell coordinates.
    pub fn to_cells(&self, p: Point2) -> Point2 {
        p.scale(1.0 / self.scale_factor as f64)
    }

    pub fn contains_cell_point(&self, p: Point2) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    pub fn corners(&self, p: Point2) -> Result<Corners> {
        if !p.x.is_finite() || !p.y.is_finite() || !self.contains_cell_point(p) {
            return Err(Error::OutOfBounds {
                x: p.x,
                y: p.y,
                width: self.width,
                height: self.height,
            });
        }
        let x0 = p.x.floor() as usize;
        let y0 = p.y.floor() as usize;
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        let mut xs = [(x0, 1.0 - fx), (0, 0.0)];
        let nx = if fx > 0.0 {
            xs[1] = (x0 + 1, fx);
            2
        } else {
            1
        };
        let mut ys = [(y0, 1.0 - fy), (0, 0.0)];
        let ny = if fy > 0.0 {
            ys[1] = (y0 + 1, fy);
            2
        } else {
            1
        };
        let mut corners = Corners {
            items: [(0, 0.0); 4],
            len: 0,
        };
        for &(y, wy) in &ys[..ny] {
            for &(x, wx) in &xs[..nx] {
                corners.items[corners.len] = (y * self.width + x, wx * wy);
                corners.len += 1;
            }
        }
        Ok(corners)
    }

    /// Bilinear sample at a point given in cell coordinates.
    pub fn bilinear_sample(&self, p: Point2) -> Result<Vec<f64>> {
        let corners = self.corners(p)?;
        let items = corners.as_slice();
        let (c0, w0) = items[0];
        let mut out: Vec<f64> = self.descriptor(c0).iter().map(|v| w0 * v).collect();
        for &(c, w) in &items[1..] {
            for (o, v) in out.iter_mut().zip(self.descriptor(c)) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// Unit descriptor at a cell-coordinate point.
    ///
    /// Integer points return the stored descriptor untouched; fractional points
    /// are bilinearly blended and re-normalized.
    pub fn sample_unit(&self, p: Point2) -> Result<Vec<f64>> {
        if p.is_integral() {
            if !self.contains_cell_point(p) {
                return Err(Error::OutOfBounds {
                    x: p.x,
                    y: p.y,
                    width: self.width,
                    height: self.height,
                });
            }
            let d = self.at(p.x as usize, p.y as usize);
            return Ok(if self.normalized {
                d.to_vec()
            } else {
                l2_normalize(d, DEFAULT_NORM_EPS)
            });
        }
        let mut v = self.bilinear_sample(p)?;
        l2_normalize_in_place(&mut v, DEFAULT_NORM_EPS);
        Ok(v)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25 + self.data.len() * 4);
        out.extend_from_slice(HFM_MAGIC);
        for v in [
            self.level_id,
            self.scale_factor as u32,
            self.width as u32,
            self.height as u32,
            self.dim as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(u8::from(self.normalized));
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != HFM_MAGIC {
            return Err(Error::BadMagic { expected: "HFM1" });
        }
        if bytes.len() < HFM_HEADER {
            return Err(Error::TruncatedFile {
                expected: HFM_HEADER as u64,
                found: bytes.len() as u64,
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (level_id, scale, width, height, dim) = (word(0), word(1), word(2), word(3), word(4));
        let normalized = bytes[24] != 0;
        let values = u64::from(width)
            .checked_mul(u64::from(height))
            .and_then(|v| v.checked_mul(u64::from(dim)))
            .ok_or(Error::DimOverflow)?;
        let payload = values.checked_mul(4).ok_or(Error::DimOverflow)?;
        let expected = payload
            .checked_add(HFM_HEADER as u64)
            .ok_or(Error::DimOverflow)?;
        if usize::try_from(expected).is_err() {
            return Err(Error::DimOverflow);
        }
        if (bytes.len() as u64) < expected {
            return Err(Error::TruncatedFile {
                expected,
                found: bytes.len() as u64,
            });
        }
        let data = bytes[HFM_HEADER..expected as usize]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        FeatureMap::new(
            level_id,
            scale as usize,
            width as usize,
            height as usize,
            dim as usize,
            data,
            normalized,
        )
    }
}

const HFM_MAGIC: &[u8; 4] = b"HFM1";
const HFM_HEADER: usize = 4 + 5 * 4 + 1;

pub fn export_feature_map(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, map.encode()).map_err(|e| Error::io(path, e))
}

pub fn import_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMap::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> FeatureMap {
        FeatureMap::new(0, 1, 2, 2, 1, vec![0.0, 2.0, 4.0, 6.0], false).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&[3.0, 4.0], 1e-12), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[1.0, 0.0, 0.0], 1e-12), vec![1.0, 0.0, 0.0]);
        assert_eq!(l2_normalize(&[0.0, 0.0], 1e-12), vec![0.0, 0.0]);
        // Below eps the output is v / eps.
        let tiny = l2_normalize(&[1e-14, 0.0], 1e-12);
        assert!((tiny[0] - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn bilinear_examples() {
        let m = toy();
        assert_eq!(m.bilinear_sample(Point2::new(0.5, 0.5)).unwrap(), vec![3.0]);
        assert_eq!(m.bilinear_sample(Point2::new(1.0, 0.0)).unwrap(), vec![2.0]);
        assert_eq!(m.bilinear_sample(Point2::new(0.25, 0.0)).unwrap(), vec![0.5]);
        assert!(matches!(
            m.bilinear_sample(Point2::new(1.01, 0.0)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(m.bilinear_sample(Point2::new(-0.1, 0.0)).is_err());
    }

    #[test]
    fn sample_unit_keeps_stored_unit_vectors() {
        let m = FeatureMap::new(0, 1, 2, 1, 2, vec![0.6, 0.8, 1.0, 0.0], true).unwrap();
        assert_eq!(m.sample_unit(Point2::new(0.0, 0.0)).unwrap(), vec![0.6, 0.8]);
        let mid = m.sample_unit(Point2::new(0.5, 0.0)).unwrap();
        let n: f64 = mid.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hfm_errors() {
        let bytes = toy().encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureMap::decode(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(
            FeatureMap::decode(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedFile { .. })
        ));
        let mut huge = bytes[..25].to_vec();
        for i in 2..5 {
            huge[4 + 4 * i..8 + 4 * i].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(FeatureMap::decode(&huge), Err(Error::DimOverflow)));
    }

    fn map_strategy() -> impl Strategy<Value = (FeatureMap, FeatureMap)> {
        (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(w, h, d)| {
            let n = w * h * d;
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )
                .prop_map(move |(a, b)| {
                    (
                        FeatureMap::new(0, 1, w, h, d, a, false).unwrap(),
                        FeatureMap::new(0, 1, w, h, d, b, false).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn integer_samples_are_exact((a, _) in map_strategy(), sx in 0.0f64..1.0, sy in 0.0f64..1.0) {
            let cx = (sx * (a.width - 1) as f64).round() as usize;
            let cy = (sy * (a.height - 1) as f64).round() as usize;
            let s = a.bilinear_sample(Point2::new(cx as f64, cy as f64)).unwrap();
            prop_assert_eq!(s.as_slice(), a.at(cx, cy));
        }

        #[test]
        fn sampling_is_linear((a, b) in map_strategy(), sx in 0.0f64..1.0, sy in 0.0f64..1.0,
                              alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let p = Point2::new(sx * (a.width - 1) as f64, sy * (a.height - 1) as f64);
            let mut mix = a.clone();
            for (m, (x, y)) in mix.data.iter_mut().zip(a.data.iter().zip(&b.data)) {
                *m = alpha * x + beta * y;
            }
            let lhs = mix.bilinear_sample(p).unwrap();
            let sa = a.bilinear_sample(p).unwrap();
            let sb = b.bilinear_sample(p).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (alpha * sa[i] + beta * sb[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn normalization_is_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..16)) {
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assume!(norm >= 1e-6);
            let once = l2_normalize(&v, DEFAULT_NORM_EPS);
            let twice = l2_normalize(&once, DEFAULT_NORM_EPS);
            let n1: f64 = once.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n1 - 1.0).abs() < 1e-6);
            for (x, y) in once.iter().zip(&twice) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn hfm_round_trip((a, _) in map_strategy(), level in 0u32..5, f in 1usize..8) {
            let mut m = a;
            m.level_id = level;
            m.scale_factor = f;
            let back = FeatureMap::decode(&m.encode()).unwrap();
            prop_assert_eq!((back.level_id, back.scale_factor, back.width, back.height, back.dim),
                            (m.level_id, m.scale_factor, m.width, m.height, m.dim));
            for (x, y) in back.data.iter().zip(&m.data) {
                prop_assert_eq!(*x, f64::from(*y as f32));
            }
        }
    }
}
