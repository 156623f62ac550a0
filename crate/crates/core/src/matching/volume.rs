//! Two-stage subvolume search in 3D.
//!
//! Stage one slides a subvolume over a cubic search region on a coarse
//! sampling grid and keeps the centre whose deep descriptor is closest to the
//! reference. Stage two re-searches a finer grid inside a ball around that
//! centre using the shallow descriptor. Distances are in abstract units.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::feature_map::{l2_normalize_in_place, squared_distance, DEFAULT_NORM_EPS};
use crate::features::EmbeddingHead;

/// Dense scalar field (occupancy, TDF, ...) on a regular lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub voxel_size: f64,
    /// World position of voxel (0, 0, 0).
    pub origin: [f64; 3],
    pub data: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, voxel_size: f64, origin: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 || !(voxel_size > 0.0) {
            return Err(Error::InvalidConfig("voxel grid dimensions must be positive".into()));
        }
        if data.len() != nx * ny * nz {
            return Err(Error::DimMismatch {
                expected: nx * ny * nz,
                found: data.len(),
            });
        }
        Ok(Self {
            nx,
            ny,
            nz,
            voxel_size,
            origin,
            data,
        })
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[(z * self.ny + y) * self.nx + x]
    }

    /// Trilinear sample at a world position, replicating the border.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let dims = [self.nx, self.ny, self.nz];
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let g = ((p[a] - self.origin[a]) / self.voxel_size).clamp(0.0, (dims[a] - 1) as f64);
            lo[a] = g.floor() as usize;
            hi[a] = (lo[a] + 1).min(dims[a] - 1);
            frac[a] = g - lo[a] as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx[a] = hi[a];
                } else {
                    w *= 1.0 - frac[a];
                    idx[a] = lo[a];
                }
            }
            if w != 0.0 {
                acc += w * self.get(idx[0], idx[1], idx[2]);
            }
        }
        acc
    }
}

/// Maps a subvolume centre to a unit descriptor.
pub trait SubvolumeDescriptor {
    fn describe(&self, center: [f64; 3]) -> Vec<f64>;
}

impl<F> SubvolumeDescriptor for F
where
    F: Fn([f64; 3]) -> Vec<f64>,
{
    fn describe(&self, center: [f64; 3]) -> Vec<f64> {
        self(center)
    }
}

/// Block-averaged field statistics of a cubic subvolume, optionally projected
/// through an embedding head, then L2-normalized.
#[derive(Clone, Debug)]
pub struct OccupancyDescriptor<'a> {
    pub grid: &'a VoxelGrid,
    pub subvolume_edge: f64,
    /// Blocks per axis; the raw descriptor has `blocks^3` entries.
    pub blocks: usize,
    /// Trilinear samples per block per axis.
    pub samples: usize,
    pub head: Option<&'a EmbeddingHead>,
}

impl SubvolumeDescriptor for OccupancyDescriptor<'_> {
    fn describe(&self, center: [f64; 3]) -> Vec<f64> {
        let b = self.blocks.max(1);
        let s = self.samples.max(1);
        let block_edge = self.subvolume_edge / b as f64;
        let step = block_edge / s as f64;
        let start = center.map(|c| c - 0.5 * self.subvolume_edge);
        let mut raw = Vec::with_capacity(b * b * b);
        for bz in 0..b {
            for by in 0..b {
                for bx in 0..b {
                    let mut acc = 0.0;
                    for sz in 0..s {
                        for sy in 0..s {
                            for sx in 0..s {
                                let p = [
                                    start[0] + bx as f64 * block_edge + (sx as f64 + 0.5) * step,
                                    start[1] + by as f64 * block_edge + (sy as f64 + 0.5) * step,
                                    start[2] + bz as f64 * block_edge + (sz as f64 + 0.5) * step,
                                ];
                                acc += self.grid.sample(p);
                            }
                        }
                    }
                    raw.push(acc / (s * s * s) as f64);
                }
            }
        }
        let mut out = match self.head {
            Some(h) if h.rows == raw.len() => h.project(&raw),
            _ => raw,
        };
        l2_normalize_in_place(&mut out, DEFAULT_NORM_EPS);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Match3dConfig {
    pub region_edge: f64,
    pub subvolume_edge: f64,
    pub coarse_gap: f64,
    pub fine_gap: f64,
    pub refine_radius: f64,
}

impl Default for Match3dConfig {
    fn default() -> Self {
        Self {
            region_edge: 60.0,
            subvolume_edge: 30.0,
            coarse_gap: 3.0,
            fine_gap: 1.0,
            refine_radius: 15.0,
        }
    }
}

impl Match3dConfig {
    /// Coarse candidate centres per axis.
    pub fn candidates_per_axis(&self) -> Result<usize> {
        if !(self.coarse_gap > 0.0) || !(self.fine_gap > 0.0) || !(self.refine_radius >= 0.0) {
            return Err(Error::InvalidConfig("3D gaps must be positive and the radius non-negative".into()));
        }
        let span = self.region_edge - self.subvolume_edge;
        if span < 0.0 {
            return Err(Error::EmptyCandidateSet);
        }
        Ok((span / self.coarse_gap + 1e-9).floor() as usize + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Match3dResult {
    pub coarse_center: [f64; 3],
    pub coarse_distance: f64,
    pub refined_center: [f64; 3],
    pub fine_distance: f64,
    /// Refined centre relative to the search-region centre.
    pub offset: [f64; 3],
    pub coarse_candidates: usize,
    pub fine_candidates: usize,
}

/// Two-stage search for the subvolume best matching the reference descriptors.
///
/// Coarse centres lie on `region_center - (region - sub)/2 + i * coarse_gap`
/// per axis. Fine centres lie on a `fine_gap` lattice around the coarse winner,
/// within `refine_radius` (Euclidean) and inside the box spanned by the coarse
/// centres. Ties go to the lowest `(z, y, x)` index in both stages.
pub fn match_3d<D, S>(
    reference_deep: &[f64],
    reference_shallow: &[f64],
    deep: &D,
    shallow: &S,
    region_center: [f64; 3],
    cfg: &Match3dConfig,
) -> Result<Match3dResult>
where
    D: SubvolumeDescriptor + ?Sized,
    S: SubvolumeDescriptor + ?Sized,
{
    let n = cfg.candidates_per_axis()?;
    let half = 0.5 * (cfg.region_edge - cfg.subvolume_edge);
    let box_min = region_center.map(|c| c - half);
    let box_max = region_center.map(|c| c + half);

    let mut coarse: Option<([f64; 3], f64)> = None;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let c = [
                    box_min[0] + i as f64 * cfg.coarse_gap,
                    box_min[1] + j as f64 * cfg.coarse_gap,
                    box_min[2] + k as f64 * cfg.coarse_gap,
                ];
                let d = descriptor_sq_distance(reference_deep, &deep.describe(c))?;
                if coarse.is_none_or(|(_, best)| d < best) {
                    coarse = Some((c, d));
                }
            }
        }
    }
    let (coarse_center, coarse_d2) = coarse.ok_or(Error::EmptyCandidateSet)?;

    let steps = (cfg.refine_radius / cfg.fine_gap + 1e-9).floor() as i64;
    let r2 = cfg.refine_radius * cfg.refine_radius * (1.0 + 1e-12);
    let tol = 1e-9 * cfg.region_edge.abs().max(1.0);
    let mut fine: Option<([f64; 3], f64)> = None;
    let mut fine_candidates = 0;
    for k in -steps..=steps {
        for j in -steps..=steps {
            for i in -steps..=steps {
                let off = [i as f64 * cfg.fine_gap, j as f64 * cfg.fine_gap, k as f64 * cfg.fine_gap];
                if off.iter().map(|o| o * o).sum::<f64>() > r2 {
                    continue;
                }
                let c = [
                    coarse_center[0] + off[0],
                    coarse_center[1] + off[1],
                    coarse_center[2] + off[2],
                ];
                if (0..3).any(|a| c[a] < box_min[a] - tol || c[a] > box_max[a] + tol) {
                    continue;
                }
                fine_candidates += 1;
                let d = descriptor_sq_distance(reference_shallow, &shallow.describe(c))?;
                if fine.is_none_or(|(_, best)| d < best) {
                    fine = Some((c, d));
                }
            }
        }
    }
    let (refined_center, fine_d2) = fine.expect("coarse centre is a fine candidate");
    Ok(Match3dResult {
        coarse_center,
        coarse_distance: coarse_d2.sqrt(),
        refined_center,
        fine_distance: fine_d2.sqrt(),
        offset: [
            refined_center[0] - region_center[0],
            refined_center[1] - region_center[1],
            refined_center[2] - region_center[2],
        ],
        coarse_candidates: n * n * n,
        fine_candidates,
    })
}

fn descriptor_sq_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(squared_distance(a, b))
}

const HVG_MAGIC: &[u8; 4] = b"HVG1";

/// Binary voxel grid: `HVG1`, u32 nx, ny, nz, f32 voxel size, f32 origin[3],
/// then `nx*ny*nz` f32 values with x fastest. Little-endian.
pub fn write_voxel_grid(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut out = HVG_MAGIC.to_vec();
    for v in [grid.nx, grid.ny, grid.nz] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in std::iter::once(&grid.voxel_size)
        .chain(&grid.origin)
        .chain(&grid.data)
    {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_voxel_grid(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != HVG_MAGIC {
        return Err(Error::BadMagic { expected: "HVG1" });
    }
    const HEADER: usize = 4 + 12 + 16;
    if bytes.len() < HEADER {
        return Err(Error::TruncatedFile {
            expected: HEADER as u64,
            found: bytes.len() as u64,
        });
    }
    let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let f = |off: usize| f64::from(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    let (nx, ny, nz) = (u(0), u(1), u(2));
    let n = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .ok_or(Error::DimOverflow)?;
    let expected = n
        .checked_mul(4)
        .and_then(|v| v.checked_add(HEADER))
        .ok_or(Error::DimOverflow)?;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let data = (0..n).map(|i| f(HEADER + 4 * i)).collect();
    VoxelGrid::new(nx, ny, nz, f(16), [f(20), f(24), f(28)], data)
}
