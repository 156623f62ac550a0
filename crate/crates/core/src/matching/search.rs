use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_map::{l2_normalize_in_place, FeatureMap, DEFAULT_NORM_EPS};
use crate::features::FeatureHierarchy;
use crate::image::Point2;
use crate::learn::bounded_sq_distance;
use crate::matching::{MatchConfig, MatchResult};

/// Lowest squared distance over the cells accepted by `keep`, scanning
/// `rows x cols` in row-major order. Ties keep the earlier cell.
fn nearest_in<F>(query: &[f64], map: &FeatureMap, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, keep: F) -> Option<(usize, f64)>
where
    F: Fn(usize, usize) -> bool,
{
    let mut best: Option<(usize, f64)> = None;
    for cy in rows {
        for cx in cols.clone() {
            if !keep(cx, cy) {
                continue;
            }
            let cell = cy * map.width + cx;
            let bound = best.map_or(f64::INFINITY, |(_, d)| d);
            if let Some(d) = bounded_sq_distance(query, map.descriptor(cell), bound) {
                if d < bound {
                    best = Some((cell, d));
                }
            }
        }
    }
    best
}

fn check_dims(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    Ok(())
}

/// Exhaustive nearest neighbour of the reference descriptor at `p_d` (cells,
/// fractional allowed) over every integer cell of `deep_tgt`.
pub fn coarse_match(deep_ref: &FeatureMap, deep_tgt: &FeatureMap, p_d: Point2) -> Result<(Point2, f64)> {
    check_dims(deep_ref, deep_tgt)?;
    let q = deep_ref.sample_unit(p_d)?;
    let (cell, d2) = nearest_in(&q, deep_tgt, 0..deep_tgt.height, 0..deep_tgt.width, |_, _| true)
        .ok_or(Error::EmptyInput)?;
    Ok((
        Point2::new((cell % deep_tgt.width) as f64, (cell / deep_tgt.width) as f64),
        d2.sqrt(),
    ))
}

/// Searches the shallow target map around `p_d' * f` (clipped into the image)
/// within `cfg.refine_radius` original pixels. Returns the match in original
/// pixels and its shallow distance.
pub fn refine_match(
    shallow_ref: &FeatureMap,
    shallow_tgt: &FeatureMap,
    p_s: Point2,
    p_d_prime: Point2,
    f: usize,
    cfg: &MatchConfig,
) -> Result<(Point2, f64)> {
    check_dims(shallow_ref, shallow_tgt)?;
    let q = shallow_ref.sample_unit(shallow_ref.to_cells(p_s))?;
    let fs = shallow_tgt.scale_factor as f64;
    let max_x = (shallow_tgt.width - 1) as f64 * fs;
    let max_y = (shallow_tgt.height - 1) as f64 * fs;
    let center = Point2::new(
        (p_d_prime.x * f as f64).clamp(0.0, max_x),
        (p_d_prime.y * f as f64).clamp(0.0, max_y),
    );
    let center_cell = (
        ((center.x / fs).round() as usize).min(shallow_tgt.width - 1),
        ((center.y / fs).round() as usize).min(shallow_tgt.height - 1),
    );
    let r = cfg.refine_radius.max(0.0);
    let r2 = r * r;
    let lo = |c: f64| ((c - r) / fs).floor().max(0.0) as usize;
    let hi = |c: f64, n: usize| (((c + r) / fs).ceil().max(0.0) as usize + 1).min(n);
    let rows = lo(center.y).min(center_cell.1)..hi(center.y, shallow_tgt.height).max(center_cell.1 + 1);
    let cols = lo(center.x).min(center_cell.0)..hi(center.x, shallow_tgt.width).max(center_cell.0 + 1);
    let (cell, d2) = nearest_in(&q, shallow_tgt, rows, cols, |cx, cy| {
        if (cx, cy) == center_cell {
            return true;
        }
        let dx = cx as f64 * fs - center.x;
        let dy = cy as f64 * fs - center.y;
        dx * dx + dy * dy <= r2
    })
    .expect("center cell is always a candidate");
    Ok((shallow_tgt.cell_origin(cell), d2.sqrt()))
}

fn check_aligned(reference: &FeatureHierarchy, target: &FeatureHierarchy) -> Result<()> {
    if reference.len() != target.len() {
        return Err(Error::LengthMismatch(reference.len(), target.len()));
    }
    for (a, b) in reference.levels().iter().zip(target.levels()) {
        if a.map.scale_factor != b.map.scale_factor || a.map.dim != b.map.dim {
            return Err(Error::InvalidConfig(
                "reference and target hierarchies use different level configurations".into(),
            ));
        }
    }
    Ok(())
}

fn match_one(
    reference: &FeatureHierarchy,
    target: &FeatureHierarchy,
    p_s: Point2,
    p_d: Point2,
    valid: bool,
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    let f = reference.deep().scale_factor;
    let (coarse, d_coarse) = coarse_match(reference.deep(), target.deep(), p_d)?;
    let (refined, d_fine) = refine_match(reference.shallow(), target.shallow(), p_s, coarse, f, cfg)?;
    Ok(MatchResult {
        query: p_s,
        coarse,
        refined,
        d_coarse,
        d_fine,
        valid,
    })
}

/// Deep-level global search followed by shallow-level refinement, per query.
pub fn hierarchical_match(
    reference: &FeatureHierarchy,
    target: &FeatureHierarchy,
    queries: &[Point2],
    cfg: &MatchConfig,
) -> Result<Vec<MatchResult>> {
    check_aligned(reference, target)?;
    let f = reference.deep().scale_factor as f64;
    queries
        .par_iter()
        .map(|&p_s| match_one(reference, target, p_s, p_s.scale(1.0 / f), true, cfg))
        .collect()
}

/// Hierarchical matches on a regular grid of query pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatches {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub matches: Vec<MatchResult>,
}

impl DenseMatches {
    pub fn at(&self, i: usize, j: usize) -> &MatchResult {
        &self.matches[j * self.width + i]
    }

    /// Match of the grid node nearest to `p`, if `p` rounds onto the grid.
    pub fn lookup(&self, p: Point2) -> Option<&MatchResult> {
        let s = self.stride as f64;
        let (i, j) = ((p.x / s).round(), (p.y / s).round());
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some(self.at(i as usize, j as usize))
    }
}

fn clamp_cells(map: &FeatureMap, p: Point2) -> Point2 {
    Point2::new(
        p.x.clamp(0.0, (map.width - 1) as f64),
        p.y.clamp(0.0, (map.height - 1) as f64),
    )
}

/// Runs [`hierarchical_match`] at every `cfg.dense_stride`-th pixel. Queries
/// whose coarse position leaves the coarse grid are clamped into it and
/// flagged invalid.
pub fn dense_match(reference: &FeatureHierarchy, target: &FeatureHierarchy, cfg: &MatchConfig) -> Result<DenseMatches> {
    check_aligned(reference, target)?;
    if cfg.dense_stride == 0 {
        return Err(Error::InvalidConfig("dense stride must be >= 1".into()));
    }
    let shallow = reference.shallow();
    let deep = reference.deep();
    let width_px = shallow.width * shallow.scale_factor;
    let height_px = shallow.height * shallow.scale_factor;
    let (nx, ny) = (width_px / cfg.dense_stride, height_px / cfg.dense_stride);
    let f = deep.scale_factor as f64;
    let fs = shallow.scale_factor as f64;
    let matches = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let raw = Point2::new(
                ((k % nx) * cfg.dense_stride) as f64,
                ((k / nx) * cfg.dense_stride) as f64,
            );
            let p_s = clamp_cells(shallow, raw.scale(1.0 / fs)).scale(fs);
            let p_d_raw = raw.scale(1.0 / f);
            let p_d = clamp_cells(deep, p_d_raw);
            let valid = p_d == p_d_raw && p_s == raw;
            let mut m = match_one(reference, target, p_s, p_d, valid, cfg)?;
            m.query = raw;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DenseMatches {
        width: nx,
        height: ny,
        stride: cfg.dense_stride,
        matches,
    })
}

/// Concatenation of every level's unit descriptor at original point `p`,
/// re-normalized. Per-level positions are clamped into each grid.
fn concat_descriptor(h: &FeatureHierarchy, p: Point2) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for level in h.levels() {
        let m = &level.map;
        out.extend(m.sample_unit(clamp_cells(m, m.to_cells(p)))?);
    }
    l2_normalize_in_place(&mut out, DEFAULT_NORM_EPS);
    Ok(out)
}

/// Single-stage exhaustive search over concatenated all-level descriptors,
/// evaluated on the shallow grid.
pub fn concat_match(reference: &FeatureHierarchy, target: &FeatureHierarchy, queries: &[Point2]) -> Result<Vec<MatchResult>> {
    check_aligned(reference, target)?;
    let grid = target.shallow();
    let dim: usize = target.levels().iter().map(|l| l.map.dim).sum();
    let data = (0..grid.cells())
        .into_par_iter()
        .map(|cell| concat_descriptor(target, grid.cell_origin(cell)))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let concat = FeatureMap::new(0, grid.scale_factor, grid.width, grid.height, dim, data, true)?;
    queries
        .par_iter()
        .map(|&p| {
            let shallow = reference.shallow();
            if !shallow.contains_cell_point(shallow.to_cells(p)) {
                return Err(Error::OutOfBounds {
                    x: p.x,
                    y: p.y,
                    width: shallow.width,
                    height: shallow.height,
                });
            }
            let q = concat_descriptor(reference, p)?;
            let (cell, d2) = nearest_in(&q, &concat, 0..concat.height, 0..concat.width, |_, _| true)
                .ok_or(Error::EmptyInput)?;
            let d = d2.sqrt();
            Ok(MatchResult {
                query: p,
                coarse: Point2::new((cell % concat.width) as f64, (cell / concat.width) as f64),
                refined: concat.cell_origin(cell),
                d_coarse: d,
                d_fine: d,
                valid: true,
            })
        })
        .collect()
}

/// Which part of the hierarchy drives a match.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMode {
    /// Deep global search, shallow refinement.
    Hierarchical,
    /// Global search on the shallowest level only.
    ShallowOnly,
    /// Global search on the deepest level only; the match is `p_d' * f`.
    DeepOnly,
    /// Global search on concatenated descriptors of all levels.
    Concat,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchical" => Ok(Self::Hierarchical),
            "shallow" => Ok(Self::ShallowOnly),
            "deep" => Ok(Self::DeepOnly),
            "concat" => Ok(Self::Concat),
            other => Err(Error::InvalidConfig(format!("unknown match mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for MatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hierarchical => "hierarchical",
            Self::ShallowOnly => "shallow",
            Self::DeepOnly => "deep",
            Self::Concat => "concat",
        })
    }
}

fn single_level_match(reference: &FeatureMap, target: &FeatureMap, queries: &[Point2]) -> Result<Vec<MatchResult>> {
    queries
        .par_iter()
        .map(|&p| {
            let (cell, d) = coarse_match(reference, target, reference.to_cells(p))?;
            let refined = cell.scale(target.scale_factor as f64);
            Ok(MatchResult {
                query: p,
                coarse: cell,
                refined,
                d_coarse: d,
                d_fine: d,
                valid: true,
            })
        })
        .collect()
}

pub fn match_points(
    mode: MatchMode,
    reference: &FeatureHierarchy,
    target: &FeatureHierarchy,
    queries: &[Point2],
    cfg: &MatchConfig,
) -> Result<Vec<MatchResult>> {
    match mode {
        MatchMode::Hierarchical => hierarchical_match(reference, target, queries, cfg),
        MatchMode::ShallowOnly => {
            check_aligned(reference, target)?;
            single_level_match(reference.shallow(), target.shallow(), queries)
        }
        MatchMode::DeepOnly => {
            check_aligned(reference, target)?;
            single_level_match(reference.deep(), target.deep(), queries)
        }
        MatchMode::Concat => concat_match(reference, target, queries),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_map::squared_distance;
    use crate::features::{Level, LevelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_map(rng: &mut ChaCha8Rng, level_id: u32, f: usize, w: usize, h: usize, dim: usize) -> FeatureMap {
        let mut data: Vec<f64> = (0..w * h * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for cell in data.chunks_mut(dim) {
            l2_normalize_in_place(cell, DEFAULT_NORM_EPS);
        }
        FeatureMap::new(level_id, f, w, h, dim, data, true).unwrap()
    }

    fn hierarchy(shallow: FeatureMap, deep: FeatureMap) -> FeatureHierarchy {
        let f = deep.scale_factor;
        FeatureHierarchy::new(vec![
            Level { config: LevelConfig::new(0, 1), map: shallow },
            Level { config: LevelConfig::new(1, f), map: deep },
        ])
        .unwrap()
    }

    #[test]
    fn coarse_finds_planted_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reference = random_unit_map(&mut rng, 1, 4, 4, 4, 8);
        let mut target = random_unit_map(&mut rng, 1, 4, 10, 10, 8);
        let q = reference.at(2, 1).to_vec();
        target.descriptor_mut(7 * 10 + 5).copy_from_slice(&q);
        let (p, d) = coarse_match(&reference, &target, Point2::new(2.0, 1.0)).unwrap();
        assert_eq!(p, Point2::new(5.0, 7.0));
        assert_eq!(d, 0.0);
    }

    #[test]
    fn constant_target_picks_first_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reference = random_unit_map(&mut rng, 1, 4, 4, 4, 3);
        let target = FeatureMap::new(1, 4, 5, 5, 3, [0.0, 1.0, 0.0].repeat(25), true).unwrap();
        let (p, _) = coarse_match(&reference, &target, Point2::new(1.5, 2.25)).unwrap();
        assert_eq!(p, Point2::new(0.0, 0.0));
        assert!(coarse_match(&reference, &target, Point2::new(3.5, 0.0)).is_err());
    }

    #[test]
    fn zero_radius_returns_clipped_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_unit_map(&mut rng, 0, 1, 16, 16, 4);
        let t = random_unit_map(&mut rng, 0, 1, 16, 16, 4);
        let cfg = MatchConfig { refine_radius: 0.0, ..MatchConfig::default() };
        let (p, _) = refine_match(&r, &t, Point2::new(3.0, 3.0), Point2::new(2.0, 1.0), 4, &cfg).unwrap();
        assert_eq!(p, Point2::new(8.0, 4.0));
        let (p, _) = refine_match(&r, &t, Point2::new(3.0, 3.0), Point2::new(5.0, -1.0), 4, &cfg).unwrap();
        assert_eq!(p, Point2::new(15.0, 0.0));
    }

    #[test]
    fn refinement_finds_nearby_copy_and_never_worsens() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_unit_map(&mut rng, 0, 1, 40, 40, 6);
        let mut t = random_unit_map(&mut rng, 0, 1, 40, 40, 6);
        let q = r.at(10, 12).to_vec();
        t.descriptor_mut(22 * 40 + 23).copy_from_slice(&q);
        let cfg = MatchConfig::default();
        // Center at (5*4, 5*4) = (20, 20); the copy sits 3 px away.
        let (p, d) = refine_match(&r, &t, Point2::new(10.0, 12.0), Point2::new(5.0, 5.0), 4, &cfg).unwrap();
        assert_eq!((p, d), (Point2::new(23.0, 22.0), 0.0));

        for _ in 0..50 {
            let ps = Point2::new(rng.gen_range(0.0..39.0), rng.gen_range(0.0..39.0));
            let pd = Point2::new(rng.gen_range(0..10) as f64, rng.gen_range(0..10) as f64);
            let rad = rng.gen_range(0.0..10.0);
            let cfg = MatchConfig { refine_radius: rad, ..MatchConfig::default() };
            let (p, d) = refine_match(&r, &t, ps, pd, 4, &cfg).unwrap();
            let c = Point2::new((pd.x * 4.0).min(39.0), (pd.y * 4.0).min(39.0));
            let q = r.sample_unit(ps).unwrap();
            let d_center = squared_distance(&q, t.at(c.x as usize, c.y as usize)).sqrt();
            assert!(d <= d_center);
            assert!(p.distance(c) <= rad + 1e-12);
        }
    }

    #[test]
    fn coarse_query_scale_mapping() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shallow = random_unit_map(&mut rng, 0, 1, 128, 64, 4);
        let mut deep = random_unit_map(&mut rng, 1, 4, 32, 16, 4);
        let h_ref = hierarchy(shallow.clone(), deep.clone());
        // Make the deep target cell (16, 8) the unique exact copy of itself.
        let marker = vec![1.0, 0.0, 0.0, 0.0];
        deep.descriptor_mut(8 * 32 + 16).copy_from_slice(&marker);
        let mut ref_deep = h_ref.deep().clone();
        ref_deep.descriptor_mut(8 * 32 + 16).copy_from_slice(&marker);
        let h_ref = hierarchy(shallow.clone(), ref_deep);
        let h_tgt = hierarchy(shallow, deep);
        let m = hierarchical_match(&h_ref, &h_tgt, &[Point2::new(64.0, 32.0)], &MatchConfig::default()).unwrap();
        assert_eq!(m[0].coarse, Point2::new(16.0, 8.0));
        assert_eq!(m[0].d_coarse, 0.0);
        assert_eq!(m[0].refined, Point2::new(64.0, 32.0));
    }

    #[test]
    fn dense_shapes_and_validity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = hierarchy(random_unit_map(&mut rng, 0, 1, 18, 13, 3), random_unit_map(&mut rng, 1, 4, 4, 3, 3));
        let dense = dense_match(&h, &h, &MatchConfig::default()).unwrap();
        assert_eq!(dense.matches.len(), 18 * 13);
        // Columns beyond (4 - 1) * 4 = 12 leave the coarse grid.
        assert!(dense.at(12, 8).valid);
        assert!(!dense.at(13, 0).valid);
        assert!(!dense.at(0, 9).valid);
        let cfg = MatchConfig { dense_stride: 4, ..MatchConfig::default() };
        let dense4 = dense_match(&h, &h, &cfg).unwrap();
        assert_eq!((dense4.width, dense4.height), (4, 3));
        assert_eq!(dense4.at(1, 2).query, Point2::new(4.0, 8.0));
        assert_eq!(dense4.lookup(Point2::new(5.0, 7.0)).unwrap().query, Point2::new(4.0, 8.0));
    }

    #[test]
    fn concat_single_level_matches_coarse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let r = random_unit_map(&mut rng, 0, 1, 12, 12, 5);
            let t = random_unit_map(&mut rng, 0, 1, 12, 12, 5);
            let level = |m: FeatureMap| Level { config: LevelConfig::new(0, 1), map: m };
            let hr = FeatureHierarchy::from_levels_unchecked(vec![level(r.clone())]);
            let ht = FeatureHierarchy::from_levels_unchecked(vec![level(t.clone())]);
            let p = Point2::new(rng.gen_range(0..12) as f64, rng.gen_range(0..12) as f64);
            let c = concat_match(&hr, &ht, &[p]).unwrap()[0];
            let (cell, d) = coarse_match(&r, &t, p).unwrap();
            assert_eq!(c.refined, cell);
            assert!((c.d_fine - d).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_finds_planted_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = hierarchy(random_unit_map(&mut rng, 0, 1, 16, 16, 4), random_unit_map(&mut rng, 1, 4, 4, 4, 4));
        let m = concat_match(&h, &h, &[Point2::new(8.0, 4.0)]).unwrap();
        assert_eq!(m[0].refined, Point2::new(8.0, 4.0));
        assert_eq!(m[0].d_fine, 0.0);
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in [MatchMode::Hierarchical, MatchMode::ShallowOnly, MatchMode::DeepOnly, MatchMode::Concat] {
            assert_eq!(mode.to_string().parse::<MatchMode>().unwrap(), mode);
        }
    }
}
