use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::{FlowConfig, FlowField};
use crate::error::{Error, Result};
use crate::matching::MatchRecord;

const RANK_TOL: f64 = 1e-10;

/// Smallest weight relative to the nearest seed. Seeds below it would carry
/// less information than the rounding error of the heavier rows, so clamping
/// them keeps the fit well conditioned without changing its exactness on
/// affine fields.
const WEIGHT_FLOOR: f64 = 1e-12;

/// Uniform bucket grid over seed positions for k-nearest queries.
struct SeedIndex<'a> {
    seeds: &'a [MatchRecord],
    cell: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> SeedIndex<'a> {
    fn new(seeds: &'a [MatchRecord], width: usize, height: usize, k: usize) -> Self {
        let (mut x0, mut y0) = (0.0f64, 0.0f64);
        let (mut x1, mut y1) = (width as f64, height as f64);
        for s in seeds {
            x0 = x0.min(s.query.x);
            y0 = y0.min(s.query.y);
            x1 = x1.max(s.query.x + 1.0);
            y1 = y1.max(s.query.y + 1.0);
        }
        // Roughly k seeds per 3x3 block of buckets.
        let area = (x1 - x0) * (y1 - y0);
        let cell = (area * k as f64 / (9.0 * seeds.len() as f64)).sqrt().max(1.0);
        let nx = ((x1 - x0) / cell).ceil().max(1.0) as usize;
        let ny = ((y1 - y0) / cell).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut index = Self {
            seeds,
            cell,
            x0,
            y0,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (i, s) in seeds.iter().enumerate() {
            let (bx, by) = index.bucket(s.query.x, s.query.y);
            buckets[by * nx + bx].push(i);
        }
        index.buckets = buckets;
        index
    }

    fn bucket(&self, x: f64, y: f64) -> (usize, usize) {
        let bx = ((x - self.x0) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64);
        let by = ((y - self.y0) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64);
        (bx as usize, by as usize)
    }

    /// `(squared distance, seed index)` of the k nearest seeds, ascending,
    /// ties by index.
    fn nearest(&self, x: f64, y: f64, k: usize) -> Vec<(f64, usize)> {
        let (cx, cy) = self.bucket(x, y);
        let (cx, cy) = (cx as isize, cy as isize);
        let max_ring = self.nx.max(self.ny) as isize;
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 16);
        for r in 0..=max_ring {
            for by in cy - r..=cy + r {
                if by < 0 || by >= self.ny as isize {
                    continue;
                }
                let on_edge_row = by == cy - r || by == cy + r;
                let step = if on_edge_row { 1 } else { (2 * r).max(1) };
                let mut bx = cx - r;
                while bx <= cx + r {
                    if bx >= 0 && bx < self.nx as isize {
                        for &i in &self.buckets[by as usize * self.nx + bx as usize] {
                            let q = self.seeds[i].query;
                            best.push(((q.x - x).powi(2) + (q.y - y).powi(2), i));
                        }
                    }
                    bx += step;
                }
            }
            best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            best.truncate(k);
            // Anything in ring r+1 or beyond is at least r*cell away.
            let reach = r as f64 * self.cell;
            if best.len() == k && best[k - 1].0 < reach * reach {
                break;
            }
        }
        best
    }
}

/// Locally-weighted affine interpolation of sparse matches to a dense field.
///
/// Each pixel uses its `interp_k` nearest seeds with Gaussian weights
/// `exp(-d^2 / 2 sigma^2)`, floored at `1e-12` of the nearest seed's weight. The affine fit is done in coordinates centred on
/// the pixel, so the estimate is the intercept, and solved by pivoted QR on
/// the square-root-weighted design. Rank-deficient (collinear) neighbourhoods and
/// neighbourhoods smaller than `min_affine_neighbors` use the weighted mean
/// displacement instead.
pub fn interpolate_flow(seeds: &[MatchRecord], width: usize, height: usize, cfg: &FlowConfig) -> Result<FlowField> {
    if seeds.is_empty() {
        return Err(Error::NoSeeds);
    }
    cfg.validate()?;
    let k = cfg.interp_k.min(seeds.len());
    let index = SeedIndex::new(seeds, width, height, k);
    let two_s2 = 2.0 * cfg.interp_sigma * cfg.interp_sigma;

    let flow: Vec<(f64, f64)> = (0..width * height)
        .into_par_iter()
        .map(|p| {
            let (x, y) = ((p % width) as f64, (p / width) as f64);
            let nn = index.nearest(x, y, k);
            // Weights relative to the nearest seed; the common factor cancels.
            let d2_min = nn[0].0;
            let w: Vec<f64> = nn
                .iter()
                .map(|&(d2, _)| (-(d2 - d2_min) / two_s2).exp().max(WEIGHT_FLOOR))
                .collect();
            if nn.len() >= cfg.min_affine_neighbors.max(3) {
                if let Some(uv) = affine_at(seeds, &nn, &w, x, y) {
                    return uv;
                }
            }
            weighted_mean(seeds, &nn, &w)
        })
        .collect();

    let (u, v) = flow.into_iter().unzip();
    Ok(FlowField {
        width,
        height,
        u,
        v,
        valid: vec![true; width * height],
    })
}

fn weighted_mean(seeds: &[MatchRecord], nn: &[(f64, usize)], w: &[f64]) -> (f64, f64) {
    let (mut su, mut sv, mut sw) = (0.0, 0.0, 0.0);
    for (&(_, i), &wi) in nn.iter().zip(w) {
        let (u, v) = seeds[i].displacement();
        su += wi * u;
        sv += wi * v;
        sw += wi;
    }
    (su / sw, sv / sw)
}

fn affine_at(seeds: &[MatchRecord], nn: &[(f64, usize)], w: &[f64], x: f64, y: f64) -> Option<(f64, f64)> {
    let scale = nn.last().map_or(1.0, |&(d2, _)| d2.sqrt()).max(1.0);
    // Positive weights do not change the rank, so it is judged on the seed
    // geometry alone; weights that span many orders of magnitude would
    // otherwise make a well-posed fit look singular.
    let phi = |j: usize| {
        let s = &seeds[nn[j].1];
        Vector3::new(1.0, (s.query.x - x) / scale, (s.query.y - y) / scale)
    };
    let gram = (0..nn.len()).fold(Matrix3::<f64>::zeros(), |g, j| g + phi(j) * phi(j).transpose());
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo / hi < RANK_TOL {
        return None;
    }
    let mut rows: Vec<([f64; 3], [f64; 2])> = (0..nn.len())
        .map(|j| {
            let sw = w[j].sqrt();
            let (u, v) = seeds[nn[j].1].displacement();
            let p = phi(j);
            ([sw * p[0], sw * p[1], sw * p[2]], [sw * u, sw * v])
        })
        .collect();
    let sol = stiff_least_squares(&mut rows)?;
    (sol[0][0].is_finite() && sol[0][1].is_finite()).then_some((sol[0][0], sol[0][1]))
}

/// Overflow- and underflow-safe Euclidean norm.
fn scaled_norm(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = x.clone().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * x.map(|v| (v / m) * (v / m)).sum::<f64>().sqrt()
}

/// Least squares `min ||A x - B||` for a full-rank `n x 3` system whose row
/// scales may span many orders of magnitude (Gaussian weights far from the
/// pixel). Householder QR with rows sorted by decreasing max-norm and
/// column pivoting on norms, the combination that stays backward stable for
/// such stiff problems. Returns one solution row per unknown.
fn stiff_least_squares(rows: &mut [([f64; 3], [f64; 2])]) -> Option<[[f64; 2]; 3]> {
    let row_max = |r: &[f64; 3]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    rows.sort_by(|a, b| row_max(&b.0).total_cmp(&row_max(&a.0)));
    let n = rows.len();
    let mut perm = [0usize, 1, 2];
    for j in 0..3 {
        let norm = |c: usize| scaled_norm(rows[j..].iter().map(move |r| r.0[c]));
        let p = (j..3).max_by(|&a, &b| norm(a).total_cmp(&norm(b)))?;
        if p != j {
            perm.swap(j, p);
            for r in rows.iter_mut() {
                r.0.swap(j, p);
            }
        }
        let m = rows[j..].iter().fold(0.0f64, |m, r| m.max(r.0[j].abs()));
        if m == 0.0 {
            return None;
        }
        // Reflector built from the column scaled by its largest entry.
        let mut v: Vec<f64> = rows[j..].iter().map(|r| r.0[j] / m).collect();
        let alpha = -v[0].signum() * v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        for c in j..3 {
            let dot: f64 = v.iter().zip(&rows[j..]).map(|(vi, r)| vi * r.0[c]).sum();
            let f = 2.0 * dot / vv;
            for (vi, r) in v.iter().zip(rows[j..].iter_mut()) {
                r.0[c] -= f * vi;
            }
        }
        for c in 0..2 {
            let dot: f64 = v.iter().zip(&rows[j..]).map(|(vi, r)| vi * r.1[c]).sum();
            let f = 2.0 * dot / vv;
            for (vi, r) in v.iter().zip(rows[j..].iter_mut()) {
                r.1[c] -= f * vi;
            }
        }
        rows[j].0[j] = alpha * m;
        for r in rows[j + 1..n].iter_mut() {
            r.0[j] = 0.0;
        }
    }
    let mut x = [[0.0f64; 2]; 3];
    for c in 0..2 {
        for i in (0..3).rev() {
            let mut acc = rows[i].1[c];
            for k in i + 1..3 {
                acc -= rows[i].0[k] * x[k][c];
            }
            if rows[i].0[i] == 0.0 {
                return None;
            }
            x[i][c] = acc / rows[i].0[i];
        }
    }
    let mut out = [[0.0f64; 2]; 3];
    for (slot, &orig) in perm.iter().enumerate() {
        out[orig] = x[slot];
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Point2;

    fn seed(x: f64, y: f64, u: f64, v: f64) -> MatchRecord {
        MatchRecord {
            query: Point2::new(x, y),
            matched: Point2::new(x + u, y + v),
            d_coarse: 0.0,
            d_fine: 0.0,
            valid: true,
        }
    }

    #[test]
    fn constant_seeds_give_constant_flow() {
        let seeds: Vec<_> = (0..30).map(|i| seed((i * 7 % 20) as f64, (i * 3 % 15) as f64, 5.0, 0.0)).collect();
        let f = interpolate_flow(&seeds, 20, 15, &FlowConfig::default()).unwrap();
        for i in 0..f.len() {
            assert!((f.u[i] - 5.0).abs() < 1e-9 && f.v[i].abs() < 1e-9);
            assert!(f.valid[i]);
        }
    }

    #[test]
    fn affine_field_is_recovered() {
        let a = |x: f64, y: f64| (0.5 + 0.02 * x - 0.03 * y, -1.0 + 0.01 * x + 0.04 * y);
        let seeds: Vec<_> = (0..40)
            .map(|i| {
                let (x, y) = ((i * 13 % 32) as f64, (i * 7 % 24) as f64);
                let (u, v) = a(x, y);
                seed(x, y, u, v)
            })
            .collect();
        for k in [6, 25] {
            let cfg = FlowConfig {
                interp_k: k,
                ..FlowConfig::default()
            };
            let f = interpolate_flow(&seeds, 32, 24, &cfg).unwrap();
            for y in 0..24 {
                for x in 0..32 {
                    let (u, v) = f.at(x, y);
                    let (eu, ev) = a(x as f64, y as f64);
                    assert!((u - eu).abs() < 1e-4 && (v - ev).abs() < 1e-4, "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn stiff_weights_keep_affine_exactness() {
        // Near (12, 12) the three heaviest seeds are collinear; the fit is
        // pinned down only by seeds whose raw weights are below 1e-35.
        let a = |x: f64, y: f64| (0.3 * x - 0.2 * y + 1.0, -0.4 * x + 0.1 * y - 2.0);
        let seeds: Vec<_> = [(9.0, 12.0), (9.0, 13.0), (9.0, 9.0), (11.0, 5.0), (8.0, 6.0), (10.0, 5.0)]
            .iter()
            .map(|&(x, y)| {
                let (u, v) = a(x, y);
                seed(x, y, u, v)
            })
            .collect();
        let cfg = FlowConfig {
            interp_k: 6,
            interp_sigma: 0.5,
            ..FlowConfig::default()
        };
        let f = interpolate_flow(&seeds, 16, 16, &cfg).unwrap();
        let (u, v) = f.at(12, 12);
        let (eu, ev) = a(12.0, 12.0);
        assert!((u - eu).abs() < 1e-6 && (v - ev).abs() < 1e-6, "({u}, {v}) vs ({eu}, {ev})");
    }

    #[test]
    fn two_seeds_fall_back_to_weighted_mean() {
        let seeds = vec![seed(0.0, 0.0, 2.0, 0.0), seed(4.0, 0.0, 0.0, 2.0)];
        let cfg = FlowConfig {
            interp_sigma: 2.0,
            ..FlowConfig::default()
        };
        let f = interpolate_flow(&seeds, 5, 1, &cfg).unwrap();
        for x in 0..5 {
            let w0 = (-(x as f64).powi(2) / 8.0).exp();
            let w1 = (-(4.0 - x as f64).powi(2) / 8.0).exp();
            let (u, v) = f.at(x, 0);
            assert!((u - 2.0 * w0 / (w0 + w1)).abs() < 1e-12);
            assert!((v - 2.0 * w1 / (w0 + w1)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_neighbour_reproduces_seed() {
        let seeds = vec![seed(1.0, 1.0, 0.3, -0.7), seed(6.0, 2.0, 1.5, 2.5)];
        let cfg = FlowConfig {
            interp_k: 1,
            ..FlowConfig::default()
        };
        let f = interpolate_flow(&seeds, 8, 4, &cfg).unwrap();
        assert_eq!(f.at(1, 1), seeds[0].displacement());
        assert_eq!(f.at(6, 2), seeds[1].displacement());
    }

    #[test]
    fn knn_matches_brute_force() {
        let seeds: Vec<_> = (0..200)
            .map(|i| seed(((i * 37) % 97) as f64 * 0.5, ((i * 11) % 61) as f64 * 0.7, 0.0, 0.0))
            .collect();
        let index = SeedIndex::new(&seeds, 50, 45, 9);
        for (x, y) in [(0.0, 0.0), (25.0, 20.0), (49.0, 44.0), (13.0, 3.0)] {
            let mut all: Vec<(f64, usize)> = seeds
                .iter()
                .enumerate()
                .map(|(i, s)| ((s.query.x - x).powi(2) + (s.query.y - y).powi(2), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.truncate(9);
            assert_eq!(index.nearest(x, y, 9), all);
        }
    }

    #[test]
    fn no_seeds_is_an_error() {
        assert!(matches!(interpolate_flow(&[], 4, 4, &FlowConfig::default()), Err(Error::NoSeeds)));
    }
}
