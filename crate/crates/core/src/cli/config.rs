//! Flat `key = value` run configuration. One setting per line, `#` starts a
//! comment, unknown keys are rejected. Relative paths resolve against the
//! directory holding the config file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{SynthSpec, TransformKind};
use crate::features::{validate_levels, LevelConfig};
use crate::flow::FlowConfig;
use crate::learn::TrainConfig;
use crate::matching::{Match3dConfig, MatchConfig, MatchMode};

/// Settings shared by every level; level `i` gets id `i` and `scale_factors[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelParams {
    pub scale_factors: Vec<usize>,
    pub cell_size: usize,
    pub grid: usize,
    pub orientation_bins: usize,
    pub head_out_dim: usize,
}

impl Default for LevelParams {
    fn default() -> Self {
        let d = LevelConfig::new(0, 1);
        Self {
            scale_factors: LevelConfig::default_hierarchy().iter().map(|l| l.scale_factor).collect(),
            cell_size: d.cell_size,
            grid: d.grid,
            orientation_bins: d.orientation_bins,
            head_out_dim: d.head_out_dim,
        }
    }
}

impl LevelParams {
    pub fn levels(&self) -> Vec<LevelConfig> {
        self.scale_factors
            .iter()
            .enumerate()
            .map(|(i, &f)| LevelConfig {
                level_id: i as u32,
                scale_factor: f,
                cell_size: self.cell_size,
                grid: self.grid,
                orientation_bins: self.orientation_bins,
                head_out_dim: self.head_out_dim,
            })
            .collect()
    }
}

/// Descriptor and placement settings for the 3D search.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeParams {
    /// Centre of the reference subvolume in the reference grid, world units.
    pub ref_center: [f64; 3],
    /// Centre of the search region in the target grid, world units.
    pub region_center: [f64; 3],
    pub deep_blocks: usize,
    pub shallow_blocks: usize,
    pub block_samples: usize,
}

impl Default for VolumeParams {
    fn default() -> Self {
        Self {
            ref_center: [0.0; 3],
            region_center: [0.0; 3],
            deep_blocks: 3,
            shallow_blocks: 6,
            block_samples: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathParams {
    pub ref_image: Option<PathBuf>,
    pub tgt_image: Option<PathBuf>,
    pub heads: Option<PathBuf>,
    pub correspondences: Vec<PathBuf>,
    pub queries: Option<PathBuf>,
    pub matches: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub flow: Option<PathBuf>,
    pub gt_flow: Option<PathBuf>,
    pub fg_mask: Option<PathBuf>,
    pub bg_mask: Option<PathBuf>,
    pub ref_volume: Option<PathBuf>,
    pub tgt_volume: Option<PathBuf>,
}

impl PathParams {
    fn all(&self) -> impl Iterator<Item = &PathBuf> {
        [
            &self.ref_image,
            &self.tgt_image,
            &self.heads,
            &self.queries,
            &self.matches,
            &self.ground_truth,
            &self.flow,
            &self.gt_flow,
            &self.fg_mask,
            &self.bg_mask,
            &self.ref_volume,
            &self.tgt_volume,
        ]
        .into_iter()
        .flatten()
        .chain(&self.correspondences)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub levels: LevelParams,
    pub train: TrainConfig,
    pub matching: MatchConfig,
    pub match_mode: MatchMode,
    pub flow: FlowConfig,
    pub synth: SynthSpec,
    pub match3d: Match3dConfig,
    pub volume: VolumeParams,
    pub pck_thresholds: Vec<f64>,
    pub paths: PathParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            levels: LevelParams::default(),
            train: TrainConfig::default(),
            matching: MatchConfig::default(),
            match_mode: MatchMode::Hierarchical,
            flow: FlowConfig::default(),
            synth: SynthSpec::default(),
            match3d: Match3dConfig::default(),
            volume: VolumeParams::default(),
            pck_thresholds: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            paths: PathParams::default(),
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value {raw:?} for {key}"),
    })
}

fn list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(line, key, s))
        .collect()
}

fn range(line: usize, key: &str, raw: &str) -> Result<(f64, f64)> {
    match list::<f64>(line, key, raw)?.as_slice() {
        [v] => Ok((*v, *v)),
        [lo, hi] if lo <= hi => Ok((*lo, *hi)),
        _ => Err(Error::Parse {
            line,
            msg: format!("{key} expects a value or an ascending `lo, hi` pair"),
        }),
    }
}

fn triple(line: usize, key: &str, raw: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = list(line, key, raw)?;
    v.try_into().map_err(|_| Error::Parse {
        line,
        msg: format!("{key} expects three comma-separated numbers"),
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.rng_seed
    }

    /// Sets the seed used by training and synthesis.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.rng_seed = seed;
        self.synth.seed = seed;
    }

    pub fn level_configs(&self) -> Vec<LevelConfig> {
        self.levels.levels()
    }

    /// Parses config text; relative paths are joined onto `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw_line) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            cfg.set(n, key.trim(), raw.trim(), base_dir)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, n: usize, key: &str, raw: &str, base: &Path) -> Result<()> {
        let path = || base.join(raw);
        let opt_path = || Some(base.join(raw));
        match key {
            "levels" => self.levels.scale_factors = list(n, key, raw)?,
            "cell_size" => self.levels.cell_size = value(n, key, raw)?,
            "grid" => self.levels.grid = value(n, key, raw)?,
            "orientation_bins" => self.levels.orientation_bins = value(n, key, raw)?,
            "head_out_dim" => self.levels.head_out_dim = value(n, key, raw)?,

            "seed" => self.set_seed(value(n, key, raw)?),
            "margin" => self.train.margin = value(n, key, raw)?,
            "positive_window" => self.train.positive_window = value(n, key, raw)?,
            "learning_rate" => self.train.learning_rate = value(n, key, raw)?,
            "iterations" => self.train.iterations = value(n, key, raw)?,
            "weight_decay" => self.train.weight_decay = value(n, key, raw)?,
            "pairs_per_batch" => self.train.pairs_per_batch = value(n, key, raw)?,
            "correspondences_per_pair" => self.train.correspondences_per_pair = value(n, key, raw)?,
            "beta1" => self.train.beta1 = value(n, key, raw)?,
            "beta2" => self.train.beta2 = value(n, key, raw)?,
            "adam_eps" => self.train.adam_eps = value(n, key, raw)?,

            "refine_radius" => self.matching.refine_radius = value(n, key, raw)?,
            "dense_stride" => self.matching.dense_stride = value(n, key, raw)?,
            "match_mode" => self.match_mode = value(n, key, raw)?,

            "fb_threshold" => self.flow.fb_threshold = value(n, key, raw)?,
            "motion_window" => self.flow.motion_window = value(n, key, raw)?,
            "interp_k" => self.flow.interp_k = value(n, key, raw)?,
            "interp_sigma" => self.flow.interp_sigma = value(n, key, raw)?,
            "min_affine_neighbors" => self.flow.min_affine_neighbors = value(n, key, raw)?,

            "synth_transform" => {
                self.synth.transform = match raw {
                    "translation" => TransformKind::Translation,
                    "similarity" => TransformKind::Similarity,
                    _ => {
                        return Err(Error::Parse {
                            line: n,
                            msg: format!("synth_transform must be translation or similarity, got {raw:?}"),
                        })
                    }
                }
            }
            "synth_rotation" => self.synth.rotation = range(n, key, raw)?,
            "synth_scale" => self.synth.scale = range(n, key, raw)?,
            "synth_tx" => self.synth.tx = range(n, key, raw)?,
            "synth_ty" => self.synth.ty = range(n, key, raw)?,
            "synth_noise" => self.synth.noise_sigma = value(n, key, raw)?,
            "synth_grid_step" => self.synth.grid_step = value(n, key, raw)?,

            "region_edge" => self.match3d.region_edge = value(n, key, raw)?,
            "subvolume_edge" => self.match3d.subvolume_edge = value(n, key, raw)?,
            "coarse_gap" => self.match3d.coarse_gap = value(n, key, raw)?,
            "fine_gap" => self.match3d.fine_gap = value(n, key, raw)?,
            "refine_radius_3d" => self.match3d.refine_radius = value(n, key, raw)?,
            "ref_center" => self.volume.ref_center = triple(n, key, raw)?,
            "region_center" => self.volume.region_center = triple(n, key, raw)?,
            "deep_blocks" => self.volume.deep_blocks = value(n, key, raw)?,
            "shallow_blocks" => self.volume.shallow_blocks = value(n, key, raw)?,
            "block_samples" => self.volume.block_samples = value(n, key, raw)?,

            "pck_thresholds" => self.pck_thresholds = list(n, key, raw)?,

            "ref_image" => self.paths.ref_image = opt_path(),
            "tgt_image" => self.paths.tgt_image = opt_path(),
            "heads" => self.paths.heads = opt_path(),
            "correspondences" => self.paths.correspondences.push(path()),
            "queries" => self.paths.queries = opt_path(),
            "matches" => self.paths.matches = opt_path(),
            "ground_truth" => self.paths.ground_truth = opt_path(),
            "flow" => self.paths.flow = opt_path(),
            "gt_flow" => self.paths.gt_flow = opt_path(),
            "fg_mask" => self.paths.fg_mask = opt_path(),
            "bg_mask" => self.paths.bg_mask = opt_path(),
            "ref_volume" => self.paths.ref_volume = opt_path(),
            "tgt_volume" => self.paths.tgt_volume = opt_path(),
            _ => {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("unknown key {key:?}"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        validate_levels(&self.level_configs())?;
        self.train.validate()?;
        self.flow.validate()?;
        self.match3d.candidates_per_axis()?;
        if self.matching.dense_stride == 0 || !(self.matching.refine_radius >= 0.0) {
            return Err(Error::InvalidConfig("dense_stride must be >= 1 and refine_radius >= 0".into()));
        }
        Ok(())
    }

    /// Fails with the first referenced input path that does not exist.
    pub fn check_paths(&self) -> Result<()> {
        for p in self.paths.all() {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Serializes every setting; parsing the output yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let l = &self.levels;
        kv("levels", join(&l.scale_factors));
        kv("cell_size", l.cell_size.to_string());
        kv("grid", l.grid.to_string());
        kv("orientation_bins", l.orientation_bins.to_string());
        kv("head_out_dim", l.head_out_dim.to_string());

        let t = &self.train;
        kv("seed", t.rng_seed.to_string());
        kv("margin", t.margin.to_string());
        kv("positive_window", t.positive_window.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("iterations", t.iterations.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("pairs_per_batch", t.pairs_per_batch.to_string());
        kv("correspondences_per_pair", t.correspondences_per_pair.to_string());
        kv("beta1", t.beta1.to_string());
        kv("beta2", t.beta2.to_string());
        kv("adam_eps", t.adam_eps.to_string());

        kv("refine_radius", self.matching.refine_radius.to_string());
        kv("dense_stride", self.matching.dense_stride.to_string());
        kv("match_mode", self.match_mode.to_string());

        let f = &self.flow;
        kv("fb_threshold", f.fb_threshold.to_string());
        kv("motion_window", f.motion_window.to_string());
        kv("interp_k", f.interp_k.to_string());
        kv("interp_sigma", f.interp_sigma.to_string());
        kv("min_affine_neighbors", f.min_affine_neighbors.to_string());

        let sy = &self.synth;
        let kind = match sy.transform {
            TransformKind::Translation => "translation",
            TransformKind::Similarity => "similarity",
        };
        kv("synth_transform", kind.to_string());
        kv("synth_rotation", join(&[sy.rotation.0, sy.rotation.1]));
        kv("synth_scale", join(&[sy.scale.0, sy.scale.1]));
        kv("synth_tx", join(&[sy.tx.0, sy.tx.1]));
        kv("synth_ty", join(&[sy.ty.0, sy.ty.1]));
        kv("synth_noise", sy.noise_sigma.to_string());
        kv("synth_grid_step", sy.grid_step.to_string());

        let m = &self.match3d;
        kv("region_edge", m.region_edge.to_string());
        kv("subvolume_edge", m.subvolume_edge.to_string());
        kv("coarse_gap", m.coarse_gap.to_string());
        kv("fine_gap", m.fine_gap.to_string());
        kv("refine_radius_3d", m.refine_radius.to_string());
        let v = &self.volume;
        kv("ref_center", join(&v.ref_center));
        kv("region_center", join(&v.region_center));
        kv("deep_blocks", v.deep_blocks.to_string());
        kv("shallow_blocks", v.shallow_blocks.to_string());
        kv("block_samples", v.block_samples.to_string());

        kv("pck_thresholds", join(&self.pck_thresholds));

        let p = &self.paths;
        let single = [
            ("ref_image", &p.ref_image),
            ("tgt_image", &p.tgt_image),
            ("heads", &p.heads),
            ("queries", &p.queries),
            ("matches", &p.matches),
            ("ground_truth", &p.ground_truth),
            ("flow", &p.flow),
            ("gt_flow", &p.gt_flow),
            ("fg_mask", &p.fg_mask),
            ("bg_mask", &p.bg_mask),
            ("ref_volume", &p.ref_volume),
            ("tgt_volume", &p.tgt_volume),
        ];
        for (k, v) in single {
            if let Some(v) = v {
                kv(k, v.display().to_string());
            }
        }
        for c in &p.correspondences {
            kv("correspondences", c.display().to_string());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text(), Path::new("/")).unwrap(), cfg);
    }

    #[test]
    fn parses_and_round_trips_custom_values() {
        let text = "\
# two-level setup
levels = 1, 2, 8
cell_size = 2
seed = 42   # trailing comment
learning_rate = 0.0005
match_mode = concat
synth_transform = similarity
synth_rotation = -0.05, 0.05
synth_tx = 3
ref_center = 1, 2.5, -3
pck_thresholds = 2, 16
ref_image = imgs/a.pgm
correspondences = c1.txt
correspondences = c2.txt
";
        let cfg = RunConfig::parse(text, Path::new("/data")).unwrap();
        assert_eq!(cfg.levels.scale_factors, vec![1, 2, 8]);
        assert_eq!(cfg.level_configs()[2].cell_size, 2);
        assert_eq!(cfg.train.rng_seed, 42);
        assert_eq!(cfg.synth.seed, 42);
        assert_eq!(cfg.match_mode, MatchMode::Concat);
        assert_eq!(cfg.synth.tx, (3.0, 3.0));
        assert_eq!(cfg.volume.ref_center, [1.0, 2.5, -3.0]);
        assert_eq!(cfg.paths.ref_image, Some(PathBuf::from("/data/imgs/a.pgm")));
        assert_eq!(cfg.paths.correspondences.len(), 2);
        assert_eq!(RunConfig::parse(&cfg.to_text(), Path::new("/elsewhere")).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        let err = |t: &str| RunConfig::parse(t, Path::new("/")).unwrap_err();
        assert!(matches!(err("lerning_rate = 1"), Error::Parse { line: 1, .. }));
        assert!(matches!(err("\nmargin"), Error::Parse { line: 2, .. }));
        assert!(matches!(err("iterations = -3"), Error::Parse { .. }));
        assert!(matches!(err("levels = 4, 1"), Error::InvalidConfig(_)));
        assert!(matches!(err("synth_scale = 2, 1"), Error::Parse { .. }));
    }

    #[test]
    fn missing_inputs_are_reported() {
        let cfg = RunConfig::parse("heads = /definitely/not/here.hhd", Path::new("/")).unwrap();
        let msg = cfg.check_paths().unwrap_err().to_string();
        assert!(msg.contains("/definitely/not/here.hhd"), "{msg}");
    }
}
