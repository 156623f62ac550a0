//! Multi-level feature hierarchy: hand-crafted base descriptors per level,
//! each followed by a trainable embedding head.
//!
//! Deeper levels are computed on the image downsampled by a larger scale
//! factor, so their fixed-size descriptor support covers more of the scene.

mod head;
mod hog;

pub use head::{
    apply_head, decode_heads, encode_heads, read_heads, write_heads, EmbeddingHead,
};
pub use hog::compute_base_descriptors;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct LevelConfig {
    pub level_id: u32,
    pub scale_factor: usize,
    pub cell_size: usize,
    pub grid: usize,
    pub orientation_bins: usize,
    pub head_out_dim: usize,
}

impl LevelConfig {
    pub fn new(level_id: u32, scale_factor: usize) -> Self {
        Self {
            level_id,
            scale_factor,
            cell_size: 4,
            grid: 3,
            orientation_bins: 8,
            head_out_dim: 64,
        }
    }

    pub fn base_dim(&self) -> usize {
        self.grid * self.grid * self.orientation_bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_factor == 0
            || self.cell_size == 0
            || self.grid == 0
            || self.orientation_bins == 0
            || self.head_out_dim == 0
        {
            return Err(Error::InvalidConfig(format!(
                "level {}: all level parameters must be positive",
                self.level_id
            )));
        }
        Ok(())
    }

    /// Full-resolution shallow level and a level at a quarter of the resolution.
    pub fn default_hierarchy() -> Vec<LevelConfig> {
        vec![LevelConfig::new(0, 1), LevelConfig::new(1, 4)]
    }
}

/// Checks the ordering and depth requirements of a level list.
pub fn validate_levels(cfgs: &[LevelConfig]) -> Result<()> {
    if cfgs.len() < 2 {
        return Err(Error::HierarchyTooShallow(cfgs.len()));
    }
    for c in cfgs {
        c.validate()?;
    }
    if cfgs
        .windows(2)
        .any(|w| w[1].scale_factor <= w[0].scale_factor)
    {
        return Err(Error::InvalidConfig(
            "scale factors must strictly increase from shallow to deep".into(),
        ));
    }
    Ok(())
}

/// Fresh Xavier-initialized heads for every level, drawn in level order.
pub fn init_heads(cfgs: &[LevelConfig], seed: u64) -> Vec<EmbeddingHead> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cfgs.iter()
        .map(|c| EmbeddingHead::xavier(c.level_id, c.base_dim(), c.head_out_dim, &mut rng))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub config: LevelConfig,
    pub map: FeatureMap,
}

/// Normalized feature maps ordered shallow to deep.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureHierarchy {
    levels: Vec<Level>,
}

impl FeatureHierarchy {
    pub fn new(levels: Vec<Level>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::HierarchyTooShallow(levels.len()));
        }
        if levels.iter().any(|l| !l.map.normalized) {
            return Err(Error::InvalidConfig("hierarchy maps must be normalized".into()));
        }
        Ok(Self { levels })
    }

    /// Builds a hierarchy that may hold a single level. Only the concatenated
    /// baseline and degenerate tests need this.
    pub fn from_levels_unchecked(levels: Vec<Level>) -> Self {
        Self { levels }
    }

    /// Applies the matching head to each base map.
    pub fn from_base(base: &[FeatureMap], cfgs: &[LevelConfig], heads: &[EmbeddingHead]) -> Result<Self> {
        if base.len() != cfgs.len() {
            return Err(Error::LengthMismatch(base.len(), cfgs.len()));
        }
        let levels = base
            .iter()
            .zip(cfgs)
            .map(|(b, cfg)| {
                let head = find_head(heads, cfg.level_id)?;
                Ok(Level {
                    config: cfg.clone(),
                    map: apply_head(b, head)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn map(&self, level: usize) -> &FeatureMap {
        &self.levels[level].map
    }

    pub fn shallow(&self) -> &FeatureMap {
        &self.levels[0].map
    }

    pub fn deep(&self) -> &FeatureMap {
        &self.levels[self.levels.len() - 1].map
    }
}

pub(crate) fn find_head(heads: &[EmbeddingHead], level_id: u32) -> Result<&EmbeddingHead> {
    heads
        .iter()
        .find(|h| h.level_id == level_id)
        .ok_or_else(|| Error::InvalidConfig(format!("no head for level {level_id}")))
}

/// Base (un-normalized) descriptors for every level. Independent of the heads.
pub fn compute_base_pyramid(img: &Image, cfgs: &[LevelConfig]) -> Result<Vec<FeatureMap>> {
    validate_levels(cfgs)?;
    cfgs.iter()
        .map(|c| compute_base_descriptors(img, c))
        .collect()
}

pub fn extract_hierarchy(
    img: &Image,
    cfgs: &[LevelConfig],
    heads: &[EmbeddingHead],
) -> Result<FeatureHierarchy> {
    let base = compute_base_pyramid(img, cfgs)?;
    FeatureHierarchy::from_base(&base, cfgs, heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn texture(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.gen::<f64>()).collect();
        Image::gray(w, h, data).unwrap()
    }

    #[test]
    fn default_two_level_shapes() {
        let cfgs = LevelConfig::default_hierarchy();
        let heads = init_heads(&cfgs, 0);
        let img = texture(64, 64, 1);
        let h = extract_hierarchy(&img, &cfgs, &heads).unwrap();
        assert_eq!((h.shallow().width, h.shallow().height), (64, 64));
        assert_eq!((h.deep().width, h.deep().height), (16, 16));
        assert_eq!(h.deep().scale_factor, 4);
        let again = extract_hierarchy(&img, &cfgs, &heads).unwrap();
        assert_eq!(h, again);
    }

    #[test]
    fn single_level_is_rejected() {
        let cfgs = vec![LevelConfig::new(0, 1)];
        let heads = init_heads(&cfgs, 0);
        assert!(matches!(
            extract_hierarchy(&texture(32, 32, 2), &cfgs, &heads),
            Err(Error::HierarchyTooShallow(1))
        ));
    }

    #[test]
    fn non_increasing_scales_rejected() {
        let cfgs = vec![LevelConfig::new(0, 2), LevelConfig::new(1, 2)];
        assert!(validate_levels(&cfgs).is_err());
    }

    #[test]
    fn missing_head() {
        let cfgs = LevelConfig::default_hierarchy();
        let heads = init_heads(&cfgs[..1], 0);
        assert!(extract_hierarchy(&texture(64, 64, 3), &cfgs, &heads).is_err());
    }

    #[test]
    fn translation_equivariance() {
        let big = texture(120, 100, 9);
        let crop = |x0: usize| Image::from_fn(96, 96, |x, y| big.get(x + x0, y, 0));
        for f in [1usize, 2, 4] {
            let cfg = LevelConfig::new(0, f);
            let k = 2;
            let a = compute_base_descriptors(&crop(16), &cfg).unwrap();
            // The second crop starts k*f pixels earlier, so content moves right by k cells.
            let b = compute_base_descriptors(&crop(16 - k * f), &cfg).unwrap();
            let margin = 8;
            for cy in margin..a.height - margin {
                for cx in margin..a.width - margin - k {
                    assert_eq!(a.at(cx, cy), b.at(cx + k, cy), "f={f} cell ({cx},{cy})");
                }
            }
        }
    }
}
