//! Orientation-histogram base descriptors.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::features::LevelConfig;
use crate::image::{downsample, to_grayscale, Image};

/// Computes one un-normalized orientation-histogram descriptor per pixel of the
/// image downsampled by `cfg.scale_factor`.
///
/// Each descriptor concatenates `grid x grid` cell histograms (row-major over
/// cells, then bins). The block of cells is centred on the pixel, spanning
/// `[p - grid*cell/2, p + grid*cell/2)`; pixels outside the image are replicated.
pub fn compute_base_descriptors(img: &Image, cfg: &LevelConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let required = cfg.grid * cfg.cell_size * cfg.scale_factor;
    if img.width() < required || img.height() < required {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            required,
        });
    }
    let gray = to_grayscale(img);
    let small = downsample(&gray, cfg.scale_factor)?;
    let (w, h) = (small.width(), small.height());
    let bins = cfg.orientation_bins;

    // Per-pixel vote: (bin, magnitude).
    let mut votes = vec![(0usize, 0.0f64); w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = 0.5 * (small.get_clamped(xi + 1, yi) - small.get_clamped(xi - 1, yi));
            let gy = 0.5 * (small.get_clamped(xi, yi + 1) - small.get_clamped(xi, yi - 1));
            let mag = gx.hypot(gy);
            if mag > 0.0 {
                votes[y * w + x] = (orientation_bin(gy.atan2(gx), bins), mag);
            }
        }
    }

    let c = cfg.cell_size;
    let extent = cfg.grid * c;
    let half = (extent / 2) as isize;
    // Histograms of every c x c cell whose top-left corner lies in
    // [-half, dim - 1 - half + (grid - 1) * c].
    let span_w = w + (cfg.grid - 1) * c;
    let span_h = h + (cfg.grid - 1) * c;
    let mut cell_hist = vec![0.0f64; span_w * span_h * bins];
    for ty in 0..span_h {
        for tx in 0..span_w {
            let hist = &mut cell_hist[(ty * span_w + tx) * bins..(ty * span_w + tx + 1) * bins];
            let (ox, oy) = (tx as isize - half, ty as isize - half);
            for dy in 0..c as isize {
                let sy = (oy + dy).clamp(0, h as isize - 1) as usize;
                for dx in 0..c as isize {
                    let sx = (ox + dx).clamp(0, w as isize - 1) as usize;
                    let (bin, mag) = votes[sy * w + sx];
                    hist[bin] += mag;
                }
            }
        }
    }

    let dim = cfg.base_dim();
    let mut data = vec![0.0; w * h * dim];
    for y in 0..h {
        for x in 0..w {
            let desc = &mut data[(y * w + x) * dim..(y * w + x + 1) * dim];
            for gy in 0..cfg.grid {
                for gx in 0..cfg.grid {
                    let t = (y + gy * c) * span_w + x + gx * c;
                    let slot = (gy * cfg.grid + gx) * bins;
                    desc[slot..slot + bins].copy_from_slice(&cell_hist[t * bins..(t + 1) * bins]);
                }
            }
        }
    }
    FeatureMap::new(cfg.level_id, cfg.scale_factor, w, h, dim, data, false)
}

/// Hard assignment of an angle in (-pi, pi] to one of `bins` sectors of [0, 2pi).
fn orientation_bin(angle: f64, bins: usize) -> usize {
    let a = if angle < 0.0 { angle + TAU } else { angle };
    ((a / (TAU / bins as f64)).floor() as usize).min(bins - 1)
}
