use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CliError, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{epe, fl_outlier_rate, pck, read_mask, synth_pair};
use crate::feature_map::export_feature_map;
use crate::features::{apply_head, compute_base_pyramid, extract_hierarchy, read_heads, write_heads, EmbeddingHead, FeatureHierarchy};
use crate::flow::{estimate_flow, read_flo, write_flo, FlowField};
use crate::image::{read_pnm, write_pnm, Image, Point2};
use crate::learn::{read_correspondences, train, write_correspondences, TrainingPair};
use crate::matching::{
    dense_match, match_3d, match_points, read_matches, read_voxel_grid, write_matches, MatchRecord,
    OccupancyDescriptor, SubvolumeDescriptor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Match,
    Flow,
    EvalPck,
    EvalFlow,
    Synth,
    Match3d,
    ExportFeatures,
}

pub(super) fn dispatch(cmd: Command, cfg: &RunConfig, out: &Path) -> std::result::Result<(), CliError> {
    match cmd {
        Command::Train => cmd_train(cfg, out),
        Command::Match => cmd_match(cfg, out),
        Command::Flow => cmd_flow(cfg, out),
        Command::EvalPck => cmd_eval_pck(cfg, out),
        Command::EvalFlow => cmd_eval_flow(cfg, out),
        Command::Synth => cmd_synth(cfg, out),
        Command::Match3d => cmd_match3d(cfg, out),
        Command::ExportFeatures => cmd_export_features(cfg, out),
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> std::result::Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("config key `{key}` is required for this command")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_heads(cfg: &RunConfig) -> std::result::Result<Vec<EmbeddingHead>, CliError> {
    Ok(read_heads(require(&cfg.paths.heads, "heads")?)?)
}

fn load_pair(cfg: &RunConfig) -> std::result::Result<(Image, Image), CliError> {
    let a = read_pnm(require(&cfg.paths.ref_image, "ref_image")?)?;
    let b = read_pnm(require(&cfg.paths.tgt_image, "tgt_image")?)?;
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::DimensionMismatch(a.width(), a.height(), b.width(), b.height()).into());
    }
    Ok((a, b))
}

fn hierarchies(cfg: &RunConfig, a: &Image, b: &Image) -> std::result::Result<(FeatureHierarchy, FeatureHierarchy), CliError> {
    let heads = load_heads(cfg)?;
    let levels = cfg.level_configs();
    Ok((extract_hierarchy(a, &levels, &heads)?, extract_hierarchy(b, &levels, &heads)?))
}

/// Query points, one `x y` pair per line; `#` comments allowed.
pub fn parse_points(text: &str) -> Result<Vec<Point2>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        match v.as_slice() {
            [x, y] => out.push(Point2::new(*x, *y)),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `x y`, found {} fields", v.len()),
                })
            }
        }
    }
    Ok(out)
}

fn resolve(base: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> std::result::Result<(), CliError> {
    if cfg.paths.correspondences.is_empty() {
        return Err(CliError::Usage("config key `correspondences` is required for train".into()));
    }
    let mut pairs = Vec::new();
    for path in &cfg.paths.correspondences {
        let set = read_correspondences(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        pairs.push(TrainingPair {
            reference: read_pnm(resolve(dir, &set.reference))?,
            target: read_pnm(resolve(dir, &set.target))?,
            positives: set,
        });
    }
    let outcome = train(&pairs, &cfg.level_configs(), &cfg.train)?;
    write_heads(&outcome.heads, out)?;
    let mut csv = String::from("iter,loss\n");
    for (i, l) in outcome.loss_log.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    let mut loss_path = out.as_os_str().to_owned();
    loss_path.push(".loss.csv");
    write_text(Path::new(&loss_path), &csv)?;
    if let (Some(first), Some(last)) = (outcome.loss_log.first(), outcome.loss_log.last()) {
        println!("trained {} iterations, loss {first} -> {last}", outcome.loss_log.len());
    } else {
        println!("wrote initial heads (0 iterations)");
    }
    Ok(())
}

fn cmd_match(cfg: &RunConfig, out: &Path) -> std::result::Result<(), CliError> {
    let (a, b) = load_pair(cfg)?;
    let (ha, hb) = hierarchies(cfg, &a, &b)?;
    let records: Vec<MatchRecord> = match &cfg.paths.queries {
        Some(q) => {
            let text = fs::read_to_string(q).map_err(|e| Error::io(q, e))?;
            let queries = parse_points(&text)?;
            match_points(cfg.match_mode, &ha, &hb, &queries, &cfg.matching)?
                .iter()
                .map(MatchRecord::from)
                .collect()
        }
        None => dense_match(&ha, &hb, &cfg.matching)?
            .matches
            .iter()
            .map(MatchRecord::from)
            .collect(),
    };
    write_matches(&records, out)?;
    println!("wrote {} matches", records.len());
    Ok(())
}

fn cmd_flow(cfg: &RunConfig, out: &Path) -> std::result::Result<(), CliError> {
    let (a, b) = load_pair(cfg)?;
    let (ha, hb) = hierarchies(cfg, &a, &b)?;
    let flow = estimate_flow(&ha, &hb, a.width(), a.height(), &cfg.matching, &cfg.flow)?;
    write_flo(&flow, out)?;
    println!("wrote {}x{} flow", flow.width, flow.height);
    Ok(())
}

fn cmd_eval_pck(cfg: &RunConfig, out: &Path) -> std::result::Result<(), CliError> {
    let preds = read_matches(require(&cfg.paths.matches, "matches")?)?;
    let gt = read_correspondences(require(&cfg.paths.ground_truth, "ground_truth")?)?;
    let gt: Vec<_> = gt.triplets.iter().filter(|t| t.positive).collect();
    if preds.len() != gt.len() {
        return Err(Error::LengthMismatch(preds.len(), gt.len()).into());
    }
    for (i, (p, g)) in preds.iter().zip(&gt).enumerate() {
        if p.query.distance(g.x) > 1e-9 {
            return Err(CliError::Data(Error::Parse {
                line: i + 1,
                msg: format!(
                    "prediction query ({}, {}) does not match ground truth ({}, {})",
                    p.query.x, p.query.y, g.x.x, g.x.y
                ),
            }));
        }
    }
    let pred: Vec<Point2> = preds.iter().map(|p| p.matched).collect();
    let truth: Vec<Point2> = gt.iter().map(|t| t.x_prime).collect();
    let curve = pck(&pred, &truth, &cfg.pck_thresholds)?;
    curve.write_csv(out)?;
    for (t, v) in curve.thresholds.iter().zip(&curve.values) {
        println!("PCK@{t}: {v:.4}");
    }
    Ok(())
}

fn region(gt: &FlowField, mask: Option<&Path>) -> Result<Option<Vec<bool>>> {
    let Some(path) = mask else {
        return Ok(None);
    };
    let (w, h, m) = read_mask(path)?;
    if (w, h) != (gt.width, gt.height) {
        return Err(Error::DimensionMismatch(w, h, gt.width, gt.height));
    }
    Ok(Some(m.iter().zip(&gt.valid).map(|(&a, &b)| a && b).collect()))
}

fn cmd_eval_flow(cfg: &RunConfig, out: &Path) -> std::result::Result<(), CliError> {
    let flow = read_flo(require(&cfg.paths.flow, "flow")?)?;
    let gt = read_flo(require(&cfg.paths.gt_flow, "gt_flow")?)?;
    let all: Vec<bool> = gt.valid.iter().zip(&flow.valid).map(|(&a, &b)| a && b).collect();
    let mut csv = String::from("metric,value\n");
    let _ = writeln!(csv, "epe,{}", epe(&flow, &gt, &all)?);
    let _ = writeln!(csv, "fl_all,{}", fl_outlier_rate(&flow, &gt, &all)?);
    for (name, path) in [("fl_fg", &cfg.paths.fg_mask), ("fl_bg", &cfg.paths.bg_mask)] {
        if let Some(mask) = region(&gt, path.as_deref())? {
            let mask: Vec<bool> = mask.iter().zip(&flow.valid).map(|(&a, &b)| a && b).collect();
            let _ = writeln!(csv, "{name},{}", fl_outlier_rate(&flow, &gt, &mask)?);
        }
    }
    write_text(out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> std::result::Result<(), CliError> {
    let img = read_pnm(require(&cfg.paths.ref_image, "ref_image")?)?;
    let pair = synth_pair(&img, &cfg.synth)?;
    create_dir(out)?;
    write_pnm(&pair.source, out.join("source.pgm"))?;
    write_pnm(&pair.target, out.join("target.pgm"))?;
    let mut set = pair.correspondences;
    set.reference = "source.pgm".into();
    set.target = "target.pgm".into();
    write_correspondences(&set, out.join("gt.txt"))?;
    let mut queries = String::new();
    for t in &set.triplets {
        let _ = writeln!(queries, "{} {}", t.x.x, t.x.y);
    }
    write_text(&out.join("queries.txt"), &queries)?;
    write_flo(&pair.gt_flow, out.join("gt.flo"))?;
    let t = pair.transform;
    println!(
        "transform angle={} scale={} t=({}, {}); {} ground-truth correspondences",
        t.angle,
        t.scale,
        t.tx,
        t.ty,
        set.triplets.len()
    );
    Ok(())
}

fn cmd_match3d(cfg: &RunConfig, out: &Path) -> std::result::Result<(), CliError> {
    let reference = read_voxel_grid(require(&cfg.paths.ref_volume, "ref_volume")?)?;
    let target = match &cfg.paths.tgt_volume {
        Some(p) => read_voxel_grid(p)?,
        None => reference.clone(),
    };
    let v = &cfg.volume;
    let edge = cfg.match3d.subvolume_edge;
    let desc = |grid, blocks| OccupancyDescriptor {
        grid,
        subvolume_edge: edge,
        blocks,
        samples: v.block_samples,
        head: None,
    };
    let ref_deep = desc(&reference, v.deep_blocks).describe(v.ref_center);
    let ref_shallow = desc(&reference, v.shallow_blocks).describe(v.ref_center);
    let r = match_3d(
        &ref_deep,
        &ref_shallow,
        &desc(&target, v.deep_blocks),
        &desc(&target, v.shallow_blocks),
        v.region_center,
        &cfg.match3d,
    )?;
    let xyz = |p: [f64; 3]| format!("{} {} {}", p[0], p[1], p[2]);
    let mut text = String::new();
    let _ = writeln!(text, "coarse_candidates {}", r.coarse_candidates);
    let _ = writeln!(text, "coarse_center {}", xyz(r.coarse_center));
    let _ = writeln!(text, "coarse_distance {}", r.coarse_distance);
    let _ = writeln!(text, "fine_candidates {}", r.fine_candidates);
    let _ = writeln!(text, "refined_center {}", xyz(r.refined_center));
    let _ = writeln!(text, "fine_distance {}", r.fine_distance);
    let _ = writeln!(text, "offset {}", xyz(r.offset));
    write_text(out, &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_export_features(cfg: &RunConfig, out: &Path) -> std::result::Result<(), CliError> {
    let img = read_pnm(require(&cfg.paths.ref_image, "ref_image")?)?;
    let levels = cfg.level_configs();
    let base = compute_base_pyramid(&img, &levels)?;
    let heads = match &cfg.paths.heads {
        Some(p) => Some(read_heads(p)?),
        None => None,
    };
    create_dir(out)?;
    for (map, level) in base.iter().zip(&levels) {
        let map = match &heads {
            Some(hs) => {
                let head = hs
                    .iter()
                    .find(|h| h.level_id == level.level_id)
                    .ok_or_else(|| Error::InvalidConfig(format!("no head for level {}", level.level_id)))?;
                apply_head(map, head)?
            }
            None => map.clone(),
        };
        let path = out.join(format!("level_{}.hfm", level.level_id));
        export_feature_map(&map, &path)?;
        println!("{}: {}x{}x{}", path.display(), map.width, map.height, map.dim);
    }
    Ok(())
}
