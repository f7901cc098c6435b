//! End-to-end pipeline: rectify, optionally reproject onto the sphere,
//! match, triangulate, merge, and report. Also the flat key-value run
//! configuration used by the command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{cloud_to_cloud, completeness, CloudDistance};
use crate::geometry::CameraView;
use crate::image::GrayImage;
use crate::io;
use crate::matcher::{hierarchical_match, DispSpace, DisparityMap, SgmParams};
use crate::rectify::{rectify_pair, Extents, RectifiedPair};
use crate::spherical::{spherical_warp, SphericalGrid, SphericalImage};
use crate::triangulate::{
    frame_disparity_cloud, read_ply, spherical_disparity_cloud, write_ply, PointCloud,
    StereoGeometry, DEFAULT_MAX_DEPTH_M,
};

/// Which reconstruction(s) to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PipelineMode {
    Frame,
    Spherical,
    #[default]
    Both,
}

impl PipelineMode {
    pub fn parse(s: &str) -> Result<PipelineMode> {
        match s {
            "frame" => Ok(PipelineMode::Frame),
            "spherical" => Ok(PipelineMode::Spherical),
            "both" => Ok(PipelineMode::Both),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected frame|spherical|both)"
            ))),
        }
    }

    pub fn wants_frame(&self) -> bool {
        matches!(self, PipelineMode::Frame | PipelineMode::Both)
    }

    pub fn wants_spherical(&self) -> bool {
        matches!(self, PipelineMode::Spherical | PipelineMode::Both)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PipelineMode::Frame => "frame",
            PipelineMode::Spherical => "spherical",
            PipelineMode::Both => "both",
        }
    }
}

/// Everything needed to process one pair in memory.
#[derive(Debug, Clone)]
pub struct PairOptions {
    pub mode: PipelineMode,
    pub sgm: SgmParams,
    pub extents: Extents,
    /// Scene depth bounds driving the disparity search range, meters.
    pub z_min: f64,
    pub z_max: f64,
    /// Extra disparity slack on both range ends, pixels.
    pub range_margin: i32,
    /// Depth cap for triangulation.
    pub max_depth_m: f64,
    /// Spherical scale parameter; `None` matches the rectified resolution.
    pub spherical_scale: Option<f64>,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            mode: PipelineMode::Both,
            sgm: SgmParams::default(),
            extents: Extents::Fixed,
            z_min: 5.0,
            z_max: 50.0,
            range_margin: 4,
            max_depth_m: DEFAULT_MAX_DEPTH_M,
            spherical_scale: None,
        }
    }
}

/// Disparity search range from scene depth bounds: `d = b f / Z` evaluated
/// at both ends, floored/ceiled, widened by `margin`, never negative.
pub fn derive_disparity_range(
    geom: &StereoGeometry,
    z_min: f64,
    z_max: f64,
    margin: i32,
) -> Result<(i32, i32)> {
    if !(z_min > 0.0 && z_max > z_min && z_max.is_finite()) {
        return Err(Error::InvalidDepthBounds { z_min, z_max });
    }
    let bf = geom.baseline_m * geom.intrinsics.focal_px;
    let d_min = ((bf / z_max).floor() as i32 - margin).max(0);
    let d_max = (bf / z_min).ceil() as i32 + margin;
    Ok((d_min, d_max))
}

/// Shrink a frame-space search range for the spherical image: spherical
/// columns are never coarser than rectified columns at the grid center and
/// compress by `cos^2(phi) cos(lambda)` toward the borders.
pub fn spherical_range(frame_range: (i32, i32), grid: &SphericalGrid, focal_px: f64) -> (i32, i32) {
    let squeeze = grid.phi_extent.cos().powi(2) * grid.lambda_extent.cos();
    let ratio = grid.pixels_per_radian() / focal_px;
    let d_min = ((frame_range.0 as f64) * squeeze * ratio).floor().max(0.0) as i32;
    let d_max = ((frame_range.1 as f64) * ratio).ceil() as i32;
    (d_min, d_max)
}

/// Result of one reconstruction mode on one pair.
pub struct ModeArtifacts {
    pub disparity: DisparityMap,
    pub cloud: PointCloud,
    pub geometry: StereoGeometry,
}

/// Spherical-mode extras: the warped images and the shared grid.
pub struct SphericalArtifacts {
    pub left: SphericalImage,
    pub right: SphericalImage,
    pub result: ModeArtifacts,
}

/// Everything produced for one stereo pair.
pub struct PairArtifacts {
    pub rectified: RectifiedPair,
    pub frame: Option<ModeArtifacts>,
    pub spherical: Option<SphericalArtifacts>,
}

/// Run rectification, matching, and triangulation for one pair, entirely in
/// memory.
pub fn process_pair(
    image_l: &GrayImage,
    image_r: &GrayImage,
    view_l: &CameraView,
    view_r: &CameraView,
    opts: &PairOptions,
) -> Result<PairArtifacts> {
    let rectified = rectify_pair(image_l, image_r, view_l, view_r, opts.extents)?;
    let base_geom = StereoGeometry {
        baseline_m: rectified.frame.baseline_m,
        intrinsics: rectified.homographies.intrinsics,
        frame: rectified.frame,
        left_center: view_l.pose.center,
        grid: None,
        max_depth_m: opts.max_depth_m,
    };
    let frame_range = derive_disparity_range(&base_geom, opts.z_min, opts.z_max, opts.range_margin)?;

    let frame = if opts.mode.wants_frame() {
        let disparity = hierarchical_match(
            &rectified.left,
            &rectified.right,
            &rectified.left_mask,
            &rectified.right_mask,
            frame_range.0,
            frame_range.1,
            &opts.sgm,
            DispSpace::Frame,
        )?;
        let cloud = frame_disparity_cloud(&disparity, &base_geom, Some(&rectified.left))?;
        Some(ModeArtifacts {
            disparity,
            cloud,
            geometry: base_geom.clone(),
        })
    } else {
        None
    };

    let spherical = if opts.mode.wants_spherical() {
        let intr = rectified.homographies.intrinsics;
        let grid = SphericalGrid::for_rectified(&intr, opts.spherical_scale)?;
        let left = spherical_warp(&rectified.left, &rectified.left_mask, &intr, &grid);
        let right = spherical_warp(&rectified.right, &rectified.right_mask, &intr, &grid);
        let (ds_min, ds_max) = spherical_range(frame_range, &grid, intr.focal_px);
        let disparity = hierarchical_match(
            &left.pixels,
            &right.pixels,
            &left.mask,
            &right.mask,
            ds_min,
            ds_max,
            &opts.sgm,
            DispSpace::Spherical,
        )?;
        let geometry = StereoGeometry {
            grid: Some(grid),
            ..base_geom.clone()
        };
        let cloud = spherical_disparity_cloud(&disparity, &geometry, Some(&left.pixels))?;
        Some(SphericalArtifacts {
            left,
            right,
            result: ModeArtifacts {
                disparity,
                cloud,
                geometry,
            },
        })
    } else {
        None
    };

    Ok(PairArtifacts {
        rectified,
        frame,
        spherical,
    })
}

// ------------------------------------------------------------- run config

/// One stereo pair in the run configuration.
#[derive(Debug, Clone)]
pub struct PairInput {
    pub left: PathBuf,
    pub right: PathBuf,
    pub cameras: PathBuf,
}

/// Parsed flat key-value run configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub pairs: Vec<PairInput>,
    pub out_dir: PathBuf,
    pub opts: PairOptions,
    pub reference_cloud: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pairs: Vec::new(),
            out_dir: PathBuf::from("out"),
            opts: PairOptions::default(),
            reference_cloud: None,
            jobs: 1,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

/// Apply one `key = value` setting onto matcher parameters. Accepts both
/// bare keys (`p1`) and prefixed ones (`sgm.p1`).
pub fn apply_sgm_key(sgm: &mut SgmParams, key: &str, value: &str) -> Result<bool> {
    let key = key.strip_prefix("sgm.").unwrap_or(key);
    match key {
        "p1" => sgm.p1 = parse_num(key, value)?,
        "p2" => sgm.p2 = parse_num(key, value)?,
        "paths" => sgm.num_paths = parse_num(key, value)?,
        "census" => {
            let (w, h) = value
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("census window '{value}' is not WxH")))?;
            sgm.census_window = (parse_num(key, w)?, parse_num(key, h)?);
        }
        "lr_threshold" => sgm.lr_threshold = parse_num(key, value)?,
        "uniqueness" => sgm.uniqueness_ratio = parse_num(key, value)?,
        "levels" => {
            sgm.pyramid_levels = if value == "auto" {
                None
            } else {
                Some(parse_num(key, value)?)
            };
        }
        "margin" => sgm.fine_margin = parse_num(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl PipelineConfig {
    /// Parse the flat `key = value` format ('#' starts a comment).
    pub fn parse_str(text: &str) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        let mut pairs: std::collections::BTreeMap<usize, (Option<PathBuf>, Option<PathBuf>, Option<PathBuf>)> =
            Default::default();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());

            if let Some(rest) = key.strip_prefix("pair.") {
                let (idx, field) = rest.split_once('.').ok_or_else(|| {
                    Error::Config(format!("bad pair key '{key}' (want pair.N.left)"))
                })?;
                let idx: usize = parse_num(key, idx)?;
                let entry = pairs.entry(idx).or_default();
                match field {
                    "left" => entry.0 = Some(PathBuf::from(value)),
                    "right" => entry.1 = Some(PathBuf::from(value)),
                    "cameras" => entry.2 = Some(PathBuf::from(value)),
                    other => {
                        return Err(Error::Config(format!("unknown pair field '{other}'")))
                    }
                }
                continue;
            }
            if apply_sgm_key(&mut cfg.opts.sgm, key, value)? {
                continue;
            }
            match key {
                "mode" => cfg.opts.mode = PipelineMode::parse(value)?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "z_min" => cfg.opts.z_min = parse_num(key, value)?,
                "z_max" => cfg.opts.z_max = parse_num(key, value)?,
                "range_margin" => cfg.opts.range_margin = parse_num(key, value)?,
                "max_depth_m" => cfg.opts.max_depth_m = parse_num(key, value)?,
                "extents" => {
                    cfg.opts.extents = match value {
                        "fixed" => Extents::Fixed,
                        "bbox" => Extents::BoundingBox,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown extents '{other}' (expected fixed|bbox)"
                            )))
                        }
                    }
                }
                "spherical_scale" => {
                    cfg.opts.spherical_scale = if value == "auto" {
                        None
                    } else {
                        Some(parse_num(key, value)?)
                    };
                }
                "reference_cloud" => cfg.reference_cloud = Some(PathBuf::from(value)),
                "jobs" => cfg.jobs = parse_num(key, value)?,
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }

        for (idx, (l, r, c)) in pairs {
            match (l, r, c) {
                (Some(left), Some(right), Some(cameras)) => cfg.pairs.push(PairInput {
                    left,
                    right,
                    cameras,
                }),
                _ => {
                    return Err(Error::Config(format!(
                        "pair.{idx} must define left, right, and cameras"
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// All config keys with their default values, as parseable text.
    pub fn defaults_text() -> String {
        let d = PipelineConfig::default();
        let sgm = d.opts.sgm;
        let mut s = String::new();
        let _ = writeln!(s, "# reconstruction run configuration");
        let _ = writeln!(s, "mode = {}", d.opts.mode.as_str());
        let _ = writeln!(s, "out_dir = {}", d.out_dir.display());
        let _ = writeln!(s, "z_min = {}", d.opts.z_min);
        let _ = writeln!(s, "z_max = {}", d.opts.z_max);
        let _ = writeln!(s, "range_margin = {}", d.opts.range_margin);
        let _ = writeln!(s, "max_depth_m = {}", d.opts.max_depth_m);
        let _ = writeln!(s, "extents = fixed          # fixed|bbox");
        let _ = writeln!(s, "spherical_scale = auto   # pixels per full turn, or auto");
        let _ = writeln!(s, "jobs = {}", d.jobs);
        let _ = writeln!(s, "# reference_cloud = path/to/reference.ply");
        let _ = writeln!(s, "sgm.p1 = {}", sgm.p1);
        let _ = writeln!(s, "sgm.p2 = {}", sgm.p2);
        let _ = writeln!(s, "sgm.paths = {}", sgm.num_paths);
        let _ = writeln!(s, "sgm.census = {}x{}", sgm.census_window.0, sgm.census_window.1);
        let _ = writeln!(s, "sgm.lr_threshold = {}", sgm.lr_threshold);
        let _ = writeln!(s, "sgm.uniqueness = {}", sgm.uniqueness_ratio);
        let _ = writeln!(s, "sgm.levels = auto");
        let _ = writeln!(s, "sgm.margin = {}", sgm.fine_margin);
        let _ = writeln!(s, "# pair.0.left = left.png");
        let _ = writeln!(s, "# pair.0.right = right.png");
        let _ = writeln!(s, "# pair.0.cameras = cams.json");
        s
    }

    /// Check input files and numeric constraints before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Config("no pairs configured".into()));
        }
        for (i, pair) in self.pairs.iter().enumerate() {
            for (what, path) in [
                ("left image", &pair.left),
                ("right image", &pair.right),
                ("cameras file", &pair.cameras),
            ] {
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "pair {i}: {what} does not exist: {}",
                        path.display()
                    )));
                }
            }
        }
        if let Some(reference) = &self.reference_cloud {
            if !reference.is_file() {
                return Err(Error::Config(format!(
                    "reference cloud does not exist: {}",
                    reference.display()
                )));
            }
        }
        if !(self.opts.z_min > 0.0 && self.opts.z_max > self.opts.z_min) {
            return Err(Error::InvalidDepthBounds {
                z_min: self.opts.z_min,
                z_max: self.opts.z_max,
            });
        }
        self.opts.sgm.validate()?;
        Ok(())
    }
}

// ---------------------------------------------------------------- runner

/// Per-pair entry in the machine-readable run summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSummary {
    pub index: usize,
    pub frame_points: Option<usize>,
    pub spherical_points: Option<usize>,
    /// Spherical-over-frame completeness gain, mode `both` only.
    pub completeness_gain_pct: Option<f64>,
}

/// Machine-readable run summary (timings go to stderr, not in here, so two
/// identical runs produce identical files).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub pairs: Vec<PairSummary>,
    pub failed_pairs: Vec<usize>,
    pub merged_frame_points: Option<usize>,
    pub merged_spherical_points: Option<usize>,
    pub merged_completeness_gain_pct: Option<f64>,
    pub frame_vs_reference: Option<CloudDistance>,
    pub spherical_vs_reference: Option<CloudDistance>,
}

fn write_pair_outputs(dir: &Path, arts: &PairArtifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::save_gray_png(&arts.rectified.left, &dir.join("rect_left.png"))?;
    io::save_gray_png(&arts.rectified.right, &dir.join("rect_right.png"))?;
    io::save_mask_png(&arts.rectified.left_mask, &dir.join("rect_left_mask.png"))?;
    io::save_mask_png(&arts.rectified.right_mask, &dir.join("rect_right_mask.png"))?;

    let grid = arts.spherical.as_ref().and_then(|s| s.result.geometry.grid);
    let geom_src = arts
        .frame
        .as_ref()
        .map(|f| &f.geometry)
        .or(arts.spherical.as_ref().map(|s| &s.result.geometry))
        .expect("at least one mode ran");
    let geom_json = io::GeomJson::new(
        &arts.rectified.frame,
        &arts.rectified.homographies,
        geom_src.left_center,
        grid.as_ref(),
        geom_src.max_depth_m,
    );
    io::write_json(&dir.join("geom.json"), &geom_json)?;

    if let Some(frame) = &arts.frame {
        io::write_disparity_pfm(&frame.disparity, &dir.join("disp_frame.pfm"))?;
        io::save_gray_png(
            &io::disparity_visualization(&frame.disparity),
            &dir.join("disp_frame.png"),
        )?;
        write_ply(&frame.cloud, &dir.join("cloud_frame.ply"))?;
    }
    if let Some(sph) = &arts.spherical {
        io::save_gray_png(&sph.left.pixels, &dir.join("sph_left.png"))?;
        io::save_gray_png(&sph.right.pixels, &dir.join("sph_right.png"))?;
        io::save_mask_png(&sph.left.mask, &dir.join("sph_left_mask.png"))?;
        io::save_mask_png(&sph.right.mask, &dir.join("sph_right_mask.png"))?;
        io::write_disparity_pfm(&sph.result.disparity, &dir.join("disp_spherical.pfm"))?;
        io::save_gray_png(
            &io::disparity_visualization(&sph.result.disparity),
            &dir.join("disp_spherical.png"),
        )?;
        write_ply(&sph.result.cloud, &dir.join("cloud_spherical.ply"))?;
    }
    Ok(())
}

/// Run the full pipeline over every configured pair and write all artifacts
/// under the output directory. Per-pair failures are logged and skipped; the
/// run fails only when nothing succeeds.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;

    let process_one = |(index, pair): (usize, &PairInput)| -> Result<PairArtifacts> {
        let start = Instant::now();
        let image_l = io::load_gray_png(&pair.left)?;
        let image_r = io::load_gray_png(&pair.right)?;
        let (view_l, view_r) = io::read_cameras(&pair.cameras)?;
        let arts = process_pair(&image_l, &image_r, &view_l, &view_r, &config.opts)?;
        write_pair_outputs(&config.out_dir.join(format!("pair_{index:03}")), &arts)?;
        eprintln!(
            "[pair {index}] done in {:.2}s (frame: {} pts, spherical: {} pts)",
            start.elapsed().as_secs_f64(),
            arts.frame.as_ref().map_or(0, |f| f.cloud.len()),
            arts.spherical.as_ref().map_or(0, |s| s.result.cloud.len()),
        );
        Ok(arts)
    };

    let indexed: Vec<(usize, &PairInput)> = config.pairs.iter().enumerate().collect();
    let results: Vec<Result<PairArtifacts>> = if config.jobs > 1 {
        indexed.into_par_iter().map(process_one).collect()
    } else {
        indexed.into_iter().map(process_one).collect()
    };

    let mut pairs = Vec::new();
    let mut failed = Vec::new();
    let mut merged_frame = PointCloud::default();
    let mut merged_sph = PointCloud::default();
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Err(e) => {
                eprintln!("[pair {index}] FAILED: {e}");
                failed.push(index);
            }
            Ok(arts) => {
                let frame_points = arts.frame.as_ref().map(|f| f.cloud.len());
                let sph_points = arts.spherical.as_ref().map(|s| s.result.cloud.len());
                let gain = match (&arts.spherical, &arts.frame) {
                    (Some(s), Some(f)) => completeness(&s.result.cloud, &f.cloud).gain_pct,
                    _ => None,
                };
                if let Some(f) = &arts.frame {
                    merged_frame.extend(&f.cloud);
                }
                if let Some(s) = &arts.spherical {
                    merged_sph.extend(&s.result.cloud);
                }
                pairs.push(PairSummary {
                    index,
                    frame_points,
                    spherical_points: sph_points,
                    completeness_gain_pct: gain,
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config("all pairs failed".into()));
    }

    let wants_frame = config.opts.mode.wants_frame();
    let wants_sph = config.opts.mode.wants_spherical();
    if wants_frame {
        write_ply(&merged_frame, &config.out_dir.join("merged_frame.ply"))?;
    }
    if wants_sph {
        write_ply(&merged_sph, &config.out_dir.join("merged_spherical.ply"))?;
    }

    let reference = match &config.reference_cloud {
        Some(path) => Some(read_ply(path)?),
        None => None,
    };
    let eval_against = |cloud: &PointCloud| -> Result<Option<CloudDistance>> {
        match &reference {
            Some(r) if !cloud.is_empty() => Ok(Some(cloud_to_cloud(cloud, r, None)?)),
            _ => Ok(None),
        }
    };

    let summary = RunSummary {
        mode: config.opts.mode.as_str().to_string(),
        pairs,
        failed_pairs: failed,
        merged_frame_points: wants_frame.then(|| merged_frame.len()),
        merged_spherical_points: wants_sph.then(|| merged_sph.len()),
        merged_completeness_gain_pct: (wants_frame && wants_sph)
            .then(|| completeness(&merged_sph, &merged_frame).gain_pct)
            .flatten(),
        frame_vs_reference: if wants_frame { eval_against(&merged_frame)? } else { None },
        spherical_vs_reference: if wants_sph { eval_against(&merged_sph)? } else { None },
    };
    io::write_json(&config.out_dir.join("report.json"), &summary)?;
    Ok(summary)
}
