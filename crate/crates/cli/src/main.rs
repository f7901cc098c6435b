//! Command-line driver: per-stage subcommands plus the full pipeline.
//!
//! Exit codes: 0 on success, 1 for validation errors (bad arguments or
//! missing/invalid inputs), 2 for runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use spherect::error::{Error, Result};
use spherect::evaluate::{cloud_to_cloud, completeness, EvalReport};
use spherect::io;
use spherect::matcher::{hierarchical_match, DispSpace, SgmParams};
use spherect::pipeline::{apply_sgm_key, run_pipeline, PipelineConfig, PipelineMode};
use spherect::rectify::{rectify_pair, Extents};
use spherect::spherical::{spherical_warp, SphericalGrid};
use spherect::synth::{make_oblique_pair, render_pair, SurfaceKind, SyntheticScene};
use spherect::triangulate::{
    frame_disparity_cloud, read_ply, spherical_disparity_cloud, write_ply,
};
use spherect::{Intrinsics, Mask};

#[derive(Parser)]
#[command(
    name = "spherect",
    version,
    about = "Stereo reconstruction with frame-based and spherical epipolar images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stereo pair with ground-truth depth and cloud
    Synth(SynthArgs),
    /// Epipolar-rectify a calibrated pair (planar, optionally spherical)
    Rectify(RectifyArgs),
    /// Dense-match an epipolar-aligned pair into a disparity map
    Match(MatchArgs),
    /// Triangulate a disparity map into a world point cloud
    Triangulate(TriangulateArgs),
    /// Compare a point cloud against a reference
    Eval(EvalArgs),
    /// Run the full multi-pair pipeline from a config file
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Surface: plane|ramp|steps|heightfield
    #[arg(long, default_value = "ramp")]
    scene: String,
    /// Convergence angle between the cameras, degrees
    #[arg(long, default_value_t = 0.0)]
    convergence: f64,
    /// Baseline, meters
    #[arg(long, default_value_t = 1.0)]
    baseline: f64,
    /// Near/far surface depth bounds, meters
    #[arg(long, default_value_t = 8.0)]
    z_near: f64,
    #[arg(long, default_value_t = 16.0)]
    z_far: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    /// Focal length, pixels
    #[arg(long, default_value_t = 800.0)]
    focal: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RectifyArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// JSON with the left and right camera parameters
    #[arg(long)]
    cameras: PathBuf,
    /// frame|spherical (spherical extends the frame outputs)
    #[arg(long, default_value = "frame")]
    mode: String,
    /// fixed|bbox output extents
    #[arg(long, default_value = "fixed")]
    extents: String,
    /// Spherical scale parameter (pixels per full turn); default matches
    /// the rectified center resolution
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    left_mask: Option<PathBuf>,
    #[arg(long)]
    right_mask: Option<PathBuf>,
    /// Disparity search range as min:max, pixels
    #[arg(long)]
    range: String,
    /// Key-value file with matcher parameters (p1, p2, census, ...)
    #[arg(long)]
    params: Option<PathBuf>,
    /// Space tag recorded for triangulation: frame|spherical
    #[arg(long, default_value = "frame")]
    space: String,
    /// Output PFM path; an 8-bit preview PNG is written next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TriangulateArgs {
    /// Disparity map (PFM, -inf marks invalid pixels)
    #[arg(long)]
    disp: PathBuf,
    /// Geometry sidecar written by `rectify`
    #[arg(long)]
    geom: PathBuf,
    /// Optional image for per-point gray colors
    #[arg(long)]
    colors: Option<PathBuf>,
    /// Override the space tag: frame|spherical (default: inferred from the
    /// disparity dimensions)
    #[arg(long)]
    space: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Cloud under test
    #[arg(long)]
    test: PathBuf,
    /// Reference cloud
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Ignore test points farther than this from the reference, meters
    #[arg(long)]
    max_dist: Option<f64>,
    /// Report JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, required_unless_present = "print_defaults")]
    config: Option<PathBuf>,
    /// Pair-level parallelism (overrides the config)
    #[arg(long)]
    jobs: Option<usize>,
    /// Print every config key with its default value and exit
    #[arg(long)]
    print_defaults: bool,
}

fn require_file(what: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} does not exist: {}",
            path.display()
        )))
    }
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let kind = SurfaceKind::parse(&args.scene)?;
    let scene = SyntheticScene::new(kind, args.z_near, args.z_far, args.seed)?;
    let intr = Intrinsics::new(args.focal, args.width, args.height)?;
    let (view_l, view_r) = make_oblique_pair(args.convergence, args.baseline, intr)?;
    let rendered = render_pair(&scene, &view_l, &view_r)?;

    std::fs::create_dir_all(&args.out)?;
    io::save_gray_png(&rendered.left, &args.out.join("left.png"))?;
    io::save_gray_png(&rendered.right, &args.out.join("right.png"))?;
    io::write_cameras(&args.out.join("cams.json"), &view_l, &view_r)?;
    io::write_pfm(&rendered.depth_left, &args.out.join("depth_left.pfm"))?;
    io::write_pfm(&rendered.depth_right, &args.out.join("depth_right.pfm"))?;
    write_ply(&rendered.cloud, &args.out.join("gt_cloud.ply"))?;
    eprintln!(
        "rendered {}x{} pair, gt cloud {} points -> {}",
        args.width,
        args.height,
        rendered.cloud.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_extents(s: &str) -> Result<Extents> {
    match s {
        "fixed" => Ok(Extents::Fixed),
        "bbox" => Ok(Extents::BoundingBox),
        other => Err(Error::Config(format!(
            "unknown extents '{other}' (expected fixed|bbox)"
        ))),
    }
}

fn run_rectify(args: &RectifyArgs) -> Result<()> {
    require_file("left image", &args.left)?;
    require_file("right image", &args.right)?;
    require_file("cameras file", &args.cameras)?;
    let mode = PipelineMode::parse(&args.mode)?;
    let extents = parse_extents(&args.extents)?;

    let image_l = io::load_gray_png(&args.left)?;
    let image_r = io::load_gray_png(&args.right)?;
    let (view_l, view_r) = io::read_cameras(&args.cameras)?;
    let rect = rectify_pair(&image_l, &image_r, &view_l, &view_r, extents)?;

    std::fs::create_dir_all(&args.out)?;
    io::save_gray_png(&rect.left, &args.out.join("rect_left.png"))?;
    io::save_gray_png(&rect.right, &args.out.join("rect_right.png"))?;
    io::save_mask_png(&rect.left_mask, &args.out.join("rect_left_mask.png"))?;
    io::save_mask_png(&rect.right_mask, &args.out.join("rect_right_mask.png"))?;

    let mut grid = None;
    if mode.wants_spherical() {
        let intr = rect.homographies.intrinsics;
        let g = SphericalGrid::for_rectified(&intr, args.scale)?;
        let sph_l = spherical_warp(&rect.left, &rect.left_mask, &intr, &g);
        let sph_r = spherical_warp(&rect.right, &rect.right_mask, &intr, &g);
        io::save_gray_png(&sph_l.pixels, &args.out.join("sph_left.png"))?;
        io::save_gray_png(&sph_r.pixels, &args.out.join("sph_right.png"))?;
        io::save_mask_png(&sph_l.mask, &args.out.join("sph_left_mask.png"))?;
        io::save_mask_png(&sph_r.mask, &args.out.join("sph_right_mask.png"))?;
        grid = Some(g);
    }

    let geom = io::GeomJson::new(
        &rect.frame,
        &rect.homographies,
        view_l.pose.center,
        grid.as_ref(),
        io::default_max_depth(),
    );
    io::write_json(&args.out.join("geom.json"), &geom)?;
    eprintln!(
        "rectified pair (baseline {:.4} m) -> {}",
        rect.frame.baseline_m,
        args.out.display()
    );
    Ok(())
}

fn parse_range(s: &str) -> Result<(i32, i32)> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("range '{s}' is not min:max")))?;
    let lo = lo
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad range minimum '{lo}'")))?;
    let hi = hi
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad range maximum '{hi}'")))?;
    Ok((lo, hi))
}

fn load_sgm_params(path: Option<&Path>) -> Result<SgmParams> {
    let mut sgm = SgmParams::default();
    let Some(path) = path else {
        return Ok(sgm);
    };
    require_file("params file", path)?;
    for (lineno, raw) in std::fs::read_to_string(path)?.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
        if !apply_sgm_key(&mut sgm, key.trim(), value.trim())? {
            return Err(Error::Config(format!("unknown matcher key '{}'", key.trim())));
        }
    }
    Ok(sgm)
}

fn run_match(args: &MatchArgs) -> Result<()> {
    require_file("left image", &args.left)?;
    require_file("right image", &args.right)?;
    let space = match args.space.as_str() {
        "frame" => DispSpace::Frame,
        "spherical" => DispSpace::Spherical,
        other => {
            return Err(Error::Config(format!(
                "unknown space '{other}' (expected frame|spherical)"
            )))
        }
    };
    let (d_min, d_max) = parse_range(&args.range)?;
    let sgm = load_sgm_params(args.params.as_deref())?;
    sgm.validate()?;

    let left = io::load_gray_png(&args.left)?;
    let right = io::load_gray_png(&args.right)?;
    let mask_l = match &args.left_mask {
        Some(p) => io::load_mask_png(p)?,
        None => Mask::all_valid(left.width(), left.height()),
    };
    let mask_r = match &args.right_mask {
        Some(p) => io::load_mask_png(p)?,
        None => Mask::all_valid(right.width(), right.height()),
    };

    let map = hierarchical_match(&left, &right, &mask_l, &mask_r, d_min, d_max, &sgm, space)?;
    io::write_disparity_pfm(&map, &args.out)?;
    io::save_gray_png(
        &io::disparity_visualization(&map),
        &args.out.with_extension("png"),
    )?;
    eprintln!(
        "matched {}x{}: {} valid disparities -> {}",
        map.width(),
        map.height(),
        map.valid_count(),
        args.out.display()
    );
    Ok(())
}

fn run_triangulate(args: &TriangulateArgs) -> Result<()> {
    require_file("disparity map", &args.disp)?;
    require_file("geometry sidecar", &args.geom)?;
    let geom_json: io::GeomJson = io::read_json(&args.geom)?;
    let geom = geom_json.to_geometry()?;

    // infer the space from the disparity dimensions unless overridden
    let probe = io::read_pfm(&args.disp)?;
    let space = match args.space.as_deref() {
        Some("frame") => DispSpace::Frame,
        Some("spherical") => DispSpace::Spherical,
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown space '{other}' (expected frame|spherical)"
            )))
        }
        None => match &geom.grid {
            Some(g) if probe.width() == g.out_w && probe.height() == g.out_h => {
                DispSpace::Spherical
            }
            _ => DispSpace::Frame,
        },
    };
    let disp = io::read_disparity_pfm(&args.disp, space)?;

    let colors = match &args.colors {
        Some(p) => {
            require_file("colors image", p)?;
            Some(io::load_gray_png(p)?)
        }
        None => None,
    };

    let cloud = match space {
        DispSpace::Frame => frame_disparity_cloud(&disp, &geom, colors.as_ref())?,
        DispSpace::Spherical => spherical_disparity_cloud(&disp, &geom, colors.as_ref())?,
    };
    write_ply(&cloud, &args.out)?;
    eprintln!("triangulated {} points -> {}", cloud.len(), args.out.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    require_file("test cloud", &args.test)?;
    require_file("reference cloud", &args.reference)?;
    let test = read_ply(&args.test)?;
    let reference = read_ply(&args.reference)?;
    let comp = completeness(&test, &reference);
    let dist = cloud_to_cloud(&test, &reference, args.max_dist)?;
    let report = EvalReport::new(comp, dist, args.max_dist);
    io::write_json(&args.out, &report)?;
    eprintln!(
        "{} vs {} points, mean {:.6} m, std {:.6} m ({} used) -> {}",
        report.count_a,
        report.count_b,
        report.mean_abs_dist,
        report.std_dist,
        report.points_used,
        args.out.display()
    );
    Ok(())
}

fn run_pipeline_cmd(args: &PipelineArgs) -> Result<()> {
    if args.print_defaults {
        print!("{}", PipelineConfig::defaults_text());
        return Ok(());
    }
    let config_path = args.config.as_ref().expect("clap enforces");
    require_file("config file", config_path)?;
    let mut config = PipelineConfig::from_file(config_path)?;
    if let Some(jobs) = args.jobs {
        config.jobs = jobs.max(1);
    }
    let summary = run_pipeline(&config)?;
    eprintln!(
        "pipeline done: {} pairs ok, {} failed -> {}",
        summary.pairs.len(),
        summary.failed_pairs.len(),
        config.out_dir.display()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Rectify(args) => run_rectify(args),
        Command::Match(args) => run_match(args),
        Command::Triangulate(args) => run_triangulate(args),
        Command::Eval(args) => run_eval(args),
        Command::Pipeline(args) => run_pipeline_cmd(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_validation() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
