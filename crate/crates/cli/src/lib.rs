//! Command implementations of the `depthprior` binary.

pub mod png;
pub mod report;
pub mod scene_dir;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use depthprior_core::config::RunConfig;
use depthprior_core::eval::{region_metrics, scaled_depth_metrics};
use depthprior_core::geometry::{bilinear_sample, compute_warp};
use depthprior_core::grad::{check_objective_gradients, check_point};
use depthprior_core::grid::{Image, ScalarGrid};
use depthprior_core::gridfile::{read_grid, write_grid, DType};
use depthprior_core::objective::{Ablation, LossTerm, Objective};
use depthprior_core::prior::{normal_matching_loss, normals_from_depth};
use depthprior_core::selfsup::{depth_inconsistency, photometric_map, self_mask};
use depthprior_core::synthetic::render_scene;
use depthprior_core::train::train;

use report::{join_floats, Report};
use scene_dir::{depth_arg, read_scene, write_depth, write_scene};

#[derive(Debug, Parser)]
#[command(
    name = "depthprior",
    version,
    about = "Depth objective toolkit: synthetic scenes, losses, gradient checks, toy training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic two-view scene into a directory of grid files.
    Synth(SynthArgs),
    /// Evaluate every loss term and the weighted total at given depths.
    InspectLoss(InspectArgs),
    /// Compare analytic gradients against central differences on a crop.
    Gradcheck(GradcheckArgs),
    /// Fit depth to a scene and score it against ground truth.
    Train(TrainArgs),
    /// Depth metrics of a prediction against ground truth.
    Eval(EvalArgs),
    /// Write a 16-bit PNG preview of a single-channel grid.
    ExportPng(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides `[run] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                RunConfig::load(path).with_context(|| format!("config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides `[scene] preset` (dynamic, static, two_plane).
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Scene directory.
    #[arg(long, value_name = "DIR")]
    pub scene: PathBuf,
    /// Depth of view a: a grid file or `gt`.
    #[arg(long, value_name = "FILE|gt", default_value = "gt")]
    pub depth_a: String,
    /// Depth of view b: a grid file or `gt`.
    #[arg(long, value_name = "FILE|gt", default_value = "gt")]
    pub depth_b: String,
    /// Objective variant; defaults to `[objective] ablation`.
    #[arg(long, value_parser = ["full", "no-drr", "no-lsr", "baseline"])]
    pub ablate: Option<String>,
    /// Also write per-pixel maps (photometric, depth_diff, self_mask, valid, gradients) here.
    #[arg(long, value_name = "DIR")]
    pub maps: Option<PathBuf>,
    /// Write the report to this file as well as stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Scene directory.
    #[arg(long, value_name = "DIR")]
    pub scene: PathBuf,
    /// Finite-difference step; defaults to `[gradcheck] step`.
    #[arg(long)]
    pub step: Option<f64>,
    /// Maximum relative error; defaults to `[gradcheck] tolerance`.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Denominator floor as a fraction of each term's largest gradient entry;
    /// defaults to `[gradcheck] floor`.
    #[arg(long)]
    pub floor: Option<f64>,
    /// Side of the center crop; defaults to `[gradcheck] crop`.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Objective variant whose total is checked.
    #[arg(long, value_parser = ["full", "no-drr", "no-lsr", "baseline"])]
    pub ablate: Option<String>,
    /// Corrupt the analytic gradients before comparing (self-test of the checker).
    #[arg(long)]
    pub inject_fault: bool,
    /// Write the report to this file as well as stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Scene directory.
    #[arg(long, value_name = "DIR")]
    pub scene: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Drop the ranking term.
    #[arg(long, group = "variant")]
    pub no_drr: bool,
    /// Drop the normal terms and restore edge-aware smoothness.
    #[arg(long, group = "variant")]
    pub no_lsr: bool,
    /// Two-view objective only.
    #[arg(long, group = "variant")]
    pub baseline: bool,
    /// Overrides `[optimizer] max_iters`.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Also write 16-bit PNG previews of the fitted depths.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted depth grid.
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    /// Ground-truth depth grid.
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    /// Binary dynamic-region mask; without it only the full image is reported.
    #[arg(long, value_name = "FILE")]
    pub mask: Option<PathBuf>,
    /// Ground truth beyond this depth is excluded.
    #[arg(long, default_value_t = 80.0)]
    pub cap: f64,
    /// Write the report to this file as well as stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Single-channel grid file.
    #[arg(long, value_name = "FILE")]
    pub grid: PathBuf,
    /// PNG to write; the value range goes to `<out>.range.txt`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::InspectLoss(a) => inspect_loss(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::ExportPng(a) => export(&a),
    }
}

fn emit(report: &Report, out: Option<&Path>) -> Result<()> {
    print!("{}", report.to_text());
    if let Some(path) = out {
        report.write(path)?;
    }
    Ok(())
}

fn ablation_arg(name: Option<&str>) -> Option<Ablation> {
    name.and_then(Ablation::from_name)
}

pub fn synth(args: &SynthArgs) -> Result<ExitCode> {
    let mut cfg = args.config.load()?;
    if let Some(p) = &args.preset {
        cfg.scene.preset = depthprior_core::synthetic::ScenePreset::from_name(p)
            .with_context(|| format!("unknown preset `{p}` (dynamic, static, two_plane)"))?;
    }
    let scene_cfg = cfg.scene_config();
    let sample = render_scene(&scene_cfg)?;
    let written = write_scene(&args.out, &sample, cfg.seed, cfg.scene.preset.name())?;
    let config_path = args.out.join("config.txt");
    std::fs::write(&config_path, cfg.to_text())
        .with_context(|| format!("writing {}", config_path.display()))?;
    for p in written.iter().chain([&config_path]) {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn inspect_loss(args: &InspectArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let (sample, _) = read_scene(&args.scene)?;
    let depth_a = depth_arg(&args.depth_a, &sample.depth_a)?;
    let depth_b = depth_arg(&args.depth_b, &sample.depth_b)?;
    let ablation = ablation_arg(args.ablate.as_deref()).unwrap_or(cfg.ablation);
    let objective_cfg = cfg.objective_config(Some(ablation));
    let objective = Objective::new(&sample, &objective_cfg)?;
    let pose = sample.pose_ab;
    let loss = objective.report(&depth_a, &depth_b, &pose, objective_cfg.ranking.seed)?;

    let mut r = Report::new();
    r.push("ablation", ablation.name());
    for term in LossTerm::ALL {
        r.push(format!("term.{}", term.name()), loss.term(term));
        r.push(format!("weight.{}", term.name()), loss.weights.get(term));
    }
    r.push("total", loss.total);
    for w in &loss.warnings {
        r.push("warning", w);
    }
    if let Some(dir) = &args.maps {
        write_maps(dir, &sample, &depth_a, &depth_b, &cfg, &loss)?;
        r.push("maps", dir.display());
    }
    emit(&r, args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn write_maps(
    dir: &Path,
    sample: &depthprior_core::scene::SceneSample,
    depth_a: &ScalarGrid,
    depth_b: &ScalarGrid,
    cfg: &RunConfig,
    loss: &depthprior_core::objective::LossReport,
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let k = &sample.intrinsics;
    let flow = compute_warp(depth_a, &sample.pose_ab, k)?;
    let synthesized = Image::new(
        sample
            .image_b
            .channels()
            .iter()
            .map(|c| bilinear_sample(c, &flow))
            .collect(),
    )?;
    let photometric = photometric_map(&sample.image_a, &synthesized, &cfg.photometric)?;
    let (diff, valid) = depth_inconsistency(depth_a, depth_b, &sample.pose_ab, k)?;
    let maps = [
        ("photometric", photometric),
        ("self_mask", self_mask(&diff)),
        ("depth_diff", diff),
        ("valid", valid),
        ("grad_depth_a", loss.grad_depth_a.clone()),
        ("grad_depth_b", loss.grad_depth_b.clone()),
    ];
    for (name, grid) in &maps {
        let path = dir.join(format!("{name}.grid"));
        write_grid(&path, grid, DType::F64)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let (sample, _) = read_scene(&args.scene)?;
    let step = args.step.unwrap_or(cfg.gradcheck.step);
    let tolerance = args.tolerance.unwrap_or(cfg.gradcheck.tolerance);
    let floor = args.floor.unwrap_or(cfg.gradcheck.floor);
    let crop = args.crop.unwrap_or(cfg.gradcheck.crop);
    if !(step > 0.0 && tolerance > 0.0 && floor >= 0.0) || crop < 3 {
        bail!("gradcheck needs a positive step and tolerance, a nonnegative floor and a crop of at least 3");
    }
    let sample = sample.center_crop(crop)?;
    let ablation = ablation_arg(args.ablate.as_deref()).unwrap_or(cfg.ablation);
    let objective_cfg = cfg.objective_config(Some(ablation));
    let objective = Objective::new(&sample, &objective_cfg)?;
    let (depth_a, depth_b) = check_point(&objective, cfg.seed)?;
    let fault = |g: &mut [f64]| g.iter_mut().for_each(|v| *v = *v * 1.01 + 1e-3);
    let perturb: Option<&dyn Fn(&mut [f64])> = if args.inject_fault {
        Some(&fault)
    } else {
        None
    };
    let checks = check_objective_gradients(
        &objective,
        &depth_a,
        &depth_b,
        &sample.pose_ab,
        cfg.seed,
        step,
        floor,
        perturb,
    )?;

    let mut r = Report::new();
    r.push("crop", format!("{}x{}", sample.width(), sample.height()));
    r.push("step", step);
    r.push("tolerance", tolerance);
    r.push("floor", floor);
    r.push("variables", objective.variable_count());
    let mut failed = 0;
    for c in &checks {
        let pass = c.max_rel_error < tolerance;
        failed += usize::from(!pass);
        r.push(format!("{}.value", c.name), c.value);
        r.push(format!("{}.max_rel_error", c.name), c.max_rel_error);
        r.push(format!("{}.worst_variable", c.name), c.worst);
        r.push(
            format!("{}.status", c.name),
            if pass { "pass" } else { "fail" },
        );
    }
    r.push("failed", failed);
    emit(&r, args.out.as_deref())?;
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn train_cmd(args: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = args.config.load()?;
    if let Some(n) = args.iters {
        cfg.train.optimizer.max_iters = n;
    }
    let ablation = if args.no_drr {
        Ablation::NoDrr
    } else if args.no_lsr {
        Ablation::NoLsr
    } else if args.baseline {
        Ablation::Baseline
    } else {
        cfg.ablation
    };
    let (sample, _) = read_scene(&args.scene)?;
    let objective_cfg = cfg.objective_config(Some(ablation));
    let train_cfg = cfg.train_config();
    let result = train(&sample, &objective_cfg, &train_cfg)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_depth(&args.out.join("depth_a.grid"), &result.depth_a)?;
    write_depth(&args.out.join("depth_b.grid"), &result.depth_b)?;
    if args.png {
        png::export_png(&result.depth_a, &args.out.join("depth_a.png"))?;
        png::export_png(&result.depth_b, &args.out.join("depth_b.png"))?;
    }

    let mut history = String::new();
    for rec in &result.history {
        let terms: Vec<String> = LossTerm::ALL
            .iter()
            .map(|t| format!("{}={}", t.name(), rec.terms[t.index()]))
            .collect();
        history.push_str(&format!(
            "iteration={} total={} {}\n",
            rec.iteration,
            rec.total,
            terms.join(" ")
        ));
    }
    let history_path = args.out.join("history.txt");
    std::fs::write(&history_path, history)
        .with_context(|| format!("writing {}", history_path.display()))?;

    let mut r = Report::new();
    r.push("ablation", ablation.name());
    r.push("seed", cfg.seed);
    r.push(
        "iterations",
        result.history.last().map_or(0, |h| h.iteration),
    );
    r.push("converged", result.converged);
    r.push(
        "loss.initial",
        result.history.first().map_or(f64::NAN, |h| h.total),
    );
    r.push(
        "loss.final",
        result.history.last().map_or(f64::NAN, |h| h.total),
    );
    r.extend(result.metrics.key_values());
    let normals = normals_from_depth(&result.depth_a, &sample.intrinsics)?;
    r.push(
        "normal_error",
        normal_matching_loss(&normals, &sample.normals_a)?,
    );
    r.push("pose", join_floats(&result.pose.to_rows()));
    r.write(&args.out.join("metrics.txt"))?;
    let config_path = args.out.join("config.txt");
    std::fs::write(&config_path, cfg.to_text())
        .with_context(|| format!("writing {}", config_path.display()))?;
    print!("{}", r.to_text());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: &EvalArgs) -> Result<ExitCode> {
    let read = |p: &Path| read_grid(p).with_context(|| format!("cannot read {}", p.display()));
    let pred = read(&args.pred)?;
    let gt = read(&args.gt)?;
    let mut r = Report::new();
    r.push("cap", args.cap);
    match &args.mask {
        Some(m) => {
            let mask = read(m)?;
            let regions =
                region_metrics(&pred, &gt, &mask, None, args.cap).context("evaluating")?;
            r.extend(regions.key_values());
        }
        None => {
            eprintln!("notice: no dynamic mask given; reporting the full image only");
            let full = scaled_depth_metrics(&pred, &gt, None, args.cap).context("evaluating")?;
            r.push("scale", full.scale_applied);
            r.extend(full.key_values("full"));
        }
    }
    emit(&r, args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

pub fn export(args: &ExportArgs) -> Result<ExitCode> {
    let grid =
        read_grid(&args.grid).with_context(|| format!("cannot read {}", args.grid.display()))?;
    let (p, s) = png::export_png(&grid, &args.out)?;
    println!("wrote {}", p.display());
    println!("wrote {}", s.display());
    Ok(ExitCode::SUCCESS)
}
