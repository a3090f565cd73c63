//! Command-line front end. Every command writes a `manifest.json` into its
//! output directory before running and finalizes it afterwards.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fitlab::{
    ablation_csv, ablation_suite, catalog, lambda_sweep, load_scenario, run_scenario, sweep_csv, Arm, Scenario, CATALOG,
};
use crate::infogeo::diagnose;
use crate::io;
use crate::render::{psnr, render_image};
use crate::scene::{make_full_design, make_trajectory_design, Camera, SceneDocument, TrajectoryPath};

#[derive(Debug, Parser)]
#[command(name = "soflab", version, about = "Identifiability laboratory for time-varying splat appearance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fisher-information diagnostics of a scene under an observation design.
    Diagnose(DiagnoseArgs),
    /// Fit one or more arms of a scenario.
    Fit(FitArgs),
    /// Experiment suites: every catalog scenario, the ablation table or a λ sweep.
    Suite(SuiteArgs),
    /// Render one image of a scene (optionally with fitted coefficients).
    Render(RenderArgs),
    /// Print a built-in scenario as JSON (the reference config format).
    Scenario {
        /// One of: static, taillight-sof, occlusion-gap, relative-statics.
        name: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignChoice {
    Full,
    Circular,
    Linear,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    /// Scene document (JSON) as written by `fit` (scene.json).
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_enum, default_value = "circular")]
    pub design: DesignChoice,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    /// Timesteps of the design.
    #[arg(long, default_value_t = 64)]
    pub timesteps: usize,
    /// Directions per timestep of the full design.
    #[arg(long, default_value_t = 12)]
    pub directions: usize,
    /// Camera distance from the scene centroid.
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    /// Recorded in the manifest; diagnostics are deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Catalog name or path to a scenario JSON file.
    #[arg(long, default_value = "taillight-sof")]
    pub scenario: String,
    /// Arm to fit (naive, naive+tv, static, opg, opg+tv); repeatable.
    /// Defaults to the scenario's arms.
    #[arg(long)]
    pub arm: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the scenario's noise level.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Overrides the scenario's TV weight.
    #[arg(long)]
    pub tv_lambda: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct SuiteSelect {
    /// Every catalog scenario with all arms.
    #[arg(long)]
    pub all: bool,
    /// Ablation table on the reference scenario.
    #[arg(long)]
    pub ablation: bool,
    /// OPG+TV fits over the `--lambda` values.
    #[arg(long)]
    pub lambda_sweep: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SuiteArgs {
    #[command(flatten)]
    pub select: SuiteSelect,
    /// λ values of the sweep (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0])]
    pub lambda: Vec<f64>,
    /// Scenario of the λ sweep.
    #[arg(long, default_value = "taillight-sof")]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    /// Scene document (JSON).
    #[arg(long)]
    pub scene: PathBuf,
    /// Fit document whose θ replaces the scene's appearance.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Camera centre and look-at target: `cx,cy,cz,tx,ty,tz`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub pose: Vec<f64>,
    #[arg(long)]
    pub time: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub started: String,
    pub finished: Option<String>,
    pub status: String,
    pub outputs: Vec<ArtifactEntry>,
}

impl RunManifest {
    fn begin(command: &str, config: serde_json::Value, seed: u64, dir: &Path) -> Result<Self> {
        let m = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seed,
            started: chrono::Utc::now().to_rfc3339(),
            finished: None,
            status: "running".into(),
            outputs: Vec::new(),
        };
        io::write_json(&dir.join("manifest.json"), &m)?;
        Ok(m)
    }

    fn finish(mut self, dir: &Path, outputs: &[PathBuf], outcome: &Result<()>) -> Result<()> {
        self.finished = Some(chrono::Utc::now().to_rfc3339());
        self.status = match outcome {
            Ok(()) => "ok".into(),
            Err(e) => format!("error: {e}"),
        };
        for p in outputs {
            let rel = p.strip_prefix(dir).unwrap_or(p);
            self.outputs.push(ArtifactEntry {
                path: rel.display().to_string(),
                sha256: io::sha256_file(p)?,
            });
        }
        io::write_json(&dir.join("manifest.json"), &self)
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Runs `body` between manifest creation and finalization.
fn with_manifest(
    command: &str,
    config: serde_json::Value,
    seed: u64,
    dir: &Path,
    body: impl FnOnce(&mut Vec<PathBuf>) -> Result<()>,
) -> Result<()> {
    let manifest = RunManifest::begin(command, config, seed, dir)?;
    let mut outputs = Vec::new();
    let outcome = body(&mut outputs);
    manifest.finish(dir, &outputs, &outcome)?;
    outcome
}

fn write(dir: &Path, name: &str, bytes: &[u8], outputs: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    io::write_atomic(&p, bytes)?;
    outputs.push(p);
    Ok(())
}

fn read_scene(path: &Path) -> Result<SceneDocument> {
    if !path.exists() {
        return Err(LabError::config("scene", format!("scene file not found: {}", path.display())));
    }
    let text = io::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| LabError::config("scene", format!("{}: {e}", path.display())))
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let doc = read_scene(&args.scene)?;
    let scene = doc.scene;
    let rig = crate::fitlab::catalog("taillight-sof")?.rig;
    let c = scene.centroid()?;
    let centroid = [c.x, c.y, c.z];
    let design = match args.design {
        DesignChoice::Full => make_full_design(scene.horizon, args.timesteps, args.directions, centroid, args.radius, &rig)?,
        DesignChoice::Circular => {
            let path = TrajectoryPath::Circular {
                center: centroid,
                radius: args.radius,
                height: 1.0,
                undulation: 0.6,
                undulation_cycles: 2.0,
                revolutions: 1.0,
            };
            make_trajectory_design(scene.horizon, 1, args.timesteps, path, &rig, None)?
        }
        DesignChoice::Linear => {
            let path = TrajectoryPath::Linear {
                start: [c.x - 0.5 * args.radius, c.y - args.radius, 1.0],
                end: [c.x + 0.5 * args.radius, c.y - args.radius, 1.0],
                target: centroid,
            };
            make_trajectory_design(scene.horizon, 1, args.timesteps, path, &rig, None)?
        }
    };
    with_manifest("diagnose", to_value(args), args.seed, &args.out, |out| {
        let report = diagnose(&scene, &design, args.sigma)?;
        write(&args.out, "info.json", &json_bytes(&report)?, out)?;
        write(&args.out, "spectra.csv", report.spectra_csv()?.as_bytes(), out)?;
        println!(
            "rows {}  rank {}  collapse ratio {:.3e}  cross-block ratio {:.3e}  divergent {}",
            report.rows, report.joint_rank, report.collapse_ratio, report.cross_block_ratio, report.divergent
        );
        Ok(())
    })
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| LabError::Numeric(format!("json: {e}")))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn resolve_fit_scenario(args: &FitArgs) -> Result<Scenario> {
    let mut sc = load_scenario(&args.scenario)?;
    if !args.arm.is_empty() {
        sc.arms = args.arm.iter().map(|a| a.parse()).collect::<Result<Vec<Arm>>>()?;
    }
    if let Some(s) = args.sigma {
        sc.sigma = s;
    }
    if let Some(l) = args.tv_lambda {
        sc.tv_lambda = l;
    }
    sc.validate()?;
    Ok(sc)
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let sc = resolve_fit_scenario(args)?;
    with_manifest("fit", to_value(&sc), args.seed, &args.out, |out| {
        let run = run_scenario(&sc, args.seed)?;
        out.extend(run.write(&sc, &args.out)?);
        print_metrics(&run.metrics);
        Ok(())
    })
}

fn print_metrics(m: &crate::fitlab::MetricsTable) {
    println!("{} (seed {})", m.scenario, m.seed);
    for r in &m.rows {
        println!(
            "  {:<9} spatial err {:>10.3e}  train {:>6.2} dB  interp {:>6.2} dB  novel {:>6.2} dB  divergent {}  {}",
            r.arm.name(),
            r.spatial_error,
            r.train_psnr,
            r.interp_psnr,
            r.novel_psnr,
            r.divergent,
            r.status
        );
    }
}

pub fn cmd_suite(args: &SuiteArgs) -> Result<()> {
    if args.select.lambda_sweep && args.lambda.len() < 2 {
        return Err(LabError::config("lambda", "a sweep needs at least 2 λ values"));
    }
    with_manifest("suite", to_value(args), args.seed, &args.out, |out| {
        if args.select.all {
            for name in CATALOG {
                let sc = catalog(name)?;
                let dir = args.out.join(name);
                let run = run_scenario(&sc, args.seed)?;
                out.extend(run.write(&sc, &dir)?);
                print_metrics(&run.metrics);
            }
        }
        if args.select.ablation {
            let rows = ablation_suite(args.seed)?;
            let table = ablation_csv(&rows)?;
            write(&args.out, "ablation.csv", table.as_bytes(), out)?;
            print!("{table}");
        }
        if args.select.lambda_sweep {
            let sc = load_scenario(&args.scenario)?;
            let points = lambda_sweep(&sc, &args.lambda, args.seed)?;
            let table = sweep_csv(&points)?;
            write(&args.out, "lambda_sweep.csv", table.as_bytes(), out)?;
            print!("{table}");
        }
        Ok(())
    })
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    if args.pose.len() != 6 {
        return Err(LabError::config("pose", "expected cx,cy,cz,tx,ty,tz"));
    }
    let doc = read_scene(&args.scene)?;
    let rig = catalog("taillight-sof")?.rig;
    let p = &args.pose;
    let camera = Camera::look_at(
        nalgebra::Vector3::new(p[0], p[1], p[2]),
        nalgebra::Vector3::new(p[3], p[4], p[5]),
        rig.intrinsics,
    )?;
    with_manifest("render", to_value(args), args.seed, &args.out, |out| {
        let truth = render_image(&doc.scene, &camera, args.time)?;
        write(&args.out, "truth.ppm", &io::ppm_bytes(&truth), out)?;
        if let Some(fit_path) = &args.fit {
            if !fit_path.exists() {
                return Err(LabError::config("fit", format!("fit file not found: {}", fit_path.display())));
            }
            let fit: crate::opg::FitResult = serde_json::from_str(&io::read_to_string(fit_path)?)
                .map_err(|e| LabError::config("fit", format!("{}: {e}", fit_path.display())))?;
            let fitted = doc.scene.with_parameters(&fit.theta)?;
            let image = render_image(&fitted, &camera, args.time)?;
            write(&args.out, "render.ppm", &io::ppm_bytes(&image), out)?;
            let flat = |im: &crate::render::Image| im.pixels.iter().flatten().copied().collect::<Vec<f64>>();
            println!("PSNR vs ground truth: {:.3} dB", psnr(&flat(&truth), &flat(&image)));
        }
        Ok(())
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Suite(a) => cmd_suite(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Scenario { name } => {
            let sc = catalog(&name)?;
            print!("{}", String::from_utf8_lossy(&json_bytes(&sc)?));
            Ok(())
        }
    }
}
