//! Experiment orchestration: scenario catalog, fitting arms, metrics,
//! ablations and λ sweeps.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{TemporalKind, TemporalSpec};
use crate::error::{LabError, Result};
use crate::infogeo::InfoReport;
use crate::io;
use crate::jacobians::{jacobian_appearance, JacobianBlocks};
use crate::opg::{fit_naive, fit_stage1, fit_stage2, null_projector, purify, FitProblem, FitResult, StageSchedule, StageSolver};
use crate::regtv::{derivative_energy, max_course_swing, tv_penalty, window_energy, TvConfig};
use crate::render::{psnr, render_clean, render_design, render_image};
use crate::scene::{
    make_full_design, make_trajectory_design, synth_scene, AgentMotion, AgentRecipe, CameraRig, EventRecipe,
    EventShape, Intrinsics, ObservationDesign, PoseOffset, PrimitiveCloud, SceneDocument, SceneGraph, SceneRecipe,
    TrajectoryPath,
};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "naive+tv")]
    NaiveTv,
    #[serde(rename = "static")]
    Static,
    #[serde(rename = "opg")]
    Opg,
    #[serde(rename = "opg+tv")]
    OpgTv,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Naive, Arm::NaiveTv, Arm::Static, Arm::Opg, Arm::OpgTv];

    pub fn name(&self) -> &'static str {
        match self {
            Arm::Naive => "naive",
            Arm::NaiveTv => "naive+tv",
            Arm::Static => "static",
            Arm::Opg => "opg",
            Arm::OpgTv => "opg+tv",
        }
    }

    fn file_stem(&self) -> &'static str {
        match self {
            Arm::Naive => "naive",
            Arm::NaiveTv => "naive_tv",
            Arm::Static => "static",
            Arm::Opg => "opg",
            Arm::OpgTv => "opg_tv",
        }
    }

    fn projected(&self) -> bool {
        matches!(self, Arm::Static | Arm::Opg | Arm::OpgTv)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Arm::ALL.iter().map(|a| a.name()).collect();
            LabError::config("arm", format!("unknown arm `{s}`; valid arms: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum DesignSpec {
    /// Single-trajectory capture (one or more rigidly mounted cameras).
    Trajectory {
        timesteps: usize,
        cameras: usize,
        path: TrajectoryPath,
    },
    /// Every timestep observed from the same Fibonacci directions around the
    /// scene centroid.
    Full {
        timesteps: usize,
        directions: usize,
        radius: f64,
    },
}

impl DesignSpec {
    fn timesteps(&self) -> usize {
        match self {
            DesignSpec::Trajectory { timesteps, .. } | DesignSpec::Full { timesteps, .. } => *timesteps,
        }
    }
}

/// Off-trajectory evaluation poses: lateral displacement of
/// `lateral_factor` × characteristic radius plus a heading change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NovelSpec {
    pub lateral_factor: f64,
    pub yaw_deg: f64,
}

impl Default for NovelSpec {
    fn default() -> Self {
        NovelSpec {
            lateral_factor: 0.2,
            yaw_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub recipe: SceneRecipe,
    pub rig: CameraRig,
    pub design: DesignSpec,
    /// Every `holdout_every`-th timestep is held out for interpolation.
    pub holdout_every: usize,
    /// Time windows (fractions of the horizon) with no training views.
    #[serde(default)]
    pub gaps: Vec<[f64; 2]>,
    #[serde(default)]
    pub novel: NovelSpec,
    pub sigma: f64,
    pub schedule: StageSchedule,
    /// λ used by the `+tv` arms.
    pub tv_lambda: f64,
    pub arms: Vec<Arm>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(LabError::config("sigma", "must be finite and ≥ 0"));
        }
        if self.holdout_every < 2 {
            return Err(LabError::config("holdout_every", "must be at least 2"));
        }
        if self.design.timesteps() < self.holdout_every {
            return Err(LabError::config("design.timesteps", "fewer timesteps than the holdout period"));
        }
        for g in &self.gaps {
            if !(0.0 <= g[0] && g[0] < g[1] && g[1] <= 1.0) {
                return Err(LabError::config("gaps", "windows must satisfy 0 ≤ start < end ≤ 1"));
            }
        }
        if !(self.tv_lambda >= 0.0 && self.tv_lambda.is_finite()) {
            return Err(LabError::config("tv_lambda", "must be finite and ≥ 0"));
        }
        if self.arms.is_empty() {
            return Err(LabError::config("arms", "need at least one arm"));
        }
        if !(self.novel.lateral_factor > 0.0) {
            return Err(LabError::config("novel.lateral_factor", "must be positive"));
        }
        self.schedule.validate()
    }

    fn in_gap(&self, t: f64) -> bool {
        let u = t / self.recipe.horizon;
        self.gaps.iter().any(|g| u >= g[0] && u < g[1])
    }

    fn schedule_for(&self, arm: Arm) -> StageSchedule {
        let mut s = self.schedule;
        s.tv = match arm {
            Arm::NaiveTv | Arm::OpgTv => TvConfig {
                lambda: self.tv_lambda,
                ..s.tv
            },
            _ => TvConfig { lambda: 0.0, ..s.tv },
        };
        s
    }
}

/// Training and evaluation designs of a scenario.
#[derive(Debug, Clone)]
pub struct Designs {
    pub train: ObservationDesign,
    pub interpolation: ObservationDesign,
    pub novel: ObservationDesign,
    /// Smallest camera-centre distance between novel and training poses.
    pub novel_min_distance: f64,
    pub characteristic_radius: f64,
}

pub fn build_designs(sc: &Scenario, scene: &SceneGraph) -> Result<Designs> {
    let centroid = scene.centroid()?;
    let horizon = sc.recipe.horizon;
    let (all, novel, radius) = match &sc.design {
        DesignSpec::Trajectory { timesteps, cameras, path } => {
            let all = make_trajectory_design(horizon, *cameras, *timesteps, *path, &sc.rig, None)?;
            let radius = all.max_camera_distance(&centroid);
            let offset = PoseOffset {
                lateral: sc.novel.lateral_factor * radius,
                yaw_deg: sc.novel.yaw_deg,
            };
            let novel = make_trajectory_design(horizon, *cameras, *timesteps, *path, &sc.rig, Some(&offset))?;
            (all, novel, radius)
        }
        DesignSpec::Full {
            timesteps,
            directions,
            radius,
        } => {
            let target = [centroid.x, centroid.y, centroid.z];
            let all = make_full_design(horizon, *timesteps, *directions, target, *radius, &sc.rig)?;
            let novel = make_full_design(
                horizon,
                *timesteps,
                directions + 3,
                target,
                radius * (1.0 + sc.novel.lateral_factor),
                &sc.rig,
            )?;
            (all, novel, *radius)
        }
    };
    let per_time = all.cameras_per_time;
    let hold = sc.holdout_every;
    let train = all.select_views(|i, v| (i / per_time) % hold != hold - 1 && !sc.in_gap(v.time));
    let interpolation = all.select_views(|i, _| (i / per_time) % hold == hold - 1);
    if train.views.is_empty() || interpolation.views.is_empty() {
        return Err(LabError::config("design", "training or interpolation set is empty"));
    }
    for a in &train.views {
        if interpolation.views.iter().any(|b| b.time == a.time && b.camera.center() == a.camera.center()) {
            return Err(LabError::config("design", "evaluation context overlaps the training set"));
        }
    }
    let novel_min_distance = train.min_pose_distance(&novel);
    if !(novel_min_distance > 0.0) {
        return Err(LabError::config("novel", "novel poses coincide with training poses"));
    }
    Ok(Designs {
        train,
        interpolation,
        novel,
        novel_min_distance,
        characteristic_radius: radius,
    })
}

/// Per-arm row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub arm: Arm,
    /// `ok` or the error message of a failed arm.
    pub status: String,
    pub spatial_error: f64,
    pub temporal_error: f64,
    pub train_psnr: f64,
    pub interp_psnr: f64,
    pub novel_psnr: f64,
    pub collapse_ratio: f64,
    pub divergent: bool,
    /// Σ_k ∫ ‖∂c_k/∂t‖² dt over the horizon.
    pub tv_energy: f64,
    /// Same energy restricted to the gap windows (whole horizon without gaps).
    pub gap_energy: f64,
    /// Fitted colour change of the event primitive between peak and rest.
    pub event_delta: Option<[f64; 3]>,
    pub event_delta_error: Option<f64>,
}

impl ArmMetrics {
    fn failed(arm: Arm, message: String) -> Self {
        ArmMetrics {
            arm,
            status: message,
            spatial_error: f64::NAN,
            temporal_error: f64::NAN,
            train_psnr: f64::NAN,
            interp_psnr: f64::NAN,
            novel_psnr: f64::NAN,
            collapse_ratio: f64::NAN,
            divergent: false,
            tv_energy: f64::NAN,
            gap_energy: f64::NAN,
            event_delta: None,
            event_delta_error: None,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub scenario: String,
    pub seed: u64,
    pub novel_min_distance: f64,
    pub rows: Vec<ArmMetrics>,
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.9e}")
    }
}

impl MetricsTable {
    pub fn row(&self, arm: Arm) -> Option<&ArmMetrics> {
        self.rows.iter().find(|r| r.arm == arm)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| LabError::Numeric(format!("csv: {e}"));
        w.write_record([
            "scenario",
            "arm",
            "status",
            "spatial_error",
            "temporal_error",
            "train_psnr",
            "interp_psnr",
            "novel_psnr",
            "collapse_ratio",
            "divergent",
            "tv_energy",
            "gap_energy",
            "event_delta_error",
        ])
        .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                self.scenario.clone(),
                r.arm.name().to_string(),
                r.status.clone(),
                fmt_num(r.spatial_error),
                fmt_num(r.temporal_error),
                fmt_num(r.train_psnr),
                fmt_num(r.interp_psnr),
                fmt_num(r.novel_psnr),
                fmt_num(r.collapse_ratio),
                r.divergent.to_string(),
                fmt_num(r.tv_energy),
                fmt_num(r.gap_energy),
                r.event_delta_error.map_or("".into(), fmt_num),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Numeric(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| LabError::Numeric(format!("csv: {e}")))
    }
}

/// One evaluation design with its ground truth and channel-shared Jacobian.
struct EvalSet {
    blocks: JacobianBlocks,
    truth: Vec<f64>,
}

impl EvalSet {
    fn new(scene: &SceneGraph, design: &ObservationDesign) -> Result<Self> {
        Ok(EvalSet {
            blocks: jacobian_appearance(scene, design)?,
            truth: render_clean(scene, design)?,
        })
    }

    fn psnr(&self, theta: &[f64]) -> f64 {
        psnr(&self.truth, &self.blocks.predict(theta))
    }
}

/// Global index and timing of the first planted event.
#[derive(Debug, Clone, Copy)]
struct EventProbe {
    primitive: usize,
    peak: f64,
    rest: f64,
    delta: [f64; 3],
}

fn event_probe(recipe: &SceneRecipe) -> Option<EventProbe> {
    let mut offset = recipe.statics.count;
    for agent in &recipe.agents {
        if let Some(ev) = agent.events.first() {
            return Some(EventProbe {
                primitive: offset + ev.primitive,
                peak: ev.peak_time * recipe.horizon,
                rest: ev.rest_time * recipe.horizon,
                delta: ev.delta_rgb,
            });
        }
        offset += agent.cloud.count;
    }
    None
}

fn event_delta(scene: &SceneGraph, theta: &[f64], probe: &EventProbe, design: &ObservationDesign) -> Result<[f64; 3]> {
    let fitted = scene.with_parameters(theta)?;
    let prim = fitted
        .primitives()
        .nth(probe.primitive)
        .ok_or_else(|| LabError::config("events", "event primitive missing"))?;
    let camera = design.views.first().map(|v| v.camera.center()).unwrap_or_else(Vector3::zeros);
    let mean = fitted.resolve_world(probe.peak)?[probe.primitive].mean;
    let d = crate::scene::viewing_direction(&mean, &camera)?;
    let y = fitted.sh.eval_all(&d);
    let a = prim.appearance.color(&y, &fitted.temporal.varying_all(probe.peak));
    let b = prim.appearance.color(&y, &fitted.temporal.varying_all(probe.rest));
    Ok([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

fn relative_error(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = truth.iter().map(|b| b * b).sum::<f64>().sqrt();
    if den > 0.0 { num / den } else { num }
}

/// Everything one scenario run produces.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scene: SceneGraph,
    pub truth: Vec<f64>,
    pub designs: Designs,
    pub metrics: MetricsTable,
    pub fits: Vec<(Arm, std::result::Result<FitResult, String>)>,
    pub joint_report: InfoReport,
    pub reconditioned_report: InfoReport,
}

/// Shared state of a scenario: scene, designs, noisy data and normal equations.
pub struct Prepared {
    pub scene: SceneGraph,
    pub truth: Vec<f64>,
    pub designs: Designs,
    pub problem: FitProblem,
    interp: EvalSet,
    novel: EvalSet,
    train_truth: Vec<f64>,
    train_noisy: Vec<f64>,
    probe: Option<EventProbe>,
}

pub fn prepare(sc: &Scenario, seed: u64) -> Result<Prepared> {
    sc.validate()?;
    let (scene, truth) = synth_scene(&sc.recipe, seed)?;
    let designs = build_designs(sc, &scene)?;
    // One noise realisation shared by every arm.
    let obs = render_design(&scene, &designs.train, sc.sigma, derive_seed(seed, "observations", 0))?;
    let blocks = jacobian_appearance(&scene, &designs.train)?;
    let problem = FitProblem::new(blocks, &obs.noisy)?;
    Ok(Prepared {
        interp: EvalSet::new(&scene, &designs.interpolation)?,
        novel: EvalSet::new(&scene, &designs.novel)?,
        train_truth: obs.clean,
        train_noisy: obs.noisy,
        probe: event_probe(&sc.recipe),
        scene,
        truth,
        designs,
        problem,
    })
}

impl Prepared {
    pub fn fit(&self, arm: Arm, schedule: &StageSchedule) -> Result<FitResult> {
        let basis = &self.scene.temporal;
        let zeros = vec![0.0; self.truth.len()];
        match arm {
            Arm::Naive | Arm::NaiveTv => fit_naive(&self.problem, basis, schedule),
            Arm::Static => fit_stage1(&self.problem, &zeros, schedule),
            Arm::Opg | Arm::OpgTv => {
                let s1 = fit_stage1(&self.problem, &zeros, schedule)?;
                fit_stage2(&self.problem, &s1, basis, schedule)
            }
        }
    }

    pub fn metrics_for(&self, sc: &Scenario, arm: Arm, fit: &FitResult, joint: &InfoReport, recon: &InfoReport) -> Result<ArmMetrics> {
        let layout = self.problem.layout();
        let basis = &self.scene.temporal;
        let s_idx = layout.spatial_indices();
        let t_idx = layout.temporal_indices();
        let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let spatial_error = relative_error(&pick(&fit.theta, &s_idx), &pick(&self.truth, &s_idx));
        let temporal_error = relative_error(&pick(&fit.theta, &t_idx), &pick(&self.truth, &t_idx));
        let energy: f64 = derivative_energy(&fit.theta, layout, basis, 256)?.iter().sum();
        let gap_energy = if sc.gaps.is_empty() {
            energy
        } else {
            sc.gaps
                .iter()
                .map(|g| window_energy(&fit.theta, layout, basis, g[0] * basis.horizon, g[1] * basis.horizon, 129))
                .sum::<Result<f64>>()?
        };
        let (event_delta, event_delta_error) = match &self.probe {
            Some(p) => {
                let d = event_delta(&self.scene, &fit.theta, p, &self.designs.train)?;
                (Some(d), Some(relative_error(&d, &p.delta)))
            }
            None => (None, None),
        };
        let report = if arm.projected() { recon } else { joint };
        Ok(ArmMetrics {
            arm,
            status: "ok".into(),
            spatial_error,
            temporal_error,
            train_psnr: psnr(&self.train_truth, &self.problem.blocks.predict(&fit.theta)),
            interp_psnr: self.interp.psnr(&fit.theta),
            novel_psnr: self.novel.psnr(&fit.theta),
            collapse_ratio: report.collapse_ratio,
            divergent: report.divergent,
            tv_energy: energy,
            gap_energy,
            event_delta,
            event_delta_error,
        })
    }

    pub fn interp_psnr(&self, theta: &[f64]) -> f64 {
        self.interp.psnr(theta)
    }

    pub fn novel_psnr(&self, theta: &[f64]) -> f64 {
        self.novel.psnr(theta)
    }

    /// Diagnostics of the joint FIM and of the OPG-reconditioned FIM.
    pub fn reports(&self, sigma: f64) -> Result<(InfoReport, InfoReport)> {
        // Ratios and flags are scale-free, so σ = 0 runs are diagnosed at σ = 1.
        let sigma = if sigma > 0.0 { sigma } else { 1.0 };
        let blocks = &self.problem.blocks;
        let (joint, recon) = rayon::join(
            || InfoReport::from_blocks(blocks, sigma, None),
            || -> Result<InfoReport> {
                let projector = null_projector(&blocks.spatial)?;
                let purified = JacobianBlocks {
                    spatial: blocks.spatial.clone(),
                    temporal: purify(&blocks.temporal, &projector)?,
                    layout: blocks.layout,
                };
                InfoReport::from_blocks(&purified, sigma, None)
            },
        );
        Ok((joint?, recon?))
    }
}

/// Runs every arm of `sc` on the same data. Arm failures are recorded in the
/// table instead of aborting the run.
pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<ScenarioRun> {
    let prep = prepare(sc, seed)?;
    let (joint, recon) = prep.reports(sc.sigma)?;
    let fits: Vec<(Arm, std::result::Result<FitResult, String>)> = sc
        .arms
        .par_iter()
        .map(|&arm| (arm, prep.fit(arm, &sc.schedule_for(arm)).map_err(|e| e.to_string())))
        .collect();
    let rows = fits
        .iter()
        .map(|(arm, fit)| match fit {
            Ok(f) => prep
                .metrics_for(sc, *arm, f, &joint, &recon)
                .unwrap_or_else(|e| ArmMetrics::failed(*arm, e.to_string())),
            Err(e) => ArmMetrics::failed(*arm, e.clone()),
        })
        .collect();
    Ok(ScenarioRun {
        metrics: MetricsTable {
            scenario: sc.name.clone(),
            seed,
            novel_min_distance: prep.designs.novel_min_distance,
            rows,
        },
        fits,
        joint_report: joint,
        reconditioned_report: recon,
        scene: prep.scene,
        truth: prep.truth,
        designs: prep.designs,
    })
}

impl ScenarioRun {
    /// Writes metrics, per-arm documents and evaluation images under `dir`;
    /// returns the written paths in a fixed order.
    pub fn write(&self, sc: &Scenario, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
            let p = dir.join(name);
            io::write_atomic(&p, &bytes)?;
            out.push(p);
            Ok(())
        };
        put("metrics.csv".into(), self.metrics.to_csv()?.into_bytes())?;
        put("metrics.json".into(), json(&self.metrics)?)?;
        put(
            "scene.json".into(),
            json(&SceneDocument::new(sc.recipe.clone(), self.metrics.seed, self.scene.clone()))?,
        )?;
        put("info_joint.json".into(), json(&self.joint_report)?)?;
        put("spectra_joint.csv".into(), self.joint_report.spectra_csv()?.into_bytes())?;
        put("info_reconditioned.json".into(), json(&self.reconditioned_report)?)?;
        put("spectra_reconditioned.csv".into(), self.reconditioned_report.spectra_csv()?.into_bytes())?;
        let view = self.designs.novel.views[self.designs.novel.views.len() / 2].clone();
        put(
            "novel_truth.ppm".into(),
            io::ppm_bytes(&render_image(&self.scene, &view.camera, view.time)?),
        )?;
        for (arm, fit) in &self.fits {
            let stem = arm.file_stem();
            match fit {
                Ok(f) => {
                    put(format!("fit_{stem}.json"), json(f)?)?;
                    put(format!("loss_{stem}.csv"), f.trace_csv()?.into_bytes())?;
                    let fitted = self.scene.with_parameters(&f.theta)?;
                    put(
                        format!("novel_{stem}.ppm"),
                        io::ppm_bytes(&render_image(&fitted, &view.camera, view.time)?),
                    )?;
                }
                Err(e) => put(format!("fit_{stem}.error.txt"), format!("{e}\n").into_bytes())?,
            }
        }
        Ok(out)
    }
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| LabError::Numeric(format!("json: {e}")))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// One point of a λ sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub train_psnr: f64,
    /// PSNR against the noisy training observations (the fitted data).
    pub data_psnr: f64,
    pub novel_psnr: f64,
    pub spatial_error: f64,
    /// Per-primitive temporal-derivative energy.
    pub energy: Vec<f64>,
    /// Largest peak-to-peak swing of any coefficient course.
    pub swing: f64,
    /// `swing` relative to the ground truth's.
    pub relative_swing: f64,
    /// Ψ of the fit (unweighted).
    pub tv_penalty: f64,
}

/// OPG + TV fits over `lambdas` with exact stage-2 minimisation (λ = 0 is
/// the exact projected least-squares solution).
pub fn lambda_sweep(sc: &Scenario, lambdas: &[f64], seed: u64) -> Result<Vec<SweepPoint>> {
    if lambdas.len() < 2 {
        return Err(LabError::config("lambda", "a sweep needs at least 2 λ values"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(LabError::config("lambda", format!("invalid λ {l}")));
    }
    let prep = prepare(sc, seed)?;
    let layout = *prep.problem.layout();
    let basis = &prep.scene.temporal;
    let truth_swing = max_course_swing(&prep.truth, &layout, basis, 256)?;
    lambdas
        .par_iter()
        .map(|&lambda| {
            let mut schedule = sc.schedule;
            schedule.stage2 = StageSolver {
                iterations: schedule.stage2.iterations.max(200),
                ..StageSolver::exact()
            };
            schedule.tv = TvConfig { lambda, ..schedule.tv };
            let fit = prep.fit(Arm::OpgTv, &schedule)?;
            let swing = max_course_swing(&fit.theta, &layout, basis, 256)?;
            let predicted = prep.problem.blocks.predict(&fit.theta);
            let s_idx = layout.spatial_indices();
            let pick = |v: &[f64]| s_idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            Ok(SweepPoint {
                lambda,
                train_psnr: psnr(&prep.train_truth, &predicted),
                data_psnr: psnr(&prep.train_noisy, &predicted),
                novel_psnr: prep.novel.psnr(&fit.theta),
                spatial_error: relative_error(&pick(&fit.theta), &pick(&prep.truth)),
                energy: derivative_energy(&fit.theta, &layout, basis, 256)?,
                swing,
                relative_swing: if truth_swing > 0.0 { swing / truth_swing } else { swing },
                tv_penalty: tv_penalty(&fit.theta, &layout, basis, &schedule.tv)?,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| LabError::Numeric(format!("csv: {e}"));
    w.write_record([
        "lambda",
        "train_psnr",
        "data_psnr",
        "novel_psnr",
        "spatial_error",
        "energy",
        "swing",
        "relative_swing",
        "tv_penalty",
    ])
        .map_err(err)?;
    for p in points {
        w.write_record([
            fmt_num(p.lambda),
            fmt_num(p.train_psnr),
            fmt_num(p.data_psnr),
            fmt_num(p.novel_psnr),
            fmt_num(p.spatial_error),
            fmt_num(p.energy.iter().sum()),
            fmt_num(p.swing),
            fmt_num(p.relative_swing),
            fmt_num(p.tv_penalty),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Numeric(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| LabError::Numeric(format!("csv: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metrics: ArmMetrics,
}

/// Reference scenario (`occlusion-gap`: single trajectory with an
/// unobserved window) under {full, w/o OPG, w/o TV, B-spline basis}.
pub fn ablation_suite(seed: u64) -> Result<Vec<AblationRow>> {
    let mut reference = catalog("occlusion-gap")?;
    reference.arms = vec![Arm::OpgTv, Arm::NaiveTv, Arm::Opg];
    let mut bspline = reference.clone();
    bspline.name = "occlusion-gap-bspline".into();
    bspline.recipe.temporal = TemporalSpec {
        kind: TemporalKind::BSpline { order: 4 },
        ..bspline.recipe.temporal
    };
    bspline.arms = vec![Arm::OpgTv];
    let (a, b) = rayon::join(|| run_scenario(&reference, seed), || run_scenario(&bspline, seed));
    let (a, b) = (a?, b?);
    let get = |run: &ScenarioRun, arm: Arm| run.metrics.row(arm).cloned().expect("arm was requested");
    Ok(vec![
        AblationRow {
            variant: "full".into(),
            metrics: get(&a, Arm::OpgTv),
        },
        AblationRow {
            variant: "w/o OPG".into(),
            metrics: get(&a, Arm::NaiveTv),
        },
        AblationRow {
            variant: "w/o TV".into(),
            metrics: get(&a, Arm::Opg),
        },
        AblationRow {
            variant: "B-spline".into(),
            metrics: get(&b, Arm::OpgTv),
        },
    ])
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| LabError::Numeric(format!("csv: {e}"));
    w.write_record([
        "variant",
        "status",
        "spatial_error",
        "interp_psnr",
        "novel_psnr",
        "divergent",
        "tv_energy",
        "gap_energy",
    ])
    .map_err(err)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.variant.clone(),
            m.status.clone(),
            fmt_num(m.spatial_error),
            fmt_num(m.interp_psnr),
            fmt_num(m.novel_psnr),
            m.divergent.to_string(),
            fmt_num(m.tv_energy),
            fmt_num(m.gap_energy),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Numeric(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| LabError::Numeric(format!("csv: {e}")))
}

// ---------------------------------------------------------------------------
// Scenario catalog

pub const CATALOG: [&str; 4] = ["static", "taillight-sof", "occlusion-gap", "relative-statics"];

fn desk_rig() -> CameraRig {
    CameraRig {
        intrinsics: Intrinsics {
            fx: 16.0,
            fy: 16.0,
            cx: 10.0,
            cy: 8.0,
            width: 20,
            height: 16,
        },
        pixel_stride: 1,
        camera_spacing_deg: 40.0,
    }
}

fn desk_statics(count: usize) -> PrimitiveCloud {
    PrimitiveCloud {
        count,
        region_min: [-2.0, -2.0, 0.0],
        region_max: [2.0, 2.0, 0.8],
        scale_range: [0.15, 0.3],
        opacity_range: [0.6, 0.9],
        dc_range: [0.8, 2.0],
        view_dependent_std: 0.3,
    }
}

fn desk_orbit() -> TrajectoryPath {
    TrajectoryPath::Circular {
        center: [0.0, 0.0, 0.3],
        radius: 4.0,
        height: 1.0,
        undulation: 1.0,
        undulation_cycles: 2.0,
        revolutions: 1.0,
    }
}

fn parked_car(events: Vec<EventRecipe>) -> AgentRecipe {
    AgentRecipe {
        name: "parked-car".into(),
        motion: AgentMotion::Parked {
            position: [0.2, -0.3, 0.2],
            yaw_deg: 30.0,
        },
        cloud: PrimitiveCloud {
            count: 2,
            region_min: [-0.4, -0.2, 0.0],
            region_max: [0.4, 0.2, 0.3],
            scale_range: [0.15, 0.25],
            opacity_range: [0.7, 0.9],
            dc_range: [0.8, 1.6],
            view_dependent_std: 0.2,
        },
        events,
    }
}

fn taillight() -> EventRecipe {
    EventRecipe {
        primitive: 0,
        shape: EventShape::Pulses {
            cycles: 5.0,
            start: 0.0,
            end: 1.0,
        },
        delta_rgb: [0.2, 0.025, 0.0],
        peak_time: 0.45,
        rest_time: 0.2,
    }
}

fn desk_recipe(name: &str, agents: Vec<AgentRecipe>) -> SceneRecipe {
    SceneRecipe {
        name: name.into(),
        horizon: 1.0,
        sh_degree: 1,
        temporal: TemporalSpec {
            kind: TemporalKind::Fourier,
            count: 16,
            horizon: 1.0,
        },
        statics: desk_statics(5),
        agents,
    }
}

/// TV weights of the `+tv` arms at desk scale. The data loss is a mean
/// over entries, so λ sits far below per-image training weights. Densely
/// observed scenarios get the light weight; scenarios with unobserved
/// windows need the heavier one to bridge them.
pub const LIGHT_TV_LAMBDA: f64 = 1e-9;
pub const GAP_TV_LAMBDA: f64 = 1e-7;

/// Built-in scenarios by name.
pub fn catalog(name: &str) -> Result<Scenario> {
    let base = |recipe: SceneRecipe, design: DesignSpec| Scenario {
        name: name.into(),
        recipe,
        rig: desk_rig(),
        design,
        holdout_every: 4,
        gaps: Vec::new(),
        novel: NovelSpec::default(),
        sigma: 0.01,
        schedule: StageSchedule {
            stage2: StageSolver::gradient(300),
            tv: TvConfig::default(),
            ..StageSchedule::default()
        },
        tv_lambda: LIGHT_TV_LAMBDA,
        arms: Arm::ALL.to_vec(),
    };
    let orbit = DesignSpec::Trajectory {
        timesteps: 64,
        cameras: 1,
        path: desk_orbit(),
    };
    match name {
        "static" => {
            // Training keeps 24 of 32 timesteps, more than the 15 varying
            // temporal functions, so they cannot alias the constant.
            let mut sc = base(
                desk_recipe(name, vec![parked_car(Vec::new())]),
                DesignSpec::Full {
                    timesteps: 32,
                    directions: 12,
                    radius: 4.0,
                },
            );
            sc.rig.pixel_stride = 2;
            Ok(sc)
        }
        "taillight-sof" => Ok(base(desk_recipe(name, vec![parked_car(vec![taillight()])]), orbit)),
        "occlusion-gap" => {
            let mut sc = base(desk_recipe(name, vec![parked_car(vec![taillight()])]), orbit);
            sc.gaps = vec![[0.55, 0.7]];
            sc.tv_lambda = GAP_TV_LAMBDA;
            Ok(sc)
        }
        "relative-statics" => {
            let path = TrajectoryPath::Linear {
                start: [-2.0, -4.0, 1.0],
                end: [2.0, -4.0, 1.0],
                target: [0.0, 0.0, 0.3],
            };
            let follower = AgentRecipe {
                name: "lead-car".into(),
                motion: AgentMotion::FollowPath {
                    path,
                    offset: [0.0, 2.0],
                    keyframes: 16,
                },
                cloud: PrimitiveCloud {
                    region_min: [-0.3, -0.2, -0.6],
                    region_max: [0.3, 0.2, -0.3],
                    ..parked_car(Vec::new()).cloud
                },
                events: vec![taillight()],
            };
            Ok(base(
                desk_recipe(name, vec![follower]),
                DesignSpec::Trajectory {
                    timesteps: 64,
                    cameras: 1,
                    path,
                },
            ))
        }
        other => Err(LabError::config(
            "scenario",
            format!("unknown scenario `{other}`; built-in scenarios: {}", CATALOG.join(", ")),
        )),
    }
}

/// Scenario from a catalog name or a JSON file path.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    if CATALOG.contains(&name_or_path) {
        return catalog(name_or_path);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(LabError::config(
            "scenario",
            format!("`{name_or_path}` is neither a built-in scenario ({}) nor an existing file", CATALOG.join(", ")),
        ));
    }
    let text = io::read_to_string(path)?;
    let sc: Scenario = serde_json::from_str(&text).map_err(|e| LabError::config("scenario", format!("{}: {e}", path.display())))?;
    sc.validate()?;
    Ok(sc)
}
