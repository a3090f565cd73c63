//! Spatial null-space projection and the hierarchical fitting schedules.
//!
//! Every fit works on the channel-shared Gauss–Newton matrix H = JᵀJ/n of the
//! joint Jacobian J = [J_s, J_τ] (n = number of observation entries), so the
//! data loss of one channel is ½xᵀHx − bᵀx + ½yᵀy/n with x = [s; τ].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::infogeo::Fim;
use crate::jacobians::JacobianBlocks;
use crate::linalg::{sym_eigenvalues, symmetrize, SortedSvd, PINV_CUTOFF};
use crate::regtv::{TvConfig, TvOperator};
use crate::scene::{ParameterLayout, CHANNELS};

/// P = I − UUᵀ with U an orthonormal basis of range(J_s); kept implicit
/// because the observation space is large.
#[derive(Debug, Clone)]
pub struct Projector {
    pub range: DMatrix<f64>,
    pub rank: usize,
}

pub fn null_projector(spatial: &DMatrix<f64>) -> Result<Projector> {
    if spatial.nrows() == 0 || spatial.ncols() == 0 {
        return Err(LabError::Shape("null projector needs a non-empty J_s".into()));
    }
    let range = SortedSvd::new(spatial)?.range_basis(PINV_CUTOFF);
    Ok(Projector {
        rank: range.ncols(),
        range,
    })
}

impl Projector {
    pub fn rows(&self) -> usize {
        self.range.nrows()
    }

    /// P·M.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.rows() {
            return Err(LabError::Shape(format!(
                "projector acts on {} rows, matrix has {}",
                self.rows(),
                m.nrows()
            )));
        }
        Ok(m - &self.range * (self.range.transpose() * m))
    }

    /// Dense P (rows × rows).
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.rows(), self.rows()) - &self.range * self.range.transpose()
    }

    /// Orthonormal basis of the temporal directions whose predicted change
    /// has no component in range(J_s): null(UᵀJ_τ).
    pub fn constrained_basis(&self, temporal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.rank == 0 {
            return Ok(DMatrix::identity(temporal.ncols(), temporal.ncols()));
        }
        let m = self.range.transpose() * temporal;
        Ok(SortedSvd::new(&m)?.null_basis(PINV_CUTOFF, temporal.ncols()))
    }
}

/// J̃_τ = P·J_τ.
pub fn purify(temporal: &DMatrix<f64>, p: &Projector) -> Result<DMatrix<f64>> {
    p.apply(temporal)
}

/// Block-diagonal FIM diag(J_sᵀJ_s, J̃_τᵀJ̃_τ)/σ² with exact-zero cross blocks.
pub fn reconditioned_fim(spatial: &DMatrix<f64>, purified: &DMatrix<f64>, sigma: f64) -> Result<Fim> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(LabError::Domain(format!("noise sigma {sigma} must be positive")));
    }
    if spatial.nrows() != purified.nrows() {
        return Err(LabError::Shape("J_s and J̃_τ row counts differ".into()));
    }
    let (a, b) = (spatial.ncols(), purified.ncols());
    let mut matrix = DMatrix::zeros(a + b, a + b);
    let s2 = sigma * sigma;
    matrix
        .view_mut((0, 0), (a, a))
        .copy_from(&(symmetrize(&(spatial.transpose() * spatial)) / s2));
    matrix
        .view_mut((a, a), (b, b))
        .copy_from(&(symmetrize(&(purified.transpose() * purified)) / s2));
    Ok(Fim {
        matrix,
        sigma,
        split: a,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Minimum-norm least squares through the pseudoinverse.
    Exact,
    /// Fixed-step gradient descent from the initial point.
    Gradient,
}

/// Solver settings of one stage. `step` is a fraction of 1/L, with L the
/// largest eigenvalue of the stage's Gauss–Newton matrix. When the stage
/// carries a TV term (λ > 0) it is minimized by majorize–minimize from the
/// λ = 0 solution and `iterations` caps the number of majorizer solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSolver {
    pub solver: Solver,
    pub iterations: usize,
    pub step: f64,
}

impl StageSolver {
    pub fn exact() -> Self {
        StageSolver {
            solver: Solver::Exact,
            iterations: 0,
            step: 1.0,
        }
    }

    pub fn gradient(iterations: usize) -> Self {
        StageSolver {
            solver: Solver::Gradient,
            iterations,
            step: 1.0,
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 2.0) {
            return Err(LabError::config(field, "step must lie in (0, 2] (fraction of 1/L)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stage1: StageSolver,
    /// Build the projector once from the stage-1 J_s and constrain stage 2
    /// to it. Without it stage 2 fits τ freely with s frozen.
    pub project: bool,
    pub stage2: StageSolver,
    /// Joint solver used by the naive arms.
    pub joint: StageSolver,
    pub tv: TvConfig,
}

impl Default for StageSchedule {
    fn default() -> Self {
        StageSchedule {
            stage1: StageSolver::exact(),
            project: true,
            stage2: StageSolver::gradient(300),
            joint: StageSolver::gradient(600),
            tv: TvConfig::default(),
        }
    }
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate("schedule.stage1")?;
        self.stage2.validate("schedule.stage2")?;
        self.joint.validate("schedule.joint")?;
        self.tv.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: u8,
    pub iteration: usize,
    pub data_loss: f64,
    pub tv_penalty: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub trace: Vec<LossRecord>,
    pub schedule: StageSchedule,
    pub log: Vec<String>,
    pub projector_rank: Option<usize>,
    pub constrained_dim: Option<usize>,
}

impl FitResult {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.total)
    }

    pub fn trace_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| LabError::Numeric(format!("csv: {e}"));
        w.write_record(["stage", "iteration", "data_loss", "tv_penalty", "total"]).map_err(err)?;
        for r in &self.trace {
            w.write_record([
                r.stage.to_string(),
                r.iteration.to_string(),
                format!("{:e}", r.data_loss),
                format!("{:e}", r.tv_penalty),
                format!("{:e}", r.total),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Numeric(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| LabError::Numeric(format!("csv: {e}")))
    }
}

/// Normal-equation data shared by every arm fitted to the same observations.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub blocks: JacobianBlocks,
    /// JᵀJ/n of the channel-shared joint Jacobian.
    pub gram: DMatrix<f64>,
    /// Jᵀy_c/n per channel.
    pub rhs: Vec<DVector<f64>>,
    /// y_cᵀy_c/n per channel.
    pub energy: Vec<f64>,
    pub entries: usize,
}

impl FitProblem {
    /// `observations` in design order (row, channel).
    pub fn new(blocks: JacobianBlocks, observations: &[f64]) -> Result<Self> {
        let rows = blocks.rows();
        if observations.len() != rows * CHANNELS {
            return Err(LabError::Shape(format!(
                "{} observations for {} rows × {CHANNELS} channels",
                observations.len(),
                rows
            )));
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Numeric("non-finite observation".into()));
        }
        let n = (rows * CHANNELS) as f64;
        let j = blocks.joint();
        let gram = symmetrize(&(j.transpose() * &j)) / n;
        let mut rhs = Vec::with_capacity(CHANNELS);
        let mut energy = Vec::with_capacity(CHANNELS);
        for ch in 0..CHANNELS {
            let y = DVector::from_iterator(rows, (0..rows).map(|r| observations[r * CHANNELS + ch]));
            rhs.push(j.tr_mul(&y) / n);
            energy.push(y.norm_squared() / n);
        }
        Ok(FitProblem {
            blocks,
            gram,
            rhs,
            energy,
            entries: rows * CHANNELS,
        })
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.blocks.layout
    }

    fn spatial_cols(&self) -> usize {
        self.blocks.spatial.ncols()
    }

    fn joint_cols(&self) -> usize {
        self.gram.nrows()
    }

    /// ½xᵀHx − bᵀx + ½yᵀy/n for one channel.
    fn channel_loss(&self, ch: usize, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.gram * x)[(0, 0)] - self.rhs[ch].dot(x) + 0.5 * self.energy[ch]
    }

    fn split_joint(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let a = self.spatial_cols();
        (x.rows(0, a).iter().copied().collect(), x.rows(a, x.len() - a).iter().copied().collect())
    }

    fn joint_from_theta(&self, theta: &[f64], ch: usize) -> DVector<f64> {
        let (s, t) = self.layout().split_channel(theta, ch);
        DVector::from_iterator(self.joint_cols(), s.into_iter().chain(t))
    }

    fn theta_from_joint(&self, xs: &[DVector<f64>]) -> Vec<f64> {
        let mut theta = vec![0.0; self.layout().total()];
        for (ch, x) in xs.iter().enumerate() {
            let (s, t) = self.split_joint(x);
            self.layout().merge_channel(&mut theta, ch, &s, &t);
        }
        theta
    }

    /// Total data loss (1/2n)‖y − Jθ‖² over all channels.
    pub fn data_loss(&self, theta: &[f64]) -> f64 {
        (0..CHANNELS).map(|ch| self.channel_loss(ch, &self.joint_from_theta(theta, ch))).sum()
    }
}

/// Affine restriction x_joint = base + embed·z of one channel's problem.
struct Restriction {
    base: DVector<f64>,
    embed: DMatrix<f64>,
}

struct ChannelRun {
    x: DVector<f64>,
    data: Vec<f64>,
    tv: Vec<f64>,
}

fn max_eigen(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.first().copied().unwrap_or(0.0).max(0.0))
}

fn solve_spd(a: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(c);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    Ok(SortedSvd::new(a)?.pinv(PINV_CUTOFF) * c)
}

fn run_channel(
    problem: &FitProblem,
    ch: usize,
    r: &Restriction,
    stage: &StageSolver,
    tv: Option<(&TvOperator, f64)>,
) -> Result<ChannelRun> {
    let h = &problem.gram;
    let a = symmetrize(&(r.embed.transpose() * (h * &r.embed)));
    let c = r.embed.transpose() * (&problem.rhs[ch] - h * &r.base);
    let layout = problem.layout();
    let nsp = problem.spatial_cols();
    let joint = |z: &DVector<f64>| &r.base + &r.embed * z;
    let temporal_of = |x: &DVector<f64>| x.rows(nsp, x.len() - nsp).iter().copied().collect::<Vec<f64>>();
    let penalty = |x: &DVector<f64>| tv.map_or(0.0, |(op, _)| op.channel_penalty(layout, &temporal_of(x)));
    let mut data: Vec<f64> = Vec::new();
    let mut tvs: Vec<f64> = Vec::new();
    let record = |x: &DVector<f64>, data: &mut Vec<f64>, tvs: &mut Vec<f64>| -> Result<()> {
        let d = problem.channel_loss(ch, x);
        let p = penalty(x);
        if !d.is_finite() || !p.is_finite() {
            return Err(LabError::Diverged {
                iteration: data.len(),
                loss: d,
                trace: data.clone(),
            });
        }
        data.push(d);
        tvs.push(p);
        Ok(())
    };
    let dim = a.nrows();
    let mut z = DVector::zeros(dim);
    let lambda = tv.map_or(0.0, |(_, l)| l);
    if dim == 0 {
        let x = joint(&z);
        record(&x, &mut data, &mut tvs)?;
        return Ok(ChannelRun { x, data, tv: tvs });
    }
    record(&joint(&z), &mut data, &mut tvs)?;
    if lambda > 0.0 || stage.solver == Solver::Exact {
        z = SortedSvd::new(&a)?.pinv(PINV_CUTOFF) * &c;
        record(&joint(&z), &mut data, &mut tvs)?;
    } else {
        let lmax = max_eigen(&a)?;
        if lmax > 0.0 {
            let eta = stage.step / lmax;
            for _ in 0..stage.iterations {
                let g = &a * &z - &c;
                z -= g * eta;
                record(&joint(&z), &mut data, &mut tvs)?;
            }
        }
    }
    if let Some((op, lambda)) = tv.filter(|(_, l)| *l > 0.0) {
        // Majorize–minimize: each step minimizes the data loss plus the
        // quadratic upper bound of λΨ at the current iterate.
        let e_tau = r.embed.rows(nsp, r.embed.nrows() - nsp).into_owned();
        let e_tau_t = e_tau.transpose();
        let base_tau = DVector::from_vec(temporal_of(&r.base));
        let mut objective = data.last().unwrap() + lambda * tvs.last().unwrap();
        for _ in 0..stage.iterations {
            let x = joint(&z);
            let m = op.channel_majorizer(layout, &temporal_of(&x));
            let me = &m * &e_tau;
            let system = symmetrize(&(&a + (&e_tau_t * &me) * lambda));
            let rhs = &c - (&e_tau_t * (&m * &base_tau)) * lambda;
            z = solve_spd(&system, &rhs)?;
            record(&joint(&z), &mut data, &mut tvs)?;
            let next = data.last().unwrap() + lambda * tvs.last().unwrap();
            let done = (objective - next).abs() <= 1e-12 * objective.abs().max(1e-300);
            objective = next;
            if done {
                break;
            }
        }
    }
    Ok(ChannelRun {
        x: joint(&z),
        data,
        tv: tvs,
    })
}

fn run_all(
    problem: &FitProblem,
    restrictions: &[Restriction],
    stage: &StageSolver,
    tv: Option<(&TvOperator, f64)>,
) -> Result<Vec<ChannelRun>> {
    (0..CHANNELS)
        .into_par_iter()
        .map(|ch| run_channel(problem, ch, &restrictions[ch], stage, tv))
        .collect()
}

/// Sums per-channel traces (padding finished channels with their last value).
fn merge_trace(runs: &[ChannelRun], stage: u8, lambda: f64, out: &mut Vec<LossRecord>) {
    let len = runs.iter().map(|r| r.data.len()).max().unwrap_or(0);
    for i in 0..len {
        let pick = |v: &Vec<f64>| v[i.min(v.len() - 1)];
        let data_loss: f64 = runs.iter().map(|r| pick(&r.data)).sum();
        let tv_penalty: f64 = runs.iter().map(|r| pick(&r.tv)).sum();
        out.push(LossRecord {
            stage,
            iteration: i,
            data_loss,
            tv_penalty,
            total: data_loss + lambda * tv_penalty,
        });
    }
}

fn tv_operator(problem: &FitProblem, cfg: &TvConfig, basis: &crate::basis::TemporalBasis) -> Result<Option<TvOperator>> {
    if cfg.lambda > 0.0 {
        let op = TvOperator::new(basis, cfg)?;
        if op.varying() != problem.layout().varying {
            return Err(LabError::Shape("temporal basis does not match the parameter layout".into()));
        }
        Ok(Some(op))
    } else {
        Ok(None)
    }
}

/// Stage 1: spatial coefficients only, temporal coefficients frozen at
/// `init` (zeros give the constant-only pattern).
pub fn fit_stage1(problem: &FitProblem, init: &[f64], schedule: &StageSchedule) -> Result<FitResult> {
    schedule.validate()?;
    let layout = problem.layout();
    if init.len() != layout.total() {
        return Err(LabError::Shape("initial θ does not match the layout".into()));
    }
    let nsp = problem.spatial_cols();
    let p = problem.joint_cols();
    let restrictions: Vec<Restriction> = (0..CHANNELS)
        .map(|ch| {
            // Offsets from the initial point, so gradient descent starts there.
            let mut embed = DMatrix::zeros(p, nsp);
            embed.view_mut((0, 0), (nsp, nsp)).fill_with_identity();
            Restriction {
                base: problem.joint_from_theta(init, ch),
                embed,
            }
        })
        .collect();
    let runs = run_all(problem, &restrictions, &schedule.stage1, None)?;
    let mut trace = Vec::new();
    merge_trace(&runs, 1, 0.0, &mut trace);
    let xs: Vec<DVector<f64>> = runs.into_iter().map(|r| r.x).collect();
    Ok(FitResult {
        theta: problem.theta_from_joint(&xs),
        trace,
        schedule: *schedule,
        log: vec![format!("stage 1: {:?} on {} spatial coefficients per channel", schedule.stage1.solver, nsp)],
        projector_rank: None,
        constrained_dim: None,
    })
}

/// Stage 2: spatial coefficients frozen at the stage-1 values, temporal
/// coefficients fitted within null(UᵀJ_τ) when `schedule.project` is set,
/// with the TV penalty weighted by `schedule.tv.lambda`.
pub fn fit_stage2(
    problem: &FitProblem,
    stage1: &FitResult,
    basis: &crate::basis::TemporalBasis,
    schedule: &StageSchedule,
) -> Result<FitResult> {
    schedule.validate()?;
    let nsp = problem.spatial_cols();
    let p = problem.joint_cols();
    let nt = p - nsp;
    let mut log = stage1.log.clone();
    let (q, rank) = if schedule.project {
        let projector = null_projector(&problem.blocks.spatial)?;
        let q = projector.constrained_basis(&problem.blocks.temporal)?;
        log.push(format!(
            "projection built once from stage-1 J_s: rank {}, constrained temporal dimension {} of {}",
            projector.rank,
            q.ncols(),
            nt
        ));
        (q, Some(projector.rank))
    } else {
        log.push("stage 2 without projection".to_string());
        (DMatrix::identity(nt, nt), None)
    };
    let mut embed = DMatrix::zeros(p, q.ncols());
    embed.view_mut((nsp, 0), (nt, q.ncols())).copy_from(&q);
    let restrictions: Vec<Restriction> = (0..CHANNELS)
        .map(|ch| Restriction {
            base: problem.joint_from_theta(&stage1.theta, ch),
            embed: embed.clone(),
        })
        .collect();
    let op = tv_operator(problem, &schedule.tv, basis)?;
    let tv = op.as_ref().map(|o| (o, schedule.tv.lambda));
    let runs = run_all(problem, &restrictions, &schedule.stage2, tv)?;
    let mut trace = stage1.trace.clone();
    merge_trace(&runs, 2, schedule.tv.lambda, &mut trace);
    log.push(format!(
        "stage 2: {} with λ = {}",
        if schedule.tv.lambda > 0.0 {
            "majorize–minimize".to_string()
        } else {
            format!("{:?}", schedule.stage2.solver)
        },
        schedule.tv.lambda
    ));
    let xs: Vec<DVector<f64>> = runs.into_iter().map(|r| r.x).collect();
    Ok(FitResult {
        theta: problem.theta_from_joint(&xs),
        trace,
        schedule: *schedule,
        log,
        projector_rank: rank,
        constrained_dim: Some(q.ncols()),
    })
}

/// Joint fit of all appearance coefficients from zero, with the TV penalty
/// on the temporal block when `schedule.tv.lambda > 0`.
pub fn fit_naive(problem: &FitProblem, basis: &crate::basis::TemporalBasis, schedule: &StageSchedule) -> Result<FitResult> {
    schedule.validate()?;
    let p = problem.joint_cols();
    let restrictions: Vec<Restriction> = (0..CHANNELS)
        .map(|_| Restriction {
            base: DVector::zeros(p),
            embed: DMatrix::identity(p, p),
        })
        .collect();
    let op = tv_operator(problem, &schedule.tv, basis)?;
    let tv = op.as_ref().map(|o| (o, schedule.tv.lambda));
    let runs = run_all(problem, &restrictions, &schedule.joint, tv)?;
    let mut trace = Vec::new();
    merge_trace(&runs, 0, schedule.tv.lambda, &mut trace);
    let xs: Vec<DVector<f64>> = runs.into_iter().map(|r| r.x).collect();
    Ok(FitResult {
        theta: problem.theta_from_joint(&xs),
        trace,
        schedule: *schedule,
        log: vec![format!("joint fit: {:?}, λ = {}", schedule.joint.solver, schedule.tv.lambda)],
        projector_rank: None,
        constrained_dim: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::TemporalBasis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn axis_and_full_rank_projectors() {
        let mut e1 = DMatrix::zeros(4, 1);
        e1[(0, 0)] = 1.0;
        let p = null_projector(&e1).unwrap().matrix();
        let mut expected = DMatrix::identity(4, 4);
        expected[(0, 0)] = 0.0;
        assert!((p - expected).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sq = random(&mut rng, 5, 5);
        assert!(null_projector(&sq).unwrap().matrix().norm() < 1e-12);
        assert!(null_projector(&DMatrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn projector_is_idempotent_symmetric_and_annihilates_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let js = random(&mut rng, 30, 4);
        let proj = null_projector(&js).unwrap();
        let p = proj.matrix();
        assert!((&p * &p - &p).norm() <= 1e-8 * p.norm());
        assert!((&p - p.transpose()).norm() <= 1e-10);
        assert!(proj.apply(&js).unwrap().norm() / js.norm() < 1e-10);
    }

    #[test]
    fn purification_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let js = random(&mut rng, 30, 3);
        let proj = null_projector(&js).unwrap();
        let m = random(&mut rng, 3, 5);
        assert!(purify(&(&js * &m), &proj).unwrap().norm() < 1e-12);
        let jt = random(&mut rng, 30, 6);
        let pur = purify(&jt, &proj).unwrap();
        assert!(js.tr_mul(&pur).norm() <= 1e-10 * js.norm() * jt.norm());
        let again = purify(&pur, &proj).unwrap();
        assert!((again - &pur).norm() < 1e-12);
    }

    #[test]
    fn reconditioned_fim_has_exact_zero_cross_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let js = random(&mut rng, 20, 3);
        let jt = random(&mut rng, 20, 4);
        let pur = purify(&jt, &null_projector(&js).unwrap()).unwrap();
        let f = reconditioned_fim(&js, &pur, 0.5).unwrap();
        assert_eq!(f.st().norm(), 0.0);
        let c = crate::infogeo::crb(&f).unwrap();
        let direct = (js.tr_mul(&js)).try_inverse().unwrap() * 0.25;
        assert!((c.spatial.matrix - direct).norm() < 1e-10);
    }

    fn toy_problem(rng: &mut ChaCha8Rng, rows: usize) -> (FitProblem, Vec<f64>) {
        let layout = ParameterLayout {
            primitives: 1,
            sh_terms: 2,
            varying: 2,
        };
        let spatial = random(rng, rows, 2);
        let temporal = random(rng, rows, 4);
        let blocks = JacobianBlocks {
            spatial,
            temporal,
            layout,
        };
        let theta: Vec<f64> = (0..layout.total()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obs = blocks.predict(&theta);
        (FitProblem::new(blocks, &obs).unwrap(), theta)
    }

    #[test]
    fn exact_naive_fit_recovers_well_posed_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (problem, truth) = toy_problem(&mut rng, 40);
        let basis = TemporalBasis::fourier(3, 1.0).unwrap();
        let schedule = StageSchedule {
            joint: StageSolver::exact(),
            ..StageSchedule::default()
        };
        let fit = fit_naive(&problem, &basis, &schedule).unwrap();
        for (a, b) in fit.theta.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(problem.data_loss(&fit.theta).abs() < 1e-12);
    }

    #[test]
    fn gradient_descent_is_monotone_and_zero_iterations_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (problem, _) = toy_problem(&mut rng, 40);
        let basis = TemporalBasis::fourier(3, 1.0).unwrap();
        let fit = fit_naive(&problem, &basis, &StageSchedule::default()).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1].total <= w[0].total + 1e-15);
        }
        let schedule = StageSchedule {
            stage1: StageSolver::gradient(0),
            ..StageSchedule::default()
        };
        let init = vec![0.25; problem.layout().total()];
        let s1 = fit_stage1(&problem, &init, &schedule).unwrap();
        assert_eq!(s1.theta, init);
    }

    #[test]
    fn stage2_steps_stay_out_of_the_spatial_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (problem, _) = toy_problem(&mut rng, 40);
        let basis = TemporalBasis::fourier(3, 1.0).unwrap();
        let schedule = StageSchedule::default();
        let zeros = vec![0.0; problem.layout().total()];
        let s1 = fit_stage1(&problem, &zeros, &schedule).unwrap();
        let s2 = fit_stage2(&problem, &s1, &basis, &schedule).unwrap();
        let layout = *problem.layout();
        for ch in 0..CHANNELS {
            let (a, _) = layout.split_channel(&s1.theta, ch);
            let (b, dt) = layout.split_channel(&s2.theta, ch);
            assert_eq!(a, b);
            let change = &problem.blocks.temporal * DVector::from_vec(dt);
            let proj = null_projector(&problem.blocks.spatial).unwrap();
            let in_range = &change - proj.apply(&DMatrix::from_column_slice(change.len(), 1, change.as_slice())).unwrap().column(0);
            assert!(in_range.norm() <= 1e-8 * change.norm().max(1e-300));
        }
    }

    #[test]
    fn perfectly_explained_observations_leave_temporal_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mut problem, _) = toy_problem(&mut rng, 40);
        let layout = *problem.layout();
        let mut theta: Vec<f64> = (0..layout.total()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for ch in 0..CHANNELS {
            let (s, t) = layout.split_channel(&theta, ch);
            layout.merge_channel(&mut theta, ch, &s, &vec![0.0; t.len()]);
        }
        let obs = problem.blocks.predict(&theta);
        problem = FitProblem::new(problem.blocks.clone(), &obs).unwrap();
        let basis = TemporalBasis::fourier(3, 1.0).unwrap();
        let schedule = StageSchedule::default();
        let s1 = fit_stage1(&problem, &vec![0.0; layout.total()], &schedule).unwrap();
        let s2 = fit_stage2(&problem, &s1, &basis, &schedule).unwrap();
        for ch in 0..CHANNELS {
            let (_, t) = layout.split_channel(&s2.theta, ch);
            assert!(t.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn tv_majorize_minimize_decreases_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (problem, _) = toy_problem(&mut rng, 40);
        let basis = TemporalBasis::fourier(3, 1.0).unwrap();
        let schedule = StageSchedule {
            joint: StageSolver::gradient(50),
            tv: TvConfig::with_lambda(1e-2),
            ..StageSchedule::default()
        };
        let fit = fit_naive(&problem, &basis, &schedule).unwrap();
        // Skip the start-from-zero record; MM starts at the λ = 0 solution.
        for w in fit.trace[1..].windows(2) {
            assert!(w[1].total <= w[0].total * (1.0 + 1e-9) + 1e-15, "{} {}", w[0].total, w[1].total);
        }
    }
}
