//! Fisher information, Schur complements and Cramér–Rao bounds for the
//! spatial/temporal parameter split.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{gram, GramMatrix};
use crate::error::{LabError, Result};
use crate::jacobians::{attribution_with_svd, jacobian_appearance, JacobianBlocks};
use crate::linalg::{condition_number, sym_eigenvalues, symmetrize, SortedSvd, MAX_DENSE_DIM, PINV_CUTOFF, RANK_THRESHOLD};
use crate::render::{add_noise, render_clean};
use crate::scene::{ObservationDesign, SceneGraph};
use crate::seeds::derive_seed;

/// F = [J_s, J_τ]ᵀ[J_s, J_τ] / σ²; the first `split` rows/columns are spatial.
#[derive(Debug, Clone)]
pub struct Fim {
    pub matrix: DMatrix<f64>,
    pub sigma: f64,
    pub split: usize,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(LabError::Domain(format!("noise sigma {sigma} must be positive")));
    }
    Ok(())
}

pub fn fim(spatial: &DMatrix<f64>, temporal: &DMatrix<f64>, sigma: f64) -> Result<Fim> {
    check_sigma(sigma)?;
    if spatial.nrows() != temporal.nrows() {
        return Err(LabError::Shape("J_s and J_τ row counts differ".into()));
    }
    let dim = spatial.ncols() + temporal.ncols();
    if dim > MAX_DENSE_DIM {
        return Err(LabError::Numeric(format!("FIM dimension {dim} exceeds the dense cap of {MAX_DENSE_DIM}")));
    }
    let mut j = DMatrix::zeros(spatial.nrows(), dim);
    j.columns_mut(0, spatial.ncols()).copy_from(spatial);
    j.columns_mut(spatial.ncols(), temporal.ncols()).copy_from(temporal);
    let matrix = symmetrize(&(j.transpose() * &j)) / (sigma * sigma);
    Ok(Fim {
        matrix,
        sigma,
        split: spatial.ncols(),
    })
}

/// FIM of one colour channel (every channel has the same one).
pub fn fim_from_blocks(blocks: &JacobianBlocks, sigma: f64) -> Result<Fim> {
    fim(&blocks.spatial, &blocks.temporal, sigma)
}

impl Fim {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn spatial_dim(&self) -> usize {
        self.split
    }

    pub fn temporal_dim(&self) -> usize {
        self.dim() - self.split
    }

    pub fn ss(&self) -> DMatrix<f64> {
        self.matrix.view((0, 0), (self.split, self.split)).into_owned()
    }

    pub fn st(&self) -> DMatrix<f64> {
        self.matrix.view((0, self.split), (self.split, self.temporal_dim())).into_owned()
    }

    pub fn tt(&self) -> DMatrix<f64> {
        let n = self.temporal_dim();
        self.matrix.view((self.split, self.split), (n, n)).into_owned()
    }

    /// ‖F_sτ‖_F relative to the Frobenius norm of the diagonal blocks.
    pub fn cross_block_ratio(&self) -> f64 {
        let diag = (self.ss().norm_squared() + self.tt().norm_squared()).sqrt();
        if diag == 0.0 {
            0.0
        } else {
            self.st().norm() / diag
        }
    }
}

/// Symmetric pseudoinverse keeping eigenvalues above `cutoff`.
fn sym_pinv(m: &DMatrix<f64>, cutoff: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if n > MAX_DENSE_DIM {
        return Err(LabError::Numeric(format!("dimension {n} exceeds the dense cap of {MAX_DENSE_DIM}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Numeric("non-finite matrix entry".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut out = DMatrix::zeros(n, n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(i);
            out += v * v.transpose() / lambda;
        }
    }
    Ok(symmetrize(&out))
}

fn max_eigen(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.first().copied().unwrap_or(0.0).max(0.0))
}

fn schur(a: &DMatrix<f64>, cross: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() == 0 {
        return Ok(a.clone());
    }
    let b_pinv = sym_pinv(b, PINV_CUTOFF * max_eigen(b)?)?;
    Ok(symmetrize(&(a - cross * b_pinv * cross.transpose())))
}

/// S_s = F_ss − F_sτ F_ττ⁺ F_τs.
pub fn schur_spatial(f: &Fim) -> Result<DMatrix<f64>> {
    schur(&f.ss(), &f.st(), &f.tt())
}

/// S_τ = F_ττ − F_τs F_ss⁺ F_sτ.
pub fn schur_temporal(f: &Fim) -> Result<DMatrix<f64>> {
    schur(&f.tt(), &f.st().transpose(), &f.ss())
}

/// Schur complement computed from the Jacobians: with U an orthonormal basis
/// of range(J_other), S = (J − UUᵀJ)ᵀ(J − UUᵀJ)/σ². Equal to the FIM-based
/// form but free of the cancellation in F_ss − F_sτF_ττ⁺F_τs.
pub fn schur_from_jacobian(own: &DMatrix<f64>, other: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    if other.ncols() == 0 {
        return Ok(symmetrize(&(own.transpose() * own)) / (sigma * sigma));
    }
    Ok(schur_with_svd(own, &SortedSvd::new(other)?, sigma))
}

fn schur_with_svd(own: &DMatrix<f64>, other: &SortedSvd, sigma: f64) -> DMatrix<f64> {
    // σ_min/σ_max of J below √cutoff matches the FIM eigenvalue cutoff.
    let u = other.range_basis(PINV_CUTOFF.sqrt());
    let residual = own - &u * (u.transpose() * own);
    symmetrize(&(residual.transpose() * &residual)) / (sigma * sigma)
}

/// Cramér–Rao bound for one block.
#[derive(Debug, Clone)]
pub struct Bound {
    /// S⁺ (infinite variance along the dropped directions).
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub dimension: usize,
    pub null_dimension: usize,
    pub divergent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub rank: usize,
    pub dimension: usize,
    pub null_dimension: usize,
    pub divergent: bool,
    /// Trace of the pseudoinverse (finite directions only).
    pub finite_trace: f64,
}

impl Bound {
    /// Bound from a Schur complement. Rank and cutoffs are measured against
    /// `reference`, the largest eigenvalue of the block's own information
    /// F_ss or F_ττ, so a complement that collapses uniformly still counts
    /// as rank deficient.
    pub fn from_schur(s: &DMatrix<f64>, reference: f64) -> Result<Bound> {
        let n = s.nrows();
        let eig = sym_eigenvalues(s)?;
        let rank = if reference > 0.0 {
            eig.iter().filter(|&&l| l > RANK_THRESHOLD * reference).count()
        } else {
            0
        };
        let matrix = if reference > 0.0 {
            sym_pinv(s, PINV_CUTOFF * reference)?
        } else {
            DMatrix::zeros(n, n)
        };
        Ok(Bound {
            matrix,
            rank,
            dimension: n,
            null_dimension: n - rank,
            divergent: rank < n,
        })
    }

    pub fn summary(&self) -> BoundSummary {
        BoundSummary {
            rank: self.rank,
            dimension: self.dimension,
            null_dimension: self.null_dimension,
            divergent: self.divergent,
            finite_trace: self.matrix.trace(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Crb {
    pub spatial: Bound,
    pub temporal: Bound,
}

pub fn crb(f: &Fim) -> Result<Crb> {
    Ok(Crb {
        spatial: Bound::from_schur(&schur_spatial(f)?, max_eigen(&f.ss())?)?,
        temporal: Bound::from_schur(&schur_temporal(f)?, max_eigen(&f.tt())?)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichReport {
    pub trials: usize,
    pub sigma: f64,
    pub dimension: usize,
    /// λ_min(Cov_emp − CRB).
    pub min_eigen_difference: f64,
    /// Spectral norm of the CRB.
    pub crb_norm: f64,
    pub empirical_trace: f64,
    pub crb_trace: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative tolerance of the sandwich check, in units of ‖CRB‖.
pub const SANDWICH_TOLERANCE: f64 = 0.1;

/// Monte-Carlo check that the least-squares estimator's covariance dominates
/// the CRB on a well-posed design. Each trial draws fresh noise from its own
/// seed stream and estimates every appearance parameter by least squares.
pub fn crb_sandwich_check(
    scene: &SceneGraph,
    design: &ObservationDesign,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<SandwichReport> {
    if trials < 2 {
        return Err(LabError::config("trials", "need at least 2 Monte-Carlo trials"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(LabError::Domain(format!("noise sigma {sigma} must be ≥ 0")));
    }
    let blocks = jacobian_appearance(scene, design)?;
    let j = blocks.expand();
    let p = j.ncols();
    if p > MAX_DENSE_DIM {
        return Err(LabError::Numeric(format!("parameter count {p} exceeds the dense cap")));
    }
    let svd = SortedSvd::new(&j)?;
    let rank = svd.rank(RANK_THRESHOLD);
    if rank < p {
        return Err(LabError::DegenerateGeometry(format!(
            "design is ill-posed (rank {rank} of {p}); the bound is infinite"
        )));
    }
    if sigma == 0.0 {
        return Ok(SandwichReport {
            trials,
            sigma,
            dimension: p,
            min_eigen_difference: 0.0,
            crb_norm: 0.0,
            empirical_trace: 0.0,
            crb_trace: 0.0,
            tolerance: SANDWICH_TOLERANCE,
            passed: true,
        });
    }
    let pinv = svd.pinv(PINV_CUTOFF);
    let clean = DVector::from_vec(render_clean(scene, design)?);
    let estimates: Vec<DVector<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let y = DVector::from_vec(add_noise(clean.as_slice(), sigma, derive_seed(seed, "crb.trial", i as u64)));
            &pinv * y
        })
        .collect();
    let mean = estimates.iter().fold(DVector::zeros(p), |acc, e| acc + e) / trials as f64;
    let mut cov = DMatrix::zeros(p, p);
    for e in &estimates {
        let d = e - &mean;
        cov += &d * d.transpose();
    }
    cov /= (trials - 1) as f64;
    let f = symmetrize(&(j.transpose() * &j)) / (sigma * sigma);
    let bound = sym_pinv(&f, PINV_CUTOFF * max_eigen(&f)?)?;
    let crb_norm = max_eigen(&bound)?;
    let min_eigen_difference = *sym_eigenvalues(&(&cov - &bound))?.last().unwrap_or(&0.0);
    Ok(SandwichReport {
        trials,
        sigma,
        dimension: p,
        min_eigen_difference,
        crb_norm,
        empirical_trace: cov.trace(),
        crb_trace: bound.trace(),
        tolerance: SANDWICH_TOLERANCE,
        passed: min_eigen_difference > -SANDWICH_TOLERANCE * crb_norm,
    })
}

/// Headline identifiability diagnostics for one design (per colour channel).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfoReport {
    pub sigma: f64,
    pub rows: usize,
    pub spatial_dim: usize,
    pub temporal_dim: usize,
    pub fim_eigenvalues: Vec<f64>,
    pub spatial_block_eigenvalues: Vec<f64>,
    pub temporal_block_eigenvalues: Vec<f64>,
    pub schur_spatial_eigenvalues: Vec<f64>,
    pub schur_temporal_eigenvalues: Vec<f64>,
    pub spatial_bound: BoundSummary,
    pub temporal_bound: BoundSummary,
    /// ‖F_sτ‖ relative to the diagonal blocks.
    pub cross_block_ratio: f64,
    /// Largest normalized inner product between a spatial and a temporal
    /// Jacobian column.
    pub cross_coherence: f64,
    /// Cross-block coherence of the composite basis sampled at the scene
    /// centroid along the design's viewing directions.
    pub basis_coherence: Option<f64>,
    pub attribution_residual: Option<f64>,
    /// λ_min(S_s) / λ_max(F_ss).
    pub collapse_ratio: f64,
    /// Numerical rank of [J_s, J_τ] by direct SVD.
    pub joint_rank: usize,
    pub condition_fim: f64,
    pub condition_spatial_block: f64,
    pub divergent: bool,
}

fn cross_coherence(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let na: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let nb: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();
    let g = a.transpose() * b;
    let mut worst: f64 = 0.0;
    for i in 0..a.ncols() {
        for j in 0..b.ncols() {
            if na[i] > 0.0 && nb[j] > 0.0 {
                worst = worst.max(g[(i, j)].abs() / (na[i] * nb[j]));
            }
        }
    }
    worst.min(1.0)
}

/// Largest normalized Gram entry between a constant-in-time function
/// (n = 0) and a time-varying one.
pub fn basis_cross_coherence(g: &GramMatrix, sh_terms: usize) -> Result<f64> {
    let m = &g.entries;
    let dim = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..sh_terms.min(dim) {
        for j in sh_terms..dim {
            let d = m[(i, i)] * m[(j, j)];
            if d <= 0.0 {
                return Err(LabError::DegenerateBasis(format!(
                    "basis function {} has zero norm under this sampling",
                    if m[(i, i)] <= 0.0 { i } else { j }
                )));
            }
            worst = worst.max(m[(i, j)].abs() / d.sqrt());
        }
    }
    Ok(worst.min(1.0))
}

impl InfoReport {
    pub fn from_blocks(blocks: &JacobianBlocks, sigma: f64, basis_coherence: Option<f64>) -> Result<InfoReport> {
        check_sigma(sigma)?;
        let f = fim_from_blocks(blocks, sigma)?;
        let joint = blocks.joint();
        let ((svd_s, svd_t), svd_joint) = rayon::join(
            || rayon::join(|| SortedSvd::new(&blocks.spatial), || SortedSvd::new(&blocks.temporal)),
            || SortedSvd::new(&joint),
        );
        let (svd_s, svd_t, svd_joint) = (svd_s?, svd_t?, svd_joint?);
        let (s_s, s_t) = if blocks.temporal.ncols() == 0 {
            (symmetrize(&(blocks.spatial.transpose() * &blocks.spatial)) / (sigma * sigma), DMatrix::zeros(0, 0))
        } else {
            (
                schur_with_svd(&blocks.spatial, &svd_t, sigma),
                schur_with_svd(&blocks.temporal, &svd_s, sigma),
            )
        };
        let fss_eig = sym_eigenvalues(&f.ss())?;
        let ftt_eig = sym_eigenvalues(&f.tt())?;
        let fss_max = fss_eig.first().copied().unwrap_or(0.0).max(0.0);
        let ftt_max = ftt_eig.first().copied().unwrap_or(0.0).max(0.0);
        let spatial_bound = Bound::from_schur(&s_s, fss_max)?;
        let temporal_bound = Bound::from_schur(&s_t, ftt_max)?;
        let ss_eig = sym_eigenvalues(&s_s)?;
        let st_eig = sym_eigenvalues(&s_t)?;
        let collapse_ratio = match ss_eig.last() {
            Some(&lo) if fss_max > 0.0 => lo.max(0.0) / fss_max,
            _ => 0.0,
        };
        let attribution_residual = if blocks.temporal.ncols() > 0 {
            attribution_with_svd(&blocks.spatial, &blocks.temporal, &svd_t).residual
        } else {
            None
        };
        let joint_rank = svd_joint.rank(RANK_THRESHOLD);
        let fim_eig = sym_eigenvalues(&f.matrix)?;
        Ok(InfoReport {
            sigma,
            rows: blocks.rows(),
            spatial_dim: f.spatial_dim(),
            temporal_dim: f.temporal_dim(),
            condition_fim: condition_number(&fim_eig),
            condition_spatial_block: condition_number(&fss_eig),
            fim_eigenvalues: fim_eig,
            spatial_block_eigenvalues: fss_eig,
            temporal_block_eigenvalues: ftt_eig,
            schur_spatial_eigenvalues: ss_eig,
            schur_temporal_eigenvalues: st_eig,
            divergent: spatial_bound.divergent,
            spatial_bound: spatial_bound.summary(),
            temporal_bound: temporal_bound.summary(),
            cross_block_ratio: f.cross_block_ratio(),
            cross_coherence: cross_coherence(&blocks.spatial, &blocks.temporal),
            basis_coherence,
            attribution_residual,
            collapse_ratio,
            joint_rank,
        })
    }

    /// Eigenspectra as CSV columns `spectrum,index,value`.
    pub fn spectra_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| LabError::Numeric(format!("csv: {e}"));
        w.write_record(["spectrum", "index", "value"]).map_err(io)?;
        for (name, values) in [
            ("fim", &self.fim_eigenvalues),
            ("spatial_block", &self.spatial_block_eigenvalues),
            ("temporal_block", &self.temporal_block_eigenvalues),
            ("schur_spatial", &self.schur_spatial_eigenvalues),
            ("schur_temporal", &self.schur_temporal_eigenvalues),
        ] {
            for (i, v) in values.iter().enumerate() {
                w.write_record([name.to_string(), i.to_string(), format!("{v:e}")]).map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| LabError::Numeric(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| LabError::Numeric(format!("csv: {e}")))
    }
}

/// Jacobians → FIM → Schur complements → CRB → coherence → attribution →
/// collapse ratio.
pub fn diagnose(scene: &SceneGraph, design: &ObservationDesign, sigma: f64) -> Result<InfoReport> {
    check_sigma(sigma)?;
    let blocks = jacobian_appearance(scene, design)?;
    let centroid = scene.centroid()?;
    let samples = design.direction_samples(&centroid)?;
    let g = gram(&scene.temporal, &scene.sh, &samples, "design directions at the scene centroid")?;
    let basis_coherence = basis_cross_coherence(&g, scene.sh.term_count()).ok();
    InfoReport::from_blocks(&blocks, sigma, basis_coherence)
}
