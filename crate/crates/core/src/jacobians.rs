//! Appearance Jacobians of the stacked observation vector.
//!
//! Colour channels share geometry and rendering weights, so the Jacobian of
//! channel c with respect to channel c's coefficients is the same matrix for
//! every c and the full Jacobian is block-diagonal across channels. The
//! blocks below store that shared per-channel matrix once; [`JacobianBlocks::expand`]
//! materialises the full dense form in θ order.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::linalg::{SortedSvd, PINV_CUTOFF};
use crate::render::{opacities, render_clean, ViewRender};
use crate::scene::{CoefficientKind, ObservationDesign, ParameterLayout, SceneGraph, CHANNELS};

/// Channel-shared Jacobian blocks.
///
/// Rows follow the design order (view, pixel). Spatial column `k·S + lm`
/// is ∂C/∂s_lm of primitive k; temporal column `k·V·S + j·S + lm` is the
/// derivative with respect to the j-th time-varying coefficient of term lm.
#[derive(Debug, Clone)]
pub struct JacobianBlocks {
    pub spatial: DMatrix<f64>,
    pub temporal: DMatrix<f64>,
    pub layout: ParameterLayout,
}

/// J_s and J_τ with rendering weights held fixed:
/// ∂C/∂s_lm = ω_k Y_lm(d_k) and ∂C/∂τ_{j,lm} = ω_k ψ_j(t) Y_lm(d_k).
pub fn jacobian_appearance(scene: &SceneGraph, design: &ObservationDesign) -> Result<JacobianBlocks> {
    let layout = scene.layout();
    let s = layout.sh_terms;
    let v = layout.varying;
    let ts = layout.temporal_per_channel();
    let npx = design.pixels.len();
    let alpha = opacities(scene);
    let blocks: Vec<(DMatrix<f64>, DMatrix<f64>)> = design
        .views
        .par_iter()
        .map(|view| {
            let vr = ViewRender::new(scene, view)?;
            let mut js = DMatrix::zeros(npx, layout.primitives * s);
            let mut jt = DMatrix::zeros(npx, layout.primitives * ts);
            for (row, px) in design.pixels.iter().enumerate() {
                for (k, w) in vr.weights(&alpha, *px) {
                    let y = &vr.sh[k];
                    for lm in 0..s {
                        js[(row, k * s + lm)] = w * y[lm];
                    }
                    for j in 0..v {
                        let wp = w * vr.varying[j];
                        for lm in 0..s {
                            jt[(row, k * ts + j * s + lm)] = wp * y[lm];
                        }
                    }
                }
            }
            Ok((js, jt))
        })
        .collect::<Result<_>>()?;
    let rows = design.rows();
    let mut spatial = DMatrix::zeros(rows, layout.primitives * s);
    let mut temporal = DMatrix::zeros(rows, layout.primitives * ts);
    for (i, (js, jt)) in blocks.into_iter().enumerate() {
        spatial.rows_mut(i * npx, npx).copy_from(&js);
        temporal.rows_mut(i * npx, npx).copy_from(&jt);
    }
    Ok(JacobianBlocks {
        spatial,
        temporal,
        layout,
    })
}

impl JacobianBlocks {
    pub fn rows(&self) -> usize {
        self.spatial.nrows()
    }

    /// [J_s, J_τ] for one channel.
    pub fn joint(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows(), self.spatial.ncols() + self.temporal.ncols());
        out.columns_mut(0, self.spatial.ncols()).copy_from(&self.spatial);
        out.columns_mut(self.spatial.ncols(), self.temporal.ncols()).copy_from(&self.temporal);
        out
    }

    /// Predicted channel values J_s·s + J_τ·τ.
    pub fn predict_channel(&self, spatial: &DVector<f64>, temporal: &DVector<f64>) -> DVector<f64> {
        &self.spatial * spatial + &self.temporal * temporal
    }

    /// Predicted observation vector (view, pixel, channel) for θ.
    pub fn predict(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows() * CHANNELS];
        for ch in 0..CHANNELS {
            let (s, t) = self.layout.split_channel(theta, ch);
            let y = self.predict_channel(&DVector::from_vec(s), &DVector::from_vec(t));
            for (row, v) in y.iter().enumerate() {
                out[row * CHANNELS + ch] = *v;
            }
        }
        out
    }

    /// Full dense Jacobian: rows (view, pixel, channel), columns in θ order.
    pub fn expand(&self) -> DMatrix<f64> {
        let l = &self.layout;
        let s = l.sh_terms;
        let ts = l.temporal_per_channel();
        let mut out = DMatrix::zeros(self.rows() * CHANNELS, l.total());
        for k in 0..l.primitives {
            for ch in 0..CHANNELS {
                for idx in 0..s {
                    let col = l.offset(k, ch, CoefficientKind::Spatial, idx);
                    for row in 0..self.rows() {
                        out[(row * CHANNELS + ch, col)] = self.spatial[(row, k * s + idx)];
                    }
                }
                for idx in 0..ts {
                    let col = l.offset(k, ch, CoefficientKind::Temporal, idx);
                    for row in 0..self.rows() {
                        out[(row * CHANNELS + ch, col)] = self.temporal[(row, k * ts + idx)];
                    }
                }
            }
        }
        out
    }
}

/// Column names for the full dense Jacobian, `p{k}_{r|g|b}_{spatial|temporal}_{index}`.
pub fn column_names(layout: &ParameterLayout) -> Vec<String> {
    const NAMES: [&str; CHANNELS] = ["r", "g", "b"];
    (0..layout.total())
        .map(|i| {
            let (k, ch, kind, idx) = layout.describe(i);
            let kind = match kind {
                CoefficientKind::Spatial => "spatial",
                CoefficientKind::Temporal => "temporal",
            };
            format!("p{k}_{}_{kind}_{idx}", NAMES[ch])
        })
        .collect()
}

/// Central finite differences of the clean rendering over every θ entry.
/// Returns the full dense Jacobian (same layout as [`JacobianBlocks::expand`]).
pub fn jacobian_fd(scene: &SceneGraph, design: &ObservationDesign, h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(LabError::Domain(format!("finite-difference step {h} must be positive")));
    }
    let theta = scene.parameters();
    let rows = design.entries();
    let cols: Vec<Vec<f64>> = (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let mut plus = theta.clone();
            plus[j] += h;
            let mut minus = theta.clone();
            minus[j] -= h;
            let a = render_clean(&scene.with_parameters(&plus)?, design)?;
            let b = render_clean(&scene.with_parameters(&minus)?, design)?;
            Ok(a.iter().zip(&b).map(|(p, m)| (p - m) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows, theta.len(), |i, j| cols[j][i]))
}

/// Least-squares attribution J_s ≈ J_τ A.
#[derive(Debug, Clone)]
pub struct Attribution {
    pub matrix: DMatrix<f64>,
    /// ‖J_τ A − J_s‖_F / ‖J_s‖_F; `None` when J_s is identically zero.
    pub residual: Option<f64>,
}

pub fn attribution_matrix(spatial: &DMatrix<f64>, temporal: &DMatrix<f64>) -> Result<Attribution> {
    if temporal.ncols() == 0 {
        return Err(LabError::Shape("attribution needs at least one temporal column".into()));
    }
    if spatial.nrows() != temporal.nrows() {
        return Err(LabError::Shape("J_s and J_τ row counts differ".into()));
    }
    let norm = spatial.norm();
    if norm == 0.0 {
        return Ok(Attribution {
            matrix: DMatrix::zeros(temporal.ncols(), spatial.ncols()),
            residual: None,
        });
    }
    Ok(attribution_with_svd(spatial, temporal, &SortedSvd::new(temporal)?))
}

/// Attribution from a precomputed SVD of `temporal`.
pub(crate) fn attribution_with_svd(spatial: &DMatrix<f64>, temporal: &DMatrix<f64>, svd: &SortedSvd) -> Attribution {
    let norm = spatial.norm();
    let a = svd.pinv(PINV_CUTOFF) * spatial;
    let residual = if norm > 0.0 {
        Some((temporal * &a - spatial).norm() / norm)
    } else {
        None
    };
    Attribution { matrix: a, residual }
}
