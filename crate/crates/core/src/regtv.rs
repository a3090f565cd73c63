//! Temporal total-variation penalty.
//!
//! Every coefficient time course g(t) = Σ_j τ_j ψ_j(t) of a primitive,
//! channel and SH term contributes ∫ (√(g'(t)² + ε²) − ε) dt, integrated
//! with the trapezoid rule on uniform nodes over [0, T].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{TemporalBasis, TemporalKind};
use crate::error::{LabError, Result};
use crate::scene::{ParameterLayout, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub lambda: f64,
    pub nodes: usize,
    pub epsilon: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            lambda: 0.0,
            nodes: 256,
            epsilon: 1e-6,
        }
    }
}

impl TvConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        TvConfig {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LabError::config("tv.lambda", "must be finite and ≥ 0"));
        }
        if self.nodes < 2 {
            return Err(LabError::config("tv.nodes", "need at least 2 quadrature nodes"));
        }
        if !(self.epsilon > 0.0) {
            return Err(LabError::config("tv.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Quadrature nodes, weights and the sampled derivatives of the time-varying
/// basis functions.
#[derive(Debug, Clone)]
pub struct TvOperator {
    pub epsilon: f64,
    pub weights: Vec<f64>,
    /// nodes × varying matrix of ψ_j'(t_q).
    pub derivative: DMatrix<f64>,
}

impl TvOperator {
    pub fn new(basis: &TemporalBasis, cfg: &TvConfig) -> Result<Self> {
        cfg.validate()?;
        if let TemporalKind::BSpline { order } = basis.kind {
            if order < 2 {
                return Err(LabError::config("temporal.order", "TV needs differentiable splines (order ≥ 2)"));
            }
        }
        let q = cfg.nodes;
        let h = basis.horizon / (q - 1) as f64;
        let mut weights = vec![h; q];
        weights[0] *= 0.5;
        weights[q - 1] *= 0.5;
        let v = basis.varying_count();
        let mut derivative = DMatrix::zeros(q, v);
        for i in 0..q {
            let d = basis.varying_derivative_all(h * i as f64);
            for j in 0..v {
                derivative[(i, j)] = d[j];
            }
        }
        Ok(TvOperator {
            epsilon: cfg.epsilon,
            weights,
            derivative,
        })
    }

    pub fn varying(&self) -> usize {
        self.derivative.ncols()
    }

    fn slopes(&self, course: &[f64]) -> Vec<f64> {
        (0..self.weights.len())
            .map(|i| (0..course.len()).map(|j| self.derivative[(i, j)] * course[j]).sum())
            .collect()
    }

    /// Smoothed TV of one coefficient course.
    pub fn course_penalty(&self, course: &[f64]) -> f64 {
        let e = self.epsilon;
        self.slopes(course)
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| w * ((g * g + e * e).sqrt() - e))
            .sum()
    }

    /// Gradient of [`Self::course_penalty`], written into `out`.
    pub fn course_gradient(&self, course: &[f64], out: &mut [f64]) {
        let e = self.epsilon;
        for (i, (g, w)) in self.slopes(course).iter().zip(&self.weights).enumerate() {
            let c = w * g / (g * g + e * e).sqrt();
            for (j, o) in out.iter_mut().enumerate() {
                *o += c * self.derivative[(i, j)];
            }
        }
    }

    /// ∫ g'(t)² dt for one course.
    pub fn course_energy(&self, course: &[f64]) -> f64 {
        self.slopes(course).iter().zip(&self.weights).map(|(g, w)| w * g * g).sum()
    }

    /// Quadratic majorizer of the course penalty at `course`: the matrix
    /// M with Ψ(x) ≤ Ψ(x₀) + ½(xᵀMx − x₀ᵀMx₀).
    pub fn course_majorizer(&self, course: &[f64]) -> DMatrix<f64> {
        let e = self.epsilon;
        let v = self.varying();
        let mut m = DMatrix::zeros(v, v);
        for (i, (g, w)) in self.slopes(course).iter().zip(&self.weights).enumerate() {
            let c = w / (g * g + e * e).sqrt();
            let row = self.derivative.row(i);
            for a in 0..v {
                let ca = c * row[a];
                for b in 0..v {
                    m[(a, b)] += ca * row[b];
                }
            }
        }
        m
    }

    /// Indices of every course within one channel's temporal vector
    /// (layout `k·V·S + j·S + lm`).
    pub fn courses(layout: &ParameterLayout) -> Vec<Vec<usize>> {
        let s = layout.sh_terms;
        let ts = layout.temporal_per_channel();
        let mut out = Vec::with_capacity(layout.primitives * s);
        for k in 0..layout.primitives {
            for lm in 0..s {
                out.push((0..layout.varying).map(|j| k * ts + j * s + lm).collect());
            }
        }
        out
    }

    /// Penalty of one channel's temporal vector.
    pub fn channel_penalty(&self, layout: &ParameterLayout, temporal: &[f64]) -> f64 {
        Self::courses(layout)
            .iter()
            .map(|idx| self.course_penalty(&gather(temporal, idx)))
            .sum()
    }

    pub fn channel_gradient(&self, layout: &ParameterLayout, temporal: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; temporal.len()];
        for idx in Self::courses(layout) {
            let mut g = vec![0.0; idx.len()];
            self.course_gradient(&gather(temporal, &idx), &mut g);
            for (i, v) in idx.iter().zip(g) {
                out[*i] += v;
            }
        }
        out
    }

    /// Block-diagonal majorizer for one channel's temporal vector.
    pub fn channel_majorizer(&self, layout: &ParameterLayout, temporal: &[f64]) -> DMatrix<f64> {
        let n = temporal.len();
        let mut out = DMatrix::zeros(n, n);
        for idx in Self::courses(layout) {
            let m = self.course_majorizer(&gather(temporal, &idx));
            for (a, ia) in idx.iter().enumerate() {
                for (b, ib) in idx.iter().enumerate() {
                    out[(*ia, *ib)] = m[(a, b)];
                }
            }
        }
        out
    }
}

fn gather(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

fn check_theta(layout: &ParameterLayout, theta: &[f64]) -> Result<()> {
    if theta.len() != layout.total() {
        return Err(LabError::Shape(format!(
            "θ has {} entries, layout expects {}",
            theta.len(),
            layout.total()
        )));
    }
    Ok(())
}

/// Ψ(τ) summed over primitives, channels and SH terms.
pub fn tv_penalty(theta: &[f64], layout: &ParameterLayout, basis: &TemporalBasis, cfg: &TvConfig) -> Result<f64> {
    check_theta(layout, theta)?;
    let op = TvOperator::new(basis, cfg)?;
    Ok((0..CHANNELS)
        .map(|ch| op.channel_penalty(layout, &layout.split_channel(theta, ch).1))
        .sum())
}

/// ∂Ψ/∂θ in θ layout (spatial entries are zero).
pub fn tv_gradient(theta: &[f64], layout: &ParameterLayout, basis: &TemporalBasis, cfg: &TvConfig) -> Result<Vec<f64>> {
    check_theta(layout, theta)?;
    let op = TvOperator::new(basis, cfg)?;
    let mut out = vec![0.0; theta.len()];
    for ch in 0..CHANNELS {
        let (_, temporal) = layout.split_channel(theta, ch);
        let g = op.channel_gradient(layout, &temporal);
        layout.merge_channel(&mut out, ch, &vec![0.0; layout.primitives * layout.sh_terms], &g);
    }
    Ok(out)
}

/// Temporal-derivative energy Σ ∫ g'(t)² dt per primitive, summed over
/// channels and SH terms. By SH orthonormality this equals the
/// sphere-integrated ∫∫ (∂c/∂t)² dt dΩ of each primitive.
pub fn derivative_energy(theta: &[f64], layout: &ParameterLayout, basis: &TemporalBasis, nodes: usize) -> Result<Vec<f64>> {
    check_theta(layout, theta)?;
    let op = TvOperator::new(
        basis,
        &TvConfig {
            nodes,
            ..TvConfig::default()
        },
    )?;
    let mut out = vec![0.0; layout.primitives];
    for ch in 0..CHANNELS {
        let (_, temporal) = layout.split_channel(theta, ch);
        for (c, idx) in TvOperator::courses(layout).iter().enumerate() {
            out[c / layout.sh_terms] += op.course_energy(&gather(&temporal, idx));
        }
    }
    Ok(out)
}

/// Total temporal-derivative energy restricted to `[start, end]` (absolute
/// times), trapezoid rule on `nodes` points.
pub fn window_energy(
    theta: &[f64],
    layout: &ParameterLayout,
    basis: &TemporalBasis,
    start: f64,
    end: f64,
    nodes: usize,
) -> Result<f64> {
    check_theta(layout, theta)?;
    if nodes < 2 || !(start < end) {
        return Err(LabError::config("window", "need start < end and at least 2 nodes"));
    }
    let h = (end - start) / (nodes - 1) as f64;
    let derivs: Vec<Vec<f64>> = (0..nodes).map(|i| basis.varying_derivative_all(start + h * i as f64)).collect();
    let mut total = 0.0;
    for ch in 0..CHANNELS {
        let (_, temporal) = layout.split_channel(theta, ch);
        for idx in TvOperator::courses(layout) {
            let course = gather(&temporal, &idx);
            for (i, d) in derivs.iter().enumerate() {
                let g: f64 = d.iter().zip(&course).map(|(a, b)| a * b).sum();
                let w = if i == 0 || i == nodes - 1 { 0.5 * h } else { h };
                total += w * g * g;
            }
        }
    }
    Ok(total)
}

/// Largest peak-to-peak swing over all coefficient courses, sampled on the
/// quadrature nodes.
pub fn max_course_swing(theta: &[f64], layout: &ParameterLayout, basis: &TemporalBasis, nodes: usize) -> Result<f64> {
    check_theta(layout, theta)?;
    if nodes < 2 {
        return Err(LabError::config("nodes", "need at least 2 nodes"));
    }
    let values: Vec<Vec<f64>> = (0..nodes)
        .map(|i| basis.varying_all(basis.horizon * i as f64 / (nodes - 1) as f64))
        .collect();
    let mut swing: f64 = 0.0;
    for ch in 0..CHANNELS {
        let (_, temporal) = layout.split_channel(theta, ch);
        for idx in TvOperator::courses(layout) {
            let course = gather(&temporal, &idx);
            let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                let g: f64 = v.iter().zip(&course).map(|(a, b)| a * b).sum();
                (lo.min(g), hi.max(g))
            });
            swing = swing.max(hi - lo);
        }
    }
    Ok(swing)
}
