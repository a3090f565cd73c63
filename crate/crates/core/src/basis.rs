//! Real spherical harmonics (degree ≤ 2), temporal bases and the composite
//! spatio-temporal basis `Z_nlm(t, d) = φ_n(t) · Y_lm(d)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Unit viewing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    /// Normalizes `(x, y, z)`; a zero or non-finite vector is rejected.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(LabError::DegenerateGeometry(format!(
                "cannot normalize direction ({x}, {y}, {z})"
            )));
        }
        Ok(Direction {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_vector(v: &Vector3<f64>) -> Result<Self> {
        Direction::new(v.x, v.y, v.z)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Maximum SH degree handled by the closed forms below.
pub const MAX_SH_DEGREE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShConfig {
    pub max_degree: usize,
}

impl ShConfig {
    pub fn new(max_degree: usize) -> Result<Self> {
        if max_degree > MAX_SH_DEGREE {
            return Err(LabError::Unsupported(format!(
                "SH degree {max_degree} (closed forms exist up to {MAX_SH_DEGREE})"
            )));
        }
        Ok(ShConfig { max_degree })
    }

    /// Number of SH terms, (L+1)².
    pub fn term_count(&self) -> usize {
        (self.max_degree + 1) * (self.max_degree + 1)
    }

    /// Row-major flat index of (l, m): l² + l + m.
    pub fn index(l: usize, m: i32) -> usize {
        ((l * l + l) as i64 + m as i64) as usize
    }

    /// Inverse of [`ShConfig::index`].
    pub fn degree_order(index: usize) -> (usize, i32) {
        let l = (index as f64).sqrt().floor() as usize;
        let m = index as i64 - (l * l + l) as i64;
        (l, m as i32)
    }

    /// All SH values at `d` in row-major (l, m) order.
    pub fn eval_all(&self, d: &Direction) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.term_count());
        for l in 0..=self.max_degree {
            for m in -(l as i32)..=(l as i32) {
                out.push(sh_closed_form(l, m, d));
            }
        }
        out
    }
}

fn sh_closed_form(l: usize, m: i32, d: &Direction) -> f64 {
    let (x, y, z) = (d.x, d.y, d.z);
    match (l, m) {
        (0, 0) => 0.5 * (1.0 / PI).sqrt(),
        (1, -1) => 0.5 * (3.0 / PI).sqrt() * y,
        (1, 0) => 0.5 * (3.0 / PI).sqrt() * z,
        (1, 1) => 0.5 * (3.0 / PI).sqrt() * x,
        (2, -2) => 0.5 * (15.0 / PI).sqrt() * x * y,
        (2, -1) => 0.5 * (15.0 / PI).sqrt() * y * z,
        (2, 0) => 0.25 * (5.0 / PI).sqrt() * (3.0 * z * z - 1.0),
        (2, 1) => 0.5 * (15.0 / PI).sqrt() * x * z,
        (2, 2) => 0.25 * (15.0 / PI).sqrt() * (x * x - y * y),
        _ => unreachable!("validated by caller"),
    }
}

/// Real spherical harmonic Y_l^m at `d`.
pub fn eval_sh(cfg: &ShConfig, l: usize, m: i32, d: &Direction) -> Result<f64> {
    if cfg.max_degree > MAX_SH_DEGREE {
        return Err(LabError::Unsupported(format!("SH degree {}", cfg.max_degree)));
    }
    if l > cfg.max_degree || m.unsigned_abs() as usize > l {
        return Err(LabError::Domain(format!(
            "(l, m) = ({l}, {m}) outside degree {}",
            cfg.max_degree
        )));
    }
    Ok(sh_closed_form(l, m, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemporalKind {
    Fourier,
    BSpline { order: usize },
}

/// Temporal basis φ_0..φ_{N−1} on [0, T].
///
/// Fourier indexing: 0 is the constant 1, index 2k−1 is cos(2πkt/T) and
/// index 2k is sin(2πkt/T), all with unit amplitude. B-splines live on a
/// clamped uniform knot vector and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemporalSpec", into = "TemporalSpec")]
pub struct TemporalBasis {
    pub kind: TemporalKind,
    pub count: usize,
    pub horizon: f64,
    knots: Vec<f64>,
}

/// Serialized form of a [`TemporalBasis`]; knots are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSpec {
    #[serde(flatten)]
    pub kind: TemporalKind,
    pub count: usize,
    pub horizon: f64,
}

impl TryFrom<TemporalSpec> for TemporalBasis {
    type Error = LabError;
    fn try_from(spec: TemporalSpec) -> Result<Self> {
        TemporalBasis::new(spec.kind, spec.count, spec.horizon)
    }
}

impl From<TemporalBasis> for TemporalSpec {
    fn from(b: TemporalBasis) -> Self {
        TemporalSpec {
            kind: b.kind,
            count: b.count,
            horizon: b.horizon,
        }
    }
}

impl TemporalBasis {
    pub fn fourier(count: usize, horizon: f64) -> Result<Self> {
        Self::new(TemporalKind::Fourier, count, horizon)
    }

    pub fn bspline(count: usize, order: usize, horizon: f64) -> Result<Self> {
        Self::new(TemporalKind::BSpline { order }, count, horizon)
    }

    pub fn new(kind: TemporalKind, count: usize, horizon: f64) -> Result<Self> {
        if count < 1 {
            return Err(LabError::config("temporal.count", "must be at least 1"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(LabError::config("temporal.horizon", "must be positive"));
        }
        let knots = match kind {
            TemporalKind::Fourier => Vec::new(),
            TemporalKind::BSpline { order } => {
                if order < 2 {
                    return Err(LabError::config("temporal.order", "B-spline order must be ≥ 2"));
                }
                if count < order {
                    return Err(LabError::config(
                        "temporal.count",
                        format!("B-spline count {count} is below order {order}"),
                    ));
                }
                clamped_uniform_knots(count, order, horizon)
            }
        };
        Ok(TemporalBasis {
            kind,
            count,
            horizon,
            knots,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Single basis value with range checks.
    pub fn eval(&self, n: usize, t: f64) -> Result<f64> {
        self.check(n, t)?;
        Ok(self.eval_all(t)[n])
    }

    /// Single basis derivative with range checks.
    pub fn derivative(&self, n: usize, t: f64) -> Result<f64> {
        self.check(n, t)?;
        Ok(self.derivative_all(t)[n])
    }

    fn check(&self, n: usize, t: f64) -> Result<()> {
        if n >= self.count {
            return Err(LabError::Domain(format!(
                "basis index {n} out of range (count {})",
                self.count
            )));
        }
        if !(0.0..=self.horizon).contains(&t) {
            return Err(LabError::Domain(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// All N basis values at `t` (no range check).
    pub fn eval_all(&self, t: f64) -> Vec<f64> {
        match self.kind {
            TemporalKind::Fourier => {
                let mut out = vec![1.0; self.count];
                for n in 1..self.count {
                    let k = n.div_ceil(2) as f64;
                    let arg = 2.0 * PI * k * t / self.horizon;
                    out[n] = if n % 2 == 1 { arg.cos() } else { arg.sin() };
                }
                out
            }
            TemporalKind::BSpline { order } => {
                let mut out = vec![0.0; self.count];
                let degree = order - 1;
                let span = self.span(t);
                let vals = basis_funs(&self.knots, span, t, degree);
                for (j, v) in vals.into_iter().enumerate() {
                    out[span - degree + j] = v;
                }
                out
            }
        }
    }

    /// All N first derivatives dφ_n/dt at `t`.
    pub fn derivative_all(&self, t: f64) -> Vec<f64> {
        match self.kind {
            TemporalKind::Fourier => {
                let mut out = vec![0.0; self.count];
                for n in 1..self.count {
                    let k = n.div_ceil(2) as f64;
                    let omega = 2.0 * PI * k / self.horizon;
                    let arg = omega * t;
                    out[n] = if n % 2 == 1 {
                        -omega * arg.sin()
                    } else {
                        omega * arg.cos()
                    };
                }
                out
            }
            TemporalKind::BSpline { order } => {
                let mut out = vec![0.0; self.count];
                let p = order - 1;
                if p == 0 {
                    return out;
                }
                let span = self.span(t);
                let lower = basis_funs(&self.knots, span, t, p - 1);
                // lower[j] is N_{span-p+1+j, p-1}; derivative of N_{i,p} is
                // p/(u_{i+p}-u_i) N_{i,p-1} - p/(u_{i+p+1}-u_{i+1}) N_{i+1,p-1}.
                let low = |i: usize| -> f64 {
                    if i + p < span + 1 || i > span {
                        0.0
                    } else {
                        lower[i + p - 1 - span]
                    }
                };
                let u = &self.knots;
                for i in (span - p)..=span {
                    let mut d = 0.0;
                    let den1 = u[i + p] - u[i];
                    if den1 > 0.0 {
                        d += p as f64 / den1 * low(i);
                    }
                    let den2 = u[i + p + 1] - u[i + 1];
                    if den2 > 0.0 {
                        d -= p as f64 / den2 * low(i + 1);
                    }
                    out[i] = d;
                }
                out
            }
        }
    }

    fn span(&self, t: f64) -> usize {
        let TemporalKind::BSpline { order } = self.kind else {
            return 0;
        };
        let degree = order - 1;
        let n = self.count - 1;
        let u = &self.knots;
        if t >= u[n + 1] {
            return n;
        }
        if t <= u[degree] {
            return degree;
        }
        let mut lo = degree;
        let mut hi = n + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < u[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Number of time-varying basis functions, N − 1.
    ///
    /// The constant part of a temporal function is carried by the spatial
    /// coefficients; the remaining N − 1 functions span the time-varying part.
    /// Fourier uses φ_1..φ_{N−1}; B-splines use B_0..B_{N−2}, which together
    /// with the constant span the full spline space.
    pub fn varying_count(&self) -> usize {
        self.count - 1
    }

    pub fn varying_all(&self, t: f64) -> Vec<f64> {
        let all = self.eval_all(t);
        match self.kind {
            TemporalKind::Fourier => all[1..].to_vec(),
            TemporalKind::BSpline { .. } => all[..self.count - 1].to_vec(),
        }
    }

    pub fn varying_derivative_all(&self, t: f64) -> Vec<f64> {
        let all = self.derivative_all(t);
        match self.kind {
            TemporalKind::Fourier => all[1..].to_vec(),
            TemporalKind::BSpline { .. } => all[..self.count - 1].to_vec(),
        }
    }

    /// Full coefficients (α_0..α_{N−1}) of the function
    /// `constant + Σ_j varying[j] · ψ_j(t)`, where ψ are the varying functions.
    pub fn compose(&self, constant: f64, varying: &[f64]) -> Vec<f64> {
        debug_assert_eq!(varying.len(), self.count - 1);
        match self.kind {
            TemporalKind::Fourier => {
                let mut out = Vec::with_capacity(self.count);
                out.push(constant);
                out.extend_from_slice(varying);
                out
            }
            TemporalKind::BSpline { .. } => {
                // Partition of unity: constant = Σ_j constant · B_j.
                let mut out: Vec<f64> = varying.iter().map(|v| v + constant).collect();
                out.push(constant);
                out
            }
        }
    }

    /// Inverse of [`TemporalBasis::compose`].
    pub fn decompose(&self, full: &[f64]) -> (f64, Vec<f64>) {
        debug_assert_eq!(full.len(), self.count);
        match self.kind {
            TemporalKind::Fourier => (full[0], full[1..].to_vec()),
            TemporalKind::BSpline { .. } => {
                let constant = full[self.count - 1];
                let varying = full[..self.count - 1].iter().map(|a| a - constant).collect();
                (constant, varying)
            }
        }
    }
}

fn clamped_uniform_knots(count: usize, order: usize, horizon: f64) -> Vec<f64> {
    let interior = count - order;
    let mut knots = vec![0.0; order];
    for j in 0..interior {
        knots.push(horizon * (j + 1) as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(horizon, order));
    knots
}

/// Non-zero B-spline values N_{span−p..span, p}(t) (Cox–de Boor, triangular form).
fn basis_funs(knots: &[f64], span: usize, t: f64, degree: usize) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let den = right[r + 1] + left[j - r];
            let temp = if den != 0.0 { n[r] / den } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Evaluates Σ α_nlm φ_n(t) Y_lm(d) for each channel.
///
/// `coeffs[ch]` holds N·(L+1)² values, n-major then (l, m) row-major.
pub fn eval_4dsh(
    coeffs: &[Vec<f64>],
    basis: &TemporalBasis,
    cfg: &ShConfig,
    t: f64,
    d: &Direction,
) -> Result<Vec<f64>> {
    let terms = cfg.term_count();
    let expected = basis.count * terms;
    let phi = basis.eval_all(t);
    let y = cfg.eval_all(d);
    coeffs
        .iter()
        .enumerate()
        .map(|(ch, a)| {
            if a.len() != expected {
                return Err(LabError::Shape(format!(
                    "channel {ch}: {} coefficients, expected {expected}",
                    a.len()
                )));
            }
            let mut acc = 0.0;
            for (n, p) in phi.iter().enumerate() {
                let row = &a[n * terms..(n + 1) * terms];
                let inner: f64 = row.iter().zip(&y).map(|(c, v)| c * v).sum();
                acc += p * inner;
            }
            Ok(acc)
        })
        .collect()
}

/// Empirical inner-product matrix of the composite basis over a sampling.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub sampling: String,
}

/// Gram matrix of Z_nlm over `(t, d)` samples, normalized by sample count.
/// Composite index is n·(L+1)² + lm.
pub fn gram(
    basis: &TemporalBasis,
    cfg: &ShConfig,
    samples: &[(f64, Direction)],
    sampling: impl Into<String>,
) -> Result<GramMatrix> {
    if samples.is_empty() {
        return Err(LabError::Domain("gram: empty sampling".into()));
    }
    let terms = cfg.term_count();
    let dim = basis.count * terms;
    let mut z = DMatrix::zeros(samples.len(), dim);
    for (row, (t, d)) in samples.iter().enumerate() {
        let phi = basis.eval_all(*t);
        let y = cfg.eval_all(d);
        for (n, p) in phi.iter().enumerate() {
            for (lm, v) in y.iter().enumerate() {
                z[(row, n * terms + lm)] = p * v;
            }
        }
    }
    let mut g = (z.transpose() * &z) / samples.len() as f64;
    // Symmetric up to summation order; force exact symmetry.
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        entries: g,
        sampling: sampling.into(),
    })
}

/// Largest absolute off-diagonal entry of the diagonally normalized Gram.
pub fn coherence(g: &GramMatrix) -> Result<f64> {
    let m = &g.entries;
    if m.nrows() != m.ncols() {
        return Err(LabError::Shape("coherence: Gram matrix not square".into()));
    }
    let diag: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)]).collect();
    if let Some(i) = diag.iter().position(|&v| v <= 0.0) {
        return Err(LabError::DegenerateBasis(format!(
            "basis function {i} has zero norm under this sampling"
        )));
    }
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            let c = m[(i, j)].abs() / (diag[i] * diag[j]).sqrt();
            worst = worst.max(c);
        }
    }
    Ok(worst.min(1.0))
}

/// Deterministic near-uniform sphere points (Fibonacci lattice).
pub fn fibonacci_sphere(count: usize) -> Vec<Direction> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Direction::new(r * phi.cos(), r * phi.sin(), z).expect("unit by construction")
        })
        .collect()
}

/// Uniform random directions on the sphere.
pub fn uniform_sphere<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<Direction> {
    (0..count)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let r = (1.0 - z * z).max(0.0).sqrt();
            Direction::new(r * phi.cos(), r * phi.sin(), z).expect("unit by construction")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg2() -> ShConfig {
        ShConfig::new(2).unwrap()
    }

    #[test]
    fn sh_closed_form_examples() {
        let cfg = cfg2();
        let any = Direction::new(0.3, -0.2, 0.9).unwrap();
        assert_abs_diff_eq!(eval_sh(&cfg, 0, 0, &any).unwrap(), 0.28209479, epsilon = 1e-8);
        let up = Direction::new(0.0, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(eval_sh(&cfg, 1, 0, &up).unwrap(), 0.48860251, epsilon = 1e-8);
        let ex = Direction::new(1.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(eval_sh(&cfg, 2, 0, &ex).unwrap(), -0.31539157, epsilon = 1e-8);
    }

    #[test]
    fn sh_rejects_bad_indices_and_degrees() {
        let cfg = ShConfig::new(1).unwrap();
        let d = Direction::new(0.0, 0.0, 1.0).unwrap();
        assert!(matches!(eval_sh(&cfg, 2, 0, &d), Err(LabError::Domain(_))));
        assert!(matches!(eval_sh(&cfg, 1, 2, &d), Err(LabError::Domain(_))));
        assert!(matches!(ShConfig::new(3), Err(LabError::Unsupported(_))));
    }

    #[test]
    fn index_round_trip() {
        for idx in 0..9 {
            let (l, m) = ShConfig::degree_order(idx);
            assert_eq!(ShConfig::index(l, m), idx);
        }
        assert_eq!(ShConfig::degree_order(4), (2, -2));
    }

    #[test]
    fn fourier_examples() {
        let b = TemporalBasis::fourier(3, 1.0).unwrap();
        assert_eq!(b.eval(0, 0.37).unwrap(), 1.0);
        assert_eq!(b.eval(1, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(b.eval(2, 0.25).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(b.eval(3, 0.0), Err(LabError::Domain(_))));
        assert!(matches!(b.eval(0, 1.5), Err(LabError::Domain(_))));
    }

    #[test]
    fn bspline_partition_of_unity_at_random_times() {
        let b = TemporalBasis::bspline(16, 4, 2.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.0..=2.5);
            let sum: f64 = b.eval_all(t).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
        for t in [0.0, 2.5] {
            assert_abs_diff_eq!(b.eval_all(t).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn bspline_rejects_invalid_configs() {
        assert!(TemporalBasis::bspline(3, 4, 1.0).is_err());
        assert!(TemporalBasis::bspline(5, 1, 1.0).is_err());
        assert!(TemporalBasis::fourier(0, 1.0).is_err());
        assert!(TemporalBasis::fourier(4, 0.0).is_err());
    }

    fn fd_check(b: &TemporalBasis) {
        let h = 1e-6;
        for &t in &[0.11, 0.37, 0.53, 0.83] {
            let t = t * b.horizon;
            let d = b.derivative_all(t);
            let p = b.eval_all(t + h);
            let m = b.eval_all(t - h);
            for n in 0..b.count {
                let fd = (p[n] - m[n]) / (2.0 * h);
                assert!((fd - d[n]).abs() < 1e-5 * (1.0 + d[n].abs()), "n={n} t={t}: {fd} vs {}", d[n]);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        fd_check(&TemporalBasis::fourier(7, 2.0).unwrap());
        fd_check(&TemporalBasis::bspline(9, 4, 2.0).unwrap());
        fd_check(&TemporalBasis::bspline(6, 3, 1.0).unwrap());
        fd_check(&TemporalBasis::bspline(5, 2, 1.0).unwrap());
    }

    #[test]
    fn compose_round_trips_and_reproduces_function() {
        for b in [
            TemporalBasis::fourier(6, 1.0).unwrap(),
            TemporalBasis::bspline(8, 4, 1.0).unwrap(),
        ] {
            let varying: Vec<f64> = (0..b.varying_count()).map(|i| (i as f64 * 0.7).sin()).collect();
            let full = b.compose(0.4, &varying);
            let (c, v) = b.decompose(&full);
            assert_abs_diff_eq!(c, 0.4, epsilon = 1e-15);
            for (a, e) in v.iter().zip(&varying) {
                assert_abs_diff_eq!(a, e, epsilon = 1e-14);
            }
            for &t in &[0.0, 0.3, 0.77, 1.0] {
                let lhs: f64 = b.eval_all(t).iter().zip(&full).map(|(p, a)| p * a).sum();
                let rhs: f64 =
                    0.4 + b.varying_all(t).iter().zip(&varying).map(|(p, a)| p * a).sum::<f64>();
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn eval_4dsh_examples() {
        let cfg = ShConfig::new(1).unwrap();
        let b = TemporalBasis::fourier(3, 1.0).unwrap();
        let mut a = vec![0.0; 12];
        a[0] = 1.0;
        let d = Direction::new(0.2, 0.5, -0.1).unwrap();
        let c = eval_4dsh(&[a.clone()], &b, &cfg, 0.3, &d).unwrap();
        assert_abs_diff_eq!(c[0], 0.28209479, epsilon = 1e-8);
        let zero = eval_4dsh(&[vec![0.0; 12]], &b, &cfg, 0.3, &d).unwrap();
        assert_eq!(zero[0], 0.0);
        let bad = eval_4dsh(&[vec![0.0; 11]], &b, &cfg, 0.3, &d);
        assert!(matches!(bad, Err(LabError::Shape(_))));
    }

    proptest! {
        #[test]
        fn eval_4dsh_is_linear(
            coeffs in prop::collection::vec(-2.0f64..2.0, 12),
            other in prop::collection::vec(-2.0f64..2.0, 12),
            t in 0.0f64..1.0,
            (x, y, z) in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
        ) {
            let cfg = ShConfig::new(1).unwrap();
            let b = TemporalBasis::fourier(3, 1.0).unwrap();
            let d = Direction::new(x, y, z).unwrap();
            let mix: Vec<f64> = coeffs.iter().zip(&other).map(|(p, q)| 2.0 * p - 0.5 * q).collect();
            let lhs = eval_4dsh(&[mix], &b, &cfg, t, &d).unwrap()[0];
            let a = eval_4dsh(&[coeffs], &b, &cfg, t, &d).unwrap()[0];
            let c = eval_4dsh(&[other], &b, &cfg, t, &d).unwrap()[0];
            prop_assert!((lhs - (2.0 * a - 0.5 * c)).abs() < 1e-12);
        }

        #[test]
        fn direction_constructor_normalizes(x in -5.0f64..5.0, y in -5.0f64..5.0, z in 0.01f64..5.0) {
            let d = Direction::new(x, y, z).unwrap();
            prop_assert!((d.x * d.x + d.y * d.y + d.z * d.z - 1.0).abs() < 1e-12);
        }

        #[test]
        fn gram_is_symmetric_psd(seed in 0u64..1000, n in 1usize..40) {
            let cfg = ShConfig::new(1).unwrap();
            let b = TemporalBasis::fourier(4, 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dirs = uniform_sphere(&mut rng, n);
            let samples: Vec<(f64, Direction)> =
                dirs.into_iter().map(|d| (rng.random_range(0.0..1.0), d)).collect();
            let g = gram(&b, &cfg, &samples, "random").unwrap();
            prop_assert_eq!(&g.entries, &g.entries.transpose());
            let eig = crate::linalg::sym_eigenvalues(&g.entries).unwrap();
            prop_assert!(*eig.last().unwrap() >= -1e-8 * eig[0]);
        }
    }

    #[test]
    fn single_sample_gram_is_rank_one_with_unit_coherence() {
        let cfg = ShConfig::new(1).unwrap();
        let b = TemporalBasis::fourier(3, 1.0).unwrap();
        let d = Direction::new(0.3, 0.4, 0.5).unwrap();
        let g = gram(&b, &cfg, &[(0.1, d)], "single").unwrap();
        assert_eq!(crate::linalg::numerical_rank(&g.entries).unwrap(), 1);
        assert_abs_diff_eq!(coherence(&g).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_gram_has_zero_coherence_and_zero_diagonal_is_rejected() {
        let g = GramMatrix {
            entries: DMatrix::identity(4, 4),
            sampling: "identity".into(),
        };
        assert_eq!(coherence(&g).unwrap(), 0.0);
        let mut bad = g.clone();
        bad.entries[(2, 2)] = 0.0;
        assert!(matches!(coherence(&bad), Err(LabError::DegenerateBasis(_))));
        assert!(gram(&TemporalBasis::fourier(2, 1.0).unwrap(), &cfg2(), &[], "none").is_err());
    }

    #[test]
    fn serde_round_trip_rebuilds_knots() {
        let b = TemporalBasis::bspline(8, 4, 2.0).unwrap();
        let text = serde_json::to_string(&b).unwrap();
        let back: TemporalBasis = serde_json::from_str(&text).unwrap();
        assert_eq!(back, b);
        let bad = r#"{"kind":"b_spline","order":4,"count":2,"horizon":1.0}"#;
        assert!(serde_json::from_str::<TemporalBasis>(bad).is_err());
    }

    #[test]
    fn sh_addition_theorem() {
        let cfg = cfg2();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in uniform_sphere(&mut rng, 1000) {
            let y = cfg.eval_all(&d);
            for l in 0..=2usize {
                let sum: f64 = (-(l as i32)..=l as i32).map(|m| y[ShConfig::index(l, m)].powi(2)).sum();
                assert_abs_diff_eq!(sum, (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn sh_monte_carlo_orthonormality() {
        let cfg = cfg2();
        let samples = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut acc = DMatrix::<f64>::zeros(9, 9);
        for d in uniform_sphere(&mut rng, samples) {
            let y = DVector::from_vec(cfg.eval_all(&d));
            acc += &y * y.transpose();
        }
        let integral = acc * (4.0 * std::f64::consts::PI / samples as f64);
        let tol = 3.0 / (samples as f64).sqrt();
        for i in 0..9 {
            for j in 0..9 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((integral[(i, j)] - expected).abs() < tol, "({i},{j}) = {}", integral[(i, j)]);
            }
        }
    }

    #[test]
    fn fourier_trapezoid_orthogonality() {
        let b = TemporalBasis::fourier(16, 2.0).unwrap();
        let nodes = 512;
        let h = b.horizon / nodes as f64;
        let mut g = DMatrix::<f64>::zeros(16, 16);
        for i in 0..=nodes {
            let w = if i == 0 || i == nodes { 0.5 * h } else { h };
            let phi = DVector::from_vec(b.eval_all(i as f64 * h));
            g += &phi * phi.transpose() * w;
        }
        for i in 0..16 {
            for j in 0..16 {
                if i != j {
                    assert!(g[(i, j)].abs() < 1e-8 * (g[(i, i)] * g[(j, j)]).sqrt());
                }
            }
        }
    }

    #[test]
    fn fibonacci_points_are_unit() {
        for d in fibonacci_sphere(50) {
            assert_abs_diff_eq!(d.as_vector().norm(), 1.0, epsilon = 1e-12);
        }
    }
}
