//! Dense linear-algebra helpers shared by the information-geometry and
//! projection modules.
//!
//! Every inversion in the crate goes through [`pinv`], which drops singular
//! values below `PINV_CUTOFF · σ_max`. Numerical rank uses the looser
//! `RANK_THRESHOLD`.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};

/// Relative singular-value cutoff for pseudoinverses.
pub const PINV_CUTOFF: f64 = 1e-10;
/// Relative singular-value threshold below which a direction counts as null.
pub const RANK_THRESHOLD: f64 = 1e-8;
/// Largest square dimension handed to a dense eigen/SVD routine.
pub const MAX_DENSE_DIM: usize = 2000;

fn check_dim(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let d = m.nrows().min(m.ncols());
    if d > MAX_DENSE_DIM {
        return Err(LabError::Numeric(format!(
            "{what}: dimension {d} exceeds the dense cap of {MAX_DENSE_DIM}"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Numeric(format!("{what}: non-finite entry")));
    }
    Ok(())
}

/// Singular value decomposition with singular values sorted descending.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        check_dim(m, "svd")?;
        let (nr, nc) = m.shape();
        if nr == 0 || nc == 0 {
            return Ok(SortedSvd {
                u: DMatrix::zeros(nr, 0),
                singular_values: DVector::zeros(0),
                v_t: DMatrix::zeros(0, nc),
            });
        }
        // Tall matrices: QR first, then a square SVD of R.
        let (u, s, v_t) = if nr > 2 * nc {
            let qr = m.clone().qr();
            let q = qr.q();
            let r = qr.r();
            let svd = r.svd(true, true);
            let u_r = svd.u.ok_or_else(|| LabError::Numeric("svd: no U".into()))?;
            (q * u_r, svd.singular_values, svd.v_t.unwrap())
        } else {
            let svd = m.clone().svd(true, true);
            let u = svd.u.ok_or_else(|| LabError::Numeric("svd: no U".into()))?;
            (u, svd.singular_values, svd.v_t.unwrap())
        };
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
        let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
        let v_sorted = DMatrix::from_fn(order.len(), v_t.ncols(), |i, j| v_t[(order[i], j)]);
        let s_sorted = DVector::from_iterator(order.len(), order.iter().map(|&i| s[i]));
        Ok(SortedSvd {
            u: u_sorted,
            singular_values: s_sorted,
            v_t: v_sorted,
        })
    }

    pub fn max_singular(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values above `rel · σ_max`.
    pub fn rank(&self, rel: f64) -> usize {
        let smax = self.max_singular();
        if smax == 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > rel * smax).count()
    }

    /// Orthonormal basis for the numerical range.
    pub fn range_basis(&self, rel: f64) -> DMatrix<f64> {
        let r = self.rank(rel);
        self.u.columns(0, r).into_owned()
    }

    /// Orthonormal basis (as columns) for the numerical null space of the
    /// row space.
    pub fn null_basis(&self, rel: f64, ncols: usize) -> DMatrix<f64> {
        let r = self.rank(rel);
        // Complete V to a full basis when the SVD was thin.
        let v = self.v_t.transpose();
        let have = v.ncols();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for j in r..have {
            basis.push(v.column(j).into_owned());
        }
        if have < ncols {
            let row_space = v.columns(0, have).into_owned();
            let complement = orthogonal_complement(&row_space, ncols);
            for j in 0..complement.ncols() {
                basis.push(complement.column(j).into_owned());
            }
        }
        if basis.is_empty() {
            DMatrix::zeros(ncols, 0)
        } else {
            DMatrix::from_columns(&basis)
        }
    }

    pub fn pinv(&self, rel: f64) -> DMatrix<f64> {
        let nr = self.u.nrows();
        let nc = self.v_t.ncols();
        let r = self.rank(rel);
        if r == 0 {
            return DMatrix::zeros(nc, nr);
        }
        let mut v = self.v_t.rows(0, r).transpose();
        for (k, mut col) in v.column_iter_mut().enumerate() {
            col /= self.singular_values[k];
        }
        v * self.u.columns(0, r).transpose()
    }
}

/// Complement of an orthonormal column set inside R^n, by Gram-Schmidt
/// against the standard basis.
fn orthogonal_complement(q: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = (0..q.ncols()).map(|j| q.column(j).into_owned()).collect();
    let start = cols.len();
    for i in 0..n {
        if cols.len() == n {
            break;
        }
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&e);
                e -= c * p;
            }
        }
        let norm = e.norm();
        if norm > 1e-8 {
            cols.push(e / norm);
        }
    }
    let extra: Vec<DVector<f64>> = cols.into_iter().skip(start).collect();
    if extra.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&extra)
    }
}

/// Moore-Penrose pseudoinverse with the crate-wide cutoff; also returns the
/// numerical rank under `RANK_THRESHOLD`.
pub fn pinv(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let svd = SortedSvd::new(m)?;
    Ok((svd.pinv(PINV_CUTOFF), svd.rank(RANK_THRESHOLD)))
}

pub fn numerical_rank(m: &DMatrix<f64>) -> Result<usize> {
    Ok(SortedSvd::new(m)?.rank(RANK_THRESHOLD))
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_dim(m, "symmetric eigen")?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigenvalues();
    let mut v: Vec<f64> = eig.iter().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(v)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Relative asymmetry ‖M − Mᵀ‖_F / ‖M‖_F (0 for the zero matrix).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / n
    }
}

/// `AᵀB` without materialising the transpose.
pub fn gram_cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}

pub fn condition_number(eigs_desc: &[f64]) -> f64 {
    match (eigs_desc.first(), eigs_desc.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => f64::NAN,
    }
}
