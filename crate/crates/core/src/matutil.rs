//! Dense symmetric linear algebra shared by the rest of the crate.
//!
//! Everything here is a pure function of its inputs. Matrices are small
//! enough (a few hundred rows at most) that dense `nalgebra` routines are
//! the right tool.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, FivarError, Result};

/// Numerical tolerances used across the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Components with magnitude at or below this are treated as zero when
    /// fixing eigenvector signs.
    pub sign_zero: f64,
    /// Relative floor below which a reference eigenvalue counts as singular.
    pub singular_rel: f64,
    /// Eigenvalue tolerance for PSD checks.
    pub psd: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    sign_zero: 1e-12,
    singular_rel: 1e-14,
    psd: 1e-10,
};

/// A real symmetric matrix. Symmetry is enforced on construction by
/// averaging with the transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Builds a symmetric matrix from `m` as `(m + mᵀ) / 2`.
    ///
    /// Panics if `m` is not square.
    pub fn new(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SymMatrix requires a square matrix");
        let mut out = m;
        let p = out.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        SymMatrix(out)
    }

    /// Fallible constructor for data coming from outside the crate.
    pub fn try_new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(invalid(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::new(m))
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix(DMatrix::zeros(p, p))
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 - &other.0)
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }

    /// Entry-wise mean of a non-empty slice of equally sized matrices.
    pub fn mean(items: &[SymMatrix]) -> Result<SymMatrix> {
        let first = items.first().ok_or_else(|| invalid("mean of empty matrix list"))?;
        let mut acc = DMatrix::zeros(first.dim(), first.dim());
        for m in items {
            check_dim(first.dim(), m.dim())?;
            acc += &m.0;
        }
        Ok(SymMatrix(acc / items.len() as f64))
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Eigenvalues sorted descending with orthonormal, sign-normalized vectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenSystem {
    /// `Σ_k values[k] v_k v_kᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let scaled = &self.vectors * DMatrix::from_diagonal(&self.values);
        SymMatrix::new(scaled * self.vectors.transpose())
    }

    /// First `k` eigenvectors as a p×k matrix.
    pub fn leading_vectors(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }
}

/// Flips `v` so that its first component exceeding `zero` in magnitude is
/// positive.
pub fn normalize_sign(v: &mut [f64], zero: f64) {
    if let Some(first) = v.iter().find(|x| x.abs() > zero) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Symmetric eigendecomposition with descending eigenvalues and the
/// "first nonzero component positive" sign convention.
pub fn eigen_sym(m: &SymMatrix) -> Result<EigenSystem> {
    if !m.is_finite() {
        return Err(invalid("eigen_sym: non-finite matrix entries"));
    }
    let p = m.dim();
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut values = DVector::zeros(p);
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col: Vec<f64> = eig.eigenvectors.column(src).iter().copied().collect();
        normalize_sign(&mut col, TOLERANCES.sign_zero);
        vectors.set_column(dst, &DVector::from_vec(col));
    }
    Ok(EigenSystem { values, vectors })
}

/// Projection onto the PSD cone: negative eigenvalues are clamped to zero.
pub fn project_psd(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = eigen_sym(m)?;
    if eig.values.iter().all(|&v| v >= 0.0) {
        return Ok(m.clone());
    }
    let clamped = EigenSystem {
        values: eig.values.map(|v| v.max(0.0)),
        vectors: eig.vectors,
    };
    Ok(clamped.reconstruct())
}

/// True when every eigenvalue is at least `-tol`.
pub fn is_psd(m: &SymMatrix, tol: f64) -> Result<bool> {
    Ok(eigen_sym(m)?.values.iter().all(|&v| v >= -tol))
}

/// Matrix error norms of `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub frobenius: f64,
    pub max: f64,
    pub spectral: f64,
    pub relative_frobenius: Option<f64>,
}

/// Frobenius, max, spectral and (when `reference` is given) relative
/// Frobenius norm `p^{-1/2} ‖R^{-1/2}(a-b)R^{-1/2}‖_F` of `a - b`.
pub fn matrix_norms(a: &SymMatrix, b: &SymMatrix, reference: Option<&SymMatrix>) -> Result<NormReport> {
    check_dim(a.dim(), b.dim())?;
    let diff = a.sub(b);
    let frobenius = diff.as_matrix().norm();
    let max = diff.as_matrix().amax();
    let spectral = if diff.dim() == 0 {
        0.0
    } else {
        eigen_sym(&diff)?.values.amax()
    };
    let relative_frobenius = match reference {
        None => None,
        Some(r) => {
            check_dim(a.dim(), r.dim())?;
            let root = inverse_sqrt(r)?;
            let scaled = &root * diff.as_matrix() * &root;
            Some(scaled.norm() / (a.dim() as f64).sqrt())
        }
    };
    Ok(NormReport {
        frobenius,
        max,
        spectral,
        relative_frobenius,
    })
}

/// `R^{-1/2}` for a strictly positive definite `R`.
pub fn inverse_sqrt(r: &SymMatrix) -> Result<DMatrix<f64>> {
    let eig = eigen_sym(r)?;
    let top = eig.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let min = eig.values.min();
    if min <= 0.0 || min <= TOLERANCES.singular_rel * top {
        return Err(FivarError::SingularReference { min_eigenvalue: min });
    }
    let d = eig.values.map(|v| 1.0 / v.sqrt());
    let root = &eig.vectors * DMatrix::from_diagonal(&d) * eig.vectors.transpose();
    Ok(SymMatrix::new(root).into_matrix())
}

/// Frobenius, max and spectral norm of a rectangular difference `a - b`.
pub fn rect_norms(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<NormReport> {
    check_dim(a.nrows(), b.nrows())?;
    check_dim(a.ncols(), b.ncols())?;
    let diff = a - b;
    let spectral = if diff.is_empty() {
        0.0
    } else {
        diff.clone().svd(false, false).singular_values.max()
    };
    Ok(NormReport {
        frobenius: diff.norm(),
        max: diff.amax(),
        spectral,
        relative_frobenius: None,
    })
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Largest deviation of `QᵀQ` from the identity.
pub fn orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let gram = q.transpose() * q;
    (gram - DMatrix::identity(q.ncols(), q.ncols())).amax()
}
