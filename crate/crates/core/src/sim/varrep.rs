//! Exact low-frequency VAR(h) implied by the continuous-time eigenvalue
//! dynamics.

use nalgebra::{DMatrix, DVector};

use super::params::FivarParams;
use crate::error::{check_dim, FivarError, Result};

/// Series terms are added until the largest entry of the newest term
/// drops below this.
pub const SERIES_TOL: f64 = 1e-14;
pub const SERIES_MAX_TERMS: usize = 200;

/// `ξ_d = ν + Σ_k A_k ξ_{d-k} + ε_d` with the coefficient matrices used to
/// build it.
#[derive(Debug, Clone)]
pub struct VarRepresentation {
    pub nu: DVector<f64>,
    pub a_mats: Vec<DMatrix<f64>>,
    pub pi1: DMatrix<f64>,
    pub pi2: DMatrix<f64>,
}

impl VarRepresentation {
    /// `(I - Σ A_k)^{-1} ν`.
    pub fn stationary_mean(&self) -> Result<DVector<f64>> {
        let dim = self.nu.len();
        let mut m = DMatrix::identity(dim, dim);
        for a in &self.a_mats {
            m -= a;
        }
        m.lu()
            .solve(&self.nu)
            .ok_or_else(|| FivarError::SingularCoefficient("I - sum(A_k) is singular".into()))
    }

    /// Coefficients stacked as `(ν, A_1, …, A_h)`, one row per series.
    pub fn beta(&self) -> DMatrix<f64> {
        let dim = self.nu.len();
        let h = self.a_mats.len();
        let mut beta = DMatrix::zeros(dim, h * dim + 1);
        beta.set_column(0, &self.nu);
        for (k, a) in self.a_mats.iter().enumerate() {
            beta.columns_mut(1 + k * dim, dim).copy_from(a);
        }
        beta
    }

    /// `ν + Σ_k A_k ξ_{n+1-k}`; `history[0]` is the most recent day.
    pub fn conditional_mean(&self, history: &[DVector<f64>]) -> DVector<f64> {
        let mut out = self.nu.clone();
        for (a, xi) in self.a_mats.iter().zip(history) {
            out += a * xi;
        }
        out
    }
}

/// Computes π₁ = Σ ζ₁ˡ/(l+1)!, π₂ = Σ ζ₁ˡ/(l+2)!, the lag matrices
/// `A_k = (π₁-π₂)ζ_k + π₂ζ_{k+1}` (`A_h = (π₁-π₂)ζ_h`) and
/// `ν = π₁a + Σ_l ζ₁ˡ c_l E[z²]` with `c_l = 1/((l+3)(l+2) l!)`, the
/// closed-form time integral of the fluctuation kernel.
///
/// The power series never inverts ζ₁, so a singular or zero ζ₁ is handled
/// through its limit.
pub fn var_representation(params: &FivarParams, fluct_mean: &DVector<f64>) -> Result<VarRepresentation> {
    let dim = params.dim();
    check_dim(dim, fluct_mean.len())?;
    let zeta1 = params
        .zeta
        .first()
        .ok_or_else(|| FivarError::InvalidInput("no lag coefficient matrices".into()))?;

    let mut pi1 = DMatrix::zeros(dim, dim);
    let mut pi2 = DMatrix::zeros(dim, dim);
    let mut kernel = DMatrix::zeros(dim, dim);
    // power = ζ₁ˡ / l!
    let mut power = DMatrix::identity(dim, dim);
    let mut converged = false;
    for l in 0..SERIES_MAX_TERMS {
        let lf = l as f64;
        let t1 = &power / (lf + 1.0);
        let t2 = &power / ((lf + 1.0) * (lf + 2.0));
        let tk = &power / ((lf + 3.0) * (lf + 2.0));
        pi1 += &t1;
        pi2 += &t2;
        kernel += &tk;
        if t1.amax() < SERIES_TOL && t2.amax() < SERIES_TOL && tk.amax() < SERIES_TOL {
            converged = true;
            break;
        }
        power = (&power * zeta1) / (lf + 1.0);
    }
    if !converged {
        return Err(FivarError::SeriesDiverged {
            terms: SERIES_MAX_TERMS,
        });
    }

    let h = params.zeta.len();
    let diff = &pi1 - &pi2;
    let a_mats = (0..h)
        .map(|k| {
            let mut a = &diff * &params.zeta[k];
            if k + 1 < h {
                a += &pi2 * &params.zeta[k + 1];
            }
            a
        })
        .collect();
    let nu = &pi1 * &params.a + &kernel * fluct_mean;
    Ok(VarRepresentation { nu, a_mats, pi1, pi2 })
}

/// Companion matrix of a VAR(h) with the given lag matrices.
pub fn companion(a_mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let h = a_mats.len();
    if h == 0 {
        return DMatrix::zeros(0, 0);
    }
    let dim = a_mats[0].nrows();
    let mut out = DMatrix::zeros(h * dim, h * dim);
    for (k, a) in a_mats.iter().enumerate() {
        out.view_mut((0, k * dim), (dim, dim)).copy_from(a);
    }
    for k in 1..h {
        out.view_mut((k * dim, (k - 1) * dim), (dim, dim)).fill_with_identity();
    }
    out
}
