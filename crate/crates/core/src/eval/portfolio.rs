//! Minimum-variance weights under a gross-exposure constraint:
//! `min wᵀΓw  s.t.  Σw = 1, ‖w‖₁ ≤ c₀`.
//!
//! ADMM splits the budget constraint (handled in the quadratic step) from
//! the ℓ₁ ball (handled by projection). The ADMM point then seeds an exact
//! solve of the KKT system on its support and signs, which is kept when it
//! verifies.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, FivarError, Result};
use crate::matutil::{project_psd, SymMatrix};

pub const WEIGHT_SUM_TOL: f64 = 1e-8;
pub const EXPOSURE_TOL: f64 = 1e-6;
pub const KKT_TOL: f64 = 1e-6;
const ADMM_MAX_ITER: usize = 50_000;
const ADMM_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    pub w: DVector<f64>,
}

/// Euclidean projection onto `{x : ‖x‖₁ ≤ radius}`.
pub fn project_l1_ball(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    if v.lp_norm(1) <= radius {
        return v.clone();
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - radius) / (k + 1) as f64;
        if uk > t {
            theta = t;
        } else {
            break;
        }
    }
    v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
}

/// Largest violation of the optimality conditions of the QP at `w`:
/// `2Γw + λ1 + μg = 0` with `g ∈ ∂‖w‖₁`, `μ ≥ 0`, `μ(‖w‖₁ − c₀) = 0`,
/// plus primal feasibility. The multipliers are fitted to `w`.
pub fn kkt_residual(gamma: &SymMatrix, c0: f64, w: &DVector<f64>) -> f64 {
    let p = w.len();
    let grad = gamma.as_matrix() * w * 2.0;
    let l1 = w.lp_norm(1);
    let primal = (w.sum() - 1.0).abs().max((l1 - c0).max(0.0));
    let scale = w.amax().max(1e-300);
    let on: Vec<bool> = (0..p).map(|i| w[i].abs() > 1e-9 * scale).collect();
    let support: Vec<usize> = (0..p).filter(|&i| on[i]).collect();
    let off = || (0..p).filter(|&i| !on[i]);
    let active = l1 >= c0 - 1e-9;
    let first = w[support[0]].signum();
    let one_sign = support.iter().all(|&i| w[i].signum() == first);

    let stationarity = if !active || one_sign {
        // Only λ + sμ is identified on the support.
        let mean = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
        let on_err = support.iter().map(|&i| (grad[i] - mean).abs()).fold(0.0, f64::max);
        let off_err = off()
            .map(|i| {
                let d = grad[i] - mean;
                if !active {
                    d.abs()
                } else {
                    // μ can be taken as large as needed; only the side matters.
                    (-first * d).max(0.0)
                }
            })
            .fold(0.0, f64::max);
        on_err.max(off_err)
    } else {
        // grad_i + λ + μ sign(w_i) = 0 on the support, least squares.
        let a = DMatrix::from_fn(
            support.len(),
            2,
            |k, c| if c == 0 { 1.0 } else { w[support[k]].signum() },
        );
        let b = DVector::from_fn(support.len(), |k, _| -grad[support[k]]);
        let (lambda, mu) = match a.svd(true, true).solve(&b, 1e-14) {
            Ok(x) => (x[0], x[1].max(0.0)),
            Err(_) => (0.0, 0.0),
        };
        let on_err = support
            .iter()
            .map(|&i| (grad[i] + lambda + mu * w[i].signum()).abs())
            .fold(0.0, f64::max);
        let off_err = off()
            .map(|i| ((grad[i] + lambda).abs() - mu).max(0.0))
            .fold(0.0, f64::max);
        on_err.max(off_err)
    };
    primal.max(stationarity)
}

/// Minimizer of `wᵀΓ_S w` on index set `s` subject to `Σw = 1` and, if
/// `signs` is given, `Σ sign_i w_i = c0`.
fn equality_solve(gamma: &DMatrix<f64>, s: &[usize], signs: Option<&[f64]>, c0: f64) -> Option<DVector<f64>> {
    let k = s.len();
    let extra = if signs.is_some() { 2 } else { 1 };
    let mut m = DMatrix::zeros(k + extra, k + extra);
    let mut rhs = DVector::zeros(k + extra);
    for (a, &i) in s.iter().enumerate() {
        for (b, &j) in s.iter().enumerate() {
            m[(a, b)] = 2.0 * gamma[(i, j)];
        }
        m[(a, k)] = 1.0;
        m[(k, a)] = 1.0;
        if let Some(sg) = signs {
            m[(a, k + 1)] = sg[a];
            m[(k + 1, a)] = sg[a];
        }
    }
    rhs[k] = 1.0;
    if signs.is_some() {
        rhs[k + 1] = c0;
    }
    let sol = m.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(sol.rows(0, k).into_owned())
}

fn embed(p: usize, s: &[usize], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(p);
    for (a, &i) in s.iter().enumerate() {
        out[i] = v[a];
    }
    out
}

fn feasible(w: &DVector<f64>, c0: f64) -> bool {
    (w.sum() - 1.0).abs() <= WEIGHT_SUM_TOL && w.lp_norm(1) <= c0 + EXPOSURE_TOL
}

struct Admm {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    m_inv_ones: DVector<f64>,
    ones_m_ones: f64,
    rho: f64,
}

impl Admm {
    fn new(gamma: &DMatrix<f64>) -> Result<Self> {
        let p = gamma.nrows();
        let rho = (gamma.trace() / p as f64).max(1e-12);
        let m = gamma * 2.0 + DMatrix::identity(p, p) * rho;
        let chol = m.cholesky().ok_or_else(|| FivarError::SolverFailed {
            iterations: 0,
            reason: "ADMM system is not positive definite".into(),
        })?;
        let ones = DVector::from_element(p, 1.0);
        let m_inv_ones = chol.solve(&ones);
        let ones_m_ones = m_inv_ones.sum();
        Ok(Admm {
            chol,
            m_inv_ones,
            ones_m_ones,
            rho,
        })
    }

    fn run(&self, c0: f64, start: &DVector<f64>) -> Result<DVector<f64>> {
        let mut z = start.clone();
        let mut u = DVector::zeros(z.len());
        for it in 0..ADMM_MAX_ITER {
            let rhs = (&z - &u) * self.rho;
            let base = self.chol.solve(&rhs);
            let nu = (base.sum() - 1.0) / self.ones_m_ones;
            let w = base - &self.m_inv_ones * nu;
            let z_new = project_l1_ball(&(&w + &u), c0);
            let primal = (&w - &z_new).amax();
            let dual = (&z_new - &z).amax() * self.rho;
            u += &w - &z_new;
            z = z_new;
            if primal < ADMM_TOL && dual < ADMM_TOL {
                return Ok(w);
            }
            if it + 1 == ADMM_MAX_ITER {
                return Err(FivarError::SolverFailed {
                    iterations: ADMM_MAX_ITER,
                    reason: format!("ADMM residuals {primal:e}/{dual:e}"),
                });
            }
        }
        unreachable!()
    }
}

/// Tries to turn an approximate solution into an exact KKT point.
fn polish(gamma: &SymMatrix, c0: f64, approx: &DVector<f64>) -> Option<DVector<f64>> {
    let p = approx.len();
    let g = gamma.as_matrix();
    let scale = approx.amax();
    let support: Vec<usize> = (0..p).filter(|&i| approx[i].abs() > 1e-7 * scale).collect();
    let signs: Vec<f64> = support.iter().map(|&i| approx[i].signum()).collect();
    let mut candidates = Vec::new();
    if let Some(v) = equality_solve(g, &support, Some(&signs), c0) {
        candidates.push(embed(p, &support, &v));
    }
    if let Some(v) = equality_solve(g, &support, None, c0) {
        candidates.push(embed(p, &support, &v));
    }
    candidates
        .into_iter()
        .filter(|w| feasible(w, c0))
        .filter(|w| support.iter().zip(&signs).all(|(&i, s)| w[i] * s >= 0.0))
        .map(|w| (kkt_residual(gamma, c0, &w), w))
        .filter(|(r, _)| *r < 1e-3 * KKT_TOL)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, w)| w)
}

/// Solves the QP for every `c0` in `grid`, reusing the factorization.
pub fn min_variance_curve(gamma: &SymMatrix, grid: &[f64]) -> Result<Vec<PortfolioWeights>> {
    let p = gamma.dim();
    if p == 0 {
        return Err(invalid("empty covariance matrix"));
    }
    if grid.iter().any(|c| !(*c >= 1.0)) {
        return Err(invalid("gross exposure bound must be at least 1"));
    }
    let gamma = project_psd(gamma)?;
    let g = gamma.as_matrix();
    let all: Vec<usize> = (0..p).collect();
    // Budget-only optimum; optimal for every c0 it satisfies.
    let free = equality_solve(g, &all, None, 0.0).filter(|w| kkt_residual(&gamma, f64::INFINITY, w) < 1e-3 * KKT_TOL);
    let mut admm: Option<Admm> = None;
    let mut warm = DVector::from_element(p, 1.0 / p as f64);
    let mut out = Vec::with_capacity(grid.len());
    for &c0 in grid {
        if let Some(w) = free.as_ref().filter(|w| w.lp_norm(1) <= c0) {
            out.push(PortfolioWeights { w: w.clone() });
            continue;
        }
        if admm.is_none() {
            admm = Some(Admm::new(g)?);
        }
        let approx = admm.as_ref().expect("initialized").run(c0, &warm)?;
        warm = approx.clone();
        let w = match polish(&gamma, c0, &approx) {
            Some(w) => w,
            None => {
                // ADMM point repaired onto the budget and ball.
                let z = project_l1_ball(&approx, c0);
                if feasible(&z, c0) {
                    z
                } else if feasible(&approx, c0) {
                    approx
                } else {
                    return Err(FivarError::SolverFailed {
                        iterations: ADMM_MAX_ITER,
                        reason: "no feasible point recovered".into(),
                    });
                }
            }
        };
        out.push(PortfolioWeights { w });
    }
    Ok(out)
}

/// Minimum-variance weights with `‖w‖₁ ≤ c0`. Γ is projected onto the PSD
/// cone first.
pub fn min_variance_weights(gamma: &SymMatrix, c0: f64) -> Result<PortfolioWeights> {
    Ok(min_variance_curve(gamma, &[c0])?.pop().expect("one solution"))
}
