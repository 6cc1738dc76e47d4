//! Row-wise solvers: coordinate descent for the ℓ₁-penalized Huber
//! problem and damped Newton for the unpenalized one.

use nalgebra::{DMatrix, DVector};

use super::huber::{huber_grad, huber_loss};
use crate::error::{check_dim, invalid, FivarError, Result};

/// Optimality tolerance on the subgradient residual.
pub const KKT_TOL: f64 = 1e-7;
/// A sweep whose relative objective change is below this counts as
/// converged when the optimality residual is also below [`KKT_LOOSE_TOL`].
pub const REL_OBJ_TOL: f64 = 1e-10;
pub const KKT_LOOSE_TOL: f64 = 1e-6;
pub const MAX_SWEEPS: usize = 10_000;

/// Newton stops when every `|g_j| / (rms(x_j)·rms(ψ(r)))` is below this;
/// the ratio is scale-free, so rescaled data converge to rescaled fits.
pub const NEWTON_GRAD_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 10_000;
pub const NEWTON_RIDGE: f64 = 1e-10;

/// A converged row solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub objective: f64,
    /// Subgradient optimality residual (gradient max-norm when
    /// unpenalized).
    pub residual: f64,
}

/// `(1/N) Σ_d l_τ(y_d - x_dᵀβ) + η Σ_{j penalized} |β_j|`.
///
/// `x` is used as given; winsorize it beforehand.
#[derive(Debug, Clone, Copy)]
pub struct HuberLassoProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub tau: f64,
    pub eta: f64,
    pub penalized: &'a [bool],
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

impl<'a> HuberLassoProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>, tau: f64, eta: f64, penalized: &'a [bool]) -> Result<Self> {
        check_dim(x.nrows(), y.len())?;
        check_dim(x.ncols(), penalized.len())?;
        if x.nrows() == 0 {
            return Err(invalid("regression needs at least one observation"));
        }
        if !(tau > 0.0) || !(eta >= 0.0) {
            return Err(invalid(format!("need tau > 0 and eta >= 0, got {tau} and {eta}")));
        }
        Ok(HuberLassoProblem {
            x,
            y,
            tau,
            eta,
            penalized,
        })
    }

    fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.y - self.x * beta
    }

    /// Smooth part of the objective.
    pub fn loss(&self, beta: &DVector<f64>) -> f64 {
        let r = self.residuals(beta);
        r.iter().map(|v| huber_loss(*v, self.tau)).sum::<f64>() / r.len() as f64
    }

    pub fn penalty(&self, beta: &DVector<f64>) -> f64 {
        self.eta
            * beta
                .iter()
                .zip(self.penalized)
                .filter(|(_, p)| **p)
                .map(|(b, _)| b.abs())
                .sum::<f64>()
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        self.loss(beta) + self.penalty(beta)
    }

    /// Gradient of the smooth part.
    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let psi = self.residuals(beta).map(|v| huber_grad(v, self.tau));
        -(self.x.tr_mul(&psi)) / self.y.len() as f64
    }

    /// Largest violation of the subgradient optimality conditions.
    pub fn kkt_residual(&self, beta: &DVector<f64>) -> f64 {
        let g = self.gradient(beta);
        kkt_from_gradient(&g, beta, self.eta, self.penalized)
    }

    /// Cyclic coordinate descent on a quadratic majorizer of the Huber
    /// loss (its curvature is at most one), with active-set cycling.
    pub fn solve(&self, warm: Option<&DVector<f64>>) -> Result<Solution> {
        let n = self.x.nrows();
        let k = self.x.ncols();
        let nf = n as f64;
        let colsq: Vec<f64> = (0..k).map(|j| self.x.column(j).norm_squared() / nf).collect();
        let mut beta = match warm {
            Some(w) => {
                check_dim(k, w.len())?;
                w.clone()
            }
            None => DVector::zeros(k),
        };
        for j in 0..k {
            if colsq[j] == 0.0 {
                beta[j] = 0.0;
            }
        }
        let mut resid = self.residuals(&beta);
        let all: Vec<usize> = (0..k).collect();
        let mut sweeps = 0usize;
        let mut obj = self.objective(&beta);

        let sweep = |coords: &[usize], beta: &mut DVector<f64>, resid: &mut DVector<f64>| -> f64 {
            let mut max_step = 0.0f64;
            for &j in coords {
                let c = colsq[j];
                if c == 0.0 {
                    continue;
                }
                let col = self.x.column(j);
                let mut g = 0.0;
                for d in 0..n {
                    g -= col[d] * huber_grad(resid[d], self.tau);
                }
                g /= nf;
                let z = beta[j] - g / c;
                let new = if self.penalized[j] { soft(z, self.eta / c) } else { z };
                let delta = new - beta[j];
                if delta != 0.0 {
                    beta[j] = new;
                    resid.axpy(-delta, &col, 1.0);
                    max_step = max_step.max(delta.abs() * c);
                }
            }
            max_step
        };

        loop {
            sweep(&all, &mut beta, &mut resid);
            sweeps += 1;
            let new_obj = self.objective(&beta);
            debug_assert!(
                new_obj <= obj + 1e-12 * obj.abs().max(1.0),
                "objective increased from {obj} to {new_obj}"
            );
            let kkt = self.kkt_residual(&beta);
            let stalled = (obj - new_obj).abs() <= REL_OBJ_TOL * new_obj.abs().max(f64::MIN_POSITIVE);
            obj = new_obj;
            if kkt < KKT_TOL || (stalled && kkt < KKT_LOOSE_TOL) {
                return Ok(Solution {
                    beta,
                    iterations: sweeps,
                    objective: obj,
                    residual: kkt,
                });
            }
            if sweeps >= MAX_SWEEPS {
                return Err(FivarError::SolverFailed {
                    iterations: sweeps,
                    reason: format!("optimality residual {kkt:e} above {KKT_TOL:e}"),
                });
            }
            let active: Vec<usize> = (0..k).filter(|&j| beta[j] != 0.0 || !self.penalized[j]).collect();
            while sweeps < MAX_SWEEPS {
                let step = sweep(&active, &mut beta, &mut resid);
                sweeps += 1;
                if step < 0.1 * KKT_TOL {
                    break;
                }
            }
            // Refresh to keep rounding drift out of the residuals.
            resid = self.residuals(&beta);
        }
    }
}

pub(crate) fn kkt_from_gradient(g: &DVector<f64>, beta: &DVector<f64>, eta: f64, penalized: &[bool]) -> f64 {
    (0..g.len())
        .map(|j| {
            if !penalized[j] {
                g[j].abs()
            } else if beta[j] == 0.0 {
                (g[j].abs() - eta).max(0.0)
            } else {
                (g[j] + eta * beta[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Unpenalized Huber regression by Levenberg-damped Newton steps with
/// Armijo backtracking. A small ridge picks the minimum-norm solution in
/// rank-deficient designs.
pub fn huber_newton(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<Solution> {
    let k = x.ncols();
    let penalized = vec![false; k];
    let prob = HuberLassoProblem::new(x, y, tau, 0.0, &penalized)?;
    let nf = x.nrows() as f64;
    let scale = (0..k).map(|j| x.column(j).norm_squared() / nf).sum::<f64>() / k.max(1) as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let col_rms: Vec<f64> = (0..k).map(|j| (x.column(j).norm_squared() / nf).sqrt()).collect();
    let mut beta = DVector::zeros(k);
    let mut mu = 0.0f64;
    let mut f = prob.loss(&beta);
    // Gradient entries below this are rounding noise (exact interpolation
    // leaves ψ(r) ≈ 0, where the relative test cannot fire).
    let noise = 64.0 * f64::EPSILON * (prob.residuals(&beta).map(|v| huber_grad(v, tau)).norm_squared() / nf).sqrt();
    for it in 0..NEWTON_MAX_ITER {
        let r = prob.residuals(&beta);
        let psi = r.map(|v| huber_grad(v, tau));
        let g = -(x.tr_mul(&psi)) / nf;
        let gmax = g.amax();
        let psi_rms = (psi.norm_squared() / nf).sqrt();
        let rel = (0..k)
            .map(|j| {
                if col_rms[j] > 0.0 {
                    g[j].abs() / (col_rms[j] * psi_rms)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        let at_noise = (0..k).all(|j| g[j].abs() <= noise * col_rms[j]);
        if gmax == 0.0 || rel < NEWTON_GRAD_TOL || at_noise {
            return Ok(Solution {
                beta,
                iterations: it,
                objective: f,
                residual: gmax,
            });
        }
        let mut h = DMatrix::zeros(k, k);
        for d in 0..x.nrows() {
            if r[d].abs() <= tau {
                let row = x.row(d);
                h.ger(1.0 / nf, &row.transpose(), &row.transpose(), 1.0);
            }
        }
        for j in 0..k {
            h[(j, j)] += NEWTON_RIDGE + mu;
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match h.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    mu = (mu * 10.0).max(1e-8 * scale);
                    continue;
                }
            },
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-14 {
            let cand = &beta + &step * t;
            let fc = prob.loss(&cand);
            // Near the optimum the decrease drops below the loss's rounding
            // error; a full Newton step is then taken on the gradient alone.
            let flat = t == 1.0 && fc <= f + 16.0 * f64::EPSILON * f.abs();
            if fc <= f + 1e-4 * t * slope || flat {
                beta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if accepted && t == 1.0 {
            mu *= 0.1;
            if mu < 1e-14 * scale {
                mu = 0.0;
            }
        } else if accepted {
            mu = (mu * 4.0).max(1e-10 * scale);
        } else {
            mu = (mu * 10.0).max(1e-8 * scale);
            if mu > 1e12 * scale {
                return Err(FivarError::SolverFailed {
                    iterations: it,
                    reason: format!("line search failed with gradient {gmax:e}"),
                });
            }
        }
    }
    Err(FivarError::SolverFailed {
        iterations: NEWTON_MAX_ITER,
        reason: "gradient tolerance not reached".into(),
    })
}
