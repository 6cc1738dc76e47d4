//! Discretized instantaneous eigenvalue paths.
//!
//! Within day d (t = d-1+u, u ∈ (0,1]) every series obeys
//!
//! λ_t = (1-u) λ_{d-1} + Σ_j ζ_{1,ij} ∫_{d-1}^t λ_{s,j} ds
//!       + u (a_i + Σ_{k≥2} Σ_j ζ_{k,ij} ξ_{d-k+1,j}) + (1-u) Z²_{i,t},
//!
//! with Z_{i,t} = z_{i,d-1} (W_{i,t} - W_{i,d-1}). The running integral is
//! accumulated with a trapezoid predictor-corrector step.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use super::params::FivarParams;
use super::seeded_stream;
use crate::error::{invalid, Result};

pub const MIN_STEPS_PER_DAY: usize = 100;

/// Row-compressed sparse matrix; ζ matrices are block diagonal in practice.
#[derive(Debug, Clone)]
pub(crate) struct SparseRows(Vec<Vec<(usize, f64)>>);

impl SparseRows {
    pub(crate) fn from_dense(m: &DMatrix<f64>) -> Self {
        SparseRows(
            (0..m.nrows())
                .map(|i| {
                    (0..m.ncols())
                        .filter(|&j| m[(i, j)] != 0.0)
                        .map(|j| (j, m[(i, j)]))
                        .collect()
                })
                .collect(),
        )
    }

    fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.0) {
            *o = row.iter().map(|&(j, v)| v * x[j]).sum();
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Fluctuation {
    Gaussian,
    StudentT(f64),
}

/// One simulated day.
#[derive(Debug, Clone)]
pub struct DayPath {
    /// (p+r) × (steps+1); column k is λ at u = k/steps.
    pub lambda: DMatrix<f64>,
    /// Trapezoid integral of each row of `lambda`.
    pub xi: DVector<f64>,
}

/// Streams eigenvalue paths one day at a time.
pub struct EigenPathSimulator<'a> {
    params: &'a FivarParams,
    zeta1: SparseRows,
    lagged: Vec<SparseRows>,
    steps: usize,
    lambda_start: DVector<f64>,
    /// Most recent first.
    xi_history: VecDeque<DVector<f64>>,
    fluct: Fluctuation,
    rng_brownian: ChaCha8Rng,
    rng_draws: ChaCha8Rng,
}

impl<'a> EigenPathSimulator<'a> {
    /// Starts from the stationary mean: ξ lags at `(I-ΣA_k)^{-1}ν` and
    /// λ_0 at `a + Σ_k ζ_k E ξ`.
    pub fn new(params: &'a FivarParams, steps: usize, seed: u64) -> Result<Self> {
        let mean_xi = params.stationary_mean()?;
        let mut lambda0 = params.a.clone();
        for z in &params.zeta {
            lambda0 += z * &mean_xi;
        }
        let history = vec![mean_xi; params.h];
        Self::with_initial(params, steps, seed, lambda0, history)
    }

    /// Starts from an explicit λ at time 0 and ξ history (most recent first).
    pub fn with_initial(
        params: &'a FivarParams,
        steps: usize,
        seed: u64,
        lambda0: DVector<f64>,
        xi_history: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if steps < MIN_STEPS_PER_DAY {
            return Err(invalid(format!(
                "steps_per_day must be at least {MIN_STEPS_PER_DAY}, got {steps}"
            )));
        }
        if xi_history.len() != params.h || lambda0.len() != params.dim() {
            return Err(invalid("initial state does not match the parameter dimensions"));
        }
        let fluct = match params.noise_df {
            None => Fluctuation::Gaussian,
            Some(df) if df > 0.0 => Fluctuation::StudentT(df),
            Some(df) => return Err(invalid(format!("invalid degrees of freedom {df}"))),
        };
        Ok(EigenPathSimulator {
            params,
            zeta1: SparseRows::from_dense(&params.zeta[0]),
            lagged: params.zeta[1..].iter().map(SparseRows::from_dense).collect(),
            steps,
            lambda_start: lambda0,
            xi_history: xi_history.into(),
            fluct,
            rng_brownian: seeded_stream(seed, 1),
            rng_draws: seeded_stream(seed, 2),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn draw_z(&mut self) -> f64 {
        match self.fluct {
            Fluctuation::Gaussian => StandardNormal.sample(&mut self.rng_draws),
            Fluctuation::StudentT(df) => StudentT::new(df)
                .expect("validated degrees of freedom")
                .sample(&mut self.rng_draws),
        }
    }

    /// Simulates the next day and advances the state.
    pub fn next_day(&mut self) -> DayPath {
        let dim = self.params.dim();
        let steps = self.steps;
        let dt = 1.0 / steps as f64;
        let sqrt_dt = dt.sqrt();

        let z: Vec<f64> = (0..dim)
            .map(|i| {
                let scale = self.params.fluct_scale[i];
                if scale == 0.0 {
                    0.0
                } else {
                    scale * self.draw_z()
                }
            })
            .collect();

        // Ramp target a + Σ_{k≥2} ζ_k ξ_{d-k+1}.
        let mut ramp: Vec<f64> = self.params.a.iter().copied().collect();
        let mut tmp = vec![0.0; dim];
        for (k, zeta) in self.lagged.iter().enumerate() {
            zeta.mul_into(self.xi_history[k].as_slice(), &mut tmp);
            ramp.iter_mut().zip(&tmp).for_each(|(r, t)| *r += t);
        }

        let start: Vec<f64> = self.lambda_start.iter().copied().collect();
        let mut lambda = DMatrix::zeros(dim, steps + 1);
        lambda.set_column(0, &self.lambda_start);

        let mut integral = vec![0.0; dim];
        let mut brownian = vec![0.0; dim];
        let mut current = start.clone();
        let mut base = vec![0.0; dim];
        let mut trial_int = vec![0.0; dim];
        let mut predicted = vec![0.0; dim];
        let mut coupled = vec![0.0; dim];

        for k in 0..steps {
            let u = (k + 1) as f64 * dt;
            for i in 0..dim {
                if z[i] != 0.0 {
                    let dw: f64 = self.rng_brownian.sample(StandardNormal);
                    brownian[i] += z[i] * sqrt_dt * dw;
                }
                base[i] = (1.0 - u) * start[i] + u * ramp[i] + (1.0 - u) * brownian[i] * brownian[i];
            }
            for i in 0..dim {
                trial_int[i] = integral[i] + dt * current[i];
            }
            self.zeta1.mul_into(&trial_int, &mut coupled);
            for i in 0..dim {
                predicted[i] = (base[i] + coupled[i]).max(0.0);
                integral[i] += 0.5 * dt * (current[i] + predicted[i]);
            }
            self.zeta1.mul_into(&integral, &mut coupled);
            for i in 0..dim {
                current[i] = (base[i] + coupled[i]).max(0.0);
            }
            lambda.column_mut(k + 1).copy_from_slice(&current);
        }

        let xi = trapezoid_rows(&lambda);
        self.lambda_start = DVector::from_vec(current);
        self.xi_history.push_front(xi.clone());
        self.xi_history.truncate(self.params.h);
        DayPath { lambda, xi }
    }
}

/// Trapezoid integral over [0,1] of each row sampled on an even grid.
pub fn trapezoid_rows(samples: &DMatrix<f64>) -> DVector<f64> {
    let n = samples.ncols();
    let dt = 1.0 / (n - 1) as f64;
    DVector::from_fn(samples.nrows(), |i, _| {
        let row = samples.row(i);
        let inner: f64 = row.iter().sum::<f64>() - 0.5 * (row[0] + row[n - 1]);
        inner * dt
    })
}

/// Daily eigenvalue paths and their integrals.
#[derive(Debug, Clone)]
pub struct EigenPaths {
    /// n × (p+r), one row per day.
    pub xi: DMatrix<f64>,
    pub days: Vec<DMatrix<f64>>,
}

/// Simulates `n` days of eigenvalue paths starting at the stationary mean.
pub fn simulate_eigen_paths(params: &FivarParams, n: usize, steps_per_day: usize, seed: u64) -> Result<EigenPaths> {
    let mut sim = EigenPathSimulator::new(params, steps_per_day, seed)?;
    let mut xi = DMatrix::zeros(n, params.dim());
    let mut days = Vec::with_capacity(n);
    for d in 0..n {
        let day = sim.next_day();
        xi.set_row(d, &day.xi.transpose());
        days.push(day.lambda);
    }
    Ok(EigenPaths { xi, days })
}
