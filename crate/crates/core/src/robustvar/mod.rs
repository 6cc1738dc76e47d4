//! Row-wise VAR(h) estimation on eigenvalue series.
//!
//! Factor rows regress on an intercept and the factor lags only, with an
//! unpenalized Huber loss on winsorized regressors. Idiosyncratic rows use
//! all lags, standardized, with Huber loss plus an ℓ₁ penalty whose level is
//! chosen by BIC. Plain LASSO is the same pipeline with τ = ϖ = ∞, and OLS
//! fits the factor rows only.

mod huber;
mod solver;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use huber::{huber_grad, huber_loss, winsorize};
pub use solver::{
    huber_newton, HuberLassoProblem, Solution, KKT_LOOSE_TOL, KKT_TOL, MAX_SWEEPS, NEWTON_GRAD_TOL, NEWTON_MAX_ITER,
    NEWTON_RIDGE, REL_OBJ_TOL,
};

use crate::error::{invalid, FivarError, Result};
use crate::matutil::spectral_radius;
use crate::poet::EigenSeries;
use crate::sim::companion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ols,
    Lasso,
    #[serde(rename = "hlasso")]
    HLasso,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ols, Method::Lasso, Method::HLasso];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Lasso => "lasso",
            Method::HLasso => "hlasso",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = FivarError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(Method::Ols),
            "lasso" => Ok(Method::Lasso),
            "hlasso" | "h-lasso" => Ok(Method::HLasso),
            other => Err(invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// Thirteen log-spaced penalty multipliers from 0.1 to 10.
pub fn default_c_eta_grid() -> Vec<f64> {
    (0..13).map(|k| 10f64.powf(-1.0 + k as f64 / 6.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustConfig {
    pub h: usize,
    pub c_f1: f64,
    pub c_f2: f64,
    pub c_i1: f64,
    pub c_i2: f64,
    pub c_eta_grid: Vec<f64>,
    pub standardize_idio: bool,
    pub penalize_intercept: bool,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            h: 1,
            c_f1: 4.0,
            c_f2: 1.0 / 16.0,
            c_i1: 4.0,
            c_i2: 1.0,
            c_eta_grid: default_c_eta_grid(),
            standardize_idio: true,
            penalize_intercept: false,
        }
    }
}

impl RobustConfig {
    fn check(&self) -> Result<()> {
        if self.h == 0 {
            return Err(invalid("lag order h must be at least 1"));
        }
        let c = [self.c_f1, self.c_f2, self.c_i1, self.c_i2];
        if c.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("tuning multipliers must be positive"));
        }
        if self.c_eta_grid.is_empty() || self.c_eta_grid.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("c_eta grid must be non-empty and positive"));
        }
        Ok(())
    }
}

/// Resolved robustification, truncation and penalty levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tuning {
    pub sigma_f: f64,
    pub tau_f: f64,
    pub varpi_f: f64,
    pub tau_i: f64,
    pub varpi_i: f64,
    pub c_eta: f64,
    pub eta_i: f64,
    /// `(c_eta, BIC)` for every grid value.
    pub bic_path: Vec<(f64, f64)>,
}

/// `(n / log p)^{1/4}`.
pub fn tuning_rate(n: usize, p: usize) -> Result<f64> {
    if p < 2 {
        return Err(invalid("tuning needs p >= 2"));
    }
    Ok((n as f64 / (p as f64).ln()).powf(0.25))
}

/// Levels that do not depend on the BIC search.
pub fn base_levels(series: &EigenSeries, method: Method, cfg: &RobustConfig) -> Result<Tuning> {
    let (n, p, r) = (series.n(), series.p(), series.r());
    let rate = tuning_rate(n, p)?;
    let sigma_f = (series.values.columns(0, r).norm_squared() / (n * r) as f64).sqrt();
    let eta_unit = ((p as f64).ln() / n as f64).sqrt();
    let (tau_f, varpi_f, tau_i, varpi_i) = match method {
        Method::HLasso => {
            if !(sigma_f > 0.0) {
                return Err(invalid("factor eigenvalue series is identically zero"));
            }
            (
                cfg.c_f2 * sigma_f * rate,
                cfg.c_f1 * sigma_f * rate,
                cfg.c_i2 * rate,
                cfg.c_i1 * rate,
            )
        }
        Method::Lasso | Method::Ols => (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY),
    };
    Ok(Tuning {
        sigma_f,
        tau_f,
        varpi_f,
        tau_i,
        varpi_i,
        c_eta: f64::NAN,
        eta_i: eta_unit,
        bic_path: Vec::new(),
    })
}

/// Per-variable location and scale used for the idiosyncratic rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Column means and population standard deviations; constant columns
    /// keep scale 1.
    pub fn from_values(values: &DMatrix<f64>) -> Self {
        let n = values.nrows() as f64;
        let mut mean = Vec::with_capacity(values.ncols());
        let mut scale = Vec::with_capacity(values.ncols());
        for col in values.column_iter() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            scale.push(if sd > 1e-12 * mu.abs().max(1.0) { sd } else { 1.0 });
        }
        Standardization { mean, scale }
    }
}

/// Lagged regression design shared by all rows.
#[derive(Debug, Clone)]
pub struct LagDesign {
    pub h: usize,
    pub r: usize,
    pub dim: usize,
    /// Number of regression observations.
    pub n_obs: usize,
    /// Raw targets, `n_obs × dim`.
    raw_target: DMatrix<f64>,
    /// Raw lags, `n_obs × h·dim`; column `k·dim + j` is lag k+1 of series j.
    raw_lags: DMatrix<f64>,
    pub standardization: Standardization,
}

impl LagDesign {
    /// Targets are days `start..n` (0-based); `start ≥ h`.
    pub fn new(series: &EigenSeries, h: usize, start: usize, standardize: bool) -> Result<Self> {
        let n = series.n();
        let dim = series.dim();
        if h == 0 || start < h || start >= n {
            return Err(invalid(format!(
                "need 1 <= h <= start < n, got h={h}, start={start}, n={n}"
            )));
        }
        let n_obs = n - start;
        let values = &series.values;
        let raw_target = values.rows(start, n_obs).into_owned();
        let mut raw_lags = DMatrix::zeros(n_obs, h * dim);
        for k in 0..h {
            raw_lags
                .columns_mut(k * dim, dim)
                .copy_from(&values.rows(start - 1 - k, n_obs));
        }
        let standardization = if standardize {
            Standardization::from_values(values)
        } else {
            Standardization::identity(dim)
        };
        Ok(LagDesign {
            h,
            r: series.r(),
            dim,
            n_obs,
            raw_target,
            raw_lags,
            standardization,
        })
    }

    /// Factor row `i < r`: intercept plus winsorized raw factor lags.
    pub fn factor_problem(&self, i: usize, varpi: f64) -> (DMatrix<f64>, DVector<f64>) {
        let (h, r, dim) = (self.h, self.r, self.dim);
        let mut x = DMatrix::from_element(self.n_obs, h * r + 1, 1.0);
        for k in 0..h {
            for j in 0..r {
                let src = self.raw_lags.column(k * dim + j);
                x.set_column(1 + k * r + j, &src.map(|v| v.clamp(-varpi, varpi)));
            }
        }
        (x, self.raw_target.column(i).into_owned())
    }

    /// Idiosyncratic row: intercept plus all standardized, winsorized lags.
    pub fn idio_problem(&self, i: usize, varpi: f64) -> (DMatrix<f64>, DVector<f64>) {
        let (mu, sd) = (&self.standardization.mean, &self.standardization.scale);
        let dim = self.dim;
        let mut x = DMatrix::from_element(self.n_obs, self.h * dim + 1, 1.0);
        for c in 0..self.h * dim {
            let j = c % dim;
            let src = self.raw_lags.column(c);
            x.set_column(1 + c, &src.map(|v| ((v - mu[j]) / sd[j]).clamp(-varpi, varpi)));
        }
        let y = self.raw_target.column(i).map(|v| (v - mu[i]) / sd[i]);
        (x, y)
    }

    /// Embeds a compact factor-row solution into a full coefficient row.
    pub fn expand_factor_row(&self, coefs: &DVector<f64>) -> DVector<f64> {
        let mut row = DVector::zeros(self.h * self.dim + 1);
        row[0] = coefs[0];
        for k in 0..self.h {
            for j in 0..self.r {
                row[1 + k * self.dim + j] = coefs[1 + k * self.r + j];
            }
        }
        row
    }

    /// Maps standardized idiosyncratic-row coefficients back to raw units.
    pub fn destandardize(&self, i: usize, b: &DVector<f64>) -> DVector<f64> {
        let (mu, sd) = (&self.standardization.mean, &self.standardization.scale);
        let mut row = DVector::zeros(b.len());
        let mut nu = mu[i] + sd[i] * b[0];
        for c in 0..self.h * self.dim {
            let j = c % self.dim;
            let a = sd[i] * b[1 + c] / sd[j];
            row[1 + c] = a;
            nu -= a * mu[j];
        }
        row[0] = nu;
        row
    }
}

/// Per-row solver report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostics {
    pub objective: f64,
    /// Mean loss without the penalty, in the row's fitting units.
    pub mean_loss: f64,
    pub iterations: usize,
    /// Nonzero slope coefficients (intercept excluded).
    pub active: usize,
    pub optimality: f64,
}

/// Fits factor row `i` by unpenalized Huber regression.
pub fn fit_factor_row(design: &LagDesign, i: usize, tau: f64, varpi: f64) -> Result<(DVector<f64>, RowDiagnostics)> {
    if i >= design.r {
        return Err(invalid(format!("row {i} is not a factor row")));
    }
    let (x, y) = design.factor_problem(i, varpi);
    let sol = huber_newton(&x, &y, tau)?;
    let diag = RowDiagnostics {
        objective: sol.objective,
        mean_loss: sol.objective,
        iterations: sol.iterations,
        active: sol.beta.iter().skip(1).filter(|b| **b != 0.0).count(),
        optimality: sol.residual,
    };
    Ok((design.expand_factor_row(&sol.beta), diag))
}

/// One point of an idiosyncratic row's penalty path, in standardized units.
#[derive(Debug, Clone)]
struct PathPoint {
    beta: DVector<f64>,
    diag: RowDiagnostics,
}

fn idio_path(
    design: &LagDesign,
    i: usize,
    tau: f64,
    varpi: f64,
    etas: &[f64],
    penalize_intercept: bool,
) -> Result<Vec<PathPoint>> {
    let (x, y) = design.idio_problem(i, varpi);
    let mut penalized = vec![true; x.ncols()];
    penalized[0] = penalize_intercept;
    let mut warm: Option<DVector<f64>> = None;
    let mut out = Vec::with_capacity(etas.len());
    for &eta in etas {
        let prob = HuberLassoProblem::new(&x, &y, tau, eta, &penalized)?;
        let sol = prob.solve(warm.as_ref())?;
        let diag = RowDiagnostics {
            objective: sol.objective,
            mean_loss: prob.loss(&sol.beta),
            iterations: sol.iterations,
            active: sol.beta.iter().skip(1).filter(|b| **b != 0.0).count(),
            optimality: sol.residual,
        };
        warm = Some(sol.beta.clone());
        out.push(PathPoint { beta: sol.beta, diag });
    }
    Ok(out)
}

/// Fits idiosyncratic row `i ≥ r` at a fixed penalty; returns raw-unit
/// coefficients.
pub fn fit_idio_row(
    design: &LagDesign,
    i: usize,
    tau: f64,
    varpi: f64,
    eta: f64,
    penalize_intercept: bool,
) -> Result<(DVector<f64>, RowDiagnostics)> {
    if i < design.r || i >= design.dim {
        return Err(invalid(format!("row {i} is not an idiosyncratic row")));
    }
    let mut path = idio_path(design, i, tau, varpi, &[eta], penalize_intercept)?;
    let pt = path.pop().expect("one path point");
    Ok((design.destandardize(i, &pt.beta), pt.diag))
}

fn bic_term(n_obs: usize, diag: &RowDiagnostics) -> f64 {
    let nf = n_obs as f64;
    nf * diag.mean_loss.max(f64::MIN_POSITIVE).ln() + diag.active as f64 * nf.ln()
}

/// Fitted VAR(h) coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct VarFit {
    pub method: Method,
    pub h: usize,
    pub p: usize,
    pub r: usize,
    /// `dim × (h·dim + 1)`; row i is `(ν_i, A_{1,i·}, …, A_{h,i·})`.
    pub beta: DMatrix<f64>,
    /// Whether idiosyncratic rows were estimated (false for OLS, whose
    /// forecasts carry idiosyncratic values forward).
    pub idio_fitted: bool,
    pub standardization: Standardization,
    pub tuning: Option<TuningSummary>,
    /// One entry per fitted row, in row order.
    pub diagnostics: Vec<RowDiagnostics>,
    /// Regression observations per row.
    pub n_obs: usize,
    /// Spectral radius of the companion matrix of the fitted lags.
    pub spectral_radius: f64,
}

/// Serializable subset of [`Tuning`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub tau_f: f64,
    pub varpi_f: f64,
    pub tau_i: f64,
    pub varpi_i: f64,
    pub c_eta: f64,
    pub eta_i: f64,
}

impl VarFit {
    pub fn dim(&self) -> usize {
        self.p + self.r
    }

    pub fn nu(&self) -> DVector<f64> {
        self.beta.column(0).into_owned()
    }

    pub fn a_mats(&self) -> Vec<DMatrix<f64>> {
        let dim = self.dim();
        (0..self.h)
            .map(|k| self.beta.columns(1 + k * dim, dim).into_owned())
            .collect()
    }

    /// Nonzero slope counts of the idiosyncratic rows.
    pub fn idio_active_sizes(&self) -> Vec<usize> {
        if !self.idio_fitted {
            return Vec::new();
        }
        (self.r..self.dim())
            .map(|i| self.beta.row(i).iter().skip(1).filter(|b| **b != 0.0).count())
            .collect()
    }

    pub fn mean_idio_active(&self) -> Option<f64> {
        let sizes = self.idio_active_sizes();
        if sizes.is_empty() {
            None
        } else {
            Some(sizes.iter().sum::<usize>() as f64 / sizes.len() as f64)
        }
    }

    /// `Σ_rows [N·log(mean loss) + active·log N]` over fitted rows.
    pub fn bic(&self) -> f64 {
        self.diagnostics.iter().map(|d| bic_term(self.n_obs, d)).sum()
    }
}

fn penalty_levels(cfg: &RobustConfig, eta_unit: f64) -> Vec<(f64, f64)> {
    let mut grid = cfg.c_eta_grid.clone();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    grid.into_iter().map(|c| (c, c * eta_unit)).collect()
}

struct FullFit {
    fit: VarFit,
    tuning: Tuning,
}

fn fit_full(series: &EigenSeries, method: Method, cfg: &RobustConfig, start: usize) -> Result<FullFit> {
    cfg.check()?;
    series.validate()?;
    let (p, r) = (series.p(), series.r());
    let dim = p + r;
    let h = cfg.h;
    if series.n() <= h {
        return Err(invalid(format!("need more than h={h} days, got {}", series.n())));
    }
    let mut tuning = base_levels(series, method, cfg)?;
    let standardize = cfg.standardize_idio && method != Method::Ols;
    let design = LagDesign::new(series, h, start, standardize)?;

    let factor_rows: Vec<(DVector<f64>, RowDiagnostics)> = (0..r)
        .into_par_iter()
        .map(|i| fit_factor_row(&design, i, tuning.tau_f, tuning.varpi_f))
        .collect::<Result<_>>()?;

    let mut beta = DMatrix::zeros(dim, h * dim + 1);
    let mut diagnostics = Vec::with_capacity(dim);
    for (i, (row, d)) in factor_rows.into_iter().enumerate() {
        beta.set_row(i, &row.transpose());
        diagnostics.push(d);
    }

    let idio_fitted = method != Method::Ols;
    if idio_fitted {
        let levels = penalty_levels(cfg, tuning.eta_i);
        let etas: Vec<f64> = levels.iter().map(|l| l.1).collect();
        let paths: Vec<Vec<PathPoint>> = (r..dim)
            .into_par_iter()
            .map(|i| idio_path(&design, i, tuning.tau_i, tuning.varpi_i, &etas, cfg.penalize_intercept))
            .collect::<Result<_>>()?;
        let bic: Vec<f64> = (0..levels.len())
            .map(|g| paths.iter().map(|path| bic_term(design.n_obs, &path[g].diag)).sum())
            .collect();
        let mut best = 0;
        for g in 1..bic.len() {
            if bic[g] < bic[best] {
                best = g;
            }
        }
        tuning.c_eta = levels[best].0;
        tuning.eta_i = levels[best].1;
        tuning.bic_path = levels.iter().zip(&bic).map(|(l, b)| (l.0, *b)).collect();
        for (off, path) in paths.into_iter().enumerate() {
            let i = r + off;
            let pt = &path[best];
            beta.set_row(i, &design.destandardize(i, &pt.beta).transpose());
            diagnostics.push(pt.diag.clone());
        }
    }

    let fit = VarFit {
        method,
        h,
        p,
        r,
        spectral_radius: spectral_radius(&companion(&split_lags(&beta, h, dim))),
        beta,
        idio_fitted,
        standardization: design.standardization.clone(),
        tuning: Some(TuningSummary {
            tau_f: tuning.tau_f,
            varpi_f: tuning.varpi_f,
            tau_i: tuning.tau_i,
            varpi_i: tuning.varpi_i,
            c_eta: tuning.c_eta,
            eta_i: tuning.eta_i,
        }),
        diagnostics,
        n_obs: design.n_obs,
    };
    Ok(FullFit { fit, tuning })
}

fn split_lags(beta: &DMatrix<f64>, h: usize, dim: usize) -> Vec<DMatrix<f64>> {
    (0..h).map(|k| beta.columns(1 + k * dim, dim).into_owned()).collect()
}

/// Resolves all tuning levels for `method`, including the BIC search over
/// the penalty grid.
pub fn tune(series: &EigenSeries, method: Method, cfg: &RobustConfig) -> Result<Tuning> {
    Ok(fit_full(series, method, cfg, cfg.h)?.tuning)
}

/// Fits the VAR with the given method.
pub fn fit(series: &EigenSeries, method: Method, cfg: &RobustConfig) -> Result<VarFit> {
    Ok(fit_full(series, method, cfg, cfg.h)?.fit)
}

/// Like [`fit`] but with regression targets starting at day `start`, so
/// fits with different lag orders share a sample.
pub fn fit_from(series: &EigenSeries, method: Method, cfg: &RobustConfig, start: usize) -> Result<VarFit> {
    Ok(fit_full(series, method, cfg, start)?.fit)
}

/// Checks a coefficient matrix has the factor-row sparsity pattern.
pub fn has_factor_structure(fit: &VarFit) -> bool {
    let dim = fit.dim();
    (0..fit.r).all(|i| (0..fit.h).all(|k| (fit.r..dim).all(|j| fit.beta[(i, 1 + k * dim + j)] == 0.0)))
}
