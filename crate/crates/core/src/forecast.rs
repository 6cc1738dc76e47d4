//! One-step-ahead eigenvalue forecasts and volatility matrix
//! reconstruction.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Result};
use crate::matutil::SymMatrix;
use crate::poet::EigenSeries;
use crate::robustvar::{fit_from, Method, RobustConfig, VarFit};

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub xi_next: DVector<f64>,
    pub gamma_next: SymMatrix,
    /// Factor part, rank at most r.
    pub psi_next: SymMatrix,
    /// Idiosyncratic part.
    pub sigma_next: SymMatrix,
}

/// `ν̂ + Σ_k Â_k ξ̂_{n+1-k}` on raw values, clamped at zero. Fits without
/// idiosyncratic rows carry the last idiosyncratic values forward.
pub fn predict_eigen(fit: &VarFit, series: &EigenSeries) -> Result<DVector<f64>> {
    check_dim(fit.dim(), series.dim())?;
    check_dim(fit.r, series.r())?;
    let n = series.n();
    if n < fit.h {
        return Err(invalid(format!("need at least h={} days to forecast, got {n}", fit.h)));
    }
    let mut xi = fit.nu();
    for (k, a) in fit.a_mats().iter().enumerate() {
        xi += a * series.day(n - 1 - k);
    }
    if !fit.idio_fitted {
        let last = series.day(n - 1);
        for i in fit.r..fit.dim() {
            xi[i] = last[i];
        }
    }
    Ok(xi.map(|v| v.max(0.0)))
}

/// `Ψ̃ = p Σ_{i≤r} ξ̂_i q̂_i q̂_iᵀ`, `Σ̃ = Σ_{i>r} ξ̂_i q̂_i q̂_iᵀ` and their sum.
pub fn reconstruct(
    xi: &DVector<f64>,
    factor_vectors: &DMatrix<f64>,
    idio_vectors: &DMatrix<f64>,
) -> Result<ForecastResult> {
    let (p, r) = (factor_vectors.nrows(), factor_vectors.ncols());
    check_dim(p, idio_vectors.nrows())?;
    check_dim(p, idio_vectors.ncols())?;
    check_dim(p + r, xi.len())?;
    let scaled_f = factor_vectors * DMatrix::from_diagonal(&xi.rows(0, r).map(|v| v * p as f64));
    let psi = SymMatrix::new(scaled_f * factor_vectors.transpose());
    let scaled_i = idio_vectors * DMatrix::from_diagonal(&xi.rows(r, p).into_owned());
    let sigma = SymMatrix::new(scaled_i * idio_vectors.transpose());
    Ok(ForecastResult {
        xi_next: xi.clone(),
        gamma_next: psi.add(&sigma),
        psi_next: psi,
        sigma_next: sigma,
    })
}

/// Predicts the next eigenvalues and rebuilds the volatility matrix on the
/// series' bases.
pub fn forecast(fit: &VarFit, series: &EigenSeries) -> Result<ForecastResult> {
    let xi = predict_eigen(fit, series)?;
    reconstruct(&xi, &series.factor_vectors, &series.idio_vectors)
}

/// Lag order in `1..=h_max` minimizing BIC, every candidate fitted on the
/// same targets (days `h_max+1..n`). Ties go to the smaller lag.
pub fn select_lag(series: &EigenSeries, h_max: usize, method: Method, cfg: &RobustConfig) -> Result<usize> {
    if h_max == 0 {
        return Err(invalid("h_max must be at least 1"));
    }
    let n = series.n();
    if h_max * series.r() + 1 >= n.saturating_sub(h_max) {
        return Err(invalid(format!(
            "h_max={h_max} leaves the factor rows unidentified with n={n}"
        )));
    }
    let mut best = (f64::INFINITY, 1);
    for h in 1..=h_max {
        let cfg_h = RobustConfig { h, ..cfg.clone() };
        let bic = fit_from(series, method, &cfg_h, h_max)?.bic();
        if bic < best.0 {
            best = (bic, h);
        }
    }
    Ok(best.1)
}
