//! Low-rank plus sparse decomposition of daily volatility matrices and
//! extraction of eigenvalue series against a fixed eigenvector basis.
//!
//! The work splits into a per-day stage (eigendecompose, remove the top
//! principal components, threshold the residual) and a window stage
//! (estimate the bases from the last `l` days and project every day onto
//! them). Rolling backtests reuse the per-day stage across windows.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, FivarError, Result};
use crate::matutil::{eigen_sym, SymMatrix};
use crate::rv::VolMatrixSeries;

/// Off-diagonal rule applied to the residual matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScheme {
    /// `x - sign(x)·υ_ij` when `|x| > υ_ij`, else 0.
    Soft,
    /// `x` when `|x| > υ_ij`, else 0.
    Hard,
    /// Keep entries within a sector untouched and zero the rest;
    /// `sectors[i]` is the sector id of asset i.
    SectorHard { sectors: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoetConfig {
    pub rank: usize,
    pub scheme: ThresholdScheme,
    /// Relative thresholding level υ_m; entry (i,j) uses
    /// `υ_m·√(Σ̄_ii Σ̄_jj)`.
    pub upsilon: f64,
    /// Number of trailing days whose mean gives the eigenvector bases.
    pub eigen_window: usize,
}

impl PoetConfig {
    fn check(&self, p: usize) -> Result<()> {
        if self.rank == 0 || self.rank >= p {
            return Err(invalid(format!("rank {} must satisfy 1 <= r < p = {p}", self.rank)));
        }
        if !(self.upsilon >= 0.0) {
            return Err(invalid("thresholding level must be non-negative"));
        }
        if self.eigen_window == 0 {
            return Err(invalid("eigenvector window must be positive"));
        }
        if let ThresholdScheme::SectorHard { sectors } = &self.scheme {
            check_dim(p, sectors.len())?;
        }
        Ok(())
    }
}

/// Daily eigenvalue series with the bases used to extract them.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSeries {
    /// p×r.
    pub factor_vectors: DMatrix<f64>,
    /// p×p.
    pub idio_vectors: DMatrix<f64>,
    /// n×(p+r). Factor columns hold `q̂ᵀΓ̂q̂/p`, idiosyncratic columns
    /// `q̂ᵀΣ̂q̂`.
    pub values: DMatrix<f64>,
    pub idio_matrices: Option<Vec<SymMatrix>>,
}

impl EigenSeries {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.factor_vectors.nrows()
    }

    pub fn r(&self) -> usize {
        self.factor_vectors.ncols()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, r) = (self.p(), self.r());
        check_dim(p, self.idio_vectors.nrows())?;
        check_dim(p, self.idio_vectors.ncols())?;
        check_dim(p + r, self.values.ncols())?;
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite eigenvalue"));
        }
        Ok(())
    }

    /// Row `d` as a column vector.
    pub fn day(&self, d: usize) -> DVector<f64> {
        self.values.row(d).transpose()
    }

    /// Keeps days `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> EigenSeries {
        EigenSeries {
            factor_vectors: self.factor_vectors.clone(),
            idio_vectors: self.idio_vectors.clone(),
            values: self.values.rows(start, end - start).into_owned(),
            idio_matrices: self.idio_matrices.as_ref().map(|m| m[start..end].to_vec()),
        }
    }
}

/// Result of the per-day stage.
#[derive(Debug, Clone)]
pub struct DayDecomposition {
    /// Top-r eigenvalues of Γ̂_d (not divided by p).
    pub top_values: DVector<f64>,
    /// p×r.
    pub top_vectors: DMatrix<f64>,
    /// Thresholded idiosyncratic matrix Σ̂_d.
    pub sigma: SymMatrix,
}

impl DayDecomposition {
    /// POET estimate of the day's volatility matrix: leading principal
    /// components plus the thresholded residual.
    pub fn estimate(&self) -> SymMatrix {
        let scaled = &self.top_vectors * DMatrix::from_diagonal(&self.top_values);
        SymMatrix::new(scaled * self.top_vectors.transpose() + self.sigma.as_matrix())
    }
}

/// Residual after removing the top-r principal components, plus those
/// components.
fn residual(gamma: &SymMatrix, r: usize) -> Result<(DVector<f64>, DMatrix<f64>, SymMatrix)> {
    let eig = eigen_sym(gamma)?;
    let values = eig.values.rows(0, r).into_owned();
    let vectors = eig.leading_vectors(r);
    let low = &vectors * DMatrix::from_diagonal(&values) * vectors.transpose();
    Ok((values, vectors, SymMatrix::new(gamma.as_matrix() - low)))
}

/// Adaptive entry-wise thresholding of a residual matrix.
pub fn threshold_residual(resid: &SymMatrix, scheme: &ThresholdScheme, upsilon: f64) -> SymMatrix {
    let p = resid.dim();
    let diag: Vec<f64> = (0..p).map(|i| resid[(i, i)].max(0.0)).collect();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        out[(i, i)] = diag[i];
        for j in 0..i {
            let x = resid[(i, j)];
            let v = match scheme {
                ThresholdScheme::SectorHard { sectors } => {
                    if sectors[i] == sectors[j] {
                        x
                    } else {
                        0.0
                    }
                }
                ThresholdScheme::Soft | ThresholdScheme::Hard => {
                    let level = upsilon * (diag[i] * diag[j]).sqrt();
                    if x.abs() <= level {
                        0.0
                    } else if *scheme == ThresholdScheme::Soft {
                        x - x.signum() * level
                    } else {
                        x
                    }
                }
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    SymMatrix::new(out)
}

/// Per-day stage for one matrix.
pub fn decompose_day(gamma: &SymMatrix, cfg: &PoetConfig) -> Result<DayDecomposition> {
    cfg.check(gamma.dim())?;
    let (top_values, top_vectors, resid) = residual(gamma, cfg.rank)?;
    Ok(DayDecomposition {
        top_values,
        top_vectors,
        sigma: threshold_residual(&resid, &cfg.scheme, cfg.upsilon),
    })
}

/// Per-day stage for a whole series.
pub fn decompose_days(series: &VolMatrixSeries, cfg: &PoetConfig) -> Result<Vec<DayDecomposition>> {
    if series.is_empty() {
        return Err(invalid("empty volatility matrix series"));
    }
    series.validate()?;
    cfg.check(series.dim())?;
    series.matrices.par_iter().map(|g| decompose_day(g, cfg)).collect()
}

/// `diag(Qᵀ M Q)`.
fn projected_diagonal(m: &SymMatrix, q: &DMatrix<f64>) -> DVector<f64> {
    let mq = m.as_matrix() * q;
    DVector::from_fn(q.ncols(), |i, _| q.column(i).dot(&mq.column(i)))
}

/// Window stage: bases from the last `eigen_window` days of
/// `gammas`/`days`, eigenvalue series for every day.
pub fn eigen_series(
    gammas: &[SymMatrix],
    days: &[DayDecomposition],
    rank: usize,
    eigen_window: usize,
) -> Result<EigenSeries> {
    let n = gammas.len();
    check_dim(n, days.len())?;
    if n == 0 {
        return Err(invalid("empty volatility matrix series"));
    }
    if eigen_window == 0 || eigen_window > n {
        return Err(invalid(format!("eigenvector window {eigen_window} must be in 1..={n}")));
    }
    let p = gammas[0].dim();
    let r = rank;
    if r == 0 || r >= p {
        return Err(invalid(format!("rank {r} must satisfy 1 <= r < p = {p}")));
    }
    let start = n - eigen_window;
    let gamma_mean = SymMatrix::mean(&gammas[start..])?;
    let factor_vectors = eigen_sym(&gamma_mean)?.leading_vectors(r);
    let sigmas: Vec<SymMatrix> = days.iter().map(|d| d.sigma.clone()).collect();
    let sigma_mean = SymMatrix::mean(&sigmas[start..])?;
    let idio_vectors = eigen_sym(&sigma_mean)?.vectors;

    let rows: Vec<(DVector<f64>, DVector<f64>)> = gammas
        .par_iter()
        .zip(sigmas.par_iter())
        .map(|(g, s)| {
            (
                projected_diagonal(g, &factor_vectors) / p as f64,
                projected_diagonal(s, &idio_vectors),
            )
        })
        .collect();
    let mut values = DMatrix::zeros(n, p + r);
    for (d, (f, i)) in rows.iter().enumerate() {
        values.view_mut((d, 0), (1, r)).copy_from(&f.transpose());
        values.view_mut((d, r), (1, p)).copy_from(&i.transpose());
    }
    Ok(EigenSeries {
        factor_vectors,
        idio_vectors,
        values,
        idio_matrices: Some(sigmas),
    })
}

/// Full decomposition of a series.
pub fn poet_decompose(series: &VolMatrixSeries, cfg: &PoetConfig) -> Result<EigenSeries> {
    let days = decompose_days(series, cfg)?;
    eigen_series(&series.matrices, &days, cfg.rank, cfg.eigen_window)
}

/// Penalized eigenvalue criterion for the number of factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCriterion {
    pub r_max: usize,
    pub c1_mult: f64,
    pub c2: f64,
}

impl Default for RankCriterion {
    fn default() -> Self {
        RankCriterion {
            r_max: 30,
            c1_mult: 0.02,
            c2: 0.5,
        }
    }
}

/// Scores for `j = 1..=r_max`:
/// `Σ_d [ξ̄_{d,j}/p + j·c1_mult·ξ̄_{d,r_max}·(√(log p/√m) + log p/p)^{c2}]`
/// where ξ̄_{d,j} is the j-th largest eigenvalue of day d.
pub fn rank_scores(series: &VolMatrixSeries, crit: &RankCriterion, m: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(invalid("empty volatility matrix series"));
    }
    let p = series.dim();
    if crit.r_max <= 1 || crit.r_max >= p {
        return Err(invalid(format!(
            "r_max {} must satisfy 1 < r_max < p = {p}",
            crit.r_max
        )));
    }
    if m == 0 {
        return Err(invalid("m must be positive"));
    }
    let pf = p as f64;
    let lp = pf.ln();
    let pen = ((lp / (m as f64).sqrt()).sqrt() + lp / pf).powf(crit.c2);
    let eigs: Vec<DVector<f64>> = series
        .matrices
        .par_iter()
        .map(|g| eigen_sym(g).map(|e| e.values))
        .collect::<Result<_>>()?;
    let mut scores = vec![0.0; crit.r_max];
    for vals in &eigs {
        let c1 = crit.c1_mult * vals[crit.r_max - 1];
        for (j, s) in scores.iter_mut().enumerate() {
            *s += vals[j] / pf + (j + 1) as f64 * c1 * pen;
        }
    }
    Ok(scores)
}

/// Argmin of [`rank_scores`] minus one.
pub fn select_rank(series: &VolMatrixSeries, crit: &RankCriterion, m: usize) -> Result<usize> {
    let scores = rank_scores(series, crit, m)?;
    let mut best = 0;
    for (j, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = j;
        }
    }
    // best is 0-based, so the 1-based argmin minus one is `best`.
    if best == 0 {
        return Err(FivarError::MinimumRank { selected: 0 });
    }
    Ok(best)
}

/// Thresholding level from the rate `υ_m = C·(s_I/p + √(log(pn ∨ m)/√m))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub c: f64,
    pub s_i: f64,
}

impl ThresholdRule {
    pub fn level(&self, p: usize, n: usize, m: usize) -> f64 {
        let big = ((p * n).max(m) as f64).ln();
        self.c * (self.s_i / p as f64 + (big / (m as f64).sqrt()).sqrt())
    }
}

/// Chooses υ_m. With `truth` (true idiosyncratic matrices, one per day)
/// the grid value with the smallest mean Frobenius error wins, ties going
/// to the smaller value; otherwise `rule` is used.
pub fn threshold_select(
    series: &VolMatrixSeries,
    cfg: &PoetConfig,
    grid: &[f64],
    truth: Option<&[SymMatrix]>,
    rule: &ThresholdRule,
    m: usize,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(invalid("empty thresholding grid"));
    }
    if series.is_empty() {
        return Err(invalid("empty volatility matrix series"));
    }
    cfg.check(series.dim())?;
    let Some(truth) = truth else {
        return Ok(rule.level(series.dim(), series.len(), m));
    };
    check_dim(series.len(), truth.len())?;
    let resid: Vec<SymMatrix> = series
        .matrices
        .par_iter()
        .map(|g| residual(g, cfg.rank).map(|r| r.2))
        .collect::<Result<_>>()?;
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::INFINITY, sorted[0]);
    for &u in &sorted {
        let err: f64 = resid
            .iter()
            .zip(truth)
            .map(|(r, t)| (threshold_residual(r, &cfg.scheme, u).as_matrix() - t.as_matrix()).norm())
            .sum::<f64>()
            / resid.len() as f64;
        if err < best.0 {
            best = (err, u);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rank: usize, upsilon: f64) -> PoetConfig {
        PoetConfig {
            rank,
            scheme: ThresholdScheme::Soft,
            upsilon,
            eigen_window: 1,
        }
    }

    #[test]
    fn exact_rank_one() {
        let p = 4;
        let q = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let xi = 0.7;
        let g = SymMatrix::new(&q * q.transpose() * (p as f64 * xi));
        let series = VolMatrixSeries::new(vec![g.clone(), g.clone(), g]);
        let mut c = cfg(1, 0.0);
        c.eigen_window = 3;
        let out = poet_decompose(&series, &c).unwrap();
        for d in 0..3 {
            assert!((out.values[(d, 0)] - xi).abs() < 1e-12);
        }
        for s in out.idio_matrices.as_ref().unwrap() {
            assert!(s.as_matrix().amax() < 1e-12);
        }
    }

    #[test]
    fn large_threshold_kills_off_diagonals() {
        let resid = SymMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.5, 0.2, 0.5, 2.0, -0.9, 0.2, -0.9, 1.5],
        ));
        let out = threshold_residual(&resid, &ThresholdScheme::Soft, 1.0);
        assert_eq!(out, SymMatrix::from_diagonal(&[1.0, 2.0, 1.5]));
    }

    #[test]
    fn soft_and_hard_rules() {
        let resid = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[4.0, 1.5, 1.5, 1.0]));
        // υ_12 = 0.5·√4 = 1.
        let soft = threshold_residual(&resid, &ThresholdScheme::Soft, 0.5);
        assert!((soft[(0, 1)] - 0.5).abs() < 1e-15);
        let hard = threshold_residual(&resid, &ThresholdScheme::Hard, 0.5);
        assert_eq!(hard[(0, 1)], 1.5);
        let neg = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.3, 1.0]));
        let clamped = threshold_residual(&neg, &ThresholdScheme::Soft, 0.5);
        assert_eq!(clamped[(0, 0)], 0.0);
        // Zero diagonal gives a zero level, so the entry survives.
        assert_eq!(clamped[(0, 1)], 0.3);
    }

    #[test]
    fn sector_scheme() {
        let resid = SymMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.1, 0.2, 0.1, 1.0, 0.3, 0.2, 0.3, 1.0],
        ));
        let out = threshold_residual(&resid, &ThresholdScheme::SectorHard { sectors: vec![0, 0, 1] }, 0.0);
        assert_eq!(out[(0, 1)], 0.1);
        assert_eq!(out[(0, 2)], 0.0);
        assert_eq!(out[(1, 2)], 0.0);
        let one = threshold_residual(&resid, &ThresholdScheme::SectorHard { sectors: vec![7; 3] }, 9.0);
        assert_eq!(one, resid);
    }

    #[test]
    fn rule_plug_in() {
        let rule = ThresholdRule { c: 1.0, s_i: 1.0 };
        let expected = 0.01 + (1000f64.ln() / 20.0).sqrt();
        assert!((rule.level(100, 10, 400) - expected).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        let g = SymMatrix::identity(3);
        let series = VolMatrixSeries::new(vec![g]);
        assert!(poet_decompose(&series, &cfg(3, 0.1)).is_err());
        assert!(poet_decompose(&VolMatrixSeries::new(vec![]), &cfg(1, 0.1)).is_err());
        let mut c = cfg(1, 0.1);
        c.eigen_window = 2;
        assert!(poet_decompose(&series, &c).is_err());
        assert!(threshold_select(
            &series,
            &cfg(1, 0.1),
            &[],
            None,
            &ThresholdRule { c: 1.0, s_i: 1.0 },
            10
        )
        .is_err());
    }
}
