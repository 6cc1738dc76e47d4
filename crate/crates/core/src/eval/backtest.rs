//! Rolling-window out-of-sample evaluation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::portfolio::{min_variance_curve, PortfolioWeights};
use super::{Estimator, VarFitter};
use crate::error::{check_dim, invalid, FivarError, Result};
use crate::forecast::forecast;
use crate::matutil::{project_psd, SymMatrix};
use crate::poet::{decompose_days, eigen_series, DayDecomposition, PoetConfig, ThresholdScheme};
use crate::rv::{prvm_series, PrvmConfig, VolMatrixSeries};
use crate::sim::TickPanel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    /// In-sample days per fit.
    pub window: usize,
    /// Trailing days whose mean gives the eigenvector bases.
    pub eigen_window: usize,
    /// Number of factors.
    pub rank: usize,
    pub methods: Vec<Estimator>,
    pub exposure_grid: Vec<f64>,
    /// Length of the intraday returns used for realized portfolio
    /// variance, in minutes.
    pub realized_return_interval: f64,
    /// Minutes covered by one day of observations.
    pub session_minutes: f64,
    /// Out-of-sample days are split into this many consecutive periods.
    pub periods: usize,
    pub scheme: ThresholdScheme,
    /// Relative thresholding level for the idiosyncratic residuals.
    pub upsilon: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            window: 249,
            eigen_window: 22,
            rank: 3,
            methods: Estimator::ALL.to_vec(),
            exposure_grid: vec![1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0],
            realized_return_interval: 10.0,
            session_minutes: 390.0,
            periods: 1,
            scheme: ThresholdScheme::Soft,
            upsilon: 0.1,
        }
    }
}

impl BacktestConfig {
    pub fn check(&self, total_days: usize) -> Result<()> {
        if self.window == 0 || self.window >= total_days {
            return Err(invalid(format!(
                "window {} must be in 1..{total_days} (total days)",
                self.window
            )));
        }
        if self.eigen_window == 0 || self.eigen_window > self.window {
            return Err(invalid("eigen_window must be in 1..=window"));
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods selected"));
        }
        if self.exposure_grid.is_empty() || self.exposure_grid.iter().any(|c| !(*c >= 1.0)) {
            return Err(invalid("exposure grid must be non-empty with values >= 1"));
        }
        if !(self.realized_return_interval > 0.0) || !(self.session_minutes > 0.0) {
            return Err(invalid("return interval and session length must be positive"));
        }
        if self.periods == 0 || self.periods > total_days - self.window {
            return Err(invalid("periods must be in 1..=out-of-sample days"));
        }
        Ok(())
    }

    /// Observation steps per realized-variance return for `m` intervals a day.
    pub fn return_step(&self, m: usize) -> usize {
        let step = (self.realized_return_interval * m as f64 / self.session_minutes).round() as usize;
        step.clamp(1, m)
    }

    fn poet(&self) -> PoetConfig {
        PoetConfig {
            rank: self.rank,
            scheme: self.scheme.clone(),
            upsilon: self.upsilon,
            eigen_window: self.eigen_window,
        }
    }
}

/// One method on one out-of-sample day.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodDay {
    pub estimator: Estimator,
    /// `‖Γ̃_d − Γ̂^{POET}_d‖²_F`.
    pub sq_error: f64,
    /// One weight vector per exposure bound.
    pub weights: Vec<DVector<f64>>,
    /// In-sample objective `wᵀΓ̃w` per exposure bound.
    pub objective: Vec<f64>,
    /// Realized portfolio variance on the day per exposure bound.
    pub realized: Vec<f64>,
    /// Mean idiosyncratic active-set size of the fit, if any.
    pub active: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    /// 0-based index of the out-of-sample day in the input.
    pub day: usize,
    pub period: usize,
    pub methods: Vec<MethodDay>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub estimator: Estimator,
    pub mspe: f64,
    pub mspe_by_period: Vec<f64>,
    /// `√(mean realized variance)` per exposure bound, all days.
    pub risk: Vec<f64>,
    /// Same per period: `risk_by_period[period][c0]`.
    pub risk_by_period: Vec<Vec<f64>>,
    pub mean_active: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub exposure_grid: Vec<f64>,
    /// `[start, end)` out-of-sample day ranges.
    pub periods: Vec<(usize, usize)>,
    pub summaries: Vec<MethodSummary>,
    pub days: Vec<DayRecord>,
}

impl BacktestReport {
    pub fn summary(&self, estimator: Estimator) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }
}

/// Sum of squared interval returns of the portfolio `w`.
fn realized_variance(prices: &DMatrix<f64>, w: &DVector<f64>, step: usize) -> f64 {
    let value = prices * w;
    let steps = (value.len() - 1) / step;
    (1..=steps)
        .map(|k| (value[k * step] - value[(k - 1) * step]).powi(2))
        .sum()
}

fn period_ranges(first: usize, total: usize, periods: usize) -> Vec<(usize, usize)> {
    let len = total - first;
    (0..periods)
        .map(|k| (first + k * len / periods, first + (k + 1) * len / periods))
        .collect()
}

fn evaluate_day(
    t: usize,
    gammas: &[SymMatrix],
    days: &[DayDecomposition],
    prices: &DMatrix<f64>,
    cfg: &BacktestConfig,
    fitter: &dyn VarFitter,
    step: usize,
) -> Result<Vec<MethodDay>> {
    let start = t - cfg.window;
    let reference = days[t].estimate();
    let needs_var = cfg.methods.iter().any(|e| e.var_method().is_some());
    let series = if needs_var {
        Some(eigen_series(
            &gammas[start..t],
            &days[start..t],
            cfg.rank,
            cfg.eigen_window,
        )?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &estimator in &cfg.methods {
        let (gamma, active) = match (estimator.var_method(), &series) {
            (Some(method), Some(series)) => {
                let fit = fitter.fit(series, method)?;
                (forecast(&fit, series)?.gamma_next, fit.mean_idio_active())
            }
            _ => (days[t - 1].estimate(), None),
        };
        let sq_error = gamma.sub(&reference).as_matrix().norm_squared();
        let psd = project_psd(&gamma)?;
        let curve: Vec<PortfolioWeights> = min_variance_curve(&psd, &cfg.exposure_grid)?;
        let objective = curve.iter().map(|w| psd.quad_form(&w.w)).collect();
        let realized = curve.iter().map(|w| realized_variance(prices, &w.w, step)).collect();
        out.push(MethodDay {
            estimator,
            sq_error,
            weights: curve.into_iter().map(|w| w.w).collect(),
            objective,
            realized,
            active,
        });
    }
    Ok(out)
}

/// Rolling backtest on precomputed daily volatility matrices and the
/// observed prices used for realized portfolio variance.
pub fn backtest_series(
    series: &VolMatrixSeries,
    prices: &[DMatrix<f64>],
    cfg: &BacktestConfig,
    fitter: &dyn VarFitter,
) -> Result<BacktestReport> {
    let total = series.len();
    check_dim(total, prices.len())?;
    cfg.check(total)?;
    series.validate()?;
    let p = series.dim();
    let m = prices[0].nrows().saturating_sub(1);
    if m == 0 {
        return Err(invalid("price days need at least two observations"));
    }
    for day in prices {
        check_dim(m + 1, day.nrows())?;
        check_dim(p, day.ncols())?;
    }
    let step = cfg.return_step(m);
    let days = decompose_days(series, &cfg.poet())?;
    let periods = period_ranges(cfg.window, total, cfg.periods);
    let period_of = |t: usize| periods.iter().position(|&(a, b)| t >= a && t < b).expect("covered");

    let records: Vec<DayRecord> = (cfg.window..total)
        .into_par_iter()
        .map(|t| {
            evaluate_day(t, &series.matrices, &days, &prices[t], cfg, fitter, step)
                .map(|methods| DayRecord {
                    day: t,
                    period: period_of(t),
                    methods,
                })
                .map_err(|e| match e {
                    FivarError::InvalidInput(msg) => FivarError::InvalidInput(format!("day {t}: {msg}")),
                    other => other,
                })
        })
        .collect::<Result<_>>()?;

    let n_c = cfg.exposure_grid.len();
    let summaries = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(k, &estimator)| {
            let mut sq = vec![Vec::new(); periods.len()];
            let mut var = vec![vec![0.0; n_c]; periods.len()];
            let mut actives = Vec::new();
            for rec in &records {
                let md = &rec.methods[k];
                sq[rec.period].push(md.sq_error);
                for (v, r) in var[rec.period].iter_mut().zip(&md.realized) {
                    *v += r;
                }
                actives.extend(md.active);
            }
            let count = |q: usize| sq[q].len() as f64;
            let mspe_by_period: Vec<f64> = (0..periods.len())
                .map(|q| sq[q].iter().sum::<f64>() / count(q))
                .collect();
            let risk_by_period: Vec<Vec<f64>> = (0..periods.len())
                .map(|q| var[q].iter().map(|v| (v / count(q)).sqrt()).collect())
                .collect();
            let days_total = records.len() as f64;
            let mspe = sq.iter().flatten().sum::<f64>() / days_total;
            let risk = (0..n_c)
                .map(|c| (var.iter().map(|v| v[c]).sum::<f64>() / days_total).sqrt())
                .collect();
            let mean_active = if actives.is_empty() {
                None
            } else {
                Some(actives.iter().sum::<f64>() / actives.len() as f64)
            };
            MethodSummary {
                estimator,
                mspe,
                mspe_by_period,
                risk,
                risk_by_period,
                mean_active,
            }
        })
        .collect();

    Ok(BacktestReport {
        exposure_grid: cfg.exposure_grid.clone(),
        periods,
        summaries,
        days: records,
    })
}

/// Rolling backtest from raw prices: PRVM estimates (PSD-projected) for
/// every day, then [`backtest_series`].
pub fn backtest(
    panel: &TickPanel,
    prvm: &PrvmConfig,
    cfg: &BacktestConfig,
    fitter: &dyn VarFitter,
) -> Result<BacktestReport> {
    panel.validate()?;
    let series = prvm_series(panel, prvm, true)?;
    backtest_series(&series, &panel.prices, cfg, fitter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poet::EigenSeries;
    use crate::robustvar::{Method, VarFit};

    struct Unreachable;

    impl VarFitter for Unreachable {
        fn fit(&self, _: &EigenSeries, _: Method) -> Result<VarFit> {
            panic!("VAR fitting must not run for a PRVM-only backtest");
        }
    }

    fn toy(days: usize, p: usize) -> (VolMatrixSeries, Vec<DMatrix<f64>>) {
        let mats = (0..days)
            .map(|d| {
                let mut g = DMatrix::from_element(p, p, 0.3);
                for i in 0..p {
                    g[(i, i)] = 1.0 + 0.1 * ((d * 7 + i * 3) % 5) as f64;
                }
                SymMatrix::new(g)
            })
            .collect();
        let prices = (0..days)
            .map(|d| DMatrix::from_fn(5, p, |k, j| ((k * (j + 1) + d) % 3) as f64 * 0.01))
            .collect();
        (VolMatrixSeries::new(mats), prices)
    }

    fn prvm_only(window: usize) -> BacktestConfig {
        BacktestConfig {
            window,
            eigen_window: 1,
            rank: 1,
            methods: vec![Estimator::Prvm],
            exposure_grid: vec![1.0, 2.0],
            session_minutes: 4.0,
            realized_return_interval: 1.0,
            ..BacktestConfig::default()
        }
    }

    #[test]
    fn prvm_only_never_fits_and_unrolls() {
        let (series, prices) = toy(3, 4);
        let report = backtest_series(&series, &prices, &prvm_only(2), &Unreachable).unwrap();
        assert_eq!(report.days.len(), 1);
        let cfg = prvm_only(2).poet();
        let days = decompose_days(&series, &cfg).unwrap();
        let expected = days[1].estimate().sub(&days[2].estimate()).as_matrix().norm_squared();
        let got = report.summary(Estimator::Prvm).unwrap().mspe;
        assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn objective_non_increasing_in_exposure() {
        let (series, prices) = toy(6, 4);
        let report = backtest_series(&series, &prices, &prvm_only(3), &Unreachable).unwrap();
        for rec in &report.days {
            let obj = &rec.methods[0].objective;
            assert!(obj[1] <= obj[0] * (1.0 + 1e-9));
        }
    }

    #[test]
    fn window_must_leave_out_of_sample_days() {
        let (series, prices) = toy(3, 4);
        assert!(backtest_series(&series, &prices, &prvm_only(3), &Unreachable).is_err());
    }

    #[test]
    fn realized_variance_sums_interval_returns() {
        let prices = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 3.0, 2.0, 2.0]);
        let w = DVector::from_element(1, 1.0);
        assert_eq!(realized_variance(&prices, &w, 1), 1.0 + 4.0 + 1.0);
        assert_eq!(realized_variance(&prices, &w, 2), 9.0 + 1.0);
    }
}
