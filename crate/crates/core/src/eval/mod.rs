//! Evaluation: prediction errors, the rolling portfolio backtest and the
//! Monte-Carlo study of parameter and forecast errors.

mod backtest;
mod portfolio;
mod study;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, FivarError, Result};
use crate::matutil::SymMatrix;
use crate::poet::EigenSeries;
use crate::robustvar::{self, Method, RobustConfig, VarFit};

pub use backtest::{backtest, backtest_series, BacktestConfig, BacktestReport, DayRecord, MethodDay, MethodSummary};
pub use portfolio::{
    kkt_residual, min_variance_curve, min_variance_weights, project_l1_ball, PortfolioWeights, EXPOSURE_TOL, KKT_TOL,
    WEIGHT_SUM_TOL,
};
pub use study::{
    align_beta, basis_matching, run_study, CellSummary, ErrorStats, ReplicationRecord, StudyConfig, StudyReport,
};

/// Volatility forecasters compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Today's POET estimate used as tomorrow's forecast.
    Prvm,
    Ols,
    Lasso,
    #[serde(rename = "hlasso")]
    HLasso,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Prvm, Estimator::Ols, Estimator::Lasso, Estimator::HLasso];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Prvm => "prvm",
            Estimator::Ols => "ols",
            Estimator::Lasso => "lasso",
            Estimator::HLasso => "hlasso",
        }
    }

    pub fn var_method(&self) -> Option<Method> {
        match self {
            Estimator::Prvm => None,
            Estimator::Ols => Some(Method::Ols),
            Estimator::Lasso => Some(Method::Lasso),
            Estimator::HLasso => Some(Method::HLasso),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = FivarError;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("prvm") {
            return Ok(Estimator::Prvm);
        }
        Ok(match s.parse::<Method>()? {
            Method::Ols => Estimator::Ols,
            Method::Lasso => Estimator::Lasso,
            Method::HLasso => Estimator::HLasso,
        })
    }
}

/// Source of VAR fits for the evaluation loops.
pub trait VarFitter: Sync {
    fn fit(&self, series: &EigenSeries, method: Method) -> Result<VarFit>;
}

impl VarFitter for RobustConfig {
    fn fit(&self, series: &EigenSeries, method: Method) -> Result<VarFit> {
        robustvar::fit(series, method, self)
    }
}

/// `T⁻¹ Σ ‖Γ̃_d − Γ̂_d‖²_F`.
pub fn mspe(forecasts: &[SymMatrix], references: &[SymMatrix]) -> Result<f64> {
    if forecasts.len() != references.len() {
        return Err(invalid(format!(
            "{} forecasts against {} references",
            forecasts.len(),
            references.len()
        )));
    }
    if forecasts.is_empty() {
        return Err(invalid("mspe needs at least one forecast"));
    }
    let mut total = 0.0;
    for (f, r) in forecasts.iter().zip(references) {
        if f.dim() != r.dim() {
            return Err(invalid("forecast and reference dimensions differ"));
        }
        total += f.sub(r).as_matrix().norm_squared();
    }
    Ok(total / forecasts.len() as f64)
}
