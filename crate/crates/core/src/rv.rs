//! Jump-robust pre-averaging realized volatility matrices.
//!
//! Returns are smoothed over blocks of `K` increments to damp
//! microstructure noise, a noise-bias term is subtracted, and pre-averaged
//! returns larger than a per-asset threshold are dropped to remove jumps.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, invalid, Result};
use crate::matutil::{project_psd, SymMatrix};
use crate::sim::TickPanel;

/// Pre-averaging weight function on [0, 1].
#[derive(Debug, Clone, Copy)]
pub enum Weight {
    /// `g(x) = min(x, 1 - x)` with `∫g² = 1/12`.
    Triangular,
    /// User supplied weight and its squared integral.
    Custom { g: fn(f64) -> f64, psi: f64 },
}

impl Weight {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Weight::Triangular => x.min(1.0 - x),
            Weight::Custom { g, .. } => g(x),
        }
    }

    pub fn psi(&self) -> f64 {
        match self {
            Weight::Triangular => 1.0 / 12.0,
            Weight::Custom { psi, .. } => *psi,
        }
    }
}

pub const SIMULATION_TRUNC_MULT: f64 = 7.0;
pub const EMPIRICAL_TRUNC_MULT: f64 = 8.0;
pub const DEFAULT_TRUNC_EXPONENT: f64 = 0.235;

#[derive(Debug, Clone)]
pub struct PrvmConfig {
    /// Block length `K`; `None` means `⌊√m⌋`.
    pub bandwidth: Option<usize>,
    pub weight: Weight,
    /// Truncation level is this multiple of the standard deviation of
    /// `m^{1/8}·Ȳ_i`, times `m^{-trunc_exponent}`. Infinity disables
    /// truncation.
    pub trunc_mult: f64,
    pub trunc_exponent: f64,
}

impl Default for PrvmConfig {
    fn default() -> Self {
        PrvmConfig {
            bandwidth: None,
            weight: Weight::Triangular,
            trunc_mult: SIMULATION_TRUNC_MULT,
            trunc_exponent: DEFAULT_TRUNC_EXPONENT,
        }
    }
}

impl PrvmConfig {
    pub fn bandwidth_for(&self, m: usize) -> usize {
        self.bandwidth.unwrap_or(((m as f64).sqrt().floor()) as usize)
    }

    fn check(&self, m: usize) -> Result<usize> {
        let k = self.bandwidth_for(m);
        if k < 2 || k > m {
            return Err(invalid(format!("bandwidth K={k} must satisfy 2 <= K <= m={m}")));
        }
        if !(self.weight.psi() > 0.0) {
            return Err(invalid("weight function must have positive squared integral"));
        }
        if !(self.trunc_mult > 0.0) {
            return Err(invalid("truncation multiplier must be positive"));
        }
        Ok(k)
    }
}

/// Daily volatility matrix estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct VolMatrixSeries {
    pub matrices: Vec<SymMatrix>,
    pub psd_projected: Vec<bool>,
}

impl VolMatrixSeries {
    pub fn new(matrices: Vec<SymMatrix>) -> Self {
        let psd_projected = vec![false; matrices.len()];
        VolMatrixSeries {
            matrices,
            psd_projected,
        }
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrices.first().map_or(0, SymMatrix::dim)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.matrices.len(), self.psd_projected.len())?;
        let p = self.dim();
        for m in &self.matrices {
            check_dim(p, m.dim())?;
            if !m.is_finite() {
                return Err(invalid("non-finite volatility matrix entry"));
            }
        }
        Ok(())
    }

    pub fn slice(&self, start: usize, end: usize) -> VolMatrixSeries {
        VolMatrixSeries {
            matrices: self.matrices[start..end].to_vec(),
            psd_projected: self.psd_projected[start..end].to_vec(),
        }
    }
}

struct Preaveraged {
    /// (m-K+1) × p.
    ybar: DMatrix<f64>,
    /// m × p increments.
    dy: DMatrix<f64>,
}

fn preaverage(prices: &DMatrix<f64>, k: usize, weight: &Weight) -> Preaveraged {
    let m = prices.nrows() - 1;
    let p = prices.ncols();
    let dy = DMatrix::from_fn(m, p, |t, j| prices[(t + 1, j)] - prices[(t, j)]);
    let g: Vec<f64> = (1..k).map(|l| weight.eval(l as f64 / k as f64)).collect();
    let count = m - k + 1;
    let mut ybar = DMatrix::zeros(count, p);
    for j in 0..p {
        let col = dy.column(j);
        let out = ybar.column_mut(j);
        for (s, o) in out.into_iter().enumerate() {
            // Ȳ(s) = Σ_{l=1}^{K-1} g(l/K) ΔY(s+l), ΔY 1-based.
            *o = g.iter().enumerate().map(|(l, w)| w * col[s + l + 1]).sum();
        }
    }
    Preaveraged { ybar, dy }
}

/// Per-asset truncation levels `u_i = c_mult·sd(m^{1/8}Ȳ_i)·m^{-exponent}`
/// from the pre-averaged returns of all supplied days.
pub fn truncation_levels(days: &[DMatrix<f64>], cfg: &PrvmConfig) -> Result<DVector<f64>> {
    let first = days.first().ok_or_else(|| invalid("no days supplied"))?;
    let m = first.nrows().saturating_sub(1);
    let p = first.ncols();
    let k = cfg.check(m)?;
    if cfg.trunc_mult.is_infinite() {
        return Ok(DVector::from_element(p, f64::INFINITY));
    }
    let scale = (m as f64).powf(0.125);
    let sums: Vec<(DVector<f64>, DVector<f64>, usize)> = days
        .par_iter()
        .map(|day| {
            let pre = preaverage(day, k, &cfg.weight);
            let mut s = DVector::zeros(p);
            let mut ss = DVector::zeros(p);
            for j in 0..p {
                for v in pre.ybar.column(j).iter() {
                    let x = v * scale;
                    s[j] += x;
                    ss[j] += x * x;
                }
            }
            (s, ss, pre.ybar.nrows())
        })
        .collect();
    let mut s = DVector::zeros(p);
    let mut ss = DVector::zeros(p);
    let mut count = 0usize;
    for (a, b, c) in sums {
        s += a;
        ss += b;
        count += c;
    }
    let nf = count as f64;
    let factor = cfg.trunc_mult * (m as f64).powf(-cfg.trunc_exponent);
    Ok(DVector::from_fn(p, |j, _| {
        let mean = s[j] / nf;
        let var = (ss[j] / nf - mean * mean).max(0.0);
        factor * var.sqrt()
    }))
}

/// PRVM for one day with thresholds computed from that day alone.
pub fn prvm_day(prices: &DMatrix<f64>, cfg: &PrvmConfig) -> Result<SymMatrix> {
    let levels = truncation_levels(std::slice::from_ref(prices), cfg)?;
    prvm_day_truncated(prices, cfg, &levels)
}

/// PRVM for one (m+1)×p day of log-prices with explicit truncation levels.
pub fn prvm_day_truncated(prices: &DMatrix<f64>, cfg: &PrvmConfig, levels: &DVector<f64>) -> Result<SymMatrix> {
    if prices.nrows() < 2 {
        return Err(invalid("a day needs at least two observations"));
    }
    let m = prices.nrows() - 1;
    let p = prices.ncols();
    check_dim(p, levels.len())?;
    let k = cfg.check(m)?;
    if prices.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite log-price"));
    }
    let Preaveraged { mut ybar, dy } = preaverage(prices, k, &cfg.weight);
    let count = ybar.nrows();

    // Bias weights (g(l/K) - g((l-1)/K))², l = 1..K.
    let w: Vec<f64> = (1..=k)
        .map(|l| {
            let d = cfg.weight.eval(l as f64 / k as f64) - cfg.weight.eval((l - 1) as f64 / k as f64);
            d * d
        })
        .collect();
    // Ŷ(s) touches increments s..s+K-1 (0-based); collect each increment's
    // total weight over all s for the untruncated bias sum.
    let mut inc_weight = vec![0.0; m];
    for s in 0..count {
        for (l, wl) in w.iter().enumerate() {
            inc_weight[s + l] += wl;
        }
    }
    let mut weighted = dy.clone();
    for (t, c) in inc_weight.iter().enumerate() {
        weighted.row_mut(t).scale_mut(*c);
    }
    let mut bias = dy.transpose() * weighted;

    // Blocks with truncated assets: remove their bias contributions for
    // every pair touching a truncated asset, and zero the Ȳ entries.
    let mut correction = DMatrix::<f64>::zeros(p, p);
    let mut cut = vec![false; p];
    let mut cut_list = Vec::new();
    for s in 0..count {
        cut_list.clear();
        for i in 0..p {
            cut[i] = !(ybar[(s, i)].abs() <= levels[i]);
            if cut[i] {
                cut_list.push(i);
            }
        }
        if cut_list.is_empty() {
            continue;
        }
        for &i in &cut_list {
            for j in 0..p {
                let yhat: f64 = (0..k).map(|l| w[l] * dy[(s + l, i)] * dy[(s + l, j)]).sum();
                correction[(i, j)] += yhat;
                if !cut[j] {
                    correction[(j, i)] += yhat;
                }
            }
            ybar[(s, i)] = 0.0;
        }
    }
    bias -= correction;

    let main = ybar.transpose() * &ybar;
    let out = (main - bias * 0.5) / (cfg.weight.psi() * k as f64);
    Ok(SymMatrix::new(out))
}

/// PRVM for every day of a panel. Truncation levels are calibrated on the
/// whole panel.
pub fn prvm_series(panel: &TickPanel, cfg: &PrvmConfig, project: bool) -> Result<VolMatrixSeries> {
    panel.validate()?;
    prvm_days(&panel.prices, cfg, project)
}

pub fn prvm_days(days: &[DMatrix<f64>], cfg: &PrvmConfig, project: bool) -> Result<VolMatrixSeries> {
    let levels = truncation_levels(days, cfg)?;
    let matrices: Vec<SymMatrix> = days
        .par_iter()
        .map(|d| {
            let est = prvm_day_truncated(d, cfg, &levels)?;
            if project {
                project_psd(&est)
            } else {
                Ok(est)
            }
        })
        .collect::<Result<_>>()?;
    let psd_projected = vec![project; matrices.len()];
    Ok(VolMatrixSeries {
        matrices,
        psd_projected,
    })
}
