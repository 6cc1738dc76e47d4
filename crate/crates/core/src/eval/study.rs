//! Monte-Carlo study: coefficient errors and one-day-ahead forecast errors
//! against the conditional expectation `E(Γ_{n+1} | F_n)` over a grid of
//! sample sizes and sampling frequencies.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::{Estimator, VarFitter};
use crate::error::{check_dim, invalid, Result};
use crate::forecast::forecast;
use crate::matutil::{matrix_norms, rect_norms, NormReport, SymMatrix};
use crate::poet::{decompose_days, eigen_series, threshold_select, PoetConfig, ThresholdRule, ThresholdScheme};
use crate::rv::{prvm_series, PrvmConfig};
use crate::sim::{simulate_panel, FivarParams};

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub params: FivarParams,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    /// Simulation grid; every `m` must divide it.
    pub m_all: usize,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<Estimator>,
    pub prvm: PrvmConfig,
    pub scheme: ThresholdScheme,
    /// Candidate thresholding levels, chosen per cell against the true
    /// idiosyncratic matrices.
    pub threshold_grid: Vec<f64>,
}

impl StudyConfig {
    fn check(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.m_grid.is_empty() || self.replications == 0 {
            return Err(invalid(
                "study needs non-empty n and m grids and at least one replication",
            ));
        }
        if self.m_grid.iter().any(|&m| m == 0 || !self.m_all.is_multiple_of(m)) {
            return Err(invalid(format!("every m must divide m_all={}", self.m_all)));
        }
        if self.n_grid.iter().any(|&n| n <= self.params.h + 1) {
            return Err(invalid("every n must exceed h + 1"));
        }
        if self.methods.is_empty() || self.threshold_grid.is_empty() {
            return Err(invalid("study needs methods and a thresholding grid"));
        }
        self.params.validate()
    }
}

/// Error norms of one method in one cell of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub n: usize,
    pub m: usize,
    pub estimator: Estimator,
    /// `β̂ − β₀` after aligning β₀ to the estimated bases; `None` for PRVM.
    pub beta: Option<NormReport>,
    /// `Γ̃_{n+1} − E(Γ_{n+1}|F_n)` with the relative norm against the
    /// conditional expectation.
    pub forecast: NormReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub frobenius: f64,
    pub max: f64,
    pub spectral: f64,
    pub relative_frobenius: Option<f64>,
}

impl ErrorStats {
    fn mean<'a>(items: impl Iterator<Item = &'a NormReport>) -> Option<Self> {
        let items: Vec<&NormReport> = items.collect();
        if items.is_empty() {
            return None;
        }
        let k = items.len() as f64;
        let rel: Option<Vec<f64>> = items.iter().map(|r| r.relative_frobenius).collect();
        Some(ErrorStats {
            frobenius: items.iter().map(|r| r.frobenius).sum::<f64>() / k,
            max: items.iter().map(|r| r.max).sum::<f64>() / k,
            spectral: items.iter().map(|r| r.spectral).sum::<f64>() / k,
            relative_frobenius: rel.map(|v| v.iter().sum::<f64>() / k),
        })
    }
}

/// Replication means for one method in one (n, m) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub m: usize,
    pub estimator: Estimator,
    pub beta: Option<ErrorStats>,
    pub forecast: ErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub cells: Vec<CellSummary>,
    pub records: Vec<ReplicationRecord>,
}

impl StudyReport {
    pub fn cell(&self, n: usize, m: usize, estimator: Estimator) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.m == m && c.estimator == estimator)
    }
}

/// Greedy one-to-one matching of estimated to true eigenvectors by
/// absolute overlap, largest first. `out[k]` is the true column matched to
/// estimated column `k`.
pub fn basis_matching(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<usize>> {
    check_dim(truth.nrows(), estimated.nrows())?;
    check_dim(truth.ncols(), estimated.ncols())?;
    let k = estimated.ncols();
    let overlap = (estimated.transpose() * truth).abs();
    let mut pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).collect();
    pairs.sort_by(|x, y| overlap[*y].total_cmp(&overlap[*x]).then(x.cmp(y)));
    let mut out = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (a, b) in pairs {
        if out[a] == usize::MAX && !used[b] {
            out[a] = b;
            used[b] = true;
        }
    }
    Ok(out)
}

/// Reorders the rows and lag columns of `beta` (true indexing) so that
/// index `k` refers to the true series matched to estimated series `k`.
pub fn align_beta(beta: &DMatrix<f64>, perm: &[usize]) -> Result<DMatrix<f64>> {
    let dim = perm.len();
    check_dim(dim, beta.nrows())?;
    if beta.ncols() == 0 || !(beta.ncols() - 1).is_multiple_of(dim) {
        return Err(invalid("coefficient matrix has no (ν, A_1..A_h) layout"));
    }
    let h = (beta.ncols() - 1) / dim;
    Ok(DMatrix::from_fn(dim, beta.ncols(), |i, c| {
        if c == 0 {
            beta[(perm[i], 0)]
        } else {
            let (k, j) = ((c - 1) / dim, (c - 1) % dim);
            debug_assert!(k < h);
            beta[(perm[i], 1 + k * dim + perm[j])]
        }
    }))
}

/// Concatenated factor and idiosyncratic matchings.
fn series_matching(est_factor: &DMatrix<f64>, est_idio: &DMatrix<f64>, params: &FivarParams) -> Result<Vec<usize>> {
    let r = params.r;
    let mut perm = basis_matching(est_factor, &params.q_factor)?;
    perm.extend(basis_matching(est_idio, &params.q_idio)?.into_iter().map(|j| j + r));
    Ok(perm)
}

fn run_cell(
    cfg: &StudyConfig,
    fitter: &dyn VarFitter,
    panel: &crate::sim::TickPanel,
    replication: usize,
    beta0: &DMatrix<f64>,
) -> Result<Vec<ReplicationRecord>> {
    let (n, m) = (panel.n, panel.m);
    let truth = panel
        .truth
        .as_ref()
        .ok_or_else(|| invalid("study panels must carry the truth"))?;
    let params = &cfg.params;
    let series = prvm_series(panel, &cfg.prvm, true)?;
    let mut poet = PoetConfig {
        rank: params.r,
        scheme: cfg.scheme.clone(),
        upsilon: 0.0,
        eigen_window: n,
    };
    let unused_rule = ThresholdRule { c: 1.0, s_i: 0.0 };
    poet.upsilon = threshold_select(&series, &poet, &cfg.threshold_grid, Some(&truth.sigma), &unused_rule, m)?;
    let days = decompose_days(&series, &poet)?;
    let eig = eigen_series(&series.matrices, &days, params.r, n)?;

    let rep = params.var_representation()?;
    let history: Vec<DVector<f64>> = (0..params.h).map(|k| truth.xi.row(n - 1 - k).transpose()).collect();
    let target = params.gamma_from_xi(&rep.conditional_mean(&history));

    let needs_alignment = cfg.methods.iter().any(|e| e.var_method().is_some());
    let aligned = if needs_alignment {
        let perm = series_matching(&eig.factor_vectors, &eig.idio_vectors, params)?;
        Some(align_beta(beta0, &perm)?)
    } else {
        None
    };

    let mut out = Vec::with_capacity(cfg.methods.len());
    for &estimator in &cfg.methods {
        let (gamma, beta): (SymMatrix, Option<NormReport>) = match estimator.var_method() {
            None => (days[n - 1].estimate(), None),
            Some(method) => {
                let fit = fitter.fit(&eig, method)?;
                let beta_err = rect_norms(&fit.beta, aligned.as_ref().expect("aligned when fitting"))?;
                (forecast(&fit, &eig)?.gamma_next, Some(beta_err))
            }
        };
        out.push(ReplicationRecord {
            replication,
            n,
            m,
            estimator,
            beta,
            forecast: matrix_norms(&gamma, &target, Some(&target))?,
        });
    }
    Ok(out)
}

fn run_replication(
    cfg: &StudyConfig,
    fitter: &dyn VarFitter,
    replication: usize,
    beta0: &DMatrix<f64>,
) -> Result<Vec<ReplicationRecord>> {
    let n_max = *cfg.n_grid.iter().max().expect("non-empty");
    let seed = cfg.seed.wrapping_add(replication as u64);
    let full = simulate_panel(&cfg.params, n_max, cfg.m_all, cfg.m_all, seed)?;
    let mut out = Vec::new();
    for &m in &cfg.m_grid {
        let thin = full.subsample(cfg.m_all / m)?;
        for &n in &cfg.n_grid {
            out.extend(run_cell(cfg, fitter, &thin.prefix(n)?, replication, beta0)?);
        }
    }
    Ok(out)
}

/// Runs all replications; panels for smaller `n` are prefixes and panels
/// for smaller `m` are subsamples of one simulation per replication.
pub fn run_study(cfg: &StudyConfig, fitter: &dyn VarFitter) -> Result<StudyReport> {
    cfg.check()?;
    let beta0 = cfg.params.true_beta()?;
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, fitter, rep, &beta0))
        .collect::<Result<_>>()?;
    let records: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();

    let mut cells = Vec::new();
    for &n in &cfg.n_grid {
        for &m in &cfg.m_grid {
            for &estimator in &cfg.methods {
                let sel: Vec<&ReplicationRecord> = records
                    .iter()
                    .filter(|r| r.n == n && r.m == m && r.estimator == estimator)
                    .collect();
                cells.push(CellSummary {
                    n,
                    m,
                    estimator,
                    beta: ErrorStats::mean(sel.iter().filter_map(|r| r.beta.as_ref())),
                    forecast: ErrorStats::mean(sel.iter().map(|r| &r.forecast)).expect("one record per replication"),
                });
            }
        }
    }
    Ok(StudyReport { cells, records })
}
