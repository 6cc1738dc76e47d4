use fivar_core::forecast::reconstruct;
use fivar_core::matutil::{eigen_sym, SymMatrix};
use fivar_core::poet::{
    decompose_days, poet_decompose, select_rank, threshold_residual, threshold_select, PoetConfig, RankCriterion,
    ThresholdRule, ThresholdScheme,
};
use fivar_core::rv::{prvm_series, PrvmConfig, VolMatrixSeries};
use fivar_core::sim::{design_params, simulate_panel};
use fivar_core::FivarError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// `B·Bᵀ + diag(d)` from raw entries.
fn psd_from(raw: &[f64], p: usize, k: usize, diag: &[f64]) -> SymMatrix {
    let b = DMatrix::from_column_slice(p, k, &raw[..p * k]);
    SymMatrix::new(&b * b.transpose() + DMatrix::from_diagonal(&DVector::from_column_slice(&diag[..p])))
}

fn symmetric_from(raw: &[f64], p: usize) -> SymMatrix {
    let a = DMatrix::from_column_slice(p, p, &raw[..p * p]);
    SymMatrix::new((&a + a.transpose()) * 0.5)
}

fn cfg(rank: usize, scheme: ThresholdScheme, upsilon: f64, window: usize) -> PoetConfig {
    PoetConfig {
        rank,
        scheme,
        upsilon,
        eigen_window: window,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_series_reconstructs_exactly(
        raw in prop::collection::vec(-1.0f64..1.0, 18),
        diag in prop::collection::vec(0.01f64..1.0, 6),
        rank in 1usize..4,
    ) {
        let gamma = psd_from(&raw, 6, 3, &diag);
        let series = VolMatrixSeries::new(vec![gamma.clone(); 3]);
        let es = poet_decompose(&series, &cfg(rank, ThresholdScheme::Soft, 0.0, 3)).unwrap();
        for d in 0..3 {
            let rebuilt = reconstruct(&es.day(d), &es.factor_vectors, &es.idio_vectors).unwrap();
            prop_assert!((rebuilt.gamma_next.as_matrix() - gamma.as_matrix()).amax() < 1e-10);
        }
    }

    #[test]
    fn constant_series_idio_values_are_eigenvalues(
        raw in prop::collection::vec(-1.0f64..1.0, 18),
        diag in prop::collection::vec(0.01f64..1.0, 6),
        upsilon in 0.0f64..1.0,
    ) {
        let gamma = psd_from(&raw, 6, 3, &diag);
        let series = VolMatrixSeries::new(vec![gamma; 2]);
        let c = cfg(2, ThresholdScheme::Soft, upsilon, 2);
        let es = poet_decompose(&series, &c).unwrap();
        let days = decompose_days(&series, &c).unwrap();
        let eig = eigen_sym(&days[0].sigma).unwrap().values;
        for i in 0..6 {
            prop_assert!((es.values[(1, 2 + i)] - eig[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn soft_threshold_moves_entries_by_at_most_the_level(
        raw in prop::collection::vec(-1.0f64..1.0, 25),
        upsilon in 0.0f64..2.0,
    ) {
        let resid = symmetric_from(&raw, 5);
        let out = threshold_residual(&resid, &ThresholdScheme::Soft, upsilon);
        for i in 0..5 {
            prop_assert_eq!(out[(i, i)], resid[(i, i)].max(0.0));
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let level = upsilon * (resid[(i, i)].max(0.0) * resid[(j, j)].max(0.0)).sqrt();
                let (x, g) = (resid[(i, j)], out[(i, j)]);
                if g != 0.0 {
                    prop_assert!((g - x).abs() <= level + 1e-15);
                    prop_assert!(g.signum() == x.signum());
                } else {
                    prop_assert!(x.abs() <= level);
                }
            }
        }
    }

    #[test]
    fn single_sector_and_hard_zero_are_identity_off_diagonal(raw in prop::collection::vec(-1.0f64..1.0, 25)) {
        let resid = symmetric_from(&raw, 5);
        let sector = threshold_residual(&resid, &ThresholdScheme::SectorHard { sectors: vec![7; 5] }, 0.5);
        let hard = threshold_residual(&resid, &ThresholdScheme::Hard, 0.0);
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { resid[(i, i)].max(0.0) } else { resid[(i, j)] };
                prop_assert_eq!(sector[(i, j)], expect);
                if i != j && resid[(i, j)] != 0.0 {
                    prop_assert_eq!(hard[(i, j)], expect);
                }
            }
        }
    }
}

/// One dominant factor over heterogeneous idiosyncratic variances.
fn one_factor_series(p: usize, n: usize) -> VolMatrixSeries {
    let q = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    let matrices = (0..n)
        .map(|d| {
            let xi = 0.2 + 0.01 * d as f64;
            let idio = DVector::from_fn(p, |i, _| 0.5 + (i * 7 % 11) as f64 / 10.0);
            SymMatrix::new(&q * q.transpose() * (p as f64 * xi) + DMatrix::from_diagonal(&idio))
        })
        .collect();
    VolMatrixSeries::new(matrices)
}

#[test]
fn dominant_single_factor_gives_rank_one() {
    let series = one_factor_series(100, 5);
    assert_eq!(select_rank(&series, &RankCriterion::default(), 500).unwrap(), 1);
}

#[test]
fn overwhelming_penalty_hits_the_rank_guard() {
    let series = one_factor_series(100, 5);
    let crit = RankCriterion {
        c1_mult: 1e9,
        ..Default::default()
    };
    assert!(matches!(
        select_rank(&series, &crit, 500),
        Err(FivarError::MinimumRank { selected: 0 })
    ));
}

#[test]
fn threshold_selection_prefers_smallest_level_when_truth_is_the_residual() {
    let series = one_factor_series(20, 4);
    let c = cfg(1, ThresholdScheme::Soft, 0.0, 4);
    let resid: Vec<SymMatrix> = decompose_days(&series, &c)
        .unwrap()
        .into_iter()
        .map(|d| d.sigma)
        .collect();
    let grid = [0.5, 0.0, 0.25, 1.0];
    let chosen = threshold_select(
        &series,
        &c,
        &grid,
        Some(&resid),
        &ThresholdRule { c: 1.0, s_i: 1.0 },
        500,
    )
    .unwrap();
    assert_eq!(chosen, 0.0);
}

#[test]
fn threshold_selection_prefers_large_level_for_diagonal_truth() {
    // Residuals with small off-diagonal noise around a diagonal truth.
    let p = 10;
    let mut matrices = Vec::new();
    let mut truth = Vec::new();
    for d in 0..4 {
        let diag = DVector::from_fn(p, |i, _| 1.0 + 0.1 * i as f64);
        let noise = DMatrix::from_fn(p, p, |i, j| {
            0.05 * (((i * 31 + j * 17 + d * 7) % 13) as f64 / 6.0 - 1.0)
        });
        let noise = (&noise + noise.transpose()) * 0.5;
        let mut sigma = DMatrix::from_diagonal(&diag);
        sigma += DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { noise[(i, j)] });
        let f = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        matrices.push(SymMatrix::new(&f * f.transpose() * 20.0 + sigma));
        truth.push(SymMatrix::from_diagonal(diag.as_slice()));
    }
    let series = VolMatrixSeries::new(matrices);
    let c = cfg(1, ThresholdScheme::Soft, 0.0, 4);
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
    let chosen = threshold_select(
        &series,
        &c,
        &grid,
        Some(&truth),
        &ThresholdRule { c: 1.0, s_i: 1.0 },
        500,
    )
    .unwrap();
    assert!(chosen > 0.0);
    let err = |u: f64| -> f64 {
        decompose_days(&series, &cfg(1, ThresholdScheme::Soft, u, 4))
            .unwrap()
            .iter()
            .zip(&truth)
            .map(|(d, t)| (d.sigma.as_matrix() - t.as_matrix()).norm())
            .sum()
    };
    assert!(err(chosen) < err(0.0));
}

#[test]
fn factor_eigenvalue_error_shrinks_with_sampling_frequency() {
    let params = design_params(50, true, 1).unwrap();
    let rule = ThresholdRule { c: 1.0, s_i: 1.0 };
    let mut errors = Vec::new();
    for m in [500, 2000] {
        let mut total = 0.0;
        for seed in 0..3 {
            let panel = simulate_panel(&params, 10, m, 2000, 500 + seed).unwrap();
            let series = prvm_series(&panel, &PrvmConfig::default(), true).unwrap();
            let c = cfg(3, ThresholdScheme::Soft, rule.level(50, 10, m), 10);
            let es = poet_decompose(&series, &c).unwrap();
            let truth = &panel.truth.as_ref().unwrap().xi;
            let mut worst: f64 = 0.0;
            for d in 0..10 {
                for i in 0..3 {
                    worst = worst.max((es.values[(d, i)] - truth[(d, i)]).abs());
                }
            }
            total += worst;
        }
        errors.push(total);
    }
    assert!(errors[1] < errors[0], "factor errors {errors:?}");
}
