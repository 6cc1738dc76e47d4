use fivar_core::poet::EigenSeries;
use fivar_core::robustvar::{fit, LagDesign, Method, RobustConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

const R: usize = 2;
const P: usize = 6;
const DIM: usize = R + P;

/// True `(ν, A)` of a VAR(1) with a closed factor block and sparse
/// idiosyncratic rows.
fn true_beta() -> DMatrix<f64> {
    let mut beta = DMatrix::zeros(DIM, DIM + 1);
    beta[(0, 0)] = 0.2;
    beta[(1, 0)] = 0.1;
    beta[(0, 1)] = 0.5;
    beta[(0, 2)] = 0.1;
    beta[(1, 2)] = 0.4;
    for i in R..DIM {
        beta[(i, 0)] = 0.5 + 0.1 * i as f64;
        beta[(i, 1 + i)] = 0.3;
    }
    beta[(R, 1 + R + 1)] = 0.2;
    beta
}

/// Simulates `n` days; `df = None` gives Gaussian innovations.
fn simulate(beta: &DMatrix<f64>, n: usize, df: Option<f64>, scale: f64, seed: u64) -> EigenSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = beta.column(0).into_owned();
    let a = beta.columns(1, DIM).into_owned();
    let mut x = (DMatrix::identity(DIM, DIM) - &a).lu().solve(&nu).unwrap();
    let burn = 50;
    let mut values = DMatrix::zeros(n, DIM);
    for d in 0..n + burn {
        let eps = DVector::from_fn(DIM, |_, _| {
            let z: f64 = match df {
                Some(v) => StudentT::new(v).unwrap().sample(&mut rng),
                None => StandardNormal.sample(&mut rng),
            };
            scale * z
        });
        x = &nu + &a * &x + eps;
        if d >= burn {
            values.set_row(d - burn, &x.transpose());
        }
    }
    let mut factor_vectors = DMatrix::zeros(P, R);
    for k in 0..R {
        factor_vectors[(k, k)] = 1.0;
    }
    EigenSeries {
        factor_vectors,
        idio_vectors: DMatrix::identity(P, P),
        values,
        idio_matrices: None,
    }
}

fn unrobust() -> RobustConfig {
    RobustConfig {
        c_f1: 1e12,
        c_f2: 1e12,
        c_i1: 1e12,
        c_i2: 1e12,
        ..Default::default()
    }
}

#[test]
fn huge_robustification_reduces_to_lasso() {
    let series = simulate(&true_beta(), 150, Some(4.0), 0.1, 1);
    let lasso = fit(&series, Method::Lasso, &RobustConfig::default()).unwrap();
    let hlasso = fit(&series, Method::HLasso, &unrobust()).unwrap();
    let diff = (&lasso.beta - &hlasso.beta).amax();
    assert!(diff < 1e-6, "max coefficient difference {diff}");
    assert_eq!(lasso.tuning.unwrap().c_eta, hlasso.tuning.unwrap().c_eta);
}

#[test]
fn huge_robustification_factor_rows_match_least_squares() {
    let series = simulate(&true_beta(), 150, Some(4.0), 0.1, 2);
    let fitted = fit(&series, Method::HLasso, &unrobust()).unwrap();
    // Closed-form least squares on intercept plus factor lags.
    let design = LagDesign::new(&series, 1, 1, false).unwrap();
    for i in 0..R {
        let (x, y) = design.factor_problem(i, f64::INFINITY);
        let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
        let row = design.expand_factor_row(&ols);
        let diff = (fitted.beta.row(i).transpose() - row).amax();
        assert!(diff < 1e-6, "row {i}: {diff}");
    }
}

fn permuted_series(series: &EigenSeries, perm: &[usize]) -> EigenSeries {
    let mut out = series.clone();
    for (k, &src) in perm.iter().enumerate() {
        out.values.set_column(R + k, &series.values.column(R + src));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn idiosyncratic_permutation_is_equivariant(seed in 0u64..1000, perm in Just((0..P).collect::<Vec<_>>()).prop_shuffle()) {
        let series = simulate(&true_beta(), 120, Some(5.0), 0.1, seed);
        let moved = permuted_series(&series, &perm);
        let cfg = RobustConfig::default();
        let a = fit(&series, Method::HLasso, &cfg).unwrap();
        let b = fit(&moved, Method::HLasso, &cfg).unwrap();
        // Series index of position k in the permuted ordering.
        let idx = |k: usize| if k < R { k } else { R + perm[k - R] };
        for i in 0..DIM {
            prop_assert!((b.beta[(i, 0)] - a.beta[(idx(i), 0)]).abs() < 1e-6);
            for j in 0..DIM {
                prop_assert!((b.beta[(i, 1 + j)] - a.beta[(idx(i), 1 + idx(j))]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn factor_rows_scale_with_the_data(seed in 0u64..1000, c in 0.05f64..20.0) {
        let series = simulate(&true_beta(), 120, Some(5.0), 0.1, seed);
        let mut scaled = series.clone();
        scaled.values *= c;
        let cfg = RobustConfig::default();
        let a = fit(&series, Method::HLasso, &cfg).unwrap();
        let b = fit(&scaled, Method::HLasso, &cfg).unwrap();
        for i in 0..R {
            prop_assert!((b.beta[(i, 0)] - c * a.beta[(i, 0)]).abs() < 1e-7 * c.max(1.0));
            for j in 0..R {
                prop_assert!((b.beta[(i, 1 + j)] - a.beta[(i, 1 + j)]).abs() < 1e-7, "{} vs {}", b.beta[(i, 1 + j)], a.beta[(i, 1 + j)]);
            }
        }
    }
}

#[test]
fn robust_factor_rows_beat_least_squares_under_heavy_tails() {
    let beta0 = true_beta();
    let cfg = RobustConfig::default();
    let reps = 100;
    let mut wins = 0;
    for seed in 0..reps {
        let series = simulate(&beta0, 200, Some(2.5), 0.05, 10_000 + seed);
        let err = |m: Method| {
            let f = fit(&series, m, &cfg).unwrap();
            (0..R)
                .map(|i| (f.beta.row(i) - beta0.row(i)).norm_squared())
                .sum::<f64>()
                .sqrt()
        };
        if err(Method::HLasso) < err(Method::Ols) {
            wins += 1;
        }
    }
    assert!(wins >= 70, "robust fit better in {wins} of {reps}");
}
