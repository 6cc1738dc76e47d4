//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fivar_core::eval::{backtest, kkt_residual, min_variance_weights, run_study, Estimator, StudyConfig};
use fivar_core::forecast::select_lag;
use fivar_core::matutil::SymMatrix;
use fivar_core::poet::{
    decompose_days, eigen_series, select_rank, EigenSeries, PoetConfig, RankCriterion, ThresholdRule, ThresholdScheme,
};
use fivar_core::robustvar::{huber_grad, huber_loss, HuberLassoProblem, LagDesign, Method, RobustConfig};
use fivar_core::rv::{prvm_series, PrvmConfig, VolMatrixSeries};
use fivar_core::sim::{design_params, simulate_eigen_paths, simulate_panel, var_representation, FivarParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

// 1. Transition series against a plain 50-term summation.

fn bare_params(dim: usize, zeta: DMatrix<f64>, a: DVector<f64>) -> FivarParams {
    FivarParams {
        p: dim,
        r: 0,
        h: 1,
        a,
        zeta: vec![zeta],
        q_factor: DMatrix::zeros(dim, 0),
        q_idio: DMatrix::identity(dim, dim),
        noise_df: None,
        fluct_scale: DVector::from_element(dim, 1.0),
        jump_intensity: DVector::zeros(dim),
        micro_noise_scale: 0.0,
        jump_scale: 0.0,
    }
}

fn criterion_1() -> Outcome {
    let mut g = rng(101);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let dim = 1 + case % 5;
        let raw = DMatrix::from_fn(dim, dim, |_, _| g.random_range(-1.0..1.0));
        let rho = spectral_radius(&raw);
        let target = g.random_range(0.0..0.9);
        let zeta = if rho > 0.0 { raw * (target / rho) } else { raw };
        let a = DVector::from_fn(dim, |_, _| g.random_range(0.0..1.0));
        let ez2 = DVector::from_fn(dim, |_, _| g.random_range(0.0..1.0));

        // Oracle: ζˡ and l! built independently, exactly 50 terms.
        let mut pi1 = DMatrix::zeros(dim, dim);
        let mut pi2 = DMatrix::zeros(dim, dim);
        let mut kern = DMatrix::zeros(dim, dim);
        let mut power = DMatrix::identity(dim, dim);
        let mut fact = 1.0f64; // l!
        for l in 0..50 {
            let lf = l as f64;
            pi1 += &power / (fact * (lf + 1.0));
            pi2 += &power / (fact * (lf + 1.0) * (lf + 2.0));
            kern += &power * ((1.0 / (fact * (lf + 1.0)) - 1.0 / (fact * (lf + 1.0) * (lf + 2.0))) / (lf + 3.0));
            power = &power * &zeta;
            fact *= lf + 1.0;
        }
        let a1 = (&pi1 - &pi2) * &zeta;
        let nu = &pi1 * &a + &kern * &ez2;

        let rep = var_representation(&bare_params(dim, zeta, a), &ez2).expect("stable input");
        for (x, y) in [(&rep.pi1, &pi1), (&rep.pi2, &pi2), (&rep.a_mats[0], &a1)] {
            worst = worst.max(max_abs_diff(x, y));
        }
        worst = worst.max((&rep.nu - &nu).amax());
    }
    outcome(
        worst <= 1e-12,
        format!("max entrywise error {worst:.2e} over 100 cases, dims 1-5 (tol 1e-12)"),
    )
}

// 2. Huber gradient.

fn criterion_2() -> Outcome {
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for tau in [0.1, 0.5, 1.0, 2.0, 10.0] {
        for k in 0..=100 {
            let x = -5.0 * tau + 10.0 * tau * k as f64 / 100.0;
            let fd = (huber_loss(x + step, tau) - huber_loss(x - step, tau)) / (2.0 * step);
            worst = worst.max((fd - huber_grad(x, tau)).abs());
        }
    }
    outcome(
        worst < 1e-6,
        format!("max error {worst:.2e} at 101 points in [-5τ, 5τ], 5 values of τ (tol 1e-6)"),
    )
}

// 3. Quadratic-loss LASSO by plain coordinate descent, intercept first and
// unpenalized: minimize (1/2N)‖y - Xβ‖² + η Σ_{j≥1} |β_j|.

fn lasso_oracle(x: &DMatrix<f64>, y: &DVector<f64>, eta: f64) -> DVector<f64> {
    let (n, k) = (x.nrows() as f64, x.ncols());
    let mut beta = DVector::zeros(k);
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        for j in 0..k {
            let col = x.column(j);
            let partial = y - x * &beta + col * beta[j];
            let rho = col.dot(&partial) / n;
            let z = col.norm_squared() / n;
            let new = if j == 0 {
                rho / z
            } else {
                rho.signum() * (rho.abs() - eta).max(0.0) / z
            };
            change = change.max((new - beta[j]).abs());
            beta[j] = new;
        }
        if change < 1e-15 {
            break;
        }
    }
    beta
}

fn random_series(g: &mut ChaCha8Rng, n: usize, p: usize, r: usize, heavy: bool) -> EigenSeries {
    let t = StudentT::new(3.0).unwrap();
    let values = DMatrix::from_fn(n, p + r, |_, _| {
        let e: f64 = if heavy { t.sample(g) } else { g.sample(StandardNormal) };
        1.0 + 0.3 * e
    });
    EigenSeries {
        factor_vectors: DMatrix::identity(p, r),
        idio_vectors: DMatrix::identity(p, p),
        values,
        idio_matrices: None,
    }
}

fn criterion_3() -> Outcome {
    let mut g = rng(303);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        // p + r = 3 series, h = 1, 30 regression observations.
        let series = random_series(&mut g, 31, 2, 1, false);
        let design = LagDesign::new(&series, 1, 1, true).unwrap();
        let row = g.random_range(1..3);
        let (x, y) = design.idio_problem(row, f64::INFINITY);
        let eta = g.random_range(0.01..0.3);
        let penalized = [false, true, true, true];
        let sol = HuberLassoProblem::new(&x, &y, f64::INFINITY, eta, &penalized)
            .unwrap()
            .solve(None)
            .unwrap();
        let oracle = lasso_oracle(&x, &y, eta);
        worst = worst.max((&sol.beta - &oracle).amax());
    }
    outcome(
        worst < 1e-5,
        format!("max ℓ∞ gap {worst:.2e} on 20 instances (tol 1e-5)"),
    )
}

// 4. Subgradient conditions, computed here from the residuals.

fn criterion_4() -> Outcome {
    let mut g = rng(404);
    let mut worst: f64 = 0.0;
    let mut active_total = 0;
    for _ in 0..50 {
        let p = g.random_range(3..8);
        let series = random_series(&mut g, 60, p, 1, true);
        let design = LagDesign::new(&series, 1, 1, true).unwrap();
        let row = g.random_range(1..p + 1);
        let varpi = g.random_range(1.0..4.0);
        let tau = g.random_range(0.3..3.0);
        let eta = g.random_range(0.005..0.2);
        let (x, y) = design.idio_problem(row, varpi);
        let mut penalized = vec![true; x.ncols()];
        penalized[0] = false;
        let beta = HuberLassoProblem::new(&x, &y, tau, eta, &penalized)
            .unwrap()
            .solve(None)
            .unwrap()
            .beta;
        let n = x.nrows() as f64;
        let psi = (&y - &x * &beta).map(|e| e.clamp(-tau, tau));
        for j in 0..x.ncols() {
            let grad = -x.column(j).dot(&psi) / n;
            let violation = if !penalized[j] {
                grad.abs()
            } else if beta[j] == 0.0 {
                (grad.abs() - eta).max(0.0)
            } else {
                active_total += 1;
                (grad + eta * beta[j].signum()).abs()
            };
            worst = worst.max(violation);
        }
    }
    outcome(
        worst <= 1e-6,
        format!("max violation {worst:.2e} over 50 fits, {active_total} active coefficients (tol 1e-6)"),
    )
}

// 5. Noise-free paths against the implied VAR.

fn criterion_5() -> Outcome {
    let mut params = design_params(20, false, 5).unwrap();
    params.fluct_scale.fill(0.0);
    let n = 30;
    let paths = simulate_eigen_paths(&params, n, 2000, 9).unwrap();
    let rep = var_representation(&params, &DVector::zeros(params.dim())).unwrap();
    let mut worst: f64 = 0.0;
    for d in 1..n {
        let prev = paths.xi.row(d - 1).transpose();
        let pred = &rep.nu + &rep.a_mats[0] * prev;
        worst = worst.max((paths.xi.row(d).transpose() - pred).amax());
    }
    outcome(
        worst < 1e-3,
        format!(
            "max error {worst:.2e} over {} days at 2000 steps per day (tol 1e-3)",
            n - 1
        ),
    )
}

// 6 and 7. Monte-Carlo study at desk scale.

fn desk_study() -> fivar_core::eval::StudyReport {
    let cfg = StudyConfig {
        params: design_params(50, true, 1).unwrap(),
        n_grid: vec![100, 200],
        m_grid: vec![500, 1000],
        m_all: 1000,
        replications: 50,
        seed: 20_000,
        methods: Estimator::ALL.to_vec(),
        prvm: PrvmConfig::default(),
        scheme: ThresholdScheme::Soft,
        threshold_grid: (0..=20).map(|k| k as f64 * 0.05).collect(),
    };
    run_study(&cfg, &RobustConfig::default()).expect("study runs")
}

fn criterion_6(report: &fivar_core::eval::StudyReport) -> Outcome {
    let beta = |n, m, e| report.cell(n, m, e).and_then(|c| c.beta).map(|b| b.frobenius).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [500, 1000] {
        for n in [100, 200] {
            let (h, l) = (beta(n, m, Estimator::HLasso), beta(n, m, Estimator::Lasso));
            pass &= h < l;
            parts.push(format!("n={n},m={m}: H {h:.3} vs L {l:.3}"));
        }
        let decreasing = beta(200, m, Estimator::HLasso) < beta(100, m, Estimator::HLasso);
        pass &= decreasing;
        parts.push(format!("m={m} H decreases in n: {decreasing}"));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_7(report: &fivar_core::eval::StudyReport) -> Outcome {
    let rel = |n, m, e| report.cell(n, m, e).unwrap().forecast.relative_frobenius.unwrap().ln();
    let order = [Estimator::Prvm, Estimator::Ols, Estimator::Lasso, Estimator::HLasso];
    let mut holds = 0;
    let mut parts = Vec::new();
    for n in [100, 200] {
        for m in [500, 1000] {
            let v: Vec<f64> = order.iter().map(|e| rel(n, m, *e)).collect();
            let ok = v.windows(2).all(|w| w[0] > w[1]);
            holds += ok as usize;
            parts.push(format!(
                "n={n},m={m}: {}",
                v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" > ")
            ));
        }
    }
    let share = holds as f64 / 4.0;
    outcome(
        share >= 0.8,
        format!(
            "ordering prvm>ols>lasso>hlasso of log rel. Frobenius holds in {holds}/4 cells (need >= 80%); {}",
            parts.join("; ")
        ),
    )
}

// 8. Exact decomposition of noiseless factor-plus-idiosyncratic matrices.

fn random_orthogonal(g: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(p, p, |_, _| g.sample::<f64, _>(StandardNormal));
    m.qr().q()
}

fn poet_exactness_case(rotated: bool, upsilon: f64) -> (f64, f64) {
    let (p, r, n) = (12, 3, 15);
    let mut g = rng(808);
    let u = if rotated {
        random_orthogonal(&mut g, p)
    } else {
        DMatrix::identity(p, p)
    };
    let qf = u.columns(0, r).into_owned();
    let qi = u.columns(r, p - r).into_owned();
    let mut xi_f = DMatrix::zeros(n, r);
    let mut sig = DMatrix::zeros(n, p - r);
    let mut gammas = Vec::new();
    let mut sigmas = Vec::new();
    for d in 0..n {
        for k in 0..r {
            xi_f[(d, k)] = (3.0 - k as f64) * (1.0 + 0.2 * ((d * (k + 1)) as f64).cos());
        }
        for i in 0..p - r {
            sig[(d, i)] = (1.0 - 0.05 * i as f64) * (1.0 + 0.1 * ((d + i) as f64).sin());
        }
        let psi = &qf * DMatrix::from_diagonal(&(xi_f.row(d).transpose() * p as f64)) * qf.transpose();
        let sigma = &qi * DMatrix::from_diagonal(&sig.row(d).transpose()) * qi.transpose();
        gammas.push(SymMatrix::new(&psi + &sigma));
        sigmas.push(SymMatrix::new(sigma));
    }
    let series = VolMatrixSeries::new(gammas);
    let cfg = PoetConfig {
        rank: r,
        scheme: ThresholdScheme::Soft,
        upsilon,
        eigen_window: n,
    };
    let days = decompose_days(&series, &cfg).unwrap();
    let eig = eigen_series(&series.matrices, &days, r, n).unwrap();
    // Idiosyncratic truth: the p - r values in decreasing mean order, then
    // r zeros along the factor directions.
    let mut xi_err: f64 = 0.0;
    let mut sigma_err: f64 = 0.0;
    for d in 0..n {
        for k in 0..r {
            xi_err = xi_err.max((eig.values[(d, k)] - xi_f[(d, k)]).abs());
        }
        for i in 0..p {
            let truth = if i < p - r { sig[(d, i)] } else { 0.0 };
            xi_err = xi_err.max((eig.values[(d, r + i)] - truth).abs());
        }
        sigma_err = sigma_err.max(max_abs_diff(days[d].sigma.as_matrix(), sigmas[d].as_matrix()));
    }
    (xi_err, sigma_err)
}

fn criterion_8() -> Outcome {
    let (xa, sa) = poet_exactness_case(true, 0.0);
    let (xb, sb) = poet_exactness_case(false, 0.5);
    let pass = xa.max(xb) < 1e-10 && sa.max(sb) < 1e-10;
    outcome(
        pass,
        format!(
            "rotated basis, dense Σ, υ=0: ξ err {xa:.1e}, Σ err {sa:.1e}; axis basis, diagonal Σ, soft υ=0.5: ξ err {xb:.1e}, Σ err {sb:.1e} (tol 1e-10)"
        ),
    )
}

// 9. Rank and lag selection.

fn criterion_9() -> Outcome {
    let params = design_params(200, true, 1).unwrap();
    let mut ranks = Vec::new();
    for seed in [91u64, 92] {
        let panel = simulate_panel(&params, 10, 390, 780, seed).unwrap();
        let vol = prvm_series(&panel, &PrvmConfig::default(), true).unwrap();
        ranks.push(select_rank(&vol, &RankCriterion::default(), 390).unwrap());
    }
    let small = design_params(50, true, 1).unwrap();
    let mut lags = Vec::new();
    for seed in [93u64, 94, 95] {
        let paths = simulate_eigen_paths(&small, 200, 200, seed).unwrap();
        let series = EigenSeries {
            factor_vectors: small.q_factor.clone(),
            idio_vectors: small.q_idio.clone(),
            values: paths.xi,
            idio_matrices: None,
        };
        lags.push(select_lag(&series, 3, Method::HLasso, &RobustConfig::default()).unwrap());
    }
    let pass = ranks.iter().all(|r| *r == 3) && lags.iter().all(|h| *h == 1);
    outcome(
        pass,
        format!("ranks {ranks:?} (p=200, 10 days, m=390); H-LASSO BIC lags {lags:?} (h_max=3)"),
    )
}

// 10. Portfolio problem.

fn criterion_10() -> Outcome {
    let mut g = rng(1010);
    let mut two: f64 = 0.0;
    for _ in 0..100 {
        let s1: f64 = g.random_range(0.5..4.0);
        let s2: f64 = g.random_range(0.5..4.0);
        let rho = g.random_range(-0.9..0.95);
        let c = rho * (s1 * s2).sqrt();
        let c0 = g.random_range(1.0..3.0);
        let gamma = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[s1, c, c, s2]));
        let free = (s2 - c) / (s1 + s2 - 2.0 * c);
        let w1 = free.clamp((1.0 - c0) / 2.0, (1.0 + c0) / 2.0);
        let w = min_variance_weights(&gamma, c0).unwrap().w;
        two = two.max((w[0] - w1).abs()).max((w[1] - (1.0 - w1)).abs());
    }

    let mut sym: f64 = 0.0;
    for p in [2usize, 5, 10, 37] {
        for (s, rho) in [(1.0, 0.0), (0.3, 0.4), (2.0, -0.5 / p as f64)] {
            let m = DMatrix::from_fn(p, p, |i, j| if i == j { s } else { rho * s });
            let w = min_variance_weights(&SymMatrix::new(m), 1.5).unwrap().w;
            sym = sym.max(w.iter().map(|v| (v - 1.0 / p as f64).abs()).fold(0.0, f64::max));
        }
    }

    let mut kkt: f64 = 0.0;
    let mut budget: f64 = 0.0;
    let mut exposure: f64 = 0.0;
    for _ in 0..100 {
        let p = g.random_range(2..16);
        let k = g.random_range(1..p + 3);
        let b = DMatrix::from_fn(p, k, |_, _| g.sample::<f64, _>(StandardNormal));
        let gamma = SymMatrix::new(&b * b.transpose() / k as f64);
        let c0 = g.random_range(1.0..3.0);
        let w = min_variance_weights(&gamma, c0).unwrap().w;
        kkt = kkt.max(kkt_residual(&gamma, c0, &w));
        budget = budget.max((w.sum() - 1.0).abs());
        exposure = exposure.max(w.lp_norm(1) - c0);
    }
    let pass = two < 1e-7 && sym <= 1e-14 && kkt < 1e-6 && budget < 1e-8 && exposure < 1e-6;
    outcome(
        pass,
        format!(
            "2-asset oracle err {two:.1e} (tol 1e-7); equal-variance err {sym:.1e}; KKT max {kkt:.1e} on 100 PSD (tol 1e-6); budget err {budget:.1e}; exposure excess {exposure:.1e}"
        ),
    )
}

// 11. Risk curves of the rolling backtest.

fn criterion_11() -> Outcome {
    let params = design_params(50, true, 1).unwrap();
    let cfg = fivar_core::eval::BacktestConfig {
        window: 100,
        eigen_window: 22,
        rank: 3,
        methods: Estimator::ALL.to_vec(),
        exposure_grid: (0..=8).map(|k| 1.0 + 0.25 * k as f64).collect(),
        realized_return_interval: 10.0,
        session_minutes: 390.0,
        periods: 1,
        scheme: ThresholdScheme::Soft,
        upsilon: ThresholdRule { c: 1.0, s_i: 1.0 }.level(50, 100, 500),
    };
    let mut inflation_ok = 0;
    let mut min_ok = 0;
    let mut parts = Vec::new();
    for seed in [1u64, 2, 3] {
        let panel = simulate_panel(&params, 160, 500, 1000, seed).unwrap();
        let report = backtest(&panel, &PrvmConfig::default(), &cfg, &RobustConfig::default()).unwrap();
        let risk = |e| report.summary(e).unwrap().risk.clone();
        let ols = risk(Estimator::Ols);
        let h = risk(Estimator::HLasso);
        let (fo, fh) = (ols[8] / ols[0], h[8] / h[0]);
        inflation_ok += (fo > fh) as usize;
        let mins: Vec<(Estimator, f64)> = Estimator::ALL
            .iter()
            .map(|e| (*e, risk(*e).into_iter().fold(f64::INFINITY, f64::min)))
            .collect();
        let best = mins.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        min_ok += (best == Estimator::HLasso) as usize;
        parts.push(format!(
            "seed {seed}: c0 3/1 factor ols {fo:.4} hlasso {fh:.4}; min risk {}",
            mins.iter()
                .map(|(e, v)| format!("{e} {v:.5}"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    let pass = inflation_ok == 3 && min_ok >= 2;
    outcome(
        pass,
        format!(
            "OLS inflates more in {inflation_ok}/3 seeds (need 3/3); H-LASSO has the lowest risk in {min_ok}/3 seeds (need 2/3); {}",
            parts.join("; ")
        ),
    )
}

// 12. Re-running the pipeline from its manifest.

fn run_fivar(args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fivar"))
        .args(args)
        .env_remove("FIVAR_OUT_DIR")
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("fivar {args:?} exited with {status}"))
    }
}

fn tree(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            tree(&path, root, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().display().to_string();
            out.push((rel, std::fs::read(&path).unwrap()));
        }
    }
}

fn criterion_12() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    let manifest = first.join("manifest.json");
    let (f, s, m) = (
        first.to_str().unwrap(),
        second.to_str().unwrap(),
        manifest.to_str().unwrap(),
    );
    let args = [
        "pipeline",
        "--preset",
        "desk-small",
        "--p",
        "20",
        "--n",
        "60",
        "--window",
        "40",
        "--replications",
        "2",
        "--seed",
        "12",
        "--log-level",
        "warn",
        "--out",
        f,
    ];
    if let Err(e) = run_fivar(&args) {
        return outcome(false, e);
    }
    if let Err(e) = run_fivar(&["pipeline", "--manifest", m, "--log-level", "warn", "--out", s]) {
        return outcome(false, e);
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    tree(&first, &first, &mut a);
    tree(&second, &second, &mut b);
    let same = a == b;
    let mspe_same = std::fs::read(first.join("mspe.csv")).ok() == std::fs::read(second.join("mspe.csv")).ok();
    outcome(
        same && mspe_same && !a.is_empty(),
        format!(
            "{} files compared, all byte-identical: {same} (mspe.csv identical: {mspe_same})",
            a.len()
        ),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failures += !out.pass as usize;
        println!(
            "{} {id:>2} {name} [{:.1}s]: {}",
            if out.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            out.detail
        );
    };
    report(1, "transition series oracle", &mut criterion_1);
    report(2, "Huber gradient", &mut criterion_2);
    report(3, "H-LASSO vs LASSO oracle", &mut criterion_3);
    report(4, "KKT conditions", &mut criterion_4);
    report(5, "simulator vs VAR", &mut criterion_5);
    let start = Instant::now();
    let study = std::panic::catch_unwind(desk_study).ok();
    println!(
        "     desk study, 50 replications: {:.1}s",
        start.elapsed().as_secs_f64()
    );
    report(6, "coefficient errors at desk scale", &mut || match &study {
        Some(s) => criterion_6(s),
        None => outcome(false, "study panicked".into()),
    });
    report(7, "forecast error ordering at desk scale", &mut || match &study {
        Some(s) => criterion_7(s),
        None => outcome(false, "study panicked".into()),
    });
    report(8, "POET exactness", &mut criterion_8);
    report(9, "rank and lag selection", &mut criterion_9);
    report(10, "portfolio QP", &mut criterion_10);
    report(11, "backtest risk curves", &mut criterion_11);
    report(12, "pipeline determinism", &mut criterion_12);
    println!("{} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
