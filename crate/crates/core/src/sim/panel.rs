use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::params::FivarParams;
use super::paths::EigenPathSimulator;
use super::seeded_stream;
use crate::error::{check_dim, invalid, Result};
use crate::matutil::{orthonormality_error, SymMatrix};

/// Synchronized, equally spaced log-price observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TickPanel {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// One (m+1)×p matrix per day; row k holds Y(t_{d,k}), t_{d,k} = d-1+k/m.
    /// Row 0 of day d repeats row m of day d-1.
    pub prices: Vec<DMatrix<f64>>,
    pub truth: Option<PanelTruth>,
}

/// Latent quantities retained by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelTruth {
    /// n × (p+r) daily integrated eigenvalues.
    pub xi: DMatrix<f64>,
    /// Daily integrated volatility matrices.
    pub gamma: Vec<SymMatrix>,
    /// Daily idiosyncratic parts.
    pub sigma: Vec<SymMatrix>,
    /// Efficient log-prices on the observation grid, when requested.
    pub latent: Option<Vec<DMatrix<f64>>>,
}

impl TickPanel {
    pub fn validate(&self) -> Result<()> {
        check_dim(self.n, self.prices.len())?;
        if self.m == 0 || self.p == 0 {
            return Err(invalid("panel needs m >= 1 and p >= 1"));
        }
        for (d, day) in self.prices.iter().enumerate() {
            check_dim(self.m + 1, day.nrows())?;
            check_dim(self.p, day.ncols())?;
            if day.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("non-finite price on day {}", d + 1)));
            }
        }
        Ok(())
    }

    /// Keeps every `step`-th observation; `m` must be divisible by `step`.
    pub fn subsample(&self, step: usize) -> Result<TickPanel> {
        if step == 0 || !self.m.is_multiple_of(step) {
            return Err(invalid(format!("cannot subsample m={} by {step}", self.m)));
        }
        let m = self.m / step;
        let thin = |day: &DMatrix<f64>| DMatrix::from_fn(m + 1, day.ncols(), |k, j| day[(k * step, j)]);
        Ok(TickPanel {
            n: self.n,
            m,
            p: self.p,
            prices: self.prices.iter().map(thin).collect(),
            truth: self.truth.as_ref().map(|t| PanelTruth {
                latent: t.latent.as_ref().map(|l| l.iter().map(thin).collect()),
                ..t.clone()
            }),
        })
    }

    /// First `n` days.
    pub fn prefix(&self, n: usize) -> Result<TickPanel> {
        if n == 0 || n > self.n {
            return Err(invalid(format!("prefix of {n} days from a {}-day panel", self.n)));
        }
        Ok(TickPanel {
            n,
            m: self.m,
            p: self.p,
            prices: self.prices[..n].to_vec(),
            truth: self.truth.as_ref().map(|t| PanelTruth {
                xi: t.xi.rows(0, n).into_owned(),
                gamma: t.gamma[..n].to_vec(),
                sigma: t.sigma[..n].to_vec(),
                latent: t.latent.as_ref().map(|l| l[..n].to_vec()),
            }),
        })
    }
}

/// Simulation switches that do not belong to the model itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct PanelOptions {
    pub keep_latent: bool,
}

/// Simulates `n` days on a grid of `m_all` steps per day and returns the
/// noisy observations subsampled to `m` points per day.
pub fn simulate_panel(params: &FivarParams, n: usize, m: usize, m_all: usize, seed: u64) -> Result<TickPanel> {
    simulate_panel_with(params, n, m, m_all, seed, PanelOptions::default())
}

pub fn simulate_panel_with(
    params: &FivarParams,
    n: usize,
    m: usize,
    m_all: usize,
    seed: u64,
    options: PanelOptions,
) -> Result<TickPanel> {
    if n == 0 || m == 0 {
        return Err(invalid("simulate_panel needs n >= 1 and m >= 1"));
    }
    if m > m_all || !m_all.is_multiple_of(m) {
        return Err(invalid(format!("m={m} must divide m_all={m_all}")));
    }
    params.validate()?;
    let (p, r) = (params.p, params.r);
    let step = m_all / m;
    let dt = 1.0 / m_all as f64;

    let mut eigen = EigenPathSimulator::new(params, m_all, seed)?;
    let mut rng_price = seeded_stream(seed, 3);
    let mut rng_jump = seeded_stream(seed, 4);
    let mut rng_noise = seeded_stream(seed, 5);
    let idio_is_identity =
        orthonormality_error(&params.q_idio) == 0.0 && (&params.q_idio - DMatrix::<f64>::identity(p, p)).amax() == 0.0;

    let mut x = DVector::<f64>::zeros(p);
    let mut prices = Vec::with_capacity(n);
    let mut latent = options.keep_latent.then(Vec::new);
    let mut xi_truth = DMatrix::zeros(n, params.dim());
    let mut gamma = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    // Noise and jump scales use the first day's integrated variances.
    let mut scale_var: Option<DVector<f64>> = None;
    let mut last_obs: Option<DVector<f64>> = None;

    let mut shock_f = DVector::zeros(r);
    let mut shock_i = DVector::zeros(p);
    for d in 0..n {
        let day = eigen.next_day();
        xi_truth.set_row(d, &day.xi.transpose());
        let g = params.gamma_from_xi(&day.xi);
        let var0 = scale_var.get_or_insert_with(|| g.as_matrix().diagonal()).clone();
        gamma.push(g);
        sigma.push(params.sigma_from_xi(&day.xi));

        // Jumps: (step index, asset, size).
        let mut jumps: Vec<(usize, usize, f64)> = Vec::new();
        for i in 0..p {
            let rate = params.jump_intensity[i];
            if rate <= 0.0 {
                continue;
            }
            let count = Poisson::new(rate).expect("positive rate").sample(&mut rng_jump) as usize;
            let sd = params.jump_scale * var0[i].max(0.0).sqrt();
            for _ in 0..count {
                let at = rng_jump.random_range(0..m_all);
                let z: f64 = rng_jump.sample(StandardNormal);
                jumps.push((at, i, sd * z));
            }
        }
        jumps.sort_by_key(|j| j.0);
        let noise_sd = var0.map(|v| params.micro_noise_scale * v.max(0.0).sqrt());

        let mut obs = DMatrix::zeros(m + 1, p);
        let mut lat = latent.as_ref().map(|_| DMatrix::zeros(m + 1, p));
        let first = match &last_obs {
            Some(prev) => prev.clone(),
            None => noisy(&x, &noise_sd, &mut rng_noise),
        };
        obs.set_row(0, &first.transpose());
        if let Some(l) = lat.as_mut() {
            l.set_row(0, &x.transpose());
        }

        let mut next_jump = 0;
        for k in 0..m_all {
            let lam = day.lambda.column(k);
            for j in 0..r {
                let z: f64 = rng_price.sample(StandardNormal);
                shock_f[j] = (p as f64 * lam[j].max(0.0) * dt).sqrt() * z;
            }
            for i in 0..p {
                let z: f64 = rng_price.sample(StandardNormal);
                shock_i[i] = (lam[r + i].max(0.0) * dt).sqrt() * z;
            }
            x += &params.q_factor * &shock_f;
            if idio_is_identity {
                x += &shock_i;
            } else {
                x += &params.q_idio * &shock_i;
            }
            while next_jump < jumps.len() && jumps[next_jump].0 == k {
                let (_, i, size) = jumps[next_jump];
                x[i] += size;
                next_jump += 1;
            }
            if (k + 1) % step == 0 {
                let row = (k + 1) / step;
                obs.set_row(row, &noisy(&x, &noise_sd, &mut rng_noise).transpose());
                if let Some(l) = lat.as_mut() {
                    l.set_row(row, &x.transpose());
                }
            }
        }
        last_obs = Some(obs.row(m).transpose());
        prices.push(obs);
        if let (Some(all), Some(l)) = (latent.as_mut(), lat) {
            all.push(l);
        }
    }

    Ok(TickPanel {
        n,
        m,
        p,
        prices,
        truth: Some(PanelTruth {
            xi: xi_truth,
            gamma,
            sigma,
            latent,
        }),
    })
}

fn noisy<R: Rng>(x: &DVector<f64>, sd: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        if sd[i] == 0.0 {
            x[i]
        } else {
            let z: f64 = rng.sample(StandardNormal);
            x[i] + sd[i] * z
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::params::design_params;

    #[test]
    fn zero_volatility_gives_constant_prices() {
        let mut params = design_params(12, false, 1).unwrap();
        params.a.fill(0.0);
        params.fluct_scale.fill(0.0);
        // Keep ζ₁ invertible but the process is identically zero.
        params.jump_intensity.fill(0.0);
        params.micro_noise_scale = 0.0;
        let panel = simulate_panel(&params, 2, 100, 100, 4).unwrap();
        panel.validate().unwrap();
        assert!(panel.prices.iter().all(|d| d.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn layout_and_reproducibility() {
        let params = design_params(12, true, 1).unwrap();
        let a = simulate_panel(&params, 3, 50, 200, 11).unwrap();
        let b = simulate_panel(&params, 3, 50, 200, 11).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.prices[0].nrows(), 51);
        assert_eq!(a.prices[1].row(0), a.prices[0].row(50));
        let t = a.truth.as_ref().unwrap();
        assert_eq!(t.gamma.len(), 3);
        assert_eq!(t.xi.ncols(), 15);
    }

    #[test]
    fn subsample_and_prefix() {
        let params = design_params(12, true, 1).unwrap();
        let full = simulate_panel(&params, 3, 200, 200, 2).unwrap();
        let thin = full.subsample(4).unwrap();
        assert_eq!(thin.m, 50);
        assert_eq!(thin.prices[2].row(50), full.prices[2].row(200));
        assert_eq!(thin.prices[1].row(7), full.prices[1].row(28));
        let head = full.prefix(2).unwrap();
        assert_eq!(head.n, 2);
        assert_eq!(head.truth.unwrap().xi.nrows(), 2);
        assert!(full.subsample(3).is_err());
    }

    #[test]
    fn bad_grid_rejected() {
        let params = design_params(12, true, 1).unwrap();
        assert!(simulate_panel(&params, 1, 300, 200, 1).is_err());
        assert!(simulate_panel(&params, 1, 30, 200, 1).is_err() == (200 % 30 != 0));
    }
}
