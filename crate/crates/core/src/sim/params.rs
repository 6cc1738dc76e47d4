use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::varrep::{companion, var_representation, VarRepresentation};
use crate::error::{check_dim, invalid, FivarError, Result};
use crate::matutil::{eigen_sym, orthonormality_error, spectral_radius, SymMatrix};

/// Parameters of a FIVAR(h)-Itô data generating process.
///
/// Indices `0..r` of every (p+r)-vector refer to the factor eigenvalues and
/// `r..p+r` to the idiosyncratic ones.
#[derive(Debug, Clone)]
pub struct FivarParams {
    pub p: usize,
    pub r: usize,
    pub h: usize,
    /// Intercepts `a_i`, length p+r.
    pub a: DVector<f64>,
    /// Lag coefficient matrices ζ_1..ζ_h, each (p+r)×(p+r).
    pub zeta: Vec<DMatrix<f64>>,
    /// p×r orthonormal factor eigenvectors.
    pub q_factor: DMatrix<f64>,
    /// p×p orthonormal idiosyncratic eigenvectors.
    pub q_idio: DMatrix<f64>,
    /// Student-t degrees of freedom of the daily fluctuation draws;
    /// `None` means Gaussian.
    pub noise_df: Option<f64>,
    /// Per-index multiplier applied to the fluctuation draws, length p+r.
    pub fluct_scale: DVector<f64>,
    /// Poisson jump intensity per asset per day, length p.
    pub jump_intensity: DVector<f64>,
    /// Microstructure noise std relative to the asset's daily volatility.
    pub micro_noise_scale: f64,
    /// Jump size std relative to the asset's daily volatility.
    pub jump_scale: f64,
}

/// Serializable description of the generator, resolved into
/// [`FivarParams`] by [`ParamSpec::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    /// Number of assets.
    pub p: usize,
    /// Heavy-tailed (t with 9 df) fluctuations instead of Gaussian.
    #[serde(default)]
    pub heavy: bool,
    /// Seed of the random symmetric matrix whose leading eigenvectors give Q_F.
    #[serde(default = "default_basis_seed")]
    pub basis_seed: u64,
    #[serde(default = "default_jump_intensity")]
    pub jump_intensity: f64,
    #[serde(default = "default_noise_scale")]
    pub micro_noise_scale: f64,
    #[serde(default = "default_jump_scale")]
    pub jump_scale: f64,
    /// Override of the fluctuation degrees of freedom; wins over `heavy`.
    #[serde(default)]
    pub noise_df: Option<f64>,
}

fn default_basis_seed() -> u64 {
    1
}
fn default_jump_intensity() -> f64 {
    10.0
}
fn default_noise_scale() -> f64 {
    0.01
}
fn default_jump_scale() -> f64 {
    0.05
}

impl ParamSpec {
    pub fn design(p: usize, heavy: bool) -> Self {
        ParamSpec {
            p,
            heavy,
            basis_seed: default_basis_seed(),
            jump_intensity: default_jump_intensity(),
            micro_noise_scale: default_noise_scale(),
            jump_scale: default_jump_scale(),
            noise_df: None,
        }
    }

    pub fn build(&self) -> Result<FivarParams> {
        let mut params = design_params(self.p, self.heavy, self.basis_seed)?;
        if self.noise_df.is_some() {
            params.noise_df = self.noise_df;
        }
        params.jump_intensity = DVector::from_element(self.p, self.jump_intensity);
        params.micro_noise_scale = self.micro_noise_scale;
        params.jump_scale = self.jump_scale;
        params.validate()?;
        Ok(params)
    }
}

pub const DESIGN_RANK: usize = 3;
pub const DESIGN_HEAVY_DF: f64 = 9.0;

/// The 200-asset simulation design.
pub fn default_paper_params(heavy: bool) -> FivarParams {
    design_params(200, heavy, default_basis_seed()).expect("200-asset design is valid")
}

/// The simulation design generalized to `p ≥ 11` assets: three factors,
/// ten idiosyncratic series with coupled 2×2 dynamics, the rest weakly
/// persistent with equal intercepts.
pub fn design_params(p: usize, heavy: bool, basis_seed: u64) -> Result<FivarParams> {
    let r = DESIGN_RANK;
    if p < 11 {
        return Err(invalid(format!("simulation design needs p >= 11, got {p}")));
    }
    let dim = p + r;
    // 1-based index i in the design maps to i - 1 here.
    let a = DVector::from_fn(dim, |i, _| {
        let i1 = (i + 1) as f64;
        match i + 1 {
            1..=3 => (4.0 - i1) / 40.0,
            4..=13 => (14.0 - i1) / 10.0,
            _ => 0.1,
        }
    });

    let mut zeta1 = DMatrix::zeros(dim, dim);
    let factor_block = [[0.5, 0.15, 0.0], [0.0, 0.45, 0.1], [0.0, 0.0, 0.4]];
    for (i, row) in factor_block.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            zeta1[(i, j)] = *v;
        }
    }
    for k in 2..=6usize {
        let kf = k as f64;
        let (lo, hi) = (2 * k - 1, 2 * k);
        zeta1[(lo, lo)] = 0.19 - 0.02 * kf;
        zeta1[(lo, hi)] = 0.02;
        zeta1[(hi, lo)] = 0.02;
        zeta1[(hi, hi)] = 0.18 - 0.02 * kf;
    }
    for i in 13..dim {
        zeta1[(i, i)] = 0.05;
    }

    let fluct_scale = DVector::from_fn(dim, |i, _| if i < r { 0.1 } else { 1.0 });

    Ok(FivarParams {
        p,
        r,
        h: 1,
        a,
        zeta: vec![zeta1],
        q_factor: random_factor_basis(p, r, basis_seed)?,
        q_idio: DMatrix::identity(p, p),
        noise_df: if heavy { Some(DESIGN_HEAVY_DF) } else { None },
        fluct_scale,
        jump_intensity: DVector::from_element(p, 10.0),
        micro_noise_scale: 0.01,
        jump_scale: 0.05,
    })
}

/// Leading `r` eigenvectors of a seeded symmetric matrix with i.i.d.
/// uniform(0,1) entries.
pub fn random_factor_basis(p: usize, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v: f64 = rng.random();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(eigen_sym(&SymMatrix::new(m))?.leading_vectors(r))
}

impl FivarParams {
    /// Number of eigenvalue series, p + r.
    pub fn dim(&self) -> usize {
        self.p + self.r
    }

    /// Checks dimensions, orthonormality and the stability conditions
    /// needed for the VAR representation to exist.
    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if self.r == 0 || self.r > self.p {
            return Err(invalid(format!("need 1 <= r <= p, got r={} p={}", self.r, self.p)));
        }
        if self.h == 0 || self.zeta.len() != self.h {
            return Err(invalid(format!(
                "lag order {} does not match {} coefficient matrices",
                self.h,
                self.zeta.len()
            )));
        }
        check_dim(dim, self.a.len())?;
        check_dim(dim, self.fluct_scale.len())?;
        check_dim(self.p, self.jump_intensity.len())?;
        for z in &self.zeta {
            check_dim(dim, z.nrows())?;
            check_dim(dim, z.ncols())?;
        }
        check_dim(self.p, self.q_factor.nrows())?;
        check_dim(self.r, self.q_factor.ncols())?;
        check_dim(self.p, self.q_idio.nrows())?;
        check_dim(self.p, self.q_idio.ncols())?;
        if orthonormality_error(&self.q_factor) > 1e-10 {
            return Err(invalid("factor eigenvectors are not orthonormal"));
        }
        if orthonormality_error(&self.q_idio) > 1e-10 {
            return Err(invalid("idiosyncratic eigenvectors are not orthonormal"));
        }
        if self.jump_intensity.iter().any(|&v| v < 0.0) || self.micro_noise_scale < 0.0 || self.jump_scale < 0.0 {
            return Err(invalid("jump intensity and noise scales must be non-negative"));
        }
        let zeta1 = &self.zeta[0];
        if zeta1.clone().lu().determinant().abs() < 1e-300 {
            return Err(FivarError::SingularCoefficient("det(zeta_1) = 0".into()));
        }
        if spectral_radius(zeta1) >= 1.0 {
            return Err(invalid("spectral radius of zeta_1 must be below 1"));
        }
        let rep = self.var_representation()?;
        if spectral_radius(&companion(&rep.a_mats)) >= 1.0 {
            return Err(invalid("VAR companion matrix is not stable"));
        }
        Ok(())
    }

    /// `E[z²]` per index.
    pub fn fluct_second_moment(&self) -> Result<DVector<f64>> {
        let base = match self.noise_df {
            None => 1.0,
            Some(df) if df > 2.0 => df / (df - 2.0),
            Some(df) => {
                return Err(invalid(format!(
                    "t fluctuations with {df} degrees of freedom have infinite variance"
                )))
            }
        };
        Ok(self.fluct_scale.map(|s| s * s * base))
    }

    pub fn var_representation(&self) -> Result<VarRepresentation> {
        var_representation(self, &self.fluct_second_moment()?)
    }

    /// Stationary mean `(I - Σ A_k)^{-1} ν` of the daily integrated eigenvalues.
    pub fn stationary_mean(&self) -> Result<DVector<f64>> {
        self.var_representation()?.stationary_mean()
    }

    /// Integrated volatility matrix built from a vector of daily eigenvalues.
    pub fn gamma_from_xi(&self, xi: &DVector<f64>) -> SymMatrix {
        let (p, r) = (self.p, self.r);
        let factor_diag = DVector::from_fn(r, |i, _| p as f64 * xi[i]);
        let idio_diag = DVector::from_fn(p, |i, _| xi[r + i]);
        let psi = &self.q_factor * DMatrix::from_diagonal(&factor_diag) * self.q_factor.transpose();
        let sigma = &self.q_idio * DMatrix::from_diagonal(&idio_diag) * self.q_idio.transpose();
        SymMatrix::new(psi + sigma)
    }

    /// Idiosyncratic part of [`Self::gamma_from_xi`].
    pub fn sigma_from_xi(&self, xi: &DVector<f64>) -> SymMatrix {
        let idio_diag = DVector::from_fn(self.p, |i, _| xi[self.r + i]);
        SymMatrix::new(&self.q_idio * DMatrix::from_diagonal(&idio_diag) * self.q_idio.transpose())
    }

    /// All p+r eigenvectors side by side: factor columns first.
    pub fn full_basis(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.p, self.dim());
        out.columns_mut(0, self.r).copy_from(&self.q_factor);
        out.columns_mut(self.r, self.p).copy_from(&self.q_idio);
        out
    }

    /// True coefficient matrix `(ν, A_1, …, A_h)` with one row per series.
    pub fn true_beta(&self) -> Result<DMatrix<f64>> {
        Ok(self.var_representation()?.beta())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_values() {
        let params = default_paper_params(true);
        assert_eq!(params.noise_df, Some(9.0));
        assert_eq!(default_paper_params(false).noise_df, None);
        assert!((params.a[0] - 0.075).abs() < 1e-15);
        assert!((params.a[3] - 1.0).abs() < 1e-15);
        assert!((params.a[19] - 0.1).abs() < 1e-15);
        assert_eq!(params.p, 200);
        assert_eq!(params.r, 3);
        assert_eq!(params.h, 1);
        assert_eq!(params.dim(), 203);
        let z = &params.zeta[0];
        assert_eq!(z[(0, 1)], 0.15);
        assert_eq!(z[(1, 2)], 0.1);
        assert_eq!(z[(2, 2)], 0.4);
        // k = 2 block sits on 1-based rows 4 and 5.
        assert!((z[(3, 3)] - 0.15).abs() < 1e-15);
        assert!((z[(4, 4)] - 0.14).abs() < 1e-15);
        assert_eq!(z[(3, 4)], 0.02);
        // k = 6 block sits on 1-based rows 12 and 13.
        assert!((z[(11, 11)] - 0.07).abs() < 1e-15);
        assert!((z[(12, 12)] - 0.06).abs() < 1e-15);
        assert_eq!(z[(13, 13)], 0.05);
        assert_eq!(z[(202, 202)], 0.05);
        assert_eq!(z.iter().filter(|v| **v != 0.0).count(), 5 + 5 * 4 + 190);
        assert!(spectral_radius(z) < 1.0);
        assert_eq!(params.fluct_scale[2], 0.1);
        assert_eq!(params.fluct_scale[3], 1.0);
        params.validate().unwrap();
    }

    #[test]
    fn factor_basis_is_orthonormal_and_seeded() {
        let q1 = random_factor_basis(30, 3, 7).unwrap();
        let q2 = random_factor_basis(30, 3, 7).unwrap();
        assert_eq!(q1, q2);
        assert!(orthonormality_error(&q1) < 1e-12);
        // Perron vector of a positive matrix has one sign.
        assert!(q1.column(0).iter().all(|v| *v > 0.0));
    }

    #[test]
    fn rejects_small_p_and_bad_df() {
        assert!(design_params(10, true, 1).is_err());
        let mut params = design_params(20, true, 1).unwrap();
        params.noise_df = Some(2.0);
        assert!(params.fluct_second_moment().is_err());
    }

    #[test]
    fn singular_zeta_rejected_by_validation() {
        let mut params = design_params(20, false, 1).unwrap();
        params.zeta[0][(5, 5)] = 0.0;
        params.zeta[0][(5, 6)] = 0.0;
        params.zeta[0][(6, 5)] = 0.0;
        assert!(matches!(params.validate(), Err(FivarError::SingularCoefficient(_))));
    }
}
