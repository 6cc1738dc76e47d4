//! Run configuration: TOML schema, presets and layering.

use std::path::{Path, PathBuf};

use fivar_core::eval::{BacktestConfig, Estimator, StudyConfig};
use fivar_core::poet::{PoetConfig, RankCriterion, ThresholdRule, ThresholdScheme};
use fivar_core::robustvar::{Method, RobustConfig};
use fivar_core::rv::{PrvmConfig, Weight, DEFAULT_TRUNC_EXPONENT, SIMULATION_TRUNC_MULT};
use fivar_core::sim::{FivarParams, ParamSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub log_level: String,
    /// Output location is not part of the reproducible configuration.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub sim: SimConfig,
    pub rv: RvConfig,
    pub poet: PoetSection,
    pub fit: FitSection,
    pub robust: RobustConfig,
    pub backtest: BacktestSection,
    pub study: StudySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 0,
            log_level: "info".into(),
            out_dir: None,
            data: DataConfig::default(),
            sim: SimConfig::default(),
            rv: RvConfig::default(),
            poet: PoetSection::default(),
            fit: FitSection::default(),
            robust: RobustConfig::default(),
            backtest: BacktestSection::default(),
            study: StudySection::default(),
        }
    }
}

/// External inputs for the stage subcommands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Tick panel CSV; when absent, `rv`, `backtest` and `pipeline` simulate.
    pub panel: Option<PathBuf>,
    /// Volatility matrix series: a directory of CSVs or a `.fvms` file.
    pub vol: Option<PathBuf>,
    /// Eigenvalue series directory.
    pub eigen: Option<PathBuf>,
    /// Fitted VAR directory.
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub p: usize,
    pub heavy: bool,
    pub basis_seed: u64,
    pub jump_intensity: f64,
    pub micro_noise_scale: f64,
    pub jump_scale: f64,
    pub noise_df: Option<f64>,
    /// Days.
    pub n: usize,
    /// Observations per day.
    pub m: usize,
    /// Simulation grid per day; a multiple of `m`.
    pub m_all: usize,
    /// Write the tick panel from `pipeline` as well.
    pub write_panel: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let spec = ParamSpec::design(200, true);
        SimConfig {
            p: spec.p,
            heavy: spec.heavy,
            basis_seed: spec.basis_seed,
            jump_intensity: spec.jump_intensity,
            micro_noise_scale: spec.micro_noise_scale,
            jump_scale: spec.jump_scale,
            noise_df: spec.noise_df,
            n: 100,
            m: 500,
            m_all: 2000,
            write_panel: false,
        }
    }
}

impl SimConfig {
    pub fn spec(&self) -> ParamSpec {
        ParamSpec {
            p: self.p,
            heavy: self.heavy,
            basis_seed: self.basis_seed,
            jump_intensity: self.jump_intensity,
            micro_noise_scale: self.micro_noise_scale,
            jump_scale: self.jump_scale,
            noise_df: self.noise_df,
        }
    }

    pub fn params(&self) -> Result<FivarParams, CliError> {
        self.spec().build().map_err(|e| CliError::Config(format!("[sim]: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RvConfig {
    /// Pre-averaging block length; default `⌊√m⌋`.
    pub bandwidth: Option<usize>,
    pub trunc_mult: f64,
    pub trunc_exponent: f64,
    /// Project daily estimates onto the PSD cone.
    pub project: bool,
    /// Write the `rv` output as one binary `.fvms` file instead of CSVs.
    pub binary: bool,
}

impl Default for RvConfig {
    fn default() -> Self {
        RvConfig {
            bandwidth: None,
            trunc_mult: SIMULATION_TRUNC_MULT,
            trunc_exponent: DEFAULT_TRUNC_EXPONENT,
            project: true,
            binary: false,
        }
    }
}

impl RvConfig {
    pub fn prvm(&self) -> PrvmConfig {
        PrvmConfig {
            bandwidth: self.bandwidth,
            weight: Weight::Triangular,
            trunc_mult: self.trunc_mult,
            trunc_exponent: self.trunc_exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoetSection {
    /// Number of factors; selected from the data when absent.
    pub rank: Option<usize>,
    pub rank_criterion: RankCriterion,
    pub scheme: ThresholdScheme,
    /// Thresholding level; from `rule` when absent.
    pub upsilon: Option<f64>,
    pub rule: ThresholdRule,
    pub eigen_window: usize,
    /// Observations per day behind the volatility estimates; defaults to
    /// `sim.m`. Only the rank criterion and the threshold rule use it.
    pub m: Option<usize>,
}

impl Default for PoetSection {
    fn default() -> Self {
        PoetSection {
            rank: None,
            rank_criterion: RankCriterion::default(),
            scheme: ThresholdScheme::Soft,
            upsilon: None,
            rule: ThresholdRule { c: 1.0, s_i: 1.0 },
            eigen_window: 22,
            m: None,
        }
    }
}

impl PoetSection {
    pub fn to_core(&self, rank: usize, upsilon: f64) -> PoetConfig {
        PoetConfig {
            rank,
            scheme: self.scheme.clone(),
            upsilon,
            eigen_window: self.eigen_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub method: Method,
    /// When set, the lag order is chosen by BIC over `1..=h_max` and
    /// overrides `robust.h`.
    pub h_max: Option<usize>,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            method: Method::HLasso,
            h_max: None,
        }
    }
}

/// Backtest settings; rank, thresholding and the eigenvector window come
/// from `[poet]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    pub window: usize,
    pub methods: Vec<Estimator>,
    pub exposure_grid: Vec<f64>,
    pub realized_return_interval: f64,
    pub session_minutes: f64,
    pub periods: usize,
}

impl Default for BacktestSection {
    fn default() -> Self {
        let d = BacktestConfig::default();
        BacktestSection {
            window: d.window,
            methods: d.methods,
            exposure_grid: d.exposure_grid,
            realized_return_interval: d.realized_return_interval,
            session_minutes: d.session_minutes,
            periods: d.periods,
        }
    }
}

impl BacktestSection {
    pub fn to_core(&self, poet: &PoetConfig) -> BacktestConfig {
        BacktestConfig {
            window: self.window,
            eigen_window: poet.eigen_window,
            rank: poet.rank,
            methods: self.methods.clone(),
            exposure_grid: self.exposure_grid.clone(),
            realized_return_interval: self.realized_return_interval,
            session_minutes: self.session_minutes,
            periods: self.periods,
            scheme: poet.scheme.clone(),
            upsilon: poet.upsilon,
        }
    }
}

/// Monte-Carlo study run by `pipeline` when `replications > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub replications: usize,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub m_all: usize,
    pub threshold_grid: Vec<f64>,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            replications: 0,
            n_grid: vec![100, 200],
            m_grid: vec![500, 1000],
            m_all: 1000,
            threshold_grid: (0..=20).map(|k| k as f64 * 0.05).collect(),
        }
    }
}

impl RunConfig {
    pub fn study(&self, params: FivarParams) -> StudyConfig {
        StudyConfig {
            params,
            n_grid: self.study.n_grid.clone(),
            m_grid: self.study.m_grid.clone(),
            m_all: self.study.m_all,
            replications: self.study.replications,
            seed: self.seed,
            methods: self.backtest.methods.clone(),
            prvm: self.rv.prvm(),
            scheme: self.poet.scheme.clone(),
            threshold_grid: self.study.threshold_grid.clone(),
        }
    }

    /// Cheap checks run before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !["error", "warn", "info", "debug", "trace", "off"].contains(&self.log_level.as_str()) {
            return bad(format!(
                "log_level {:?} is not one of error, warn, info, debug, trace, off",
                self.log_level
            ));
        }
        let s = &self.sim;
        if s.n < 2 || s.m < 2 || s.m_all == 0 || !s.m_all.is_multiple_of(s.m) {
            return bad(format!(
                "[sim] needs n >= 2, m >= 2 and m_all a multiple of m (got n={}, m={}, m_all={})",
                s.n, s.m, s.m_all
            ));
        }
        if !(self.rv.trunc_mult > 0.0) || !self.rv.trunc_exponent.is_finite() {
            return bad("[rv] trunc_mult must be positive and trunc_exponent finite".into());
        }
        if self.rv.bandwidth.is_some_and(|k| k < 2) {
            return bad("[rv] bandwidth must be at least 2".into());
        }
        let p = &self.poet;
        if p.rank == Some(0) || p.eigen_window == 0 || p.upsilon.is_some_and(|u| !(u >= 0.0)) {
            return bad("[poet] needs rank >= 1, eigen_window >= 1 and upsilon >= 0".into());
        }
        if self.robust.h == 0 || self.fit.h_max == Some(0) {
            return bad("[robust] h and [fit] h_max must be at least 1".into());
        }
        if self.robust.c_eta_grid.is_empty() || self.robust.c_eta_grid.iter().any(|c| !(*c > 0.0)) {
            return bad("[robust] c_eta_grid must be non-empty and positive".into());
        }
        let b = &self.backtest;
        if b.window == 0 || b.methods.is_empty() || b.periods == 0 {
            return bad("[backtest] needs window >= 1, periods >= 1 and at least one method".into());
        }
        if b.exposure_grid.is_empty() || b.exposure_grid.iter().any(|c| !(*c >= 1.0)) {
            return bad("[backtest] exposure_grid must be non-empty with values >= 1".into());
        }
        if !(b.realized_return_interval > 0.0 && b.session_minutes > 0.0) {
            return bad("[backtest] return interval and session length must be positive".into());
        }
        let st = &self.study;
        if st.replications > 0 {
            if st.n_grid.is_empty() || st.m_grid.is_empty() || st.threshold_grid.is_empty() {
                return bad("[study] grids must be non-empty".into());
            }
            if st.m_grid.iter().any(|&m| m == 0 || !st.m_all.is_multiple_of(m)) {
                return bad("[study] every m must divide m_all".into());
            }
        }
        Ok(())
    }
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// is replaced.
pub fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_toml(path: &Path) -> Result<toml::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn to_value(cfg: &RunConfig) -> toml::Value {
    let mut v = toml::Value::try_from(cfg).expect("run config serializes");
    if let (Some(dir), toml::Value::Table(t)) = (&cfg.out_dir, &mut v) {
        t.insert("out_dir".into(), toml::Value::String(dir.display().to_string()));
    }
    v
}

pub fn from_value(v: toml::Value, origin: &str) -> Result<RunConfig, CliError> {
    v.try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{origin}: {e}")))
}

/// Directory holding the shipped presets.
pub fn presets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

/// A preset is a name under the presets directory or a path to a TOML file.
pub fn preset_path(name: &str) -> PathBuf {
    if name.ends_with(".toml") || name.contains('/') {
        PathBuf::from(name)
    } else {
        presets_dir().join(format!("{name}.toml"))
    }
}
