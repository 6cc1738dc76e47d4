//! Stage orchestration and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fivar_core::eval::{backtest_series, run_study};
use fivar_core::forecast::{forecast, select_lag};
use fivar_core::io;
use fivar_core::poet::{poet_decompose, select_rank, PoetConfig};
use fivar_core::robustvar::{self, RobustConfig};
use fivar_core::rv::{prvm_series, VolMatrixSeries};
use fivar_core::sim::{simulate_panel, TickPanel};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    /// Values chosen from the data during the run (rank, threshold, lag).
    pub resolved: BTreeMap<String, serde_json::Value>,
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file under the output directory.
    pub outputs: BTreeMap<String, String>,
}

fn stage<T>(stage: &'static str, r: fivar_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Stage { stage, source })
}

fn sha256_file(path: &Path, name: &'static str) -> Result<String, CliError> {
    let bytes = stage(name, fs::read(path).map_err(Into::into))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(
    root: &Path,
    dir: &Path,
    name: &'static str,
    out: &mut BTreeMap<String, String>,
) -> Result<(), CliError> {
    let entries = stage(name, fs::read_dir(dir).map_err(Into::into))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for e in entries {
        paths.push(stage(name, e.map_err(Into::into))?.path());
    }
    for path in paths {
        if path.is_dir() {
            collect_files(root, &path, name, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            if rel != Path::new(MANIFEST) {
                let key = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(key, sha256_file(&path, name)?);
            }
        }
    }
    Ok(())
}

/// Hash of the settings that can change results; threads and logging
/// are left out.
fn config_hash(config: &serde_json::Value) -> String {
    let mut c = config.clone();
    if let Some(obj) = c.as_object_mut() {
        obj.remove("threads");
        obj.remove("log_level");
    }
    let canonical = serde_json::to_string(&c).expect("json");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn load_manifest_config(path: &Path, command: &str) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if manifest.command != command {
        return Err(CliError::Config(format!(
            "manifest records command {:?}, not {command:?}",
            manifest.command
        )));
    }
    serde_json::from_value(manifest.config).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Run state shared by the stages of one command.
struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    resolved: BTreeMap<String, serde_json::Value>,
}

impl<'a> Run<'a> {
    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let hash = if path.is_dir() {
            let mut files = BTreeMap::new();
            collect_files(path, path, "ingest", &mut files)?;
            let joined: String = files.iter().map(|(k, v)| format!("{k}:{v}\n")).collect();
            hex::encode(Sha256::digest(joined.as_bytes()))
        } else {
            sha256_file(path, "ingest")?
        };
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    fn need<'p>(&self, path: &'p Option<PathBuf>, key: &str) -> Result<&'p PathBuf, CliError> {
        path.as_ref()
            .ok_or_else(|| CliError::Config(format!("this command needs data.{key} (or the matching flag)")))
    }

    fn panel(&mut self) -> Result<TickPanel, CliError> {
        if let Some(path) = &self.cfg.data.panel {
            self.input(path)?;
            info!("reading panel {}", path.display());
            return stage("ingest", io::read_panel_csv(path));
        }
        let s = &self.cfg.sim;
        let params = s.params()?;
        info!(
            "simulating p={} n={} m={} m_all={} seed={}",
            s.p, s.n, s.m, s.m_all, self.cfg.seed
        );
        stage("simulate", simulate_panel(&params, s.n, s.m, s.m_all, self.cfg.seed))
    }

    fn vol(&mut self, panel: &TickPanel) -> Result<VolMatrixSeries, CliError> {
        info!("pre-averaging estimates for {} days", panel.n);
        stage("rv", prvm_series(panel, &self.cfg.rv.prvm(), self.cfg.rv.project))
    }

    /// Rank and thresholding level, taken from the config or chosen on
    /// `sample` (in-sample days only).
    fn poet_config(&mut self, sample: &VolMatrixSeries, m: usize) -> Result<PoetConfig, CliError> {
        let p = &self.cfg.poet;
        let rank = match p.rank {
            Some(r) => r,
            None => {
                let mut crit = p.rank_criterion;
                if crit.r_max >= sample.dim() {
                    crit.r_max = sample.dim().saturating_sub(1);
                    log::warn!("rank search limited to r_max={} for p={}", crit.r_max, sample.dim());
                }
                let r = stage("poet", select_rank(sample, &crit, m))?;
                self.resolved.insert("rank".into(), r.into());
                r
            }
        };
        let upsilon = match p.upsilon {
            Some(u) => u,
            None => {
                let u = p.rule.level(sample.dim(), sample.len(), m);
                self.resolved.insert("upsilon".into(), u.into());
                u
            }
        };
        info!("rank {rank}, thresholding level {upsilon}");
        Ok(p.to_core(rank, upsilon))
    }

    fn robust(&mut self, eigen: &fivar_core::poet::EigenSeries) -> Result<RobustConfig, CliError> {
        let mut robust = self.cfg.robust.clone();
        if let Some(h_max) = self.cfg.fit.h_max {
            robust.h = stage("fit", select_lag(eigen, h_max, self.cfg.fit.method, &robust))?;
            self.resolved.insert("h".into(), robust.h.into());
            info!("selected lag order {}", robust.h);
        }
        Ok(robust)
    }

    fn fit_and_forecast(&mut self, eigen: &fivar_core::poet::EigenSeries) -> Result<(), CliError> {
        let robust = self.robust(eigen)?;
        info!("fitting {} with h={}", self.cfg.fit.method, robust.h);
        let fit = stage("fit", robustvar::fit(eigen, self.cfg.fit.method, &robust))?;
        stage("write", io::write_fit(&fit, &self.out.join("fit")))?;
        let f = stage("forecast", forecast(&fit, eigen))?;
        stage("write", io::write_forecast(&f, &self.out.join("forecast")))
    }

    fn finish(self, command: &str) -> Result<(), CliError> {
        let config = serde_json::to_value(self.cfg).expect("config serializes");
        let mut outputs = BTreeMap::new();
        collect_files(&self.out, &self.out, "manifest", &mut outputs)?;
        let manifest = Manifest {
            tool: "fivar".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: self.cfg.seed,
            config_sha256: config_hash(&config),
            config,
            resolved: self.resolved,
            inputs: self.inputs,
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        stage(
            "write",
            fs::write(self.out.join(MANIFEST), text + "\n").map_err(Into::into),
        )?;
        info!("wrote {}", self.out.display());
        Ok(())
    }
}

pub fn execute(command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("fivar-out"));
    stage("write", fs::create_dir_all(&out).map_err(Into::into))?;
    let mut run = Run {
        cfg,
        out,
        inputs: BTreeMap::new(),
        resolved: BTreeMap::new(),
    };
    match command {
        "simulate" => {
            let panel = run.panel()?;
            stage("write", io::write_panel_csv(&panel, &run.out.join("panel.csv")))?;
            if let Some(truth) = &panel.truth {
                stage("write", io::write_truth_csv(&truth.xi, &run.out.join("truth.csv")))?;
            }
        }
        "rv" => {
            let panel = run.panel()?;
            let vol = run.vol(&panel)?;
            if cfg.rv.binary {
                stage("write", io::write_series_bin(&vol, &run.out.join("vol.fvms")))?;
            } else {
                stage("write", io::write_series_csv(&vol, &run.out.join("vol")))?;
            }
        }
        "poet" => {
            let path = run.need(&cfg.data.vol, "vol")?.clone();
            run.input(&path)?;
            let vol = if path.is_dir() {
                stage("ingest", io::read_series_csv(&path))?
            } else {
                stage("ingest", io::read_series_bin(&path))?
            };
            let m = cfg.poet.m.unwrap_or(cfg.sim.m);
            let poet = run.poet_config(&vol, m)?;
            let eigen = stage("poet", poet_decompose(&vol, &poet))?;
            stage("write", io::write_eigen_series(&eigen, &run.out.join("eigen")))?;
        }
        "fit" => {
            let path = run.need(&cfg.data.eigen, "eigen")?.clone();
            run.input(&path)?;
            let eigen = stage("ingest", io::read_eigen_series(&path))?;
            let robust = run.robust(&eigen)?;
            let fit = stage("fit", robustvar::fit(&eigen, cfg.fit.method, &robust))?;
            stage("write", io::write_fit(&fit, &run.out.join("fit")))?;
        }
        "forecast" => {
            let eigen_path = run.need(&cfg.data.eigen, "eigen")?.clone();
            let fit_path = run.need(&cfg.data.fit, "fit")?.clone();
            run.input(&eigen_path)?;
            run.input(&fit_path)?;
            let eigen = stage("ingest", io::read_eigen_series(&eigen_path))?;
            let fit = stage("ingest", io::read_fit(&fit_path))?;
            let f = stage("forecast", forecast(&fit, &eigen))?;
            stage("write", io::write_forecast(&f, &run.out.join("forecast")))?;
        }
        "backtest" | "pipeline" => {
            let panel = run.panel()?;
            if command == "pipeline" && cfg.sim.write_panel {
                stage("write", io::write_panel_csv(&panel, &run.out.join("panel.csv")))?;
            }
            let vol = run.vol(&panel)?;
            let window = cfg.backtest.window;
            if window >= vol.len() {
                return Err(CliError::Config(format!(
                    "backtest window {window} leaves no out-of-sample days in {} days",
                    vol.len()
                )));
            }
            let poet = run.poet_config(&vol.slice(0, window), panel.m)?;
            let bcfg = cfg.backtest.to_core(&poet);
            stage("eval", bcfg.check(vol.len()))?;
            info!("backtest over {} out-of-sample days", vol.len() - window);
            let report = stage("eval", backtest_series(&vol, &panel.prices, &bcfg, &cfg.robust))?;
            stage("write", io::write_backtest(&report, &run.out))?;
            if command == "pipeline" {
                let last = vol.slice(vol.len() - window, vol.len());
                let eigen = stage("poet", poet_decompose(&last, &poet))?;
                stage("write", io::write_eigen_series(&eigen, &run.out.join("eigen")))?;
                run.fit_and_forecast(&eigen)?;
                if cfg.study.replications > 0 {
                    let study = cfg.study(cfg.sim.params()?);
                    info!("study with {} replications", study.replications);
                    let report = stage("study", run_study(&study, &cfg.robust))?;
                    stage("write", io::write_study(&report, &run.out.join("study")))?;
                }
            }
        }
        other => unreachable!("unknown command {other}"),
    }
    run.finish(command)
}
