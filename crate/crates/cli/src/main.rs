#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fivar_core::eval::Estimator;
use fivar_core::robustvar::Method;
use fivar_core::FivarError;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: FivarError,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 1,
        }
    }
}

/// Volatility matrix prediction from noisy high-frequency prices.
///
/// Settings are layered: built-in defaults, then `--preset` (or the
/// configuration stored in `--manifest`), then command-line flags, then
/// `--config`. The output directory may also come from FIVAR_OUT_DIR.
#[derive(Debug, Parser)]
#[command(name = "fivar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Preset name from the presets directory, or a path to a TOML file.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// TOML configuration file; its values override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-run with the configuration recorded in a run manifest.
    #[arg(long, global = true, conflicts_with = "preset")]
    manifest: Option<PathBuf>,
    /// Seed of every random draw in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap; 0 uses all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: fivar-out).
    #[arg(long, global = true, env = "FIVAR_OUT_DIR")]
    out: Option<PathBuf>,
    /// error, warn, info, debug, trace or off.
    #[arg(long, global = true)]
    log_level: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a tick panel; writes panel.csv and truth.csv.
    Simulate(SimArgs),
    /// Daily volatility matrices from a tick panel.
    Rv {
        /// Tick panel CSV (simulated when absent).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Write one binary .fvms file instead of per-day CSVs.
        #[arg(long)]
        binary: bool,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Factor/idiosyncratic decomposition and daily eigenvalue series.
    Poet {
        /// Volatility series: CSV directory or .fvms file.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Observations per day behind the estimates.
        #[arg(long)]
        m: Option<usize>,
        #[command(flatten)]
        poet: PoetArgs,
    },
    /// Fit the eigenvalue VAR.
    Fit {
        /// Eigenvalue series directory.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// One-day-ahead forecast from a fitted VAR.
    Forecast {
        /// Eigenvalue series directory.
        #[arg(long)]
        eigen: Option<PathBuf>,
        /// Fitted VAR directory.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Rolling out-of-sample forecasts and minimum-variance portfolios.
    Backtest(PipelineArgs),
    /// Simulation or ingest, estimation, forecasting and evaluation.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Assets.
    #[arg(long)]
    p: Option<usize>,
    /// Days.
    #[arg(long)]
    n: Option<usize>,
    /// Observations per day.
    #[arg(long)]
    m: Option<usize>,
    /// Simulation grid per day.
    #[arg(long)]
    m_all: Option<usize>,
    /// Heavy-tailed (true) or Gaussian (false) fluctuations.
    #[arg(long)]
    heavy: Option<bool>,
}

#[derive(Debug, Args)]
struct PoetArgs {
    /// Number of factors; 0 selects it from the data.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    upsilon: Option<f64>,
    #[arg(long)]
    eigen_window: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Lag order.
    #[arg(long)]
    h: Option<usize>,
    /// Choose the lag order by BIC up to this value.
    #[arg(long)]
    h_max: Option<usize>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Tick panel CSV (simulated when absent).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated subset of prvm, ols, lasso, hlasso.
    #[arg(long, value_delimiter = ',', value_parser = parse_estimator)]
    methods: Option<Vec<Estimator>>,
    /// In-sample days per fit.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    periods: Option<usize>,
    /// Monte-Carlo replications (pipeline only; 0 skips the study).
    #[arg(long)]
    replications: Option<usize>,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    poet: PoetArgs,
    #[command(flatten)]
    fit: FitArgs,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: FivarError| e.to_string())
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: FivarError| e.to_string())
}

/// Flag overrides as a TOML table keyed like the config file.
#[derive(Default)]
struct Overrides(toml::Table);

impl Overrides {
    fn set(&mut self, key: &str, value: Option<impl Into<toml::Value>>) {
        let Some(value) = value else { return };
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("non-empty key");
        let mut table = &mut self.0;
        for part in parts {
            table = table
                .entry(part)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .expect("override sections are tables");
        }
        table.insert(last.into(), value.into());
    }

    fn path(&mut self, key: &str, value: &Option<PathBuf>) {
        self.set(key, value.as_ref().map(|p| p.display().to_string()));
    }

    fn sim(&mut self, a: &SimArgs) {
        self.set("sim.p", a.p.map(|v| v as i64));
        self.set("sim.n", a.n.map(|v| v as i64));
        self.set("sim.m", a.m.map(|v| v as i64));
        self.set("sim.m_all", a.m_all.map(|v| v as i64));
        self.set("sim.heavy", a.heavy);
    }

    fn poet(&mut self, a: &PoetArgs) {
        self.set("poet.rank", a.rank.map(|v| v as i64));
        self.set("poet.upsilon", a.upsilon);
        self.set("poet.eigen_window", a.eigen_window.map(|v| v as i64));
    }

    fn fit(&mut self, a: &FitArgs) {
        self.set("fit.method", a.method.map(|m| m.name().to_string()));
        self.set("robust.h", a.h.map(|v| v as i64));
        self.set("fit.h_max", a.h_max.map(|v| v as i64));
    }
}

fn overrides(cli: &Cli) -> Overrides {
    let g = &cli.global;
    let mut o = Overrides::default();
    o.set("seed", g.seed.map(|v| v as i64));
    o.set("threads", g.threads.map(|v| v as i64));
    o.set("log_level", g.log_level.clone());
    o.path("out_dir", &g.out);
    match &cli.command {
        Command::Simulate(sim) => o.sim(sim),
        Command::Rv { input, binary, sim } => {
            o.path("data.panel", input);
            o.set("rv.binary", binary.then_some(true));
            o.sim(sim);
        }
        Command::Poet { input, m, poet } => {
            o.path("data.vol", input);
            o.set("poet.m", m.map(|v| v as i64));
            o.poet(poet);
        }
        Command::Fit { input, fit } => {
            o.path("data.eigen", input);
            o.fit(fit);
        }
        Command::Forecast { eigen, fit } => {
            o.path("data.eigen", eigen);
            o.path("data.fit", fit);
        }
        Command::Backtest(a) | Command::Pipeline(a) => {
            o.path("data.panel", &a.input);
            o.set(
                "backtest.methods",
                a.methods.as_ref().map(|ms| {
                    ms.iter()
                        .map(|m| toml::Value::String(m.name().into()))
                        .collect::<Vec<_>>()
                }),
            );
            o.set("backtest.window", a.window.map(|v| v as i64));
            o.set("backtest.periods", a.periods.map(|v| v as i64));
            o.set("study.replications", a.replications.map(|v| v as i64));
            o.sim(&a.sim);
            o.poet(&a.poet);
            o.fit(&a.fit);
        }
    }
    o
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let g = &cli.global;
    let mut value = match (&g.manifest, &g.preset) {
        (Some(path), _) => config::to_value(&run::load_manifest_config(path, cli.command.name())?),
        (None, Some(name)) => {
            let mut base = config::to_value(&RunConfig::default());
            let path = config::preset_path(name);
            let preset = config::read_toml(&path)?;
            // Validate the preset on its own so errors point at the file.
            config::from_value(preset.clone(), &path.display().to_string())?;
            config::merge(&mut base, preset);
            base
        }
        (None, None) => config::to_value(&RunConfig::default()),
    };
    let mut flags = overrides(cli).0;
    // `--rank 0` means "select", which the schema spells as an absent rank.
    let clear_rank = flags
        .get("poet")
        .and_then(|p| p.get("rank"))
        .and_then(|r| r.as_integer())
        == Some(0);
    if clear_rank {
        flags
            .get_mut("poet")
            .and_then(|p| p.as_table_mut())
            .map(|p| p.remove("rank"));
        if let Some(poet) = value.get_mut("poet").and_then(|p| p.as_table_mut()) {
            poet.remove("rank");
        }
    }
    config::merge(&mut value, toml::Value::Table(flags));
    if let Some(path) = &g.config {
        let file = config::read_toml(path)?;
        config::from_value(file.clone(), &path.display().to_string())?;
        config::merge(&mut value, file);
    }
    let cfg = config::from_value(value, "merged configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Rv { .. } => "rv",
            Command::Poet { .. } => "poet",
            Command::Fit { .. } => "fit",
            Command::Forecast { .. } => "forecast",
            Command::Backtest(_) => "backtest",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

fn init(cfg: &RunConfig) -> Result<(), CliError> {
    let level = cfg
        .log_level
        .parse::<log::LevelFilter>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(&cli).and_then(|cfg| {
        init(&cfg)?;
        run::execute(cli.command.name(), &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fivar: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
