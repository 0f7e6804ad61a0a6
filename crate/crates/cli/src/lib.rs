//! Batch driver for the `henon-core` estimators: reads one JSON config, runs one command,
//! writes `report.json` plus CSV/PNG artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::Path;

use henon_core::green::{compute_filtration, FiltrationData};
use serde::Serialize;
use serde_json::{Map, Value};

use commands::{Command, Context};
use config::{parse_params, ConfigEcho, RunConfig};
pub use error::CliError;
use output::Artifacts;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CommandName {
    Render,
    Green,
    Average,
    CurrentMass,
    PullbackTest,
    ThetaTest,
    BackwardPotential,
    Equilibrium,
    Lyapunov,
    Entropy,
    Mixing,
    RandomMixing,
    AreaGrowth,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::Render => "render",
            CommandName::Green => "green",
            CommandName::Average => "average",
            CommandName::CurrentMass => "current-mass",
            CommandName::PullbackTest => "pullback-test",
            CommandName::ThetaTest => "theta-test",
            CommandName::BackwardPotential => "backward-potential",
            CommandName::Equilibrium => "equilibrium",
            CommandName::Lyapunov => "lyapunov",
            CommandName::Entropy => "entropy",
            CommandName::Mixing => "mixing",
            CommandName::RandomMixing => "random-mixing",
            CommandName::AreaGrowth => "area-growth",
        }
    }
}

/// Command line overrides of config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Everything in `report.json`. Wall time and thread count stay out of it so the bytes
/// depend on nothing but the effective config.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub config: ConfigEcho,
    pub config_sha256: String,
    pub defaulted: Vec<String>,
    pub filtration: FiltrationData,
    pub results: Value,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
}

pub struct RunSummary {
    pub report: RunReport,
    pub threads: usize,
}

fn prepare<P: Command>(
    raw: &Map<String, Value>,
    defaulted: &mut Vec<String>,
    family: &henon_core::HenonFamily,
    base: &henon_core::BaseDynamics,
) -> Result<(P, Value), CliError> {
    let p: P = parse_params(raw, defaulted)?;
    p.check(family, base)?;
    let echo = serde_json::to_value(&p).map_err(|e| CliError::config("params", e))?;
    Ok((p, echo))
}

/// Validates `config` completely, then runs `name` on a pool of `threads` workers.
pub fn run_config(
    name: CommandName,
    config: &RunConfig,
    overrides: &Overrides,
) -> Result<(RunReport, Artifacts, usize), CliError> {
    let mut cfg = config.clone();
    if let Some(s) = overrides.seed {
        cfg.seed = s;
        cfg.defaulted.retain(|d| d != "seed");
    }
    if let Some(t) = overrides.threads {
        cfg.threads = t;
        cfg.defaulted.retain(|d| d != "threads");
    }
    let family = cfg.family.build()?;
    cfg.base.validate(family.domain()).map_err(|e| CliError::from_core_in("base", e))?;

    let mut defaulted = cfg.defaulted.clone();
    let raw = &cfg.params;
    macro_rules! dispatch {
        ($($variant:ident => $ty:ty),* $(,)?) => {
            match name {
                $(CommandName::$variant => {
                    let (p, echo) = prepare::<$ty>(raw, &mut defaulted, &family, &cfg.base)?;
                    (Box::new(p) as Box<dyn Runner>, echo)
                })*
            }
        };
    }
    let (runner, params_echo) = dispatch!(
        Render => commands::RenderParams,
        Green => commands::GreenParams,
        Average => commands::AverageParams,
        CurrentMass => commands::CurrentMassParams,
        PullbackTest => commands::PullbackParams,
        ThetaTest => commands::ThetaParams,
        BackwardPotential => commands::BackwardParams,
        Equilibrium => commands::EquilibriumParams,
        Lyapunov => commands::LyapunovParams,
        Entropy => commands::EntropyParams,
        Mixing => commands::MixingParams,
        RandomMixing => commands::RandomMixingParams,
        AreaGrowth => commands::AreaParams,
    );
    // "threads" never reaches the report, so it is not listed either
    defaulted.retain(|d| d != "threads");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::config("threads", e))?;
    let threads = pool.current_num_threads();
    let (filt, outcome) = pool.install(|| -> Result<_, CliError> {
        let filt = compute_filtration(&family, cfg.filtration_samples, cfg.seed)?;
        let ctx = Context { family: &family, base: &cfg.base, seed: cfg.seed, filt: &filt };
        let outcome = runner.run_boxed(&ctx)?;
        Ok((filt, outcome))
    })?;

    let echo = ConfigEcho {
        command: name.as_str().to_string(),
        family: cfg.family.clone(),
        base: cfg.base.clone(),
        seed: cfg.seed,
        filtration_samples: cfg.filtration_samples,
        params: params_echo,
    };
    let mut artifacts = outcome.artifacts;
    let mut names = artifacts.names();
    names.push("report.json".into());
    let report = RunReport {
        config_sha256: echo.sha256(),
        config: echo,
        defaulted,
        filtration: filt,
        results: outcome.results,
        warnings: outcome.warnings,
        artifacts: names,
    };
    let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Numeric(e.to_string()))?;
    bytes.push(b'\n');
    artifacts.add("report.json", bytes);
    Ok((report, artifacts, threads))
}

/// Object-safe view of a parsed command.
trait Runner: Sync {
    fn run_boxed(&self, ctx: &Context) -> Result<commands::Outcome, CliError>;
}

impl<P: Command> Runner for P {
    fn run_boxed(&self, ctx: &Context) -> Result<commands::Outcome, CliError> {
        self.run(ctx)
    }
}

/// Reads the config at `path`, runs the command and writes every artifact into `out`.
pub fn run(name: CommandName, path: &Path, overrides: &Overrides, out: &Path) -> Result<RunSummary, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config = RunConfig::from_json(&text)?;
    let (report, artifacts, threads) = run_config(name, &config, overrides)?;
    artifacts.write_all(out)?;
    Ok(RunSummary { report, threads })
}
