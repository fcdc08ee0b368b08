//! Command-line driver: dataset generation, surrogate training and
//! evaluation, synthetic truth, MCMC inversion and spectrum export.

pub mod commands;
pub mod config;
pub mod error;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "operon", version, about = "Neural operator surrogates and pCN inversion for Poisson and elasticity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the prior and solve, writing a dataset directory.
    Gen(Overrides),
    /// Train a surrogate on a dataset, writing a checkpoint.
    Train(Overrides),
    /// Per-sample test errors of a checkpoint.
    Eval(Overrides),
    /// Run a pCN chain with the FEM or a surrogate forward model.
    Mcmc(Overrides),
    /// Write the synthetic ground truth and its observations.
    Truth(Overrides),
    /// Export singular value spectra of a dataset.
    Spectrum(Overrides),
}

/// Every flag sets exactly one dotted config key, named in its help text.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Flat JSON config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// problem: poisson | linear_elasticity
    #[arg(long)]
    pub problem: Option<String>,
    /// mesh.nx
    #[arg(long)]
    pub nx: Option<usize>,
    /// mesh.ny
    #[arg(long)]
    pub ny: Option<usize>,
    /// prior.a_c
    #[arg(long)]
    pub a_c: Option<f64>,
    /// prior.b_c
    #[arg(long)]
    pub b_c: Option<f64>,
    /// prior.c_c
    #[arg(long)]
    pub c_c: Option<f64>,
    /// prior.alpha_m
    #[arg(long)]
    pub alpha_m: Option<f64>,
    /// prior.beta_m
    #[arg(long)]
    pub beta_m: Option<f64>,
    /// dataset.N
    #[arg(long)]
    pub n: Option<usize>,
    /// dataset.n_train
    #[arg(long)]
    pub n_train: Option<usize>,
    /// dataset.n_test
    #[arg(long)]
    pub n_test: Option<usize>,
    /// model.arch: deeponet | pcanet | fno
    #[arg(long)]
    pub arch: Option<String>,
    /// model.depth
    #[arg(long)]
    pub depth: Option<usize>,
    /// model.width
    #[arg(long)]
    pub width: Option<usize>,
    /// model.r_m
    #[arg(long)]
    pub rm: Option<usize>,
    /// model.r_u
    #[arg(long)]
    pub ru: Option<usize>,
    /// model.N_tr
    #[arg(long)]
    pub ntr: Option<usize>,
    /// model.d_h
    #[arg(long)]
    pub dh: Option<usize>,
    /// model.L
    #[arg(long)]
    pub layers: Option<usize>,
    /// model.k_max
    #[arg(long)]
    pub modes: Option<usize>,
    /// model.n1
    #[arg(long)]
    pub n1: Option<usize>,
    /// model.n2
    #[arg(long)]
    pub n2: Option<usize>,
    /// train.epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// train.lr
    #[arg(long)]
    pub lr: Option<f64>,
    /// train.batch
    #[arg(long)]
    pub batch: Option<usize>,
    /// train.weight_decay
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// mcmc.k_max
    #[arg(long)]
    pub steps: Option<usize>,
    /// mcmc.k_burn
    #[arg(long)]
    pub burn: Option<usize>,
    /// mcmc.beta
    #[arg(long)]
    pub beta: Option<f64>,
    /// mcmc.noise_fraction
    #[arg(long)]
    pub noise_fraction: Option<f64>,
    /// mcmc.forward: fem | deeponet | pcanet | fno
    #[arg(long)]
    pub forward: Option<String>,
    /// mcmc.obs_grid
    #[arg(long)]
    pub obs_grid: Option<usize>,
    /// mcmc.start: prior_draw | prior_mean
    #[arg(long)]
    pub start: Option<String>,
    /// seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// threads (0 = all cores)
    #[arg(long)]
    pub threads: Option<usize>,
    /// deterministic: omit timings so re-runs are byte-identical
    #[arg(long)]
    pub deterministic: bool,
    /// paths.data
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// paths.checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// paths.resume
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// paths.truth
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// paths.observation
    #[arg(long)]
    pub observation: Option<PathBuf>,
    /// paths.out
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// The flags that were given, as dotted keys.
    pub fn to_keys(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| json!(p));
        put("problem", self.problem.as_ref().map(|v| json!(v)));
        put("mesh.nx", self.nx.map(|v| json!(v)));
        put("mesh.ny", self.ny.map(|v| json!(v)));
        put("prior.a_c", self.a_c.map(|v| json!(v)));
        put("prior.b_c", self.b_c.map(|v| json!(v)));
        put("prior.c_c", self.c_c.map(|v| json!(v)));
        put("prior.alpha_m", self.alpha_m.map(|v| json!(v)));
        put("prior.beta_m", self.beta_m.map(|v| json!(v)));
        put("dataset.N", self.n.map(|v| json!(v)));
        put("dataset.n_train", self.n_train.map(|v| json!(v)));
        put("dataset.n_test", self.n_test.map(|v| json!(v)));
        put("model.arch", self.arch.as_ref().map(|v| json!(v)));
        put("model.depth", self.depth.map(|v| json!(v)));
        put("model.width", self.width.map(|v| json!(v)));
        put("model.r_m", self.rm.map(|v| json!(v)));
        put("model.r_u", self.ru.map(|v| json!(v)));
        put("model.N_tr", self.ntr.map(|v| json!(v)));
        put("model.d_h", self.dh.map(|v| json!(v)));
        put("model.L", self.layers.map(|v| json!(v)));
        put("model.k_max", self.modes.map(|v| json!(v)));
        put("model.n1", self.n1.map(|v| json!(v)));
        put("model.n2", self.n2.map(|v| json!(v)));
        put("train.epochs", self.epochs.map(|v| json!(v)));
        put("train.lr", self.lr.map(|v| json!(v)));
        put("train.batch", self.batch.map(|v| json!(v)));
        put("train.weight_decay", self.weight_decay.map(|v| json!(v)));
        put("mcmc.k_max", self.steps.map(|v| json!(v)));
        put("mcmc.k_burn", self.burn.map(|v| json!(v)));
        put("mcmc.beta", self.beta.map(|v| json!(v)));
        put("mcmc.noise_fraction", self.noise_fraction.map(|v| json!(v)));
        put("mcmc.forward", self.forward.as_ref().map(|v| json!(v)));
        put("mcmc.obs_grid", self.obs_grid.map(|v| json!(v)));
        put("mcmc.start", self.start.as_ref().map(|v| json!(v)));
        put("seed", self.seed.map(|v| json!(v)));
        put("threads", self.threads.map(|v| json!(v)));
        put("deterministic", self.deterministic.then_some(json!(true)));
        put("paths.data", path(&self.data));
        put("paths.checkpoint", path(&self.checkpoint));
        put("paths.resume", path(&self.resume));
        put("paths.truth", path(&self.truth));
        put("paths.observation", path(&self.observation));
        put("paths.out", path(&self.out));
        m
    }

    pub fn resolve(&self) -> CliResult<RunConfig> {
        let flags = self.to_keys();
        match &self.config {
            Some(p) => RunConfig::from_file(p, &flags),
            None => RunConfig::resolve(&BTreeMap::new(), &flags),
        }
    }
}

impl Command {
    pub fn overrides(&self) -> &Overrides {
        match self {
            Command::Gen(o)
            | Command::Train(o)
            | Command::Eval(o)
            | Command::Mcmc(o)
            | Command::Truth(o)
            | Command::Spectrum(o) => o,
        }
    }
}

/// Runs a parsed command with an already resolved configuration.
pub fn execute(command: &Command, cfg: &RunConfig) -> CliResult<()> {
    cfg.path("out")?;
    match command {
        Command::Gen(_) => commands::gen(cfg),
        Command::Train(_) => commands::train(cfg),
        Command::Eval(_) => commands::eval(cfg).map(|_| ()),
        Command::Mcmc(_) => commands::mcmc(cfg).map(|_| ()),
        Command::Truth(_) => commands::truth(cfg),
        Command::Spectrum(_) => commands::spectrum(cfg),
    }
}

/// Resolves the configuration, sizes the worker pool and runs the command.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.command.overrides().resolve()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    execute(&cli.command, &cfg)
}
