//! `qpwalk`: classify, solve, simulate and test reflected walks from the shell.
//!
//! Exit codes: verdict commands return 0 (recurrent), 1 (transient) or
//! 2 (marginal or inconclusive); `validate-field` returns 1 on violations.
//! Errors: 3 config or usage, 4 numerical failure, 5 I/O.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::ExperimentConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        CliError { code: 3, message: m.into() }
    }

    pub fn io(m: impl Into<String>) -> Self {
        CliError { code: 5, message: m.into() }
    }
}

impl From<qpwalk::Error> for CliError {
    fn from(e: qpwalk::Error) -> Self {
        use qpwalk::Error as E;
        let code = match e {
            E::Constraint { .. } | E::OutsideWedge { .. } | E::InvalidField(_) | E::Expression(_) | E::InvalidArgument(_) => 3,
            E::Io(_) => 5,
            _ => 4,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for report files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// What goes to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Field shorthand: `theta`, `constant:0.1`, `table:0.2,-0.2` or `expr:<formula in i,j,n>`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha: Option<String>,
}

#[derive(Debug, Parser)]
#[command(name = "qpwalk", version, about = "Reflected state-dependent random walks in the quarter plane")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate κ and classify the walk.
    Classify {
        /// auto, product, cesaro or closed-form.
        #[arg(long)]
        mode: Option<String>,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<u64>>,
    },
    /// Solve the stationary ratio equations.
    Stationary {
        #[arg(long)]
        rank_max: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// reflecting or extrapolated.
        #[arg(long)]
        closure: Option<String>,
        /// Scales k for the adjacent-state expansions.
        #[arg(long, value_delimiter = ',')]
        relation_k: Option<Vec<u64>>,
    },
    /// Simulate the walk or the queueing network and estimate norm statistics.
    Simulate {
        /// walk or ctmc.
        #[arg(long)]
        engine: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long)]
        min_visits: Option<u64>,
        /// Write every k-th state of the first walk replica (0 = none).
        #[arg(long)]
        trajectory_stride: Option<usize>,
    },
    /// Recurrence tests for birth-death chains.
    Bdtest {
        /// `λ_n/μ_n` as an expression in n.
        #[arg(long, allow_hyphen_values = true)]
        ratio: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<String>,
        /// The chain with rates 8n+4 and 8n-4.
        #[arg(long)]
        bd22: bool,
        /// `α_n` for the walk `1/2 ± α_n/n`.
        #[arg(long, allow_hyphen_values = true)]
        alpha_n: Option<String>,
        #[arg(long)]
        k_max: Option<u32>,
        /// n_lo,n_hi
        #[arg(long, value_delimiter = ',', num_args = 2)]
        window: Option<Vec<u64>>,
        #[arg(long)]
        n_terms: Option<u64>,
    },
    /// Check the coefficient constraints on every state up to a rank.
    ValidateField {
        #[arg(long)]
        rank_max: Option<u64>,
        #[arg(long)]
        n0: Option<u64>,
    },
}

fn overrides(common: &Common, command: &Command) -> Result<ExperimentConfig, CliError> {
    let mut c = ExperimentConfig {
        seed: common.seed,
        out: common.out.clone(),
        field: common.alpha.as_deref().map(qpwalk::FieldSpec::from_shorthand).transpose()?,
        ..Default::default()
    };
    match command {
        Command::Classify { mode, schedule } => {
            c.mode = mode.clone();
            c.schedule = schedule.clone();
        }
        Command::Stationary { rank_max, tol, max_iters, closure, relation_k } => {
            c.rank_max = *rank_max;
            c.tol = *tol;
            c.max_iters = *max_iters;
            c.closure = closure.clone();
            c.relation_k = relation_k.clone();
        }
        Command::Simulate { engine, steps, horizon, replicas, min_visits, trajectory_stride } => {
            c.engine = engine.clone();
            c.steps = *steps;
            c.horizon = *horizon;
            c.replicas = *replicas;
            c.min_visits = *min_visits;
            c.trajectory_stride = *trajectory_stride;
        }
        Command::Bdtest { ratio, lambda, mu, bd22, alpha_n, k_max, window, n_terms } => {
            c.ratio = ratio.clone();
            c.lambda = lambda.clone();
            c.mu = mu.clone();
            c.bd22 = bd22.then_some(true);
            c.alpha_n = alpha_n.clone();
            c.k_max = *k_max;
            c.window = window.as_ref().map(|w| (w[0], w[1]));
            c.n_terms = *n_terms;
        }
        Command::ValidateField { rank_max, n0 } => {
            c.rank_max = *rank_max;
            c.n0 = *n0;
        }
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let mut cfg = match &cli.common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.overlay(&overrides(&cli.common, &cli.command)?);
    cfg.validate()?;
    let fmt = cli.common.format;
    match cli.command {
        Command::Classify { .. } => commands::classify(&cfg, fmt),
        Command::Stationary { .. } => commands::stationary(&cfg, fmt),
        Command::Simulate { .. } => commands::simulate(&cfg, fmt),
        Command::Bdtest { .. } => commands::bdtest(&cfg, fmt),
        Command::ValidateField { .. } => commands::validate_field(&cfg, fmt),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
