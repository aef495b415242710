//! Command-line front end: `train`, `eval`, `bench`, `basin` and `serve`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error,
//! 3 port already in use. Flags override the matching config values.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::bench::run_sweep;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::lyapunov::basin_map;
use crate::rules::{LearningRule, RuleName};
use crate::serve::{bind, serve, ServeConfig};
use crate::trainer::{evaluate_rule, train_with, Evaluation};

#[derive(Debug, Parser)]
#[command(name = "strol", version, about = "Online reward learning from physical corrections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a correction network offline.
    Train(TrainArgs),
    /// Evaluate one rule on simulated users.
    Eval(EvalArgs),
    /// Run a rule × condition sweep.
    Bench(BenchArgs),
    /// Export a basin-of-attraction map over the human action grid.
    Basin(BasinArgs),
    /// Host interactive sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed of the config section the command reads.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// `strol` or `e2e`; defaults to `[train] rule`.
    #[arg(long)]
    pub rule: Option<RuleName>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub rule: Option<RuleName>,
    /// `rule=path` or a bare path for the evaluated rule.
    #[arg(long)]
    pub weights: Vec<WeightsArg>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// `rule=path`; a bare path is taken as the StROL network.
    #[arg(long)]
    pub weights: Vec<WeightsArg>,
}

#[derive(Debug, Clone, Args)]
pub struct BasinArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub rule: Option<RuleName>,
    #[arg(long)]
    pub weights: Vec<WeightsArg>,
    /// Grid points per action axis.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Seed of the first episode in every session.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Rule active when a session opens.
    #[arg(long)]
    pub rule: Option<RuleName>,
    /// `rule=path`; a bare path is taken as the StROL network.
    #[arg(long)]
    pub weights: Vec<WeightsArg>,
}

/// A `--weights` value: `strol=nets/a.strl` or just `nets/a.strl`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsArg {
    pub rule: Option<RuleName>,
    pub path: PathBuf,
}

impl FromStr for WeightsArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some((rule, path)) = s.split_once('=') {
            let rule = rule.parse::<RuleName>().map_err(|e| e.to_string())?;
            if !rule.needs_net() {
                return Err(format!("rule `{rule}` has no network"));
            }
            return Ok(Self {
                rule: Some(rule),
                path: path.into(),
            });
        }
        Ok(Self {
            rule: None,
            path: s.into(),
        })
    }
}

fn weights_for(args: &[WeightsArg], rule: RuleName, bare_rule: RuleName) -> Option<PathBuf> {
    args.iter()
        .rev()
        .find(|w| w.rule.unwrap_or(bare_rule) == rule)
        .map(|w| w.path.clone())
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnknownRule(_) | Error::UnknownEnv(_) | Error::NetMissing(_) => 2,
        Error::PortBusy { .. } => 3,
        _ => 1,
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Bench(a) => cmd_bench(a).map(|_| ()),
        Command::Basin(a) => cmd_basin(a).map(|_| ()),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Header line shared by result files: tool version, seed and config hash.
pub fn provenance(seed: u64, cfg: &Config) -> String {
    format!("strol {} seed={seed} config_hash={}", env!("CARGO_PKG_VERSION"), cfg.hash())
}

/// Files written by `train`.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub weights: PathBuf,
    pub losses: PathBuf,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutput> {
    let cfg = Config::load(&args.common.config)?;
    let env = cfg.env_handle()?;
    let mut tc = cfg.train_config();
    if let Some(rule) = args.rule {
        tc.rule = rule;
    }
    if let Some(epochs) = args.epochs {
        tc.epochs = epochs;
    }
    if let Some(seed) = args.common.seed {
        tc.seed = seed;
    }
    tc.validate(&env)?;
    let stem = format!("{}_{}", cfg.env_name(), tc.rule);
    let every = (tc.epochs / 20).max(1);
    let (net, report) = train_with(&env, &tc, |epoch, loss| {
        if epoch % every == 0 || epoch + 1 == tc.epochs {
            log::info!("epoch {epoch}: mean loss {loss:.6}");
        }
    })?;
    let weights = args.common.out.join(format!("{stem}.strl"));
    let losses = args.common.out.join(format!("{stem}_loss.csv"));
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        writeln!(csv, "{i},{l}").unwrap();
    }
    write_file(&weights, net.to_bytes())?;
    write_file(&losses, csv)?;
    println!(
        "trained {stem}: {} epochs, loss {} -> {}, {:.1} s",
        tc.epochs,
        report.losses.first().copied().unwrap_or(f64::NAN),
        report.losses.last().copied().unwrap_or(f64::NAN),
        report.wall_time
    );
    println!("wrote {} and {}", weights.display(), losses.display());
    Ok(TrainOutput { weights, losses })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Evaluation> {
    let cfg = Config::load(&args.common.config)?;
    let env = cfg.env_handle()?;
    let name = args.rule.unwrap_or(cfg.eval_rule());
    let weights = weights_for(&args.weights, name, name);
    let rule = cfg.rule(name, weights.as_deref())?;
    let mut spec = cfg.eval_spec()?;
    if let Some(n) = args.episodes {
        spec.episodes = n;
    }
    if let Some(seed) = args.common.seed {
        spec.seed = seed;
    }
    let evaluation = evaluate_rule(&env, &rule, &spec, name.as_str())?;
    let mut csv = format!("# {}\n", provenance(spec.seed, &cfg));
    csv.push_str("episode,final_error,regret,collisions\n");
    for ep in &evaluation.episodes {
        writeln!(csv, "{},{},{},{}", ep.episode, ep.final_error, ep.regret, ep.collisions).unwrap();
    }
    let path = args.common.out.join(format!("eval_{}_{name}.csv", cfg.env_name()));
    write_file(&path, csv)?;
    let s = &evaluation.summary;
    println!(
        "{name}: {} episodes, error {:.4} ± {:.4}, regret {:.4} ± {:.4}",
        s.episodes,
        s.mean_error,
        s.error_sem(),
        s.mean_regret,
        s.regret_sem()
    );
    println!("wrote {}", path.display());
    Ok(evaluation)
}

/// Files written by `bench`.
#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub summary: PathBuf,
    pub episodes: PathBuf,
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchOutput> {
    let cfg = Config::load(&args.common.config)?;
    let env = cfg.env_handle()?;
    let mut spec = cfg.sweep_spec()?;
    if let Some(n) = args.episodes {
        spec.episodes = n;
    }
    if let Some(seed) = args.common.seed {
        spec.seed = seed;
    }
    for rule in [RuleName::E2e, RuleName::Strol] {
        if let Some(p) = weights_for(&args.weights, rule, RuleName::Strol) {
            spec.weights.insert(rule, p);
        }
    }
    spec.validate()?;
    let result = run_sweep(&env, &spec)?;
    let header = provenance(spec.seed, &cfg);
    let summary = args.common.out.join("summary.csv");
    let episodes = args.common.out.join("episodes.csv");
    write_file(&summary, result.summary_csv(&header))?;
    write_file(&episodes, result.episodes_csv(&header))?;
    for cell in &result.cells {
        let k = &cell.condition;
        match cell.evaluation() {
            Some(e) => println!(
                "{:<8} {} sigma={} bias={}: error {:.4}, regret {:.4}",
                cell.rule, k.prior, k.sigma, k.bias, e.summary.mean_error, e.summary.mean_regret
            ),
            None => println!("{:<8} {} sigma={} bias={}: skipped", cell.rule, k.prior, k.sigma, k.bias),
        }
    }
    println!("wrote {} and {}", summary.display(), episodes.display());
    Ok(BenchOutput { summary, episodes })
}

pub fn cmd_basin(args: &BasinArgs) -> Result<PathBuf> {
    let cfg = Config::load(&args.common.config)?;
    let env = cfg.env_handle()?;
    let dim = env.human_box().dim;
    if dim != 2 {
        return Err(Error::Config(format!(
            "basin maps need a 2-D action space but `{}` has {dim} action dimensions; \
             use `eval` for raw per-episode tables instead",
            cfg.env_name()
        )));
    }
    let name = args.rule.unwrap_or(cfg.basin_rule());
    let weights = weights_for(&args.weights, name, name);
    let rule = cfg.rule(name, weights.as_deref())?;
    let mut spec = cfg.basin_spec()?;
    if let Some(r) = args.resolution {
        if r == 0 {
            return Err(Error::Config("--resolution must be at least 1".into()));
        }
        spec.resolution = r;
    }
    let map = basin_map(&env, &rule, &spec)?;
    let path = args.common.out.join(format!("basin_{}_{name}.csv", cfg.env_name()));
    let mut buf = Vec::new();
    map.write_csv(&mut buf, &format!("{} {}", cfg.env_name(), rule.name()))
        .map_err(|e| Error::io(&path, e))?;
    write_file(&path, buf)?;
    println!(
        "{name}: {:.1}% of {} cells converge to a mode",
        100.0 * map.converged_fraction(),
        map.cells.len()
    );
    println!("wrote {}", path.display());
    Ok(path)
}

/// Builds the session settings from a config: every rule whose weights load is offered.
pub fn serve_config(cfg: &Config, args: &ServeArgs) -> Result<ServeConfig> {
    let env = cfg.env_handle()?;
    let mut sc = ServeConfig::new(env, cfg.theta0(), cfg.alpha());
    sc.clamp = cfg.clamp();
    sc.tick_ms = cfg.tick_ms();
    sc.seed = args.seed.unwrap_or(0);
    sc = sc.with_rule(cfg.rule(RuleName::Mof, None)?);
    for name in [RuleName::E2e, RuleName::Strol] {
        let weights = weights_for(&args.weights, name, RuleName::Strol);
        let explicit = weights.is_some();
        match cfg.rule(name, weights.as_deref()) {
            Ok(rule) => sc = sc.with_rule(rule),
            Err(e) if explicit => return Err(e),
            Err(e) => log::info!("{name} not offered: {e}"),
        }
    }
    sc.default_rule = match args.rule.or(cfg.serve_rule()) {
        Some(r) => r,
        None if sc.rules.contains_key(&RuleName::Strol) => RuleName::Strol,
        None => RuleName::Gradient,
    };
    sc.validate()?;
    Ok(sc)
}

pub fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let cfg = Config::load(&args.config)?;
    let sc = Arc::new(serve_config(&cfg, args)?);
    let port = args.port.unwrap_or(cfg.serve_port());
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(async move {
        let listener = bind(port).await?;
        let addr = listener.local_addr().map_err(|e| Error::io("listener", e))?;
        println!("serving {} on ws://{addr}", cfg.env_name());
        serve(listener, sc).await
    })
}
