//! Experiment harness: training runs, random-walk analysis, tradeoff
//! sweeps, the wall study, and golden-example verification.
//!
//! Progress goes to standard error; machine-readable outputs go to
//! files. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use ice::config::{load_config, ConfigError};
use ice::experiment::{
    heatmap_entropy, tradeoff_sweep, train, wall_study, AgentKind, EnvKind, RunConfig, WallArm,
    DEFAULT_WALL_LAYOUT,
};
use ice::walk::{
    displacement_samples, random_walk_tail_exact, random_walk_tail_stirling, tail_from_samples,
};
use ice::CountTable;

#[derive(Parser)]
#[command(
    name = "ice",
    about = "Entropy-gain exploration experiments on grid worlds",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file; omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the episode budget.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the agent (ice | rnd | random | none-intrinsic | latent-ice).
    #[arg(long)]
    agent: Option<AgentKind>,
    /// Output directory; defaults under $ICE_OUT_DIR or ./runs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write the run artifacts.
    Train(ConfigArgs),
    /// Tail probabilities of the 1-D random walk, one CSV row per K.
    Walk {
        /// Walk length (steps).
        #[arg(long, default_value_t = 400)]
        n: u64,
        /// Largest displacement K to tabulate (0..=k-max).
        #[arg(long = "k-max", default_value_t = 200)]
        k_max: u64,
        /// Monte Carlo trials shared across the sweep.
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (default walk.csv under the output root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one run per (alpha_entropy, beta) pair and tabulate
    /// episodes-to-coverage.
    Sweep {
        #[command(flatten)]
        base: ConfigArgs,
        /// Comma-separated alpha_entropy:beta pairs, e.g. "0.01:0.5,0:0.5".
        #[arg(long)]
        pairs: String,
        /// Distinct-state count a cell must reach.
        #[arg(long, default_value_t = 250)]
        target: usize,
    },
    /// Paired wall-limitation study over several seeds.
    Wall {
        #[command(flatten)]
        base: ConfigArgs,
        /// Comma-separated seeds, one trio of arms per seed.
        #[arg(long, default_value = "1,2,3,4,5")]
        seeds: String,
    },
    /// Train, then report the final-window visitation heatmap entropy.
    Heatmap(ConfigArgs),
    /// Recompute the four-state worked entropy example and check it.
    VerifyExample,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Clap renders its own synopsis for usage errors.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

enum AppError {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        match e {
            // A missing or unreadable file is an environment problem; a
            // file that parses wrong is the user's input.
            ConfigError::Io { .. } => AppError::Runtime(e.to_string()),
            _ => AppError::Usage(e.to_string()),
        }
    }
}

impl From<ice::experiment::ExperimentError> for AppError {
    fn from(e: ice::experiment::ExperimentError) -> Self {
        AppError::Runtime(e.to_string())
    }
}

/// Output root: $ICE_OUT_DIR when set, else ./runs.
fn out_root() -> PathBuf {
    std::env::var_os("ICE_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn resolve_config(args: &ConfigArgs, default_name: &str) -> Result<RunConfig, AppError> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(episodes) = args.episodes {
        config.episodes = episodes;
    }
    if let Some(agent) = args.agent {
        config.agent = agent;
    }
    config.out_dir = match &args.out {
        Some(out) => out.clone(),
        None => out_root().join(format!("{default_name}-{}-seed{}", config.agent, config.seed)),
    };
    config
        .validate()
        .map_err(|e| AppError::Usage(e.to_string()))?;
    Ok(config)
}

fn dispatch(command: Command) -> Result<(), AppError> {
    match command {
        Command::Train(args) => {
            let config = resolve_config(&args, "train")?;
            let metrics = train(&config)?;
            let trailing = metrics.trailing_mean(100, |r| r.distinct_states as f64);
            eprintln!(
                "run complete: {} episodes, trailing-100 distinct {:.1}, artifacts in {}",
                metrics.rows.len(),
                trailing,
                config.out_dir.display()
            );
            Ok(())
        }
        Command::Walk {
            n,
            k_max,
            trials,
            seed,
            out,
        } => {
            if n == 0 {
                return Err(AppError::Usage("--n must be positive".into()));
            }
            if trials < 1_000 {
                return Err(AppError::Usage("--trials must be at least 1000".into()));
            }
            let path = out.unwrap_or_else(|| out_root().join("walk.csv"));
            walk_table(n, k_max, trials, seed, &path)?;
            eprintln!("wrote {} rows to {}", k_max + 1, path.display());
            Ok(())
        }
        Command::Sweep {
            base,
            pairs,
            target,
        } => {
            let config = resolve_config(&base, "sweep")?;
            let pairs = parse_pairs(&pairs)?;
            let cells = tradeoff_sweep(&config, &pairs, target)?;
            let reached = cells.iter().filter(|c| c.episodes_to_target.is_some()).count();
            eprintln!(
                "sweep complete: {reached}/{} cells reached {target} distinct states; table in {}",
                cells.len(),
                config.out_dir.join("sweep.csv").display()
            );
            Ok(())
        }
        Command::Wall { base, seeds } => {
            let mut config = resolve_config(&base, "wall")?;
            if !matches!(config.env, EnvKind::Wall { .. }) {
                config.env = EnvKind::Wall {
                    layout: DEFAULT_WALL_LAYOUT.to_string(),
                };
            }
            let seeds = parse_seeds(&seeds)?;
            let report = wall_study(&config, &seeds)?;
            for arm in [WallArm::IceOnly, WallArm::EntropyOnly, WallArm::Combined] {
                eprintln!(
                    "{arm}: goal reached on {}/{} seeds",
                    report.goals_reached(arm),
                    seeds.len()
                );
            }
            eprintln!("table in {}", config.out_dir.join("wall.csv").display());
            Ok(())
        }
        Command::Heatmap(args) => {
            let config = resolve_config(&args, "heatmap")?;
            train(&config)?;
            let heatmap_path = config.out_dir.join("heatmap.csv");
            let heatmap = read_heatmap(&heatmap_path)?;
            eprintln!(
                "final-window heatmap entropy {:.4} bits ({} cells), matrix in {}",
                heatmap_entropy(&heatmap),
                heatmap.len(),
                heatmap_path.display()
            );
            Ok(())
        }
        Command::VerifyExample => verify_example(),
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(f64, f64)>, AppError> {
    let mut pairs = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let Some((a, b)) = part.split_once(':') else {
            return Err(AppError::Usage(format!(
                "--pairs expects alpha_entropy:beta entries, got {part:?}"
            )));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| AppError::Usage(format!("--pairs entry {part:?}: {e}")))
        };
        pairs.push((parse(a)?, parse(b)?));
    }
    Ok(pairs)
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, AppError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| AppError::Usage(format!("--seeds entry {s:?}: {e}")))
        })
        .collect()
}

fn walk_table(n: u64, k_max: u64, trials: u64, seed: u64, path: &Path) -> Result<(), AppError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| AppError::Runtime(format!("{}: {e}", parent.display())))?;
        }
    }
    let samples = displacement_samples(n, trials, seed);
    let mut out = String::from("N,K,exact,stirling,monte_carlo,mc_stderr\n");
    for k in 0..=k_max {
        let exact = random_walk_tail_exact(n, k);
        let (stirling, _valid) = random_walk_tail_stirling(n, k);
        let (mc, stderr) = tail_from_samples(&samples, k);
        out.push_str(&format!("{n},{k},{exact},{stirling},{mc},{stderr}\n"));
    }
    std::fs::write(path, out).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))
}

/// Recomputes the worked example — four states over four binary cells,
/// one new cell per step after a repeat — and checks both the exact
/// values and their two-decimal renderings.
fn verify_example() -> Result<(), AppError> {
    let trajectory: [[u16; 4]; 4] = [
        [1, 0, 0, 0],
        [1, 0, 0, 0],
        [1, 1, 0, 0],
        [1, 1, 1, 0],
    ];
    let mut table =
        CountTable::new(4, 2).map_err(|e| AppError::Runtime(e.to_string()))?;
    let mut entropies = Vec::new();
    let mut last_reward = 0.0;
    for state in &trajectory {
        if table.is_empty() {
            table.absorb(state).map_err(|e| AppError::Runtime(e.to_string()))?;
            entropies.push(table.total_bits());
            continue;
        }
        let r = table
            .ice_step(state)
            .map_err(|e| AppError::Runtime(e.to_string()))?;
        entropies.push(r.entropy_bits);
        last_reward = r.value_bits;
    }
    let log2_3 = 3f64.log2();
    let expected = [0.0, 0.0, log2_3 - 2.0 / 3.0, 3.0 - 0.75 * log2_3];
    println!(
        "H = {:.2}, {:.2}, {:.2}, {:.2} bits; final reward = {:.2} bits",
        entropies[0], entropies[1], entropies[2], entropies[3], last_reward
    );
    for (step, (&got, &want)) in entropies.iter().zip(&expected).enumerate() {
        if (got - want).abs() > 1e-9 {
            return Err(AppError::Runtime(format!(
                "entropy H_{step} = {got} differs from analytic {want}"
            )));
        }
    }
    let expected_reward = expected[3] - expected[2];
    if (last_reward - expected_reward).abs() > 1e-9 {
        return Err(AppError::Runtime(format!(
            "final reward {last_reward} differs from analytic {expected_reward}"
        )));
    }
    let rendered = format!(
        "{:.2} {:.2} {:.2} {:.2} {:.2}",
        entropies[0], entropies[1], entropies[2], entropies[3], last_reward
    );
    if rendered != "0.00 0.00 0.92 1.81 0.89" {
        return Err(AppError::Runtime(format!(
            "two-decimal rendering {rendered:?} differs from the published 0 0 0.92 1.81 0.89"
        )));
    }
    Ok(())
}

fn read_heatmap(path: &Path) -> Result<Vec<f64>, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    let mut cells = Vec::new();
    for line in text.lines() {
        for field in line.split(',') {
            cells.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?,
            );
        }
    }
    Ok(cells)
}
