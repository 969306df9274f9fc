//! Seeded training runs and the analyses built on them.
//!
//! A run is fully determined by its [`RunConfig`]: repeating a config
//! (same seed) produces a byte-identical `metrics.csv`. To keep that
//! guarantee the `wallclock_ms` column is always written as 0 — wall
//! time is inherently non-reproducible, and no analysis here consumes it.
//!
//! Artifacts per run directory: `config.copy` (the resolved flat
//! key=value config), `metrics.csv` (one row per episode), `heatmap.csv`
//! (visit frequencies over the final 100 episodes), `checkpoint.bin`,
//! and `ae_checkpoint.bin` for latent runs.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{
    actor_critic_losses, apply_gradients, mix_reward, rnd_intrinsic, sample_action,
    uniform_random_policy, AgentError, LossWeights, PolicyValueNet, RndPair, Segment,
    SegmentStep,
};
use crate::entropy::{CountTable, EntropyError};
use crate::env::{Env, EnvError, GridWorld, Transition, WallGridWorld};
use crate::latent::{
    latent_ice_step, maybe_update_autoencoder, AutoencoderParams, HashScheme, LatentError,
    ReconstructionBuffer,
};
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("{context}: empty input")]
    EmptyInput { context: &'static str },
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("agent: {0}")]
    Agent(#[from] AgentError),
    #[error("entropy: {0}")]
    Entropy(#[from] EntropyError),
    #[error("latent: {0}")]
    Latent(#[from] LatentError),
    #[error("numeric: {0}")]
    Numeric(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Observation (two stacked binary planes) to network features.
pub fn observation_features(obs: &[u16]) -> Vec<f64> {
    obs.iter().map(|&v| f64::from(v) * 20.0).collect()
}

/// Visitation half of an observation: the autoencoder's input in the
/// hashed-latent pipeline, so codes compress the same plane the raw
/// entropy table measures. The plane only changes when an unvisited cell
/// is entered, so codes drift with discovery and revisits collide; the
/// position half would instead scatter codes arbitrarily across cells
/// (one-hots have no geometry for the hash's locality to grade).
pub fn visitation_features(obs: &[u16]) -> Vec<f64> {
    obs[..obs.len() / 2].iter().map(|&v| f64::from(v) * 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    /// Actor-critic on extrinsic + state-entropy-gain reward.
    Ice,
    /// Actor-critic on extrinsic + random-network-distillation reward.
    Rnd,
    /// Uniform random actions, no learning.
    Random,
    /// Actor-critic on the extrinsic reward alone.
    NoneIntrinsic,
    /// Actor-critic with the entropy gain computed on hashed latent codes.
    LatentIce,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AgentKind::Ice => "ice",
            AgentKind::Rnd => "rnd",
            AgentKind::Random => "random",
            AgentKind::NoneIntrinsic => "none-intrinsic",
            AgentKind::LatentIce => "latent-ice",
        };
        f.write_str(name)
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ice" => Ok(AgentKind::Ice),
            "rnd" => Ok(AgentKind::Rnd),
            "random" => Ok(AgentKind::Random),
            "none-intrinsic" => Ok(AgentKind::NoneIntrinsic),
            "latent-ice" => Ok(AgentKind::LatentIce),
            other => Err(format!(
                "unknown agent '{other}' (expected ice | rnd | random | none-intrinsic | latent-ice)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvKind {
    /// Open square grid with a fixed start and no goal.
    Grid { size: usize },
    /// Layout-defined grid with walls, unobservable cells, and a goal.
    Wall { layout: String },
}

/// Shipped wall-study layout: an open observable field over an
/// unobservable room. The room is fenced by a wall band with a single
/// gap and pays +1 at the goal in its far corner. Visits inside the room
/// never appear in the visitation plane — entropy-gain rewards cannot
/// see them — and while inside, both observation planes read zero, so a
/// policy holds one fixed action distribution there. Reaching the far
/// corner therefore demands a genuinely mixed distribution, which is
/// what an action-entropy bonus preserves.
pub const DEFAULT_WALL_LAYOUT: &str = "\
S...................
....................
....................
....................
....................
....................
....................
....................
....................
....................
....................
....................
....................
....................
################B###
#BBBBBBBBBBBBBBBBBB#
##B#################
#BBBBBBBBBBBBBBBBBB#
#GBBBBBBBBBBBBBBBBB#
####################";

/// Latent-pipeline settings for `latent-ice` runs.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSettings {
    pub hash_bits: usize,
    pub dense_dim: usize,
    pub hidden: usize,
    pub noise_halfwidth: f64,
    pub aux_weight: f64,
    pub update_period: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
}

impl Default for LatentSettings {
    fn default() -> Self {
        Self {
            hash_bits: 16,
            dense_dim: 128,
            hidden: 256,
            noise_halfwidth: 0.3,
            aux_weight: 0.5,
            update_period: 3,
            learning_rate: 1e-3,
            batch_size: 16,
            buffer_capacity: 2048,
        }
    }
}

/// Everything that determines a run. Two runs with equal configs produce
/// byte-identical metrics files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub horizon: usize,
    pub agent: AgentKind,
    pub weights: LossWeights,
    /// Scale on the random-network-distillation error reward.
    pub alpha_encode: f64,
    pub latent: LatentSettings,
    pub episodes: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Grid { size: 40 },
            horizon: 400,
            agent: AgentKind::Ice,
            weights: LossWeights::default(),
            alpha_encode: 1.0,
            latent: LatentSettings::default(),
            episodes: 5000,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.episodes == 0 {
            return Err(ExperimentError::Config("episodes must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(ExperimentError::Config("horizon must be positive".into()));
        }
        if let EnvKind::Grid { size } = &self.env {
            if *size < 2 {
                return Err(ExperimentError::Config(format!(
                    "grid size must be at least 2, got {size}"
                )));
            }
        }
        Ok(())
    }

    /// Flat key=value serialization; the inverse of the config-file
    /// parser, also written to each run directory as `config.copy`.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        match &self.env {
            EnvKind::Grid { size } => {
                s.push_str("env = grid\n");
                s.push_str(&format!("size = {size}\n"));
            }
            EnvKind::Wall { layout } => {
                s.push_str("env = wall\n");
                s.push_str(&format!("layout = {}\n", layout.replace('\n', "\\n")));
            }
        }
        s.push_str(&format!("horizon = {}\n", self.horizon));
        s.push_str(&format!("agent = {}\n", self.agent));
        let w = &self.weights;
        s.push_str(&format!("lr = {}\n", w.learning_rate));
        s.push_str(&format!("gamma = {}\n", w.gamma));
        s.push_str(&format!("alpha_value = {}\n", w.alpha_value));
        s.push_str(&format!("alpha_policy = {}\n", w.alpha_policy));
        s.push_str(&format!("alpha_entropy = {}\n", w.alpha_entropy));
        s.push_str(&format!("beta = {}\n", w.beta));
        s.push_str(&format!("k_steps = {}\n", w.k_steps));
        s.push_str(&format!("alpha_encode = {}\n", self.alpha_encode));
        let l = &self.latent;
        s.push_str(&format!("hash_bits = {}\n", l.hash_bits));
        s.push_str(&format!("dense_dim = {}\n", l.dense_dim));
        s.push_str(&format!("ae_hidden = {}\n", l.hidden));
        s.push_str(&format!("hash_noise = {}\n", l.noise_halfwidth));
        s.push_str(&format!("ae_lambda = {}\n", l.aux_weight));
        s.push_str(&format!("ae_update_period = {}\n", l.update_period));
        s.push_str(&format!("ae_lr = {}\n", l.learning_rate));
        s.push_str(&format!("ae_batch = {}\n", l.batch_size));
        s.push_str(&format!("ae_buffer = {}\n", l.buffer_capacity));
        s.push_str(&format!("episodes = {}\n", self.episodes));
        s.push_str(&format!("seed = {}\n", self.seed));
        s
    }
}

/// One episode of metrics; the unit of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub steps: usize,
    pub extrinsic_return: f64,
    pub intrinsic_return_bits: f64,
    pub trajectory_entropy_bits: f64,
    pub distinct_states: usize,
    pub loss_value: f64,
    pub loss_policy: f64,
    pub loss_entropy: f64,
    pub wallclock_ms: u64,
}

pub const METRICS_HEADER: &str = "episode,steps,extrinsic_return,intrinsic_return_bits,\
trajectory_entropy_bits,distinct_states,loss_value,loss_policy,loss_entropy,wallclock_ms";

impl EpisodeRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            self.extrinsic_return,
            self.intrinsic_return_bits,
            self.trajectory_entropy_bits,
            self.distinct_states,
            self.loss_value,
            self.loss_policy,
            self.loss_entropy,
            self.wallclock_ms
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub rows: Vec<EpisodeRow>,
}

impl RunMetrics {
    /// Mean of a per-episode statistic over the trailing `n` episodes.
    pub fn trailing_mean(&self, n: usize, f: impl Fn(&EpisodeRow) -> f64) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(f).sum::<f64>() / tail.len() as f64
    }
}

enum RunEnv {
    Grid(GridWorld),
    Wall(WallGridWorld),
}

impl RunEnv {
    fn as_env(&mut self) -> &mut dyn Env {
        match self {
            RunEnv::Grid(e) => e,
            RunEnv::Wall(e) => e,
        }
    }

    fn cells(&self) -> usize {
        match self {
            RunEnv::Grid(e) => e.cells(),
            RunEnv::Wall(e) => e.cells(),
        }
    }

    fn rows_cols(&self) -> (usize, usize) {
        match self {
            RunEnv::Grid(e) => (e.size(), e.size()),
            RunEnv::Wall(e) => (e.rows(), e.cols()),
        }
    }
}

fn build_env(config: &RunConfig) -> Result<RunEnv, ExperimentError> {
    Ok(match &config.env {
        EnvKind::Grid { size } => RunEnv::Grid(GridWorld::new(*size, config.horizon)?),
        EnvKind::Wall { layout } => {
            RunEnv::Wall(WallGridWorld::from_layout(layout, config.horizon)?)
        }
    })
}

enum Intrinsic {
    None,
    Ice {
        table: CountTable,
    },
    Rnd {
        pair: RndPair,
        learning_rate: f64,
    },
    Latent {
        table: CountTable,
        scheme: HashScheme,
        /// Live parameters, trained at the cadence.
        params: AutoencoderParams,
        /// Lagged snapshot used for hashing; refreshed at episode starts.
        hashing: AutoencoderParams,
        buffer: ReconstructionBuffer,
        noise_rng: ChaCha8Rng,
        sample_rng: ChaCha8Rng,
        /// Cadence fired on an empty buffer at least once.
        starved: bool,
    },
}

/// A configured run: environment, policy, intrinsic source, and every
/// random stream, all derived from the config seed.
pub struct Trainer {
    env: RunEnv,
    net: PolicyValueNet,
    intrinsic: Intrinsic,
    /// Entropy measurement for non-entropy-driven agents (metrics only).
    measure_table: CountTable,
    weights: LossWeights,
    agent: AgentKind,
    action_rng: ChaCha8Rng,
    cells: usize,
    policy_updates: u64,
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let env = build_env(config)?;
        let cells = env.cells();
        let obs_len = 2 * cells;
        let net = PolicyValueNet::new(obs_len, 4, &mut substream(config.seed, 0));
        let intrinsic = match config.agent {
            AgentKind::NoneIntrinsic | AgentKind::Random => Intrinsic::None,
            AgentKind::Ice => Intrinsic::Ice {
                table: CountTable::new(cells, 2)?,
            },
            AgentKind::Rnd => Intrinsic::Rnd {
                pair: RndPair::new(obs_len, config.alpha_encode, &mut substream(config.seed, 2)),
                learning_rate: config.weights.learning_rate,
            },
            AgentKind::LatentIce => {
                let l = &config.latent;
                let params = AutoencoderParams::new(
                    cells,
                    l.hidden,
                    l.dense_dim,
                    l.hash_bits,
                    l.aux_weight,
                    l.noise_halfwidth,
                    l.update_period,
                    l.learning_rate,
                    l.batch_size,
                    &mut substream(config.seed, 3),
                )?;
                Intrinsic::Latent {
                    table: CountTable::new(l.hash_bits, 2)?,
                    // Hashing itself runs noise-free so a state's code is
                    // stable between encoder refreshes; the configured
                    // half-width jitters autoencoder training instead.
                    scheme: HashScheme::new(l.hash_bits, l.dense_dim, 0.0, config.seed)?,
                    hashing: params.clone(),
                    params,
                    buffer: ReconstructionBuffer::new(l.buffer_capacity)?,
                    noise_rng: substream(config.seed, 5),
                    sample_rng: substream(config.seed, 6),
                    starved: false,
                }
            }
        };
        Ok(Self {
            env,
            net,
            intrinsic,
            measure_table: CountTable::new(cells, 2)?,
            weights: config.weights,
            agent: config.agent,
            action_rng: substream(config.seed, 1),
            cells,
            policy_updates: 0,
        })
    }

    pub fn net(&self) -> &PolicyValueNet {
        &self.net
    }

    pub fn rnd_target_intact(&self) -> Option<bool> {
        match &self.intrinsic {
            Intrinsic::Rnd { pair, .. } => Some(pair.target_intact()),
            _ => None,
        }
    }

    pub fn autoencoder(&self) -> Option<&AutoencoderParams> {
        match &self.intrinsic {
            Intrinsic::Latent { params, .. } => Some(params),
            _ => None,
        }
    }

    /// Intrinsic reward for arriving at `next_state`, training whatever
    /// the source learns online.
    fn intrinsic_reward(&mut self, transition: &Transition) -> Result<f64, ExperimentError> {
        let cells = self.cells;
        match &mut self.intrinsic {
            Intrinsic::None => Ok(0.0),
            Intrinsic::Ice { table } => {
                Ok(table.ice_step(&transition.next_state[..cells])?.value_bits)
            }
            Intrinsic::Rnd {
                pair,
                learning_rate,
            } => {
                let features = observation_features(&transition.next_state);
                let (reward, mut grads) = rnd_intrinsic(&features, pair)?;
                pair.predictor.apply_gradients(&mut grads, *learning_rate)?;
                Ok(reward)
            }
            Intrinsic::Latent {
                table,
                scheme,
                hashing,
                buffer,
                noise_rng,
                ..
            } => {
                let features = visitation_features(&transition.next_state);
                Ok(latent_ice_step(&features, table, scheme, hashing, buffer, noise_rng)?
                    .value_bits)
            }
        }
    }

    fn begin_episode(&mut self, first_obs: &[u16]) -> Result<(), ExperimentError> {
        let cells = self.cells;
        self.measure_table.reset();
        self.measure_table.absorb(&first_obs[..cells])?;
        match &mut self.intrinsic {
            Intrinsic::None | Intrinsic::Rnd { .. } => {}
            Intrinsic::Ice { table } => {
                table.reset();
                table.absorb(&first_obs[..cells])?;
            }
            Intrinsic::Latent {
                table,
                scheme,
                params,
                hashing,
                buffer,
                noise_rng,
                ..
            } => {
                *hashing = params.clone();
                table.reset();
                let features = visitation_features(first_obs);
                latent_ice_step(&features, table, scheme, hashing, buffer, noise_rng)?;
            }
        }
        Ok(())
    }

    fn after_policy_update(&mut self) -> Result<(), ExperimentError> {
        self.policy_updates += 1;
        if let Intrinsic::Latent {
            params,
            buffer,
            sample_rng,
            starved,
            ..
        } = &mut self.intrinsic
        {
            let update =
                maybe_update_autoencoder(buffer, params, self.policy_updates, sample_rng)?;
            if update == crate::latent::AeUpdate::EmptyBuffer {
                *starved = true;
            }
        }
        Ok(())
    }

    /// Runs one episode to termination, updating the learner on every
    /// filled segment. Returns the visited-position trajectory (start
    /// included) and the metrics row.
    pub fn run_episode(
        &mut self,
        episode: usize,
    ) -> Result<(Vec<usize>, EpisodeRow), ExperimentError> {
        let mut obs = self.env.as_env().reset();
        self.begin_episode(&obs)?;
        let cells = self.cells;
        let mut seen = vec![false; cells];
        let mut position = self.env.as_env().position_index();
        seen[position] = true;
        let mut distinct = 1usize;
        let mut trajectory = vec![position];
        let mut extrinsic_return = 0.0;
        let mut intrinsic_return = 0.0;
        let mut steps = 0usize;
        let mut segment = Segment::default();
        let mut loss_sums = [0.0f64; 3];
        let mut updates = 0usize;
        let learning = self.agent != AgentKind::Random;
        loop {
            let features = observation_features(&obs);
            let action = if learning {
                let (probs, _) = self.net.forward(&features)?;
                sample_action(&probs, &mut self.action_rng)
            } else {
                uniform_random_policy(4, &mut self.action_rng)
            };
            let transition = self.env.as_env().step(action)?;
            steps += 1;
            let reward_bits = self.intrinsic_reward(&transition)?;
            if !matches!(self.intrinsic, Intrinsic::Ice { .. }) {
                self.measure_table
                    .ice_step(&transition.next_state[..cells])?;
            }
            position = self.env.as_env().position_index();
            trajectory.push(position);
            if !seen[position] {
                seen[position] = true;
                distinct += 1;
            }
            extrinsic_return += transition.extrinsic_reward;
            intrinsic_return += reward_bits;
            if learning {
                segment.steps.push(SegmentStep {
                    observation: features,
                    action,
                    mixed_reward: mix_reward(
                        transition.extrinsic_reward,
                        reward_bits,
                        self.weights.beta,
                    ),
                });
                if segment.steps.len() == self.weights.k_steps || transition.done {
                    segment.bootstrap_observation = if transition.done {
                        None
                    } else {
                        Some(observation_features(&transition.next_state))
                    };
                    let (losses, mut grads) =
                        actor_critic_losses(&segment, &self.net, &self.weights)?;
                    apply_gradients(&mut self.net, &mut grads, self.weights.learning_rate)?;
                    loss_sums[0] += losses.value;
                    loss_sums[1] += losses.policy;
                    loss_sums[2] += losses.entropy;
                    updates += 1;
                    self.after_policy_update()?;
                    segment = Segment::default();
                }
            }
            if transition.done {
                break;
            }
            obs = transition.next_state;
        }
        let trajectory_entropy_bits = match &self.intrinsic {
            Intrinsic::Ice { table } => table.total_bits(),
            _ => self.measure_table.total_bits(),
        };
        let scale = if updates > 0 { updates as f64 } else { 1.0 };
        Ok((
            trajectory,
            EpisodeRow {
                episode,
                steps,
                extrinsic_return,
                intrinsic_return_bits: intrinsic_return,
                trajectory_entropy_bits,
                distinct_states: distinct,
                loss_value: loss_sums[0] / scale,
                loss_policy: loss_sums[1] / scale,
                loss_entropy: loss_sums[2] / scale,
                wallclock_ms: 0,
            },
        ))
    }
}

/// Executes the full episode budget and writes every run artifact into
/// `config.out_dir`. Returns the collected metrics.
pub fn train(config: &RunConfig) -> Result<RunMetrics, ExperimentError> {
    fs::create_dir_all(&config.out_dir).map_err(io_at(&config.out_dir))?;
    let config_copy = config.out_dir.join("config.copy");
    fs::write(&config_copy, config.to_key_values()).map_err(io_at(&config_copy))?;

    let mut trainer = Trainer::new(config)?;
    let metrics_path = config.out_dir.join("metrics.csv");
    let file = fs::File::create(&metrics_path).map_err(io_at(&metrics_path))?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "{METRICS_HEADER}").map_err(io_at(&metrics_path))?;

    let heatmap_window = 100usize.min(config.episodes);
    let mut window_trajectories: Vec<Vec<usize>> = Vec::with_capacity(heatmap_window);
    let mut metrics = RunMetrics::default();
    for episode in 0..config.episodes {
        let (trajectory, row) = trainer.run_episode(episode)?;
        writeln!(writer, "{}", row.csv_line()).map_err(io_at(&metrics_path))?;
        if episode + heatmap_window >= config.episodes {
            window_trajectories.push(trajectory);
        }
        metrics.rows.push(row);
        if (episode + 1) % 500 == 0 || episode + 1 == config.episodes {
            let trailing = metrics.trailing_mean(100, |r| r.distinct_states as f64);
            eprintln!(
                "[{}] episode {}/{}: trailing-100 distinct {:.1}",
                config.agent,
                episode + 1,
                config.episodes,
                trailing
            );
        }
    }
    writer.flush().map_err(io_at(&metrics_path))?;

    let (rows, cols) = trainer.env.rows_cols();
    if rows == cols {
        let heatmap = visitation_heatmap(&window_trajectories, rows)?;
        let heatmap_path = config.out_dir.join("heatmap.csv");
        write_heatmap(&heatmap_path, &heatmap, rows)?;
    } else {
        eprintln!("heatmap.csv skipped: layout is {rows}x{cols}, not square");
    }

    let checkpoint = config.out_dir.join("checkpoint.bin");
    trainer
        .net
        .save_checkpoint(&checkpoint, config.seed)
        .map_err(ExperimentError::Numeric)?;
    if let Some(ae) = trainer.autoencoder() {
        let ae_path = config.out_dir.join("ae_checkpoint.bin");
        ae.save_checkpoint(&ae_path, config.seed)
            .map_err(ExperimentError::Numeric)?;
    }
    Ok(metrics)
}

/// Normalized visit-frequency matrix over `size x size` cells; entries
/// sum to 1.
pub fn visitation_heatmap(
    trajectories: &[Vec<usize>],
    size: usize,
) -> Result<Vec<f64>, ExperimentError> {
    let total: usize = trajectories.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(ExperimentError::EmptyInput {
            context: "visitation heatmap",
        });
    }
    let mut counts = vec![0u64; size * size];
    for trajectory in trajectories {
        for &position in trajectory {
            if position >= counts.len() {
                return Err(ExperimentError::Config(format!(
                    "position {position} outside a {size}x{size} grid"
                )));
            }
            counts[position] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / total as f64)
        .collect())
}

/// Shannon entropy (bits) of a normalized heatmap.
pub fn heatmap_entropy(heatmap: &[f64]) -> f64 {
    -heatmap
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

fn write_heatmap(path: &Path, heatmap: &[f64], size: usize) -> Result<(), ExperimentError> {
    let mut out = String::new();
    for row in heatmap.chunks(size) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_at(path))
}

/// Number of unique full observations in a trajectory.
pub fn distinct_states(trajectory: &[Vec<u16>]) -> usize {
    trajectory.iter().collect::<HashSet<_>>().len()
}

/// One cell of a tradeoff sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub alpha_entropy: f64,
    pub beta: f64,
    /// First episode whose distinct-state count reached the target;
    /// `None` when the budget ran out first.
    pub episodes_to_target: Option<usize>,
    /// Mean distinct states over the trailing 100 episodes actually run.
    pub trailing_distinct: f64,
    /// Populated when this cell aborted; the sweep continues regardless.
    pub error: Option<String>,
}

/// Trains one run per `(alpha_entropy, beta)` pair and records how many
/// episodes each needed to first cover `target_distinct` states in a
/// single episode. Writes `sweep.csv` into the base out_dir. Cells stop
/// early once the target is reached; failures are recorded per cell.
pub fn tradeoff_sweep(
    base: &RunConfig,
    pairs: &[(f64, f64)],
    target_distinct: usize,
) -> Result<Vec<SweepCell>, ExperimentError> {
    if pairs.is_empty() {
        return Err(ExperimentError::EmptyInput {
            context: "tradeoff sweep",
        });
    }
    let mut cells = Vec::with_capacity(pairs.len());
    for &(alpha_entropy, beta) in pairs {
        let mut config = base.clone();
        config.weights.alpha_entropy = alpha_entropy;
        config.weights.beta = beta;
        let outcome = sweep_cell(&config, target_distinct);
        let mut cell = SweepCell {
            alpha_entropy,
            beta,
            episodes_to_target: None,
            trailing_distinct: 0.0,
            error: None,
        };
        match outcome {
            Ok((reached, trailing)) => {
                cell.episodes_to_target = reached;
                cell.trailing_distinct = trailing;
            }
            Err(e) => cell.error = Some(e.to_string()),
        }
        eprintln!(
            "sweep alpha_entropy={alpha_entropy} beta={beta}: {}",
            match (&cell.error, cell.episodes_to_target) {
                (Some(e), _) => format!("error: {e}"),
                (None, Some(ep)) => format!("target at episode {ep}"),
                (None, None) => "target not reached".into(),
            }
        );
        cells.push(cell);
    }
    fs::create_dir_all(&base.out_dir).map_err(io_at(&base.out_dir))?;
    let path = base.out_dir.join("sweep.csv");
    let mut out = String::from("alpha_entropy,beta,episodes_to_target,trailing_distinct,error\n");
    for c in &cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.alpha_entropy,
            c.beta,
            c.episodes_to_target
                .map_or(String::from("never"), |e| e.to_string()),
            c.trailing_distinct,
            c.error.as_deref().unwrap_or("")
        ));
    }
    fs::write(&path, out).map_err(io_at(&path))?;
    Ok(cells)
}

fn sweep_cell(
    config: &RunConfig,
    target_distinct: usize,
) -> Result<(Option<usize>, f64), ExperimentError> {
    let mut trainer = Trainer::new(config)?;
    let mut trailing: Vec<usize> = Vec::new();
    for episode in 0..config.episodes {
        let (_, row) = trainer.run_episode(episode)?;
        trailing.push(row.distinct_states);
        if row.distinct_states >= target_distinct {
            return Ok((Some(episode), mean_tail(&trailing, 100)));
        }
    }
    Ok((None, mean_tail(&trailing, 100)))
}

fn mean_tail(values: &[usize], n: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(n)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().sum::<usize>() as f64 / tail.len() as f64
}

/// Arms of the wall study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallArm {
    /// Entropy-gain reward only: action-entropy bonus off.
    IceOnly,
    /// Action-entropy bonus only: intrinsic mix weight zero.
    EntropyOnly,
    /// Both signals at their defaults.
    Combined,
}

impl fmt::Display for WallArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WallArm::IceOnly => "ice-only",
            WallArm::EntropyOnly => "entropy-only",
            WallArm::Combined => "combined",
        })
    }
}

/// Outcome of one (arm, seed) wall run.
#[derive(Debug, Clone)]
pub struct WallArmResult {
    pub arm: WallArm,
    pub seed: u64,
    /// First episode that reached the goal, if any. Goal-capable arms
    /// stop here; the ice-only arm always runs its full budget.
    pub goal_episode: Option<usize>,
    /// Mean per-episode fraction of observable cells visited.
    pub observable_coverage: f64,
    /// Mean per-episode fraction of unobservable cells visited.
    pub unobservable_coverage: f64,
}

#[derive(Debug, Clone, Default)]
pub struct WallReport {
    pub results: Vec<WallArmResult>,
}

impl WallReport {
    pub fn arm_results(&self, arm: WallArm) -> impl Iterator<Item = &WallArmResult> {
        self.results.iter().filter(move |r| r.arm == arm)
    }

    pub fn goals_reached(&self, arm: WallArm) -> usize {
        self.arm_results(arm)
            .filter(|r| r.goal_episode.is_some())
            .count()
    }
}

/// Paired wall-limitation study: for each seed, trains an entropy-gain
/// agent with the action-entropy bonus off, an action-entropy agent with
/// the intrinsic mix off, and a both-signals agent at the base weights.
/// Arms that can reach the goal stop at their first success; the
/// ice-only arm runs its full budget to certify it never arrived. Writes
/// `wall.csv` into the base out_dir.
pub fn wall_study(base: &RunConfig, seeds: &[u64]) -> Result<WallReport, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::EmptyInput {
            context: "wall study",
        });
    }
    let layout = match &base.env {
        EnvKind::Wall { layout } => layout.clone(),
        EnvKind::Grid { .. } => {
            return Err(ExperimentError::Config(
                "wall study needs a wall environment".into(),
            ))
        }
    };
    let probe = WallGridWorld::from_layout(&layout, base.horizon)?;
    let observable_cells: Vec<usize> = probe
        .open_observable_mask()
        .iter()
        .enumerate()
        .filter(|(_, &open)| open)
        .map(|(i, _)| i)
        .collect();
    let unobservable_cells: Vec<usize> = probe
        .unobservable_mask()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect();

    let mut report = WallReport::default();
    for &seed in seeds {
        for arm in [WallArm::IceOnly, WallArm::EntropyOnly, WallArm::Combined] {
            let mut config = base.clone();
            config.seed = seed;
            match arm {
                WallArm::IceOnly => config.weights.alpha_entropy = 0.0,
                WallArm::EntropyOnly => config.weights.beta = 0.0,
                WallArm::Combined => {}
            }
            let result = wall_arm(
                &config,
                arm,
                seed,
                &observable_cells,
                &unobservable_cells,
            )?;
            eprintln!(
                "wall {} seed {}: goal {:?}, coverage obs {:.4} unobs {:.4}",
                arm,
                seed,
                result.goal_episode,
                result.observable_coverage,
                result.unobservable_coverage
            );
            report.results.push(result);
        }
    }

    fs::create_dir_all(&base.out_dir).map_err(io_at(&base.out_dir))?;
    let path = base.out_dir.join("wall.csv");
    let mut out =
        String::from("arm,seed,goal_episode,observable_coverage,unobservable_coverage\n");
    for r in &report.results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.arm,
            r.seed,
            r.goal_episode.map_or(String::from("never"), |e| e.to_string()),
            r.observable_coverage,
            r.unobservable_coverage
        ));
    }
    fs::write(&path, out).map_err(io_at(&path))?;
    Ok(report)
}

fn wall_arm(
    config: &RunConfig,
    arm: WallArm,
    seed: u64,
    observable_cells: &[usize],
    unobservable_cells: &[usize],
) -> Result<WallArmResult, ExperimentError> {
    let mut trainer = Trainer::new(config)?;
    let mut goal_episode = None;
    let mut coverage_sums = [0.0f64; 2];
    let mut episodes_run = 0usize;
    let mut seen = vec![false; trainer.cells];
    for episode in 0..config.episodes {
        let (trajectory, row) = trainer.run_episode(episode)?;
        episodes_run += 1;
        seen.iter_mut().for_each(|s| *s = false);
        for &p in &trajectory {
            seen[p] = true;
        }
        let visited = |cells: &[usize]| {
            cells.iter().filter(|&&c| seen[c]).count() as f64 / cells.len().max(1) as f64
        };
        coverage_sums[0] += visited(observable_cells);
        coverage_sums[1] += visited(unobservable_cells);
        if row.extrinsic_return > 0.0 {
            goal_episode = Some(episode);
            if arm != WallArm::IceOnly {
                break;
            }
        }
    }
    Ok(WallArmResult {
        arm,
        seed,
        goal_episode,
        observable_coverage: coverage_sums[0] / episodes_run as f64,
        unobservable_coverage: coverage_sums[1] / episodes_run as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::serpentine_actions;

    fn tiny_config(agent: AgentKind, dir: &Path) -> RunConfig {
        RunConfig {
            env: EnvKind::Grid { size: 6 },
            horizon: 30,
            agent,
            episodes: 4,
            seed: 9,
            out_dir: dir.to_path_buf(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn metrics_files_are_byte_identical_across_reruns() {
        let dir = tempfile::tempdir().unwrap();
        for agent in [AgentKind::Ice, AgentKind::Random, AgentKind::Rnd] {
            let a = dir.path().join(format!("{agent}_a"));
            let b = dir.path().join(format!("{agent}_b"));
            train(&tiny_config(agent, &a)).unwrap();
            train(&tiny_config(agent, &b)).unwrap();
            let ma = fs::read(a.join("metrics.csv")).unwrap();
            let mb = fs::read(b.join("metrics.csv")).unwrap();
            assert!(!ma.is_empty());
            assert_eq!(ma, mb, "{agent} runs diverged");
        }
    }

    #[test]
    fn run_directory_has_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("latent");
        let mut config = tiny_config(AgentKind::LatentIce, &out);
        config.latent.dense_dim = 16;
        config.latent.hidden = 24;
        config.latent.hash_bits = 8;
        let metrics = train(&config).unwrap();
        assert_eq!(metrics.rows.len(), 4);
        for file in ["config.copy", "metrics.csv", "heatmap.csv", "checkpoint.bin", "ae_checkpoint.bin"] {
            assert!(out.join(file).exists(), "{file} missing");
        }
        let header = fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert!(header.starts_with(METRICS_HEADER));
        // Episode budget -> exactly that many data rows.
        assert_eq!(header.lines().count(), 1 + 4);
    }

    #[test]
    fn ice_rows_satisfy_the_telescoping_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(AgentKind::Ice, &dir.path().join("ice"));
        config.episodes = 6;
        let metrics = train(&config).unwrap();
        for row in &metrics.rows {
            assert!(
                (row.intrinsic_return_bits - row.trajectory_entropy_bits).abs() < 1e-6,
                "episode {}: {} vs {}",
                row.episode,
                row.intrinsic_return_bits,
                row.trajectory_entropy_bits
            );
            assert_eq!(row.extrinsic_return, 0.0);
            assert_eq!(row.wallclock_ms, 0);
        }
    }

    #[test]
    fn non_ice_rows_still_measure_trajectory_entropy() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = train(&tiny_config(AgentKind::Random, &dir.path().join("rand"))).unwrap();
        for row in &metrics.rows {
            assert!(row.trajectory_entropy_bits > 0.0);
            assert_eq!(row.loss_value, 0.0);
            assert!(row.distinct_states >= 1);
        }
    }

    #[test]
    fn heatmap_is_a_point_mass_for_a_sitting_trajectory() {
        let heatmap = visitation_heatmap(&[vec![0, 0, 0]], 4).unwrap();
        assert_eq!(heatmap[0], 1.0);
        assert!(heatmap[1..].iter().all(|&p| p == 0.0));
        assert!(matches!(
            visitation_heatmap(&[], 4),
            Err(ExperimentError::EmptyInput { .. })
        ));
        assert!(visitation_heatmap(&[vec![16]], 4).is_err());
    }

    #[test]
    fn serpentine_heatmap_is_near_uniform_and_normalized() {
        let mut env = GridWorld::new(12, 12 * 12 - 1).unwrap();
        env.reset();
        let mut trajectory = vec![env.position_index()];
        for action in serpentine_actions(12) {
            env.step(action).unwrap();
            trajectory.push(env.position_index());
        }
        let heatmap = visitation_heatmap(&[trajectory], 12).unwrap();
        assert!((heatmap.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let max = heatmap.iter().cloned().fold(0.0, f64::max);
        let min = heatmap.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min <= 2.0);
        // Every cell visited exactly once: entropy is the full log2(144).
        assert!((heatmap_entropy(&heatmap) - (144f64).log2()).abs() < 1e-9);
    }

    #[test]
    fn heatmaps_from_random_trajectories_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..20 {
            let trajectories: Vec<Vec<usize>> = (0..rng.gen_range(1..4))
                .map(|_| {
                    (0..rng.gen_range(1..50))
                        .map(|_| rng.gen_range(0..25))
                        .collect()
                })
                .collect();
            let heatmap = visitation_heatmap(&trajectories, 5).unwrap();
            assert!((heatmap.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn distinct_state_counting() {
        assert_eq!(distinct_states(&[vec![1, 0], vec![1, 0], vec![1, 0]]), 1);
        let a3 = [
            vec![1, 0, 0, 0],
            vec![1, 0, 0, 0],
            vec![1, 1, 0, 0],
            vec![1, 1, 1, 0],
        ];
        assert_eq!(distinct_states(&a3), 3);
    }

    #[test]
    fn serpentine_distinct_states_hit_the_ceiling() {
        let mut env = GridWorld::new(21, 400).unwrap();
        let mut observations = vec![env.reset()];
        for action in serpentine_actions(21).into_iter().take(400) {
            let t = env.step(action).unwrap();
            observations.push(t.next_state);
        }
        assert_eq!(distinct_states(&observations), 401);
    }

    #[test]
    fn default_wall_layout_parses_and_is_square() {
        let env = WallGridWorld::from_layout(DEFAULT_WALL_LAYOUT, 400).unwrap();
        assert_eq!(env.rows(), env.cols());
        assert!(env.unobservable_mask().iter().any(|&m| m));
    }

    #[test]
    fn config_key_values_round_through_wall_layout_escape() {
        let config = RunConfig {
            env: EnvKind::Wall {
                layout: DEFAULT_WALL_LAYOUT.to_string(),
            },
            ..RunConfig::default()
        };
        let text = config.to_key_values();
        let layout_line = text
            .lines()
            .find(|l| l.starts_with("layout = "))
            .unwrap();
        assert!(!layout_line.contains('\n'));
        let restored = layout_line["layout = ".len()..].replace("\\n", "\n");
        assert_eq!(restored, DEFAULT_WALL_LAYOUT);
    }

    #[test]
    fn sweep_degenerate_cell_matches_plain_run_and_continues_on_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = tiny_config(AgentKind::Ice, &dir.path().join("sweep"));
        base.episodes = 3;
        let w = base.weights;
        let cells = tradeoff_sweep(&base, &[(w.alpha_entropy, w.beta)], 5).unwrap();
        assert_eq!(cells.len(), 1);
        let direct = sweep_cell(&base, 5).unwrap();
        assert_eq!(cells[0].episodes_to_target, direct.0);
        assert!(dir.path().join("sweep/sweep.csv").exists());

        assert!(matches!(
            tradeoff_sweep(&base, &[], 5),
            Err(ExperimentError::EmptyInput { .. })
        ));
    }
}
