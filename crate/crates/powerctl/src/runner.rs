//! Episode loop, exhaustive-search oracle, metrics output, and replay.
//!
//! One run is strictly sequential: every decision depends on the pool grown
//! by the previous episode. Independent runs (seed sweeps) are isolated and
//! can execute in parallel.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    self, ActionLevel, NetworkConfig, NetworkState, StateMode, StepOutcome,
};
use crate::error::{Error, Result};
use crate::policy::{
    epsilon_greedy, Decision, DecisionBackend, LlmBackend, LlmBackendConfig, QLearnBackend,
    QTable, RandomBackend, SurrogateBackend,
};
use crate::pool::{select_discrete, select_ranked, Example, ExperiencePool, SelectionResult};
use crate::prompt::render;

/// Header line identifying the metrics CSV layout.
pub const METRICS_SCHEMA: &str = "# powerctl metrics schema v1";

const METRICS_HEADER: &str = "episode,episode_seed,state,action,reward,power_w,constraint_ok,\
was_random,backend,backend_failed,retry_count,parse_confidence";

/// Which decision backend drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Llm,
    Surrogate,
    Random,
    Qlearn,
}

/// Q-learning baseline parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QLearnConfig {
    pub learning_rate: f64,
    pub discount: f64,
    /// State discretization bin width (1 m over the coverage range, or one
    /// count for user numbers).
    pub bin_width: f64,
    /// Initial value of unvisited table entries. The default is optimistic
    /// (above the best achievable reward) so every action of a visited state
    /// gets tried even after the exploration phase ends.
    pub initial_q: f64,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        QLearnConfig {
            learning_rate: 0.5,
            discount: 0.0,
            bin_width: 1.0,
            initial_q: 5.0,
        }
    }
}

/// Full run configuration. Every field has a default; a TOML config file and
/// CLI flags override per key.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub episodes: u64,
    /// Fraction of episodes at the start that explore.
    pub exploration_fraction: f64,
    pub epsilon_during_exploration: f64,
    pub state_mode: StateMode,
    pub backend: BackendKind,
    /// Distance weight of the ranking score.
    pub tau: f64,
    pub k_good: usize,
    pub k_bad: usize,
    pub seed: u64,
    /// Independent decision per BS instead of one shared level.
    pub per_bs_actions: bool,
    /// Ring-buffer capacity for the pool; unbounded when absent.
    pub pool_capacity: Option<usize>,
    /// JSONL pool to warm-start from.
    pub warm_start_pool: Option<PathBuf>,
    pub network: NetworkConfig,
    pub llm: LlmBackendConfig,
    pub qlearn: QLearnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            episodes: 200,
            exploration_fraction: 0.4,
            epsilon_during_exploration: 0.5,
            state_mode: StateMode::Continuous,
            backend: BackendKind::Surrogate,
            tau: 1.0,
            k_good: 6,
            k_bad: 5,
            seed: 0,
            per_bs_actions: false,
            pool_capacity: None,
            warm_start_pool: None,
            network: NetworkConfig::default(),
            llm: LlmBackendConfig::default(),
            qlearn: QLearnConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes < 1 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.exploration_fraction) {
            return Err(Error::Config("exploration_fraction outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_during_exploration) {
            return Err(Error::Config(
                "epsilon_during_exploration outside [0, 1]".into(),
            ));
        }
        if self.tau < 0.0 {
            return Err(Error::Config("tau must be >= 0".into()));
        }
        self.network.validate()
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            what: path.display().to_string(),
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Episodes (1-based, within the run) that use the exploration epsilon.
    pub fn exploration_episodes(&self) -> u64 {
        (self.exploration_fraction * self.episodes as f64).ceil() as u64
    }

    /// Builds the configured decision backend.
    pub fn build_backend(&self) -> Result<Box<dyn DecisionBackend>> {
        let levels = self.network.num_levels;
        Ok(match self.backend {
            BackendKind::Surrogate => Box::new(SurrogateBackend::new(levels)),
            BackendKind::Random => Box::new(RandomBackend::new(
                ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(0x5eed)),
                levels,
            )),
            BackendKind::Qlearn => {
                let table = QTable::new(
                    self.qlearn.learning_rate,
                    self.qlearn.discount,
                    self.qlearn.bin_width,
                )?
                .with_initial_value(self.qlearn.initial_q);
                Box::new(QLearnBackend::new(table, levels))
            }
            BackendKind::Llm => Box::new(LlmBackend::over_http(self.llm.clone(), levels)?),
        })
    }
}

/// One CSV row of a finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Seed that regenerates this episode's state and step randomness.
    pub episode_seed: u64,
    /// Decision-relevant scalar(s): one entry in shared mode, one per BS
    /// with independent actions.
    pub state: Vec<f64>,
    pub actions: Vec<u32>,
    /// Mean reward across BSs.
    pub reward: f64,
    /// Total network power, W.
    pub power_w: f64,
    /// All per-BS constraints satisfied.
    pub constraint_ok: bool,
    pub was_random: bool,
    pub backend: String,
    /// The backend failed and a random action was substituted.
    pub backend_failed: bool,
    pub retry_count: u32,
    /// "exact" / "fallback" for LLM decisions, "-" otherwise.
    pub parse_confidence: String,
}

/// Output of one run.
pub struct MetricsLog {
    pub records: Vec<EpisodeRecord>,
    pub pool: ExperiencePool,
    /// Prompt and reply text per episode, for the transcript file.
    pub transcript: Vec<String>,
}

/// Converged-window summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_power_w: f64,
    /// Fraction of episodes with all constraints satisfied.
    pub service_quality: f64,
}

/// Means over a window of records. Errors on an empty window.
pub fn summarize(records: &[EpisodeRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Domain("summarize window is empty".into()));
    }
    let n = records.len() as f64;
    Ok(Summary {
        episodes: records.len(),
        mean_reward: records.iter().map(|r| r.reward).sum::<f64>() / n,
        mean_power_w: records.iter().map(|r| r.power_w).sum::<f64>() / n,
        service_quality: records.iter().filter(|r| r.constraint_ok).count() as f64 / n,
    })
}

/// The last `fraction` of the records (at least one when non-empty).
pub fn final_window(records: &[EpisodeRecord], fraction: f64) -> &[EpisodeRecord] {
    if records.is_empty() {
        return records;
    }
    let n = ((records.len() as f64 * fraction).round() as usize).clamp(1, records.len());
    &records[records.len() - n..]
}

fn decision_scalars(state: &NetworkState, per_bs: bool) -> Vec<f64> {
    if per_bs {
        (0..state.per_bs_user_count.len())
            .map(|b| state.bs_scalar(b))
            .collect()
    } else {
        vec![state.network_scalar()]
    }
}

fn select_examples(
    pool: &ExperiencePool,
    mode: StateMode,
    scalar: f64,
    config: &RunConfig,
) -> SelectionResult {
    match mode {
        StateMode::Discrete => select_discrete(pool, scalar, config.k_good, config.k_bad),
        StateMode::Continuous => {
            select_ranked(pool, scalar, config.tau, config.k_good, config.k_bad)
        }
    }
}

/// Runs the full episode loop with the backend named in the config.
pub fn run(config: &RunConfig) -> Result<MetricsLog> {
    let mut backend = config.build_backend()?;
    run_with_backend(config, backend.as_mut())
}

/// Runs the loop with an injected backend (used by tests and the LLM stub).
pub fn run_with_backend(
    config: &RunConfig,
    backend: &mut dyn DecisionBackend,
) -> Result<MetricsLog> {
    config.validate()?;
    let net = &config.network;

    let mut pool = match config.pool_capacity {
        Some(cap) => ExperiencePool::with_capacity_limit(cap),
        None => ExperiencePool::new(),
    };
    if let Some(path) = &config.warm_start_pool {
        for example in ExperiencePool::load_jsonl(path, net.num_levels)?.iter() {
            pool.insert(example.clone());
        }
    }
    let first_episode = pool.max_episode().map(|m| m + 1).unwrap_or(1);

    let mut seed_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let explore_episodes = config.exploration_episodes();

    let mut records = Vec::with_capacity(config.episodes as usize);
    let mut transcript = Vec::new();
    // (state, action, reward) waiting for the next state before the backend
    // sees the transition; one slot per decision unit.
    let units = if config.per_bs_actions { net.num_bs } else { 1 };
    let mut pending: Vec<Option<(f64, ActionLevel, f64)>> = vec![None; units];

    for t in 1..=config.episodes {
        let episode = first_episode + t - 1;
        let episode_seed: u64 = seed_rng.random();
        let state = env::sample_state(net, config.state_mode, episode_seed)?;
        let scalars = decision_scalars(&state, config.per_bs_actions);

        for (unit, &scalar) in scalars.iter().enumerate() {
            if let Some((s, a, r)) = pending[unit].take() {
                backend.observe(s, a, r, scalar);
            }
        }

        let epsilon = if t <= explore_episodes {
            config.epsilon_during_exploration
        } else {
            0.0
        };

        let mut actions: Vec<ActionLevel> = Vec::with_capacity(net.num_bs);
        let mut decisions: Vec<Decision> = Vec::with_capacity(units);
        let mut any_random = false;
        let mut any_failed = false;
        for &scalar in &scalars {
            let selection = select_examples(&pool, config.state_mode, scalar, config);
            let prompt = render(scalar, config.state_mode, &selection, net.num_levels);
            let (decision, was_random) = match epsilon_greedy(
                backend,
                scalar,
                &selection,
                &prompt,
                epsilon,
                net.num_levels,
                &mut explore_rng,
            ) {
                Ok(result) => result,
                Err(Error::Backend(msg)) => {
                    // Substitute a random action and flag the episode.
                    any_failed = true;
                    let level = explore_rng.random_range(1..=net.num_levels);
                    let action = ActionLevel::new(level, net.num_levels)?;
                    transcript.push(format!(
                        "episode {episode}: backend failure ({msg}), random action {level} substituted\n"
                    ));
                    (Decision {
                        action,
                        retry_count: config.llm.max_retries,
                        parse_confidence: None,
                        raw_reply: None,
                    }, true)
                }
                Err(e) => return Err(e),
            };
            any_random |= was_random;
            let mut entry = format!(
                "=== episode {episode} (state {scalar}) ===\n{}",
                prompt.text
            );
            if let Some(reply) = &decision.raw_reply {
                entry.push_str(&format!("--- reply ---\n{reply}\n"));
            } else {
                entry.push_str(&format!(
                    "--- decision: level {} ({}{}) ---\n",
                    decision.action,
                    backend.name(),
                    if was_random { ", random" } else { "" }
                ));
            }
            transcript.push(entry);
            decisions.push(decision);
        }
        if config.per_bs_actions {
            actions.extend(decisions.iter().map(|d| d.action));
        } else {
            actions.extend(std::iter::repeat(decisions[0].action).take(net.num_bs));
        }

        let outcome = env::step(&state, &actions, net, episode_seed)?;

        // Feed back and grow the pool, one example per decision unit.
        for (unit, decision) in decisions.iter().enumerate() {
            let (scalar, reward, ok) = if config.per_bs_actions {
                (
                    scalars[unit],
                    outcome.reward[unit],
                    outcome.constraint_ok[unit],
                )
            } else {
                (scalars[0], outcome.mean_reward(), outcome.all_ok())
            };
            pending[unit] = Some((scalar, decision.action, reward));
            pool.insert(Example {
                episode,
                state: scalar,
                action: decision.action,
                reward,
                constraint_ok: ok,
            });
        }

        let lead = &decisions[0];
        records.push(EpisodeRecord {
            episode,
            episode_seed,
            state: scalars,
            actions: actions.iter().map(|a| a.get()).collect(),
            reward: outcome.mean_reward(),
            power_w: outcome.network_power(),
            constraint_ok: outcome.all_ok(),
            was_random: any_random,
            backend: backend.name().to_string(),
            backend_failed: any_failed,
            retry_count: decisions.iter().map(|d| d.retry_count).max().unwrap_or(0),
            parse_confidence: lead
                .parse_confidence
                .map(|c| c.to_string())
                .unwrap_or_else(|| "-".to_string()),
        });
    }

    // Terminal flush so the last transition is not lost; the next state is
    // approximated by the current one (irrelevant at the default discount 0).
    for slot in pending.iter_mut() {
        if let Some((s, a, r)) = slot.take() {
            backend.observe(s, a, r, s);
        }
    }

    Ok(MetricsLog {
        records,
        pool,
        transcript,
    })
}

/// Enumerates every action choice and returns the reward-maximizing one
/// together with its mean reward.
///
/// Shared mode tries each of the `num_levels` levels; per-BS mode tries all
/// `num_levels^num_bs` vectors.
pub fn evaluate_exhaustive(
    state: &NetworkState,
    net: &NetworkConfig,
    per_bs: bool,
    rng_seed: u64,
) -> Result<(Vec<ActionLevel>, f64)> {
    if net.num_levels > 16 {
        return Err(Error::Domain(format!(
            "exhaustive search limited to 16 levels, got {}",
            net.num_levels
        )));
    }
    let mut best: Option<(Vec<ActionLevel>, f64)> = None;
    let mut consider = |actions: Vec<ActionLevel>| -> Result<()> {
        let outcome = env::step(state, &actions, net, rng_seed)?;
        let reward = outcome.mean_reward();
        if best.as_ref().map_or(true, |(_, r)| reward > *r) {
            best = Some((actions, reward));
        }
        Ok(())
    };
    if per_bs {
        let total = (net.num_levels as u64).pow(net.num_bs as u32);
        if total > 1 << 20 {
            return Err(Error::Domain(format!(
                "exhaustive search over {total} action vectors is too large"
            )));
        }
        for idx in 0..total {
            let mut rest = idx;
            let mut actions = Vec::with_capacity(net.num_bs);
            for _ in 0..net.num_bs {
                let level = 1 + (rest % net.num_levels as u64) as u32;
                rest /= net.num_levels as u64;
                actions.push(ActionLevel::new(level, net.num_levels)?);
            }
            consider(actions)?;
        }
    } else {
        for level in 1..=net.num_levels {
            let action = ActionLevel::new(level, net.num_levels)?;
            consider(vec![action; net.num_bs])?;
        }
    }
    Ok(best.expect("at least one action evaluated"))
}

// ---------------------------------------------------------------------------
// CSV output and replay
// ---------------------------------------------------------------------------

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("|")
}

fn join_u32(values: &[u32]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("|")
}

/// Serializes records to the versioned metrics CSV. Floats use the shortest
/// round-tripping representation, so replay can compare exactly.
pub fn metrics_to_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_SCHEMA);
    out.push('\n');
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.episode,
            r.episode_seed,
            join_f64(&r.state),
            join_u32(&r.actions),
            r.reward,
            r.power_w,
            r.constraint_ok,
            r.was_random,
            r.backend,
            r.backend_failed,
            r.retry_count,
            r.parse_confidence,
        ));
    }
    out
}

/// Parses a metrics CSV produced by [`metrics_to_csv`].
pub fn metrics_from_csv(text: &str) -> Result<Vec<EpisodeRecord>> {
    let parse_err = |line: usize, detail: String| Error::Parse {
        what: format!("metrics csv line {line}"),
        detail,
    };
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line == METRICS_HEADER || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(parse_err(n + 1, format!("expected 12 fields, got {}", fields.len())));
        }
        let f64s = |s: &str| -> Result<Vec<f64>> {
            s.split('|')
                .map(|v| v.parse::<f64>().map_err(|e| parse_err(n + 1, e.to_string())))
                .collect()
        };
        let u32s = |s: &str| -> Result<Vec<u32>> {
            s.split('|')
                .map(|v| v.parse::<u32>().map_err(|e| parse_err(n + 1, e.to_string())))
                .collect()
        };
        records.push(EpisodeRecord {
            episode: fields[0].parse().map_err(|e: std::num::ParseIntError| parse_err(n + 1, e.to_string()))?,
            episode_seed: fields[1].parse().map_err(|e: std::num::ParseIntError| parse_err(n + 1, e.to_string()))?,
            state: f64s(fields[2])?,
            actions: u32s(fields[3])?,
            reward: fields[4].parse().map_err(|e: std::num::ParseFloatError| parse_err(n + 1, e.to_string()))?,
            power_w: fields[5].parse().map_err(|e: std::num::ParseFloatError| parse_err(n + 1, e.to_string()))?,
            constraint_ok: fields[6].parse().map_err(|e: std::str::ParseBoolError| parse_err(n + 1, e.to_string()))?,
            was_random: fields[7].parse().map_err(|e: std::str::ParseBoolError| parse_err(n + 1, e.to_string()))?,
            backend: fields[8].to_string(),
            backend_failed: fields[9].parse().map_err(|e: std::str::ParseBoolError| parse_err(n + 1, e.to_string()))?,
            retry_count: fields[10].parse().map_err(|e: std::num::ParseIntError| parse_err(n + 1, e.to_string()))?,
            parse_confidence: fields[11].to_string(),
        });
    }
    Ok(records)
}

/// Recomputes every record's reward from its logged seed and actions.
///
/// Returns the number of verified records; the first mismatch is an error.
pub fn replay(records: &[EpisodeRecord], config: &RunConfig) -> Result<usize> {
    let net = &config.network;
    for r in records {
        let state = env::sample_state(net, config.state_mode, r.episode_seed)?;
        let scalars = decision_scalars(&state, config.per_bs_actions);
        if scalars != r.state {
            return Err(Error::Domain(format!(
                "episode {}: regenerated state {scalars:?} != logged {:?}",
                r.episode, r.state
            )));
        }
        let actions: Vec<ActionLevel> = r
            .actions
            .iter()
            .map(|&a| ActionLevel::new(a, net.num_levels))
            .collect::<Result<_>>()?;
        let outcome = env::step(&state, &actions, net, r.episode_seed)?;
        if outcome.mean_reward() != r.reward {
            return Err(Error::Domain(format!(
                "episode {}: recomputed reward {} != logged {}",
                r.episode,
                outcome.mean_reward(),
                r.reward
            )));
        }
        if outcome.network_power() != r.power_w {
            return Err(Error::Domain(format!(
                "episode {}: recomputed power {} != logged {}",
                r.episode,
                outcome.network_power(),
                r.power_w
            )));
        }
    }
    Ok(records.len())
}

/// Writes metrics.csv, summary.csv, pool.jsonl, transcript.txt, and the
/// resolved config.toml into `out_dir`.
pub fn write_outputs(log: &MetricsLog, config: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, contents: &str| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(path, e))
    };

    write("metrics.csv", &metrics_to_csv(&log.records))?;

    let summary = summarize(final_window(&log.records, 0.2))?;
    let mut summary_csv = String::from("window_episodes,mean_reward,mean_power_w,service_quality\n");
    summary_csv.push_str(&format!(
        "{},{},{},{}\n",
        summary.episodes, summary.mean_reward, summary.mean_power_w, summary.service_quality
    ));
    write("summary.csv", &summary_csv)?;

    log.pool.save_jsonl(&out_dir.join("pool.jsonl"))?;

    let path = out_dir.join("transcript.txt");
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for entry in &log.transcript {
        writeln!(file, "{entry}").map_err(|e| Error::io(&path, e))?;
    }

    let toml_text = toml::to_string_pretty(config).map_err(|e| Error::Parse {
        what: "run config".into(),
        detail: e.to_string(),
    })?;
    write("config.toml", &toml_text)
}

/// Outcome of stepping one episode of a recorded run; exposed for the CLI's
/// oracle subcommand.
pub fn describe_outcome(outcome: &StepOutcome) -> String {
    format!(
        "reward {:.3}, power {:.3} W, constraints {}",
        outcome.mean_reward(),
        outcome.network_power(),
        if outcome.all_ok() { "met" } else { "violated" }
    )
}
