//! Multi-cell radio environment.
//!
//! Models a row of small base stations (BSs) with uniformly dropped users,
//! a 3GPP UMi-style path-loss channel, proportional-fair resource-block (RB)
//! allocation, and Shannon rates with co-channel inter-cell interference.
//! A step maps each BS's discrete power level to watts, splits the power
//! equally over RBs, and scores the outcome with a target-power reward minus
//! a penalty when the average-rate constraint is violated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Avoids division by zero in the proportional-fair metric.
const PF_EPSILON: f64 = 1.0;

/// Static topology and problem parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Number of base stations.
    pub num_bs: usize,
    /// Resource blocks per BS.
    pub rb_per_bs: usize,
    /// Bandwidth of one RB, Hz.
    pub rb_bandwidth_hz: f64,
    /// Noise power density, W/Hz.
    pub noise_density_w_per_hz: f64,
    /// Maximum total transmission power per BS, W.
    pub max_power_w: f64,
    /// Minimum average data rate per user, bit/s.
    pub min_rate_bps: f64,
    /// BS coverage radius, m.
    pub coverage_radius_m: f64,
    /// Inclusive range of users per BS.
    pub user_count_min: usize,
    pub user_count_max: usize,
    /// Carrier frequency, GHz.
    pub carrier_freq_ghz: f64,
    /// Target power consumption used by the reward, W.
    pub target_power_w: f64,
    /// Penalty subtracted from the reward when the rate constraint fails.
    pub penalty: f64,
    /// Number of discrete power levels.
    pub num_levels: u32,
    /// Log-normal shadowing standard deviation, dB. Zero disables shadowing.
    pub shadowing_sigma_db: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_bs: 3,
            rb_per_bs: 25,
            rb_bandwidth_hz: 180e3,
            // -174 dBm/Hz thermal noise floor.
            noise_density_w_per_hz: 10f64.powf(-174.0 / 10.0) / 1000.0,
            max_power_w: 4.0,
            min_rate_bps: DEFAULT_MIN_RATE_BPS,
            coverage_radius_m: 20.0,
            user_count_min: 5,
            user_count_max: 15,
            carrier_freq_ghz: 2.6,
            target_power_w: 5.0,
            penalty: 5.0,
            num_levels: 4,
            shadowing_sigma_db: 0.0,
        }
    }
}

/// Default average-rate constraint, bit/s.
///
/// Calibrated against the per-BS average user rate with every BS at level 2
/// under the default topology (1000 sampled layouts, median 2.15e6, 5th
/// percentile 1.19e6). The default sits below the lower tail so the
/// constraint binds only for unusually poor layouts; tighter values are
/// exercised through the C_min sweep.
pub const DEFAULT_MIN_RATE_BPS: f64 = 0.6e6;

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.num_bs < 1 {
            return fail("num_bs must be >= 1");
        }
        if self.rb_per_bs < 1 {
            return fail("rb_per_bs must be >= 1");
        }
        if self.rb_bandwidth_hz <= 0.0 {
            return fail("rb_bandwidth_hz must be > 0");
        }
        if self.noise_density_w_per_hz <= 0.0 {
            return fail("noise_density_w_per_hz must be > 0");
        }
        if self.max_power_w <= 0.0 {
            return fail("max_power_w must be > 0");
        }
        if self.min_rate_bps < 0.0 {
            return fail("min_rate_bps must be >= 0");
        }
        if self.coverage_radius_m <= 0.0 {
            return fail("coverage_radius_m must be > 0");
        }
        if self.user_count_min < 1 || self.user_count_min > self.user_count_max {
            return fail("user count range requires 1 <= min <= max");
        }
        if self.carrier_freq_ghz <= 0.0 {
            return fail("carrier_freq_ghz must be > 0");
        }
        if self.num_levels < 2 {
            return fail("num_levels must be >= 2");
        }
        if self.penalty < 0.0 {
            return fail("penalty must be >= 0");
        }
        if self.shadowing_sigma_db < 0.0 {
            return fail("shadowing_sigma_db must be >= 0");
        }
        Ok(())
    }

    /// BS site x-coordinate in meters. Sites sit on a line, spaced so that
    /// adjacent coverage areas touch.
    pub fn bs_position_m(&self, bs: usize) -> f64 {
        bs as f64 * 2.0 * self.coverage_radius_m
    }
}

/// Which summary of the network state drives decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StateMode {
    /// Per-BS user counts.
    Discrete,
    /// Per-BS average user-BS distance.
    Continuous,
}

/// Per-episode stochastic state: user drop and its decision-relevant summary.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub mode: StateMode,
    /// Users attached to each BS.
    pub per_bs_user_count: Vec<usize>,
    /// Mean user-BS distance per BS, m.
    pub per_bs_avg_distance: Vec<f64>,
    /// `(bs_index, distance_m)` for every user, grouped by BS in drop order.
    pub user_positions: Vec<(usize, f64)>,
}

impl NetworkState {
    /// Distances of the users attached to `bs`.
    pub fn users_of(&self, bs: usize) -> impl Iterator<Item = f64> + '_ {
        self.user_positions
            .iter()
            .filter(move |(b, _)| *b == bs)
            .map(|(_, d)| *d)
    }

    /// Decision-relevant scalar for BS `bs`: user count (discrete) or
    /// average distance (continuous).
    pub fn bs_scalar(&self, bs: usize) -> f64 {
        match self.mode {
            StateMode::Discrete => self.per_bs_user_count[bs] as f64,
            StateMode::Continuous => self.per_bs_avg_distance[bs],
        }
    }

    /// Scalar summary of the whole network for the shared-decision loop:
    /// rounded mean user count (discrete) or mean average distance
    /// (continuous).
    pub fn network_scalar(&self) -> f64 {
        let n = self.per_bs_user_count.len() as f64;
        match self.mode {
            StateMode::Discrete => {
                let mean =
                    self.per_bs_user_count.iter().map(|&u| u as f64).sum::<f64>() / n;
                mean.round()
            }
            StateMode::Continuous => self.per_bs_avg_distance.iter().sum::<f64>() / n,
        }
    }

    /// Checks internal consistency of the summary fields against the drop.
    pub fn check_invariants(&self, config: &NetworkConfig) -> Result<()> {
        for (bs, &count) in self.per_bs_user_count.iter().enumerate() {
            let dists: Vec<f64> = self.users_of(bs).collect();
            if dists.len() != count {
                return Err(Error::Domain(format!(
                    "BS {bs}: user_positions count {} != per_bs_user_count {count}",
                    dists.len()
                )));
            }
            match self.mode {
                StateMode::Discrete => {
                    if count < config.user_count_min || count > config.user_count_max {
                        return Err(Error::Domain(format!(
                            "BS {bs}: user count {count} outside configured range"
                        )));
                    }
                }
                StateMode::Continuous => {
                    let avg = self.per_bs_avg_distance[bs];
                    if avg <= 0.0 || avg > config.coverage_radius_m {
                        return Err(Error::Domain(format!(
                            "BS {bs}: average distance {avg} outside (0, radius]"
                        )));
                    }
                }
            }
            let mean = dists.iter().sum::<f64>() / dists.len() as f64;
            let avg = self.per_bs_avg_distance[bs];
            if (mean - avg).abs() > 1e-9 * avg.abs().max(1.0) {
                return Err(Error::Domain(format!(
                    "BS {bs}: stored average distance {avg} != recomputed {mean}"
                )));
            }
        }
        Ok(())
    }
}

/// Discrete power level in `[1, num_levels]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLevel(u32);

impl ActionLevel {
    pub fn new(level: u32, num_levels: u32) -> Result<Self> {
        if level < 1 || level > num_levels {
            return Err(Error::Domain(format!(
                "power level {level} outside [1, {num_levels}]"
            )));
        }
        Ok(ActionLevel(level))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for ActionLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Achievable rate of every user, grouped per BS, bit/s.
    pub per_user_rate: Vec<Vec<f64>>,
    /// Average user rate per BS, bit/s.
    pub avg_rate: Vec<f64>,
    /// Total transmission power per BS, W.
    pub total_power: Vec<f64>,
    /// Whether the average-rate constraint holds, per BS.
    pub constraint_ok: Vec<bool>,
    /// Reward per BS.
    pub reward: Vec<f64>,
}

impl StepOutcome {
    /// Mean reward across BSs (the system reward curve).
    pub fn mean_reward(&self) -> f64 {
        self.reward.iter().sum::<f64>() / self.reward.len() as f64
    }

    /// Sum of per-BS powers, W.
    pub fn network_power(&self) -> f64 {
        self.total_power.iter().sum()
    }

    pub fn all_ok(&self) -> bool {
        self.constraint_ok.iter().all(|&ok| ok)
    }
}

/// Draws a random user drop. The same seed always yields the same state.
pub fn sample_state(config: &NetworkConfig, mode: StateMode, rng_seed: u64) -> Result<NetworkState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut per_bs_user_count = Vec::with_capacity(config.num_bs);
    let mut per_bs_avg_distance = Vec::with_capacity(config.num_bs);
    let mut user_positions = Vec::new();
    for bs in 0..config.num_bs {
        let count = rng.random_range(config.user_count_min..=config.user_count_max);
        let mut sum = 0.0;
        for _ in 0..count {
            // (0, radius]: 1 - u with u in [0, 1).
            let d = config.coverage_radius_m * (1.0 - rng.random::<f64>());
            sum += d;
            user_positions.push((bs, d));
        }
        per_bs_user_count.push(count);
        per_bs_avg_distance.push(sum / count as f64);
    }
    Ok(NetworkState {
        mode,
        per_bs_user_count,
        per_bs_avg_distance,
        user_positions,
    })
}

/// UMi-style path loss in dB at `distance_m` meters and `freq_ghz` GHz.
pub fn path_loss_db(distance_m: f64, freq_ghz: f64) -> f64 {
    32.4 + 21.0 * distance_m.log10() + 20.0 * freq_ghz.log10()
}

/// Linear channel gain for a link of `distance_m` meters.
pub fn channel_gain(distance_m: f64, config: &NetworkConfig, shadowing_db: f64) -> Result<f64> {
    if distance_m <= 0.0 {
        return Err(Error::Domain(format!(
            "channel gain requires distance > 0, got {distance_m}"
        )));
    }
    let pl = path_loss_db(distance_m, config.carrier_freq_ghz) + shadowing_db;
    Ok(10f64.powf(-pl / 10.0))
}

/// Maps a power level to total BS transmission power in watts:
/// `level * max_power / num_levels`.
pub fn level_to_watts(level: ActionLevel, config: &NetworkConfig) -> Result<f64> {
    if level.get() > config.num_levels {
        return Err(Error::Domain(format!(
            "level {} exceeds num_levels {}",
            level.get(),
            config.num_levels
        )));
    }
    Ok(level.get() as f64 * config.max_power_w / config.num_levels as f64)
}

/// Distance from a user of `bs` at `distance_m` to the site of `other_bs`.
///
/// Users are placed on the site axis, offset toward +x from their own BS.
pub fn cross_distance_m(config: &NetworkConfig, bs: usize, distance_m: f64, other_bs: usize) -> f64 {
    (config.bs_position_m(other_bs) - (config.bs_position_m(bs) + distance_m)).abs()
}

/// Proportional-fair RB allocation, per BS independently.
///
/// Returns, for each BS, a vector of length `rb_per_bs` holding the local
/// index of the user the RB is assigned to. RBs are walked in order; each is
/// given to the user maximizing instantaneous rate over `PF_EPSILON` plus the
/// rate already allocated to that user, then the winner's running total is
/// updated. The instantaneous rate uses the nominal per-RB power
/// `max_power / rb_per_bs` and no interference.
pub fn allocate_rbs(state: &NetworkState, config: &NetworkConfig) -> Result<Vec<Vec<usize>>> {
    let p_ref = config.max_power_w / config.rb_per_bs as f64;
    let noise = config.rb_bandwidth_hz * config.noise_density_w_per_hz;
    let mut allocation = Vec::with_capacity(config.num_bs);
    for bs in 0..config.num_bs {
        let dists: Vec<f64> = state.users_of(bs).collect();
        if dists.is_empty() {
            return Err(Error::Domain(format!("BS {bs} has no users to schedule")));
        }
        let inst_rate: Vec<f64> = dists
            .iter()
            .map(|&d| {
                let h = channel_gain(d, config, 0.0)?;
                Ok(config.rb_bandwidth_hz * (1.0 + p_ref * h / noise).log2())
            })
            .collect::<Result<_>>()?;
        let mut allocated = vec![0.0f64; dists.len()];
        let mut rbs = Vec::with_capacity(config.rb_per_bs);
        for _ in 0..config.rb_per_bs {
            let mut best = 0usize;
            let mut best_metric = f64::NEG_INFINITY;
            for u in 0..dists.len() {
                let metric = inst_rate[u] / (PF_EPSILON + allocated[u]);
                if metric > best_metric {
                    best_metric = metric;
                    best = u;
                }
            }
            allocated[best] += inst_rate[best];
            rbs.push(best);
        }
        allocation.push(rbs);
    }
    Ok(allocation)
}

/// Advances the environment by one episode step.
///
/// Powers are split equally over RBs. A user's rate on each of its RBs is
/// `d_k * log2(1 + SINR)` where the interference is every other BS's per-RB
/// power on the same RB index, attenuated by the cross-site gain. The seed
/// only matters when shadowing is enabled.
pub fn step(
    state: &NetworkState,
    actions: &[ActionLevel],
    config: &NetworkConfig,
    rng_seed: u64,
) -> Result<StepOutcome> {
    config.validate()?;
    if actions.len() != config.num_bs {
        return Err(Error::Domain(format!(
            "expected {} actions, got {}",
            config.num_bs,
            actions.len()
        )));
    }
    let total_power: Vec<f64> = actions
        .iter()
        .map(|&a| level_to_watts(a, config))
        .collect::<Result<_>>()?;
    let p_rb: Vec<f64> = total_power
        .iter()
        .map(|p| p / config.rb_per_bs as f64)
        .collect();

    // Per-link shadowing draws, indexed [user][bs]; all zero when disabled.
    let num_users = state.user_positions.len();
    let mut shadowing = vec![vec![0.0f64; config.num_bs]; num_users];
    if config.shadowing_sigma_db > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for row in shadowing.iter_mut() {
            for s in row.iter_mut() {
                // Box-Muller from two uniform draws.
                let u1: f64 = 1.0 - rng.random::<f64>();
                let u2: f64 = rng.random::<f64>();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                *s = config.shadowing_sigma_db * z;
            }
        }
    }

    // Gains from every BS to every user.
    let mut gain = vec![vec![0.0f64; config.num_bs]; num_users];
    for (u, &(own_bs, d)) in state.user_positions.iter().enumerate() {
        for bs in 0..config.num_bs {
            let link_d = if bs == own_bs {
                d
            } else {
                cross_distance_m(config, own_bs, d, bs)
            };
            gain[u][bs] = channel_gain(link_d, config, shadowing[u][bs])?;
        }
    }

    let allocation = allocate_rbs(state, config)?;
    let noise = config.rb_bandwidth_hz * config.noise_density_w_per_hz;

    let mut per_user_rate = Vec::with_capacity(config.num_bs);
    let mut user_offset = 0usize;
    for bs in 0..config.num_bs {
        let count = state.per_bs_user_count[bs];
        let mut rates = vec![0.0f64; count];
        for &local_user in allocation[bs].iter() {
            let u = user_offset + local_user;
            let signal = p_rb[bs] * gain[u][bs];
            // Interference comes from the co-indexed RB of every other BS;
            // per-RB power is uniform, so the RB index drops out.
            let mut interference = 0.0;
            for other in 0..config.num_bs {
                if other != bs {
                    interference += p_rb[other] * gain[u][other];
                }
            }
            rates[local_user] +=
                config.rb_bandwidth_hz * (1.0 + signal / (interference + noise)).log2();
        }
        per_user_rate.push(rates);
        user_offset += count;
    }

    let avg_rate: Vec<f64> = per_user_rate
        .iter()
        .map(|rates| rates.iter().sum::<f64>() / rates.len() as f64)
        .collect();
    let constraint_ok: Vec<bool> = avg_rate.iter().map(|&r| r >= config.min_rate_bps).collect();
    let reward: Vec<f64> = total_power
        .iter()
        .zip(&constraint_ok)
        .map(|(&p, &ok)| {
            let penalty = if ok { 0.0 } else { config.penalty };
            config.target_power_w - p - penalty
        })
        .collect();

    Ok(StepOutcome {
        per_user_rate,
        avg_rate,
        total_power,
        constraint_ok,
        reward,
    })
}
