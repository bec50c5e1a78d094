//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line. Oracles here are written independently of the library
//! code paths they check.

use powerctl::env::{self, ActionLevel, NetworkConfig, StateMode};
use powerctl::policy::{ChatTransport, LlmBackendConfig};
use powerctl::pool::{
    score, select_discrete, select_ranked, Example, ExperiencePool, SelectionResult,
};
use powerctl::prompt::{parse_reply, render, ParseConfidence};
use powerctl::runner::{
    evaluate_exhaustive, final_window, metrics_to_csv, replay, run, summarize, BackendKind,
    RunConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pass(n: u32, name: &str) {
    println!("criterion {n} ({name}): PASS");
}

fn action(level: u32) -> ActionLevel {
    ActionLevel::new(level, 4).unwrap()
}

// -------------------------------------------------------------------------
// 1. Reward pattern: level l yields reward exactly 5 - l when feasible.
// -------------------------------------------------------------------------
#[test]
fn criterion_1_reward_pattern() {
    let net = NetworkConfig {
        min_rate_bps: 0.0,
        ..NetworkConfig::default()
    };
    let state = env::sample_state(&net, StateMode::Continuous, 1).unwrap();
    for level in 1..=4u32 {
        let actions = vec![action(level); net.num_bs];
        let out = env::step(&state, &actions, &net, 1).unwrap();
        for (&reward, &ok) in out.reward.iter().zip(&out.constraint_ok) {
            assert!(ok, "level {level} unexpectedly infeasible");
            assert_eq!(reward, 5.0 - level as f64, "level {level}");
        }
    }
    pass(1, "reward pattern 1->4.0 2->3.0 3->2.0 4->1.0");
}

// -------------------------------------------------------------------------
// 2. Selection equals an independent brute-force filter/sort oracle on
//    1,000 randomized pools, including tie-break order.
// -------------------------------------------------------------------------

/// Best-first comparison: metric desc, episode desc, pool position asc.
fn oracle_order(metric: &[f64], examples: &[Example], a: usize, b: usize) -> std::cmp::Ordering {
    metric[b]
        .partial_cmp(&metric[a])
        .unwrap()
        .then_with(|| examples[b].episode.cmp(&examples[a].episode))
        .then_with(|| a.cmp(&b))
}

fn oracle_discrete(
    examples: &[Example],
    s_target: f64,
    k_good: usize,
    k_bad: usize,
) -> SelectionResult {
    let candidates: Vec<usize> = (0..examples.len())
        .filter(|&i| examples[i].state == s_target)
        .collect();
    let metric: Vec<f64> = examples.iter().map(|e| e.reward).collect();
    let mut order = candidates.clone();
    order.sort_by(|&a, &b| oracle_order(&metric, examples, a, b));
    let good: Vec<usize> = order.iter().take(k_good).copied().collect();
    let floor = good
        .last()
        .map(|&i| metric[i])
        .unwrap_or(f64::INFINITY);
    let mut bad: Vec<usize> = order
        .iter()
        .skip(k_good)
        .filter(|&&i| !examples[i].constraint_ok || metric[i] < floor)
        .copied()
        .collect();
    // Worst first: metric ascending, then recency, then pool position.
    bad.sort_by(|&a, &b| {
        metric[a]
            .partial_cmp(&metric[b])
            .unwrap()
            .then_with(|| examples[b].episode.cmp(&examples[a].episode))
            .then_with(|| a.cmp(&b))
    });
    SelectionResult {
        recommended: good.iter().map(|&i| examples[i].clone()).collect(),
        inadvisable: bad.iter().take(k_bad).map(|&i| examples[i].clone()).collect(),
    }
}

fn oracle_ranked(
    examples: &[Example],
    s_target: f64,
    tau: f64,
    k_good: usize,
    k_bad: usize,
) -> SelectionResult {
    let metric: Vec<f64> = examples.iter().map(|e| score(e, s_target, tau)).collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| oracle_order(&metric, examples, a, b));
    let good: Vec<usize> = order.iter().take(k_good).copied().collect();
    let leftovers: Vec<usize> = order.iter().skip(k_good).copied().collect();
    let violators: Vec<usize> = leftovers
        .iter()
        .filter(|&&i| !examples[i].constraint_ok)
        .copied()
        .collect();
    let mut bad = if violators.is_empty() { leftovers } else { violators };
    // Worst first.
    bad.sort_by(|&a, &b| {
        metric[a]
            .partial_cmp(&metric[b])
            .unwrap()
            .then_with(|| examples[b].episode.cmp(&examples[a].episode))
            .then_with(|| a.cmp(&b))
    });
    SelectionResult {
        recommended: good.iter().map(|&i| examples[i].clone()).collect(),
        inadvisable: bad.iter().take(k_bad).map(|&i| examples[i].clone()).collect(),
    }
}

#[test]
fn criterion_2_selection_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..1000 {
        let size = rng.random_range(1..=500usize);
        let examples: Vec<Example> = (0..size)
            .map(|i| Example {
                episode: (i / 3) as u64, // forced episode ties
                state: if trial % 2 == 0 {
                    rng.random_range(5..=15) as f64
                } else {
                    // Coarse grid so score ties actually happen.
                    (rng.random_range(0..40) as f64) * 0.5
                },
                action: action(rng.random_range(1..=4)),
                // Coarse reward grid for the same reason.
                reward: rng.random_range(-10..=10) as f64 * 0.5,
                constraint_ok: rng.random_bool(0.7),
            })
            .collect();
        let mut pool = ExperiencePool::new();
        for e in &examples {
            pool.insert(e.clone());
        }
        let k_good = rng.random_range(0..=8);
        let k_bad = rng.random_range(0..=8);
        if trial % 2 == 0 {
            let s_target = rng.random_range(5..=15) as f64;
            let got = select_discrete(&pool, s_target, k_good, k_bad);
            let expected = oracle_discrete(&examples, s_target, k_good, k_bad);
            assert_eq!(got, expected, "discrete trial {trial}");
        } else {
            let s_target = rng.random_range(0.0..20.0);
            let tau = [0.0, 0.5, 1.0, 2.0][trial % 4];
            let got = select_ranked(&pool, s_target, tau, k_good, k_bad);
            let expected = oracle_ranked(&examples, s_target, tau, k_good, k_bad);
            assert_eq!(got, expected, "ranked trial {trial}");
        }
    }
    pass(2, "selection matches brute-force oracle on 1000 pools");
}

// -------------------------------------------------------------------------
// 3. Per-user rates match an independent scalar rate computation on 100
//    random 3-BS layouts, to 1e-9 relative.
// -------------------------------------------------------------------------
#[test]
fn criterion_3_rate_oracle_equivalence() {
    let net = NetworkConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100u64 {
        let state = env::sample_state(&net, StateMode::Continuous, 1000 + trial).unwrap();
        let levels = [
            rng.random_range(1..=4u32),
            rng.random_range(1..=4u32),
            rng.random_range(1..=4u32),
        ];
        let actions: Vec<ActionLevel> = levels.iter().map(|&l| action(l)).collect();
        let out = env::step(&state, &actions, &net, 0).unwrap();

        // Independent scalar evaluation. Shares only the state, the level
        // vector, and the RB allocation (an input of the rate formula).
        let allocation = env::allocate_rbs(&state, &net).unwrap();
        let gain = |d: f64| -> f64 {
            let pl = 32.4 + 21.0 * d.log10() + 20.0 * net.carrier_freq_ghz.log10();
            10f64.powf(-pl / 10.0)
        };
        let site = |b: usize| b as f64 * 2.0 * net.coverage_radius_m;
        for bs in 0..net.num_bs {
            let dists: Vec<f64> = state.users_of(bs).collect();
            for (local, &d) in dists.iter().enumerate() {
                let user_x = site(bs) + d;
                let mut expected = 0.0;
                for &assigned in &allocation[bs] {
                    if assigned != local {
                        continue;
                    }
                    let p_own = levels[bs] as f64 * net.max_power_w / 4.0 / net.rb_per_bs as f64;
                    let signal = p_own * gain(d);
                    let mut interference = 0.0;
                    for other in 0..net.num_bs {
                        if other == bs {
                            continue;
                        }
                        let p_other =
                            levels[other] as f64 * net.max_power_w / 4.0 / net.rb_per_bs as f64;
                        interference += p_other * gain((site(other) - user_x).abs());
                    }
                    let noise = net.rb_bandwidth_hz * net.noise_density_w_per_hz;
                    expected +=
                        net.rb_bandwidth_hz * (1.0 + signal / (interference + noise)).log2();
                }
                let got = out.per_user_rate[bs][local];
                assert!(
                    (got - expected).abs() <= 1e-9 * expected.abs().max(1.0),
                    "trial {trial} bs {bs} user {local}: {got} != {expected}"
                );
            }
        }
    }
    pass(3, "per-user rates match independent scalar oracle");
}

// -------------------------------------------------------------------------
// 4. Converged surrogate reward within 5% of the exhaustive oracle on the
//    same sampled states (discrete mode, 200 episodes, 10 seeds).
// -------------------------------------------------------------------------
#[test]
fn criterion_4_loop_optimality() {
    let mut policy_sum = 0.0;
    let mut oracle_sum = 0.0;
    let mut count = 0usize;
    for seed in 0..10u64 {
        let config = RunConfig {
            state_mode: StateMode::Discrete,
            backend: BackendKind::Surrogate,
            episodes: 200,
            exploration_fraction: 0.4,
            seed,
            ..RunConfig::default()
        };
        let log = run(&config).unwrap();
        for r in final_window(&log.records, 0.2) {
            policy_sum += r.reward;
            let state =
                env::sample_state(&config.network, StateMode::Discrete, r.episode_seed).unwrap();
            let (_, best) =
                evaluate_exhaustive(&state, &config.network, false, r.episode_seed).unwrap();
            oracle_sum += best;
            count += 1;
        }
    }
    let policy_mean = policy_sum / count as f64;
    let oracle_mean = oracle_sum / count as f64;
    assert!(
        (policy_mean - oracle_mean).abs() <= 0.05 * oracle_mean.abs(),
        "policy {policy_mean} vs oracle {oracle_mean}"
    );
    pass(4, "converged surrogate within 5% of exhaustive search");
}

// -------------------------------------------------------------------------
// 5. Converged mean reward is non-decreasing in the number of recommended
//    examples, within one pooled standard error (10 seeds).
// -------------------------------------------------------------------------
#[test]
fn criterion_5_example_count_trend() {
    let ks = [1usize, 2, 4, 8];
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for &k in &ks {
        let rewards: Vec<f64> = (0..10u64)
            .map(|seed| {
                let config = RunConfig {
                    state_mode: StateMode::Continuous,
                    backend: BackendKind::Surrogate,
                    k_good: k,
                    seed,
                    ..RunConfig::default()
                };
                let log = run(&config).unwrap();
                summarize(final_window(&log.records, 0.2)).unwrap().mean_reward
            })
            .collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / (rewards.len() - 1) as f64;
        means.push(mean);
        ses.push((var / rewards.len() as f64).sqrt());
    }
    for i in 1..ks.len() {
        let pooled_se = (ses[i - 1].powi(2) + ses[i].powi(2)).sqrt();
        assert!(
            means[i] >= means[i - 1] - pooled_se,
            "K {} -> {}: reward dropped {} -> {} (pooled se {pooled_se})",
            ks[i - 1],
            ks[i],
            means[i - 1],
            means[i]
        );
    }
    pass(5, "reward non-decreasing in example count");
}

// -------------------------------------------------------------------------
// 6. Raising C_min never lowers converged power nor raises converged reward
//    (low / mid / high constraint, surrogate backend).
// -------------------------------------------------------------------------
#[test]
fn criterion_6_constraint_sweep_trend() {
    let c_mins = [0.6e6, env::DEFAULT_MIN_RATE_BPS, 3.0e6];
    let mut powers = Vec::new();
    let mut rewards = Vec::new();
    for &c_min in &c_mins {
        let mut power = 0.0;
        let mut reward = 0.0;
        for seed in 0..5u64 {
            let mut config = RunConfig {
                state_mode: StateMode::Continuous,
                backend: BackendKind::Surrogate,
                seed,
                ..RunConfig::default()
            };
            config.network.min_rate_bps = c_min;
            let log = run(&config).unwrap();
            let summary = summarize(final_window(&log.records, 0.2)).unwrap();
            power += summary.mean_power_w;
            reward += summary.mean_reward;
        }
        powers.push(power / 5.0);
        rewards.push(reward / 5.0);
    }
    for i in 1..c_mins.len() {
        assert!(
            powers[i] >= powers[i - 1] - 1e-9,
            "power decreased with C_min: {powers:?}"
        );
        assert!(
            rewards[i] <= rewards[i - 1] + 1e-9,
            "reward increased with C_min: {rewards:?}"
        );
    }
    pass(6, "power non-decreasing and reward non-increasing in C_min");
}

// -------------------------------------------------------------------------
// 7. Tabular Q-learning converges: final-20% actions match the exhaustive
//    oracle's argmax on >= 95% of visited states.
// -------------------------------------------------------------------------
#[test]
fn criterion_7_qlearning_baseline() {
    let mut agree = 0usize;
    let mut total = 0usize;
    for seed in 0..5u64 {
        let config = RunConfig {
            state_mode: StateMode::Discrete,
            backend: BackendKind::Qlearn,
            episodes: 200,
            seed,
            ..RunConfig::default()
        };
        let log = run(&config).unwrap();
        for r in final_window(&log.records, 0.2) {
            let state =
                env::sample_state(&config.network, StateMode::Discrete, r.episode_seed).unwrap();
            let (best, _) =
                evaluate_exhaustive(&state, &config.network, false, r.episode_seed).unwrap();
            if r.actions[0] == best[0].get() {
                agree += 1;
            }
            total += 1;
        }
    }
    let fraction = agree as f64 / total as f64;
    assert!(
        fraction >= 0.95,
        "greedy matched oracle on only {agree}/{total} visited states"
    );
    pass(7, "q-learning greedy matches oracle argmax on >= 95% of states");
}

// -------------------------------------------------------------------------
// 8. Exploration is confined to the first 40% of episodes and its empirical
//    frequency tracks epsilon within 10 percentage points (20 seeds).
// -------------------------------------------------------------------------
#[test]
fn criterion_8_exploration_schedule() {
    let mut random_count = 0usize;
    let mut explore_count = 0usize;
    for seed in 0..20u64 {
        let config = RunConfig {
            state_mode: StateMode::Discrete,
            episodes: 100,
            exploration_fraction: 0.4,
            seed,
            ..RunConfig::default()
        };
        let log = run(&config).unwrap();
        for (i, r) in log.records.iter().enumerate() {
            if i < 40 {
                explore_count += 1;
                if r.was_random {
                    random_count += 1;
                }
            } else {
                assert!(!r.was_random, "seed {seed}: random action in episode {}", i + 1);
            }
        }
    }
    let freq = random_count as f64 / explore_count as f64;
    let epsilon = RunConfig::default().epsilon_during_exploration;
    assert!(
        (freq - epsilon).abs() <= 0.10,
        "exploration frequency {freq} vs epsilon {epsilon}"
    );
    pass(8, "exploration confined to first 40% and frequency tracks epsilon");
}

// -------------------------------------------------------------------------
// 9. Prompt golden file matches byte-for-byte; all three reply fixtures
//    parse to level 1 with confidence Exact.
// -------------------------------------------------------------------------
#[test]
fn criterion_9_prompt_and_parse_fixtures() {
    let ex = |episode: u64, state: f64, level: u32, reward: f64| Example {
        episode,
        state,
        action: action(level),
        reward,
        constraint_ok: true,
    };
    let selection = SelectionResult {
        recommended: vec![
            ex(49, 8.78, 1, 4.0),
            ex(85, 9.24, 1, 4.0),
            ex(58, 9.19, 1, 4.0),
            ex(67, 9.15, 1, 4.0),
            ex(13, 9.15, 1, 4.0),
            ex(49, 8.96, 1, 4.0),
        ],
        inadvisable: vec![
            ex(21, 10.05, 3, 2.0),
            ex(40, 9.28, 4, 1.0),
            ex(120, 9.9, 3, 2.0),
            ex(12, 9.8, 3, 2.0),
            ex(39, 10.02, 2, 3.0),
        ],
    };
    let doc = render(8.72, StateMode::Continuous, &selection, 4);
    let golden = include_str!("fixtures/appendix_prompt_golden.txt");
    assert_eq!(doc.text, golden, "prompt differs from golden file");

    for fixture in [
        include_str!("fixtures/reply_sample_1.txt"),
        include_str!("fixtures/reply_sample_2.txt"),
        include_str!("fixtures/reply_sample_3.txt"),
    ] {
        let parsed = parse_reply(fixture, 4);
        assert_eq!(parsed.confidence, ParseConfidence::Exact);
        assert_eq!(parsed.action.unwrap().get(), 1);
    }
    pass(9, "golden prompt byte-identical, reply samples parse to level 1");
}

// -------------------------------------------------------------------------
// 10. Identical config and seed give byte-identical metrics; replay
//     recomputes every logged reward exactly.
// -------------------------------------------------------------------------
#[test]
fn criterion_10_determinism_and_replay() {
    let config = RunConfig {
        state_mode: StateMode::Continuous,
        backend: BackendKind::Surrogate,
        episodes: 100,
        seed: 42,
        ..RunConfig::default()
    };
    let a = run(&config).unwrap();
    let b = run(&config).unwrap();
    assert_eq!(metrics_to_csv(&a.records), metrics_to_csv(&b.records));
    assert_eq!(replay(&a.records, &config).unwrap(), 100);
    pass(10, "byte-identical metrics and exact replay");
}

// -------------------------------------------------------------------------
// LLM wire-format surface, exercised through a stub transport.
// -------------------------------------------------------------------------
#[test]
fn llm_stub_end_to_end() {
    struct FixtureTransport;
    impl ChatTransport for FixtureTransport {
        fn complete(
            &mut self,
            _config: &LlmBackendConfig,
            prompt_text: &str,
        ) -> powerctl::Result<String> {
            assert!(prompt_text.contains("Task goal"));
            Ok(include_str!("fixtures/reply_sample_3.txt").to_string())
        }
    }
    use powerctl::policy::LlmBackend;
    use powerctl::runner::run_with_backend;
    let config = RunConfig {
        episodes: 10,
        state_mode: StateMode::Continuous,
        backend: BackendKind::Llm,
        exploration_fraction: 0.0,
        ..RunConfig::default()
    };
    let mut backend =
        LlmBackend::new(config.llm.clone(), Box::new(FixtureTransport), 4).unwrap();
    let log = run_with_backend(&config, &mut backend).unwrap();
    assert_eq!(log.records.len(), 10);
    for r in &log.records {
        assert_eq!(r.actions[0], 1);
        assert_eq!(r.backend, "llm");
        assert_eq!(r.parse_confidence, "exact");
    }
    assert!(log.transcript.iter().any(|t| t.contains("--- reply ---")));
}
