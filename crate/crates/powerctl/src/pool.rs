//! Accumulated experience pool and example selection.
//!
//! Every episode appends one `(state, action, reward)` example. Two selection
//! schemes mine the pool for prompt demonstrations: exact state matching for
//! discrete states, and a ranking score `reward - tau * |state - target|` for
//! continuous states. Both return a recommended (good) set and an inadvisable
//! (bad) set.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::ActionLevel;
use crate::error::{Error, Result};

/// One recorded decision: environment state, action taken, observed reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub episode: u64,
    pub state: f64,
    pub action: ActionLevel,
    pub reward: f64,
    pub constraint_ok: bool,
}

/// Append-only log of examples, optionally bounded by a ring-buffer capacity.
#[derive(Debug, Clone, Default)]
pub struct ExperiencePool {
    examples: VecDeque<Example>,
    capacity: Option<usize>,
}

/// Recommended and inadvisable demonstrations for one prompt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionResult {
    /// Best examples, ordered best first.
    pub recommended: Vec<Example>,
    /// Worst examples, ordered worst first.
    pub inadvisable: Vec<Example>,
}

impl ExperiencePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pool that drops its oldest example once `capacity` is exceeded.
    pub fn with_capacity_limit(capacity: usize) -> Self {
        ExperiencePool {
            examples: VecDeque::new(),
            capacity: Some(capacity),
        }
    }

    pub fn insert(&mut self, example: Example) {
        if let Some(cap) = self.capacity {
            while self.examples.len() >= cap {
                self.examples.pop_front();
            }
        }
        self.examples.push_back(example);
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Example> {
        self.examples.iter()
    }

    /// Largest episode index in the pool, if any.
    pub fn max_episode(&self) -> Option<u64> {
        self.examples.iter().map(|e| e.episode).max()
    }

    /// Writes one JSON object per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for example in &self.examples {
            let line = serde_json::to_string(example).map_err(|e| Error::Parse {
                what: "example".into(),
                detail: e.to_string(),
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a JSONL pool, validating actions against `num_levels`.
    pub fn load_jsonl(path: &Path, num_levels: u32) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pool = ExperiencePool::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let example: Example = serde_json::from_str(&line).map_err(|e| Error::Parse {
                what: format!("{}:{}", path.display(), n + 1),
                detail: e.to_string(),
            })?;
            ActionLevel::new(example.action.get(), num_levels)?;
            pool.insert(example);
        }
        Ok(pool)
    }
}

/// Ranking score of an example against a target state:
/// `reward - tau * |state - target|`.
pub fn score(example: &Example, s_target: f64, tau: f64) -> f64 {
    example.reward - tau * (example.state - s_target).abs()
}

/// Ordering key for "better" examples: primary score descending, ties broken
/// by recency (higher episode), then by earlier pool position.
fn sort_best_first(indexed: &mut [(usize, f64)], pool: &[&Example]) {
    indexed.sort_by(|&(ia, sa), &(ib, sb)| {
        sb.partial_cmp(&sa)
            .unwrap()
            .then_with(|| pool[ib].episode.cmp(&pool[ia].episode))
            .then_with(|| ia.cmp(&ib))
    });
}

/// Same tie-break rule but primary score ascending (worst first).
fn sort_worst_first(indexed: &mut [(usize, f64)], pool: &[&Example]) {
    indexed.sort_by(|&(ia, sa), &(ib, sb)| {
        sa.partial_cmp(&sb)
            .unwrap()
            .then_with(|| pool[ib].episode.cmp(&pool[ia].episode))
            .then_with(|| ia.cmp(&ib))
    });
}

/// Exact-state-match selection for discrete states.
///
/// Candidates are the pool entries with `state == s_target`. The recommended
/// set is the top `k_good` by reward; the inadvisable set is the bottom
/// `k_bad` by reward among the remaining candidates that violate the
/// constraint or fall below the lowest recommended reward.
pub fn select_discrete(
    pool: &ExperiencePool,
    s_target: f64,
    k_good: usize,
    k_bad: usize,
) -> SelectionResult {
    let candidates: Vec<&Example> = pool.iter().filter(|e| e.state == s_target).collect();
    select_from_candidates(&candidates, |e| e.reward, k_good, k_bad, BadRule::ViolatorOrBelowFloor)
}

/// Ranked selection for continuous states using [`score`].
///
/// The recommended set is the top `k_good` by score over the whole pool. The
/// inadvisable set prefers constraint violators with the lowest score; when
/// no violator exists it falls back to the globally lowest-scored leftovers.
pub fn select_ranked(
    pool: &ExperiencePool,
    s_target: f64,
    tau: f64,
    k_good: usize,
    k_bad: usize,
) -> SelectionResult {
    let candidates: Vec<&Example> = pool.iter().collect();
    select_from_candidates(
        &candidates,
        |e| score(e, s_target, tau),
        k_good,
        k_bad,
        BadRule::ViolatorElseLowest,
    )
}

/// How the inadvisable candidate set is formed from the non-recommended
/// leftovers.
enum BadRule {
    /// Constraint violators, or examples scoring below the lowest
    /// recommended score (discrete rule).
    ViolatorOrBelowFloor,
    /// Constraint violators; all leftovers when no violator exists
    /// (continuous rule).
    ViolatorElseLowest,
}

fn select_from_candidates(
    candidates: &[&Example],
    metric: impl Fn(&Example) -> f64,
    k_good: usize,
    k_bad: usize,
    bad_rule: BadRule,
) -> SelectionResult {
    let mut indexed: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, e)| (i, metric(e)))
        .collect();
    sort_best_first(&mut indexed, candidates);

    let recommended_idx: Vec<usize> = indexed.iter().take(k_good).map(|&(i, _)| i).collect();
    let floor = if recommended_idx.is_empty() {
        f64::INFINITY
    } else {
        indexed[recommended_idx.len() - 1].1
    };

    let leftovers: Vec<(usize, f64)> = indexed.iter().skip(k_good).copied().collect();
    let mut bad: Vec<(usize, f64)> = match bad_rule {
        BadRule::ViolatorOrBelowFloor => leftovers
            .iter()
            .filter(|&&(i, s)| !candidates[i].constraint_ok || s < floor)
            .copied()
            .collect(),
        BadRule::ViolatorElseLowest => {
            let violators: Vec<(usize, f64)> = leftovers
                .iter()
                .filter(|&&(i, _)| !candidates[i].constraint_ok)
                .copied()
                .collect();
            if violators.is_empty() {
                leftovers.clone()
            } else {
                violators
            }
        }
    };
    sort_worst_first(&mut bad, candidates);
    let inadvisable_idx: Vec<usize> = bad.iter().take(k_bad).map(|&(i, _)| i).collect();

    SelectionResult {
        recommended: recommended_idx
            .iter()
            .map(|&i| candidates[i].clone())
            .collect(),
        inadvisable: inadvisable_idx
            .iter()
            .map(|&i| candidates[i].clone())
            .collect(),
    }
}
