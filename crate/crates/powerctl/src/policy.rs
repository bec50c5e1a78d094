//! Decision backends and the epsilon-greedy wrapper.
//!
//! A backend maps `(state, selection, prompt)` to a power level. Available
//! backends: an LLM over an OpenAI-compatible chat endpoint (with a stub
//! transport for tests), a deterministic surrogate that follows the best
//! recommended example, uniform random, and a tabular Q-learning baseline.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::ActionLevel;
use crate::error::{Error, Result};
use crate::pool::SelectionResult;
use crate::prompt::{parse_reply, ParseConfidence, PromptDocument};

/// A decision plus backend-side bookkeeping for the episode record.
#[derive(Debug, Clone)]
pub struct Decision {
    pub action: ActionLevel,
    /// Transport/parse retries consumed (LLM backend only).
    pub retry_count: u32,
    /// Parse confidence of the winning reply (LLM backend only).
    pub parse_confidence: Option<ParseConfidence>,
    /// Raw reply text for the transcript (LLM backend only).
    pub raw_reply: Option<String>,
}

impl Decision {
    fn plain(action: ActionLevel) -> Self {
        Decision {
            action,
            retry_count: 0,
            parse_confidence: None,
            raw_reply: None,
        }
    }
}

/// A pluggable decision maker.
pub trait DecisionBackend {
    fn name(&self) -> &'static str;

    fn decide(
        &mut self,
        state: f64,
        selection: &SelectionResult,
        prompt: &PromptDocument,
    ) -> Result<Decision>;

    /// Feedback after the environment step. Only learning backends care.
    fn observe(&mut self, _state: f64, _action: ActionLevel, _reward: f64, _next_state: f64) {}
}

/// With probability `epsilon` picks a uniform random level, otherwise
/// delegates to the backend. Returns the decision and whether it was random.
pub fn epsilon_greedy<R: Rng>(
    backend: &mut dyn DecisionBackend,
    state: f64,
    selection: &SelectionResult,
    prompt: &PromptDocument,
    epsilon: f64,
    num_levels: u32,
    rng: &mut R,
) -> Result<(Decision, bool)> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let level = rng.random_range(1..=num_levels);
        let action = ActionLevel::new(level, num_levels)?;
        return Ok((Decision::plain(action), true));
    }
    backend
        .decide(state, selection, prompt)
        .map(|d| (d, false))
}

// ---------------------------------------------------------------------------
// Surrogate and random backends
// ---------------------------------------------------------------------------

/// Deterministic stand-in for the LLM: follows the best recommended example.
///
/// Selection routines order the recommended set best-first, so the decision
/// is the leading example's action; with no examples it falls back to level 1,
/// the cheapest action under the power-minimization objective.
pub struct SurrogateBackend {
    num_levels: u32,
}

impl SurrogateBackend {
    pub fn new(num_levels: u32) -> Self {
        SurrogateBackend { num_levels }
    }
}

impl DecisionBackend for SurrogateBackend {
    fn name(&self) -> &'static str {
        "surrogate"
    }

    fn decide(
        &mut self,
        _state: f64,
        selection: &SelectionResult,
        _prompt: &PromptDocument,
    ) -> Result<Decision> {
        let action = match selection.recommended.first() {
            Some(e) => e.action,
            None => ActionLevel::new(1, self.num_levels)?,
        };
        Ok(Decision::plain(action))
    }
}

/// Uniform random action, seeded independently of the exploration RNG.
pub struct RandomBackend<R: Rng> {
    rng: R,
    num_levels: u32,
}

impl<R: Rng> RandomBackend<R> {
    pub fn new(rng: R, num_levels: u32) -> Self {
        RandomBackend { rng, num_levels }
    }
}

impl<R: Rng> DecisionBackend for RandomBackend<R> {
    fn name(&self) -> &'static str {
        "random"
    }

    fn decide(
        &mut self,
        _state: f64,
        _selection: &SelectionResult,
        _prompt: &PromptDocument,
    ) -> Result<Decision> {
        let level = self.rng.random_range(1..=self.num_levels);
        Ok(Decision::plain(ActionLevel::new(level, self.num_levels)?))
    }
}

// ---------------------------------------------------------------------------
// Tabular Q-learning baseline
// ---------------------------------------------------------------------------

/// State-action value table over discretized states.
#[derive(Debug, Clone)]
pub struct QTable {
    values: HashMap<(i64, u32), f64>,
    visits: HashMap<(i64, u32), u64>,
    pub learning_rate: f64,
    pub discount: f64,
    /// Width of the state discretization bins.
    pub bin_width: f64,
    /// Value reported for unvisited entries.
    init: f64,
}

impl QTable {
    pub fn new(learning_rate: f64, discount: f64, bin_width: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&learning_rate) || learning_rate == 0.0 {
            return Err(Error::Config(format!(
                "learning_rate {learning_rate} outside (0, 1]"
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Config(format!("discount {discount} outside [0, 1)")));
        }
        if bin_width <= 0.0 {
            return Err(Error::Config("bin_width must be > 0".into()));
        }
        Ok(QTable {
            values: HashMap::new(),
            visits: HashMap::new(),
            learning_rate,
            discount,
            bin_width,
            init: 0.0,
        })
    }

    /// Sets the value of unvisited entries. An optimistic value (above any
    /// achievable reward) makes the greedy policy try every action of a
    /// state bin once before settling, so convergence does not depend on
    /// random exploration covering every state-action pair.
    pub fn with_initial_value(mut self, value: f64) -> Self {
        self.init = value;
        self
    }

    pub fn bin(&self, state: f64) -> i64 {
        (state / self.bin_width).floor() as i64
    }

    pub fn value(&self, state: f64, action: ActionLevel) -> f64 {
        let key = (self.bin(state), action.get());
        *self.values.get(&key).unwrap_or(&self.init)
    }

    pub fn visit_count(&self, state: f64, action: ActionLevel) -> u64 {
        let key = (self.bin(state), action.get());
        *self.visits.get(&key).unwrap_or(&0)
    }

    /// One-step Q-learning update:
    /// `Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a))`.
    pub fn update(&mut self, state: f64, action: ActionLevel, reward: f64, next_state: f64, num_levels: u32) {
        let next_best = (1..=num_levels)
            .map(|l| {
                let key = (self.bin(next_state), l);
                *self.values.get(&key).unwrap_or(&self.init)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let key = (self.bin(state), action.get());
        let q = *self.values.get(&key).unwrap_or(&self.init);
        let target = reward + self.discount * next_best;
        self.values.insert(key, q + self.learning_rate * (target - q));
        *self.visits.entry(key).or_insert(0) += 1;
    }

    /// Greedy action, ties broken by the lowest level.
    pub fn greedy(&self, state: f64, num_levels: u32) -> ActionLevel {
        let mut best = 1u32;
        let mut best_q = f64::NEG_INFINITY;
        for l in 1..=num_levels {
            let q = *self
                .values
                .get(&(self.bin(state), l))
                .unwrap_or(&self.init);
            if q > best_q {
                best_q = q;
                best = l;
            }
        }
        ActionLevel::new(best, num_levels).expect("level within range")
    }
}

/// Q-learning baseline backend: greedy over the table, learning from every
/// observed transition.
pub struct QLearnBackend {
    pub table: QTable,
    num_levels: u32,
}

impl QLearnBackend {
    pub fn new(table: QTable, num_levels: u32) -> Self {
        QLearnBackend { table, num_levels }
    }
}

impl DecisionBackend for QLearnBackend {
    fn name(&self) -> &'static str {
        "qlearn"
    }

    fn decide(
        &mut self,
        state: f64,
        _selection: &SelectionResult,
        _prompt: &PromptDocument,
    ) -> Result<Decision> {
        Ok(Decision::plain(self.table.greedy(state, self.num_levels)))
    }

    fn observe(&mut self, state: f64, action: ActionLevel, reward: f64, next_state: f64) {
        self.table
            .update(state, action, reward, next_state, self.num_levels);
    }
}

// ---------------------------------------------------------------------------
// LLM backend
// ---------------------------------------------------------------------------

/// Connection settings for an OpenAI-compatible chat-completion endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmBackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
}

impl Default for LlmBackendConfig {
    fn default() -> Self {
        LlmBackendConfig {
            endpoint_url: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "llama3-8b-instruct".into(),
            temperature: 0.0,
            timeout_secs: 60.0,
            max_retries: 3,
            api_key_env: Some("POWERCTL_API_KEY".into()),
        }
    }
}

impl LlmBackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        if self.timeout_secs <= 0.0 {
            return Err(Error::Config("timeout_secs must be > 0".into()));
        }
        Ok(())
    }
}

/// One round trip to a chat model. Implemented by the HTTP client and by
/// test stubs.
pub trait ChatTransport {
    fn complete(&mut self, config: &LlmBackendConfig, prompt_text: &str) -> Result<String>;
}

/// Blocking HTTP transport speaking the chat-completions wire format.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(config: &LlmBackendConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpTransport { client })
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&mut self, config: &LlmBackendConfig, prompt_text: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": config.model_name,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": config.temperature,
        });
        let mut request = self.client.post(&config.endpoint_url).json(&body);
        if let Some(var) = &config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                request = request.bearer_auth(key);
            }
        }
        let response = request
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?
            .error_for_status()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let value: serde_json::Value = response
            .json()
            .map_err(|e| Error::Transport(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Transport("reply missing choices[0].message.content".into()))
    }
}

/// LLM decision backend: sends the prompt, parses the reply, retries on
/// transport errors and unparseable replies.
pub struct LlmBackend {
    config: LlmBackendConfig,
    transport: Box<dyn ChatTransport>,
    num_levels: u32,
}

impl LlmBackend {
    pub fn new(
        config: LlmBackendConfig,
        transport: Box<dyn ChatTransport>,
        num_levels: u32,
    ) -> Result<Self> {
        config.validate()?;
        Ok(LlmBackend {
            config,
            transport,
            num_levels,
        })
    }

    pub fn over_http(config: LlmBackendConfig, num_levels: u32) -> Result<Self> {
        let transport = HttpTransport::new(&config)?;
        Self::new(config, Box::new(transport), num_levels)
    }
}

impl DecisionBackend for LlmBackend {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn decide(
        &mut self,
        _state: f64,
        _selection: &SelectionResult,
        prompt: &PromptDocument,
    ) -> Result<Decision> {
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.transport.complete(&self.config, &prompt.text) {
                Ok(reply) => {
                    let parsed = parse_reply(&reply, self.num_levels);
                    match parsed.action {
                        Some(action) => {
                            return Ok(Decision {
                                action,
                                retry_count: attempt,
                                parse_confidence: Some(parsed.confidence),
                                raw_reply: Some(reply),
                            });
                        }
                        None => {
                            last_error = format!("unparseable reply: {reply:.80}");
                        }
                    }
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(Error::Backend(format!(
            "llm backend exhausted {} retries: {last_error}",
            self.config.max_retries
        )))
    }
}
