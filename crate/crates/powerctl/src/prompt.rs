//! Prompt rendering and reply parsing.
//!
//! [`render`] deterministically turns the current state and the selected
//! good/bad examples into the natural-language decision prompt; the wording
//! tracks the state mode ("base station user number" vs "average user
//! distance"). [`parse_reply`] extracts the chosen power level from free-text
//! model output; the rationale is kept verbatim for the transcript. Parsing
//! never trusts any numeric reasoning inside the reply, only the final level
//! token.

use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;

use crate::env::{ActionLevel, StateMode};
use crate::pool::{Example, SelectionResult};

/// Rendered prompt plus the inputs it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptDocument {
    pub text: String,
    pub state_value: f64,
    pub num_good: usize,
    pub num_bad: usize,
}

/// How confidently a reply was parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseConfidence {
    /// An explicit `level N` token was found.
    Exact,
    /// Only a bare in-range integer on the final line.
    Fallback,
    /// No usable decision in the reply.
    Failed,
}

impl std::fmt::Display for ParseConfidence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParseConfidence::Exact => "exact",
            ParseConfidence::Fallback => "fallback",
            ParseConfidence::Failed => "failed",
        };
        f.write_str(s)
    }
}

/// Outcome of parsing one reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub action: Option<ActionLevel>,
    /// The reply verbatim, kept for the explainability transcript.
    pub rationale_text: String,
    pub confidence: ParseConfidence,
}

fn state_noun(mode: StateMode) -> &'static str {
    match mode {
        StateMode::Discrete => "Base station user number",
        StateMode::Continuous => "Average user distance to the Base station",
    }
}

fn example_line(label: &str, e: &Example, mode: StateMode, verdict: &str) -> String {
    format!(
        "{label} {}: {}: {:.2}, your selected power level: {}, reward: {:.1}, evaluation = {verdict}.",
        e.episode,
        state_noun(mode),
        e.state,
        e.action,
        e.reward,
    )
}

/// Enumerates the level names for the rule sentence:
/// `"level 1", "level 2", "level 3", and "level 4"`.
fn level_list(num_levels: u32) -> String {
    let names: Vec<String> = (1..=num_levels).map(|l| format!("\"level {l}\"")).collect();
    match names.len() {
        1 => names.into_iter().next().unwrap(),
        2 => format!("{} and {}", names[0], names[1]),
        _ => {
            let (last, rest) = names.split_last().unwrap();
            format!("{}, and {}", rest.join(", "), last)
        }
    }
}

/// Renders the decision prompt. Identical inputs yield identical bytes.
pub fn render(
    state_value: f64,
    mode: StateMode,
    selection: &SelectionResult,
    num_levels: u32,
) -> PromptDocument {
    let mut text = String::new();
    let _ = writeln!(text, "You have a decision-making task for Base Station power control.");
    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "Task goal: You need to select between {num_levels} power levels from 1 to {num_levels}."
    );
    let _ = writeln!(text);
    let descriptor = match mode {
        StateMode::Discrete => "base station user number",
        StateMode::Continuous => "average user distance",
    };
    let _ = writeln!(
        text,
        "Task description: You have to consider the specific {descriptor} of each case."
    );
    if !selection.recommended.is_empty() {
        let _ = writeln!(text);
        let _ = writeln!(text, "Following are some good examples I recommend:");
        for e in &selection.recommended {
            let _ = writeln!(text);
            let _ = writeln!(text, "{}", example_line("Example", e, mode, "good"));
        }
    }
    if !selection.inadvisable.is_empty() {
        let _ = writeln!(text);
        let _ = writeln!(text, "Following are some bad examples I do not recommend:");
        for e in &selection.inadvisable {
            let _ = writeln!(text);
            let _ = writeln!(text, "{}", example_line("Example", e, mode, "bad"));
        }
    }
    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "Now I will give you a new condition to solve: {}: {:.2}.",
        state_noun(mode),
        state_value
    );
    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "Please select from {} based on the above examples. Please explain the reasons for your selection.",
        level_list(num_levels)
    );
    PromptDocument {
        text,
        state_value,
        num_good: selection.recommended.len(),
        num_bad: selection.inadvisable.len(),
    }
}

fn level_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // "level 1", "level-2", case-insensitive; wrapping quotes or asterisks
    // are outside the token. Deliberately does not match "level: 1" so that
    // echoed example lines are ignored, nor "levels".
    RE.get_or_init(|| Regex::new(r"(?i)\blevel[ -]([0-9]+)\b").unwrap())
}

fn bare_int_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([0-9]+)\b").unwrap())
}

/// Extracts the power-level decision from a free-text reply.
///
/// Exact: the last in-range `level N` token in the text (replies reason over
/// several levels before concluding, so the final mention is the decision).
/// Fallback: the last bare in-range integer on the final non-empty line.
pub fn parse_reply(text: &str, num_levels: u32) -> ParsedReply {
    let mut last_level: Option<u32> = None;
    for cap in level_regex().captures_iter(text) {
        if let Ok(n) = cap[1].parse::<u32>() {
            if (1..=num_levels).contains(&n) {
                last_level = Some(n);
            }
        }
    }
    if let Some(n) = last_level {
        return ParsedReply {
            action: Some(ActionLevel::new(n, num_levels).expect("checked range")),
            rationale_text: text.to_string(),
            confidence: ParseConfidence::Exact,
        };
    }

    if let Some(final_line) = text.lines().rev().find(|l| !l.trim().is_empty()) {
        let mut fallback: Option<u32> = None;
        for cap in bare_int_regex().captures_iter(final_line) {
            if let Ok(n) = cap[1].parse::<u32>() {
                if (1..=num_levels).contains(&n) {
                    fallback = Some(n);
                }
            }
        }
        if let Some(n) = fallback {
            return ParsedReply {
                action: Some(ActionLevel::new(n, num_levels).expect("checked range")),
                rationale_text: text.to_string(),
                confidence: ParseConfidence::Fallback,
            };
        }
    }

    ParsedReply {
        action: None,
        rationale_text: text.to_string(),
        confidence: ParseConfidence::Failed,
    }
}
