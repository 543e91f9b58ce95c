//! The two single-text prompts sent to the model, and the parsers for what
//! comes back.
//!
//! Both prompts share one context block: the cast list followed by the
//! script so far. The simulation prompt asks for the next line wrapped in
//! `<line>` tags; the trigger-check prompt asks for a bare YES or NO about
//! one trigger condition.

use thiserror::Error;

use crate::story::{render_script, ScriptLine, StoryDefinition, Trigger};

pub const SIMULATION_HEADER: &str =
    "We're writing a story in the form of a play script. The story has these characters:";
pub const SCRIPT_HEADER: &str = "So far, the script is as follows:";
pub const SIMULATION_INSTRUCTION: &str =
    "Suggest a possible next line for the script. Wrap it in <line></line> tags.";
pub const CONDITION_INSTRUCTION: &str =
    "Decide whether the following condition has been met in the script so far:";
pub const YES_NO_INSTRUCTION: &str = "Return either the single token YES or NO, nothing else.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationPrompt(String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerCheckPrompt(String);

impl SimulationPrompt {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TriggerCheckPrompt {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Cast list and script so far, ending with the blank line that precedes
/// whichever instruction follows.
pub fn context_block(def: &StoryDefinition, lines: &[ScriptLine]) -> String {
    let mut out = String::with_capacity(256);
    out.push_str(SIMULATION_HEADER);
    out.push('\n');
    for c in &def.characters {
        out.push_str(&c.name);
        out.push_str(": ");
        out.push_str(&c.behavior_prompt);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(SCRIPT_HEADER);
    out.push('\n');
    out.push_str(&render_script(&def.world_setting, lines));
    out.push_str("\n\n");
    out
}

pub fn build_simulation_prompt(def: &StoryDefinition, lines: &[ScriptLine]) -> SimulationPrompt {
    let mut text = context_block(def, lines);
    text.push_str(SIMULATION_INSTRUCTION);
    SimulationPrompt(text)
}

pub fn build_trigger_check_prompt(
    def: &StoryDefinition,
    lines: &[ScriptLine],
    trigger: &Trigger,
) -> TriggerCheckPrompt {
    let mut text = context_block(def, lines);
    text.push_str(CONDITION_INSTRUCTION);
    text.push('\n');
    text.push_str(&trigger.condition);
    text.push_str("\n\n");
    text.push_str(YES_NO_INSTRUCTION);
    TriggerCheckPrompt(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LineParseError {
    #[error("no <line>...</line> span in response")]
    NoTagFound,
    #[error("tagged line is empty")]
    EmptyLine,
    #[error("speaker {0:?} is not in the cast")]
    UnknownSpeaker(String),
    #[error("tagged line is neither `*action*` nor `Name: text`: {0:?}")]
    MalformedLine(String),
}

const OPEN_TAG: &str = "<line>";
const CLOSE_TAG: &str = "</line>";

/// Extracts the first `<line>` span of a simulation response and parses it
/// against the cast.
pub fn parse_line_response(raw: &str, def: &StoryDefinition) -> Result<ScriptLine, LineParseError> {
    let start = raw.find(OPEN_TAG).ok_or(LineParseError::NoTagFound)? + OPEN_TAG.len();
    let len = raw[start..]
        .find(CLOSE_TAG)
        .ok_or(LineParseError::NoTagFound)?;
    let body = raw[start..start + len].trim();
    if body.is_empty() {
        return Err(LineParseError::EmptyLine);
    }
    if body.contains(['\n', '\r']) {
        return Err(LineParseError::MalformedLine(body.to_string()));
    }

    if body.len() >= 2 && body.starts_with('*') && body.ends_with('*') {
        let text = body[1..body.len() - 1].trim();
        if text.is_empty() {
            return Err(LineParseError::EmptyLine);
        }
        return Ok(ScriptLine::generated_action(text));
    }

    let (name, text) = body
        .split_once(':')
        .ok_or_else(|| LineParseError::MalformedLine(body.to_string()))?;
    let (name, text) = (name.trim(), text.trim());
    if name.is_empty() {
        return Err(LineParseError::MalformedLine(body.to_string()));
    }
    if def.character(name).is_none() {
        return Err(LineParseError::UnknownSpeaker(name.to_string()));
    }
    if text.is_empty() {
        return Err(LineParseError::EmptyLine);
    }
    Ok(ScriptLine::dialogue(name, text))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("expected YES or NO, got {0:?}")]
pub struct Ambiguous(pub String);

/// Reads a trigger-check answer. Case and trailing punctuation are
/// tolerated; anything else is ambiguous.
pub fn parse_yes_no(raw: &str) -> Result<bool, Ambiguous> {
    let token = raw
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    if token.eq_ignore_ascii_case("yes") {
        Ok(true)
    } else if token.eq_ignore_ascii_case("no") {
        Ok(false)
    } else {
        Err(Ambiguous(raw.to_string()))
    }
}
