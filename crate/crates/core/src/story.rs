//! Authored story definitions and the play-script line format.
//!
//! A story is a world setting, a cast, and an ordered trigger list. Trigger
//! order is priority: the drama manager checks earlier triggers first.
//! [`render_script`] produces the canonical script text used by prompts,
//! transcripts and `.txt` exports.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TriggerId(String);

impl TriggerId {
    pub fn new(id: impl Into<String>) -> Self {
        TriggerId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Identifier given to a trigger whose document omits `id`.
    pub fn for_index(index: usize) -> Self {
        TriggerId(format!("trigger-{index}"))
    }
}

impl fmt::Display for TriggerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TriggerId {
    fn from(s: &str) -> Self {
        TriggerId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Character {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub behavior_prompt: String,
}

impl Character {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        behavior_prompt: impl Into<String>,
    ) -> Self {
        Character {
            name: name.into(),
            description: description.into(),
            behavior_prompt: behavior_prompt.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TriggerType {
    #[default]
    Basic,
    /// Firing halts the session.
    Ending,
}

impl TriggerType {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerType::Basic => "basic",
            TriggerType::Ending => "ending",
        }
    }
}

impl Serialize for TriggerType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TriggerType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        match raw.to_ascii_lowercase().as_str() {
            "basic" => Ok(TriggerType::Basic),
            "ending" => Ok(TriggerType::Ending),
            _ => Err(serde::de::Error::custom(format!(
                "unknown trigger type {raw:?}, expected \"basic\" or \"ending\""
            ))),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Trigger {
    pub id: TriggerId,
    pub condition: String,
    pub actions: Vec<String>,
    #[serde(rename = "type")]
    pub trigger_type: TriggerType,
    #[serde(skip_serializing_if = "is_false")]
    pub repeatable: bool,
    /// Present for fallback triggers: the number of consecutive quiet
    /// dialogue lines required before the trigger may fire.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_k: Option<u32>,
    #[serde(skip_serializing_if = "is_zero")]
    pub cooldown_turns: u32,
    #[serde(skip_serializing_if = "BTreeSet::is_empty")]
    pub requires_fired: BTreeSet<TriggerId>,
    #[serde(skip_serializing_if = "BTreeSet::is_empty")]
    pub requires_not_fired: BTreeSet<TriggerId>,
}

impl Trigger {
    /// A non-repeatable basic trigger with no gates.
    pub fn basic(id: impl Into<String>, condition: impl Into<String>, actions: &[&str]) -> Self {
        Trigger {
            id: TriggerId::new(id),
            condition: condition.into(),
            actions: actions.iter().map(|a| a.to_string()).collect(),
            trigger_type: TriggerType::Basic,
            repeatable: false,
            fallback_k: None,
            cooldown_turns: 0,
            requires_fired: BTreeSet::new(),
            requires_not_fired: BTreeSet::new(),
        }
    }

    pub fn ending(id: impl Into<String>, condition: impl Into<String>, actions: &[&str]) -> Self {
        Trigger {
            trigger_type: TriggerType::Ending,
            ..Trigger::basic(id, condition, actions)
        }
    }

    pub fn is_fallback(&self) -> bool {
        self.fallback_k.is_some()
    }

    /// A fallback trigger without a condition fires on the clock alone.
    pub fn is_pure_fallback(&self) -> bool {
        self.fallback_k.is_some() && self.condition.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoryDefinition {
    pub title: String,
    pub world_setting: String,
    pub characters: Vec<Character>,
    pub triggers: Vec<Trigger>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub player_character: Option<String>,
}

impl StoryDefinition {
    pub fn character(&self, name: &str) -> Option<&Character> {
        self.characters.iter().find(|c| c.name == name)
    }

    pub fn trigger_index(&self, id: &TriggerId) -> Option<usize> {
        self.triggers.iter().position(|t| &t.id == id)
    }

    pub fn is_player(&self, name: &str) -> bool {
        self.player_character.as_deref() == Some(name)
    }

    /// Checks every structural invariant. Parsing calls this; stories built
    /// in code should call it before being handed to the engine.
    pub fn check(&self) -> Result<(), StoryError> {
        if self.characters.is_empty() {
            return Err(StoryError::NoCharacters);
        }
        let mut names = HashSet::new();
        for (i, c) in self.characters.iter().enumerate() {
            check_character_name(&c.name).map_err(|reason| StoryError::InvalidCharacterName {
                path: format!("characters[{i}].name"),
                name: c.name.clone(),
                reason,
            })?;
            if !names.insert(c.name.as_str()) {
                return Err(StoryError::DuplicateCharacter(c.name.clone()));
            }
        }
        if let Some(player) = &self.player_character {
            if !names.contains(player.as_str()) {
                return Err(StoryError::UnknownPlayerCharacter(player.clone()));
            }
        }

        let mut ids = HashSet::new();
        for t in &self.triggers {
            if !ids.insert(&t.id) {
                return Err(StoryError::DuplicateTriggerId(t.id.clone()));
            }
        }
        for t in &self.triggers {
            if t.actions.is_empty() {
                return Err(StoryError::NoActions(t.id.clone()));
            }
            for (a, action) in t.actions.iter().enumerate() {
                if let Err(reason) = check_line_text(action) {
                    return Err(StoryError::InvalidAction {
                        trigger: t.id.clone(),
                        index: a,
                        reason,
                    });
                }
            }
            if t.condition.contains(['\n', '\r']) {
                return Err(StoryError::MultilineCondition(t.id.clone()));
            }
            if t.fallback_k == Some(0) {
                return Err(StoryError::ZeroFallback(t.id.clone()));
            }
            if t.condition.trim().is_empty() && t.fallback_k.is_none() {
                return Err(StoryError::NoFiringCriterion(t.id.clone()));
            }
            if t.requires_fired.contains(&t.id) || t.requires_not_fired.contains(&t.id) {
                return Err(StoryError::SelfReference(t.id.clone()));
            }
            if let Some(both) = t.requires_fired.intersection(&t.requires_not_fired).next() {
                return Err(StoryError::ContradictoryGates {
                    trigger: t.id.clone(),
                    other: both.clone(),
                });
            }
            for r in t.requires_fired.iter().chain(&t.requires_not_fired) {
                if !ids.contains(r) {
                    return Err(StoryError::UnknownTriggerRef {
                        trigger: t.id.clone(),
                        reference: r.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("story definitions always serialize")
    }
}

pub(crate) fn check_character_name(name: &str) -> Result<(), &'static str> {
    if name.trim().is_empty() {
        Err("name is empty")
    } else if name.contains(['\n', '\r']) {
        Err("name contains a line break")
    } else if name.contains(':') {
        Err("name contains ':'")
    } else if name.trim() != name {
        Err("name has leading or trailing whitespace")
    } else if name.starts_with('*') {
        Err("name starts with '*'")
    } else {
        Ok(())
    }
}

/// Script line text: non-empty after trimming and a single physical line.
pub(crate) fn check_line_text(text: &str) -> Result<(), &'static str> {
    if text.trim().is_empty() {
        Err("text is empty")
    } else if text.contains(['\n', '\r']) {
        Err("text contains a line break")
    } else {
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StoryError {
    #[error("malformed story document: {0}")]
    Malformed(#[source] serde_json::Error),
    #[error("schema violation at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("story has no characters")]
    NoCharacters,
    #[error("invalid character name {name:?} at {path}: {reason}")]
    InvalidCharacterName {
        path: String,
        name: String,
        reason: &'static str,
    },
    #[error("duplicate character name {0:?}")]
    DuplicateCharacter(String),
    #[error("player_character {0:?} is not in the cast")]
    UnknownPlayerCharacter(String),
    #[error("duplicate trigger id `{0}`")]
    DuplicateTriggerId(TriggerId),
    #[error("trigger `{0}` has no actions")]
    NoActions(TriggerId),
    #[error("trigger `{trigger}` action {index}: {reason}")]
    InvalidAction {
        trigger: TriggerId,
        index: usize,
        reason: &'static str,
    },
    #[error("trigger `{0}` condition must be a single line")]
    MultilineCondition(TriggerId),
    #[error("trigger `{0}` has fallback_k = 0; it must be at least 1")]
    ZeroFallback(TriggerId),
    #[error("trigger `{0}` has an empty condition and no fallback_k, so it can never fire")]
    NoFiringCriterion(TriggerId),
    #[error("trigger `{0}` gates on itself")]
    SelfReference(TriggerId),
    #[error("trigger `{trigger}` both requires and forbids `{other}` having fired")]
    ContradictoryGates {
        trigger: TriggerId,
        other: TriggerId,
    },
    #[error("trigger `{trigger}` references unknown trigger `{reference}`")]
    UnknownTriggerRef {
        trigger: TriggerId,
        reference: TriggerId,
    },
}

// On-disk document shape. Optional fields get their defaults here so the
// domain types never carry "unset" states.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StoryDocument {
    #[serde(default)]
    title: String,
    world_setting: String,
    characters: Vec<Character>,
    #[serde(default)]
    triggers: Vec<TriggerDocument>,
    #[serde(default)]
    player_character: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TriggerDocument {
    #[serde(default)]
    id: Option<TriggerId>,
    #[serde(default)]
    condition: String,
    actions: Vec<String>,
    #[serde(rename = "type", default)]
    trigger_type: TriggerType,
    #[serde(default)]
    repeatable: bool,
    #[serde(default)]
    fallback_k: Option<u32>,
    #[serde(default)]
    cooldown_turns: u32,
    #[serde(default)]
    requires_fired: BTreeSet<TriggerId>,
    #[serde(default)]
    requires_not_fired: BTreeSet<TriggerId>,
}

impl From<StoryDocument> for StoryDefinition {
    fn from(doc: StoryDocument) -> Self {
        let triggers = doc
            .triggers
            .into_iter()
            .enumerate()
            .map(|(i, t)| Trigger {
                id: t.id.unwrap_or_else(|| TriggerId::for_index(i)),
                condition: t.condition,
                actions: t.actions,
                trigger_type: t.trigger_type,
                repeatable: t.repeatable,
                fallback_k: t.fallback_k,
                cooldown_turns: t.cooldown_turns,
                requires_fired: t.requires_fired,
                requires_not_fired: t.requires_not_fired,
            })
            .collect();
        StoryDefinition {
            title: doc.title,
            world_setting: doc.world_setting,
            characters: doc.characters,
            triggers,
            player_character: doc.player_character,
        }
    }
}

impl<'de> Deserialize<'de> for StoryDefinition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let def = StoryDefinition::from(StoryDocument::deserialize(deserializer)?);
        def.check().map_err(serde::de::Error::custom)?;
        Ok(def)
    }
}

/// Parses and validates a story document.
pub fn parse_story_definition(document: &str) -> Result<StoryDefinition, StoryError> {
    let value: serde_json::Value = serde_json::from_str(document).map_err(StoryError::Malformed)?;
    parse_story_value(value)
}

pub fn parse_story_value(value: serde_json::Value) -> Result<StoryDefinition, StoryError> {
    let doc: StoryDocument = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        StoryError::Schema {
            path,
            reason: e.into_inner().to_string(),
        }
    })?;
    let def = StoryDefinition::from(doc);
    def.check()?;
    Ok(def)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// Gated on triggers that can never all fire first.
    UnfireableTrigger {
        trigger: TriggerId,
        cycle: bool,
    },
    /// Gated on an ending trigger having fired, which halts the session first.
    GatedOnEnding {
        trigger: TriggerId,
        ending: TriggerId,
    },
    /// Only the first action of an ending trigger can be injected.
    UnreachableEndingActions {
        trigger: TriggerId,
        actions: usize,
    },
    NoPlayerCharacter,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::UnfireableTrigger {
                trigger,
                cycle: true,
            } => write!(
                f,
                "trigger `{trigger}` is mutually gated, unfireable: its requires_fired chain loops back on itself"
            ),
            Warning::UnfireableTrigger {
                trigger,
                cycle: false,
            } => write!(
                f,
                "trigger `{trigger}` is unfireable: it requires a trigger that can never fire"
            ),
            Warning::GatedOnEnding { trigger, ending } => write!(
                f,
                "trigger `{trigger}` requires ending trigger `{ending}` to have fired, but the session halts when it does"
            ),
            Warning::UnreachableEndingActions { trigger, actions } => write!(
                f,
                "ending trigger `{trigger}` has {actions} actions; actions beyond first unreachable"
            ),
            Warning::NoPlayerCharacter => {
                write!(f, "player_character is unset; the story only runs autonomously")
            }
        }
    }
}

/// Non-fatal problems in a story that already passed [`StoryDefinition::check`].
pub fn validate_story(def: &StoryDefinition) -> Vec<Warning> {
    let mut warnings = Vec::new();
    let by_id: HashMap<&TriggerId, &Trigger> = def.triggers.iter().map(|t| (&t.id, t)).collect();

    // Least fixed point of "could fire at some point": a trigger qualifies
    // once every trigger it requires qualifies and none of them is an ending.
    let mut fireable: HashSet<&TriggerId> = HashSet::new();
    loop {
        let before = fireable.len();
        for t in &def.triggers {
            if fireable.contains(&t.id) {
                continue;
            }
            let ready = t
                .requires_fired
                .iter()
                .all(|r| fireable.contains(r) && by_id[r].trigger_type != TriggerType::Ending);
            if ready {
                fireable.insert(&t.id);
            }
        }
        if fireable.len() == before {
            break;
        }
    }

    for t in &def.triggers {
        if fireable.contains(&t.id) {
            continue;
        }
        if let Some(ending) = t
            .requires_fired
            .iter()
            .find(|r| by_id[r].trigger_type == TriggerType::Ending)
        {
            warnings.push(Warning::GatedOnEnding {
                trigger: t.id.clone(),
                ending: ending.clone(),
            });
        } else {
            warnings.push(Warning::UnfireableTrigger {
                trigger: t.id.clone(),
                cycle: on_requires_cycle(&t.id, &by_id),
            });
        }
    }

    for t in &def.triggers {
        if t.trigger_type == TriggerType::Ending && t.actions.len() > 1 {
            warnings.push(Warning::UnreachableEndingActions {
                trigger: t.id.clone(),
                actions: t.actions.len(),
            });
        }
    }

    if def.player_character.is_none() {
        warnings.push(Warning::NoPlayerCharacter);
    }
    warnings
}

fn on_requires_cycle(start: &TriggerId, by_id: &HashMap<&TriggerId, &Trigger>) -> bool {
    let mut seen = HashSet::new();
    let mut stack: Vec<&TriggerId> = by_id[start].requires_fired.iter().collect();
    while let Some(id) = stack.pop() {
        if id == start {
            return true;
        }
        if seen.insert(id) {
            stack.extend(by_id[id].requires_fired.iter());
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum ActionSource {
    Model,
    Trigger {
        trigger_id: TriggerId,
        action_index: usize,
    },
}

/// One line of the play script after the world-setting header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptLine {
    Dialogue { speaker: String, text: String },
    StageAction { text: String, source: ActionSource },
}

impl ScriptLine {
    pub fn dialogue(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        ScriptLine::Dialogue {
            speaker: speaker.into(),
            text: text.into(),
        }
    }

    pub fn generated_action(text: impl Into<String>) -> Self {
        ScriptLine::StageAction {
            text: text.into(),
            source: ActionSource::Model,
        }
    }

    pub fn injected_action(
        text: impl Into<String>,
        trigger_id: TriggerId,
        action_index: usize,
    ) -> Self {
        ScriptLine::StageAction {
            text: text.into(),
            source: ActionSource::Trigger {
                trigger_id,
                action_index,
            },
        }
    }

    pub fn is_dialogue(&self) -> bool {
        matches!(self, ScriptLine::Dialogue { .. })
    }

    pub fn is_injected(&self) -> bool {
        matches!(
            self,
            ScriptLine::StageAction {
                source: ActionSource::Trigger { .. },
                ..
            }
        )
    }

    pub fn text(&self) -> &str {
        match self {
            ScriptLine::Dialogue { text, .. } | ScriptLine::StageAction { text, .. } => text,
        }
    }

    pub fn speaker(&self) -> Option<&str> {
        match self {
            ScriptLine::Dialogue { speaker, .. } => Some(speaker),
            ScriptLine::StageAction { .. } => None,
        }
    }

    /// The line as it appears in the script: `Name: text` or `*text*`.
    pub fn render(&self) -> String {
        match self {
            ScriptLine::Dialogue { speaker, text } => format!("{speaker}: {text}"),
            ScriptLine::StageAction { text, .. } => format!("*{text}*"),
        }
    }
}

/// Renders the script: the starred world setting, then one line per entry,
/// joined by `\n` with no trailing newline.
pub fn render_script(world_setting: &str, lines: &[ScriptLine]) -> String {
    let mut out = format!("*{world_setting}*");
    for line in lines {
        out.push('\n');
        out.push_str(&line.render());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptParseError {
    #[error("script is empty")]
    Empty,
    #[error("first line is not a starred world setting")]
    MissingWorldSetting,
    #[error("line {0} is neither `*action*` nor `Name: text`")]
    Unrecognized(usize),
}

/// Inverse of [`render_script`]. Stage actions come back as model-sourced
/// since the text form does not record provenance.
pub fn parse_script(script: &str) -> Result<(String, Vec<ScriptLine>), ScriptParseError> {
    let mut rows = script.split('\n');
    let head = rows.next().ok_or(ScriptParseError::Empty)?;
    let setting = unstar(head).ok_or(ScriptParseError::MissingWorldSetting)?;
    let mut lines = Vec::new();
    for (i, row) in rows.enumerate() {
        if let Some(text) = unstar(row) {
            lines.push(ScriptLine::generated_action(text));
        } else if let Some((speaker, text)) = row.split_once(": ") {
            lines.push(ScriptLine::dialogue(speaker, text));
        } else {
            return Err(ScriptParseError::Unrecognized(i + 1));
        }
    }
    Ok((setting.to_string(), lines))
}

fn unstar(row: &str) -> Option<&str> {
    if row.len() >= 2 && row.starts_with('*') && row.ends_with('*') {
        Some(&row[1..row.len() - 1])
    } else {
        None
    }
}
