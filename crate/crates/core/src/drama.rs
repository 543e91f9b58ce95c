//! Trigger selection and firing.
//!
//! After each dialogue line the drama manager walks the triggers in authored
//! order. Triggers that fail a cheap gate (inactive, ordering constraints,
//! cooldown, fallback clock) are skipped without touching the model. The
//! rest are asked about one at a time, and the first YES fires. At most one
//! trigger fires per dialogue line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionBackend, GenerationParams};
use crate::prompt::{build_trigger_check_prompt, parse_yes_no};
use crate::story::{ScriptLine, StoryDefinition, Trigger, TriggerId, TriggerType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerRuntime {
    pub trigger_id: TriggerId,
    pub next_action_index: usize,
    pub active: bool,
    pub fire_count: u32,
    pub last_fired_turn: Option<u64>,
}

impl TriggerRuntime {
    pub fn new(trigger: &Trigger) -> Self {
        TriggerRuntime {
            trigger_id: trigger.id.clone(),
            next_action_index: 0,
            active: true,
            fire_count: 0,
            last_fired_turn: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiringEvent {
    pub turn: u64,
    pub trigger_id: TriggerId,
    pub action_index: usize,
    pub action: String,
    /// Position of the injected stage action in the transcript.
    pub line_index: usize,
    pub ended_session: bool,
}

impl FiringEvent {
    pub fn injected(&self) -> ScriptLine {
        ScriptLine::injected_action(&self.action, self.trigger_id.clone(), self.action_index)
    }
}

/// Consecutive dialogue lines since any trigger last fired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackClock {
    pub lines_since_last_fire: u32,
}

impl FallbackClock {
    pub fn tick(&mut self) {
        self.lines_since_last_fire += 1;
    }

    pub fn reset(&mut self) {
        self.lines_since_last_fire = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    /// Unparseable reply, treated as NO.
    Ambiguous,
    /// Pure fallback trigger: fired on the clock with no model call.
    Clock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub trigger_id: TriggerId,
    pub answer: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evaluation {
    pub checks: Vec<ConditionCheck>,
    pub firing: Option<FiringEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("condition check for trigger `{trigger_id}` failed: {source}")]
pub struct CheckFailed {
    pub trigger_id: TriggerId,
    #[source]
    pub source: BackendError,
}

/// Per-session trigger state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramaState {
    pub runtimes: Vec<TriggerRuntime>,
    pub clock: FallbackClock,
    pub firings: Vec<FiringEvent>,
}

impl DramaState {
    pub fn new(def: &StoryDefinition) -> Self {
        DramaState {
            runtimes: def.triggers.iter().map(TriggerRuntime::new).collect(),
            clock: FallbackClock::default(),
            firings: Vec::new(),
        }
    }

    pub fn runtime(&self, id: &TriggerId) -> Option<&TriggerRuntime> {
        self.runtimes.iter().find(|r| &r.trigger_id == id)
    }

    /// Records that a dialogue line was appended.
    pub fn on_dialogue_line(&mut self) {
        self.clock.tick();
    }

    /// Gate checks that need no model call. `turn` is the dialogue-line
    /// count including the line just appended.
    pub fn cheap_gates(&self, def: &StoryDefinition, index: usize, turn: u64) -> bool {
        let trigger = &def.triggers[index];
        let runtime = &self.runtimes[index];
        if !runtime.active {
            return false;
        }
        let fired = |id: &TriggerId| self.runtime(id).is_some_and(|r| r.fire_count > 0);
        if !trigger.requires_fired.iter().all(fired) {
            return false;
        }
        if trigger.requires_not_fired.iter().any(fired) {
            return false;
        }
        if let Some(last) = runtime.last_fired_turn {
            if turn.saturating_sub(last) <= u64::from(trigger.cooldown_turns) {
                return false;
            }
        }
        if let Some(k) = trigger.fallback_k {
            if self.clock.lines_since_last_fire < k {
                return false;
            }
        }
        true
    }

    /// Runs one drama-manager pass and fires the first trigger whose
    /// condition holds. On error nothing is mutated.
    pub fn evaluate(
        &mut self,
        def: &StoryDefinition,
        lines: &mut Vec<ScriptLine>,
        turn: u64,
        backend: &dyn CompletionBackend,
        params: &GenerationParams,
    ) -> Result<Evaluation, CheckFailed> {
        let mut evaluation = Evaluation::default();
        for (index, trigger) in def.triggers.iter().enumerate() {
            if !self.cheap_gates(def, index, turn) {
                continue;
            }
            if trigger.is_pure_fallback() {
                evaluation.checks.push(ConditionCheck {
                    trigger_id: trigger.id.clone(),
                    answer: Answer::Clock,
                    raw: None,
                });
                evaluation.firing = Some(self.fire(def, index, lines, turn));
                break;
            }
            let prompt = build_trigger_check_prompt(def, lines, trigger);
            let raw = backend
                .complete(prompt.as_str(), params)
                .map_err(|source| CheckFailed {
                    trigger_id: trigger.id.clone(),
                    source,
                })?;
            let answer = match parse_yes_no(&raw) {
                Ok(true) => Answer::Yes,
                Ok(false) => Answer::No,
                Err(_) => Answer::Ambiguous,
            };
            evaluation.checks.push(ConditionCheck {
                trigger_id: trigger.id.clone(),
                answer,
                raw: (answer == Answer::Ambiguous).then_some(raw),
            });
            if answer == Answer::Yes {
                evaluation.firing = Some(self.fire(def, index, lines, turn));
                break;
            }
        }
        Ok(evaluation)
    }

    /// Injects the trigger's next action and updates its runtime.
    pub fn fire(
        &mut self,
        def: &StoryDefinition,
        index: usize,
        lines: &mut Vec<ScriptLine>,
        turn: u64,
    ) -> FiringEvent {
        let trigger = &def.triggers[index];
        let runtime = &mut self.runtimes[index];
        let action_index = runtime.next_action_index;
        let event = FiringEvent {
            turn,
            trigger_id: trigger.id.clone(),
            action_index,
            action: trigger.actions[action_index].clone(),
            line_index: lines.len(),
            ended_session: trigger.trigger_type == TriggerType::Ending,
        };
        lines.push(event.injected());

        runtime.next_action_index += 1;
        if trigger.repeatable {
            runtime.next_action_index %= trigger.actions.len();
        } else if runtime.next_action_index >= trigger.actions.len() {
            runtime.active = false;
        }
        runtime.fire_count += 1;
        runtime.last_fired_turn = Some(turn);
        self.clock.reset();
        self.firings.push(event.clone());
        event
    }
}
