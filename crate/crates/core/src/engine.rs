//! The turn loop.
//!
//! A [`Session`] is one playthrough of a story. Each [`Session::step`] asks
//! the model for the next script line, appends it, and runs the drama
//! manager when the line is dialogue. In interactive mode a generated line
//! for the player character is dropped and the session waits for
//! [`Session::submit_player_line`] instead.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionBackend, GenerationParams};
use crate::drama::{Answer, CheckFailed, DramaState, Evaluation, FiringEvent};
use crate::prompt::{build_simulation_prompt, parse_line_response, LineParseError};
use crate::story::{check_line_text, render_script, ScriptLine, StoryDefinition, TriggerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Interactive,
    Autonomous,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interactive" => Ok(Mode::Interactive),
            "autonomous" => Ok(Mode::Autonomous),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum SessionState {
    Running,
    AwaitingPlayer,
    Paused,
    Ended,
    Errored(String),
}

impl SessionState {
    pub fn name(&self) -> &'static str {
        match self {
            SessionState::Running => "running",
            SessionState::AwaitingPlayer => "awaiting_player",
            SessionState::Paused => "paused",
            SessionState::Ended => "ended",
            SessionState::Errored(_) => "errored",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionState::Errored(reason) => write!(f, "errored ({reason})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Extra attempts after a failed or unparseable simulation response.
    pub max_retries: u32,
    /// Total script lines after which the session stops as errored.
    pub length_cap: usize,
    pub simulation: GenerationParams,
    pub trigger_check: GenerationParams,
}

impl EngineConfig {
    pub fn with_model(model: &str) -> Self {
        EngineConfig {
            max_retries: 3,
            length_cap: 200,
            simulation: GenerationParams::simulation(model),
            trigger_check: GenerationParams::trigger_check(model),
        }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::with_model(crate::backend::DEFAULT_MODEL)
    }
}

pub const LENGTH_CAP_REASON: &str = "length cap";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EngineEvent {
    LineRejected {
        turn: u64,
        attempt: u32,
        reason: String,
        raw: String,
    },
    BackendFailed {
        turn: u64,
        attempt: u32,
        error: BackendError,
    },
    PlayerLineDiscarded {
        turn: u64,
        text: String,
    },
    PlayerLine {
        turn: u64,
        text: String,
    },
    AmbiguousAnswer {
        turn: u64,
        trigger_id: TriggerId,
        raw: String,
    },
    TriggerCheckFailed {
        turn: u64,
        trigger_id: TriggerId,
        error: BackendError,
    },
    Fired {
        turn: u64,
        trigger_id: TriggerId,
        action_index: usize,
    },
    Ended {
        turn: u64,
        trigger_id: TriggerId,
    },
    LengthCapReached {
        lines: usize,
    },
    Paused,
    Resumed,
    Reset {
        line_count: usize,
    },
}

/// The mutable part of a session; snapshots copy exactly this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub lines: Vec<ScriptLine>,
    pub drama: DramaState,
    pub turn: u64,
    pub state: SessionState,
    pub events: Vec<EngineEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub line_count: usize,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub appended: Vec<ScriptLine>,
    pub firing: Option<FiringEvent>,
    pub new_state: SessionState,
    pub awaiting_player: bool,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("session is {actual}, operation needs {expected}")]
    WrongState {
        expected: &'static str,
        actual: SessionState,
    },
    #[error("session mode is {0:?}")]
    WrongMode(Mode),
    #[error("player line is empty")]
    EmptyPlayerLine,
    #[error("player line must be a single line")]
    MultilinePlayerLine,
    #[error("story has no player character")]
    NoPlayerCharacter,
    #[error("snapshot belongs to session {0}")]
    ForeignSnapshot(String),
    #[error("model produced no usable line after {attempts} attempts: {last}")]
    Generation { attempts: u32, last: String },
    #[error(transparent)]
    TriggerCheck(#[from] CheckFailed),
}

impl EngineError {
    pub fn is_state_conflict(&self) -> bool {
        matches!(
            self,
            EngineError::WrongState { .. } | EngineError::WrongMode(_)
        )
    }

    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            EngineError::Generation { .. } | EngineError::TriggerCheck(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub definition: StoryDefinition,
    pub mode: Mode,
    pub config: EngineConfig,
    pub progress: Progress,
}

impl Session {
    pub fn new(id: impl Into<String>, definition: StoryDefinition, mode: Mode) -> Self {
        Session::with_config(id, definition, mode, EngineConfig::default())
    }

    pub fn with_config(
        id: impl Into<String>,
        definition: StoryDefinition,
        mode: Mode,
        config: EngineConfig,
    ) -> Self {
        let drama = DramaState::new(&definition);
        Session {
            id: id.into(),
            definition,
            mode,
            config,
            progress: Progress {
                lines: Vec::new(),
                drama,
                turn: 0,
                state: SessionState::Running,
                events: Vec::new(),
            },
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.progress.state
    }

    pub fn lines(&self) -> &[ScriptLine] {
        &self.progress.lines
    }

    pub fn turn(&self) -> u64 {
        self.progress.turn
    }

    pub fn firings(&self) -> &[FiringEvent] {
        &self.progress.drama.firings
    }

    pub fn drama(&self) -> &DramaState {
        &self.progress.drama
    }

    pub fn events(&self) -> &[EngineEvent] {
        &self.progress.events
    }

    pub fn render(&self) -> String {
        render_script(&self.definition.world_setting, &self.progress.lines)
    }

    fn intercepts_player(&self) -> bool {
        self.mode == Mode::Interactive && self.definition.player_character.is_some()
    }

    fn expect_state(&self, expected: SessionState) -> Result<(), EngineError> {
        if self.progress.state == expected {
            Ok(())
        } else {
            Err(EngineError::WrongState {
                expected: expected.name(),
                actual: self.progress.state.clone(),
            })
        }
    }

    /// Generates and appends the next line, then runs the drama manager if
    /// it was dialogue.
    pub fn step(&mut self, backend: &dyn CompletionBackend) -> Result<StepOutcome, EngineError> {
        self.expect_state(SessionState::Running)?;

        let line = self.generate_line(backend)?;

        if let ScriptLine::Dialogue { speaker, text } = &line {
            if self.intercepts_player() && self.definition.is_player(speaker) {
                self.progress.events.push(EngineEvent::PlayerLineDiscarded {
                    turn: self.progress.turn,
                    text: text.clone(),
                });
                self.progress.state = SessionState::AwaitingPlayer;
                return Ok(self.outcome(Vec::new(), None));
            }
        }

        self.append(line, backend)
    }

    /// Appends the player's line while the session awaits input.
    pub fn submit_player_line(
        &mut self,
        text: &str,
        backend: &dyn CompletionBackend,
    ) -> Result<StepOutcome, EngineError> {
        self.expect_state(SessionState::AwaitingPlayer)?;
        let player = self
            .definition
            .player_character
            .clone()
            .ok_or(EngineError::NoPlayerCharacter)?;
        let text = text.trim();
        match check_line_text(text) {
            Ok(()) => {}
            Err(_) if text.is_empty() => return Err(EngineError::EmptyPlayerLine),
            Err(_) => return Err(EngineError::MultilinePlayerLine),
        }
        self.progress.events.push(EngineEvent::PlayerLine {
            turn: self.progress.turn + 1,
            text: text.to_string(),
        });
        self.progress.state = SessionState::Running;
        let before_events = self.progress.events.len() - 1;
        match self.append(ScriptLine::dialogue(player, text), backend) {
            Ok(outcome) => Ok(outcome),
            Err(e) => {
                // A failed trigger check leaves the player free to resubmit.
                self.progress.state = SessionState::AwaitingPlayer;
                self.progress.events.remove(before_events);
                Err(e)
            }
        }
    }

    /// Steps until the session leaves `Running` or `max_turns` dialogue lines
    /// have been appended by this call.
    pub fn run_autonomous(
        &mut self,
        backend: &dyn CompletionBackend,
        max_turns: u64,
    ) -> Result<(), EngineError> {
        if self.mode != Mode::Autonomous {
            return Err(EngineError::WrongMode(self.mode));
        }
        let target = self.progress.turn + max_turns.max(1);
        while self.progress.state == SessionState::Running && self.progress.turn < target {
            self.step(backend)?;
        }
        Ok(())
    }

    pub fn pause(&mut self) -> Result<(), EngineError> {
        self.expect_state(SessionState::Running)?;
        self.progress.state = SessionState::Paused;
        self.progress.events.push(EngineEvent::Paused);
        Ok(())
    }

    /// Leaves `Paused` or `Errored` and continues running.
    pub fn resume(&mut self) -> Result<(), EngineError> {
        match &self.progress.state {
            SessionState::Paused | SessionState::Errored(_) => {
                self.progress.state = SessionState::Running;
                self.progress.events.push(EngineEvent::Resumed);
                Ok(())
            }
            other => Err(EngineError::WrongState {
                expected: "paused",
                actual: other.clone(),
            }),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            session_id: self.id.clone(),
            line_count: self.progress.lines.len(),
            progress: self.progress.clone(),
        }
    }

    pub fn reset_to(&mut self, snapshot: &Snapshot) -> Result<(), EngineError> {
        if snapshot.session_id != self.id {
            return Err(EngineError::ForeignSnapshot(snapshot.session_id.clone()));
        }
        self.progress = snapshot.progress.clone();
        self.progress.events.push(EngineEvent::Reset {
            line_count: snapshot.line_count,
        });
        Ok(())
    }

    fn generate_line(
        &mut self,
        backend: &dyn CompletionBackend,
    ) -> Result<ScriptLine, EngineError> {
        let prompt = build_simulation_prompt(&self.definition, &self.progress.lines);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match backend.complete(prompt.as_str(), &self.config.simulation) {
                Ok(raw) => match parse_line_response(&raw, &self.definition) {
                    Ok(line) => return Ok(line),
                    Err(e) => {
                        last = e.to_string();
                        self.log_rejected(attempt, &e, raw);
                    }
                },
                Err(error) => {
                    last = error.to_string();
                    let transient = error.is_transient();
                    self.progress.events.push(EngineEvent::BackendFailed {
                        turn: self.progress.turn,
                        attempt,
                        error,
                    });
                    if !transient {
                        return Err(self.errored(EngineError::Generation {
                            attempts: attempt,
                            last,
                        }));
                    }
                }
            }
        }
        Err(self.errored(EngineError::Generation { attempts, last }))
    }

    fn log_rejected(&mut self, attempt: u32, error: &LineParseError, raw: String) {
        self.progress.events.push(EngineEvent::LineRejected {
            turn: self.progress.turn,
            attempt,
            reason: error.to_string(),
            raw,
        });
    }

    fn errored(&mut self, error: EngineError) -> EngineError {
        self.progress.state = SessionState::Errored(error.to_string());
        error
    }

    fn append(
        &mut self,
        line: ScriptLine,
        backend: &dyn CompletionBackend,
    ) -> Result<StepOutcome, EngineError> {
        let first_new = self.progress.lines.len();
        if !line.is_dialogue() {
            self.progress.lines.push(line);
            self.enforce_cap();
            return Ok(self.outcome(self.progress.lines[first_new..].to_vec(), None));
        }

        let rollback = (
            self.progress.lines.len(),
            self.progress.drama.clone(),
            self.progress.turn,
        );
        self.progress.lines.push(line);
        self.progress.turn += 1;
        self.progress.drama.on_dialogue_line();
        let turn = self.progress.turn;

        let evaluation = self.progress.drama.evaluate(
            &self.definition,
            &mut self.progress.lines,
            turn,
            backend,
            &self.config.trigger_check,
        );
        let Evaluation { checks, firing } = match evaluation {
            Ok(e) => e,
            Err(failed) => {
                let (len, drama, turn) = rollback;
                self.progress.lines.truncate(len);
                self.progress.drama = drama;
                self.progress.turn = turn;
                self.progress.events.push(EngineEvent::TriggerCheckFailed {
                    turn: turn + 1,
                    trigger_id: failed.trigger_id.clone(),
                    error: failed.source.clone(),
                });
                return Err(self.errored(failed.into()));
            }
        };

        for check in checks {
            if check.answer == Answer::Ambiguous {
                self.progress.events.push(EngineEvent::AmbiguousAnswer {
                    turn,
                    trigger_id: check.trigger_id,
                    raw: check.raw.unwrap_or_default(),
                });
            }
        }
        if let Some(ev) = &firing {
            self.progress.events.push(EngineEvent::Fired {
                turn,
                trigger_id: ev.trigger_id.clone(),
                action_index: ev.action_index,
            });
            if ev.ended_session {
                self.progress.state = SessionState::Ended;
                self.progress.events.push(EngineEvent::Ended {
                    turn,
                    trigger_id: ev.trigger_id.clone(),
                });
            }
        }
        self.enforce_cap();
        Ok(self.outcome(self.progress.lines[first_new..].to_vec(), firing))
    }

    fn enforce_cap(&mut self) {
        if self.progress.state == SessionState::Running
            && self.progress.lines.len() >= self.config.length_cap
        {
            self.progress.state = SessionState::Errored(LENGTH_CAP_REASON.to_string());
            self.progress.events.push(EngineEvent::LengthCapReached {
                lines: self.progress.lines.len(),
            });
        }
    }

    fn outcome(&self, appended: Vec<ScriptLine>, firing: Option<FiringEvent>) -> StepOutcome {
        StepOutcome {
            appended,
            firing,
            awaiting_player: self.progress.state == SessionState::AwaitingPlayer,
            new_state: self.progress.state.clone(),
        }
    }
}
