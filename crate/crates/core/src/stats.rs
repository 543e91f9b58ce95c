//! Per-run reports and mean ± std aggregation over many runs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::drama::FiringEvent;
use crate::engine::{EngineEvent, Session, SessionState, LENGTH_CAP_REASON};
use crate::story::{ScriptLine, StoryDefinition, TriggerId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum EndedBy {
    Ending {
        trigger_id: TriggerId,
    },
    /// Turn budget or length cap reached.
    Cap,
    /// The scripted backend ran out of responses.
    Exhaustion,
    Errored {
        reason: String,
    },
    /// Interactive run stopped while waiting for the player.
    AwaitingPlayer,
}

impl fmt::Display for EndedBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndedBy::Ending { trigger_id } => write!(f, "ending trigger `{trigger_id}`"),
            EndedBy::Cap => f.write_str("cap"),
            EndedBy::Exhaustion => f.write_str("exhaustion"),
            EndedBy::Errored { reason } => write!(f, "error: {reason}"),
            EndedBy::AwaitingPlayer => f.write_str("awaiting player"),
        }
    }
}

/// Counts for one playthrough.
///
/// `simulation_length` is every script line after the world setting;
/// `action_count` counts trigger-injected stage actions only, while
/// stage actions the model wrote itself are in `generated_action_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub session_id: String,
    pub characters: usize,
    pub triggers: usize,
    pub actions_per_trigger: Option<f64>,
    pub simulation_length: usize,
    pub dialogue_count: usize,
    pub action_count: usize,
    pub generated_action_count: usize,
    pub firings_per_trigger: BTreeMap<TriggerId, u32>,
    pub ended_by: EndedBy,
}

impl RunReport {
    pub fn from_session(session: &Session) -> Self {
        RunReport::from_parts(
            &session.id,
            &session.definition,
            session.lines(),
            session.firings(),
            session.state(),
            session.events(),
        )
    }

    pub fn from_parts(
        session_id: &str,
        def: &StoryDefinition,
        lines: &[ScriptLine],
        firings: &[FiringEvent],
        state: &SessionState,
        events: &[EngineEvent],
    ) -> Self {
        let dialogue_count = lines.iter().filter(|l| l.is_dialogue()).count();
        let action_count = lines.iter().filter(|l| l.is_injected()).count();
        let mut firings_per_trigger: BTreeMap<TriggerId, u32> =
            def.triggers.iter().map(|t| (t.id.clone(), 0)).collect();
        for f in firings {
            *firings_per_trigger.entry(f.trigger_id.clone()).or_default() += 1;
        }
        let triggers = def.triggers.len();
        let actions_per_trigger = (triggers > 0).then(|| {
            def.triggers.iter().map(|t| t.actions.len()).sum::<usize>() as f64 / triggers as f64
        });
        RunReport {
            session_id: session_id.to_string(),
            characters: def.characters.len(),
            triggers,
            actions_per_trigger,
            simulation_length: lines.len(),
            dialogue_count,
            action_count,
            generated_action_count: lines.len() - dialogue_count - action_count,
            firings_per_trigger,
            ended_by: ended_by(state, firings, events),
        }
    }
}

fn ended_by(state: &SessionState, firings: &[FiringEvent], events: &[EngineEvent]) -> EndedBy {
    match state {
        SessionState::Ended => match firings.last() {
            Some(f) => EndedBy::Ending {
                trigger_id: f.trigger_id.clone(),
            },
            None => EndedBy::Errored {
                reason: "ended without an ending trigger".into(),
            },
        },
        SessionState::Errored(reason) if reason == LENGTH_CAP_REASON => EndedBy::Cap,
        SessionState::Errored(reason) => {
            let exhausted = matches!(
                events.last(),
                Some(
                    EngineEvent::BackendFailed {
                        error: BackendError::QueueExhausted(_),
                        ..
                    } | EngineEvent::TriggerCheckFailed {
                        error: BackendError::QueueExhausted(_),
                        ..
                    }
                )
            );
            if exhausted {
                EndedBy::Exhaustion
            } else {
                EndedBy::Errored {
                    reason: reason.clone(),
                }
            }
        }
        SessionState::AwaitingPlayer => EndedBy::AwaitingPlayer,
        SessionState::Running | SessionState::Paused => EndedBy::Cap,
    }
}

/// Mean and population standard deviation, shown as `m ± s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        // Sorted summation keeps the result independent of input order.
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = sorted.iter().map(|v| (v - mean).powi(2)).collect();
        sq.sort_by(f64::total_cmp);
        let std = (sq.iter().sum::<f64>() / n).sqrt();
        Some(MeanStd {
            mean,
            std,
            n: sorted.len(),
        })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub runs: usize,
    pub characters: MeanStd,
    pub triggers: MeanStd,
    /// Absent when no story in the set has triggers.
    pub actions_per_trigger: Option<MeanStd>,
    pub simulation_length: MeanStd,
    pub dialogues: MeanStd,
    pub actions: MeanStd,
}

impl AggregateStats {
    pub fn from_reports(reports: &[RunReport]) -> Option<AggregateStats> {
        let col =
            |f: fn(&RunReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        let per_trigger: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.actions_per_trigger)
            .collect();
        Some(AggregateStats {
            runs: reports.len(),
            characters: col(|r| r.characters as f64)?,
            triggers: col(|r| r.triggers as f64)?,
            actions_per_trigger: MeanStd::of(&per_trigger),
            simulation_length: col(|r| r.simulation_length as f64)?,
            dialogues: col(|r| r.dialogue_count as f64)?,
            actions: col(|r| r.action_count as f64)?,
        })
    }

    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("Characters", self.characters.to_string()),
            ("Triggers", self.triggers.to_string()),
            (
                "Actions per trigger",
                self.actions_per_trigger
                    .map_or_else(|| "n/a".to_string(), |m| m.to_string()),
            ),
            ("Simulation length", self.simulation_length.to_string()),
            ("Dialogues", self.dialogues.to_string()),
            ("Actions", self.actions.to_string()),
        ]
    }
}

impl fmt::Display for AggregateStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} Mean ± std (n = {})", "Metric", self.runs)?;
        for (name, value) in self.rows() {
            writeln!(f, "{name:<20} {value}")?;
        }
        Ok(())
    }
}
