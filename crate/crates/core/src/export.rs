//! Transcript exports and author annotations.
//!
//! A session exports as a structured `.json` document and as a `.txt` file
//! holding exactly the rendered script.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drama::FiringEvent;
use crate::engine::{EngineEvent, Mode, Session, SessionState};
use crate::stats::RunReport;
use crate::story::{render_script, ScriptLine, StoryDefinition};

pub const EXPORT_FORMAT: &str = "dramaturge.transcript.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationTarget {
    Line(usize),
    Firing(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotationKind {
    /// Did the trigger fire at an appropriate moment?
    TriggerAccuracy {
        correct: bool,
    },
    DialogueQuality {
        good: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub session_id: String,
    pub target: AnnotationTarget,
    #[serde(flatten)]
    pub kind: AnnotationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("annotation is for session {0}")]
    WrongSession(String),
    #[error("session has no line {0}")]
    NoSuchLine(usize),
    #[error("session has no firing event {0}")]
    NoSuchFiring(usize),
    #[error("trigger accuracy annotations target firing events")]
    AccuracyNeedsFiring,
    #[error("dialogue quality annotations target dialogue lines")]
    QualityNeedsDialogue,
    #[error("firing {firing} already has a trigger accuracy annotation from this author")]
    Duplicate { firing: usize },
}

/// Checks an annotation against the session and the annotations already
/// stored for it.
pub fn check_annotation(
    session: &Session,
    existing: &[Annotation],
    annotation: &Annotation,
) -> Result<(), AnnotationError> {
    if annotation.session_id != session.id {
        return Err(AnnotationError::WrongSession(annotation.session_id.clone()));
    }
    match (annotation.kind, annotation.target) {
        (AnnotationKind::TriggerAccuracy { .. }, AnnotationTarget::Firing(i)) => {
            if i >= session.firings().len() {
                return Err(AnnotationError::NoSuchFiring(i));
            }
            let duplicate = existing.iter().any(|a| {
                a.target == annotation.target
                    && matches!(a.kind, AnnotationKind::TriggerAccuracy { .. })
                    && a.author == annotation.author
            });
            if duplicate {
                return Err(AnnotationError::Duplicate { firing: i });
            }
        }
        (AnnotationKind::TriggerAccuracy { .. }, AnnotationTarget::Line(_)) => {
            return Err(AnnotationError::AccuracyNeedsFiring)
        }
        (AnnotationKind::DialogueQuality { .. }, AnnotationTarget::Line(i)) => {
            match session.lines().get(i) {
                None => return Err(AnnotationError::NoSuchLine(i)),
                Some(line) if !line.is_dialogue() => {
                    return Err(AnnotationError::QualityNeedsDialogue)
                }
                Some(_) => {}
            }
        }
        (AnnotationKind::DialogueQuality { .. }, AnnotationTarget::Firing(_)) => {
            return Err(AnnotationError::QualityNeedsDialogue)
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptExport {
    pub format: String,
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story_id: Option<String>,
    pub title: String,
    pub mode: Mode,
    pub state: SessionState,
    pub story: StoryDefinition,
    pub rendered_script: String,
    pub lines: Vec<ScriptLine>,
    pub firings: Vec<FiringEvent>,
    pub annotations: Vec<Annotation>,
    pub events: Vec<EngineEvent>,
    pub report: RunReport,
}

impl TranscriptExport {
    pub fn from_session(
        session: &Session,
        story_id: Option<&str>,
        annotations: &[Annotation],
    ) -> Self {
        TranscriptExport {
            format: EXPORT_FORMAT.to_string(),
            session_id: session.id.clone(),
            story_id: story_id.map(str::to_string),
            title: session.definition.title.clone(),
            mode: session.mode,
            state: session.state().clone(),
            story: session.definition.clone(),
            rendered_script: session.render(),
            lines: session.lines().to_vec(),
            firings: session.firings().to_vec(),
            annotations: annotations.to_vec(),
            events: session.events().to_vec(),
            report: RunReport::from_session(session),
        }
    }

    /// Structural consistency: the rendered text matches the lines, and
    /// every firing points at its injected stage action.
    pub fn is_consistent(&self) -> bool {
        if self.rendered_script != render_script(&self.story.world_setting, &self.lines) {
            return false;
        }
        let injected = self.lines.iter().filter(|l| l.is_injected()).count();
        injected == self.firings.len()
            && self
                .firings
                .iter()
                .all(|f| self.lines.get(f.line_index) == Some(&f.injected()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("exports always serialize")
    }
}
