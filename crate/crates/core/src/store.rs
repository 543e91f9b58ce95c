//! File-backed storage: one JSON file per entity under `stories/`,
//! `sessions/` and `annotations/`.
//!
//! Writes go to a temp file in the target directory and are renamed into
//! place. A file that fails to parse is moved to `quarantine/` along with
//! a `.reason.txt` explaining why.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drama::{DramaState, FallbackClock, TriggerRuntime};
use crate::engine::{Progress, Session, SessionState, Snapshot};
use crate::export::Annotation;
use crate::story::StoryDefinition;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Story,
    Session,
    Annotations,
}

impl EntityKind {
    fn dir(self) -> &'static str {
        match self {
            EntityKind::Story => "stories",
            EntityKind::Session => "sessions",
            EntityKind::Annotations => "annotations",
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no {kind:?} with id {id:?}")]
    NotFound { kind: EntityKind, id: String },
    #[error("invalid id {0:?}")]
    InvalidId(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file {path} moved to {quarantined}: {reason}")]
    Corrupt {
        path: PathBuf,
        quarantined: PathBuf,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredStory {
    pub id: String,
    pub story: StoryDefinition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSession {
    pub story_id: Option<String>,
    pub session: Session,
    /// One snapshot per line count reached, oldest first.
    pub snapshots: Vec<Snapshot>,
}

// Lines, events and firings only grow between resets, and a reset drops
// every later snapshot, so on disk a snapshot keeps prefix lengths instead
// of its own copy of the transcript.
#[derive(Serialize, Deserialize)]
struct SnapshotMark {
    line_count: usize,
    event_count: usize,
    firing_count: usize,
    turn: u64,
    state: SessionState,
    runtimes: Vec<TriggerRuntime>,
    clock: FallbackClock,
}

#[derive(Serialize)]
struct SessionDocRef<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    story_id: &'a Option<String>,
    session: &'a Session,
    snapshots: Vec<SnapshotMark>,
}

#[derive(Deserialize)]
struct SessionDoc {
    #[serde(default)]
    story_id: Option<String>,
    session: Session,
    #[serde(default)]
    snapshots: Vec<SnapshotMark>,
}

impl Serialize for StoredSession {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let snapshots = self
            .snapshots
            .iter()
            .map(|s| SnapshotMark {
                line_count: s.line_count,
                event_count: s.progress.events.len(),
                firing_count: s.progress.drama.firings.len(),
                turn: s.progress.turn,
                state: s.progress.state.clone(),
                runtimes: s.progress.drama.runtimes.clone(),
                clock: s.progress.drama.clock,
            })
            .collect();
        SessionDocRef {
            story_id: &self.story_id,
            session: &self.session,
            snapshots,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StoredSession {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = SessionDoc::deserialize(deserializer)?;
        let current = &doc.session.progress;
        let mut snapshots = Vec::with_capacity(doc.snapshots.len());
        for mark in doc.snapshots {
            if mark.line_count > current.lines.len()
                || mark.event_count > current.events.len()
                || mark.firing_count > current.drama.firings.len()
            {
                return Err(serde::de::Error::custom(format!(
                    "snapshot at line {} is not a prefix of the session",
                    mark.line_count
                )));
            }
            snapshots.push(Snapshot {
                session_id: doc.session.id.clone(),
                line_count: mark.line_count,
                progress: Progress {
                    lines: current.lines[..mark.line_count].to_vec(),
                    drama: DramaState {
                        runtimes: mark.runtimes,
                        clock: mark.clock,
                        firings: current.drama.firings[..mark.firing_count].to_vec(),
                    },
                    turn: mark.turn,
                    state: mark.state,
                    events: current.events[..mark.event_count].to_vec(),
                },
            });
        }
        Ok(StoredSession {
            story_id: doc.story_id,
            session: doc.session,
            snapshots,
        })
    }
}

impl StoredSession {
    pub fn new(story_id: Option<String>, session: Session) -> Self {
        let snapshots = vec![session.snapshot()];
        StoredSession {
            story_id,
            session,
            snapshots,
        }
    }

    /// Records the current state, replacing any snapshot at the same line count.
    pub fn record_snapshot(&mut self) {
        let snap = self.session.snapshot();
        self.snapshots.retain(|s| s.line_count != snap.line_count);
        self.snapshots.push(snap);
        self.snapshots.sort_by_key(|s| s.line_count);
    }

    pub fn snapshot_at(&self, line_count: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.line_count == line_count)
    }

    /// Resets to the snapshot at `line_count` and forgets later ones.
    pub fn reset_to(
        &mut self,
        line_count: usize,
    ) -> Option<Result<(), crate::engine::EngineError>> {
        let snap = self.snapshot_at(line_count)?.clone();
        if let Err(e) = self.session.reset_to(&snap) {
            return Some(Err(e));
        }
        self.snapshots.retain(|s| s.line_count <= line_count);
        Some(Ok(()))
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for kind in [
            EntityKind::Story,
            EntityKind::Session,
            EntityKind::Annotations,
        ] {
            let dir = root.join(kind.dir());
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: EntityKind, id: &str) -> Result<PathBuf, StoreError> {
        let valid = !id.is_empty()
            && id.len() <= 128
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.root.join(kind.dir()).join(format!("{id}.json")))
    }

    fn write<T: Serialize>(&self, kind: EntityKind, id: &str, value: &T) -> Result<(), StoreError> {
        let path = self.path(kind, id)?;
        let dir = path.parent().expect("entity paths have a parent");
        let json = serde_json::to_vec_pretty(value).expect("entities always serialize");
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        tmp.write_all(&json).map_err(io_err(tmp.path()))?;
        tmp.as_file().sync_all().map_err(io_err(&path))?;
        tmp.persist(&path).map_err(|e| StoreError::Io {
            path: path.clone(),
            source: e.error,
        })?;
        Ok(())
    }

    fn read<T: DeserializeOwned>(&self, kind: EntityKind, id: &str) -> Result<T, StoreError> {
        let path = self.path(kind, id)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound {
                    kind,
                    id: id.to_string(),
                })
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| self.quarantine(&path, e.to_string()))
    }

    fn quarantine(&self, path: &Path, reason: String) -> StoreError {
        let dir = self.root.join("quarantine");
        let name = format!(
            "{}-{}",
            uuid::Uuid::new_v4().simple(),
            path.file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("entity")
        );
        let target = dir.join(name);
        let moved = fs::create_dir_all(&dir)
            .and_then(|_| fs::rename(path, &target))
            .and_then(|_| fs::write(target.with_extension("reason.txt"), &reason));
        if let Err(source) = moved {
            return StoreError::Io {
                path: path.to_path_buf(),
                source,
            };
        }
        StoreError::Corrupt {
            path: path.to_path_buf(),
            quarantined: target,
            reason,
        }
    }

    fn ids(&self, kind: EntityKind) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join(kind.dir());
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn remove(&self, kind: EntityKind, id: &str) -> Result<(), StoreError> {
        let path = self.path(kind, id)?;
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound {
                kind,
                id: id.to_string(),
            }),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn save_story(&self, story: &StoredStory) -> Result<(), StoreError> {
        self.write(EntityKind::Story, &story.id, story)
    }

    pub fn load_story(&self, id: &str) -> Result<StoredStory, StoreError> {
        self.read(EntityKind::Story, id)
    }

    pub fn delete_story(&self, id: &str) -> Result<(), StoreError> {
        self.remove(EntityKind::Story, id)
    }

    /// Loads every readable story; unreadable ones are skipped (and
    /// quarantined if corrupt).
    pub fn list_stories(&self) -> Result<Vec<StoredStory>, StoreError> {
        Ok(self
            .ids(EntityKind::Story)?
            .iter()
            .filter_map(|id| self.load_story(id).ok())
            .collect())
    }

    pub fn save_session(&self, session: &StoredSession) -> Result<(), StoreError> {
        self.write(EntityKind::Session, &session.session.id, session)
    }

    pub fn load_session(&self, id: &str) -> Result<StoredSession, StoreError> {
        self.read(EntityKind::Session, id)
    }

    pub fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        self.ids(EntityKind::Session)
    }

    pub fn save_annotations(
        &self,
        session_id: &str,
        annotations: &[Annotation],
    ) -> Result<(), StoreError> {
        self.write(EntityKind::Annotations, session_id, &annotations)
    }

    /// Annotations for a session; none stored yet is an empty list.
    pub fn load_annotations(&self, session_id: &str) -> Result<Vec<Annotation>, StoreError> {
        match self.read(EntityKind::Annotations, session_id) {
            Err(StoreError::NotFound { .. }) => Ok(Vec::new()),
            other => other,
        }
    }
}
