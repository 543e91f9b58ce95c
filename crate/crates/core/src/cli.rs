//! Command implementations behind the `dramaturge` binary. They take
//! explicit readers and writers so tests can drive them without a terminal.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context};
use rayon::prelude::*;

use crate::backend::{CompletionBackend, HttpBackend, ScriptedBackend, ScriptedFixture};
use crate::engine::{EngineConfig, EngineError, Mode, Session, SessionState};
use crate::export::TranscriptExport;
use crate::stats::{AggregateStats, EndedBy, RunReport};
use crate::story::{parse_story_definition, validate_story, ScriptLine, StoryDefinition};

pub const EXIT_OK: i32 = 0;
pub const EXIT_WARNINGS: i32 = 1;
pub const EXIT_ERRORS: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Live,
    Scripted(PathBuf),
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "live" => Ok(BackendChoice::Live),
            Some(("scripted", path)) if !path.is_empty() => {
                Ok(BackendChoice::Scripted(PathBuf::from(path)))
            }
            _ => Err(format!(
                "unknown backend {s:?}; use `live` or `scripted:<fixture.json>`"
            )),
        }
    }
}

/// Everything needed to build a backend for one or more sessions.
pub enum BackendSource {
    Live {
        backend: Arc<HttpBackend>,
        model: String,
    },
    Scripted(ScriptedFixture),
}

impl BackendSource {
    pub fn load(choice: &BackendChoice) -> anyhow::Result<Self> {
        match choice {
            BackendChoice::Live => {
                let (backend, model) = HttpBackend::from_env()?;
                Ok(BackendSource::Live {
                    backend: Arc::new(backend),
                    model,
                })
            }
            BackendChoice::Scripted(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading fixture {}", path.display()))?;
                let fixture = ScriptedFixture::from_json(&text)
                    .with_context(|| format!("parsing fixture {}", path.display()))?;
                Ok(BackendSource::Scripted(fixture))
            }
        }
    }

    /// A backend for one session. Scripted sessions get their own copy of
    /// the fixture, shuffled when a seed is given.
    pub fn instantiate(&self, seed: Option<u64>) -> (Arc<dyn CompletionBackend>, EngineConfig) {
        match self {
            BackendSource::Live { backend, model } => {
                (backend.clone(), EngineConfig::with_model(model))
            }
            BackendSource::Scripted(fixture) => {
                let backend = match seed {
                    Some(seed) => ScriptedBackend::from_fixture_seeded(fixture.clone(), seed),
                    None => ScriptedBackend::from_fixture(fixture.clone()),
                };
                (Arc::new(backend), EngineConfig::default())
            }
        }
    }

    pub fn is_live(&self) -> bool {
        matches!(self, BackendSource::Live { .. })
    }
}

pub fn load_story(path: &Path) -> anyhow::Result<StoryDefinition> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_story_definition(&text).with_context(|| format!("invalid story {}", path.display()))
}

/// Exit 0 when clean, 1 when there are warnings (0 with `allow_warnings`),
/// 2 when the story does not parse.
pub fn cmd_validate(path: &Path, allow_warnings: bool, out: &mut dyn Write) -> i32 {
    let def = match load_story(path) {
        Ok(def) => def,
        Err(e) => {
            let _ = writeln!(out, "error: {e:#}");
            return EXIT_ERRORS;
        }
    };
    let warnings = validate_story(&def);
    for w in &warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let _ = writeln!(
        out,
        "{}: {} characters, {} triggers, {} warnings",
        path.display(),
        def.characters.len(),
        def.triggers.len(),
        warnings.len()
    );
    if warnings.is_empty() || allow_warnings {
        EXIT_OK
    } else {
        EXIT_WARNINGS
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: Mode,
    pub max_turns: u64,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

#[derive(Debug)]
pub struct RunResult {
    pub report: RunReport,
    pub json_path: PathBuf,
    pub txt_path: PathBuf,
    pub session: Session,
}

/// Writes `<session id>.json` and `<session id>.txt` into `dir`.
pub fn write_exports(dir: &Path, export: &TranscriptExport) -> anyhow::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json_path = dir.join(format!("{}.json", export.session_id));
    let txt_path = dir.join(format!("{}.txt", export.session_id));
    fs::write(&json_path, export.to_json_pretty())
        .with_context(|| format!("writing {}", json_path.display()))?;
    fs::write(&txt_path, &export.rendered_script)
        .with_context(|| format!("writing {}", txt_path.display()))?;
    Ok((json_path, txt_path))
}

fn echo(out: &mut dyn Write, lines: &[ScriptLine]) {
    for line in lines {
        let _ = writeln!(out, "{}", line.render());
    }
}

/// Plays one session. In interactive mode player lines are read from
/// `input` whenever the session waits for them; end of input stops the run.
pub fn run_session(
    session_id: String,
    def: StoryDefinition,
    source: &BackendSource,
    opts: &RunOptions,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> anyhow::Result<RunResult> {
    let (backend, config) = source.instantiate(opts.seed);
    let mut session = Session::with_config(session_id, def, opts.mode, config);
    let _ = writeln!(out, "*{}*", session.definition.world_setting);

    let result = match opts.mode {
        Mode::Autonomous => {
            let r = session.run_autonomous(backend.as_ref(), opts.max_turns);
            echo(out, session.lines());
            r
        }
        Mode::Interactive => play_interactive(&mut session, backend.as_ref(), opts, input, out),
    };
    if let Err(e) = result {
        let _ = writeln!(out, "run stopped: {e}");
    }
    if let SessionState::Errored(_) = session.state() {
        for event in session.events() {
            let _ = writeln!(out, "event: {}", serde_json::to_string(event)?);
        }
    }

    let export = TranscriptExport::from_session(&session, None, &[]);
    let (json_path, txt_path) = write_exports(&opts.out_dir, &export)?;
    Ok(RunResult {
        report: export.report,
        json_path,
        txt_path,
        session,
    })
}

fn play_interactive(
    session: &mut Session,
    backend: &dyn CompletionBackend,
    opts: &RunOptions,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<(), EngineError> {
    let start = session.turn();
    loop {
        if session.turn() - start >= opts.max_turns {
            return Ok(());
        }
        match session.state() {
            SessionState::Running => {
                let outcome = session.step(backend)?;
                echo(out, &outcome.appended);
            }
            SessionState::AwaitingPlayer => {
                let player = session
                    .definition
                    .player_character
                    .clone()
                    .unwrap_or_default();
                let _ = write!(out, "{player}> ");
                let _ = out.flush();
                let mut text = String::new();
                if input.read_line(&mut text).unwrap_or(0) == 0 {
                    let _ = writeln!(out);
                    return Ok(());
                }
                match session.submit_player_line(&text, backend) {
                    Ok(outcome) => echo(out, &outcome.appended[1..]),
                    Err(EngineError::EmptyPlayerLine | EngineError::MultilinePlayerLine) => {}
                    Err(e) => return Err(e),
                }
            }
            _ => return Ok(()),
        }
    }
}

pub fn cmd_run(
    story_path: &Path,
    backend: &BackendChoice,
    opts: &RunOptions,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> anyhow::Result<RunResult> {
    let def = load_story(story_path)?;
    let source = BackendSource::load(backend)?;
    if source.is_live() && opts.seed.is_some() {
        let _ = writeln!(
            out,
            "note: live backends are not deterministic; --seed only affects scripted fixtures"
        );
    }
    let id = match opts.seed {
        Some(seed) => format!("run-{seed}"),
        None => format!("run-{}", uuid::Uuid::new_v4().simple()),
    };
    let result = run_session(id, def, &source, opts, input, out)?;
    print_report(out, &result.report);
    Ok(result)
}

pub fn print_report(out: &mut dyn Write, r: &RunReport) {
    let _ = writeln!(
        out,
        "{}: simulation length {}, dialogues {}, actions {}, ended by {}",
        r.session_id, r.simulation_length, r.dialogue_count, r.action_count, r.ended_by
    );
}

/// Runs `count` autonomous sessions of one story, at most `jobs` at a time.
/// Session `i` uses seed `base_seed + i`.
pub fn cmd_batch(
    story_path: &Path,
    backend: &BackendChoice,
    count: usize,
    jobs: usize,
    opts: &RunOptions,
    out: &mut dyn Write,
) -> anyhow::Result<Vec<RunReport>> {
    let def = load_story(story_path)?;
    let source = BackendSource::load(backend)?;
    let base_seed = opts.seed.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    let results: Vec<anyhow::Result<RunResult>> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let opts = RunOptions {
                    mode: Mode::Autonomous,
                    seed: Some(base_seed + i as u64),
                    ..opts.clone()
                };
                run_session(
                    format!("batch-{i:04}"),
                    def.clone(),
                    &source,
                    &opts,
                    &mut std::io::empty(),
                    &mut std::io::sink(),
                )
            })
            .collect()
    });
    let mut reports = Vec::with_capacity(count);
    for r in results {
        let r = r?;
        print_report(out, &r.report);
        reports.push(r.report);
    }
    if let Some(stats) = AggregateStats::from_reports(&reports) {
        writeln!(out)?;
        write!(out, "{stats}")?;
    }
    Ok(reports)
}

/// Parsed exports, and files that failed to parse with the reason.
pub type LoadedExports = (Vec<(PathBuf, TranscriptExport)>, Vec<(PathBuf, String)>);

/// Reads every `.json` export in `dir`. Files that are not readable
/// exports are returned separately with the reason.
pub fn load_exports(dir: &Path) -> anyhow::Result<LoadedExports> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for path in paths {
        let parsed = fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|text| {
                serde_json::from_str::<TranscriptExport>(&text).map_err(|e| e.to_string())
            });
        match parsed {
            Ok(export) => good.push((path, export)),
            Err(reason) => bad.push((path, reason)),
        }
    }
    Ok((good, bad))
}

pub fn cmd_stats(dir: &Path, out: &mut dyn Write) -> anyhow::Result<AggregateStats> {
    let (exports, skipped) = load_exports(dir)?;
    for (path, reason) in &skipped {
        writeln!(out, "skipped {}: {reason}", path.display())?;
    }
    let reports: Vec<RunReport> = exports.into_iter().map(|(_, e)| e.report).collect();
    let Some(stats) = AggregateStats::from_reports(&reports) else {
        bail!("no transcript exports found in {}", dir.display());
    };
    write!(out, "{stats}")?;
    Ok(stats)
}

/// Whether a finished run should make the process exit non-zero.
pub fn run_failed(report: &RunReport) -> bool {
    matches!(report.ended_by, EndedBy::Errored { .. })
}
