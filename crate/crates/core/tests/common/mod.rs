#![allow(dead_code)]

//! Shared test support: fixtures, a schedule-driven backend, and a naive
//! reference model of trigger state that re-derives everything from the
//! session's event log.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dramaturge::backend::{
    classify_prompt, BackendError, CompletionBackend, GenerationParams, PromptKind, ScriptedBackend,
};
use dramaturge::drama::{FiringEvent, TriggerRuntime};
use dramaturge::engine::{Mode, Session, SessionState};
use dramaturge::prompt::{CONDITION_INSTRUCTION, SCRIPT_HEADER};
use dramaturge::story::{
    parse_story_definition, Character, ScriptLine, StoryDefinition, Trigger, TriggerId, TriggerType,
};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

pub fn fixture_story() -> StoryDefinition {
    parse_story_definition(&std::fs::read_to_string(fixture_path("sepideh_byron.json")).unwrap())
        .unwrap()
}

pub fn fixture_story_json() -> String {
    std::fs::read_to_string(fixture_path("sepideh_byron.json")).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reply {
    Yes,
    No,
    Garbage,
}

/// A randomized story plus the model's answers for every (turn, trigger).
#[derive(Debug, Clone)]
pub struct Scenario {
    pub def: StoryDefinition,
    pub mode: Mode,
    pub max_turns: u64,
    /// `replies[turn - 1][trigger]`
    pub replies: Vec<Vec<Reply>>,
    pub line_seed: u64,
}

pub const CAST: [&str; 3] = ["Ava", "Ben", "Cy"];

pub fn condition_text(index: usize) -> String {
    format!("Has plot point {index} happened?")
}

pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8usize);
    let ids: Vec<TriggerId> = (0..n).map(|i| TriggerId::new(format!("t{i}"))).collect();
    let mut triggers = Vec::with_capacity(n);
    for i in 0..n {
        let n_actions = rng.random_range(1..=4usize);
        let actions: Vec<String> = (0..n_actions)
            .map(|a| format!("Beat {a} of t{i}."))
            .collect();
        let mut t = Trigger::basic(
            ids[i].as_str(),
            condition_text(i),
            &actions.iter().map(String::as_str).collect::<Vec<_>>(),
        );
        if rng.random_bool(0.15) {
            t.trigger_type = TriggerType::Ending;
        }
        t.repeatable = rng.random_bool(0.25);
        if rng.random_bool(0.3) {
            t.fallback_k = Some(rng.random_range(1..=5));
            if rng.random_bool(0.5) {
                t.condition.clear();
            }
        }
        if rng.random_bool(0.4) {
            t.cooldown_turns = rng.random_range(0..=4);
        }
        for (j, other) in ids.iter().enumerate() {
            if j == i {
                continue;
            }
            let roll: f64 = rng.random();
            if roll < 0.12 {
                t.requires_fired.insert(other.clone());
            } else if roll < 0.22 {
                t.requires_not_fired.insert(other.clone());
            }
        }
        triggers.push(t);
    }
    let mode = if rng.random_bool(0.5) {
        Mode::Interactive
    } else {
        Mode::Autonomous
    };
    let def = StoryDefinition {
        title: format!("scenario {seed}"),
        world_setting: "A crossroads at dusk".into(),
        characters: CAST
            .iter()
            .map(|c| Character::new(*c, "", format!("{c} behaves plausibly.")))
            .collect(),
        triggers,
        player_character: Some("Ava".into()),
    };
    def.check().expect("generated story is valid");
    let max_turns = rng.random_range(5..=40u64);
    let yes_rate: f64 = rng.random_range(0.05..0.6);
    let replies = (0..max_turns)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let r: f64 = rng.random();
                    if r < yes_rate {
                        Reply::Yes
                    } else if r < yes_rate + 0.05 {
                        Reply::Garbage
                    } else {
                        Reply::No
                    }
                })
                .collect()
        })
        .collect();
    Scenario {
        def,
        mode,
        max_turns,
        replies,
        line_seed: rng.random(),
    }
}

/// Answers trigger checks from a fixed (turn, trigger) table and produces
/// random lines for simulation prompts. Every trigger check is logged.
pub struct ScheduleBackend {
    replies: Vec<Vec<Reply>>,
    by_condition: HashMap<String, usize>,
    rng: Mutex<ChaCha8Rng>,
    pub checks: Mutex<Vec<(u64, usize)>>,
    pub simulation_calls: Mutex<u64>,
}

impl ScheduleBackend {
    pub fn new(scenario: &Scenario) -> Self {
        ScheduleBackend {
            replies: scenario.replies.clone(),
            by_condition: scenario
                .def
                .triggers
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.condition.is_empty())
                .map(|(i, t)| (t.condition.clone(), i))
                .collect(),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(scenario.line_seed)),
            checks: Mutex::new(Vec::new()),
            simulation_calls: Mutex::new(0),
        }
    }

    /// A copy that continues from this backend's current RNG position.
    pub fn fork(&self) -> Self {
        ScheduleBackend {
            replies: self.replies.clone(),
            by_condition: self.by_condition.clone(),
            rng: Mutex::new(self.rng.lock().unwrap().clone()),
            checks: Mutex::new(Vec::new()),
            simulation_calls: Mutex::new(*self.simulation_calls.lock().unwrap()),
        }
    }

    pub fn take_checks(&self) -> Vec<(u64, usize)> {
        std::mem::take(&mut self.checks.lock().unwrap())
    }
}

/// Dialogue lines in the script section of a prompt.
pub fn dialogue_lines_in_prompt(prompt: &str) -> u64 {
    let script = prompt.split_once(SCRIPT_HEADER).unwrap().1;
    let script = script.split("\n\n").next().unwrap();
    script
        .lines()
        .skip(2) // blank remainder of the header line, then the world setting
        .filter(|l| !l.starts_with('*'))
        .count() as u64
}

impl CompletionBackend for ScheduleBackend {
    fn complete(&self, prompt: &str, _: &GenerationParams) -> Result<String, BackendError> {
        match classify_prompt(prompt) {
            PromptKind::TriggerCheck => {
                let condition = prompt
                    .split_once(CONDITION_INSTRUCTION)
                    .unwrap()
                    .1
                    .lines()
                    .nth(1)
                    .unwrap();
                let index = self.by_condition[condition];
                let turn = dialogue_lines_in_prompt(prompt);
                self.checks.lock().unwrap().push((turn, index));
                Ok(match self.replies[(turn - 1) as usize][index] {
                    Reply::Yes => "YES".into(),
                    Reply::No => "NO".into(),
                    Reply::Garbage => "I think so, maybe".into(),
                })
            }
            PromptKind::Simulation => {
                *self.simulation_calls.lock().unwrap() += 1;
                let mut rng = self.rng.lock().unwrap();
                let roll: f64 = rng.random();
                Ok(if roll < 0.1 {
                    "<line>*The wind picks up.*</line>".into()
                } else {
                    let who = CAST[rng.random_range(0..CAST.len())];
                    let n: u32 = rng.random();
                    format!("<line>{who}: remark {n}</line>")
                })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Reference model
// ---------------------------------------------------------------------------

/// Trigger runtimes recomputed from the firing log alone.
pub fn oracle_runtimes(def: &StoryDefinition, firings: &[FiringEvent]) -> Vec<TriggerRuntime> {
    def.triggers
        .iter()
        .map(|t| {
            let mine: Vec<&FiringEvent> = firings.iter().filter(|f| f.trigger_id == t.id).collect();
            let count = mine.len();
            let len = t.actions.len();
            TriggerRuntime {
                trigger_id: t.id.clone(),
                next_action_index: if t.repeatable {
                    count % len
                } else {
                    count.min(len)
                },
                active: t.repeatable || count < len,
                fire_count: count as u32,
                last_fired_turn: mine.last().map(|f| f.turn),
            }
        })
        .collect()
}

/// Dialogue lines since the most recent injected stage action.
pub fn oracle_clock(lines: &[ScriptLine]) -> u32 {
    lines
        .iter()
        .rev()
        .take_while(|l| !l.is_injected())
        .filter(|l| l.is_dialogue())
        .count() as u32
}

/// Whether trigger `index` passes every cheap gate, judged from the log.
pub fn oracle_gate(
    def: &StoryDefinition,
    index: usize,
    firings: &[FiringEvent],
    lines: &[ScriptLine],
    turn: u64,
) -> bool {
    let t = &def.triggers[index];
    let count = |id: &TriggerId| firings.iter().filter(|f| &f.trigger_id == id).count();
    let mine = count(&t.id);
    if !t.repeatable && mine >= t.actions.len() {
        return false;
    }
    if t.requires_fired.iter().any(|r| count(r) == 0) {
        return false;
    }
    if t.requires_not_fired.iter().any(|r| count(r) > 0) {
        return false;
    }
    if let Some(last) = firings.iter().rev().find(|f| f.trigger_id == t.id) {
        if turn - last.turn <= t.cooldown_turns as u64 {
            return false;
        }
    }
    if let Some(k) = t.fallback_k {
        if oracle_clock(lines) < k {
            return false;
        }
    }
    true
}

/// Expected drama-manager pass for the dialogue line just appended:
/// which triggers get a model call, and which fires.
pub fn oracle_pass(
    scenario: &Scenario,
    firings: &[FiringEvent],
    lines: &[ScriptLine],
    turn: u64,
) -> (Vec<usize>, Option<usize>) {
    let mut checked = Vec::new();
    for (i, t) in scenario.def.triggers.iter().enumerate() {
        if !oracle_gate(&scenario.def, i, firings, lines, turn) {
            continue;
        }
        if t.fallback_k.is_some() && t.condition.is_empty() {
            return (checked, Some(i));
        }
        checked.push(i);
        if scenario.replies[(turn - 1) as usize][i] == Reply::Yes {
            return (checked, Some(i));
        }
    }
    (checked, None)
}

#[derive(Debug, Default, Clone)]
pub struct ScenarioStats {
    pub steps: u64,
    pub firings: usize,
    pub endings: usize,
    pub checks: usize,
    pub player_lines: usize,
}

/// Plays a scenario to completion, checking the engine against the
/// reference model after every step. Panics with context on mismatch.
pub fn run_checked(seed: u64) -> ScenarioStats {
    let scenario = random_scenario(seed);
    let backend = ScheduleBackend::new(&scenario);
    let mut session = Session::new(format!("s{seed}"), scenario.def.clone(), scenario.mode);
    let mut stats = ScenarioStats::default();
    let mut submitted = 0usize;
    let ctx = |msg: &str| format!("seed {seed}: {msg}");

    let mut guard = 0;
    while session.turn() < scenario.max_turns {
        guard += 1;
        assert!(guard < 1000, "{}", ctx("no progress"));
        let before_lines = session.lines().to_vec();
        let before_firings = session.firings().to_vec();

        let outcome = match session.state() {
            SessionState::Running => session.step(&backend).unwrap(),
            SessionState::AwaitingPlayer => {
                submitted += 1;
                session
                    .submit_player_line(&format!("player says {submitted}"), &backend)
                    .unwrap()
            }
            _ => break,
        };
        stats.steps += 1;
        let checks = backend.take_checks();
        stats.checks += checks.len();

        let new_lines = &session.lines()[before_lines.len()..];
        assert_eq!(new_lines, &outcome.appended[..], "{}", ctx("outcome lines"));
        let dialogue_added = new_lines.iter().filter(|l| l.is_dialogue()).count();
        assert!(
            dialogue_added <= 1,
            "{}",
            ctx("more than one dialogue line per step")
        );
        assert!(new_lines.len() <= 2, "{}", ctx("too many lines per step"));

        if dialogue_added == 1 {
            let turn = session.turn();
            let mut with_dialogue = before_lines.clone();
            with_dialogue.push(new_lines[0].clone());
            let (expected_checks, expected_fire) =
                oracle_pass(&scenario, &before_firings, &with_dialogue, turn);
            let got_checks: Vec<usize> = checks.iter().map(|&(_, i)| i).collect();
            assert_eq!(got_checks, expected_checks, "{}", ctx("checked triggers"));
            assert!(
                checks.iter().all(|&(t, _)| t == turn),
                "{}",
                ctx("check turn")
            );
            let fired = outcome
                .firing
                .as_ref()
                .map(|f| scenario.def.trigger_index(&f.trigger_id).unwrap());
            assert_eq!(fired, expected_fire, "{}", ctx("fired trigger"));
            if let Some(ev) = &outcome.firing {
                stats.firings += 1;
                assert_eq!(new_lines.len(), 2, "{}", ctx("firing injects one line"));
                assert_eq!(new_lines[1], ev.injected(), "{}", ctx("injected line"));
                let t = &scenario.def.triggers[fired.unwrap()];
                if t.trigger_type == TriggerType::Ending {
                    stats.endings += 1;
                    assert_eq!(
                        *session.state(),
                        SessionState::Ended,
                        "{}",
                        ctx("ending halts")
                    );
                    assert!(ev.ended_session);
                } else {
                    assert_ne!(
                        *session.state(),
                        SessionState::Ended,
                        "{}",
                        ctx("basic does not halt")
                    );
                }
            } else {
                assert_eq!(new_lines.len(), 1, "{}", ctx("no firing, one line"));
            }
        } else {
            assert!(
                checks.is_empty(),
                "{}",
                ctx("drama manager ran without dialogue")
            );
            assert!(outcome.firing.is_none());
        }

        // Incremental state equals the log-derived reference.
        assert_eq!(
            session.drama().runtimes,
            oracle_runtimes(&scenario.def, session.firings()),
            "{}",
            ctx("runtimes")
        );
        assert_eq!(
            session.drama().clock.lines_since_last_fire,
            oracle_clock(session.lines()),
            "{}",
            ctx("fallback clock")
        );
        let dialogue = session.lines().iter().filter(|l| l.is_dialogue()).count() as u64;
        assert_eq!(session.turn(), dialogue, "{}", ctx("turn accounting"));
    }

    // Action-order conservation and deactivation.
    for (i, t) in scenario.def.triggers.iter().enumerate() {
        let injected: Vec<&str> = session
            .firings()
            .iter()
            .filter(|f| f.trigger_id == t.id)
            .map(|f| f.action.as_str())
            .collect();
        if t.repeatable {
            for (n, a) in injected.iter().enumerate() {
                assert_eq!(
                    *a,
                    t.actions[n % t.actions.len()],
                    "{}",
                    ctx("repeatable wrap")
                );
            }
        } else {
            assert!(injected.len() <= t.actions.len(), "{}", ctx("over-fired"));
            assert!(
                injected.iter().zip(&t.actions).all(|(a, b)| a == b),
                "{}",
                ctx("injected actions not a prefix")
            );
            if injected.len() == t.actions.len() {
                assert!(
                    !session.drama().runtimes[i].active,
                    "{}",
                    ctx("consumed trigger active")
                );
            }
        }
    }

    // Interception: the player's dialogue only ever comes from submissions.
    if scenario.mode == Mode::Interactive {
        let player_lines: Vec<&ScriptLine> = session
            .lines()
            .iter()
            .filter(|l| l.speaker() == Some("Ava"))
            .collect();
        assert_eq!(player_lines.len(), submitted, "{}", ctx("player lines"));
        assert!(player_lines
            .iter()
            .all(|l| l.text().starts_with("player says ")));
        stats.player_lines = submitted;
    }

    // At most one firing per turn.
    let turns: BTreeSet<u64> = session.firings().iter().map(|f| f.turn).collect();
    assert_eq!(
        turns.len(),
        session.firings().len(),
        "{}",
        ctx("two firings in a turn")
    );
    stats
}

// ---------------------------------------------------------------------------
// Service harness
// ---------------------------------------------------------------------------

pub fn scripted_fixture() -> dramaturge::backend::ScriptedBackend {
    let text = std::fs::read_to_string(fixture_path("sepideh_byron.scripted.json")).unwrap();
    dramaturge::backend::ScriptedBackend::from_fixture(serde_json::from_str(&text).unwrap())
}

/// Starts the HTTP service on an ephemeral port in a background thread and
/// returns its base URL.
pub fn spawn_service(
    data_dir: &std::path::Path,
    backend: std::sync::Arc<dyn CompletionBackend>,
) -> String {
    use dramaturge::engine::EngineConfig;
    use dramaturge::service::{router, AppState};
    use dramaturge::store::Store;

    let state = AppState::new(
        Store::open(data_dir).unwrap(),
        backend,
        EngineConfig::default(),
    );
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(state)).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

/// Always says NO and always has Byron speak; sleeps to widen race windows.
pub struct SlowBackend(pub std::time::Duration);

impl CompletionBackend for SlowBackend {
    fn complete(&self, prompt: &str, _: &GenerationParams) -> Result<String, BackendError> {
        std::thread::sleep(self.0);
        Ok(match classify_prompt(prompt) {
            PromptKind::TriggerCheck => "NO".into(),
            PromptKind::Simulation => "<line>Byron: Mm.</line>".into(),
        })
    }
}

pub struct Client {
    pub base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Client {
            base: base.to_string(),
            http: reqwest::blocking::Client::new(),
        }
    }

    pub fn get(&self, path: &str) -> (u16, serde_json::Value) {
        Self::finish(
            self.http
                .get(format!("{}{path}", self.base))
                .send()
                .unwrap(),
        )
    }

    pub fn get_text(&self, path: &str) -> (u16, String) {
        let r = self
            .http
            .get(format!("{}{path}", self.base))
            .send()
            .unwrap();
        (r.status().as_u16(), r.text().unwrap())
    }

    pub fn post(&self, path: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
        Self::finish(
            self.http
                .post(format!("{}{path}", self.base))
                .json(&body)
                .send()
                .unwrap(),
        )
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, serde_json::Value) {
        Self::finish(
            self.http
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .body(body.to_string())
                .send()
                .unwrap(),
        )
    }

    pub fn put(&self, path: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
        Self::finish(
            self.http
                .put(format!("{}{path}", self.base))
                .json(&body)
                .send()
                .unwrap(),
        )
    }

    pub fn delete(&self, path: &str) -> u16 {
        self.http
            .delete(format!("{}{path}", self.base))
            .send()
            .unwrap()
            .status()
            .as_u16()
    }

    fn finish(r: reqwest::blocking::Response) -> (u16, serde_json::Value) {
        let status = r.status().as_u16();
        let text = r.text().unwrap();
        (
            status,
            serde_json::from_str(&text).unwrap_or(serde_json::Value::Null),
        )
    }
}

pub fn two_person_story(triggers: Vec<Trigger>) -> StoryDefinition {
    let def = StoryDefinition {
        title: "boundaries".into(),
        world_setting: "A quiet bar".into(),
        characters: vec![
            Character::new("Ava", "", "Curious"),
            Character::new("Ben", "", "Guarded"),
        ],
        triggers,
        player_character: None,
    };
    def.check().unwrap();
    def
}

/// Feeds `n` dialogue lines, answering YES to every trigger check.
pub fn run_all_yes(def: &StoryDefinition, n: usize) -> Session {
    let backend = ScriptedBackend::new();
    for i in 0..n {
        backend.push_line(format!("Ben: line {i}"));
        for _ in 0..def.triggers.len() {
            backend.push_answer(true);
        }
    }
    let mut session = Session::new("b", def.clone(), Mode::Autonomous);
    for _ in 0..n {
        if *session.state() != SessionState::Running {
            break;
        }
        session.step(&backend).unwrap();
    }
    session
}
