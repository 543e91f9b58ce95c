//! Run the example story autonomously against a scripted fixture and print
//! the transcript and report.

use dramaturge::backend::{ScriptedBackend, ScriptedFixture};
use dramaturge::engine::{Mode, Session};
use dramaturge::stats::RunReport;
use dramaturge::story::parse_story_definition;

fn main() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let story = std::fs::read_to_string(format!("{dir}/fixtures/sepideh_byron.json")).unwrap();
    let fixture =
        std::fs::read_to_string(format!("{dir}/fixtures/sepideh_byron.scripted.json")).unwrap();
    let backend = ScriptedBackend::from_fixture(ScriptedFixture::from_json(&fixture).unwrap());

    let mut session = Session::new(
        "demo",
        parse_story_definition(&story).unwrap(),
        Mode::Autonomous,
    );
    session.run_autonomous(&backend, 6).unwrap();

    println!("{}\n", session.render());
    for f in session.firings() {
        println!(
            "turn {}: {} fired action {} ({:?})",
            f.turn, f.trigger_id, f.action_index, f.action
        );
    }
    let report = RunReport::from_session(&session);
    println!(
        "length {}, dialogues {}, actions {}, ended by {}",
        report.simulation_length, report.dialogue_count, report.action_count, report.ended_by
    );
}
