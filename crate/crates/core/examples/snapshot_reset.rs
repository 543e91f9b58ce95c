//! Snapshot a session, keep going, then rewind and branch differently.

use dramaturge::backend::ScriptedBackend;
use dramaturge::engine::{Mode, Session};
use dramaturge::story::parse_story_definition;

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sepideh_byron.json");
    let def = parse_story_definition(&std::fs::read_to_string(path).unwrap()).unwrap();
    let backend = ScriptedBackend::new();
    let mut session = Session::new("branch", def, Mode::Autonomous);

    backend
        .push_line("Sepideh: How was school today, Byron?")
        .push_answer(false);
    session.step(&backend).unwrap();
    let snap = session.snapshot();

    backend.push_line("Byron: Fine.").push_answer(true);
    session.step(&backend).unwrap();
    println!("first branch:\n{}\n", session.render());

    session.reset_to(&snap).unwrap();
    backend
        .push_line("Byron: Actually, I need to tell you something.")
        .push_answer(false);
    session.step(&backend).unwrap();
    println!(
        "after reset to {} lines:\n{}",
        snap.line_count,
        session.render()
    );
    println!("firings now: {}", session.firings().len());
}
