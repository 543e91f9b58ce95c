//! Interactive mode: when the model writes a line for the player character
//! it is dropped and the session waits for the player's own line.

use dramaturge::backend::ScriptedBackend;
use dramaturge::engine::{Mode, Session, SessionState};
use dramaturge::story::parse_story_definition;

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sepideh_byron.json");
    let def = parse_story_definition(&std::fs::read_to_string(path).unwrap()).unwrap();
    let backend = ScriptedBackend::new();
    backend
        .push_line("Sepideh: How was school today, Byron?")
        .push_answer(false)
        .push_line("Kian: The model tried to speak for me.")
        .push_answer(false)
        .push_line("Byron: Fine.")
        .push_answer(true);

    let mut session = Session::new("play", def, Mode::Interactive);
    let mut typed = ["Let's just enjoy dinner."].into_iter();
    while session.turn() < 3 {
        match session.state() {
            SessionState::Running => {
                let outcome = session.step(&backend).unwrap();
                if outcome.awaiting_player {
                    println!("(model wrote a Kian line; it was discarded)");
                }
            }
            SessionState::AwaitingPlayer => {
                let text = typed.next().unwrap();
                println!("Kian> {text}");
                session.submit_player_line(text, &backend).unwrap();
            }
            other => panic!("unexpected state {other}"),
        }
    }
    println!("\n{}", session.render());
}
