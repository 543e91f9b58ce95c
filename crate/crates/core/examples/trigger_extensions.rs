//! Fallback, cooldown, gating, repeatable and ending triggers on one story.

use dramaturge::backend::ScriptedBackend;
use dramaturge::engine::{Mode, Session, SessionState};
use dramaturge::story::{Character, StoryDefinition, Trigger};

fn main() {
    let mut lull = Trigger::basic(
        "lull",
        "",
        &["A dog barks outside.", "The radiator clanks."],
    );
    lull.fallback_k = Some(3);
    lull.repeatable = true;

    let mut toast = Trigger::basic("toast", "Has anyone proposed a toast?", &["Glasses clink."]);
    toast.repeatable = true;
    toast.cooldown_turns = 2;

    let mut leave = Trigger::ending(
        "leave",
        "Is the evening winding down?",
        &["Everyone heads home."],
    );
    leave.requires_fired.insert(toast.id.clone());

    let def = StoryDefinition {
        title: "Reunion".into(),
        world_setting: "A crowded living room".into(),
        characters: vec![
            Character::new("Ava", "", "Sentimental"),
            Character::new("Ben", "", "Dry humour"),
        ],
        triggers: vec![lull, toast, leave],
        player_character: None,
    };
    def.check().unwrap();

    // Which triggers get asked on each turn, given the gates above.
    let backend = ScriptedBackend::new();
    let schedule: [&[bool]; 6] = [
        &[false],       // 1: toast asked; leave gated on toast
        &[true],        // 2: toast fires
        &[false],       // 3: toast cooling down; leave asked
        &[false],       // 4: same
        &[],            // 5: three quiet lines, lull fires without a model call
        &[false, true], // 6: toast asked again, then leave fires and ends the session
    ];
    for (i, answers) in schedule.iter().enumerate() {
        backend.push_line(format!("Ava: line {}", i + 1));
        for &a in *answers {
            backend.push_answer(a);
        }
    }

    let mut session = Session::new("ext", def, Mode::Autonomous);
    while *session.state() == SessionState::Running && backend.remaining() > 0 {
        match session.step(&backend) {
            Ok(o) => {
                if let Some(f) = o.firing {
                    println!("turn {}: {} -> {:?}", f.turn, f.trigger_id, f.action);
                }
            }
            Err(e) => {
                println!("stopped: {e}");
                break;
            }
        }
    }
    println!("\n{}\nstate: {}", session.render(), session.state());
}
