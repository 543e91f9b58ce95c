//! Build both prompt kinds for a short script and parse model replies.

use dramaturge::prompt::{
    build_simulation_prompt, build_trigger_check_prompt, parse_line_response, parse_yes_no,
};
use dramaturge::story::{parse_story_definition, ScriptLine};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sepideh_byron.json");
    let def = parse_story_definition(&std::fs::read_to_string(path).unwrap()).unwrap();
    let lines = vec![
        ScriptLine::dialogue("Sepideh", "How was school today, Byron?"),
        ScriptLine::dialogue("Byron", "Fine."),
    ];

    println!(
        "--- simulation prompt ---\n{}",
        build_simulation_prompt(&def, &lines).as_str()
    );
    println!(
        "\n--- trigger check prompt ---\n{}",
        build_trigger_check_prompt(&def, &lines, &def.triggers[0]).as_str()
    );

    println!();
    for reply in [
        "Sure! <line>Sepideh: You're very quiet tonight.</line>",
        "<line>*Byron stares at his plate.*</line>",
        "<line>Narrator: Meanwhile...</line>",
        "no tags at all",
    ] {
        println!("{reply:?} -> {:?}", parse_line_response(reply, &def));
    }
    for answer in ["YES", "no.", " Yes\n", "probably"] {
        println!("{answer:?} -> {:?}", parse_yes_no(answer));
    }
}
