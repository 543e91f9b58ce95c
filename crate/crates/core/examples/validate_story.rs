//! Parse a story, print validation warnings, then show a few rejected inputs.

use dramaturge::story::{parse_story_definition, validate_story};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sepideh_byron.json");
    let def = parse_story_definition(&std::fs::read_to_string(path).unwrap()).unwrap();
    println!(
        "{:?}: {} characters, {} triggers (first id {})",
        def.title,
        def.characters.len(),
        def.triggers.len(),
        def.triggers[0].id
    );
    println!("warnings: {:?}", validate_story(&def));

    let cyclic = r#"{
        "title": "Standoff", "world_setting": "A rooftop",
        "characters": [{"name": "Ava", "description": "", "behavior_prompt": "Tense"}],
        "triggers": [
            {"id": "a", "condition": "A?", "actions": ["x"], "requires_fired": ["b"]},
            {"id": "b", "condition": "B?", "actions": ["y"], "requires_fired": ["a"]}
        ]
    }"#;
    for w in validate_story(&parse_story_definition(cyclic).unwrap()) {
        println!("warning: {w}");
    }

    for bad in [
        r#"{"title": "t", "world_setting": "w", "characters": [], "triggers": []}"#,
        r#"{"title": "t", "world_setting": "w",
            "characters": [{"name": "Ava", "description": "", "behaviour_prompt": "typo"}],
            "triggers": []}"#,
    ] {
        println!("error: {}", parse_story_definition(bad).unwrap_err());
    }
}
