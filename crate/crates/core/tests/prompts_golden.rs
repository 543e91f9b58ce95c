mod common;

use proptest::prelude::*;

use common::{fixture_story, golden_path};
use dramaturge::prompt::{
    build_simulation_prompt, build_trigger_check_prompt, context_block, SIMULATION_INSTRUCTION,
    YES_NO_INSTRUCTION,
};
use dramaturge::story::{render_script, ScriptLine, TriggerId};

fn three_lines() -> Vec<ScriptLine> {
    vec![
        ScriptLine::dialogue("Sepideh", "How was school today, Byron?"),
        ScriptLine::dialogue("Byron", "Fine."),
        ScriptLine::generated_action("Byron pushes the stew around his bowl without eating."),
    ]
}

#[test]
fn simulation_prompt_matches_golden_bytes() {
    let golden = std::fs::read(golden_path("simulation_prompt.txt")).unwrap();
    let prompt = build_simulation_prompt(&fixture_story(), &three_lines());
    assert_eq!(prompt.as_str().as_bytes(), &golden[..]);
}

#[test]
fn trigger_check_prompt_matches_golden_bytes() {
    let golden = std::fs::read(golden_path("trigger_check_prompt.txt")).unwrap();
    let def = fixture_story();
    let prompt = build_trigger_check_prompt(&def, &three_lines(), &def.triggers[0]);
    assert_eq!(prompt.as_str().as_bytes(), &golden[..]);
}

#[test]
fn injected_and_generated_actions_render_alike() {
    let def = fixture_story();
    let mut injected = three_lines();
    injected[2] = ScriptLine::injected_action(
        "Byron pushes the stew around his bowl without eating.",
        TriggerId::for_index(0),
        0,
    );
    assert_eq!(
        build_simulation_prompt(&def, &injected),
        build_simulation_prompt(&def, &three_lines())
    );
}

#[test]
fn empty_script_is_just_the_setting() {
    let def = fixture_story();
    let prompt = build_simulation_prompt(&def, &[]);
    let expected_script = format!("*{}*\n\n{}", def.world_setting, SIMULATION_INSTRUCTION);
    assert!(prompt.as_str().ends_with(&expected_script));
}

fn line_strategy() -> impl Strategy<Value = ScriptLine> {
    let text = "[A-Za-z][A-Za-z0-9 ,.!?']{0,30}[a-z.!?]";
    prop_oneof![
        (prop::sample::select(vec!["Sepideh", "Byron", "Kian"]), text)
            .prop_map(|(s, t)| ScriptLine::dialogue(s, t)),
        text.prop_map(ScriptLine::generated_action),
    ]
}

proptest! {
    #[test]
    fn both_prompts_share_the_context_prefix(lines in prop::collection::vec(line_strategy(), 0..12)) {
        let def = fixture_story();
        let context = context_block(&def, &lines);
        let sim = build_simulation_prompt(&def, &lines);
        let check = build_trigger_check_prompt(&def, &lines, &def.triggers[0]);
        prop_assert!(sim.as_str().starts_with(&context));
        prop_assert!(check.as_str().starts_with(&context));
        prop_assert_eq!(&sim.as_str()[context.len()..], SIMULATION_INSTRUCTION);
        prop_assert!(check.as_str().ends_with(YES_NO_INSTRUCTION));
        let script = render_script(&def.world_setting, &lines);
        let tail = format!("{script}\n\n");
        prop_assert!(context.ends_with(&tail));
        // Building twice gives identical bytes.
        prop_assert_eq!(sim, build_simulation_prompt(&def, &lines));
    }
}
