mod common;

use proptest::prelude::*;

use common::fixture_story;
use dramaturge::prompt::parse_line_response;
use dramaturge::story::{
    parse_script, parse_story_definition, render_script, Character, ScriptLine, StoryDefinition,
    Trigger, TriggerType,
};

const CAST: [&str; 3] = ["Sepideh", "Byron", "Kian"];
const TEXT: &str = "[A-Za-z0-9][A-Za-z0-9 ,.!?'*:-]{0,40}[A-Za-z0-9.!?*]";

fn line_strategy() -> impl Strategy<Value = ScriptLine> {
    prop_oneof![
        (prop::sample::select(CAST.to_vec()), TEXT).prop_map(|(s, t)| ScriptLine::dialogue(s, t)),
        TEXT.prop_map(ScriptLine::generated_action),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn render_then_parse_is_identity(
        setting in "[A-Za-z][A-Za-z ,.]{0,40}[a-z.]",
        lines in prop::collection::vec(line_strategy(), 0..20),
    ) {
        let text = render_script(&setting, &lines);
        prop_assert!(!text.ends_with('\n'));
        let (back_setting, back_lines) = parse_script(&text).unwrap();
        prop_assert_eq!(back_setting, setting);
        prop_assert_eq!(back_lines, lines);
    }

    #[test]
    fn distinct_scripts_render_distinctly(
        a in prop::collection::vec(line_strategy(), 0..6),
        b in prop::collection::vec(line_strategy(), 0..6),
    ) {
        prop_assume!(a != b);
        prop_assert_ne!(render_script("w", &a), render_script("w", &b));
    }

    #[test]
    fn rendered_line_parses_back_from_a_response(
        line in line_strategy(),
        before in "[a-z ]{0,10}",
        after in "[a-z ]{0,10}",
    ) {
        let raw = format!("{before}<line>{}</line>{after}<line>Kian: second</line>", line.render());
        let parsed = parse_line_response(&raw, &fixture_story()).unwrap();
        prop_assert_eq!(parsed, line);
    }

    #[test]
    fn story_survives_serialization(
        n_triggers in 0usize..5,
        repeatable in any::<bool>(),
        ending in any::<bool>(),
        cooldown in 0u32..5,
        k in prop::option::of(1u32..6),
    ) {
        let triggers: Vec<Trigger> = (0..n_triggers)
            .map(|i| {
                let mut t = Trigger::basic(format!("t{i}"), format!("Did event {i} happen?"), &["A.", "B."]);
                t.repeatable = repeatable;
                t.cooldown_turns = cooldown;
                t.fallback_k = k;
                if ending && i == 0 {
                    t.trigger_type = TriggerType::Ending;
                }
                if i > 0 {
                    t.requires_fired.insert(triggers_id(i - 1));
                }
                t
            })
            .collect();
        let def = StoryDefinition {
            title: "Round trip".into(),
            world_setting: "Somewhere".into(),
            characters: CAST.iter().map(|c| Character::new(*c, "d", "b")).collect(),
            triggers,
            player_character: Some("Kian".into()),
        };
        let back = parse_story_definition(&def.to_json_pretty()).unwrap();
        prop_assert_eq!(back, def);
    }
}

fn triggers_id(i: usize) -> dramaturge::story::TriggerId {
    dramaturge::story::TriggerId::new(format!("t{i}"))
}

#[test]
fn fixture_gets_index_based_trigger_id() {
    let def = fixture_story();
    assert_eq!(def.triggers[0].id.as_str(), "trigger-0");
    assert_eq!(def.triggers[0].actions.len(), 3);
}
