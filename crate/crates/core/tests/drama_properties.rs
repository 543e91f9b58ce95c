mod common;

use proptest::prelude::*;

use common::{random_scenario, run_all_yes, run_checked, two_person_story as story};
use dramaturge::engine::SessionState;
use dramaturge::story::Trigger;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn engine_matches_reference_model(seed in any::<u64>()) {
        run_checked(seed);
    }
}

#[test]
fn generator_covers_interesting_shapes() {
    let mut firings = 0;
    let mut endings = 0;
    let mut players = 0;
    let mut gated = 0;
    for seed in 0..300 {
        let s = random_scenario(seed);
        gated += s
            .def
            .triggers
            .iter()
            .filter(|t| !t.requires_fired.is_empty() || !t.requires_not_fired.is_empty())
            .count();
        let stats = run_checked(seed);
        firings += stats.firings;
        endings += stats.endings;
        players += stats.player_lines;
    }
    assert!(firings > 300, "{firings}");
    assert!(endings > 10, "{endings}");
    assert!(players > 50, "{players}");
    assert!(gated > 50, "{gated}");
}

#[test]
fn fallback_fires_at_exactly_k_lines() {
    for k in 1..=6u32 {
        let mut t = Trigger::basic("f", "", &["A stranger walks in.", "The lights flicker."]);
        t.fallback_k = Some(k);
        let session = run_all_yes(&story(vec![t]), k as usize * 2 + 1);
        let turns: Vec<u64> = session.firings().iter().map(|f| f.turn).collect();
        assert_eq!(turns, vec![k as u64, 2 * k as u64], "k={k}");
    }
}

#[test]
fn cooldown_is_strict() {
    for c in 0..=4u32 {
        let mut t = Trigger::basic("c", "Anything happened?", &["Beat."]);
        t.repeatable = true;
        t.cooldown_turns = c;
        let session = run_all_yes(&story(vec![t]), 12);
        let turns: Vec<u64> = session.firings().iter().map(|f| f.turn).collect();
        let expected: Vec<u64> = (0..12u64)
            .map(|i| 1 + i * (c as u64 + 1))
            .filter(|&x| x <= 12)
            .collect();
        assert_eq!(turns, expected, "cooldown={c}");
    }
}

#[test]
fn non_repeatable_trigger_consumes_actions_then_stops() {
    let t = Trigger::basic("n", "Anything?", &["One.", "Two.", "Three."]);
    let session = run_all_yes(&story(vec![t]), 6);
    let actions: Vec<&str> = session
        .firings()
        .iter()
        .map(|f| f.action.as_str())
        .collect();
    assert_eq!(actions, ["One.", "Two.", "Three."]);
    assert!(!session.drama().runtimes[0].active);
}

#[test]
fn ending_trigger_halts_after_its_action() {
    let t = Trigger::ending("e", "Over?", &["The curtain falls."]);
    let session = run_all_yes(&story(vec![t]), 5);
    assert_eq!(*session.state(), SessionState::Ended);
    assert_eq!(session.lines().last().unwrap().text(), "The curtain falls.");
    assert_eq!(session.turn(), 1);
}
