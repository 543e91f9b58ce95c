//! One step against a real chat-completions endpoint. Reads DL_API_KEY,
//! DL_API_BASE_URL and DL_MODEL; does nothing without a key.

use dramaturge::backend::{HttpBackend, ENV_API_KEY};
use dramaturge::engine::{EngineConfig, Mode, Session};
use dramaturge::story::parse_story_definition;

fn main() {
    if std::env::var(ENV_API_KEY).map_or(true, |k| k.is_empty()) {
        println!("{ENV_API_KEY} is not set; skipping the live call");
        return;
    }
    let (backend, model) = HttpBackend::from_env().unwrap();
    println!("using {} with model {model}", backend.endpoint());
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sepideh_byron.json");
    let def = parse_story_definition(&std::fs::read_to_string(path).unwrap()).unwrap();
    let mut session = Session::with_config(
        "live",
        def,
        Mode::Autonomous,
        EngineConfig::with_model(&model),
    );
    match session.run_autonomous(&backend, 3) {
        Ok(()) => println!("{}", session.render()),
        Err(e) => println!("stopped: {e}\nevents: {:?}", session.events()),
    }
}
