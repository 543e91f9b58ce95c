//! Run a seeded batch against the scripted fixture, then aggregate the
//! exported transcripts.

use dramaturge::cli::{cmd_batch, cmd_stats, BackendChoice, RunOptions};
use dramaturge::engine::Mode;

fn main() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let story = format!("{dir}/fixtures/sepideh_byron.json");
    let backend: BackendChoice = format!("scripted:{dir}/fixtures/sepideh_byron.scripted.json")
        .parse()
        .unwrap();
    let out = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        mode: Mode::Autonomous,
        max_turns: 3,
        seed: Some(1),
        out_dir: out.path().to_path_buf(),
    };
    let mut stdout = std::io::stdout();
    cmd_batch(story.as_ref(), &backend, 8, 4, &opts, &mut stdout).unwrap();
    println!("\nrecomputed from {}:", out.path().display());
    cmd_stats(out.path(), &mut stdout).unwrap();
}
