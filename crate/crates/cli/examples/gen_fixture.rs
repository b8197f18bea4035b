//! Regenerates the bundled 50-article fixture under crates/cli/fixtures/.
//!
//! Run from the workspace root:
//!   cargo run -p newstweet-cli --example gen_fixture

use std::path::PathBuf;

use newstweet_core::synth::{generate, write_fixture, SynthConfig};

fn main() {
    let config = SynthConfig {
        articles: 50,
        tweets: 200,
        creators: 20,
        topics: 10,
        seed: 11,
        base_time: 1_600_000_000,
        with_html: true,
    };
    let corpus = generate(&config);
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    write_fixture(&dir, &corpus).expect("fixture written");
    println!(
        "wrote {} articles, {} tweets, {} creators to {}",
        corpus.articles.len(),
        corpus.tweets.len(),
        corpus.creators.len(),
        dir.display()
    );
}
