//! Writes the demo dataset and a scripted transcript that answers for it.
//!
//! cargo run -p featsearch --example make_demo -- <out_dir>

#[path = "../tests/common/fixture.rs"]
mod fixture;

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&out)?;
    let corpus = fixture::generate(720, 11);
    std::fs::write(out.join("demo.jsonl"), corpus.jsonl())?;
    let t = fixture::transcript(&corpus, &fixture::search_schemas());
    std::fs::write(out.join("demo_transcript.json"), serde_json::to_string(&t)?)?;
    println!("wrote {} rows to {}", corpus.rows.len(), out.display());
    Ok(())
}
