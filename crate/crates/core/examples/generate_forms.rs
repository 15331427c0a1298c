//! Render a few synthetic forms and write them as a dataset directory.
//!
//! ```text
//! cargo run --example generate_forms -- /tmp/forms 4
//! ```

use std::path::PathBuf;

use scriptorium::synth::{write_dataset, FormGenerator};
use scriptorium::vocab::Vocabulary;

fn main() -> scriptorium::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "forms".into()));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let vocab = Vocabulary::synthetic(30, 7)?;
    let forms = FormGenerator::default().generate(&vocab, 1000, count)?;
    let manifest = write_dataset(&forms, &dir)?;
    for f in &forms {
        println!("seed={} annotations={} words={:?}", f.seed, f.annotations.len(), f.transcripts_in_order());
    }
    println!("manifest={}", manifest.display());
    Ok(())
}
