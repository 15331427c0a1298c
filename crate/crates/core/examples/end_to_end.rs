//! Train a small detector and word model, then read whole forms: detect,
//! order, recognize and correct against the vocabulary.
//!
//! ```text
//! cargo run --release --example end_to_end -- 80
//! ```

use scriptorium::config::ExperimentConfig;
use scriptorium::experiment::{build_splits, new_recognizer, train_detector, train_recognizer};
use scriptorium::pipeline::{evaluate_pipeline, Pipeline};
use scriptorium::recognizers::RecognizerKind;

fn main() -> scriptorium::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(80);
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 5;
    cfg.data.vocab_size = 20;
    cfg.data.train_forms = n;
    cfg.data.valid_forms = 0;
    cfg.data.test_forms = 5;
    cfg.data.augment = false;
    let splits = build_splits(&cfg)?;

    let (detector, _) = train_detector(&cfg, &splits.train_forms, None, |s| {
        println!("detector epoch {} loss {:.4}", s.epoch, s.mean_loss)
    })?;
    let model = new_recognizer(&cfg, RecognizerKind::Word, &splits.vocab)?;
    let (recognizer, _) = train_recognizer(&cfg, model, &splits.train_crops, |s| {
        println!("word epoch {} loss {:.4}", s.epoch, s.mean_loss)
    })?;

    let pipeline = Pipeline::new(detector, recognizer, splits.vocab.clone());
    for form in &splits.test_forms {
        let result = pipeline.run(&form.image)?;
        println!("truth: {}", form.transcripts_in_order().join(" "));
        println!("read:  {}", result.text);
    }
    let (report, _) = evaluate_pipeline(&splits.test_forms, &pipeline)?;
    println!("WER {:.2}% CER {:.2}%", report.wer.unwrap_or(f64::NAN), report.pipeline_cer.unwrap_or(f64::NAN));
    Ok(())
}
