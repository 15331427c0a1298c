//! Train one recognizer on ground-truth word crops, optionally with
//! augmented copies, and report word accuracy and CER on clean and noisy
//! test crops.
//!
//! ```text
//! cargo run --release --example train_recognizer -- seq2seq 200 6 da
//! ```

use std::time::Instant;

use scriptorium::data::{augment_crops, noisy_crops, word_crops, WordCrop};
use scriptorium::metrics::{mean_cer, word_accuracy};
use scriptorium::recognizers::{
    CharConfig, CharModel, Recognizer, RecognizerKind, Seq2SeqConfig, Seq2SeqModel, WordConfig,
    WordModel,
};
use scriptorium::synth::{AugRanges, FormGenerator};
use scriptorium::train::TrainConfig;
use scriptorium::vocab::{lexicon_correct, Vocabulary};

fn evaluate(model: &Recognizer, vocab: &Vocabulary, crops: &[WordCrop]) -> scriptorium::Result<(f64, f64)> {
    let mut pairs = Vec::new();
    for c in crops {
        let text = lexicon_correct(&model.recognize(&c.image)?.text, vocab);
        pairs.push((c.text.clone(), text));
    }
    Ok((word_accuracy(&pairs)?, mean_cer(&pairs)?))
}

fn main() -> scriptorium::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind = match args.next().as_deref() {
        Some("word") => RecognizerKind::Word,
        Some("char") => RecognizerKind::Char,
        _ => RecognizerKind::Seq2seq,
    };
    let n_forms: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let with_da = args.next().as_deref() == Some("da");

    let vocab = Vocabulary::synthetic(30, 3)?;
    let gen = FormGenerator::default();
    let mut train = word_crops(&gen.generate(&vocab, 0, n_forms)?)?;
    let test = word_crops(&gen.generate(&vocab, 2_000_000, 20)?)?;
    let ranges = AugRanges::default();
    let noisy = noisy_crops(&test, &ranges, 0.02, 77);
    if with_da {
        train.extend(augment_crops(&train, &ranges, 1, 5));
    }
    println!("kind={} train_crops={} test_crops={}", kind.name(), train.len(), test.len());

    let mut model = match kind {
        RecognizerKind::Word => Recognizer::Word(WordModel::new(WordConfig::default(), vocab.clone(), 1)?),
        RecognizerKind::Char => Recognizer::Char(CharModel::new(CharConfig::default(), 1)?),
        RecognizerKind::Seq2seq => Recognizer::Seq2Seq(Seq2SeqModel::new(Seq2SeqConfig::default(), 1)?),
    };
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    model.fit(&train, &cfg, 11, |s| {
        println!("epoch={} loss={:.4} elapsed_s={:.1}", s.epoch, s.mean_loss, start.elapsed().as_secs_f64())
    })?;
    let (wa, cer) = evaluate(&model, &vocab, &test)?;
    let (nwa, ncer) = evaluate(&model, &vocab, &noisy)?;
    println!("clean_wa={wa:.3} clean_cer={cer:.3} noisy_wa={nwa:.3} noisy_cer={ncer:.3}");
    Ok(())
}
