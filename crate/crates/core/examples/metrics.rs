//! Edit distances, recognition scores, lexicon correction and detection AP
//! on small hand-written cases.
//!
//! ```text
//! cargo run --example metrics
//! ```

use scriptorium::geometry::{BBox, FormClass};
use scriptorium::metrics::{average_precision, cer, dl_distance, wer, DetectionEvalSet, EvalReport, ImageEval, ScoredBox};
use scriptorium::vocab::{lexicon_correct, Vocabulary};

fn main() -> scriptorium::Result<()> {
    for (a, b) in [("VALVE", "VALVE"), ("VALVE", "VLAVE"), ("CA", "ABC"), ("PUMP", "")] {
        println!("dl({a:?}, {b:?}) = {}", dl_distance(a, b));
    }
    println!("cer(INSPECTED, INSPECTEO) = {:.2}%", cer("INSPECTED", "INSPECTEO")?);
    println!("wer = {:.2}%", wer(&["CHECK", "VALVE", "LEAK"], &["CHECK", "LEAK", "VALVE"])?);

    let pairs = [("VALVE", "VALVE"), ("PUMP", "PUMB"), ("SEAL", "SEAL")];
    println!("{}", serde_json::to_string(&EvalReport::recognition(&pairs)?).expect("report serializes"));

    let vocab = Vocabulary::new(["INSPECTED", "INSTALLED", "VALVE"].map(String::from).to_vec())?;
    for w in ["INSPECTEO", "VALV", "XQ7PW"] {
        println!("lexicon_correct({w}) = {}", lexicon_correct(w, &vocab));
    }

    let b = |x0: f64| BBox::new(x0, 0.0, x0 + 40.0, 20.0).expect("valid box");
    let mut set = DetectionEvalSet::new(0.5);
    set.images.push(ImageEval {
        detections: vec![
            ScoredBox { class: FormClass::Word, score: 0.9, bbox: b(0.0) },
            ScoredBox { class: FormClass::Word, score: 0.8, bbox: b(200.0) },
            ScoredBox { class: FormClass::Word, score: 0.7, bbox: b(102.0) },
        ],
        ground_truth: vec![(FormClass::Word, b(0.0)), (FormClass::Word, b(100.0))],
    });
    println!("word AP@0.5 = {:.4}", average_precision(&set, FormClass::Word).unwrap_or(0.0));
    Ok(())
}
