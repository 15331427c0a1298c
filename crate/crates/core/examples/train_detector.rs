//! Train the form detector on synthetic forms and report per-class AP.
//!
//! ```text
//! cargo run --release --example train_detector -- 200 6
//! ```

use std::time::Instant;

use scriptorium::detector::{DetectorConfig, DetectorModel};
use scriptorium::metrics::{mean_ap, DetectionEvalSet, ImageEval, ScoredBox};
use scriptorium::synth::FormGenerator;
use scriptorium::train::{fit, TrainConfig};
use scriptorium::vocab::Vocabulary;

fn main() -> scriptorium::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_train: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);

    let vocab = Vocabulary::synthetic(30, 3)?;
    let gen = FormGenerator::default();
    let train = gen.generate(&vocab, 0, n_train)?;
    let test = gen.generate(&vocab, 2_000_000, 40)?;

    let mut model = DetectorModel::new(DetectorConfig::default(), 1)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let net = model.clone();
    let start = Instant::now();
    fit(
        &mut model.params,
        &train,
        &cfg,
        11,
        |g, p, form, _| {
            let gt: Vec<_> = form.annotations.iter().map(|a| (a.class, a.bbox)).collect();
            net.loss(g, p, &form.image, &gt)
        },
        |s| println!("epoch={} loss={:.4} elapsed_s={:.1}", s.epoch, s.mean_loss, start.elapsed().as_secs_f64()),
    )?;

    let mut set = DetectionEvalSet::new(0.5);
    for form in &test {
        let detections = model
            .detect(&form.image, 0.05)?
            .into_iter()
            .map(|d| ScoredBox { class: d.class, score: d.score, bbox: d.bbox })
            .collect();
        let ground_truth = form.annotations.iter().map(|a| (a.class, a.bbox)).collect();
        set.images.push(ImageEval { detections, ground_truth });
    }
    let (per_class, map) = mean_ap(&set);
    for (class, ap) in per_class {
        println!("class={} ap={ap:.3}", class.name());
    }
    println!("map={:.3}", map.unwrap_or(0.0));
    Ok(())
}
