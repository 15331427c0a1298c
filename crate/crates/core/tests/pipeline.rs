use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scriptorium::detector::{DetectorConfig, DetectorModel, Detection};
use scriptorium::geometry::{BBox, FormClass};
use scriptorium::metrics::{wer, EvalReport};
use scriptorium::pipeline::{evaluate_pipeline, reading_order, Pipeline};
use scriptorium::recognizers::{Recognizer, Seq2SeqConfig, Seq2SeqModel};
use scriptorium::synth::{Annotation, FormGenerator, FormSample, GrayImage};
use scriptorium::vocab::Vocabulary;
use scriptorium::Error;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Does `order` satisfy the reading rule? Lines are the connected
/// components of "centre distance <= half the mean height"; each line must
/// be contiguous, lines ascend by mean centre, words ascend by x0.
fn satisfies_rule(boxes: &[BBox], order: &[usize]) -> bool {
    let n = boxes.len();
    let tol = 0.5 * boxes.iter().map(BBox::height).sum::<f64>() / n as f64;
    let cy: Vec<f64> = boxes.iter().map(|b| b.center().1).collect();
    let mut line = (0..n).collect::<Vec<_>>();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if (cy[i] - cy[j]).abs() <= tol && line[j] > line[i] {
                    line[j] = line[i];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mean = |l: usize| {
        let m: Vec<f64> = (0..n).filter(|&i| line[i] == l).map(|i| cy[i]).collect();
        m.iter().sum::<f64>() / m.len() as f64
    };
    order.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        if line[a] == line[b] {
            boxes[a].x0 <= boxes[b].x0
        } else {
            mean(line[a]) < mean(line[b])
                && !order.iter().skip_while(|&&k| k != b).any(|&k| line[k] == line[a])
        }
    })
}

#[test]
fn reading_order_matches_rule_for_every_input_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.gen_range(1..=4);
        let boxes: Vec<BBox> = (0..n)
            .map(|_| {
                let (x, y) = (rng.gen_range(0.0..300.0), rng.gen_range(0.0..120.0));
                BBox::new(x, y, x + rng.gen_range(10.0..60.0), y + rng.gen_range(10.0..30.0)).unwrap()
            })
            .collect();
        for perm in permutations(n) {
            let input: Vec<BBox> = perm.iter().map(|&i| boxes[i]).collect();
            let order = reading_order(&input);
            assert!(satisfies_rule(&input, &order), "{input:?} -> {order:?}");
        }
    }
}

#[test]
fn two_lines_example() {
    let b = |x0: f64, y0: f64| BBox::new(x0, y0, x0 + 40.0, y0 + 20.0).unwrap();
    let boxes = [b(200.0, 10.0), b(10.0, 60.0), b(10.0, 12.0)];
    assert_eq!(reading_order(&boxes), vec![2, 0, 1]);
}

fn pipeline(vocab: &Vocabulary) -> Pipeline {
    Pipeline::new(
        DetectorModel::new(DetectorConfig::default(), 1).unwrap(),
        Recognizer::Seq2Seq(Seq2SeqModel::new(Seq2SeqConfig::default(), 2).unwrap()),
        vocab.clone(),
    )
}

#[test]
fn non_word_detections_and_input_order_do_not_change_text() {
    let vocab = Vocabulary::synthetic(20, 1).unwrap();
    let form = &FormGenerator::default().generate(&vocab, 5, 1).unwrap()[0];
    let p = pipeline(&vocab);
    let mut dets: Vec<Detection> = form
        .words()
        .map(|a| Detection {
            bbox: a.bbox,
            class: FormClass::Word,
            score: 0.9,
        })
        .collect();
    let base = p.recognize_detections(&form.image, &dets).unwrap();
    assert_eq!(base.words.len(), dets.len());
    assert_eq!(base.text, base.words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" "));

    dets.reverse();
    assert_eq!(p.recognize_detections(&form.image, &dets).unwrap(), base);
    let clear = BBox::new(440.0, 225.0, 500.0, 250.0).unwrap();
    assert!(form.annotations.iter().all(|a| a.bbox.intersection(&clear) == 0.0));
    let mut with_stamp = dets.clone();
    with_stamp.push(Detection {
        bbox: clear,
        class: FormClass::Stamp,
        score: 0.99,
    });
    assert_eq!(p.recognize_detections(&form.image, &with_stamp).unwrap().text, base.text);

    // A stronger detection of another class over a word wins the region.
    let covered = dets[0].bbox;
    dets.push(Detection {
        bbox: covered,
        class: FormClass::Stamp,
        score: 0.99,
    });
    assert_eq!(p.recognize_detections(&form.image, &dets).unwrap().words.len(), base.words.len() - 1);
    assert_eq!(p.recognize_detections(&form.image, &[]).unwrap().text, "");
}

#[test]
fn pipeline_is_deterministic() {
    let vocab = Vocabulary::synthetic(20, 1).unwrap();
    let form = &FormGenerator::default().generate(&vocab, 9, 1).unwrap()[0];
    let p = pipeline(&vocab);
    assert_eq!(p.run(&form.image).unwrap(), p.run(&form.image).unwrap());
    // The untrained detector starts biased towards background.
    assert_eq!(p.run(&GrayImage::filled(512, 256, 255)).unwrap().text, "");
}

#[test]
fn missing_order_index_is_a_data_error() {
    let vocab = Vocabulary::synthetic(20, 1).unwrap();
    let form = FormSample {
        image: GrayImage::filled(512, 256, 255),
        annotations: vec![Annotation {
            bbox: BBox::new(10.0, 10.0, 60.0, 30.0).unwrap(),
            class: FormClass::Word,
            transcript: Some(vocab.word(0).to_string()),
            order_index: None,
        }],
        seed: 0,
    };
    let e = evaluate_pipeline(&[form], &pipeline(&vocab)).unwrap_err();
    assert!(matches!(e, Error::Dataset { .. }));
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn report_examples() {
    let same = [("VALVE", "VALVE"), ("PUMP", "PUMP")];
    let r = EvalReport::recognition(&same).unwrap();
    assert_eq!((r.wa, r.cer), (Some(100.0), Some(0.0)));
    let empty = [("VALVE", ""), ("PUMP", "")];
    assert_eq!(EvalReport::recognition(&empty).unwrap().wa, Some(0.0));
    assert_eq!(wer(&["A", "B"], &["C", "D"]).unwrap(), 100.0);
    let json = serde_json::to_string(&r).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["wa", "cer", "wer", "pipeline_cer", "per_class_ap", "map"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}
