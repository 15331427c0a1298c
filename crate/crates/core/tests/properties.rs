use proptest::prelude::*;

use scriptorium::config::ExperimentConfig;
use scriptorium::ctc::{ctc_loss, Alphabet, TimeLogits};
use scriptorium::detector::{decode_offsets, encode_offsets, make_anchors, nms, Detection};
use scriptorium::geometry::{iou, BBox, FormClass};
use scriptorium::metrics::{average_precision, cer, dl_distance, mean_ap, DetectionEvalSet, ImageEval, ScoredBox};
use scriptorium::pipeline::reading_order;
use scriptorium::synth::{augment, AugSpec, Flip, GrayImage, Morph};
use scriptorium::vocab::{lexicon_correct, Vocabulary};

fn word(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[ABC]{{0,{max}}}")).unwrap()
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..400.0f64, 0.0..200.0f64, 1.0..80.0f64, 1.0..40.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn image(max_w: usize, max_h: usize) -> impl Strategy<Value = GrayImage> {
    (1..=max_w, 1..=max_h).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h).prop_map(move |px| GrayImage::new(w, h, px).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dl_is_a_metric(a in word(6), b in word(6), c in word(6)) {
        prop_assert_eq!(dl_distance(&a, &a), 0);
        prop_assert_eq!(dl_distance(&a, &b), dl_distance(&b, &a));
        prop_assert!(dl_distance(&a, &c) <= dl_distance(&a, &b) + dl_distance(&b, &c));
        prop_assert!(dl_distance(&a, &b) <= a.len().max(b.len()));
    }

    #[test]
    fn cer_is_zero_only_for_exact_matches(a in word(6).prop_filter("non-empty", |s| !s.is_empty()), b in word(6)) {
        let v = cer(&a, &b).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, a == b);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let x = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, iou(&b, &a).unwrap());
        prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offsets_round_trip(gt in bbox(), gx in 0usize..8, gy in 0usize..4, k in 0usize..3) {
        let anchors = make_anchors(8, 4, &[(36.0, 20.0), (68.0, 22.0), (112.0, 24.0)]);
        let a = anchors.iter().find(|a| a.grid == (gx, gy, k)).unwrap();
        let back = decode_offsets(&encode_offsets(&gt, a), a);
        for (p, q) in back.as_array().iter().zip(gt.as_array()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn nms_keeps_a_non_overlapping_subset(
        boxes in proptest::collection::vec((bbox(), 0.0..1.0f64, 0usize..2), 0..12),
        thr in 0.1..0.9f64,
    ) {
        let dets: Vec<Detection> = boxes
            .iter()
            .map(|(b, s, c)| Detection { bbox: *b, class: FormClass::from_index(*c).unwrap(), score: *s })
            .collect();
        let kept = nms(&dets, thr);
        prop_assert!(kept.iter().all(|k| dets.contains(k)));
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                if a.class == b.class {
                    prop_assert!(a.bbox.iou_unchecked(&b.bbox) <= thr);
                }
            }
        }
        let best = dets.iter().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(dets.is_empty() || kept.iter().any(|k| k.score == best));
    }

    #[test]
    fn ap_depends_only_on_score_ranks(
        dets in proptest::collection::vec((bbox(), 0.01..1.0f64), 1..8),
        gts in proptest::collection::vec(bbox(), 1..4),
        factor in 0.01..100.0f64,
    ) {
        let build = |f: f64| {
            let mut set = DetectionEvalSet::new(0.5);
            set.images.push(ImageEval {
                detections: dets
                    .iter()
                    .map(|(b, s)| ScoredBox { class: FormClass::Word, score: s * f, bbox: *b })
                    .collect(),
                ground_truth: gts.iter().map(|b| (FormClass::Word, *b)).collect(),
            });
            set
        };
        let a = average_precision(&build(1.0), FormClass::Word).unwrap();
        let b = average_precision(&build(factor), FormClass::Word).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn mean_ap_of_identical_classes_equals_class_ap(
        dets in proptest::collection::vec((bbox(), 0.01..1.0f64), 1..6),
        gts in proptest::collection::vec(bbox(), 1..4),
    ) {
        let mut set = DetectionEvalSet::new(0.5);
        let classes = [FormClass::Word, FormClass::Stamp];
        set.images.push(ImageEval {
            detections: classes
                .iter()
                .flat_map(|&c| dets.iter().map(move |(b, s)| ScoredBox { class: c, score: *s, bbox: *b }))
                .collect(),
            ground_truth: classes.iter().flat_map(|&c| gts.iter().map(move |b| (c, *b))).collect(),
        });
        let word = average_precision(&set, FormClass::Word).unwrap();
        let (_, m) = mean_ap(&set);
        prop_assert!((m.unwrap() - word).abs() < 1e-12);
    }

    #[test]
    fn ctc_loss_is_a_negative_log_probability(
        scores in proptest::collection::vec(-4.0..4.0f64, 24),
        target in word(3),
    ) {
        let alphabet = Alphabet::new("ABC".chars()).unwrap();
        let logits = TimeLogits::from_scores(6, 4, scores).unwrap();
        let l = ctc_loss(&logits, &target, &alphabet).unwrap();
        prop_assert!(l.loss >= 0.0 && l.loss.is_finite());
    }

    #[test]
    fn reading_order_is_a_permutation_independent_of_input_order(
        boxes in proptest::collection::vec(bbox(), 0..10),
        rotate in 0usize..10,
    ) {
        let order = reading_order(&boxes);
        let mut seen = order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..boxes.len()).collect::<Vec<_>>());
        let mut moved = boxes.clone();
        moved.reverse();
        if !moved.is_empty() {
            let r = rotate % moved.len();
            moved.rotate_left(r);
        }
        let a: Vec<[f64; 4]> = order.iter().map(|&i| boxes[i].as_array()).collect();
        let b: Vec<[f64; 4]> = reading_order(&moved).iter().map(|&i| moved[i].as_array()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn augment_keeps_dimensions(
        img in image(24, 16),
        pepper in 0.0..0.2f64,
        strokes in 0usize..4,
        sigma in 0.0..30.0f64,
        morph in 0usize..3,
        flip in 0usize..3,
        seed in any::<u64>(),
    ) {
        let spec = AugSpec {
            pepper_rate: pepper,
            stroke_count: strokes,
            gaussian_sigma: sigma,
            morph: [Morph::None, Morph::Erode, Morph::Dilate][morph],
            flip: [Flip::None, Flip::Horizontal, Flip::Vertical][flip],
        };
        let out = augment(&img, &spec, seed);
        prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
        prop_assert_eq!(augment(&img, &spec, seed), out);
    }

    #[test]
    fn opening_removes_isolated_pepper(
        w in 3usize..20,
        h in 3usize..20,
        spots in proptest::collection::vec((0usize..10, 0usize..10, 0u8..200), 0..6),
    ) {
        // Pixels on a 2-spaced lattice are never 8-adjacent.
        let mut img = GrayImage::filled(w, h, 255);
        for (x, y, v) in spots {
            let (x, y) = ((2 * x) % w, (2 * y) % h);
            if x % 2 == 0 && y % 2 == 0 {
                img.set(x, y, v);
            }
        }
        let only = |morph| AugSpec { morph, ..AugSpec::default() };
        let opened = augment(&augment(&img, &only(Morph::Erode), 0), &only(Morph::Dilate), 0);
        prop_assert!(opened.pixels().iter().all(|&p| p == 255));
    }

    #[test]
    fn pgm_round_trip(img in image(20, 20)) {
        prop_assert_eq!(GrayImage::from_pgm(&img.to_pgm()).unwrap(), img);
    }

    #[test]
    fn lexicon_correction_invariants(input in proptest::string::string_regex("[A-Y0-9]{1,9}").unwrap()) {
        let vocab = Vocabulary::synthetic(30, 4).unwrap();
        let out = lexicon_correct(&input, &vocab);
        prop_assert_eq!(lexicon_correct(&out, &vocab), out.clone());
        if out != input {
            prop_assert!(vocab.contains(&out));
            prop_assert!(dl_distance(&input, &out) <= 2);
        }
    }

    #[test]
    fn config_round_trip(seed in 0..=i64::MAX as u64, forms in 1usize..5000, lr in 1e-5..0.1f64, lambda in 0.0..2.0f64) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.data.train_forms = forms;
        cfg.schedule.seq2seq.learning_rate = lr;
        cfg.models.seq2seq.lambda_ctc = lambda;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
