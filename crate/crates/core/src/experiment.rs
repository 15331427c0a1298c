//! Dataset splits, training and evaluation for a whole experiment.
//!
//! Form seeds: split `train` uses `base + i`, `valid` `base + 1_000_000 + i`
//! and `test` `base + 2_000_000 + i`, where `base = seed * 10_000_000`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::data::{augment_crops, augment_forms, noisy_crops, read_crops, word_crops, write_crops, WordCrop};
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::metrics::{DetectionEvalSet, EvalReport, ImageEval, ScoredBox};
use crate::recognizers::{CharModel, Recognizer, RecognizerKind, Seq2SeqModel, WordModel};
use crate::synth::{read_dataset, write_dataset, FormSample};
use crate::train::{fit, EpochStats};
use crate::vocab::{lexicon_correct, Vocabulary};

pub const VALID_OFFSET: u64 = 1_000_000;
pub const TEST_OFFSET: u64 = 2_000_000;
/// Score threshold used when tracing precision-recall curves.
pub const EVAL_SCORE_THRESHOLD: f64 = 0.01;

/// First form seed of a split.
pub fn split_base(seed: u64, offset: u64) -> u64 {
    seed.wrapping_mul(10_000_000).wrapping_add(offset)
}

/// Every split of one experiment, in memory.
#[derive(Clone, Debug)]
pub struct Splits {
    pub vocab: Vocabulary,
    pub train_forms: Vec<FormSample>,
    /// Originals followed by augmented (possibly flipped) copies.
    pub train_forms_da: Option<Vec<FormSample>>,
    pub valid_forms: Vec<FormSample>,
    pub test_forms: Vec<FormSample>,
    pub train_crops: Vec<WordCrop>,
    /// Originals followed by augmented (never flipped) copies.
    pub train_crops_da: Option<Vec<WordCrop>>,
    pub valid_crops: Vec<WordCrop>,
    pub test_crops: Vec<WordCrop>,
    pub test_crops_noisy: Vec<WordCrop>,
}

pub fn build_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    cfg.validate()?;
    let d = &cfg.data;
    let vocab = Vocabulary::synthetic(d.vocab_size, cfg.seed)?;
    let gen = &d.generator;
    let train_forms = gen.generate(&vocab, split_base(cfg.seed, 0), d.train_forms)?;
    let valid_forms = gen.generate(&vocab, split_base(cfg.seed, VALID_OFFSET), d.valid_forms)?;
    let test_forms = gen.generate(&vocab, split_base(cfg.seed, TEST_OFFSET), d.test_forms)?;
    let train_crops = word_crops(&train_forms)?;
    let valid_crops = word_crops(&valid_forms)?;
    let test_crops = word_crops(&test_forms)?;
    let test_crops_noisy = noisy_crops(&test_crops, &d.augmentation, d.noise_floor, cfg.seed ^ 0x7e57);
    let (train_forms_da, train_crops_da) = if d.augment {
        let mut forms = train_forms.clone();
        forms.extend(augment_forms(&train_forms, &d.augmentation, d.augment_copies, cfg.seed ^ 0xda)?);
        let mut crops = train_crops.clone();
        crops.extend(augment_crops(&train_crops, &d.augmentation, d.augment_copies, cfg.seed ^ 0xdb));
        (Some(forms), Some(crops))
    } else {
        (None, None)
    };
    Ok(Splits {
        vocab,
        train_forms,
        train_forms_da,
        valid_forms,
        test_forms,
        train_crops,
        train_crops_da,
        valid_crops,
        test_crops,
        test_crops_noisy,
    })
}

/// On-disk layout of a generated dataset.
#[derive(Clone, Debug)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataLayout { root: root.into() }
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    /// Full forms: `train`, `train_da`, `valid`, `test`.
    pub fn forms(&self, split: &str) -> PathBuf {
        self.root.join("forms").join(split)
    }

    /// Word crops: `train`, `train_da`, `valid`, `test`, `test_noisy`.
    pub fn crops(&self, split: &str) -> PathBuf {
        self.root.join("crops").join(split)
    }

    pub fn load_vocab(&self) -> Result<Vocabulary> {
        Vocabulary::load(&self.vocab())
    }

    pub fn load_forms(&self, split: &str) -> Result<Vec<FormSample>> {
        read_dataset(&self.forms(split))
    }

    pub fn load_crops(&self, split: &str) -> Result<Vec<WordCrop>> {
        read_crops(&self.crops(split))
    }
}

/// Write every split plus the vocabulary and the config that produced them.
pub fn write_splits(splits: &Splits, cfg: &ExperimentConfig, layout: &DataLayout) -> Result<()> {
    std::fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    splits.vocab.save(&layout.vocab())?;
    cfg.save(&layout.config())?;
    let forms: [(&str, Option<&Vec<FormSample>>); 4] = [
        ("train", Some(&splits.train_forms)),
        ("train_da", splits.train_forms_da.as_ref()),
        ("valid", Some(&splits.valid_forms)),
        ("test", Some(&splits.test_forms)),
    ];
    for (name, set) in forms {
        if let Some(set) = set {
            write_dataset(set, &layout.forms(name))?;
        }
    }
    let crops: [(&str, Option<&Vec<WordCrop>>); 5] = [
        ("train", Some(&splits.train_crops)),
        ("train_da", splits.train_crops_da.as_ref()),
        ("valid", Some(&splits.valid_crops)),
        ("test", Some(&splits.test_crops)),
        ("test_noisy", Some(&splits.test_crops_noisy)),
    ];
    for (name, set) in crops {
        if let Some(set) = set {
            write_crops(set, &layout.crops(name))?;
        }
    }
    Ok(())
}

/// Seed for model initialization of a task.
pub fn init_seed(seed: u64, task: &str) -> u64 {
    task.bytes()
        .fold(seed ^ 0x5eed, |h, b| h.wrapping_mul(0x100_0000_01b3).wrapping_add(b as u64))
}

/// Train the detector, starting from `init` when given.
pub fn train_detector(
    cfg: &ExperimentConfig,
    forms: &[FormSample],
    init: Option<DetectorModel>,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(DetectorModel, Vec<EpochStats>)> {
    let mut model = match init {
        Some(m) => m,
        None => DetectorModel::new(cfg.models.detector.clone(), init_seed(cfg.seed, "detector"))?,
    };
    let net = model.clone();
    let history = fit(
        &mut model.params,
        forms,
        &cfg.schedule.detector,
        init_seed(cfg.seed, "detector-train"),
        |g, p, form, _| {
            let gt: Vec<_> = form.annotations.iter().map(|a| (a.class, a.bbox)).collect();
            net.loss(g, p, &form.image, &gt)
        },
        on_epoch,
    )?;
    Ok((model, history))
}

/// Untrained recognizer of the configured architecture.
pub fn new_recognizer(cfg: &ExperimentConfig, kind: RecognizerKind, vocab: &Vocabulary) -> Result<Recognizer> {
    let seed = init_seed(cfg.seed, kind.name());
    Ok(match kind {
        RecognizerKind::Word => Recognizer::Word(WordModel::new(cfg.models.word.clone(), vocab.clone(), seed)?),
        RecognizerKind::Char => Recognizer::Char(CharModel::new(cfg.models.char.clone(), seed)?),
        RecognizerKind::Seq2seq => Recognizer::Seq2Seq(Seq2SeqModel::new(cfg.models.seq2seq.clone(), seed)?),
    })
}

pub fn train_recognizer(
    cfg: &ExperimentConfig,
    mut model: Recognizer,
    crops: &[WordCrop],
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Recognizer, Vec<EpochStats>)> {
    let kind = model.kind();
    let schedule = cfg.schedule.for_recognizer(kind);
    let history = model.fit(crops, schedule, init_seed(cfg.seed, &format!("{}-train", kind.name())), on_epoch)?;
    Ok((model, history))
}

/// Per-class AP and mAP at IoU 0.5.
pub fn evaluate_detector(model: &DetectorModel, forms: &[FormSample]) -> Result<EvalReport> {
    let images = forms
        .par_iter()
        .map(|f| {
            let detections = model
                .detect(&f.image, EVAL_SCORE_THRESHOLD)?
                .into_iter()
                .map(|d| ScoredBox {
                    class: d.class,
                    score: d.score,
                    bbox: d.bbox,
                })
                .collect();
            let ground_truth = f.annotations.iter().map(|a| (a.class, a.bbox)).collect();
            Ok(ImageEval {
                detections,
                ground_truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let set = DetectionEvalSet {
        images,
        iou_threshold: 0.5,
    };
    Ok(EvalReport::default().with_detection(&set))
}

/// Lexicon-corrected predictions paired with ground truth.
pub fn recognize_crops(model: &Recognizer, vocab: &Vocabulary, crops: &[WordCrop]) -> Result<Vec<(String, String)>> {
    crops
        .par_iter()
        .map(|c| {
            let text = model.recognize(&c.image)?.text;
            Ok((c.text.clone(), lexicon_correct(&text, vocab)))
        })
        .collect()
}

/// WA and CER on crops, after lexicon correction.
pub fn evaluate_recognizer(model: &Recognizer, vocab: &Vocabulary, crops: &[WordCrop]) -> Result<EvalReport> {
    EvalReport::recognition(&recognize_crops(model, vocab, crops)?)
}

/// Write `model` next to `dir` under the conventional file name.
pub fn default_checkpoint_path(dir: &Path, task: &str) -> PathBuf {
    dir.join(format!("{task}.ckpt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.vocab_size = 8;
        cfg.data.train_forms = 3;
        cfg.data.valid_forms = 2;
        cfg.data.test_forms = 2;
        cfg
    }

    #[test]
    fn splits_are_disjoint_and_augmented_is_larger() {
        let s = build_splits(&tiny()).unwrap();
        let seeds = |f: &[FormSample]| f.iter().map(|x| x.seed).collect::<Vec<_>>();
        let (a, b, c) = (seeds(&s.train_forms), seeds(&s.valid_forms), seeds(&s.test_forms));
        assert!(a.iter().all(|x| !b.contains(x) && !c.contains(x)));
        assert!(b.iter().all(|x| !c.contains(x)));
        assert!(s.train_forms_da.unwrap().len() > s.train_forms.len());
        assert!(s.train_crops_da.unwrap().len() > s.train_crops.len());
        assert_eq!(s.test_crops_noisy.len(), s.test_crops.len());
    }

    #[test]
    fn written_splits_are_byte_identical_across_runs() {
        let cfg = tiny();
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for d in [&d1, &d2] {
            write_splits(&build_splits(&cfg).unwrap(), &cfg, &DataLayout::new(d.path())).unwrap();
        }
        for sub in ["forms/train_da", "crops/test_noisy", "forms/test"] {
            let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(sub).join("manifest.jsonl")).unwrap();
            assert_eq!(read(&d1), read(&d2));
        }
        let layout = DataLayout::new(d1.path());
        assert_eq!(layout.load_forms("valid").unwrap().len(), 2);
        assert_eq!(layout.load_vocab().unwrap().len(), 8);
    }
}
