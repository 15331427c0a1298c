//! Detect, keep Word boxes, crop, recognize, correct against the lexicon,
//! restore reading order and join the words into a line of text.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::detector::{Detection, DetectorModel};
use crate::error::{Error, Result};
use crate::geometry::{BBox, FormClass};
use crate::metrics::{pipeline_cer, wer, EvalReport};
use crate::recognizers::{crop_word, Recognizer};
use crate::synth::{FormSample, GrayImage};
use crate::vocab::{lexicon_correct, Vocabulary};

/// Indices of `boxes` in reading order. Boxes whose vertical centres are
/// within half the mean box height share a line (transitively); lines run
/// top to bottom by mean centre, words left to right by `x0`.
pub fn reading_order(boxes: &[BBox]) -> Vec<usize> {
    let n = boxes.len();
    if n == 0 {
        return Vec::new();
    }
    let mean_h = boxes.iter().map(BBox::height).sum::<f64>() / n as f64;
    let tol = 0.5 * mean_h;
    let cy: Vec<f64> = boxes.iter().map(|b| b.center().1).collect();

    // Union-find over the "same line" relation.
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (cy[i] - cy[j]).abs() <= tol {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut lines: Vec<Vec<usize>> = Vec::new();
    let mut line_of = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if line_of[r] == usize::MAX {
            line_of[r] = lines.len();
            lines.push(Vec::new());
        }
        lines[line_of[r]].push(i);
    }
    let key = |i: usize| (boxes[i].x0, boxes[i].x1, cy[i], boxes[i].y0, boxes[i].y1);
    for line in &mut lines {
        line.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap().then(a.cmp(&b)));
    }
    let mean_y = |l: &Vec<usize>| l.iter().map(|&i| cy[i]).sum::<f64>() / l.len() as f64;
    // Ties between lines fall back to their first box's key so the result
    // does not depend on input order.
    lines.sort_by(|a, b| {
        mean_y(a)
            .partial_cmp(&mean_y(b))
            .unwrap()
            .then_with(|| key(a[0]).partial_cmp(&key(b[0])).unwrap())
    });
    lines.into_iter().flatten().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineWord {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub text: String,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PipelineResult {
    pub words: Vec<PipelineWord>,
    pub text: String,
}

/// Trained detector, recognizer and lexicon.
pub struct Pipeline {
    pub detector: DetectorModel,
    pub recognizer: Recognizer,
    pub vocab: Vocabulary,
    /// Detections below this score are dropped.
    pub score_threshold: f64,
    /// Largest fraction of a detection that may be covered by a
    /// higher-scoring one of any class.
    pub max_cover: f64,
}

/// Pixels darker than this count as word ink when refining boxes; ruled
/// lines are lighter.
const REFINE_INK: u8 = 140;

/// Runs of ink along one axis, merging runs whose blank gap is at most
/// `max_gap`.
fn ink_runs(len: usize, max_gap: usize, inked: impl Fn(usize) -> bool) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for i in (0..len).filter(|&i| inked(i)) {
        match runs.last_mut() {
            Some(r) if i - r.1 <= max_gap + 1 => r.1 = i,
            _ => runs.push((i, i)),
        }
    }
    runs
}

/// The ink run that overlaps `[a, b)` the most.
fn best_run(runs: &[(usize, usize)], a: f64, b: f64) -> Option<(usize, usize)> {
    let overlap = |r: &(usize, usize)| (b.min(r.1 as f64 + 1.0) - a.max(r.0 as f64)).max(0.0);
    runs.iter()
        .filter(|r| overlap(r) > 0.0)
        .max_by(|p, q| overlap(p).total_cmp(&overlap(q)).then(q.0.cmp(&p.0)))
        .copied()
}

/// Snap a detected word box to the ink it covers: extend or trim the
/// horizontal edges to the surrounding run of letters, then the vertical
/// edges to that run's ink. Letters are solid vertically, so rows merge
/// only across tiny gaps. Boxes with no ink are returned unchanged.
pub fn refine_to_ink(form: &GrayImage, bbox: &BBox) -> BBox {
    let (w, h) = (form.width(), form.height());
    let max_gap = (0.4 * bbox.height()).round().max(1.0) as usize;
    let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
    let (ry0, ry1) = (clamp(bbox.y0.floor(), h), clamp(bbox.y1.ceil(), h));
    let ink_cols = |y0: usize, y1: usize| ink_runs(w, max_gap, |x| (y0..y1).any(|y| form.get(x, y) < REFINE_INK));
    let Some((x0, x1)) = best_run(&ink_cols(ry0, ry1), bbox.x0, bbox.x1) else {
        return *bbox;
    };
    let rows = ink_runs(h, 2, |y| (x0..=x1).any(|x| form.get(x, y) < REFINE_INK));
    let Some((y0, y1)) = best_run(&rows, bbox.y0, bbox.y1) else {
        return *bbox;
    };
    // Slanted letters can reach past the detected rows; widen once more.
    let (x0, x1) = best_run(&ink_cols(y0, y1 + 1), x0 as f64, x1 as f64 + 1.0).unwrap_or((x0, x1));
    BBox {
        x0: x0 as f64,
        y0: y0 as f64,
        x1: (x1 + 1) as f64,
        y1: (y1 + 1) as f64,
    }
}

/// Class-agnostic suppression: visit detections by descending score and
/// drop any whose area is more than `max_cover` covered by one already kept.
/// Form elements do not overlap, so such boxes are duplicates or a second
/// reading of another element.
pub fn suppress_overlaps(detections: &[Detection], max_cover: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &detections[i];
        let smaller = |k: &Detection| k.bbox.area().min(d.bbox.area());
        if kept.iter().all(|k| k.bbox.intersection(&d.bbox) <= max_cover * smaller(k)) {
            kept.push(d.clone());
        }
    }
    kept
}

impl Pipeline {
    pub fn new(detector: DetectorModel, recognizer: Recognizer, vocab: Vocabulary) -> Self {
        let score_threshold = detector.config.score_threshold;
        Pipeline {
            detector,
            recognizer,
            vocab,
            score_threshold,
            max_cover: 0.5,
        }
    }

    /// Recognize the Word detections of one form.
    pub fn recognize_detections(&self, form: &GrayImage, detections: &[Detection]) -> Result<PipelineResult> {
        let refined: Vec<Detection> = detections
            .iter()
            .map(|d| match d.class {
                FormClass::Word => Detection {
                    bbox: refine_to_ink(form, &d.bbox),
                    ..d.clone()
                },
                _ => d.clone(),
            })
            .collect();
        let kept = suppress_overlaps(&refined, self.max_cover);
        let boxes: Vec<BBox> = kept.iter().filter(|d| d.class == FormClass::Word).map(|d| d.bbox).collect();
        let mut out = Vec::with_capacity(boxes.len());
        for i in reading_order(&boxes) {
            let crop = crop_word(form, &boxes[i])?;
            let rec = self.recognizer.recognize(&crop)?;
            out.push(PipelineWord {
                bbox: boxes[i].as_array(),
                text: lexicon_correct(&rec.text, &self.vocab),
                score: rec.score,
            });
        }
        let text = out.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
        Ok(PipelineResult { words: out, text })
    }

    pub fn run(&self, form: &GrayImage) -> Result<PipelineResult> {
        let detections = self.detector.detect(form, self.score_threshold)?;
        self.recognize_detections(form, &detections)
    }
}

/// Per-form WER and pipeline CER against the ground-truth reading order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormScore {
    pub seed: u64,
    pub wer: f64,
    pub cer: f64,
}

/// Run the pipeline on every form; WER and CER are unweighted means of
/// the per-form values.
pub fn evaluate_pipeline(
    forms: &[FormSample],
    pipeline: &Pipeline,
) -> Result<(EvalReport, Vec<FormScore>)> {
    let scores: Vec<FormScore> = forms
        .par_iter()
        .map(|f| {
            let truth = ground_truth_words(f)?;
            let predicted = pipeline.run(&f.image)?;
            let pred: Vec<&str> = predicted.words.iter().map(|w| w.text.as_str()).collect();
            Ok(FormScore {
                seed: f.seed,
                wer: wer(&truth, &pred)?,
                cer: pipeline_cer(&truth, &pred)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((aggregate(&scores)?, scores))
}

/// Mean of per-form scores as a report.
pub fn aggregate(scores: &[FormScore]) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::Invalid("no forms to evaluate".into()));
    }
    let n = scores.len() as f64;
    Ok(EvalReport {
        wer: Some(scores.iter().map(|s| s.wer).sum::<f64>() / n),
        pipeline_cer: Some(scores.iter().map(|s| s.cer).sum::<f64>() / n),
        ..EvalReport::default()
    })
}

/// Word transcripts of a form in ground-truth order.
pub fn ground_truth_words(form: &FormSample) -> Result<Vec<&str>> {
    let mut words = Vec::new();
    for a in form.words() {
        let (Some(i), Some(t)) = (a.order_index, a.transcript.as_deref()) else {
            return Err(Error::dataset(
                format!("form {}", form.seed),
                "order_index",
                "every word needs an order_index and a transcript",
            ));
        };
        words.push((i, t));
    }
    words.sort_by_key(|w| w.0);
    Ok(words.into_iter().map(|w| w.1).collect())
}

/// One prediction-dump line.
#[derive(Clone, Debug, Serialize)]
pub struct PredictionRecord<'a> {
    pub image: String,
    pub words: &'a [PipelineWord],
    pub text: &'a str,
}

pub fn prediction_line(image: &Path, result: &PipelineResult) -> Result<String> {
    let rec = PredictionRecord {
        image: image.display().to_string(),
        words: &result.words,
        text: &result.text,
    };
    serde_json::to_string(&rec).map_err(|e| Error::Invalid(e.to_string()))
}

/// Grey copy of the form with each recognized box outlined and its text
/// drawn above it.
pub fn render_overlay(form: &GrayImage, result: &PipelineResult) -> GrayImage {
    let mut out = form.clone();
    for v in out.pixels_mut() {
        *v = 128 + *v / 2;
    }
    for w in &result.words {
        let [x0, y0, x1, y1] = w.bbox;
        let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)];
        out.draw_polyline(&corners, 1.5, 0);
        let label = crate::synth::render_label(&w.text, 1.2);
        let top = (y0 - label.height() as f64 - 1.0).max(0.0);
        out.paste_min(&label, x0.max(0.0) as isize, top as isize);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn suppression_is_class_agnostic() {
        let d = |bbox, class, score| Detection { bbox, class, score };
        let dets = [
            d(b(0.0, 0.0, 100.0, 20.0), FormClass::Word, 0.9),
            d(b(60.0, 0.0, 120.0, 20.0), FormClass::Word, 0.8),
            d(b(200.0, 0.0, 260.0, 20.0), FormClass::Word, 0.7),
            d(b(195.0, 0.0, 265.0, 22.0), FormClass::Date, 0.95),
            d(b(300.0, 0.0, 340.0, 20.0), FormClass::Word, 0.6),
        ];
        let kept = suppress_overlaps(&dets, 0.5);
        let scores: Vec<f64> = kept.iter().map(|k| k.score).collect();
        assert_eq!(scores, vec![0.95, 0.9, 0.6]);
    }

    #[test]
    fn refinement_snaps_to_the_word_ink() {
        let vocab = Vocabulary::synthetic(20, 1).unwrap();
        let form = &crate::synth::FormGenerator::default().generate(&vocab, 5, 1).unwrap()[0];
        for a in form.words() {
            let t = &a.bbox;
            let cut = b(t.x0 + 0.3 * t.width(), t.y0 + 2.0, t.x1 - 0.2 * t.width(), t.y1 - 2.0);
            let r = refine_to_ink(&form.image, &cut);
            for (p, q) in r.as_array().iter().zip(t.as_array()) {
                assert!((p - q).abs() <= 2.0, "{:?} vs {:?}", r, t);
            }
        }
        let blank = GrayImage::filled(64, 32, 255);
        let x = b(10.0, 5.0, 40.0, 20.0);
        assert_eq!(refine_to_ink(&blank, &x), x);
    }

    #[test]
    fn order_examples() {
        assert_eq!(reading_order(&[b(0.0, 0.0, 5.0, 5.0)]), vec![0]);
        assert_eq!(
            reading_order(&[b(100.0, 10.0, 130.0, 30.0), b(10.0, 12.0, 40.0, 30.0)]),
            vec![1, 0]
        );
        let boxes = [
            b(10.0, 60.0, 50.0, 80.0),
            b(80.0, 10.0, 120.0, 30.0),
            b(10.0, 12.0, 50.0, 32.0),
        ];
        assert_eq!(reading_order(&boxes), vec![2, 1, 0]);
        assert!(reading_order(&[]).is_empty());
    }

    #[test]
    fn aggregate_is_mean_of_forms() {
        let s = [
            FormScore { seed: 0, wer: 0.0, cer: 10.0 },
            FormScore { seed: 1, wer: 50.0, cer: 0.0 },
        ];
        let r = aggregate(&s).unwrap();
        assert_eq!(r.wer, Some(25.0));
        assert_eq!(r.pipeline_cer, Some(5.0));
        assert!(aggregate(&[]).is_err());
    }
}
