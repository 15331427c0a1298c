//! Recognition and detection measures: Damerau-Levenshtein distance, CER,
//! word accuracy, WER, pipeline CER and Pascal-VOC style average precision.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, FormClass};

/// Unrestricted Damerau-Levenshtein distance (Lowrance-Wagner): the minimum
/// number of unit insertions, deletions, substitutions and adjacent
/// transpositions turning `a` into `b`.
pub fn dl_distance_by<T: Eq + Hash + Clone>(a: &[T], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    let inf = n + m;
    let w = m + 2;
    let mut d = vec![0usize; (n + 2) * w];
    d[0] = inf;
    for i in 0..=n {
        d[(i + 1) * w] = inf;
        d[(i + 1) * w + 1] = i;
    }
    for j in 0..=m {
        d[j + 1] = inf;
        d[w + j + 1] = j;
    }
    let mut last_row: HashMap<T, usize> = HashMap::new();
    for i in 1..=n {
        let mut last_col = 0;
        for j in 1..=m {
            let k = last_row.get(&b[j - 1]).copied().unwrap_or(0);
            let l = last_col;
            let cost = if a[i - 1] == b[j - 1] {
                last_col = j;
                0
            } else {
                1
            };
            let sub = d[i * w + j] + cost;
            let ins = d[(i + 1) * w + j] + 1;
            let del = d[i * w + j + 1] + 1;
            let trans = d[k * w + l] + (i - k - 1) + 1 + (j - l - 1);
            d[(i + 1) * w + j + 1] = sub.min(ins).min(del).min(trans);
        }
        last_row.insert(a[i - 1].clone(), i);
    }
    d[(n + 1) * w + m + 1]
}

pub fn dl_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    dl_distance_by(&a, &b)
}

/// Character error rate in percent; may exceed 100.
pub fn cer(gt: &str, pred: &str) -> Result<f64> {
    let len = gt.chars().count();
    if len == 0 {
        return Err(Error::Invalid("CER is undefined for an empty ground truth".into()));
    }
    Ok(dl_distance(gt, pred) as f64 * 100.0 / len as f64)
}

/// Percentage of exact matches over `(ground_truth, prediction)` pairs.
pub fn word_accuracy<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Invalid("word accuracy of an empty list".into()));
    }
    let hits = pairs
        .iter()
        .filter(|(g, p)| g.as_ref() == p.as_ref())
        .count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

/// Mean per-pair CER.
pub fn mean_cer<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Invalid("CER of an empty list".into()));
    }
    let mut total = 0.0;
    for (g, p) in pairs {
        total += cer(g.as_ref(), p.as_ref())?;
    }
    Ok(total / pairs.len() as f64)
}

/// Word error rate in percent, each word acting as one symbol.
pub fn wer<S: AsRef<str>>(gt_words: &[S], pred_words: &[S]) -> Result<f64> {
    if gt_words.is_empty() {
        return Err(Error::Invalid("WER is undefined for an empty ground truth".into()));
    }
    let g: Vec<&str> = gt_words.iter().map(AsRef::as_ref).collect();
    let p: Vec<&str> = pred_words.iter().map(AsRef::as_ref).collect();
    Ok(dl_distance_by(&g, &p) as f64 * 100.0 / g.len() as f64)
}

/// CER of the space-joined word sequences.
pub fn pipeline_cer<S: AsRef<str>>(gt_words: &[S], pred_words: &[S]) -> Result<f64> {
    if gt_words.is_empty() {
        return Err(Error::Invalid("pipeline CER needs at least one ground-truth word".into()));
    }
    let join = |ws: &[S]| ws.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    cer(&join(gt_words), &join(pred_words))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub class: FormClass,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<ScoredBox>,
    pub ground_truth: Vec<(FormClass, BBox)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionEvalSet {
    pub images: Vec<ImageEval>,
    pub iou_threshold: f64,
}

impl DetectionEvalSet {
    pub fn new(iou_threshold: f64) -> Self {
        DetectionEvalSet {
            images: Vec::new(),
            iou_threshold,
        }
    }

    pub fn gt_count(&self, class: FormClass) -> usize {
        self.images
            .iter()
            .flat_map(|im| &im.ground_truth)
            .filter(|(c, _)| *c == class)
            .count()
    }
}

/// Precision/recall after each detection of `class`, in descending score
/// order (ties keep input order). `None` when the class has no ground truth.
pub fn precision_recall(set: &DetectionEvalSet, class: FormClass) -> Option<Vec<(f64, f64)>> {
    let npos = set.gt_count(class);
    if npos == 0 {
        return None;
    }
    let mut dets: Vec<(usize, &ScoredBox)> = set
        .images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| im.detections.iter().map(move |d| (i, d)))
        .filter(|(_, d)| d.class == class)
        .collect();
    dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut matched: Vec<Vec<bool>> = set
        .images
        .iter()
        .map(|im| vec![false; im.ground_truth.len()])
        .collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(dets.len());
    for (img, det) in dets {
        let mut best: Option<(usize, f64)> = None;
        for (gi, (gc, gb)) in set.images[img].ground_truth.iter().enumerate() {
            if *gc != class || matched[img][gi] {
                continue;
            }
            let o = det.bbox.iou_unchecked(gb);
            if o >= set.iou_threshold && best.is_none_or(|(_, bo)| o > bo) {
                best = Some((gi, o));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[img][gi] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / (tp + fp) as f64, tp as f64 / npos as f64));
    }
    Some(curve)
}

/// Area under the all-points interpolated precision-recall curve.
/// `None` when the class has no ground truth.
pub fn average_precision(set: &DetectionEvalSet, class: FormClass) -> Option<f64> {
    let curve = precision_recall(set, class)?;
    let mut mrec = vec![0.0];
    let mut mpre = vec![0.0];
    for (p, r) in &curve {
        mpre.push(*p);
        mrec.push(*r);
    }
    mrec.push(1.0);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..mrec.len() {
        if mrec[i] != mrec[i - 1] {
            ap += (mrec[i] - mrec[i - 1]) * mpre[i];
        }
    }
    Some(ap)
}

/// Per-class AP and their mean over classes that have ground truth.
pub fn mean_ap(set: &DetectionEvalSet) -> (BTreeMap<FormClass, f64>, Option<f64>) {
    let per: BTreeMap<FormClass, f64> = FormClass::ALL
        .iter()
        .filter_map(|&c| average_precision(set, c).map(|ap| (c, ap)))
        .collect();
    let mean = if per.is_empty() {
        None
    } else {
        Some(per.values().sum::<f64>() / per.len() as f64)
    };
    (per, mean)
}

/// Evaluation report emitted as JSON. Fields that a task does not produce
/// are `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wa: Option<f64>,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
    pub pipeline_cer: Option<f64>,
    pub per_class_ap: BTreeMap<String, f64>,
    pub map: Option<f64>,
}

impl EvalReport {
    /// WA and mean CER over recognized crops.
    pub fn recognition<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self> {
        Ok(EvalReport {
            wa: Some(word_accuracy(pairs)?),
            cer: Some(mean_cer(pairs)?),
            ..Default::default()
        })
    }

    pub fn with_detection(mut self, set: &DetectionEvalSet) -> Self {
        let (per, map) = mean_ap(set);
        self.per_class_ap = per
            .into_iter()
            .map(|(c, ap)| (c.name().to_string(), ap))
            .collect();
        self.map = map;
        self
    }
}
