//! Connectionist Temporal Classification: loss, gradient and decoders.
//!
//! Label indices `0..chars.len()` are the alphabet symbols; the blank is
//! the last class (`chars.len()`). Every dynamic program runs in log space.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::kernels::{log_add, log_sum_exp};
use crate::tensor::{Graph, Var};

/// Ordered recognition symbols. The blank is implicit and sits after them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
}

impl Default for Alphabet {
    /// `A`-`Y` followed by `0`-`9` (35 symbols, no `Z`).
    fn default() -> Self {
        let chars = ('A'..='Y').chain('0'..='9').collect();
        Alphabet { chars }
    }
}

impl Alphabet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::Invalid(format!("duplicate symbol {c:?} in alphabet")));
            }
        }
        if chars.is_empty() {
            return Err(Error::Invalid("empty alphabet".into()));
        }
        Ok(Alphabet { chars })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Number of output classes including the blank.
    pub fn classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn blank(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c)
    }

    pub fn contains(&self, c: char) -> bool {
        self.index_of(c).is_some()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(Error::Alphabet(c)))
            .collect()
    }

    /// Map labels back to text; the blank and out-of-range labels are skipped.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .filter_map(|&l| self.chars.get(l))
            .collect()
    }
}

/// `T x C` per-timestep log-probabilities (blank included in `C`).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeLogits {
    steps: usize,
    classes: usize,
    values: Vec<f64>,
}

impl TimeLogits {
    /// Wrap already-normalized log-probabilities; every row must
    /// log-sum-exp to zero within 1e-9.
    pub fn new(steps: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if steps == 0 || classes < 2 || values.len() != steps * classes {
            return Err(Error::Invalid(format!(
                "time logits {steps}x{classes} with {} values",
                values.len()
            )));
        }
        for (t, row) in values.chunks_exact(classes).enumerate() {
            let lse = log_sum_exp(row);
            if !lse.is_finite() || lse.abs() > 1e-9 {
                return Err(Error::Invalid(format!(
                    "row {t} is not normalized (log-sum-exp {lse})"
                )));
            }
        }
        Ok(TimeLogits {
            steps,
            classes,
            values,
        })
    }

    /// Log-softmax each row of raw scores.
    pub fn from_scores(steps: usize, classes: usize, mut scores: Vec<f64>) -> Result<Self> {
        if steps == 0 || classes < 2 || scores.len() != steps * classes {
            return Err(Error::Invalid(format!(
                "scores {steps}x{classes} with {} values",
                scores.len()
            )));
        }
        for row in scores.chunks_exact_mut(classes) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Ok(TimeLogits {
            steps,
            classes,
            values: scores,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }
}

/// Merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Minimum number of timesteps that can emit `labels`: one per label plus
/// a separating blank between each adjacent repeat.
pub fn min_steps(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Loss value and its gradient with respect to the input log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct CtcLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Negative log-likelihood of `labels` under `log_probs` (`steps x classes`,
/// row-major) summed over every alignment, via the forward-backward
/// recursion on the blank-augmented label sequence.
///
/// The inputs are treated as free log-scores: the gradient is
/// `-occupancy(t, k)`, which the caller chains through its own
/// normalization.
pub fn ctc_loss_labels(
    log_probs: &[f64],
    steps: usize,
    classes: usize,
    labels: &[usize],
    blank: usize,
) -> Result<CtcLoss> {
    assert_eq!(log_probs.len(), steps * classes);
    let needed = min_steps(labels);
    if needed > steps {
        return Err(Error::InfeasibleTarget {
            target: format!("{labels:?}"),
            needed,
            available: steps,
        });
    }
    let ninf = f64::NEG_INFINITY;
    let s_len = 2 * labels.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { labels[s / 2] })
        .collect();
    let y = |t: usize, k: usize| log_probs[t * classes + k];
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; steps * s_len];
    alpha[0] = y(0, ext[0]);
    if s_len > 1 {
        alpha[1] = y(0, ext[1]);
    }
    for t in 1..steps {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, prev[s - 2]);
            }
            cur[s] = if a == ninf { ninf } else { a + y(t, ext[s]) };
        }
    }

    let mut beta = vec![ninf; steps * s_len];
    let last = (steps - 1) * s_len;
    beta[last + s_len - 1] = y(steps - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = y(steps - 1, ext[s_len - 2]);
    }
    for t in (0..steps - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        for s in 0..s_len {
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            cur[s] = if b == ninf { ninf } else { b + y(t, ext[s]) };
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if !log_p.is_finite() {
        return Err(Error::NonFinite(format!("ctc log-likelihood {log_p}")));
    }

    let mut grad = vec![0.0; steps * classes];
    let mut occ = vec![ninf; classes];
    for t in 0..steps {
        occ.fill(ninf);
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            if ab == ninf {
                continue;
            }
            let k = ext[s];
            occ[k] = log_add(occ[k], ab - y(t, k));
        }
        for k in 0..classes {
            if occ[k] != ninf {
                grad[t * classes + k] = -(occ[k] - log_p).exp();
            }
        }
    }
    Ok(CtcLoss { loss: -log_p, grad })
}

/// CTC loss of a text target.
pub fn ctc_loss(logits: &TimeLogits, target: &str, alphabet: &Alphabet) -> Result<CtcLoss> {
    let labels = alphabet.encode(target)?;
    ctc_loss_labels(
        &logits.values,
        logits.steps,
        logits.classes,
        &labels,
        alphabet.blank(),
    )
    .map_err(|e| match e {
        Error::InfeasibleTarget {
            needed, available, ..
        } => Error::InfeasibleTarget {
            target: target.to_string(),
            needed,
            available,
        },
        other => other,
    })
}

/// CTC loss as a graph node over a `[T, C]` log-probability variable.
pub fn ctc_loss_node(g: &mut Graph, log_probs: Var, labels: &[usize], blank: usize) -> Result<Var> {
    let shape = g.shape(log_probs).to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape {
            node: g.len(),
            op: "ctc_loss",
            detail: format!("expected [T, C] log-probabilities, got {shape:?}"),
        });
    }
    let r = ctc_loss_labels(g.value(log_probs), shape[0], shape[1], labels, blank)?;
    g.custom_scalar(log_probs, r.loss, r.grad)
}

/// Best label per timestep (lowest index wins ties), collapsed.
pub fn greedy_labels(logits: &TimeLogits) -> Vec<usize> {
    let path: Vec<usize> = (0..logits.steps)
        .map(|t| argmax(logits.row(t)))
        .collect();
    collapse(&path, logits.classes - 1)
}

pub fn greedy_decode(logits: &TimeLogits, alphabet: &Alphabet) -> String {
    alphabet.decode(&greedy_labels(logits))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug)]
struct PrefixScore {
    blank: f64,
    non_blank: f64,
}

impl PrefixScore {
    const EMPTY: PrefixScore = PrefixScore {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

/// Prefix beam search without a language model. Returns the surviving
/// prefixes with their total log-probabilities, best first.
pub fn beam_search(logits: &TimeLogits, beam_width: usize) -> Vec<(Vec<usize>, f64)> {
    let beam_width = beam_width.max(1);
    let blank = logits.classes - 1;
    let mut beams: Vec<(Vec<usize>, PrefixScore)> = vec![(
        Vec::new(),
        PrefixScore {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];
    for t in 0..logits.steps {
        let row = logits.row(t);
        let mut next: BTreeMap<Vec<usize>, PrefixScore> = BTreeMap::new();
        for (prefix, score) in &beams {
            for (k, &p) in row.iter().enumerate() {
                if k == blank {
                    let e = next.entry(prefix.clone()).or_insert(PrefixScore::EMPTY);
                    e.blank = log_add(e.blank, score.total() + p);
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(k);
                if prefix.last() == Some(&k) {
                    let e = next.entry(extended).or_insert(PrefixScore::EMPTY);
                    e.non_blank = log_add(e.non_blank, score.blank + p);
                    let same = next.entry(prefix.clone()).or_insert(PrefixScore::EMPTY);
                    same.non_blank = log_add(same.non_blank, score.non_blank + p);
                } else {
                    let e = next.entry(extended).or_insert(PrefixScore::EMPTY);
                    e.non_blank = log_add(e.non_blank, score.total() + p);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, PrefixScore)> = next.into_iter().collect();
        // BTreeMap order makes the stable sort break ties lexicographically.
        ranked.sort_by(|a, b| b.1.total().total_cmp(&a.1.total()));
        ranked.truncate(beam_width);
        beams = ranked;
    }
    beams
        .into_iter()
        .map(|(prefix, s)| {
            let total = s.total();
            (prefix, total)
        })
        .collect()
}

pub fn beam_decode(logits: &TimeLogits, beam_width: usize, alphabet: &Alphabet) -> String {
    let best = beam_search(logits, beam_width);
    alphabet.decode(&best[0].0)
}
