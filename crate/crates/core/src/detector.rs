//! Single-scale anchor-grid detector for the five form classes.
//!
//! A small convolutional stack reduces a one-channel form by a factor of 8;
//! every grid cell carries `K` anchors, each with six class logits (the five
//! form classes plus background) and four box offsets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, FormClass};
use crate::nn::Conv2d;
use crate::synth::GrayImage;
use crate::tensor::{Bound, Graph, ParamStore, Tensor, Var};

pub const NUM_CLASSES: usize = 6;
pub const BACKGROUND: usize = 5;
pub const STRIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// `(column, row, shape)` on the grid.
    pub grid: (usize, usize, usize),
}

impl Anchor {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.width, self.height)
    }
}

/// Anchors for a `grid_w x grid_h` grid, ordered by row, column, shape.
pub fn make_anchors(grid_w: usize, grid_h: usize, shapes: &[(f64, f64)]) -> Vec<Anchor> {
    let mut out = Vec::with_capacity(grid_w * grid_h * shapes.len());
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            for (k, &(w, h)) in shapes.iter().enumerate() {
                out.push(Anchor {
                    cx: (gx as f64 + 0.5) * STRIDE as f64,
                    cy: (gy as f64 + 0.5) * STRIDE as f64,
                    width: w,
                    height: h,
                    grid: (gx, gy, k),
                });
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorTarget {
    /// Matched to the ground-truth box at this index.
    Positive(usize),
    Negative,
    Ignore,
}

/// Positive at max-IoU >= `pos_thr` or when the anchor is some box's best
/// match; negative below `neg_thr`; otherwise ignored.
pub fn assign_anchors(
    anchors: &[Anchor],
    gt: &[BBox],
    pos_thr: f64,
    neg_thr: f64,
) -> Result<Vec<AnchorTarget>> {
    if !(0.0 <= neg_thr && neg_thr <= pos_thr && pos_thr <= 1.0) {
        return Err(Error::Invalid(format!(
            "anchor thresholds need 0 <= neg ({neg_thr}) <= pos ({pos_thr}) <= 1"
        )));
    }
    for b in gt {
        b.validate()?;
    }
    let boxes: Vec<BBox> = anchors.iter().map(Anchor::bbox).collect();
    let mut best_gt = vec![(0.0f64, usize::MAX); anchors.len()];
    let mut best_anchor = vec![(0.0f64, usize::MAX); gt.len()];
    for (a, ab) in boxes.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let v = ab.iou_unchecked(g);
            if v > best_gt[a].0 {
                best_gt[a] = (v, j);
            }
            if v > best_anchor[j].0 {
                best_anchor[j] = (v, a);
            }
        }
    }
    let mut out: Vec<AnchorTarget> = best_gt
        .iter()
        .map(|&(v, j)| {
            if v >= pos_thr && j != usize::MAX {
                AnchorTarget::Positive(j)
            } else if v < neg_thr {
                AnchorTarget::Negative
            } else {
                AnchorTarget::Ignore
            }
        })
        .collect();
    for (j, &(v, a)) in best_anchor.iter().enumerate() {
        if a != usize::MAX && v > 0.0 && !matches!(out[a], AnchorTarget::Positive(_)) {
            out[a] = AnchorTarget::Positive(j);
        }
    }
    Ok(out)
}

/// `(dx / w_a, dy / h_a, ln(w / w_a), ln(h / h_a))`.
pub fn encode_offsets(gt: &BBox, anchor: &Anchor) -> [f64; 4] {
    let (cx, cy) = gt.center();
    [
        (cx - anchor.cx) / anchor.width,
        (cy - anchor.cy) / anchor.height,
        (gt.width() / anchor.width).ln(),
        (gt.height() / anchor.height).ln(),
    ]
}

pub fn decode_offsets(offsets: &[f64; 4], anchor: &Anchor) -> BBox {
    let cx = anchor.cx + offsets[0] * anchor.width;
    let cy = anchor.cy + offsets[1] * anchor.height;
    let w = anchor.width * offsets[2].min(6.0).exp();
    let h = anchor.height * offsets[3].min(6.0).exp();
    BBox::from_center(cx, cy, w, h)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class: FormClass,
    pub score: f64,
}

/// Greedy per-class suppression in descending score order; equal scores
/// keep input order.
pub fn nms(detections: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &detections[i];
        let clash = kept
            .iter()
            .any(|k| k.class == d.class && k.bbox.iou_unchecked(&d.bbox) > iou_thr);
        if !clash {
            kept.push(d.clone());
        }
    }
    kept
}

/// Per-anchor training targets: class index (background for negatives,
/// `None` when ignored) and box offsets for positives.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets {
    pub classes: Vec<Option<usize>>,
    pub offsets: Vec<Option<[f64; 4]>>,
}

impl LossTargets {
    pub fn new(anchors: &[Anchor], gt: &[(FormClass, BBox)], assignment: &[AnchorTarget]) -> Self {
        let mut classes = Vec::with_capacity(anchors.len());
        let mut offsets = Vec::with_capacity(anchors.len());
        for (a, t) in anchors.iter().zip(assignment) {
            match *t {
                AnchorTarget::Positive(j) => {
                    classes.push(Some(gt[j].0.index()));
                    offsets.push(Some(encode_offsets(&gt[j].1, a)));
                }
                AnchorTarget::Negative => {
                    classes.push(Some(BACKGROUND));
                    offsets.push(None);
                }
                AnchorTarget::Ignore => {
                    classes.push(None);
                    offsets.push(None);
                }
            }
        }
        LossTargets { classes, offsets }
    }

    pub fn positives(&self) -> usize {
        self.offsets.iter().filter(|o| o.is_some()).count()
    }

    /// Keep only the `max(ratio * positives, min_negatives)` negatives with
    /// the highest background loss; ties go to the lower anchor index.
    pub fn mine_hard_negatives(&mut self, log_probs: &[f64], ratio: f64, min_negatives: usize) {
        let keep = ((self.positives() as f64 * ratio).floor() as usize).max(min_negatives);
        let mut negs: Vec<(f64, usize)> = self
            .classes
            .iter()
            .enumerate()
            .filter(|(i, c)| **c == Some(BACKGROUND) && self.offsets[*i].is_none())
            .map(|(i, _)| (-log_probs[i * NUM_CLASSES + BACKGROUND], i))
            .collect();
        negs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in negs.iter().skip(keep) {
            self.classes[i] = None;
        }
    }
}

/// Mean cross-entropy over non-ignored anchors plus `box_weight` times the
/// mean (over positives) smooth-L1 offset error. `cls` is `[A, 6]` logits,
/// `boxes` is `[A, 4]`.
pub fn detector_loss(
    g: &mut Graph,
    cls: Var,
    boxes: Var,
    targets: &LossTargets,
    box_weight: f64,
) -> Result<Var> {
    let n = targets.classes.len();
    if g.shape(cls) != [n, NUM_CLASSES] || g.shape(boxes) != [n, 4] {
        return Err(Error::Invalid(format!(
            "detector outputs {:?}/{:?} do not match {n} anchors",
            g.shape(cls),
            g.shape(boxes)
        )));
    }
    let used = targets.classes.iter().filter(|c| c.is_some()).count();
    if used == 0 {
        return Err(Error::Invalid("no positive or negative anchors to train on".into()));
    }
    let mut weights = vec![0.0; n * NUM_CLASSES];
    for (i, c) in targets.classes.iter().enumerate() {
        if let Some(c) = c {
            weights[i * NUM_CLASSES + c] = -1.0 / used as f64;
        }
    }
    let logp = g.log_softmax(cls);
    let w = g.constant(Tensor::new([n, NUM_CLASSES], weights)?);
    let picked = g.mul(logp, w)?;
    let ce = g.sum(picked);

    let npos = targets.positives();
    if npos == 0 || box_weight == 0.0 {
        return Ok(ce);
    }
    let mut target = vec![0.0; n * 4];
    let mut mask = vec![0.0; n * 4];
    for (i, o) in targets.offsets.iter().enumerate() {
        if let Some(o) = o {
            target[i * 4..i * 4 + 4].copy_from_slice(o);
            mask[i * 4..i * 4 + 4].fill(1.0);
        }
    }
    let t = g.constant(Tensor::new([n, 4], target)?);
    let m = g.constant(Tensor::new([n, 4], mask)?);
    let diff = g.sub(boxes, t)?;
    let masked = g.mul(diff, m)?;
    let sl1 = g.smooth_l1(masked);
    let total = g.sum(sl1);
    let box_term = g.scale(total, box_weight / npos as f64);
    g.add(ce, box_term)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Anchor `(width, height)` shapes in pixels.
    pub anchors: Vec<(f64, f64)>,
    pub channels: [usize; 3],
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    pub nms_threshold: f64,
    pub score_threshold: f64,
    pub box_weight: f64,
    pub negative_ratio: f64,
    pub min_negatives: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            anchors: vec![(36.0, 20.0), (68.0, 22.0), (112.0, 24.0)],
            channels: [8, 16, 24],
            pos_threshold: 0.5,
            neg_threshold: 0.3,
            nms_threshold: 0.5,
            score_threshold: 0.5,
            box_weight: 1.0,
            negative_ratio: 3.0,
            min_negatives: 32,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.anchors.is_empty() || self.anchors.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0)) {
            return Err(Error::Config("detector anchors must have positive sizes".into()));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config("detector channels must be positive".into()));
        }
        if !(0.0 <= self.neg_threshold
            && self.neg_threshold <= self.pos_threshold
            && self.pos_threshold <= 1.0)
        {
            return Err(Error::Config("need 0 <= neg_threshold <= pos_threshold <= 1".into()));
        }
        for (name, v) in [
            ("nms_threshold", self.nms_threshold),
            ("score_threshold", self.score_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Network outputs for one image.
pub struct DetectorOutput {
    /// `[A, 6]` class logits.
    pub cls: Var,
    /// `[A, 4]` box offsets.
    pub boxes: Var,
    pub grid: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub params: ParamStore,
    layers: Vec<Conv2d>,
    cls_head: Conv2d,
    box_head: Conv2d,
}

impl DetectorModel {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let [c1, c2, c3] = config.channels;
        let layers = vec![
            Conv2d::new(&mut params, "det.conv1", 1, c1, (3, 3), (2, 2), (1, 1), &mut rng),
            Conv2d::new(&mut params, "det.conv2", c1, c2, (3, 3), (2, 2), (1, 1), &mut rng),
            Conv2d::same3(&mut params, "det.conv3", c2, c3, &mut rng),
            Conv2d::new(&mut params, "det.context", c3, c3, (1, 9), (1, 1), (0, 4), &mut rng),
        ];
        let k = config.anchors.len();
        let cls_head = Conv2d::new(&mut params, "det.cls", c3, k * NUM_CLASSES, (1, 1), (1, 1), (0, 0), &mut rng);
        let box_head = Conv2d::new(&mut params, "det.box", c3, k * 4, (1, 1), (1, 1), (0, 0), &mut rng);
        // Start with small outputs and a background prior so early training
        // is not swamped by the easy negatives.
        for head in [&cls_head, &box_head] {
            for v in params.get_mut(head.weight).data_mut() {
                *v *= 0.1;
            }
        }
        let bias = params.get_mut(cls_head.bias).data_mut();
        for a in 0..k {
            bias[a * NUM_CLASSES + BACKGROUND] = 3.0;
        }
        Ok(DetectorModel {
            config,
            params,
            layers,
            cls_head,
            box_head,
        })
    }

    /// Grid size for an image, or an error when the image does not tile
    /// evenly by the stride.
    pub fn grid_for(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        if width == 0 || height == 0 || width % STRIDE != 0 || height % STRIDE != 0 {
            return Err(Error::Image(format!(
                "detector input {width}x{height} must be a non-empty multiple of {STRIDE}"
            )));
        }
        Ok((width / STRIDE, height / STRIDE))
    }

    pub fn anchors(&self, width: usize, height: usize) -> Result<Vec<Anchor>> {
        let (gw, gh) = self.grid_for(width, height)?;
        Ok(make_anchors(gw, gh, &self.config.anchors))
    }

    pub fn input_tensor(image: &GrayImage) -> Result<Tensor> {
        Tensor::new([1, 1, image.height(), image.width()], image.ink())
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, image: &GrayImage) -> Result<DetectorOutput> {
        let (gw, gh) = self.grid_for(image.width(), image.height())?;
        let x = g.constant(Self::input_tensor(image)?);
        let mut h = g.max_pool2d(x, (2, 2), (2, 2))?;
        for layer in &self.layers {
            let y = layer.forward(g, p, h)?;
            h = g.relu(y);
        }
        let k = self.config.anchors.len();
        let cells = gw * gh;
        let per_anchor = |g: &mut Graph, head: &Conv2d, width: usize| -> Result<Var> {
            let y = head.forward(g, p, h)?;
            let flat = g.reshape(y, &[k * width, cells])?;
            let t = g.transpose(flat)?;
            g.reshape(t, &[cells * k, width])
        };
        let cls = per_anchor(g, &self.cls_head, NUM_CLASSES)?;
        let boxes = per_anchor(g, &self.box_head, 4)?;
        Ok(DetectorOutput {
            cls,
            boxes,
            grid: (gw, gh),
        })
    }

    /// Training loss for one annotated image.
    pub fn loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        image: &GrayImage,
        gt: &[(FormClass, BBox)],
    ) -> Result<Var> {
        let out = self.forward(g, p, image)?;
        let anchors = make_anchors(out.grid.0, out.grid.1, &self.config.anchors);
        let boxes: Vec<BBox> = gt.iter().map(|(_, b)| *b).collect();
        let assignment = assign_anchors(
            &anchors,
            &boxes,
            self.config.pos_threshold,
            self.config.neg_threshold,
        )?;
        let mut targets = LossTargets::new(&anchors, gt, &assignment);
        let logits = g.value(out.cls).to_vec();
        let logp = log_softmax_rows(&logits);
        targets.mine_hard_negatives(&logp, self.config.negative_ratio, self.config.min_negatives);
        detector_loss(g, out.cls, out.boxes, &targets, self.config.box_weight)
    }

    /// Detections with score at least `score_thr`, after non-maximum
    /// suppression.
    pub fn detect(&self, image: &GrayImage, score_thr: f64) -> Result<Vec<Detection>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, image)?;
        let anchors = make_anchors(out.grid.0, out.grid.1, &self.config.anchors);
        let logp = log_softmax_rows(g.value(out.cls));
        let offsets = g.value(out.boxes);
        let (w, h) = (image.width() as f64, image.height() as f64);
        let mut raw = Vec::new();
        for (i, a) in anchors.iter().enumerate() {
            let row = &logp[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
            let c = crate::ctc::argmax(row);
            let score = row[c].exp();
            if c == BACKGROUND || score < score_thr {
                continue;
            }
            let o = [offsets[i * 4], offsets[i * 4 + 1], offsets[i * 4 + 2], offsets[i * 4 + 3]];
            let b = decode_offsets(&o, a);
            let clipped = BBox {
                x0: b.x0.max(0.0),
                y0: b.y0.max(0.0),
                x1: b.x1.min(w),
                y1: b.y1.min(h),
            };
            if clipped.validate().is_err() {
                continue;
            }
            raw.push(Detection {
                bbox: clipped,
                class: FormClass::from_index(c).expect("foreground class"),
                score,
            });
        }
        Ok(nms(&raw, self.config.nms_threshold))
    }
}

fn log_softmax_rows(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(NUM_CLASSES) {
        let lse = crate::tensor::kernels::log_sum_exp(row);
        for v in row {
            *v -= lse;
        }
    }
    out
}
