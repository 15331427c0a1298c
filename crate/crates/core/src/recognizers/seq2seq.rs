use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Recognition, CROP_HEIGHT};
use crate::ctc::{ctc_loss_node, Alphabet, TimeLogits};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear, Lstm, LstmState};
use crate::synth::GrayImage;
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Encoder and decoder depth.
pub const DEPTH: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seq2SeqConfig {
    pub patch_width: usize,
    /// Per-patch feature size fed to the encoder.
    pub feature_size: usize,
    /// Hidden size of each encoder direction; the decoder uses twice this.
    pub encoder_hidden: usize,
    pub embedding: usize,
    pub max_decode: usize,
    pub lambda_ctc: f64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            patch_width: 8,
            feature_size: 32,
            encoder_hidden: 24,
            embedding: 16,
            max_decode: 32,
            lambda_ctc: 0.5,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_width == 0
            || self.feature_size == 0
            || self.encoder_hidden == 0
            || self.embedding == 0
            || self.max_decode == 0
        {
            return Err(Error::Config("seq2seq sizes must be positive".into()));
        }
        if !(self.lambda_ctc >= 0.0 && self.lambda_ctc.is_finite()) {
            return Err(Error::Config("lambda_ctc must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Split a height-normalized crop into left-to-right patches of exactly
/// `patch_width` columns; the last one is padded with blank paper.
pub fn slice_patches(image: &GrayImage, patch_width: usize) -> Result<Vec<GrayImage>> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::Image("cannot slice an empty image".into()));
    }
    if patch_width == 0 {
        return Err(Error::Invalid("patch_width must be at least 1".into()));
    }
    let (w, h) = (image.width(), image.height());
    let count = w.div_ceil(patch_width);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let x0 = k * patch_width;
        let mut px = vec![255u8; patch_width * h];
        for y in 0..h {
            for dx in 0..patch_width.min(w - x0) {
                px[y * patch_width + dx] = image.get(x0 + dx, y);
            }
        }
        out.push(GrayImage::new(patch_width, h, px)?);
    }
    Ok(out)
}

/// Outputs of one forward pass.
pub struct Seq2SeqOutput {
    /// `[N, C]` encoder CTC log-probabilities, one row per patch.
    pub ctc: Var,
    /// `[S, C]` decoder logits, one row per decoding step.
    pub decoder: Var,
    /// Attention weights per decoder step over the `N` patches.
    pub attention: Vec<Vec<f64>>,
    /// Greedy decoder labels (inference only).
    pub labels: Vec<usize>,
    /// Decoding stopped at `max_decode` without an end symbol.
    pub truncated: bool,
}

/// Patch CNN, bidirectional encoder with a CTC head, and an attention
/// decoder over the alphabet plus an end symbol.
#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    pub config: Seq2SeqConfig,
    pub alphabet: Alphabet,
    pub params: ParamStore,
    convs: Vec<Conv2d>,
    project: Linear,
    encoder: Lstm,
    ctc_head: Linear,
    embedding: ParamId,
    decoder: Lstm,
    combine: Linear,
    output: Linear,
}

impl Seq2SeqModel {
    pub fn new(config: Seq2SeqConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let alphabet = Alphabet::default();
        let classes = alphabet.classes();
        let convs = vec![
            Conv2d::same3(&mut params, "s2s.conv1", 1, 8, &mut rng),
            Conv2d::same3(&mut params, "s2s.conv2", 8, 16, &mut rng),
            Conv2d::same3(&mut params, "s2s.conv3", 16, 16, &mut rng),
        ];
        let mut pooled_width = config.patch_width;
        for _ in 0..3 {
            if pooled_width >= 2 {
                pooled_width /= 2;
            }
        }
        let pooled = 16 * (CROP_HEIGHT / 8) * pooled_width;
        let project = Linear::new(&mut params, "s2s.project", pooled, config.feature_size, &mut rng);
        let h = config.encoder_hidden;
        let encoder = Lstm::new(&mut params, "s2s.enc", config.feature_size, h, DEPTH, true, &mut rng);
        let ctc_head = Linear::new(&mut params, "s2s.ctc", 2 * h, classes, &mut rng);
        // Rows: alphabet symbols, end symbol, start symbol.
        let embedding = params.add(
            "s2s.embed",
            Tensor::randn([classes + 1, config.embedding], 0.1, &mut rng),
        );
        let decoder = Lstm::new(
            &mut params,
            "s2s.dec",
            config.embedding + 2 * h,
            2 * h,
            DEPTH,
            false,
            &mut rng,
        );
        let combine = Linear::new(&mut params, "s2s.combine", 4 * h, 2 * h, &mut rng);
        let output = Linear::new(&mut params, "s2s.out", 2 * h, classes, &mut rng);
        Ok(Seq2SeqModel {
            config,
            alphabet,
            params,
            convs,
            project,
            encoder,
            ctc_head,
            embedding,
            decoder,
            combine,
            output,
        })
    }

    /// Decoder symbol that ends a word (shares the index of the CTC blank).
    pub fn end_symbol(&self) -> usize {
        self.alphabet.len()
    }

    fn start_symbol(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn encoder_depth(&self) -> usize {
        self.encoder.layers()
    }

    pub fn encoder_is_bidirectional(&self) -> bool {
        self.encoder.is_bidirectional()
    }

    pub fn decoder_depth(&self) -> usize {
        self.decoder.layers()
    }

    pub fn decoder_is_bidirectional(&self) -> bool {
        self.decoder.is_bidirectional()
    }

    fn encode(&self, g: &mut Graph, p: &Bound, image: &GrayImage) -> Result<Var> {
        if image.height() != CROP_HEIGHT {
            return Err(Error::Image(format!(
                "seq2seq expects height {CROP_HEIGHT}, got {}",
                image.height()
            )));
        }
        let pw = self.config.patch_width;
        let patches = slice_patches(image, pw)?;
        let n = patches.len();
        let mut data = Vec::with_capacity(n * CROP_HEIGHT * pw);
        for patch in &patches {
            data.extend(patch.ink());
        }
        let x = g.constant(Tensor::new([n, 1, CROP_HEIGHT, pw], data)?);
        let mut h = x;
        for conv in &self.convs {
            let y = conv.forward(g, p, h)?;
            let y = g.relu(y);
            let kw = if g.shape(y)[3] >= 2 { 2 } else { 1 };
            h = g.max_pool2d(y, (2, kw), (2, kw))?;
        }
        let per = g.value(h).len() / n;
        let flat = g.reshape(h, &[n, per])?;
        let f = self.project.forward(g, p, flat)?;
        let f = g.relu(f);
        self.encoder.run(g, p, f)
    }

    /// Full forward pass. With `teacher` the decoder is fed the target
    /// (plus end symbol) for `|target| + 1` steps; otherwise it decodes
    /// greedily until the end symbol or `max_decode` steps.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        image: &GrayImage,
        teacher: Option<&[usize]>,
    ) -> Result<Seq2SeqOutput> {
        let enc = self.encode(g, p, image)?;
        let ctc_logits = self.ctc_head.forward(g, p, enc)?;
        let ctc = g.log_softmax(ctc_logits);
        let enc_t = g.transpose(enc)?;

        let hidden = 2 * self.config.encoder_hidden;
        let mut states: Vec<LstmState> = self
            .decoder
            .forward
            .iter()
            .map(|c| c.zero_state(g))
            .collect();
        let mut attentional = g.constant(Tensor::zeros([1, hidden]));
        let mut prev = self.start_symbol();
        let mut rows = Vec::new();
        let mut attention = Vec::new();
        let mut labels = Vec::new();
        let steps = teacher.map_or(self.config.max_decode, |t| t.len() + 1);
        let mut truncated = teacher.is_none();
        for s in 0..steps {
            let emb = g.slice(p[self.embedding], 0, prev, prev + 1)?;
            let mut x = g.concat(&[emb, attentional], 1)?;
            for (cell, state) in self.decoder.forward.iter().zip(states.iter_mut()) {
                *state = cell.step(g, p, x, *state)?;
                x = state.h;
            }
            let scores = g.matmul(x, enc_t)?;
            let alpha = g.softmax(scores);
            attention.push(g.value(alpha).to_vec());
            let context = g.matmul(alpha, enc)?;
            let joined = g.concat(&[context, x], 1)?;
            let c = self.combine.forward(g, p, joined)?;
            attentional = g.tanh(c);
            let logits = self.output.forward(g, p, attentional)?;
            rows.push(logits);
            match teacher {
                Some(t) => prev = t.get(s).copied().unwrap_or(self.end_symbol()),
                None => {
                    let next = crate::ctc::argmax(g.value(logits));
                    if next == self.end_symbol() {
                        truncated = false;
                        break;
                    }
                    labels.push(next);
                    prev = next;
                }
            }
        }
        let decoder = g.concat(&rows, 0)?;
        Ok(Seq2SeqOutput {
            ctc,
            decoder,
            attention,
            labels,
            truncated,
        })
    }

    pub fn loss(&self, g: &mut Graph, p: &Bound, image: &GrayImage, text: &str) -> Result<Var> {
        let target = self.alphabet.encode(text)?;
        let out = self.forward(g, p, image, Some(&target))?;
        seq2seq_loss(
            g,
            out.ctc,
            out.decoder,
            &target,
            self.config.lambda_ctc,
            self.alphabet.blank(),
        )
    }

    /// Encoder CTC distribution for a crop.
    pub fn ctc_logits(&self, image: &GrayImage) -> Result<TimeLogits> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let enc = self.encode(&mut g, &p, image)?;
        let logits = self.ctc_head.forward(&mut g, &p, enc)?;
        let lp = g.log_softmax(logits);
        let s = g.shape(lp).to_vec();
        TimeLogits::new(s[0], s[1], g.value(lp).to_vec())
    }

    /// Greedy attention decoding with attention maps.
    pub fn decode(&self, image: &GrayImage) -> Result<(Recognition, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, image, None)?;
        let lp = g.log_softmax(out.decoder);
        let c = self.alphabet.classes();
        let v = g.value(lp);
        let steps = v.len() / c;
        let total: f64 = (0..steps)
            .map(|s| v[s * c..(s + 1) * c].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .sum();
        let rec = Recognition {
            text: self.alphabet.decode(&out.labels),
            score: (total / steps.max(1) as f64).exp(),
            truncated: out.truncated,
        };
        Ok((rec, out.attention))
    }

    pub fn recognize(&self, crop: &GrayImage) -> Result<Recognition> {
        Ok(self.decode(crop)?.0)
    }
}

/// `lambda * ctc + (1 / (|target| + 1)) * sum of per-step cross-entropy`,
/// where the decoder targets are `target` followed by the end symbol
/// (index `blank`).
pub fn seq2seq_loss(
    g: &mut Graph,
    ctc_log_probs: Var,
    decoder_logits: Var,
    target: &[usize],
    lambda_ctc: f64,
    blank: usize,
) -> Result<Var> {
    let steps = target.len() + 1;
    let s = g.shape(decoder_logits).to_vec();
    if s.len() != 2 || s[0] != steps || blank >= s[1] {
        return Err(Error::Invalid(format!(
            "decoder logits {s:?} do not fit a {}-symbol target",
            target.len()
        )));
    }
    let c = s[1];
    let mut w = vec![0.0; steps * c];
    for (i, &y) in target.iter().chain(std::iter::once(&blank)).enumerate() {
        if y >= c {
            return Err(Error::Invalid(format!("label {y} out of range")));
        }
        w[i * c + y] = -1.0 / steps as f64;
    }
    let logp = g.log_softmax(decoder_logits);
    let wv = g.constant(Tensor::new([steps, c], w)?);
    let picked = g.mul(logp, wv)?;
    let ce = g.sum(picked);
    if lambda_ctc == 0.0 {
        return Ok(ce);
    }
    let ctc = ctc_loss_node(g, ctc_log_probs, target, blank)?;
    let weighted = g.scale(ctc, lambda_ctc);
    g.add(weighted, ce)
}
