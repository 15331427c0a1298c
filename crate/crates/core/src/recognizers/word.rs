use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneConfig, FEATURE_HEIGHT};
use super::{image_tensor, Recognition, CROP_HEIGHT};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::synth::GrayImage;
use crate::tensor::{Bound, Graph, ParamStore, Tensor, Var};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WordConfig {
    pub backbone: BackboneConfig,
    /// Every crop is resized to `32 x input_width`.
    pub input_width: usize,
    /// Start the classification head at zero (uniform initial logits).
    pub zero_head: bool,
}

impl Default for WordConfig {
    fn default() -> Self {
        WordConfig {
            backbone: BackboneConfig::default(),
            input_width: 128,
            zero_head: false,
        }
    }
}

/// Whole-word classifier over a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct WordModel {
    pub config: WordConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    backbone: Backbone,
    head: Linear,
}

impl WordModel {
    pub fn new(config: WordConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.backbone.output_width(config.input_width) == 0 {
            return Err(Error::Config("word model input_width is too small".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&mut params, config.backbone.clone(), &mut rng)?;
        let features = config.backbone.output_channels()
            * FEATURE_HEIGHT
            * config.backbone.output_width(config.input_width);
        let head = if config.zero_head {
            Linear::zeros(&mut params, "word.head", features, vocab.len())
        } else {
            Linear::new(&mut params, "word.head", features, vocab.len(), &mut rng)
        };
        Ok(WordModel {
            config,
            vocab,
            params,
            backbone,
            head,
        })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    /// Resize a height-normalized crop to the canonical input size.
    pub fn canonical(&self, crop: &GrayImage) -> Result<GrayImage> {
        crop.resize(self.config.input_width, CROP_HEIGHT)
    }

    /// `[1, V]` logits for a canonical-size image.
    pub fn logits(&self, g: &mut Graph, p: &Bound, image: &GrayImage) -> Result<Var> {
        if image.width() != self.config.input_width || image.height() != CROP_HEIGHT {
            return Err(Error::Image(format!(
                "word model expects {}x{CROP_HEIGHT} input, got {}x{}",
                self.config.input_width,
                image.width(),
                image.height()
            )));
        }
        let x = g.constant(image_tensor(image)?);
        let f = self.backbone.forward(g, p, x)?;
        let n = g.value(f).len();
        let flat = g.reshape(f, &[1, n])?;
        self.head.forward(g, p, flat)
    }

    pub fn forward(&self, image: &GrayImage) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let l = self.logits(&mut g, &p, image)?;
        Ok(g.value(l).to_vec())
    }

    /// Cross-entropy against vocabulary index `label`.
    pub fn loss(&self, g: &mut Graph, p: &Bound, image: &GrayImage, label: usize) -> Result<Var> {
        let logits = self.logits(g, p, image)?;
        let logp = g.log_softmax(logits);
        let mut onehot = vec![0.0; self.vocab.len()];
        onehot[label] = -1.0;
        let w = g.constant(Tensor::new([1, self.vocab.len()], onehot)?);
        let picked = g.mul(logp, w)?;
        Ok(g.sum(picked))
    }

    /// Most likely vocabulary word for a height-normalized crop.
    pub fn recognize(&self, crop: &GrayImage) -> Result<Recognition> {
        let logits = self.forward(&self.canonical(crop)?)?;
        let best = crate::ctc::argmax(&logits);
        let lse = crate::tensor::kernels::log_sum_exp(&logits);
        Ok(Recognition {
            text: self.vocab.word(best).to_string(),
            score: (logits[best] - lse).exp(),
            truncated: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_is_uniform_and_deterministic() {
        let vocab = Vocabulary::synthetic(5, 0).unwrap();
        let cfg = WordConfig {
            zero_head: true,
            ..WordConfig::default()
        };
        let m = WordModel::new(cfg, vocab, 1).unwrap();
        let img = GrayImage::filled(128, 32, 200);
        let a = m.forward(&img).unwrap();
        assert_eq!(a, m.forward(&img).unwrap());
        assert!(a.iter().all(|v| *v == a[0]));
        assert!(m.forward(&GrayImage::filled(100, 32, 200)).is_err());
    }
}
