use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneConfig, FEATURE_HEIGHT};
use super::word::WordModel;
use super::{image_tensor, Recognition};
use crate::ctc::{beam_search, ctc_loss_node, greedy_labels, Alphabet, TimeLogits};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::synth::GrayImage;
use crate::tensor::{Bound, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharConfig {
    pub backbone: BackboneConfig,
    /// Prefix beam width at inference; 1 means greedy decoding.
    pub beam_width: usize,
}

impl Default for CharConfig {
    fn default() -> Self {
        CharConfig {
            backbone: BackboneConfig::default(),
            beam_width: 8,
        }
    }
}

/// Word-model backbone with a convolutional CTC head: the `H x W x D`
/// feature map becomes a `W/2`-step sequence over the alphabet plus blank.
#[derive(Clone, Debug)]
pub struct CharModel {
    pub config: CharConfig,
    pub alphabet: Alphabet,
    pub params: ParamStore,
    backbone: Backbone,
    head: Conv2d,
}

impl CharModel {
    pub fn new(config: CharConfig, seed: u64) -> Result<Self> {
        if config.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let alphabet = Alphabet::default();
        let backbone = Backbone::new(&mut params, config.backbone.clone(), &mut rng)?;
        let head = Conv2d::new(
            &mut params,
            "char.head",
            config.backbone.output_channels(),
            alphabet.classes(),
            (FEATURE_HEIGHT, 2),
            (1, 2),
            (0, 0),
            &mut rng,
        );
        Ok(CharModel {
            config,
            alphabet,
            params,
            backbone,
            head,
        })
    }

    /// Copy the shared backbone weights from a word model. Returns how many
    /// tensors were loaded.
    pub fn init_from_word_model(&mut self, word: &WordModel) -> Result<usize> {
        if word.config.backbone != self.config.backbone {
            return Err(Error::Config(
                "word and character backbones have different shapes".into(),
            ));
        }
        Ok(self
            .params
            .load_matching(&word.params)
            .iter()
            .filter(|n| n.starts_with("backbone."))
            .count())
    }

    /// Number of output steps for an input of `width` pixels.
    pub fn steps_for(&self, width: usize) -> usize {
        self.config.backbone.output_width(width).div_ceil(2)
    }

    /// `[T, C]` log-probabilities for a height-normalized crop.
    pub fn log_probs(&self, g: &mut Graph, p: &Bound, image: &GrayImage) -> Result<Var> {
        let x = g.constant(image_tensor(image)?);
        let mut f = self.backbone.forward(g, p, x)?;
        let s = g.shape(f).to_vec();
        if s[3] % 2 == 1 {
            // Pad one zero column so the stride-2 head covers every column.
            let pad = g.constant(Tensor::zeros([1, s[1], s[2], 1]));
            f = g.concat(&[f, pad], 3)?;
        }
        let y = self.head.forward(g, p, f)?;
        let (c, t) = (g.shape(y)[1], g.shape(y)[3]);
        let flat = g.reshape(y, &[c, t])?;
        let seq = g.transpose(flat)?;
        Ok(g.log_softmax(seq))
    }

    pub fn forward(&self, image: &GrayImage) -> Result<TimeLogits> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let lp = self.log_probs(&mut g, &p, image)?;
        let s = g.shape(lp).to_vec();
        TimeLogits::new(s[0], s[1], g.value(lp).to_vec())
    }

    pub fn loss(&self, g: &mut Graph, p: &Bound, image: &GrayImage, text: &str) -> Result<Var> {
        let labels = self.alphabet.encode(text)?;
        let lp = self.log_probs(g, p, image)?;
        ctc_loss_node(g, lp, &labels, self.alphabet.blank())
    }

    pub fn recognize(&self, crop: &GrayImage) -> Result<Recognition> {
        let logits = self.forward(crop)?;
        let (labels, logp) = if self.config.beam_width > 1 {
            beam_search(&logits, self.config.beam_width)
                .into_iter()
                .next()
                .unwrap_or((Vec::new(), f64::NEG_INFINITY))
        } else {
            let path = greedy_labels(&logits);
            let lp: f64 = (0..logits.steps())
                .map(|t| logits.row(t).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .sum();
            (path, lp)
        };
        Ok(Recognition {
            text: self.alphabet.decode(&labels),
            score: logp.exp(),
            truncated: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(width_pool: usize) -> CharModel {
        let cfg = CharConfig {
            backbone: BackboneConfig {
                width_pool,
                ..BackboneConfig::default()
            },
            beam_width: 1,
        };
        CharModel::new(cfg, 0).unwrap()
    }

    #[test]
    fn steps_follow_the_half_width_rule() {
        let m = model(1);
        let t64 = m.forward(&GrayImage::filled(64, 32, 255)).unwrap();
        assert_eq!(t64.steps(), 32);
        assert_eq!(t64.classes(), 36);
        let t128 = m.forward(&GrayImage::filled(128, 32, 255)).unwrap();
        assert_eq!(t128.steps(), 64);
        assert_eq!(m.forward(&GrayImage::filled(65, 32, 255)).unwrap().steps(), 33);
    }

    #[test]
    fn too_narrow_input_is_an_error() {
        assert!(model(2).forward(&GrayImage::filled(1, 32, 255)).is_err());
    }
}
