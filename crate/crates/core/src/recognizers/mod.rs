//! Word recognizers: a whole-word classifier, a CTC character model and a
//! CTC-regularized attention encoder-decoder.

mod backbone;
mod charmodel;
mod seq2seq;
mod word;

pub use backbone::{Backbone, BackboneConfig, FEATURE_HEIGHT};
pub use charmodel::{CharConfig, CharModel};
pub use seq2seq::{seq2seq_loss, slice_patches, Seq2SeqConfig, Seq2SeqModel, Seq2SeqOutput, DEPTH};
pub use word::{WordConfig, WordModel};

use serde::{Deserialize, Serialize};

use crate::data::WordCrop;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::synth::GrayImage;
use crate::tensor::{Bound, Graph, Tensor, Var};
use crate::train::{fit, EpochStats, TrainConfig};

/// Height every word crop is scaled to.
pub const CROP_HEIGHT: usize = 32;
/// Widest crop after scaling.
pub const MAX_CROP_WIDTH: usize = 256;
/// Context added around a box before cropping.
pub const CROP_PAD: f64 = 2.0;

/// A recognized word with a confidence in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Recognition {
    pub text: String,
    pub score: f64,
    /// Decoding hit its length limit.
    pub truncated: bool,
}

/// Cut `bbox` (padded) out of a form and scale it to the canonical height.
pub fn crop_word(form: &GrayImage, bbox: &BBox) -> Result<GrayImage> {
    form.crop(bbox, CROP_PAD)?
        .resize_to_height(CROP_HEIGHT, MAX_CROP_WIDTH)
}

/// `[1, 1, H, W]` ink tensor.
pub fn image_tensor(image: &GrayImage) -> Result<Tensor> {
    Tensor::new([1, 1, image.height(), image.width()], image.ink())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecognizerKind {
    Word,
    Char,
    Seq2seq,
}

impl RecognizerKind {
    pub fn name(self) -> &'static str {
        match self {
            RecognizerKind::Word => "word",
            RecognizerKind::Char => "char",
            RecognizerKind::Seq2seq => "seq2seq",
        }
    }
}

/// Any of the three recognizers behind one interface.
#[derive(Clone, Debug)]
pub enum Recognizer {
    Word(WordModel),
    Char(CharModel),
    Seq2Seq(Seq2SeqModel),
}

impl Recognizer {
    pub fn kind(&self) -> RecognizerKind {
        match self {
            Recognizer::Word(_) => RecognizerKind::Word,
            Recognizer::Char(_) => RecognizerKind::Char,
            Recognizer::Seq2Seq(_) => RecognizerKind::Seq2seq,
        }
    }

    /// Recognize a crop already scaled to [`CROP_HEIGHT`].
    pub fn recognize(&self, crop: &GrayImage) -> Result<Recognition> {
        match self {
            Recognizer::Word(m) => m.recognize(crop),
            Recognizer::Char(m) => m.recognize(crop),
            Recognizer::Seq2Seq(m) => m.recognize(crop),
        }
    }

    pub fn params(&self) -> &crate::tensor::ParamStore {
        match self {
            Recognizer::Word(m) => &m.params,
            Recognizer::Char(m) => &m.params,
            Recognizer::Seq2Seq(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut crate::tensor::ParamStore {
        match self {
            Recognizer::Word(m) => &mut m.params,
            Recognizer::Char(m) => &mut m.params,
            Recognizer::Seq2Seq(m) => &mut m.params,
        }
    }
}

impl Recognizer {
    /// Training loss for one ground-truth crop.
    pub fn loss(&self, g: &mut Graph, p: &Bound, crop: &WordCrop) -> Result<Var> {
        match self {
            Recognizer::Word(m) => {
                let label = m.vocab.index_of(&crop.text).ok_or_else(|| {
                    Error::Invalid(format!("{:?} is not in the word model vocabulary", crop.text))
                })?;
                m.loss(g, p, &m.canonical(&crop.image)?, label)
            }
            Recognizer::Char(m) => m.loss(g, p, &crop.image, &crop.text),
            Recognizer::Seq2Seq(m) => m.loss(g, p, &crop.image, &crop.text),
        }
    }

    /// Train on ground-truth crops with the shared minibatch loop.
    pub fn fit(
        &mut self,
        crops: &[WordCrop],
        config: &TrainConfig,
        seed: u64,
        on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        let net = self.clone();
        fit(self.params_mut(), crops, config, seed, |g, p, c, _| net.loss(g, p, c), on_epoch)
    }
}
