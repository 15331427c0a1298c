//! Binary checkpoints: magic, format version, a JSON header describing the
//! model, then every named parameter tensor as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, DetectorModel};
use crate::error::{Error, Result};
use crate::recognizers::{
    CharConfig, CharModel, Recognizer, Seq2SeqConfig, Seq2SeqModel, WordConfig, WordModel,
};
use crate::tensor::{ParamStore, Tensor};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"SCRIPTCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Header {
    Detector { config: DetectorConfig },
    Word { config: WordConfig, vocab: Vec<String> },
    Char { config: CharConfig },
    Seq2seq { config: Seq2SeqConfig },
}

/// Anything that can be checkpointed.
#[derive(Clone, Debug)]
pub enum Model {
    Detector(DetectorModel),
    Recognizer(Recognizer),
}

impl Model {
    pub fn header(&self) -> Header {
        match self {
            Model::Detector(m) => Header::Detector {
                config: m.config.clone(),
            },
            Model::Recognizer(Recognizer::Word(m)) => Header::Word {
                config: m.config.clone(),
                vocab: m.vocab.words().to_vec(),
            },
            Model::Recognizer(Recognizer::Char(m)) => Header::Char {
                config: m.config.clone(),
            },
            Model::Recognizer(Recognizer::Seq2Seq(m)) => Header::Seq2seq {
                config: m.config.clone(),
            },
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Detector(m) => &m.params,
            Model::Recognizer(r) => r.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Detector(m) => &mut m.params,
            Model::Recognizer(r) => r.params_mut(),
        }
    }

    /// Untrained model with the architecture described by `header`.
    pub fn from_header(header: &Header) -> Result<Self> {
        Ok(match header.clone() {
            Header::Detector { config } => Model::Detector(DetectorModel::new(config, 0)?),
            Header::Word { config, vocab } => {
                Model::Recognizer(Recognizer::Word(WordModel::new(config, Vocabulary::new(vocab)?, 0)?))
            }
            Header::Char { config } => Model::Recognizer(Recognizer::Char(CharModel::new(config, 0)?)),
            Header::Seq2seq { config } => {
                Model::Recognizer(Recognizer::Seq2Seq(Seq2SeqModel::new(config, 0)?))
            }
        })
    }

    pub fn into_detector(self) -> Result<DetectorModel> {
        match self {
            Model::Detector(m) => Ok(m),
            Model::Recognizer(r) => Err(Error::Checkpoint(format!(
                "expected a detector checkpoint, found a {} recognizer",
                r.kind().name()
            ))),
        }
    }

    pub fn into_recognizer(self) -> Result<Recognizer> {
        match self {
            Model::Recognizer(r) => Ok(r),
            Model::Detector(_) => Err(Error::Checkpoint(
                "expected a recognizer checkpoint, found a detector".into(),
            )),
        }
    }
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&model.header())
        .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, wide: bool) -> Result<usize> {
        let n = if wide { self.u64()? } else { self.u32()? as u64 };
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n}")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let n = c.len(true)?;
    let header: Header = serde_json::from_slice(c.take(n)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut model = Model::from_header(&header)?;

    let mut loaded = ParamStore::new();
    let count = c.u32()?;
    for _ in 0..count {
        let n = c.len(false)?;
        let name = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = c.len(false)?;
        let shape = (0..rank).map(|_| c.len(true)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel
            .filter(|&n| n.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible shape {shape:?} for {name}")))?;
        let data = c
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        loaded.add(name, Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let target = model.params_mut();
    if !target.same_layout(&loaded) {
        return Err(Error::Checkpoint(
            "parameter names or shapes do not match the header architecture".into(),
        ));
    }
    target.load_matching(&loaded);
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
