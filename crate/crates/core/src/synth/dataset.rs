use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::form::{Annotation, FormSample};
use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{BBox, FormClass};

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    image: String,
    seed: u64,
    annotations: Vec<RecordAnnotation>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordAnnotation {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class: FormClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order_index: Option<usize>,
}

/// Write one PGM per sample under `dir/images` plus `dir/manifest.jsonl`.
pub fn write_dataset(samples: &[FormSample], dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let manifest = dir.join(MANIFEST);
    let file = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut out = BufWriter::new(file);
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:06}.pgm");
        s.image.save_pgm(&dir.join(&rel))?;
        let record = Record {
            image: rel,
            seed: s.seed,
            annotations: s
                .annotations
                .iter()
                .map(|a| RecordAnnotation {
                    bbox: a.bbox.as_array(),
                    class: a.class,
                    transcript: a.transcript.clone(),
                    order_index: a.order_index,
                })
                .collect(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::dataset(&manifest, "record", e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(&manifest, e))?;
    }
    out.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

/// Inverse of [`write_dataset`]; errors name the offending file and field.
pub fn read_dataset(dir: &Path) -> Result<Vec<FormSample>> {
    let manifest = dir.join(MANIFEST);
    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |field: &str| format!("line {}: {field}", n + 1);
        let record: Record =
            serde_json::from_str(&line).map_err(|e| Error::dataset(&manifest, at("record"), e))?;
        let image = GrayImage::load_pgm(&dir.join(&record.image))
            .map_err(|e| Error::dataset(&manifest, at("image"), e))?;
        let mut annotations = Vec::with_capacity(record.annotations.len());
        for (i, a) in record.annotations.into_iter().enumerate() {
            let [x0, y0, x1, y1] = a.bbox;
            let bbox = BBox::new(x0, y0, x1, y1)
                .map_err(|e| Error::dataset(&manifest, at(&format!("annotations[{i}].box")), e))?;
            annotations.push(Annotation {
                bbox,
                class: a.class,
                transcript: a.transcript,
                order_index: a.order_index,
            });
        }
        let sample = FormSample {
            image,
            annotations,
            seed: record.seed,
        };
        sample
            .validate()
            .map_err(|(field, detail)| Error::dataset(&manifest, at(&field), detail))?;
        samples.push(sample);
    }
    Ok(samples)
}
