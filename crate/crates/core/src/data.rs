//! Word crops, augmented copies and the recognition dataset layout.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BBox, FormClass};
use crate::recognizers::crop_word;
use crate::synth::{
    augment, read_dataset, write_dataset, Annotation, AugRanges, Flip, FormSample, GrayImage,
};
use crate::train::sample_seed;

/// A height-normalized word image and its transcript.
#[derive(Clone, Debug, PartialEq)]
pub struct WordCrop {
    pub image: GrayImage,
    pub text: String,
}

/// Ground-truth word crops of every form, in form then reading order.
pub fn word_crops(forms: &[FormSample]) -> Result<Vec<WordCrop>> {
    let per_form: Vec<Vec<WordCrop>> = forms
        .par_iter()
        .map(|f| {
            let mut words: Vec<&Annotation> = f.words().collect();
            words.sort_by_key(|a| a.order_index);
            words
                .into_iter()
                .map(|a| {
                    Ok(WordCrop {
                        image: crop_word(&f.image, &a.bbox)?,
                        text: a.transcript.clone().unwrap_or_default(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_form.into_iter().flatten().collect())
}

/// `copies` augmented versions of every crop (never flipped: a mirrored
/// word would carry a wrong transcript).
pub fn augment_crops(
    crops: &[WordCrop],
    ranges: &AugRanges,
    copies: usize,
    seed: u64,
) -> Vec<WordCrop> {
    (0..crops.len() * copies)
        .into_par_iter()
        .map(|k| {
            let src = &crops[k / copies];
            let s = sample_seed(seed, k % copies, k / copies);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let spec = ranges.sample(&mut rng, false);
            WordCrop {
                image: augment(&src.image, &spec, s ^ 1),
                text: src.text.clone(),
            }
        })
        .collect()
}

/// Noisy test split: one augmented copy of every crop with at least
/// `floor` pepper rate, one stray stroke and Gaussian sigma `floor * 600`.
pub fn noisy_crops(crops: &[WordCrop], ranges: &AugRanges, floor: f64, seed: u64) -> Vec<WordCrop> {
    crops
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let s = sample_seed(seed, 0, i);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut spec = ranges.sample(&mut rng, false);
            spec.pepper_rate = spec.pepper_rate.max(floor);
            spec.stroke_count = spec.stroke_count.max(1);
            spec.gaussian_sigma = spec.gaussian_sigma.max(floor * 600.0);
            WordCrop {
                image: augment(&src.image, &spec, s ^ 1),
                text: src.text.clone(),
            }
        })
        .collect()
}

/// `copies` augmented versions of every form; flips mirror the boxes too.
pub fn augment_forms(
    forms: &[FormSample],
    ranges: &AugRanges,
    copies: usize,
    seed: u64,
) -> Result<Vec<FormSample>> {
    (0..forms.len() * copies)
        .into_par_iter()
        .map(|k| {
            let src = &forms[k / copies];
            let s = sample_seed(seed, k % copies, k / copies);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let spec = ranges.sample(&mut rng, true);
            let image = augment(&src.image, &spec, s ^ 1);
            let (w, h) = (image.width() as f64, image.height() as f64);
            let annotations = src
                .annotations
                .iter()
                .map(|a| {
                    let b = a.bbox;
                    let bbox = match spec.flip {
                        Flip::None => b,
                        Flip::Horizontal => BBox::new(w - b.x1, b.y0, w - b.x0, b.y1)?,
                        Flip::Vertical => BBox::new(b.x0, h - b.y1, b.x1, h - b.y0)?,
                    };
                    Ok(Annotation { bbox, ..a.clone() })
                })
                .collect::<Result<_>>()?;
            Ok(FormSample {
                image,
                annotations,
                seed: src.seed,
            })
        })
        .collect()
}

/// Store crops as single-annotation samples covering the whole image.
pub fn write_crops(crops: &[WordCrop], dir: &Path) -> Result<()> {
    let samples = crops
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(FormSample {
                image: c.image.clone(),
                annotations: vec![Annotation {
                    bbox: BBox::new(0.0, 0.0, c.image.width() as f64, c.image.height() as f64)?,
                    class: FormClass::Word,
                    transcript: Some(c.text.clone()),
                    order_index: Some(0),
                }],
                seed: i as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_dataset(&samples, dir)?;
    Ok(())
}

pub fn read_crops(dir: &Path) -> Result<Vec<WordCrop>> {
    read_dataset(dir)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let text = s
                .words()
                .next()
                .and_then(|a| a.transcript.clone())
                .ok_or_else(|| {
                    Error::dataset(dir.join(crate::synth::MANIFEST), format!("line {}", i + 1), "crop has no word")
                })?;
            Ok(WordCrop {
                image: s.image,
                text,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::FormGenerator;
    use crate::vocab::Vocabulary;

    #[test]
    fn crops_match_word_count_and_round_trip() {
        let vocab = Vocabulary::synthetic(30, 2).unwrap();
        let forms = FormGenerator::default().generate(&vocab, 40, 2).unwrap();
        let crops = word_crops(&forms).unwrap();
        assert_eq!(crops.len(), forms.iter().map(|f| f.words().count()).sum::<usize>());
        assert!(crops.iter().all(|c| c.image.height() == 32 && vocab.contains(&c.text)));
        let dir = tempfile::tempdir().unwrap();
        write_crops(&crops, dir.path()).unwrap();
        assert_eq!(read_crops(dir.path()).unwrap(), crops);
    }

    #[test]
    fn flipped_forms_keep_boxes_valid() {
        let vocab = Vocabulary::synthetic(30, 2).unwrap();
        let forms = FormGenerator::default().generate(&vocab, 50, 2).unwrap();
        let ranges = AugRanges {
            flip_prob: 1.0,
            ..AugRanges::default()
        };
        for f in augment_forms(&forms, &ranges, 2, 9).unwrap() {
            assert!(f.validate().is_ok());
        }
    }
}
