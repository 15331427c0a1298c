use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::glyphs::{render_glyphs, render_word, WordStyle};
use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{BBox, FormClass};
use crate::vocab::Vocabulary;

pub const FORM_WIDTH: usize = 512;
pub const FORM_HEIGHT: usize = 256;

/// Pixels darker than this count as ink when measuring boxes.
const INK_THRESHOLD: u8 = 200;
const MAX_ATTEMPTS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub bbox: BBox,
    pub class: FormClass,
    /// Present iff `class == Word`.
    pub transcript: Option<String>,
    /// Position in reading order (words only).
    pub order_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormSample {
    pub image: GrayImage,
    pub annotations: Vec<Annotation>,
    pub seed: u64,
}

impl FormSample {
    pub fn words(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(|a| a.class == FormClass::Word)
    }

    /// Word transcripts in ground-truth reading order.
    pub fn transcripts_in_order(&self) -> Vec<String> {
        let mut words: Vec<&Annotation> = self.words().collect();
        words.sort_by_key(|a| a.order_index);
        words
            .into_iter()
            .filter_map(|a| a.transcript.clone())
            .collect()
    }

    /// Structural checks shared by the generator and the dataset reader;
    /// the 3..=50 annotation range is a corpus policy and not enforced here.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let (w, h) = (self.image.width() as f64, self.image.height() as f64);
        let mut orders = Vec::new();
        for (i, a) in self.annotations.iter().enumerate() {
            let field = |f: &str| format!("annotations[{i}].{f}");
            a.bbox.validate().map_err(|e| (field("box"), e.to_string()))?;
            if a.bbox.x0 < 0.0 || a.bbox.y0 < 0.0 || a.bbox.x1 > w || a.bbox.y1 > h {
                return Err((field("box"), "box leaves the image".into()));
            }
            match (a.class, &a.transcript, a.order_index) {
                (FormClass::Word, Some(_), Some(k)) => orders.push(k),
                (FormClass::Word, None, _) => {
                    return Err((field("transcript"), "word without transcript".into()))
                }
                (FormClass::Word, _, None) => {
                    return Err((field("order_index"), "word without order index".into()))
                }
                (_, Some(_), _) => {
                    return Err((field("transcript"), "transcript on a non-word".into()))
                }
                _ => {}
            }
        }
        orders.sort_unstable();
        if orders.iter().enumerate().any(|(i, &k)| i != k) {
            return Err((
                "annotations.order_index".into(),
                "word order indices are not a permutation of 0..n".into(),
            ));
        }
        Ok(())
    }
}

/// Number of each non-word class to scatter on a form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorCounts {
    pub signature: usize,
    pub stamp: usize,
    pub date: usize,
    pub noise: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormSpec {
    pub n_words: usize,
    pub ruled_lines: bool,
    pub distractors: DistractorCounts,
}

/// Lay out `n_words` vocabulary words in lines, then scatter distractors in
/// the remaining free space.
pub fn compose_form(spec: &FormSpec, vocab: &Vocabulary, seed: u64) -> Result<FormSample> {
    if spec.n_words == 0 {
        return Err(Error::Invalid("a form needs at least one word".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (FORM_WIDTH, FORM_HEIGHT);
    let mut image = GrayImage::filled(w, h, 255);
    for p in image.pixels_mut() {
        *p = 255 - rng.gen_range(0..6u8);
    }

    let writer = WordStyle::sample(&mut rng);
    let pitch = rng.gen_range(36.0..44.0f64);
    let top = rng.gen_range(8.0..16.0f64);
    let left = rng.gen_range(8.0..24.0f64);

    // Render and place words.
    struct Placed {
        img: GrayImage,
        x: isize,
        y: isize,
        text: String,
    }
    let mut placed: Vec<Placed> = Vec::with_capacity(spec.n_words);
    let mut line = 0usize;
    let mut x = left;
    for _ in 0..spec.n_words {
        let text = vocab.word(rng.gen_range(0..vocab.len())).to_string();
        let style = WordStyle {
            slant: writer.slant + rng.gen_range(-3.0..3.0),
            thickness: (writer.thickness + rng.gen_range(-0.15..0.15)).max(1.0),
            jitter: writer.jitter,
            scale: writer.scale * rng.gen_range(0.95..1.05),
            ink: writer.ink,
        };
        let img = render_word(&text, &style, rng.gen())?;
        if x + img.width() as f64 > (w - 6) as f64 {
            line += 1;
            x = left + rng.gen_range(0.0..16.0);
        }
        let y = top + line as f64 * pitch + rng.gen_range(-3.0..=3.0);
        if x + img.width() as f64 > (w - 6) as f64 || y + img.height() as f64 > (h - 2) as f64 {
            return Err(Error::Layout(format!(
                "{} words do not fit on a {w}x{h} form",
                spec.n_words
            )));
        }
        let gap = rng.gen_range(6.0..20.0);
        placed.push(Placed {
            x: x.round() as isize,
            y: y.round().max(0.0) as isize,
            text,
            img,
        });
        x += placed.last().map_or(0.0, |p| p.img.width() as f64) + gap;
    }

    if spec.ruled_lines {
        let shade = rng.gen_range(150..200u8);
        let body = 6.0 * writer.scale + 3.0;
        let mut k = 0;
        loop {
            let y = top + k as f64 * pitch + body + 4.0;
            if y >= (h - 2) as f64 {
                break;
            }
            image.draw_segment((2.0, y), ((w - 2) as f64, y), 1.0, shade);
            k += 1;
        }
    }

    let mut annotations = Vec::new();
    let mut occupied: Vec<BBox> = Vec::new();
    // Placement order is reading order: lines top to bottom, left to right.
    for (k, p) in placed.iter().enumerate() {
        image.paste_min(&p.img, p.x, p.y);
        let (x0, y0, x1, y1) = p
            .img
            .ink_bounds(INK_THRESHOLD)
            .ok_or_else(|| Error::Layout(format!("word {:?} rendered without ink", p.text)))?;
        let bbox = clip_box(
            (p.x + x0 as isize) as f64,
            (p.y + y0 as isize) as f64,
            (p.x + x1 as isize) as f64,
            (p.y + y1 as isize) as f64,
        )?;
        occupied.push(bbox);
        annotations.push(Annotation {
            bbox,
            class: FormClass::Word,
            transcript: Some(p.text.clone()),
            order_index: Some(k),
        });
    }

    let d = spec.distractors;
    let plan = [
        (FormClass::Signature, d.signature),
        (FormClass::Stamp, d.stamp),
        (FormClass::Date, d.date),
        (FormClass::Noise, d.noise),
    ];
    for (class, count) in plan {
        for _ in 0..count {
            let art = match class {
                FormClass::Signature => signature(&mut rng),
                FormClass::Stamp => stamp(&mut rng),
                FormClass::Date => date(&mut rng, &writer)?,
                _ => noise_blob(&mut rng),
            };
            let (ax0, ay0, ax1, ay1) = art
                .ink_bounds(INK_THRESHOLD)
                .ok_or_else(|| Error::Layout(format!("{} rendered without ink", class.name())))?;
            let mut done = false;
            for _ in 0..MAX_ATTEMPTS {
                if art.width() + 4 > w || art.height() + 4 > h {
                    break;
                }
                let px = rng.gen_range(2..=w - art.width() - 2) as isize;
                let py = rng.gen_range(2..=h - art.height() - 2) as isize;
                let bbox = clip_box(
                    (px + ax0 as isize) as f64,
                    (py + ay0 as isize) as f64,
                    (px + ax1 as isize) as f64,
                    (py + ay1 as isize) as f64,
                )?;
                let grown = BBox::from_center(
                    bbox.center().0,
                    bbox.center().1,
                    bbox.width() + 8.0,
                    bbox.height() + 8.0,
                );
                if occupied.iter().any(|o| o.intersection(&grown) > 0.0) {
                    continue;
                }
                image.paste_min(&art, px, py);
                occupied.push(bbox);
                annotations.push(Annotation {
                    bbox,
                    class,
                    transcript: None,
                    order_index: None,
                });
                done = true;
                break;
            }
            if !done {
                return Err(Error::Layout(format!(
                    "no free space for a {} after {MAX_ATTEMPTS} attempts",
                    class.name()
                )));
            }
        }
    }

    Ok(FormSample {
        image,
        annotations,
        seed,
    })
}

fn clip_box(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<BBox> {
    BBox::new(
        x0.max(0.0),
        y0.max(0.0),
        x1.min(FORM_WIDTH as f64),
        y1.min(FORM_HEIGHT as f64),
    )
}

fn signature(rng: &mut impl Rng) -> GrayImage {
    let w = rng.gen_range(60..110usize);
    let h = rng.gen_range(22..34usize);
    let mut img = GrayImage::filled(w, h, 255);
    let ink = rng.gen_range(0..70u8);
    let thick = rng.gen_range(1.3..2.2);
    let loops = rng.gen_range(3.0..7.0f64);
    let (lx, ly) = (rng.gen_range(2.0..5.0), (h as f64 / 2.0 - 4.0).max(2.0));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let n = 80;
    let pts: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let a = t * loops * std::f64::consts::TAU + phase;
            let x = 4.0 + t * (w as f64 - 8.0 - 2.0 * lx) + lx + lx * a.cos();
            let y = h as f64 / 2.0 + ly * a.sin() * (0.6 + 0.4 * (3.0 * t).sin());
            (x, y)
        })
        .collect();
    img.draw_polyline(&pts, thick, ink);
    if rng.gen_bool(0.5) {
        let y = h as f64 - 3.0;
        img.draw_segment((3.0, y), (w as f64 - 3.0, y - rng.gen_range(0.0..4.0)), thick, ink);
    }
    img
}

fn stamp(rng: &mut impl Rng) -> GrayImage {
    let w = rng.gen_range(36..60usize);
    let h = rng.gen_range(36..60usize);
    let mut img = GrayImage::filled(w, h, 255);
    let ink = rng.gen_range(60..140u8);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    if rng.gen_bool(0.5) {
        for inset in [3.0, 6.0] {
            let (x0, y0, x1, y1) = (inset, inset, w as f64 - inset, h as f64 - inset);
            img.draw_polyline(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)], 1.6, ink);
        }
    } else {
        for r in [0.0, 3.0] {
            let pts: Vec<(f64, f64)> = (0..=48)
                .map(|i| {
                    let a = i as f64 / 48.0 * std::f64::consts::TAU;
                    (cx + (cx - 3.0 - r) * a.cos(), cy + (cy - 3.0 - r) * a.sin())
                })
                .collect();
            img.draw_polyline(&pts, 1.6, ink);
        }
    }
    for _ in 0..rng.gen_range(2..5) {
        let y = rng.gen_range(cy - 8.0..cy + 8.0);
        let x0 = rng.gen_range(10.0..cx);
        let x1 = rng.gen_range(cx..w as f64 - 10.0);
        img.draw_segment((x0, y), (x1, y), 1.4, ink);
    }
    img
}

fn date(rng: &mut impl Rng, writer: &WordStyle) -> Result<GrayImage> {
    let text = format!(
        "{:02}/{:02}/{:02}",
        rng.gen_range(1..=28),
        rng.gen_range(1..=12),
        rng.gen_range(0..100)
    );
    let style = WordStyle {
        scale: writer.scale * rng.gen_range(0.7..0.85),
        ..*writer
    };
    render_glyphs(&text, &style, rng.gen())
}

fn noise_blob(rng: &mut impl Rng) -> GrayImage {
    let w = rng.gen_range(8..28usize);
    let h = rng.gen_range(8..28usize);
    let mut img = GrayImage::filled(w, h, 255);
    let ink = rng.gen_range(0..100u8);
    for _ in 0..rng.gen_range(2..6) {
        let a = (rng.gen_range(2.0..w as f64 - 2.0), rng.gen_range(2.0..h as f64 - 2.0));
        let b = (
            (a.0 + rng.gen_range(-5.0..5.0)).clamp(2.0, w as f64 - 2.0),
            (a.1 + rng.gen_range(-5.0..5.0)).clamp(2.0, h as f64 - 2.0),
        );
        img.draw_segment(a, b, rng.gen_range(1.5..4.0), ink);
    }
    img
}

/// Ranges from which per-form specs are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormGenerator {
    pub min_words: usize,
    pub max_words: usize,
    /// Upper bound (inclusive) on each distractor class count.
    pub max_distractors: usize,
    pub ruled_line_prob: f64,
}

impl Default for FormGenerator {
    fn default() -> Self {
        FormGenerator {
            min_words: 4,
            max_words: 14,
            max_distractors: 1,
            ruled_line_prob: 0.5,
        }
    }
}

impl FormGenerator {
    pub fn validate(&self) -> Result<()> {
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::Config(format!(
                "word range {}..={} is empty",
                self.min_words, self.max_words
            )));
        }
        if self.min_words < 3 || self.max_words + 4 * self.max_distractors > 50 {
            return Err(Error::Config(
                "forms must carry between 3 and 50 annotations".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ruled_line_prob) {
            return Err(Error::Config("ruled_line_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn spec(&self, seed: u64) -> FormSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F0E4);
        let mut count = || rng.gen_range(0..=self.max_distractors);
        let distractors = DistractorCounts {
            signature: count(),
            stamp: count(),
            date: count(),
            noise: count(),
        };
        FormSpec {
            n_words: rng.gen_range(self.min_words..=self.max_words),
            ruled_lines: rng.gen_bool(self.ruled_line_prob),
            distractors,
        }
    }

    /// Form for `seed`; a spec that cannot be laid out is retried with
    /// fewer words, so every seed yields a form.
    pub fn form(&self, vocab: &Vocabulary, seed: u64) -> Result<FormSample> {
        let mut spec = self.spec(seed);
        loop {
            match compose_form(&spec, vocab, seed) {
                Err(Error::Layout(_)) if spec.n_words > self.min_words => spec.n_words -= 1,
                other => return other,
            }
        }
    }

    /// `count` forms with seeds `base_seed + i`, generated in parallel.
    pub fn generate(&self, vocab: &Vocabulary, base_seed: u64, count: usize) -> Result<Vec<FormSample>> {
        self.validate()?;
        (0..count as u64)
            .into_par_iter()
            .map(|i| self.form(vocab, base_seed.wrapping_add(i)))
            .collect()
    }
}

/// Distinct transcripts across a corpus.
pub fn corpus_transcripts(samples: &[FormSample]) -> HashSet<String> {
    samples
        .iter()
        .flat_map(|s| s.words().filter_map(|a| a.transcript.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::synthetic(30, 0).unwrap()
    }

    #[test]
    fn single_word_form() {
        let spec = FormSpec {
            n_words: 1,
            ruled_lines: false,
            distractors: DistractorCounts::default(),
        };
        let f = compose_form(&spec, &vocab(), 9).unwrap();
        assert_eq!(f.annotations.len(), 1);
        assert_eq!(f.annotations[0].class, FormClass::Word);
        assert_eq!(f.annotations[0].order_index, Some(0));
        assert!(f.validate().is_ok());
    }

    #[test]
    fn forms_are_deterministic_and_valid() {
        let spec = FormSpec {
            n_words: 10,
            ruled_lines: true,
            distractors: DistractorCounts {
                signature: 1,
                stamp: 1,
                date: 1,
                noise: 2,
            },
        };
        let v = vocab();
        let a = compose_form(&spec, &v, 77).unwrap();
        assert_eq!(a, compose_form(&spec, &v, 77).unwrap());
        assert_eq!(a.annotations.len(), 15);
        assert!(a.validate().is_ok());
        let words: Vec<&Annotation> = a.words().collect();
        for (i, p) in words.iter().enumerate() {
            for q in &words[i + 1..] {
                assert!(p.bbox.iou_unchecked(&q.bbox) < 0.3);
            }
        }
        for d in a.annotations.iter().filter(|x| x.class != FormClass::Word) {
            for w in &words {
                assert!(d.bbox.iou_unchecked(&w.bbox) <= 0.2);
            }
        }
    }

    #[test]
    fn impossible_layout_is_an_error() {
        let spec = FormSpec {
            n_words: 200,
            ruled_lines: false,
            distractors: DistractorCounts::default(),
        };
        assert!(matches!(compose_form(&spec, &vocab(), 1), Err(Error::Layout(_))));
    }

    #[test]
    fn generator_respects_annotation_range() {
        let gen = FormGenerator::default();
        let forms = gen.generate(&vocab(), 100, 8).unwrap();
        for f in &forms {
            assert!((3..=50).contains(&f.annotations.len()));
        }
    }
}
