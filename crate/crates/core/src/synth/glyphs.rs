use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use crate::ctc::Alphabet;
use crate::error::{Error, Result};

type Stroke = &'static [(f64, f64)];

const O_RING: Stroke = &[
    (1.0, 0.0),
    (3.0, 0.0),
    (4.0, 1.0),
    (4.0, 5.0),
    (3.0, 6.0),
    (1.0, 6.0),
    (0.0, 5.0),
    (0.0, 1.0),
    (1.0, 0.0),
];
const P_BOWL: Stroke = &[
    (0.0, 6.0),
    (0.0, 0.0),
    (3.0, 0.0),
    (4.0, 1.0),
    (4.0, 2.0),
    (3.0, 3.0),
    (0.0, 3.0),
];

/// Pen skeleton on a 4 x 6 grid (x right, y down, baseline at y = 6).
fn skeleton(c: char) -> Option<&'static [Stroke]> {
    Some(match c {
        'A' => &[&[(0.0, 6.0), (2.0, 0.0), (4.0, 6.0)], &[(0.8, 3.6), (3.2, 3.6)]],
        'B' => &[
            &[(0.0, 0.0), (0.0, 6.0)],
            &[(0.0, 0.0), (3.0, 0.0), (4.0, 1.0), (4.0, 2.0), (3.0, 3.0), (0.0, 3.0)],
            &[(3.0, 3.0), (4.0, 4.0), (4.0, 5.0), (3.0, 6.0), (0.0, 6.0)],
        ],
        'C' => &[&[
            (4.0, 1.0),
            (3.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (0.0, 5.0),
            (1.0, 6.0),
            (3.0, 6.0),
            (4.0, 5.0),
        ]],
        'D' => &[&[
            (0.0, 0.0),
            (0.0, 6.0),
            (3.0, 6.0),
            (4.0, 5.0),
            (4.0, 1.0),
            (3.0, 0.0),
            (0.0, 0.0),
        ]],
        'E' => &[&[(4.0, 0.0), (0.0, 0.0), (0.0, 6.0), (4.0, 6.0)], &[(0.0, 3.0), (3.0, 3.0)]],
        'F' => &[&[(4.0, 0.0), (0.0, 0.0), (0.0, 6.0)], &[(0.0, 3.0), (3.0, 3.0)]],
        'G' => &[&[
            (4.0, 1.0),
            (3.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (0.0, 5.0),
            (1.0, 6.0),
            (3.0, 6.0),
            (4.0, 5.0),
            (4.0, 3.0),
            (2.0, 3.0),
        ]],
        'H' => &[
            &[(0.0, 0.0), (0.0, 6.0)],
            &[(4.0, 0.0), (4.0, 6.0)],
            &[(0.0, 3.0), (4.0, 3.0)],
        ],
        'I' => &[
            &[(1.0, 0.0), (3.0, 0.0)],
            &[(2.0, 0.0), (2.0, 6.0)],
            &[(1.0, 6.0), (3.0, 6.0)],
        ],
        'J' => &[
            &[(1.0, 0.0), (4.0, 0.0)],
            &[(3.0, 0.0), (3.0, 5.0), (2.0, 6.0), (1.0, 6.0), (0.0, 5.0)],
        ],
        'K' => &[
            &[(0.0, 0.0), (0.0, 6.0)],
            &[(4.0, 0.0), (0.0, 3.5)],
            &[(1.2, 2.6), (4.0, 6.0)],
        ],
        'L' => &[&[(0.0, 0.0), (0.0, 6.0), (4.0, 6.0)]],
        'M' => &[&[(0.0, 6.0), (0.0, 0.0), (2.0, 3.0), (4.0, 0.0), (4.0, 6.0)]],
        'N' => &[&[(0.0, 6.0), (0.0, 0.0), (4.0, 6.0), (4.0, 0.0)]],
        'O' => &[O_RING],
        'P' => &[P_BOWL],
        'Q' => &[O_RING, &[(2.5, 4.5), (4.2, 6.2)]],
        'R' => &[P_BOWL, &[(2.0, 3.0), (4.0, 6.0)]],
        'S' => &[&[
            (4.0, 1.0),
            (3.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (0.0, 2.0),
            (1.0, 3.0),
            (3.0, 3.0),
            (4.0, 4.0),
            (4.0, 5.0),
            (3.0, 6.0),
            (1.0, 6.0),
            (0.0, 5.0),
        ]],
        'T' => &[&[(0.0, 0.0), (4.0, 0.0)], &[(2.0, 0.0), (2.0, 6.0)]],
        'U' => &[&[
            (0.0, 0.0),
            (0.0, 5.0),
            (1.0, 6.0),
            (3.0, 6.0),
            (4.0, 5.0),
            (4.0, 0.0),
        ]],
        'V' => &[&[(0.0, 0.0), (2.0, 6.0), (4.0, 0.0)]],
        'W' => &[&[(0.0, 0.0), (1.0, 6.0), (2.0, 2.0), (3.0, 6.0), (4.0, 0.0)]],
        'X' => &[&[(0.0, 0.0), (4.0, 6.0)], &[(4.0, 0.0), (0.0, 6.0)]],
        'Y' => &[&[(0.0, 0.0), (2.0, 3.0), (4.0, 0.0)], &[(2.0, 3.0), (2.0, 6.0)]],
        // Slashed zero keeps it apart from O.
        '0' => &[O_RING, &[(0.6, 5.0), (3.4, 1.0)]],
        '1' => &[&[(1.0, 1.0), (2.0, 0.0), (2.0, 6.0)], &[(1.0, 6.0), (3.0, 6.0)]],
        '2' => &[&[
            (0.0, 1.0),
            (1.0, 0.0),
            (3.0, 0.0),
            (4.0, 1.0),
            (4.0, 2.0),
            (0.0, 6.0),
            (4.0, 6.0),
        ]],
        '3' => &[&[
            (0.0, 0.0),
            (4.0, 0.0),
            (2.0, 2.5),
            (3.0, 2.5),
            (4.0, 3.5),
            (4.0, 5.0),
            (3.0, 6.0),
            (1.0, 6.0),
            (0.0, 5.0),
        ]],
        '4' => &[&[(3.0, 6.0), (3.0, 0.0), (0.0, 4.0), (4.0, 4.0)]],
        '5' => &[&[
            (4.0, 0.0),
            (0.0, 0.0),
            (0.0, 2.5),
            (3.0, 2.5),
            (4.0, 3.5),
            (4.0, 5.0),
            (3.0, 6.0),
            (0.0, 6.0),
        ]],
        '6' => &[&[
            (3.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (0.0, 5.0),
            (1.0, 6.0),
            (3.0, 6.0),
            (4.0, 5.0),
            (4.0, 4.0),
            (3.0, 3.0),
            (0.0, 3.0),
        ]],
        '7' => &[&[(0.0, 0.0), (4.0, 0.0), (1.5, 6.0)]],
        '8' => &[
            &[
                (1.0, 0.0),
                (3.0, 0.0),
                (4.0, 1.0),
                (4.0, 2.0),
                (3.0, 3.0),
                (1.0, 3.0),
                (0.0, 4.0),
                (0.0, 5.0),
                (1.0, 6.0),
                (3.0, 6.0),
                (4.0, 5.0),
                (4.0, 4.0),
                (3.0, 3.0),
            ],
            &[(1.0, 3.0), (0.0, 2.0), (0.0, 1.0), (1.0, 0.0)],
        ],
        '9' => &[&[
            (4.0, 3.0),
            (1.0, 3.0),
            (0.0, 2.0),
            (0.0, 1.0),
            (1.0, 0.0),
            (3.0, 0.0),
            (4.0, 1.0),
            (4.0, 5.0),
            (3.0, 6.0),
            (1.0, 6.0),
        ]],
        '/' => &[&[(0.5, 6.0), (3.5, 0.0)]],
        _ => return None,
    })
}

const GLYPH_WIDTH: f64 = 4.0;
const GLYPH_HEIGHT: f64 = 6.0;
const LETTER_GAP: f64 = 1.3;

/// Pen parameters for one rendering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordStyle {
    /// Shear angle in degrees; positive leans right.
    pub slant: f64,
    /// Stroke width in pixels.
    pub thickness: f64,
    /// Maximum per-vertex displacement in pixels.
    pub jitter: f64,
    /// Pixels per glyph-grid unit (cap height is `6 * scale`).
    pub scale: f64,
    /// Ink gray level.
    pub ink: u8,
}

impl Default for WordStyle {
    fn default() -> Self {
        WordStyle {
            slant: 8.0,
            thickness: 2.2,
            jitter: 0.5,
            scale: 2.6,
            ink: 20,
        }
    }
}

impl WordStyle {
    /// A random writer.
    pub fn sample(rng: &mut impl Rng) -> Self {
        WordStyle {
            slant: rng.gen_range(-10.0..16.0),
            thickness: rng.gen_range(2.0..2.8),
            jitter: rng.gen_range(0.2..0.8),
            scale: rng.gen_range(2.4..2.8),
            ink: rng.gen_range(0..60),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.slant.abs() < 60.0
            && self.thickness > 0.0
            && self.jitter >= 0.0
            && self.scale > 0.0
            && [self.slant, self.thickness, self.jitter, self.scale]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad word style {self:?}")))
        }
    }
}

/// Render `text` in the given pen style. Deterministic per arguments.
pub fn render_word(text: &str, style: &WordStyle, seed: u64) -> Result<GrayImage> {
    if text.is_empty() {
        return Err(Error::Invalid("cannot render an empty word".into()));
    }
    let alphabet = Alphabet::default();
    if let Some(c) = text.chars().find(|c| !alphabet.contains(*c)) {
        return Err(Error::Alphabet(c));
    }
    render_glyphs(text, style, seed)
}

/// Like [`render_word`] but also accepts the date separator `/`.
pub(crate) fn render_glyphs(text: &str, style: &WordStyle, seed: u64) -> Result<GrayImage> {
    style.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = style.scale;
    let shear = style.slant.to_radians().tan();
    let n = text.chars().count() as f64;
    let margin = (style.thickness + 2.0 * style.jitter + 2.0).ceil();
    let ink_w = n * (GLYPH_WIDTH + LETTER_GAP) * s - LETTER_GAP * s + GLYPH_HEIGHT * s * shear.abs();
    let width = (ink_w + 2.0 * margin).ceil() as usize;
    let height = (GLYPH_HEIGHT * s + 2.0 * margin).ceil() as usize;
    let mut img = GrayImage::filled(width, height, 255);
    // Left edge offset so negative slants stay inside the canvas.
    let x_base = margin + if shear < 0.0 { GLYPH_HEIGHT * s * -shear } else { 0.0 };
    let j = style.jitter;
    for (k, c) in text.chars().enumerate() {
        let strokes = skeleton(c).ok_or(Error::Alphabet(c))?;
        let x0 = x_base + k as f64 * (GLYPH_WIDTH + LETTER_GAP) * s;
        let dy = rng.gen_range(-0.5..=0.5) * j;
        for stroke in strokes {
            let pts: Vec<(f64, f64)> = stroke
                .iter()
                .map(|&(gx, gy)| {
                    let jx = rng.gen_range(-j..=j);
                    let jy = rng.gen_range(-j..=j);
                    let y = gy * s + dy + jy;
                    let x = gx * s + (GLYPH_HEIGHT * s - gy * s) * shear + jx;
                    (x0 + x, margin + y)
                })
                .collect();
            img.draw_polyline(&pts, style.thickness, style.ink);
        }
    }
    Ok(img)
}

/// Upright, clean rendering for annotations; unsupported characters are
/// skipped and an empty label gives a 1x1 blank image.
pub fn render_label(text: &str, scale: f64) -> GrayImage {
    let text: String = text.chars().filter(|c| skeleton(*c).is_some()).collect();
    let style = WordStyle {
        slant: 0.0,
        thickness: 1.0,
        jitter: 0.0,
        scale,
        ink: 0,
    };
    if text.is_empty() {
        return GrayImage::filled(1, 1, 255);
    }
    render_glyphs(&text, &style, 0).unwrap_or_else(|_| GrayImage::filled(1, 1, 255))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_alphabet_symbol_has_a_skeleton() {
        for c in Alphabet::default().chars() {
            assert!(skeleton(*c).is_some(), "{c}");
        }
        assert!(skeleton('Z').is_none());
    }

    #[test]
    fn rendering_is_deterministic_and_inked() {
        let st = WordStyle::default();
        let a = render_word("LEAK", &st, 3).unwrap();
        assert_eq!(a, render_word("LEAK", &st, 3).unwrap());
        assert!(a.pixels().iter().any(|&p| p < 128));
    }

    #[test]
    fn width_grows_with_length() {
        let st = WordStyle::default();
        let w2 = render_word("AB", &st, 1).unwrap().width();
        let w4 = render_word("ABCD", &st, 1).unwrap().width();
        assert!(w2 < w4);
    }

    #[test]
    fn rejects_foreign_characters() {
        let st = WordStyle::default();
        assert!(matches!(render_word("AZ", &st, 0), Err(Error::Alphabet('Z'))));
        assert!(matches!(render_word("1/2", &st, 0), Err(Error::Alphabet('/'))));
        assert!(render_word("", &st, 0).is_err());
    }
}
