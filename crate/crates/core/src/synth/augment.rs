use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Morph {
    #[default]
    None,
    /// 3x3 neighbourhood max: thins dark ink.
    Erode,
    /// 3x3 neighbourhood min: thickens dark ink.
    Dilate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flip {
    #[default]
    None,
    Horizontal,
    Vertical,
}

/// One concrete augmentation; applied as morph, flip, strokes, pepper,
/// then Gaussian noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugSpec {
    pub pepper_rate: f64,
    pub stroke_count: usize,
    pub gaussian_sigma: f64,
    pub morph: Morph,
    pub flip: Flip,
}

impl AugSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pepper_rate) {
            return Err(Error::Invalid(format!(
                "pepper_rate {} outside [0, 1]",
                self.pepper_rate
            )));
        }
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::Invalid(format!(
                "gaussian_sigma {} must be finite and non-negative",
                self.gaussian_sigma
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.pepper_rate == 0.0
            && self.stroke_count == 0
            && self.gaussian_sigma == 0.0
            && self.morph == Morph::None
            && self.flip == Flip::None
    }
}

/// Ranges for drawing random [`AugSpec`]s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugRanges {
    pub max_pepper_rate: f64,
    pub max_strokes: usize,
    pub max_sigma: f64,
    pub erode_prob: f64,
    pub dilate_prob: f64,
    /// Only honoured for detector data.
    pub flip_prob: f64,
}

impl Default for AugRanges {
    fn default() -> Self {
        AugRanges {
            max_pepper_rate: 0.03,
            max_strokes: 3,
            max_sigma: 18.0,
            erode_prob: 0.15,
            dilate_prob: 0.2,
            flip_prob: 0.3,
        }
    }
}

impl AugRanges {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.erode_prob, self.dilate_prob, self.flip_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.erode_prob + self.dilate_prob > 1.0
        {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.max_pepper_rate) || !(self.max_sigma >= 0.0) {
            return Err(Error::Config("augmentation ranges out of bounds".into()));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng, allow_flip: bool) -> AugSpec {
        let u: f64 = rng.gen();
        let morph = if u < self.erode_prob {
            Morph::Erode
        } else if u < self.erode_prob + self.dilate_prob {
            Morph::Dilate
        } else {
            Morph::None
        };
        let flip_roll: f64 = rng.gen();
        let flip = if allow_flip && flip_roll < self.flip_prob {
            if rng.gen_bool(0.5) {
                Flip::Horizontal
            } else {
                Flip::Vertical
            }
        } else {
            Flip::None
        };
        AugSpec {
            pepper_rate: rng.gen::<f64>() * self.max_pepper_rate,
            stroke_count: rng.gen_range(0..=self.max_strokes),
            gaussian_sigma: rng.gen::<f64>() * self.max_sigma,
            morph,
            flip,
        }
    }
}

/// Apply `spec` to `image`; deterministic per `(image, spec, seed)`.
pub fn augment(image: &GrayImage, spec: &AugSpec, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = match spec.morph {
        Morph::None => image.clone(),
        Morph::Erode => morph3(image, true),
        Morph::Dilate => morph3(image, false),
    };
    match spec.flip {
        Flip::None => {}
        Flip::Horizontal => flip_horizontal(&mut img),
        Flip::Vertical => flip_vertical(&mut img),
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    if w > 0.0 && h > 0.0 {
        for _ in 0..spec.stroke_count {
            let a = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
            let len = rng.gen_range(5.0..=40.0);
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let b = (a.0 + len * ang.cos(), a.1 + len * ang.sin());
            let thick = rng.gen_range(1.0..=3.0);
            let gray = rng.gen_range(0..=128u8);
            img.draw_segment(a, b, thick, gray);
        }
    }
    if spec.pepper_rate > 0.0 {
        for p in img.pixels_mut() {
            if rng.gen_bool(spec.pepper_rate.min(1.0)) {
                *p = rng.gen_range(0..64);
            }
        }
    }
    if spec.gaussian_sigma > 0.0 {
        if let Ok(normal) = Normal::new(0.0, spec.gaussian_sigma) {
            for p in img.pixels_mut() {
                let v = *p as f64 + normal.sample(&mut rng);
                *p = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    img
}

/// 3x3 square structuring element; `max` selects erosion of dark ink.
fn morph3(image: &GrayImage, max: bool) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let mut v = image.get(x, y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = image.get(nx, ny);
                    v = if max { v.max(q) } else { v.min(q) };
                }
            }
            out.set(x, y, v);
        }
    }
    out
}

pub fn flip_horizontal(img: &mut GrayImage) {
    let w = img.width();
    if w == 0 {
        return;
    }
    for row in img.pixels_mut().chunks_mut(w) {
        row.reverse();
    }
}

pub fn flip_vertical(img: &mut GrayImage) {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels_mut();
    for y in 0..h / 2 {
        let (top, bottom) = px.split_at_mut((h - 1 - y) * w);
        top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient() -> GrayImage {
        GrayImage::new(5, 4, (0..20).map(|v| (v * 12) as u8).collect()).unwrap()
    }

    #[test]
    fn identity_spec_is_identity() {
        let img = gradient();
        assert_eq!(augment(&img, &AugSpec::default(), 3), img);
    }

    #[test]
    fn flips_are_involutions() {
        let img = gradient();
        for flip in [Flip::Horizontal, Flip::Vertical] {
            let spec = AugSpec {
                flip,
                ..AugSpec::default()
            };
            let once = augment(&img, &spec, 0);
            assert_ne!(once, img);
            assert_eq!(augment(&once, &spec, 0), img);
        }
    }

    #[test]
    fn dilate_single_pixel() {
        let mut img = GrayImage::filled(11, 11, 255);
        img.set(5, 5, 0);
        let spec = AugSpec {
            morph: Morph::Dilate,
            ..AugSpec::default()
        };
        let out = augment(&img, &spec, 0);
        for y in 0..11 {
            for x in 0..11 {
                let inside = (4..=6).contains(&x) && (4..=6).contains(&y);
                assert_eq!(out.get(x, y), if inside { 0 } else { 255 });
            }
        }
    }

    #[test]
    fn noisy_spec_is_deterministic() {
        let img = GrayImage::filled(40, 30, 255);
        let spec = AugSpec {
            pepper_rate: 0.1,
            stroke_count: 3,
            gaussian_sigma: 10.0,
            morph: Morph::Erode,
            flip: Flip::Vertical,
        };
        let a = augment(&img, &spec, 11);
        assert_eq!(a, augment(&img, &spec, 11));
        assert_ne!(a, augment(&img, &spec, 12));
        assert_eq!((a.width(), a.height()), (40, 30));
    }
}
