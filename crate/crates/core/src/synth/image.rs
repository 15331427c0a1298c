use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// 8-bit grayscale image, row-major; 0 is black ink, 255 white paper.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Image(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Darken a pixel towards `ink` by coverage `alpha` in [0,1]; out of
    /// bounds is ignored.
    #[inline]
    pub fn blend_ink(&mut self, x: isize, y: isize, ink: u8, alpha: f64) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height || alpha <= 0.0
        {
            return;
        }
        let a = alpha.min(1.0);
        let v = (255.0 - a * (255.0 - ink as f64)).round() as u8;
        let p = &mut self.pixels[y as usize * self.width + x as usize];
        *p = (*p).min(v);
    }

    /// Anti-aliased thick line segment.
    pub fn draw_segment(&mut self, a: (f64, f64), b: (f64, f64), thickness: f64, ink: u8) {
        let r = thickness / 2.0;
        let x0 = (a.0.min(b.0) - r - 1.0).floor() as isize;
        let x1 = (a.0.max(b.0) + r + 1.0).ceil() as isize;
        let y0 = (a.1.min(b.1) - r - 1.0).floor() as isize;
        let y1 = (a.1.max(b.1) + r + 1.0).ceil() as isize;
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
                let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let alpha = (r + 0.5 - d).clamp(0.0, 1.0);
                self.blend_ink(x, y, ink, alpha);
            }
        }
    }

    pub fn draw_polyline(&mut self, pts: &[(f64, f64)], thickness: f64, ink: u8) {
        for w in pts.windows(2) {
            self.draw_segment(w[0], w[1], thickness, ink);
        }
    }

    /// Darken-composite `src` with its top-left corner at `(x, y)`.
    pub fn paste_min(&mut self, src: &GrayImage, x: isize, y: isize) {
        for sy in 0..src.height {
            let ty = y + sy as isize;
            if ty < 0 || ty as usize >= self.height {
                continue;
            }
            for sx in 0..src.width {
                let tx = x + sx as isize;
                if tx < 0 || tx as usize >= self.width {
                    continue;
                }
                let p = &mut self.pixels[ty as usize * self.width + tx as usize];
                *p = (*p).min(src.get(sx, sy));
            }
        }
    }

    /// Tight box (half-open, pixel units) around pixels darker than
    /// `threshold`; `None` for a blank image.
    pub fn ink_bounds(&self, threshold: u8) -> Option<(usize, usize, usize, usize)> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) < threshold {
                    bounds = Some(match bounds {
                        None => (x, y, x + 1, y + 1),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                    });
                }
            }
        }
        bounds
    }

    /// Copy the region of `bbox` padded by `pad` pixels, clamped to the image.
    pub fn crop(&self, bbox: &BBox, pad: f64) -> Result<GrayImage> {
        let x0 = (bbox.x0 - pad).floor().max(0.0) as usize;
        let y0 = (bbox.y0 - pad).floor().max(0.0) as usize;
        let x1 = ((bbox.x1 + pad).ceil() as usize).min(self.width);
        let y1 = ((bbox.y1 + pad).ceil() as usize).min(self.height);
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Image(format!(
                "crop {bbox:?} falls outside the {}x{} image",
                self.width, self.height
            )));
        }
        let mut px = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            px.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x1]);
        }
        GrayImage::new(x1 - x0, y1 - y0, px)
    }

    /// Bilinear resampling to `width x height` (pixel-centre aligned).
    pub fn resize(&self, width: usize, height: usize) -> Result<GrayImage> {
        if self.width == 0 || self.height == 0 || width == 0 || height == 0 {
            return Err(Error::Image(format!(
                "cannot resize {}x{} to {width}x{height}",
                self.width, self.height
            )));
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.get(x0, y0) as f64 * (1.0 - wx) + self.get(x1, y0) as f64 * wx;
                let bot = self.get(x0, y1) as f64 * (1.0 - wx) + self.get(x1, y1) as f64 * wx;
                out.push((top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8);
            }
        }
        GrayImage::new(width, height, out)
    }

    /// Scale to `height` keeping aspect ratio, width capped at `max_width`.
    pub fn resize_to_height(&self, height: usize, max_width: usize) -> Result<GrayImage> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Image("cannot resize an empty image".into()));
        }
        let w = ((self.width as f64 * height as f64 / self.height as f64).round() as usize)
            .clamp(1, max_width);
        self.resize(w, height)
    }

    /// Ink intensities in `[0,1]` (1 = black), row-major.
    pub fn ink(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|&p| (255.0 - p as f64) / 255.0)
            .collect()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parse a binary (P5) PGM with maxval 255.
    pub fn from_pgm(bytes: &[u8]) -> Result<GrayImage> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Image("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::Image(format!("expected P5 magic, found {:?}", fields[0])));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Image(format!("bad PGM {what} {s:?}")))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if maxval != 255 {
            return Err(Error::Image(format!("unsupported PGM maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let data = bytes
            .get(pos..pos + width * height)
            .ok_or_else(|| Error::Image("truncated PGM raster".into()))?;
        GrayImage::new(width, height, data.to_vec())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn load_pgm(path: &Path) -> Result<GrayImage> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        GrayImage::from_pgm(&bytes).map_err(|e| Error::dataset(path, "image", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let back = GrayImage::from_pgm(&img.to_pgm()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_rejects_other_formats() {
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::from_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(GrayImage::from_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::new(2, 2, vec![0, 50, 100, 150]).unwrap();
        assert_eq!(img.resize(2, 2).unwrap(), img);
        let flat = GrayImage::filled(7, 3, 90);
        assert!(flat.resize(13, 5).unwrap().pixels().iter().all(|&p| p == 90));
    }

    #[test]
    fn crop_is_clamped() {
        let img = GrayImage::filled(10, 10, 255);
        let c = img.crop(&BBox::new(8.0, 8.0, 12.0, 12.0).unwrap(), 2.0).unwrap();
        assert_eq!((c.width(), c.height()), (4, 4));
    }

    #[test]
    fn segment_leaves_ink() {
        let mut img = GrayImage::filled(20, 20, 255);
        img.draw_segment((2.0, 2.0), (17.0, 15.0), 2.0, 0);
        assert!(img.pixels().iter().any(|&p| p < 128));
        assert_eq!(img.ink_bounds(128).map(|b| b.0 <= 3), Some(true));
    }
}
