//! Axis-aligned boxes and the five form-content classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Box in pixel coordinates, `x0 < x1`, `y0 < y1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            x0: cx - w / 2.0,
            y0: cy - h / 2.0,
            x1: cx + w / 2.0,
            y1: cy + h / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::DegenerateBox(self.x0, self.y0, self.x1, self.y1));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    /// Intersection over union without validation (callers guarantee
    /// non-degenerate boxes).
    pub fn iou_unchecked(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        if inter <= 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Intersection area over union area; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(a.iou_unchecked(b))
}

/// Content classes annotated on a form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FormClass {
    Word,
    Signature,
    Stamp,
    Date,
    Noise,
}

impl FormClass {
    pub const ALL: [FormClass; 5] = [
        FormClass::Word,
        FormClass::Signature,
        FormClass::Stamp,
        FormClass::Date,
        FormClass::Noise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FormClass> {
        FormClass::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FormClass::Word => "Word",
            FormClass::Signature => "Signature",
            FormClass::Stamp => "Stamp",
            FormClass::Date => "Date",
            FormClass::Noise => "Noise",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BBox::new(5.0, 0.0, 15.0, 10.0).unwrap();
        let c = BBox::new(20.0, 20.0, 30.0, 30.0).unwrap();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &c).unwrap(), 0.0);
        assert!((iou(&a, &b).unwrap() - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 5.0).is_err());
        let bad = BBox {
            x0: 0.0,
            y0: 3.0,
            x1: 2.0,
            y1: 1.0,
        };
        let ok = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(matches!(iou(&bad, &ok), Err(Error::DegenerateBox(..))));
    }

    #[test]
    fn exactly_five_classes() {
        assert_eq!(FormClass::ALL.len(), 5);
        for (i, c) in FormClass::ALL.iter().enumerate() {
            assert_eq!(FormClass::from_index(i), Some(*c));
        }
    }
}
