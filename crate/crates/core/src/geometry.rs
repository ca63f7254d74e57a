//! Axis-aligned boxes and the overlap/distance measures used throughout
//! the tracker.
//!
//! Boxes follow the half-open convention `[x, x + w) × [y, y + h)` in 0-based
//! frame coordinates, so two boxes sharing an edge do not overlap.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box has non-finite field: ({x}, {y}, {w}, {h})")]
    NonFinite { x: f64, y: f64, w: f64, h: f64 },
    #[error("box has non-positive size: w={w}, h={h}")]
    Degenerate { w: f64, h: f64 },
}

/// Axis-aligned rectangle in frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl PixelBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite { x, y, w, h });
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::Degenerate { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Box with integer corners. Panics on non-positive size.
    pub fn from_ints(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self::new(x as f64, y as f64, w as f64, h as f64).expect("integer box must have positive size")
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// True when every field is an integer.
    pub fn is_integral(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.fract() == 0.0)
    }

    /// Area of the overlap with `other`; zero when disjoint or edge-adjacent.
    pub fn intersection_area(&self, other: &PixelBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Intersection with `[0, width) × [0, height)`, or `None` when nothing
    /// of the box remains inside.
    pub fn clip_to_frame(&self, width: u32, height: u32) -> Option<PixelBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width as f64);
        let y1 = self.bottom().min(height as f64);
        PixelBox::new(x0, y0, x1 - x0, y1 - y0).ok()
    }

    /// Multiplies every coordinate and size by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<PixelBox, GeometryError> {
        PixelBox::new(self.x * factor, self.y * factor, self.w * factor, self.h * factor)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<PixelBox, GeometryError> {
        PixelBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

impl fmt::Display for PixelBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

/// Integer pixel address (column, row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelPoint {
    pub px: i64,
    pub py: i64,
}

impl PixelPoint {
    pub fn new(px: i64, py: i64) -> Self {
        Self { px, py }
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    if a == b {
        // edge differences like (y + h) - y need not round back to h
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &PixelBox, b: &PixelBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Half-open membership: `x ≤ px < x + w` and `y ≤ py < y + h`.
pub fn contains(b: &PixelBox, p: PixelPoint) -> bool {
    let px = p.px as f64;
    let py = p.py as f64;
    b.x <= px && px < b.x + b.w && b.y <= py && py < b.y + b.h
}
