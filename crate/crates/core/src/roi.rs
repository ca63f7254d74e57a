//! Region-of-interest construction from a normalized motion field.
//!
//! A pixel `p` of frame `t` is an ROI-pixel when its referenced location
//! `p + mv(p)` lies inside the target box of frame `t - 1`. The ROI is the
//! tightest axis-aligned rectangle around those pixels.

use crate::geometry::{PixelBox, PixelPoint};
use crate::mvfield::NormalizedField;

/// Set of ROI-labeled pixels of one frame, kept in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    width: u32,
    height: u32,
    points: Vec<PixelPoint>,
}

impl RoiMask {
    /// Builds a mask from arbitrary points; out-of-frame points are dropped
    /// and duplicates merged.
    pub fn from_points(width: u32, height: u32, points: impl IntoIterator<Item = PixelPoint>) -> Self {
        let mut points: Vec<PixelPoint> = points
            .into_iter()
            .filter(|p| p.px >= 0 && p.py >= 0 && p.px < width as i64 && p.py < height as i64)
            .collect();
        points.sort_by_key(|p| (p.py, p.px));
        points.dedup();
        Self { width, height, points }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn points(&self) -> &[PixelPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Integer range `[lo, hi)` of positions `q` with `start ≤ q < end`, further
/// restricted to `[0, limit)`.
fn admissible(start: f64, end: f64, limit: u32) -> (i64, i64) {
    let lo = (start.ceil() as i64).max(0);
    let hi = (end.ceil() as i64).min(limit as i64);
    (lo, hi)
}

/// Labels every pixel whose vector lands inside `prev_box`.
pub fn label_roi_pixels(nf: &NormalizedField, prev_box: &PixelBox) -> RoiMask {
    let (rx0, rx1) = admissible(prev_box.x(), prev_box.right(), nf.width());
    let (ry0, ry1) = admissible(prev_box.y(), prev_box.bottom(), nf.height());
    let mut points = Vec::new();
    if rx0 < rx1 && ry0 < ry1 {
        for (pu, mv) in nf.iter() {
            let (dx, dy) = (mv.dx as i64, mv.dy as i64);
            let x0 = (rx0 - dx).max(pu.x as i64);
            let x1 = (rx1 - dx).min(pu.x as i64 + pu.w as i64);
            let y0 = (ry0 - dy).max(pu.y as i64);
            let y1 = (ry1 - dy).min(pu.y as i64 + pu.h as i64);
            for py in y0..y1 {
                points.extend((x0..x1).map(|px| PixelPoint::new(px, py)));
            }
        }
    }
    RoiMask::from_points(nf.width(), nf.height(), points)
}

/// Smallest rectangle enclosing every labeled pixel.
pub fn bounding_rect(mask: &RoiMask) -> Option<PixelBox> {
    let first = mask.points.first()?;
    let (mut x0, mut x1, mut y0, mut y1) = (first.px, first.px, first.py, first.py);
    for p in &mask.points {
        x0 = x0.min(p.px);
        x1 = x1.max(p.px);
        y0 = y0.min(p.py);
        y1 = y1.max(p.py);
    }
    Some(PixelBox::from_ints(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// ROI for frame `t`; falls back to `prev_box` when no pixel references it.
pub fn create_roi(nf: &NormalizedField, prev_box: &PixelBox) -> PixelBox {
    bounding_rect(&label_roi_pixels(nf, prev_box)).unwrap_or(*prev_box)
}
