//! Brute-force oracles and random fixture builders shared by the
//! integration tests. Nothing here calls into the code paths it checks.
#![allow(dead_code)]

pub mod server;

use std::f64::consts::TAU;

use mvtrack::mvfield::{FrameField, MotionVector, NormalizedField, PredictionUnit, PuMode, SequenceHeader};
use mvtrack::{contains, PixelBox, PixelPoint};
use rand::Rng;

/// IOU by counting unit cells of a `size × size` grid.
pub fn raster_iou(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64), size: i64) -> f64 {
    let inside = |r: (i64, i64, i64, i64), x: i64, y: i64| x >= r.0 && x < r.0 + r.2 && y >= r.1 && y < r.1 + r.3;
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..size {
        for x in 0..size {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    inter as f64 / union as f64
}

fn oracle_angle(dx: i32, dy: i32) -> f64 {
    if dx == 0 && dy == 0 {
        return 0.0;
    }
    let a = (dy as f64).atan2(dx as f64);
    if a >= 0.0 {
        a
    } else if a + TAU >= TAU {
        0.0
    } else {
        a + TAU
    }
}

fn oracle_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Outcome of exhaustive window enumeration for the polar vector median.
#[derive(Debug, Clone, PartialEq)]
pub struct PvmOracle {
    pub start: usize,
    pub window: usize,
    pub angle: f64,
    pub magnitude: f64,
}

/// Enumerates every run of `⌊(n+1)/2⌋` consecutive angle-sorted vectors and
/// keeps the first with the smallest summed successive angle differences.
#[allow(clippy::manual_div_ceil)]
pub fn pvm_oracle(vectors: &[(i32, i32)], magnitude_over_window: bool) -> PvmOracle {
    let mut polar: Vec<(f64, f64)> = vectors
        .iter()
        .map(|&(dx, dy)| (oracle_angle(dx, dy), ((dx as f64).powi(2) + (dy as f64).powi(2)).sqrt()))
        .collect();
    polar.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
    let n = polar.len();
    let m = (n + 1) / 2;
    let mut best: Option<(usize, f64)> = None;
    for k in 0..=(n - m) {
        let mut spread = 0.0;
        for i in k..k + m - 1 {
            spread += polar[i + 1].0 - polar[i].0;
        }
        if best.is_none_or(|(_, s)| spread < s) {
            best = Some((k, spread));
        }
    }
    let k = best.unwrap().0;
    let window = &polar[k..k + m];
    let magnitudes = if magnitude_over_window { window.iter().map(|p| p.1).collect() } else { polar.iter().map(|p| p.1).collect() };
    PvmOracle {
        start: k,
        window: m,
        angle: oracle_median(window.iter().map(|p| p.0).collect()),
        magnitude: oracle_median(magnitudes),
    }
}

/// Literal transcription of the final-box decision, never resetting the
/// threshold reduction. Candidates are identified by index.
#[derive(Debug, Clone, PartialEq)]
pub struct LiteralDecision {
    pub initial_t_iou: f64,
    pub t_iou: f64,
    pub t_reduction: f64,
}

impl Default for LiteralDecision {
    fn default() -> Self {
        Self { initial_t_iou: 0.7, t_iou: 0.7, t_reduction: 0.5 }
    }
}

impl LiteralDecision {
    /// Index of the accepted candidate, or `None` when the previous box is kept.
    ///
    /// Zero-IOU candidates are removed before line 1 of the algorithm, so a
    /// frame whose candidates are all disjoint from the ROI counts as M = 0.
    pub fn step(&mut self, ious: &[f64]) -> Option<usize> {
        let mut index = Vec::new();
        let mut scores = Vec::new();
        let mut i = 0;
        while i < ious.len() {
            if ious[i] > 0.0 {
                index.push(i);
                scores.push(ious[i]);
            }
            i += 1;
        }
        let m = scores.len();
        if m == 0 {
            return None;
        }
        let mut j = 0;
        for (idx, &s) in scores.iter().enumerate() {
            if s > scores[j] {
                j = idx;
            }
        }
        if scores[j] >= (1.0 - self.t_reduction) * self.t_iou {
            if scores[j] > self.initial_t_iou {
                self.t_iou = self.initial_t_iou;
            } else {
                self.t_iou = scores[j];
            }
            Some(index[j])
        } else {
            self.t_reduction += 0.2;
            None
        }
    }
}

/// ROI by painting a dense per-pixel vector map and scanning every pixel.
pub fn roi_oracle(nf: &NormalizedField, prev: &PixelBox) -> PixelBox {
    let (w, h) = (nf.width() as i64, nf.height() as i64);
    let mut dense = vec![None; (w * h) as usize];
    for (pu, mv) in nf.pus().iter().zip(nf.mvs()) {
        for y in pu.y..pu.y + pu.h {
            for x in pu.x..pu.x + pu.w {
                dense[(y as i64 * w + x as i64) as usize] = Some(*mv);
            }
        }
    }
    let mut hull: Option<(i64, i64, i64, i64)> = None;
    for y in 0..h {
        for x in 0..w {
            let mv: MotionVector = dense[(y * w + x) as usize].expect("PUs tile the frame");
            let (rx, ry) = (x + mv.dx as i64, y + mv.dy as i64);
            if rx < 0 || ry < 0 || rx >= w || ry >= h || !contains(prev, PixelPoint::new(rx, ry)) {
                continue;
            }
            hull = Some(match hull {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    }
    match hull {
        Some((x0, y0, x1, y1)) => PixelBox::from_ints(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
        None => *prev,
    }
}

fn split_block(rng: &mut impl Rng, x: u32, y: u32, size: u32, width: u32, height: u32, out: &mut Vec<(u32, u32, u32, u32)>) {
    if x >= width || y >= height {
        return;
    }
    if size > 4 && rng.gen_bool(0.55) {
        let half = size / 2;
        for (ox, oy) in [(0, 0), (half, 0), (0, half), (half, half)] {
            split_block(rng, x + ox, y + oy, half, width, height, out);
        }
    } else {
        out.push((x, y, size.min(width - x), size.min(height - y)));
    }
}

/// Random quadtree PU layout with random modes.
pub fn random_frame_field(rng: &mut impl Rng, header: &SequenceHeader, frame_index: u32) -> FrameField {
    let mut rects = Vec::new();
    for cy in (0..header.height).step_by(header.ctu_size as usize) {
        for cx in (0..header.width).step_by(header.ctu_size as usize) {
            split_block(rng, cx, cy, header.ctu_size, header.width, header.height, &mut rects);
        }
    }
    let reach = 8 * header.subpel as i32;
    let pus = rects
        .into_iter()
        .map(|(x, y, w, h)| {
            let roll: f64 = rng.gen();
            let mode = if roll < 0.6 && frame_index > 1 {
                PuMode::Inter {
                    mv: MotionVector::new(rng.gen_range(-reach..=reach), rng.gen_range(-reach..=reach)),
                    ref_offset: rng.gen_range(1..=(frame_index - 1).min(3)),
                }
            } else if roll < 0.85 {
                PuMode::Skip
            } else {
                PuMode::Intra
            };
            PredictionUnit { x, y, w, h, mode }
        })
        .collect();
    FrameField::new(frame_index, header, pus).expect("generated layout tiles the frame")
}

pub fn random_header(rng: &mut impl Rng, max_side: u32) -> SequenceHeader {
    let ctu_size = [8, 16, 32, 64][rng.gen_range(0..4)];
    SequenceHeader {
        width: rng.gen_range(4..=max_side),
        height: rng.gen_range(4..=max_side),
        ctu_size,
        subpel: [1, 2, 4][rng.gen_range(0..3)],
        frames: 1,
    }
}

/// Random previous box near the frame; half of them integer-valued.
pub fn random_prev_box(rng: &mut impl Rng, width: u32, height: u32) -> PixelBox {
    let (w, h) = (width as f64, height as f64);
    if rng.gen_bool(0.5) {
        let bw = rng.gen_range(1..=width.max(2) / 2 + 1) as i64;
        let bh = rng.gen_range(1..=height.max(2) / 2 + 1) as i64;
        PixelBox::from_ints(rng.gen_range(-8..width as i64), rng.gen_range(-8..height as i64), bw, bh)
    } else {
        PixelBox::new(rng.gen_range(-8.0..w), rng.gen_range(-8.0..h), rng.gen_range(0.3..w / 2.0 + 1.0), rng.gen_range(0.3..h / 2.0 + 1.0))
            .unwrap()
    }
}
