//! One-pass evaluation: Success and Precision curves with AUC, DPR and OSR.

use std::fmt::Write as _;
use std::io::BufRead;

use thiserror::Error;

use crate::geometry::{center_distance, iou, PixelBox};

/// Success thresholds `0, 0.05, ..., 1.0`.
pub const SUCCESS_STEPS: usize = 20;
/// Precision thresholds `0, 1, ..., 50` pixels.
pub const PRECISION_MAX_PX: usize = 50;
pub const DPR_THRESHOLD_PX: usize = 20;
pub const OSR_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("results cover {results} frames but ground truth has {gt}")]
    LengthMismatch { results: usize, gt: usize },
    #[error("ground truth has no valid frame")]
    NoValidFrames,
    #[error("ground truth line {line}: {message}")]
    GroundTruth { line: usize, message: String },
    #[error("reading ground truth: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    /// `threshold,value` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,value\n");
        for (t, v) in self.thresholds.iter().zip(&self.values) {
            let _ = writeln!(out, "{t},{v}");
        }
        out
    }
}

pub fn success_thresholds() -> Vec<f64> {
    (0..=SUCCESS_STEPS).map(|i| i as f64 / SUCCESS_STEPS as f64).collect()
}

pub fn precision_thresholds() -> Vec<f64> {
    (0..=PRECISION_MAX_PX).map(|d| d as f64).collect()
}

/// Ground truth per frame; `None` marks frames without a valid target box.
pub type GroundTruth = Vec<Option<PixelBox>>;

fn scored_frames<F>(results: &[PixelBox], gt: &[Option<PixelBox>], metric: F) -> Result<Vec<f64>, EvalError>
where
    F: Fn(&PixelBox, &PixelBox) -> f64,
{
    if results.len() != gt.len() {
        return Err(EvalError::LengthMismatch { results: results.len(), gt: gt.len() });
    }
    let scores: Vec<f64> = results
        .iter()
        .zip(gt)
        .filter_map(|(r, g)| g.as_ref().map(|g| metric(r, g)))
        .collect();
    if scores.is_empty() {
        return Err(EvalError::NoValidFrames);
    }
    Ok(scores)
}

fn fraction(scores: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    scores.iter().filter(|&&s| pred(s)).count() as f64 / scores.len() as f64
}

/// Fraction of frames with `iou ≥ τ` for each success threshold.
pub fn success_curve(results: &[PixelBox], gt: &[Option<PixelBox>]) -> Result<Curve, EvalError> {
    let ious = scored_frames(results, gt, iou)?;
    let thresholds = success_thresholds();
    let values = thresholds.iter().map(|&t| fraction(&ious, |v| v >= t)).collect();
    Ok(Curve { thresholds, values })
}

/// Fraction of frames with center error `≤ δ` for each pixel threshold.
pub fn precision_curve(results: &[PixelBox], gt: &[Option<PixelBox>]) -> Result<Curve, EvalError> {
    let dists = scored_frames(results, gt, center_distance)?;
    let thresholds = precision_thresholds();
    let values = thresholds.iter().map(|&t| fraction(&dists, |d| d <= t)).collect();
    Ok(Curve { thresholds, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub success: Curve,
    pub precision: Curve,
    pub auc: f64,
    /// Percentage of frames within 20 px.
    pub dpr_at_20: f64,
    /// Percentage of frames with IOU ≥ 0.5.
    pub osr_at_05: f64,
    /// Frames with valid ground truth.
    pub frame_count: usize,
    /// Frames skipped for lack of ground truth.
    pub skipped_frames: usize,
}

impl EvalReport {
    /// `key=value` summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "frames={}", self.frame_count);
        let _ = writeln!(out, "skipped={}", self.skipped_frames);
        let _ = writeln!(out, "auc={:?}", self.auc);
        let _ = writeln!(out, "dpr={:?}", self.dpr_at_20);
        let _ = writeln!(out, "osr={:?}", self.osr_at_05);
        out
    }
}

pub fn summarize(results: &[PixelBox], gt: &[Option<PixelBox>]) -> Result<EvalReport, EvalError> {
    let success = success_curve(results, gt)?;
    let precision = precision_curve(results, gt)?;
    let auc = success.values.iter().sum::<f64>() / success.values.len() as f64;
    let osr_idx = (OSR_THRESHOLD * SUCCESS_STEPS as f64).round() as usize;
    let frame_count = gt.iter().filter(|g| g.is_some()).count();
    Ok(EvalReport {
        dpr_at_20: precision.values[DPR_THRESHOLD_PX] * 100.0,
        osr_at_05: success.values[osr_idx] * 100.0,
        auc,
        success,
        precision,
        frame_count,
        skipped_frames: gt.len() - frame_count,
    })
}

/// Parses OTB-style ground truth (`x,y,w,h` per line, 1-based), converting
/// to 0-based boxes. Tabs or spaces may replace the commas. Lines with a
/// non-positive or non-finite size become `None`.
pub fn load_ground_truth(reader: impl BufRead) -> Result<GroundTruth, EvalError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let err = |message: String| EvalError::GroundTruth { line: line_no, message };
        let parts: Vec<&str> = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if parts.len() != 4 {
            return Err(err(format!("expected 4 values, found {}", parts.len())));
        }
        let mut v = [0.0f64; 4];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| err(format!("`{p}` is not a number")))?;
        }
        out.push(PixelBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]).ok());
    }
    if out.is_empty() {
        return Err(EvalError::GroundTruth { line: 0, message: "ground truth is empty".into() });
    }
    Ok(out)
}

/// OTB-style text for 0-based boxes.
pub fn write_ground_truth(boxes: &[PixelBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(out, "{},{},{},{}", b.x() + 1.0, b.y() + 1.0, b.w(), b.h());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> PixelBox {
        PixelBox::new(x, y, w, h).unwrap()
    }

    fn some(boxes: &[PixelBox]) -> GroundTruth {
        boxes.iter().copied().map(Some).collect()
    }

    #[test]
    fn perfect_tracker() {
        let seq = [bx(0.0, 0.0, 10.0, 10.0), bx(3.0, 4.0, 6.0, 8.0)];
        let r = summarize(&seq, &some(&seq)).unwrap();
        assert!(r.success.values.iter().all(|&v| v == 1.0));
        assert!(r.precision.values.iter().all(|&v| v == 1.0));
        assert_eq!((r.auc, r.dpr_at_20, r.osr_at_05), (1.0, 100.0, 100.0));
    }

    #[test]
    fn disjoint_tracker() {
        let res = [bx(0.0, 0.0, 10.0, 10.0)];
        let gt = some(&[bx(200.0, 200.0, 10.0, 10.0)]);
        let r = summarize(&res, &gt).unwrap();
        assert_eq!(r.success.values[0], 1.0);
        assert!(r.success.values[1..].iter().all(|&v| v == 0.0));
        assert_eq!(r.auc, 1.0 / 21.0);
        assert_eq!((r.dpr_at_20, r.osr_at_05), (0.0, 0.0));
    }

    #[test]
    fn two_frame_success_steps_at_point_four() {
        let gt = some(&[bx(0.0, 0.0, 10.0, 10.0), bx(0.0, 0.0, 10.0, 10.0)]);
        // IOU 1.0 and 40/100
        let res = [bx(0.0, 0.0, 10.0, 10.0), bx(0.0, 0.0, 4.0, 10.0)];
        let c = success_curve(&res, &gt).unwrap();
        for (t, v) in c.thresholds.iter().zip(&c.values) {
            let expected = if *t <= 0.4 { 1.0 } else { 0.5 };
            assert_eq!(*v, expected, "τ={t}");
        }
    }

    #[test]
    fn precision_counts_distances() {
        let base = bx(100.0, 100.0, 10.0, 10.0);
        let gt = some(&[base, base, base]);
        let res = [base, bx(110.0, 100.0, 10.0, 10.0), bx(100.0, 130.0, 10.0, 10.0)];
        let c = precision_curve(&res, &gt).unwrap();
        for (d, v) in c.thresholds.iter().zip(&c.values) {
            let expected = if *d < 10.0 { 1.0 / 3.0 } else if *d < 30.0 { 2.0 / 3.0 } else { 1.0 };
            assert_eq!(*v, expected, "δ={d}");
        }

        let far = [bx(125.0, 100.0, 10.0, 10.0)];
        let c = precision_curve(&far, &some(&[base])).unwrap();
        assert!(c.values[..25].iter().all(|&v| v == 0.0));
        assert!(c.values[25..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn length_mismatch_and_empty() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(success_curve(&[b], &[]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(precision_curve(&[b, b], &some(&[b])), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(summarize(&[b], &[None]), Err(EvalError::NoValidFrames)));
    }

    #[test]
    fn degenerate_ground_truth_frames_are_skipped() {
        let text = "11,11,20,20\n0,0,0,0\nNaN,NaN,NaN,NaN\n";
        let gt = load_ground_truth(text.as_bytes()).unwrap();
        assert_eq!(gt, vec![Some(bx(10.0, 10.0, 20.0, 20.0)), None, None]);
        let res = vec![bx(10.0, 10.0, 20.0, 20.0), bx(500.0, 0.0, 1.0, 1.0), bx(500.0, 0.0, 1.0, 1.0)];
        let r = summarize(&res, &gt).unwrap();
        assert_eq!((r.frame_count, r.skipped_frames, r.auc), (1, 2, 1.0));
    }

    #[test]
    fn ground_truth_parsing() {
        let gt = load_ground_truth("11,11,20,20\n".as_bytes()).unwrap();
        assert_eq!(gt, vec![Some(bx(10.0, 10.0, 20.0, 20.0))]);
        let tabbed = load_ground_truth("11\t11\t20\t20\n3 4 5 6\n".as_bytes()).unwrap();
        assert_eq!(tabbed[1], Some(bx(2.0, 3.0, 5.0, 6.0)));
        assert!(matches!(load_ground_truth("".as_bytes()), Err(EvalError::GroundTruth { .. })));
        match load_ground_truth("1,1,2,2\n1,1,2\n".as_bytes()) {
            Err(EvalError::GroundTruth { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(write_ground_truth(&[bx(10.0, 10.0, 20.0, 20.0)]), "11,11,20,20\n");
    }

    #[test]
    fn report_text_keys() {
        let seq = [bx(0.0, 0.0, 10.0, 10.0)];
        let text = summarize(&seq, &some(&seq)).unwrap().to_text();
        assert_eq!(text, "frames=1\nskipped=0\nauc=1.0\ndpr=100.0\nosr=100.0\n");
    }
}
