//! Final box decision with adaptive IOU thresholds, and the per-sequence
//! tracking loop that feeds it.
//!
//! The best class-matching candidate (by IOU with the motion ROI) is accepted
//! when its IOU reaches `(1 - t_reduction) · t_iou`. Every rejection raises
//! `t_reduction` by 0.2, lowering the bar until a candidate gets through;
//! accepting a box re-arms `t_iou` from the accepted IOU.

use std::fmt::{self, Write as _};
use std::io::BufRead;

use thiserror::Error;

use crate::detect::{filter_by_class, infer_class_from, DetectError, Detection, DetectionSet, Detections};
use crate::geometry::{iou, PixelBox};
use crate::mvfield::{normalize, FrameField, MvDump, NormalizeOptions};
use crate::roi::create_roi;

pub const INITIAL_T_IOU: f64 = 0.7;
pub const INITIAL_T_REDUCTION: f64 = 0.5;
pub const REDUCTION_STEP: f64 = 0.2;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("motion dump has no record for frame {0}")]
    MissingFrame(u32),
    #[error("motion field of frame {frame} is {got:?}, expected {expected:?}")]
    FrameSize { frame: u32, got: (u32, u32), expected: (u32, u32) },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("results line {line}: {message}")]
    Results { line: usize, message: String },
    #[error("reading results: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionConfig {
    /// Return `t_reduction` to its initial value whenever a box is accepted.
    /// Disabling this gives the never-resetting variant.
    pub reset_reduction_on_accept: bool,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self { reset_reduction_on_accept: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Detected,
    CarriedOver,
}

impl Origin {
    pub fn name(&self) -> &'static str {
        match self {
            Origin::Detected => "DETECTED",
            Origin::CarriedOver => "CARRIED_OVER",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Chosen target box of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDecision {
    bbox: PixelBox,
    origin: Origin,
    matched_iou: Option<f64>,
}

impl FrameDecision {
    pub fn detected(bbox: PixelBox, matched_iou: f64) -> Self {
        Self { bbox, origin: Origin::Detected, matched_iou: Some(matched_iou) }
    }

    pub fn carried_over(bbox: PixelBox) -> Self {
        Self { bbox, origin: Origin::CarriedOver, matched_iou: None }
    }

    pub fn bbox(&self) -> &PixelBox {
        &self.bbox
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    /// IOU between the ROI and the accepted candidate; `None` when carried over.
    pub fn matched_iou(&self) -> Option<f64> {
        self.matched_iou
    }
}

/// Tracker memory between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionState {
    pub t_iou: f64,
    pub t_reduction: f64,
    pub prev_box: PixelBox,
    pub inferred_class: String,
    pub config: DecisionConfig,
}

impl DecisionState {
    pub fn new(init_box: PixelBox, class: impl Into<String>, config: DecisionConfig) -> Self {
        Self {
            t_iou: INITIAL_T_IOU,
            t_reduction: INITIAL_T_REDUCTION,
            prev_box: init_box,
            inferred_class: class.into(),
            config,
        }
    }

    /// Current acceptance bar `(1 - t_reduction) · t_iou`.
    pub fn acceptance_threshold(&self) -> f64 {
        (1.0 - self.t_reduction) * self.t_iou
    }

    /// One decision step against class-filtered candidates.
    pub fn decide(&self, roi: &PixelBox, candidates: &[Detection]) -> (FrameDecision, DecisionState) {
        let scored: Vec<(PixelBox, f64)> = candidates.iter().map(|d| (d.bbox, iou(roi, &d.bbox))).collect();
        self.decide_scored(&scored)
    }

    /// Decision step on candidates paired with their IOU against the ROI.
    ///
    /// Zero-IOU candidates never win; a frame where every candidate has zero
    /// IOU is handled like a frame without candidates.
    pub fn decide_scored(&self, scored: &[(PixelBox, f64)]) -> (FrameDecision, DecisionState) {
        let mut best: Option<(PixelBox, f64)> = None;
        for &(b, v) in scored {
            if v > 0.0 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((b, v));
            }
        }
        let mut next = self.clone();
        let Some((bbox, best_iou)) = best else {
            return (FrameDecision::carried_over(self.prev_box), next);
        };
        if best_iou >= self.acceptance_threshold() {
            next.prev_box = bbox;
            next.t_iou = if best_iou > INITIAL_T_IOU { INITIAL_T_IOU } else { best_iou };
            if self.config.reset_reduction_on_accept {
                next.t_reduction = INITIAL_T_REDUCTION;
            }
            (FrameDecision::detected(bbox, best_iou), next)
        } else {
            next.t_reduction += REDUCTION_STEP;
            (FrameDecision::carried_over(self.prev_box), next)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrackOptions {
    pub decision: DecisionConfig,
    pub normalize: NormalizeOptions,
}

/// Everything produced for one frame of a tracked sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackStep {
    pub frame_index: u32,
    pub decision: FrameDecision,
    /// Motion ROI; absent for frame 1.
    pub roi: Option<PixelBox>,
    /// Candidates left after class filtering.
    pub candidates: usize,
    pub state: DecisionState,
}

/// Streaming single-target tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    state: DecisionState,
    options: TrackOptions,
}

impl Tracker {
    pub fn new(init_box: PixelBox, class: impl Into<String>, options: TrackOptions) -> Self {
        Self { state: DecisionState::new(init_box, class, options.decision), options }
    }

    pub fn state(&self) -> &DecisionState {
        &self.state
    }

    /// Processes one inter frame with its unfiltered detections.
    pub fn step(&mut self, field: &FrameField, detections: &DetectionSet) -> TrackStep {
        let nf = normalize(field, self.options.normalize);
        let roi = create_roi(&nf, &self.state.prev_box);
        let candidates = filter_by_class(detections, &self.state.inferred_class).detections;
        let (decision, next) = self.state.decide(&roi, &candidates);
        self.state = next;
        TrackStep {
            frame_index: field.frame_index(),
            decision,
            roi: Some(roi),
            candidates: candidates.len(),
            state: self.state.clone(),
        }
    }
}

/// Result of [`track_sequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutcome {
    pub class: String,
    pub steps: Vec<TrackStep>,
}

impl TrackOutcome {
    pub fn decisions(&self) -> Vec<FrameDecision> {
        self.steps.iter().map(|s| s.decision).collect()
    }
}

/// Tracks the target through every frame of `mv`.
///
/// Frame 1 is the supplied `init_box`. Frames `2..=T`, where `T` is the last
/// frame of the dump, must all have motion records. When `class` is `None`
/// it is inferred from the first five frames of detections.
pub fn track_sequence(
    mv: &MvDump,
    dets: &Detections,
    init_box: PixelBox,
    class: Option<&str>,
    options: TrackOptions,
) -> Result<TrackOutcome, TrackError> {
    let class = match class {
        Some(c) => c.to_string(),
        None => infer_class_from(dets, &init_box)?,
    };
    let mut tracker = Tracker::new(init_box, class.clone(), options);
    let mut steps = vec![TrackStep {
        frame_index: 1,
        decision: FrameDecision::detected(init_box, 1.0),
        roi: None,
        candidates: 0,
        state: tracker.state().clone(),
    }];
    let expected = (mv.header.width, mv.header.height);
    for t in 2..=mv.sequence_length() {
        let field = mv.frame(t).ok_or(TrackError::MissingFrame(t))?;
        let got = (field.width(), field.height());
        if got != expected {
            return Err(TrackError::FrameSize { frame: t, got, expected });
        }
        steps.push(tracker.step(field, &dets.set(t)));
    }
    Ok(TrackOutcome { class, steps })
}

/// Results file body, one `res` line per frame.
pub fn write_results(steps: &[TrackStep]) -> String {
    let mut out = String::new();
    for s in steps {
        let b = s.decision.bbox();
        let _ = writeln!(
            out,
            "res t={} x={} y={} w={} h={} origin={}",
            s.frame_index,
            b.x(),
            b.y(),
            b.w(),
            b.h(),
            s.decision.origin()
        );
    }
    out
}

/// One parsed results record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRecord {
    pub frame_index: u32,
    pub bbox: PixelBox,
    pub origin: Origin,
}

/// Parses a results file; frames must be listed as `1, 2, ..., T`.
pub fn parse_results(reader: impl BufRead) -> Result<Vec<ResultRecord>, TrackError> {
    let mut out: Vec<ResultRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |message: String| TrackError::Results { line: line_no, message };
        let mut tokens = text.split_whitespace();
        if tokens.next() != Some("res") {
            return Err(err("expected `res` record".into()));
        }
        let mut fields = std::collections::BTreeMap::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| err(format!("expected key=value, found `{tok}`")))?;
            if fields.insert(k, v).is_some() {
                return Err(err(format!("duplicate field `{k}`")));
            }
        }
        let mut take = |k: &str| fields.remove(k).ok_or_else(|| err(format!("missing field `{k}`")));
        let t: u32 = take("t")?.parse().map_err(|_| err("invalid frame index".into()))?;
        let mut real = |k: &str| -> Result<f64, TrackError> {
            take(k)?.parse().map_err(|_| err(format!("`{k}` is not a number")))
        };
        let (x, y, w, h) = (real("x")?, real("y")?, real("w")?, real("h")?);
        let origin = match take("origin")? {
            "DETECTED" => Origin::Detected,
            "CARRIED_OVER" => Origin::CarriedOver,
            other => return Err(err(format!("unknown origin `{other}`"))),
        };
        if let Some(k) = fields.keys().next() {
            return Err(err(format!("unexpected field `{k}`")));
        }
        if t as usize != out.len() + 1 {
            return Err(err(format!("frame {t} out of sequence (expected {})", out.len() + 1)));
        }
        let bbox = PixelBox::new(x, y, w, h).map_err(|e| err(e.to_string()))?;
        out.push(ResultRecord { frame_index: t, bbox, origin });
    }
    Ok(out)
}
