//! Semantic detections: ingestion from files or a detection service, target
//! class inference and class filtering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, PixelBox};

/// Number of leading frames that vote on the target class.
pub const CLASS_VOTE_FRAMES: u32 = 5;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("no detection overlaps the initial box in the voting frames; pass the class explicitly")]
    NoVote,
    #[error("detection service does not know sequence `{0}`")]
    UnknownSequence(String),
    #[error("detection service error: {0}")]
    Service(String),
    #[error("reading detections: {0}")]
    Io(#[from] std::io::Error),
}

fn format_err(line: usize, message: impl Into<String>) -> DetectError {
    DetectError::Format { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: PixelBox,
    pub label: String,
    pub score: f64,
}

/// Detections of one frame, in detector order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub frame_index: u32,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Per-frame detections; frames without records are empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detections {
    frames: BTreeMap<u32, Vec<Detection>>,
}

impl Detections {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame_index: u32, det: Detection) {
        self.frames.entry(frame_index).or_default().push(det);
    }

    pub fn frame(&self, frame_index: u32) -> &[Detection] {
        self.frames.get(&frame_index).map_or(&[], Vec::as_slice)
    }

    pub fn set(&self, frame_index: u32) -> DetectionSet {
        DetectionSet { frame_index, detections: self.frame(frame_index).to_vec() }
    }

    /// Frames that carry at least one detection.
    pub fn frame_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.frames.keys().copied()
    }

    pub fn total(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IngestOptions {
    /// Drop detections scoring below this value.
    pub min_score: Option<f64>,
    /// Clip boxes to `[0, w) × [0, h)`, dropping boxes left empty.
    pub frame_size: Option<(u32, u32)>,
}

impl IngestOptions {
    fn admit(&self, mut det: Detection) -> Option<Detection> {
        if self.min_score.is_some_and(|s| det.score < s) {
            return None;
        }
        if let Some((w, h)) = self.frame_size {
            det.bbox = det.bbox.clip_to_frame(w, h)?;
        }
        Some(det)
    }
}

fn check_label(label: &str) -> Result<(), String> {
    if label.is_empty() {
        Err("empty label".into())
    } else if label.chars().any(char::is_whitespace) {
        Err(format!("label `{label}` contains whitespace"))
    } else {
        Ok(())
    }
}

fn check_score(score: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(format!("score {score} outside [0, 1]"))
    }
}

fn parse_record(line: usize, rest: &str) -> Result<(u32, Detection), DetectError> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| format_err(line, format!("expected key=value, found `{tok}`")))?;
        if fields.insert(k, v).is_some() {
            return Err(format_err(line, format!("duplicate field `{k}`")));
        }
    }
    let mut take = |k: &str| fields.remove(k).ok_or_else(|| format_err(line, format!("missing field `{k}`")));
    let t = take("t")?;
    let t: u32 = t.parse().map_err(|_| format_err(line, format!("invalid frame index `{t}`")))?;
    let mut real = |k: &str| -> Result<f64, DetectError> {
        let v = take(k)?;
        v.parse::<f64>().map_err(|_| format_err(line, format!("`{k}` has invalid value `{v}`")))
    };
    let (x, y, w, h) = (real("x")?, real("y")?, real("w")?, real("h")?);
    let score = real("score")?;
    let label = take("label")?.to_string();
    if let Some(k) = fields.keys().next() {
        return Err(format_err(line, format!("unexpected field `{k}`")));
    }
    check_label(&label).map_err(|m| format_err(line, m))?;
    check_score(score).map_err(|m| format_err(line, m))?;
    let bbox = PixelBox::new(x, y, w, h).map_err(|e| format_err(line, e.to_string()))?;
    Ok((t, Detection { bbox, label, score }))
}

/// Parses a detection file (`det t=.. x=.. y=.. w=.. h=.. label=.. score=..`).
///
/// Records may appear in any frame order; within a frame the file order is
/// kept. An exact repeat of a record is rejected.
pub fn parse_detections(reader: impl BufRead, opts: IngestOptions) -> Result<Detections, DetectError> {
    let mut out = Detections::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let (kind, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        if kind != "det" {
            return Err(format_err(line_no, format!("unknown record `{kind}`")));
        }
        let (t, det) = parse_record(line_no, rest)?;
        if out.frame(t).contains(&det) {
            return Err(format_err(line_no, format!("duplicate detection record for frame {t}")));
        }
        if let Some(det) = opts.admit(det) {
            out.push(t, det);
        }
    }
    Ok(out)
}

pub fn parse_detections_str(text: &str, opts: IngestOptions) -> Result<Detections, DetectError> {
    parse_detections(text.as_bytes(), opts)
}

/// Serializes detections frame by frame. Panics on labels that cannot be
/// represented in the line format.
pub fn write_detections(dets: &Detections) -> String {
    let mut out = String::new();
    for (t, list) in &dets.frames {
        for d in list {
            check_label(&d.label).expect("label must be a non-empty token");
            let b = &d.bbox;
            let _ = writeln!(
                out,
                "det t={t} x={} y={} w={} h={} label={} score={}",
                b.x(),
                b.y(),
                b.w(),
                b.h(),
                d.label,
                d.score
            );
        }
    }
    out
}

/// Connection settings for a remote detection service.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub url: String,
    pub sequence: String,
    pub timeout: Duration,
    /// Extra attempts after a transport failure or 5xx response.
    pub retries: u32,
}

/// Status codes of the detection service.
pub mod status {
    pub const OK: u16 = 200;
    pub const UNKNOWN_SEQUENCE: u16 = 404;
    pub const FRAME_UNAVAILABLE: u16 = 422;
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub sequence: String,
    pub frame: u32,
}

/// One detection as carried on the wire; mirrors the file fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireDetection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub label: String,
    pub score: f64,
}

impl WireDetection {
    pub fn from_detection(d: &Detection) -> Self {
        Self { x: d.bbox.x(), y: d.bbox.y(), w: d.bbox.w(), h: d.bbox.h(), label: d.label.clone(), score: d.score }
    }

    fn into_detection(self) -> Result<Detection, String> {
        check_label(&self.label)?;
        check_score(self.score)?;
        let bbox = PixelBox::new(self.x, self.y, self.w, self.h).map_err(|e| e.to_string())?;
        Ok(Detection { bbox, label: self.label, score: self.score })
    }
}

/// Blocking client for the detection service. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct ServiceClient {
    agent: ureq::Agent,
    config: ServiceConfig,
}

impl ServiceClient {
    pub fn new(config: ServiceConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, config }
    }

    /// Detections of one frame; `None` when the service has no data for it.
    pub fn fetch(&self, frame: u32) -> Result<Option<Vec<Detection>>, DetectError> {
        let request = ServiceRequest { sequence: self.config.sequence.clone(), frame };
        let mut last_error = String::new();
        for _ in 0..=self.config.retries {
            let mut response = match self.agent.post(&self.config.url).send_json(&request) {
                Ok(r) => r,
                Err(e) => {
                    last_error = format!("{}: {e}", self.config.url);
                    continue;
                }
            };
            match response.status().as_u16() {
                status::OK => {
                    let wire: Vec<WireDetection> = response
                        .body_mut()
                        .read_json()
                        .map_err(|e| DetectError::Service(format!("frame {frame}: malformed response: {e}")))?;
                    let dets = wire
                        .into_iter()
                        .map(WireDetection::into_detection)
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|m| DetectError::Service(format!("frame {frame}: {m}")))?;
                    return Ok(Some(dets));
                }
                status::UNKNOWN_SEQUENCE => return Err(DetectError::UnknownSequence(self.config.sequence.clone())),
                status::FRAME_UNAVAILABLE => return Ok(None),
                code if code >= 500 => last_error = format!("frame {frame}: status {code}"),
                code => return Err(DetectError::Service(format!("frame {frame}: unexpected status {code}"))),
            }
        }
        Err(DetectError::Service(last_error))
    }
}

#[derive(Debug, Clone)]
pub enum DetectionSource {
    File(PathBuf),
    Service(ServiceConfig),
}

/// Loads detections for frames `1..=frames` from a file or the service.
pub fn load_detections(source: &DetectionSource, frames: u32, opts: IngestOptions) -> Result<Detections, DetectError> {
    match source {
        DetectionSource::File(path) => {
            let file = std::fs::File::open(path)?;
            parse_detections(std::io::BufReader::new(file), opts)
        }
        DetectionSource::Service(cfg) => {
            let client = ServiceClient::new(cfg.clone());
            let mut out = Detections::new();
            for t in 1..=frames {
                for det in client.fetch(t)?.unwrap_or_default() {
                    if let Some(det) = opts.admit(det) {
                        out.push(t, det);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Infers the target class from the leading frames.
///
/// In each frame the detection overlapping `init_box` the most (IOU > 0)
/// votes for its label. The most voted label wins; ties go to the larger
/// summed IOU, then to the lexicographically smallest label.
pub fn infer_class<'a>(frames: impl IntoIterator<Item = &'a [Detection]>, init_box: &PixelBox) -> Result<String, DetectError> {
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for dets in frames {
        let best = dets
            .iter()
            .map(|d| (iou(init_box, &d.bbox), d.label.as_str()))
            .filter(|(v, _)| *v > 0.0)
            .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)));
        if let Some((v, label)) = best {
            let entry = tally.entry(label).or_default();
            entry.0 += 1;
            entry.1 += v;
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| {
            (a.1 .0.cmp(&b.1 .0))
                .then(a.1 .1.total_cmp(&b.1 .1))
                .then_with(|| b.0.cmp(a.0))
        })
        .map(|(label, _)| label.to_string())
        .ok_or(DetectError::NoVote)
}

/// [`infer_class`] over frames `1..=CLASS_VOTE_FRAMES` of a detection map.
pub fn infer_class_from(dets: &Detections, init_box: &PixelBox) -> Result<String, DetectError> {
    infer_class((1..=CLASS_VOTE_FRAMES).map(|t| dets.frame(t)), init_box)
}

/// Keeps only detections whose label equals `label` (case-sensitive).
pub fn filter_by_class(set: &DetectionSet, label: &str) -> DetectionSet {
    DetectionSet {
        frame_index: set.frame_index,
        detections: set.detections.iter().filter(|d| d.label == label).cloned().collect(),
    }
}
