//! Synthetic fixtures: motion dumps, detection files and ground truth that
//! are consistent with one another by construction.
//!
//! The frame is tiled into square PUs. A PU touching the object in frame `t`
//! is INTER with the vector that maps its center back onto the object's pose
//! in frame `t - 1`; every other PU is SKIP. Detections reproduce the ground
//! truth (clipped to the frame) plus seeded off-class decoys.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::detect::{parse_detections_str, Detection, Detections, IngestOptions};
use crate::eval::{load_ground_truth, write_ground_truth};
use crate::geometry::{iou, PixelBox};
use crate::mvfield::{parse_mv_dump_str, write_mv_dump, FrameField, MotionVector, MvDump, PredictionUnit, PuMode, SequenceHeader};

pub const TARGET_SCORE: f64 = 0.9;
/// Upper bound on the IOU between a decoy and the target box.
pub const DECOY_MAX_IOU: f64 = 0.2;
/// Side of the square by which a bystander overlaps the hidden target.
pub const BYSTANDER_OVERLAP_PX: f64 = 3.0;
const DECOY_ATTEMPTS: usize = 64;
const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("fixture check failed at {location}: {message}")]
    Verify { location: String, message: String },
    #[error("fixture file {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn invalid(message: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(message.into())
}

fn breach(location: impl Into<String>, message: impl Into<String>) -> SynthError {
    SynthError::Verify { location: location.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Translate,
    ScaleChange,
    Occlusion,
    IntraNoise,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Translate => "translate",
            ScenarioKind::ScaleChange => "scale_change",
            ScenarioKind::Occlusion => "occlusion",
            ScenarioKind::IntraNoise => "intra_noise",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "translate" => Ok(ScenarioKind::Translate),
            "scale_change" | "scale-change" => Ok(ScenarioKind::ScaleChange),
            "occlusion" => Ok(ScenarioKind::Occlusion),
            "intra_noise" | "intra-noise" => Ok(ScenarioKind::IntraNoise),
            other => Err(invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Frames `start..=end` in which the target is hidden behind a static
/// occluder: no target detection, and the object's PUs are coded as SKIP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionWindow {
    pub start: u32,
    pub end: u32,
    /// Emit a same-class detection that grazes the corner of the last
    /// visible target box in each hidden frame.
    pub bystander: bool,
}

impl OcclusionWindow {
    pub fn contains(&self, t: u32) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub frames: u32,
    pub width: u32,
    pub height: u32,
    pub init_box: PixelBox,
    /// Per-frame displacement of the box center, in pels.
    pub velocity: (f64, f64),
    /// Per-frame growth factor of width and height.
    pub scale_per_frame: f64,
    pub occlusion: Option<OcclusionWindow>,
    pub target_class: String,
    pub decoy_classes: Vec<String>,
    pub decoys_per_frame: usize,
    /// Fraction of object PUs coded INTRA.
    pub intra_fraction: f64,
    pub pu_size: u32,
    pub ctu_size: u32,
    pub subpel: u32,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Constant-velocity scenario with default coding parameters.
    pub fn translate(frames: u32, size: (u32, u32), init_box: PixelBox, velocity: (f64, f64)) -> Self {
        Self {
            kind: ScenarioKind::Translate,
            frames,
            width: size.0,
            height: size.1,
            init_box,
            velocity,
            scale_per_frame: 1.0,
            occlusion: None,
            target_class: "person".into(),
            decoy_classes: Vec::new(),
            decoys_per_frame: 0,
            intra_fraction: 0.0,
            pu_size: 8,
            ctu_size: 64,
            subpel: 4,
            seed: 0,
        }
    }

    pub fn scale_change(frames: u32, size: (u32, u32), init_box: PixelBox, scale_per_frame: f64) -> Self {
        Self { kind: ScenarioKind::ScaleChange, scale_per_frame, ..Self::translate(frames, size, init_box, (0.0, 0.0)) }
    }

    pub fn occlusion(frames: u32, size: (u32, u32), init_box: PixelBox, velocity: (f64, f64), window: OcclusionWindow) -> Self {
        Self { kind: ScenarioKind::Occlusion, occlusion: Some(window), ..Self::translate(frames, size, init_box, velocity) }
    }

    pub fn intra_noise(frames: u32, size: (u32, u32), init_box: PixelBox, velocity: (f64, f64), fraction: f64) -> Self {
        Self { kind: ScenarioKind::IntraNoise, intra_fraction: fraction, ..Self::translate(frames, size, init_box, velocity) }
    }

    pub fn with_decoys(mut self, classes: &[&str], per_frame: usize) -> Self {
        self.decoy_classes = classes.iter().map(|c| c.to_string()).collect();
        self.decoys_per_frame = per_frame;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Target box of frame `t` (1-based), unclipped.
    pub fn box_at(&self, t: u32) -> Result<PixelBox, SynthError> {
        let k = (t - 1) as f64;
        let (cx, cy) = self.init_box.center();
        let growth = self.scale_per_frame.powf(k);
        let (w, h) = (self.init_box.w() * growth, self.init_box.h() * growth);
        let (cx, cy) = (cx + k * self.velocity.0, cy + k * self.velocity.1);
        PixelBox::new(cx - w / 2.0, cy - h / 2.0, w, h).map_err(|e| invalid(format!("frame {t}: {e}")))
    }

    pub fn trajectory(&self) -> Result<Vec<PixelBox>, SynthError> {
        (1..=self.frames).map(|t| self.box_at(t)).collect()
    }

    pub fn is_occluded(&self, t: u32) -> bool {
        self.occlusion.is_some_and(|o| o.contains(t))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frames == 0 {
            return Err(invalid("at least one frame is required"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("frame size must be positive"));
        }
        if !self.ctu_size.is_power_of_two() || !self.pu_size.is_power_of_two() || self.pu_size > self.ctu_size {
            return Err(invalid("pu and ctu sizes must be powers of two with pu ≤ ctu"));
        }
        if self.subpel == 0 {
            return Err(invalid("subpel must be positive"));
        }
        if !(self.scale_per_frame.is_finite() && self.scale_per_frame > 0.0) {
            return Err(invalid("scale factor must be positive"));
        }
        if !(self.velocity.0.is_finite() && self.velocity.1.is_finite()) {
            return Err(invalid("velocity must be finite"));
        }
        if !(0.0..=1.0).contains(&self.intra_fraction) {
            return Err(invalid("intra fraction must lie in [0, 1]"));
        }
        for label in std::iter::once(&self.target_class).chain(&self.decoy_classes) {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(invalid(format!("label `{label}` must be a non-empty token")));
            }
        }
        if self.decoy_classes.contains(&self.target_class) {
            return Err(invalid("decoy classes must differ from the target class"));
        }
        if self.decoys_per_frame > 0 && self.decoy_classes.is_empty() {
            return Err(invalid("decoys requested without decoy classes"));
        }
        match (self.kind, self.occlusion) {
            (ScenarioKind::Occlusion, None) => return Err(invalid("occlusion scenario needs an occlusion window")),
            (_, Some(o)) if o.start < 2 || o.start > o.end || o.end > self.frames => {
                return Err(invalid(format!("occlusion window {}-{} must lie within 2..={}", o.start, o.end, self.frames)))
            }
            _ => {}
        }
        for t in 1..=self.frames {
            let b = self.box_at(t)?;
            let visible = b.clip_to_frame(self.width, self.height);
            if !visible.is_some_and(|v| v.w() >= 1.0 && v.h() >= 1.0) {
                return Err(invalid(format!("frame {t}: target box {b} leaves the frame")));
            }
        }
        Ok(())
    }
}

/// Generated fixture contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureFiles {
    pub mv_dump: String,
    pub detections: String,
    pub ground_truth: String,
    pub manifest: String,
}

pub const FIXTURE_EXTENSIONS: [&str; 4] = ["mvd", "det", "gt", "manifest"];

impl FixtureFiles {
    /// Writes `<stem>.mvd`, `<stem>.det`, `<stem>.gt` and `<stem>.manifest`.
    pub fn write_to(&self, dir: &Path, stem: &str) -> Result<(), SynthError> {
        for (ext, body) in FIXTURE_EXTENSIONS.iter().zip(self.bodies()) {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(|source| SynthError::Io { path: path.display().to_string(), source })?;
        }
        Ok(())
    }

    pub fn read_from(dir: &Path, stem: &str) -> Result<Self, SynthError> {
        let read = |ext: &str| {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::read_to_string(&path).map_err(|source| SynthError::Io { path: path.display().to_string(), source })
        };
        Ok(Self {
            mv_dump: read("mvd")?,
            detections: read("det")?,
            ground_truth: read("gt")?,
            manifest: read("manifest")?,
        })
    }

    fn bodies(&self) -> [&str; 4] {
        [&self.mv_dump, &self.detections, &self.ground_truth, &self.manifest]
    }
}

/// Displacement taking point `p` of `cur` to the matching point of `prev`.
fn back_displacement(prev: &PixelBox, cur: &PixelBox, p: (f64, f64)) -> (f64, f64) {
    let (pcx, pcy) = prev.center();
    let (ccx, ccy) = cur.center();
    let qx = pcx + (p.0 - ccx) * prev.w() / cur.w();
    let qy = pcy + (p.1 - ccy) * prev.h() / cur.h();
    (qx - p.0, qy - p.1)
}

fn expected_inter_mv(prev: &PixelBox, cur: &PixelBox, pu: &PredictionUnit, subpel: u32) -> MotionVector {
    let center = (pu.x as f64 + pu.w as f64 / 2.0, pu.y as f64 + pu.h as f64 / 2.0);
    let (dx, dy) = back_displacement(prev, cur, center);
    let s = subpel as f64;
    MotionVector::new((dx * s).round() as i32, (dy * s).round() as i32)
}

fn grid(width: u32, height: u32, pu: u32) -> Vec<(u32, u32, u32, u32)> {
    let mut out = Vec::new();
    for y in (0..height).step_by(pu as usize) {
        for x in (0..width).step_by(pu as usize) {
            out.push((x, y, pu.min(width - x), pu.min(height - y)));
        }
    }
    out
}

fn overlaps(rect: (u32, u32, u32, u32), b: &PixelBox) -> bool {
    PixelBox::from_ints(rect.0 as i64, rect.1 as i64, rect.2 as i64, rect.3 as i64).intersection_area(b) > 0.0
}

fn bystander_box(last_visible: &PixelBox) -> Result<PixelBox, SynthError> {
    PixelBox::new(
        last_visible.right() - BYSTANDER_OVERLAP_PX,
        last_visible.bottom() - BYSTANDER_OVERLAP_PX,
        last_visible.w(),
        last_visible.h(),
    )
    .map_err(|e| invalid(e.to_string()))
}

fn random_decoy(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, target: &PixelBox) -> Option<Detection> {
    let max_w = spec.width.clamp(1, 40);
    let max_h = spec.height.clamp(1, 40);
    for _ in 0..DECOY_ATTEMPTS {
        let w = rng.gen_range(max_w.min(8)..=max_w);
        let h = rng.gen_range(max_h.min(8)..=max_h);
        let x = rng.gen_range(0..=spec.width - w);
        let y = rng.gen_range(0..=spec.height - h);
        let b = PixelBox::from_ints(x as i64, y as i64, w as i64, h as i64);
        if iou(&b, target) <= DECOY_MAX_IOU {
            let label = spec.decoy_classes[rng.gen_range(0..spec.decoy_classes.len())].clone();
            let score = rng.gen_range(30..=95) as f64 / 100.0;
            return Some(Detection { bbox: b, label, score });
        }
    }
    None
}

fn manifest_text(spec: &ScenarioSpec, trajectory: &[PixelBox]) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "scenario={}", spec.kind);
    let _ = writeln!(m, "frames={}", spec.frames);
    let _ = writeln!(m, "width={}", spec.width);
    let _ = writeln!(m, "height={}", spec.height);
    let _ = writeln!(m, "seed={}", spec.seed);
    let _ = writeln!(m, "class={}", spec.target_class);
    let _ = writeln!(m, "decoys={}", spec.decoy_classes.join(","));
    let _ = writeln!(m, "decoys_per_frame={}", spec.decoys_per_frame);
    let _ = writeln!(m, "velocity={},{}", spec.velocity.0, spec.velocity.1);
    let _ = writeln!(m, "scale_per_frame={}", spec.scale_per_frame);
    let _ = writeln!(m, "intra_fraction={}", spec.intra_fraction);
    let _ = writeln!(m, "pu={}", spec.pu_size);
    let _ = writeln!(m, "ctu={}", spec.ctu_size);
    let _ = writeln!(m, "subpel={}", spec.subpel);
    match spec.occlusion {
        Some(o) => {
            let _ = writeln!(m, "occlusion={}-{}", o.start, o.end);
            let _ = writeln!(m, "bystander={}", o.bystander);
        }
        None => {
            let _ = writeln!(m, "occlusion=none");
            let _ = writeln!(m, "bystander=false");
        }
    }
    for (i, b) in trajectory.iter().enumerate() {
        let _ = writeln!(m, "box.{}={b}", i + 1);
    }
    m
}

/// Builds all fixture files for `spec`. Pure in `spec` (including its seed).
pub fn generate(spec: &ScenarioSpec) -> Result<FixtureFiles, SynthError> {
    spec.validate()?;
    let trajectory = spec.trajectory()?;
    let mut mode_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut decoy_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);

    let header = SequenceHeader {
        width: spec.width,
        height: spec.height,
        ctu_size: spec.ctu_size,
        subpel: spec.subpel,
        frames: spec.frames - 1,
    };
    let layout = grid(spec.width, spec.height, spec.pu_size);
    let mut frames = Vec::new();
    for t in 2..=spec.frames {
        let (prev, cur) = (&trajectory[t as usize - 2], &trajectory[t as usize - 1]);
        let occluded = spec.is_occluded(t);
        let pus = layout
            .iter()
            .map(|&r| {
                let mut pu = PredictionUnit { x: r.0, y: r.1, w: r.2, h: r.3, mode: PuMode::Skip };
                if !occluded && overlaps(r, cur) {
                    pu.mode = if spec.intra_fraction > 0.0 && mode_rng.gen_bool(spec.intra_fraction) {
                        PuMode::Intra
                    } else {
                        PuMode::Inter { mv: expected_inter_mv(prev, cur, &pu, spec.subpel), ref_offset: 1 }
                    };
                }
                pu
            })
            .collect();
        frames.push(FrameField::new(t, &header, pus).map_err(|e| invalid(e.to_string()))?);
    }
    let mv_dump = write_mv_dump(&MvDump { header, frames });

    let mut dets = Detections::new();
    let mut last_visible = trajectory[0];
    for t in 1..=spec.frames {
        let target = trajectory[t as usize - 1];
        if spec.is_occluded(t) {
            if spec.occlusion.is_some_and(|o| o.bystander) {
                let bbox = bystander_box(&last_visible)?;
                if let Some(bbox) = bbox.clip_to_frame(spec.width, spec.height) {
                    dets.push(t, Detection { bbox, label: spec.target_class.clone(), score: TARGET_SCORE });
                }
            }
        } else {
            last_visible = target;
            let bbox = target.clip_to_frame(spec.width, spec.height).expect("validated trajectory");
            dets.push(t, Detection { bbox, label: spec.target_class.clone(), score: TARGET_SCORE });
        }
        for _ in 0..spec.decoys_per_frame {
            if let Some(d) = random_decoy(&mut decoy_rng, spec, &target) {
                dets.push(t, d);
            }
        }
    }

    Ok(FixtureFiles {
        mv_dump,
        detections: crate::detect::write_detections(&dets),
        ground_truth: write_ground_truth(&trajectory),
        manifest: manifest_text(spec, &trajectory),
    })
}

/// Parsed manifest, enough to re-derive every expected fixture value.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
    pub trajectory: Vec<PixelBox>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut entries = BTreeMap::new();
        let mut boxes = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = format!("manifest line {}", i + 1);
            let (k, v) = line.split_once('=').ok_or_else(|| breach(&loc, "expected key=value"))?;
            if let Some(t) = k.strip_prefix("box.") {
                let t: u32 = t.parse().map_err(|_| breach(&loc, format!("bad frame index `{t}`")))?;
                let nums: Vec<f64> = v
                    .split(',')
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| breach(&loc, format!("bad box `{v}`")))?;
                if nums.len() != 4 {
                    return Err(breach(&loc, format!("bad box `{v}`")));
                }
                let b = PixelBox::new(nums[0], nums[1], nums[2], nums[3]).map_err(|e| breach(&loc, e.to_string()))?;
                boxes.insert(t, b);
            } else {
                entries.insert(k.to_string(), v.to_string());
            }
        }
        let trajectory: Vec<PixelBox> = boxes.values().copied().collect();
        if boxes.keys().copied().ne(1..=trajectory.len() as u32) {
            return Err(breach("manifest", "box entries must cover frames 1..=T"));
        }
        Ok(Self { entries, trajectory })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, SynthError> {
        let raw = self.entries.get(key).ok_or_else(|| breach("manifest", format!("missing `{key}`")))?;
        raw.parse().map_err(|_| breach("manifest", format!("`{key}` has invalid value `{raw}`")))
    }

    pub fn occlusion(&self) -> Result<Option<(u32, u32, bool)>, SynthError> {
        let raw: String = self.get("occlusion")?;
        if raw == "none" {
            return Ok(None);
        }
        let (a, b) = raw.split_once('-').ok_or_else(|| breach("manifest", format!("bad occlusion `{raw}`")))?;
        let parse = |s: &str| s.parse::<u32>().map_err(|_| breach("manifest", format!("bad occlusion `{raw}`")));
        Ok(Some((parse(a)?, parse(b)?, self.get("bystander")?)))
    }
}

/// Summary of a successful [`verify`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub frames: u32,
    pub pus_checked: usize,
    pub detections_checked: usize,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "status=pass")?;
        writeln!(f, "frames={}", self.frames)?;
        writeln!(f, "pus_checked={}", self.pus_checked)?;
        writeln!(f, "detections_checked={}", self.detections_checked)
    }
}

fn close(a: &PixelBox, b: &PixelBox) -> bool {
    [(a.x(), b.x()), (a.y(), b.y()), (a.w(), b.w()), (a.h(), b.h())]
        .iter()
        .all(|(p, q)| (p - q).abs() <= VERIFY_TOLERANCE)
}

/// Re-parses a fixture through the ingestion code and checks it against its
/// manifest.
pub fn verify(files: &FixtureFiles) -> Result<VerifyReport, SynthError> {
    let manifest = Manifest::parse(&files.manifest)?;
    let frames: u32 = manifest.get("frames")?;
    let width: u32 = manifest.get("width")?;
    let height: u32 = manifest.get("height")?;
    let class: String = manifest.get("class")?;
    let subpel: u32 = manifest.get("subpel")?;
    let intra_fraction: f64 = manifest.get("intra_fraction")?;
    let decoys: String = manifest.get("decoys")?;
    let decoys: Vec<&str> = decoys.split(',').filter(|s| !s.is_empty()).collect();
    let occlusion = manifest.occlusion()?;
    let traj = &manifest.trajectory;
    if traj.len() != frames as usize {
        return Err(breach("manifest", format!("{} boxes for {frames} frames", traj.len())));
    }
    let occluded = |t: u32| occlusion.is_some_and(|(a, b, _)| (a..=b).contains(&t));

    let dump = parse_mv_dump_str(&files.mv_dump).map_err(|e| breach("motion dump", e.to_string()))?;
    if (dump.header.width, dump.header.height, dump.header.subpel) != (width, height, subpel) {
        return Err(breach("motion dump header", "geometry differs from the manifest"));
    }
    let expected_frames: Vec<u32> = (2..=frames).collect();
    let got_frames: Vec<u32> = dump.frames.iter().map(|f| f.frame_index()).collect();
    if got_frames != expected_frames {
        return Err(breach("motion dump", format!("frame records {got_frames:?}, expected 2..={frames}")));
    }
    let mut pus_checked = 0;
    for field in &dump.frames {
        let t = field.frame_index();
        let (prev, cur) = (&traj[t as usize - 2], &traj[t as usize - 1]);
        for (i, pu) in field.pus().iter().enumerate() {
            let loc = || format!("frame {t}, pu #{i} ({}, {})", pu.x, pu.y);
            let on_object = !occluded(t) && overlaps((pu.x, pu.y, pu.w, pu.h), cur);
            match pu.mode {
                PuMode::Skip if !on_object => {}
                PuMode::Intra if on_object && intra_fraction > 0.0 => {}
                PuMode::Inter { mv, ref_offset: 1 } if on_object => {
                    let expected = expected_inter_mv(prev, cur, pu, subpel);
                    if mv != expected {
                        return Err(breach(loc(), format!("mv {mv:?} does not follow the trajectory (expected {expected:?})")));
                    }
                }
                mode => {
                    let role = if on_object { "object" } else { "background" };
                    return Err(breach(loc(), format!("{} PU labeled {}", role, mode.name())));
                }
            }
            pus_checked += 1;
        }
    }

    let gt = load_ground_truth(files.ground_truth.as_bytes()).map_err(|e| breach("ground truth", e.to_string()))?;
    if gt.len() != traj.len() {
        return Err(breach("ground truth", format!("{} lines for {frames} frames", gt.len())));
    }
    for (i, (g, b)) in gt.iter().zip(traj).enumerate() {
        if !g.is_some_and(|g| close(&g, b)) {
            return Err(breach(format!("ground truth line {}", i + 1), "box differs from the manifest"));
        }
    }

    let dets = parse_detections_str(&files.detections, IngestOptions::default()).map_err(|e| breach("detections", e.to_string()))?;
    if let Some(t) = dets.frame_indices().find(|&t| t == 0 || t > frames) {
        return Err(breach(format!("detections frame {t}"), "frame outside the sequence"));
    }
    let mut last_visible = traj[0];
    for t in 1..=frames {
        let target = traj[t as usize - 1];
        let loc = format!("detections frame {t}");
        let own: Vec<&Detection> = dets.frame(t).iter().filter(|d| d.label == class).collect();
        if occluded(t) {
            let bystander = occlusion.is_some_and(|o| o.2);
            match (bystander, own.as_slice()) {
                (false, []) => {}
                (true, [d]) if bystander_box(&last_visible)?.clip_to_frame(width, height).is_some_and(|b| close(&b, &d.bbox)) => {}
                _ => return Err(breach(loc, "unexpected target-class detections in an occluded frame")),
            }
        } else {
            last_visible = target;
            let visible = target.clip_to_frame(width, height).ok_or_else(|| breach(&loc, "target outside the frame"))?;
            match own.as_slice() {
                [d] if close(&d.bbox, &visible) => {}
                _ => return Err(breach(loc, "target detection missing or not matching ground truth")),
            }
        }
        for d in dets.frame(t).iter().filter(|d| d.label != class) {
            if !decoys.contains(&d.label.as_str()) {
                return Err(breach(&loc, format!("unknown label `{}`", d.label)));
            }
            if iou(&d.bbox, &target) > DECOY_MAX_IOU {
                return Err(breach(&loc, format!("decoy overlaps the target with IOU {}", iou(&d.bbox, &target))));
            }
        }
    }

    Ok(VerifyReport { frames, pus_checked, detections_checked: dets.total() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn init() -> PixelBox {
        PixelBox::from_ints(10, 10, 20, 20)
    }

    #[test]
    fn translate_trajectory_arithmetic() {
        let spec = ScenarioSpec::translate(10, (64, 64), init(), (4.0, 0.0));
        assert_eq!(spec.box_at(10).unwrap(), PixelBox::from_ints(46, 10, 20, 20));
        let spec = ScenarioSpec::translate(10, (64, 64), init(), (5.0, 0.0));
        assert_eq!(spec.box_at(10).unwrap(), PixelBox::from_ints(55, 10, 20, 20));
        // partly outside, still visible: detections are clipped
        let files = generate(&spec).unwrap();
        let dets = parse_detections_str(&files.detections, IngestOptions::default()).unwrap();
        assert_eq!(dets.frame(10)[0].bbox, PixelBox::from_ints(55, 10, 9, 20));
        assert!(verify(&files).is_ok());
    }

    #[test]
    fn leaving_the_frame_is_rejected() {
        let spec = ScenarioSpec::translate(20, (64, 64), init(), (5.0, 0.0));
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn spec_validation() {
        let base = ScenarioSpec::translate(10, (128, 128), init(), (1.0, 0.0));
        let bad = [
            ScenarioSpec { frames: 0, ..base.clone() },
            ScenarioSpec { pu_size: 12, ..base.clone() },
            ScenarioSpec { intra_fraction: 1.5, ..base.clone() },
            ScenarioSpec { kind: ScenarioKind::Occlusion, ..base.clone() },
            base.clone().with_decoys(&["person"], 1),
            base.clone().with_decoys(&[], 2),
            ScenarioSpec { occlusion: Some(OcclusionWindow { start: 1, end: 3, bystander: false }), ..base.clone() },
            ScenarioSpec { occlusion: Some(OcclusionWindow { start: 5, end: 11, bystander: false }), ..base.clone() },
        ];
        for spec in bad {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
        assert!(base.validate().is_ok());
    }

    #[test]
    fn occlusion_gap_has_no_target_detection() {
        let window = OcclusionWindow { start: 5, end: 7, bystander: false };
        let spec = ScenarioSpec::occlusion(10, (128, 128), init(), (2.0, 0.0), window).with_decoys(&["car"], 2);
        let files = generate(&spec).unwrap();
        let dets = parse_detections_str(&files.detections, IngestOptions::default()).unwrap();
        for t in 1..=10 {
            let n = dets.frame(t).iter().filter(|d| d.label == "person").count();
            assert_eq!(n, if (5..=7).contains(&t) { 0 } else { 1 }, "frame {t}");
        }
        verify(&files).unwrap();
    }

    #[test]
    fn bystander_grazes_last_visible_box() {
        let window = OcclusionWindow { start: 5, end: 7, bystander: true };
        let spec = ScenarioSpec::occlusion(10, (128, 128), init(), (2.0, 0.0), window);
        let files = generate(&spec).unwrap();
        let dets = parse_detections_str(&files.detections, IngestOptions::default()).unwrap();
        let last = spec.box_at(4).unwrap();
        for t in 5..=7 {
            let d = &dets.frame(t)[0];
            assert_eq!(d.label, "person");
            assert_eq!(d.bbox.intersection_area(&last), 9.0);
        }
        verify(&files).unwrap();
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let spec = ScenarioSpec::intra_noise(12, (160, 120), init(), (3.0, 1.0), 0.3).with_decoys(&["car", "dog"], 3);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = generate(&spec.clone().with_seed(99)).unwrap();
        assert_ne!(generate(&spec).unwrap().detections, other.detections);
    }

    #[test]
    fn decoys_respect_overlap_bound() {
        let spec = ScenarioSpec::translate(15, (96, 96), init(), (2.0, 2.0)).with_decoys(&["car", "bus"], 4).with_seed(3);
        let files = generate(&spec).unwrap();
        let dets = parse_detections_str(&files.detections, IngestOptions::default()).unwrap();
        for t in 1..=15 {
            let target = spec.box_at(t).unwrap();
            for d in dets.frame(t).iter().filter(|d| d.label != "person") {
                assert!(iou(&d.bbox, &target) <= DECOY_MAX_IOU);
            }
        }
        let report = verify(&files).unwrap();
        assert_eq!(report.frames, 15);
    }

    #[test]
    fn translate_mvs_are_negative_displacement() {
        let spec = ScenarioSpec::translate(3, (64, 64), init(), (4.0, -1.0));
        let dump = parse_mv_dump_str(&generate(&spec).unwrap().mv_dump).unwrap();
        assert_eq!(dump.header.frames, 2);
        for field in &dump.frames {
            for pu in field.pus() {
                if let PuMode::Inter { mv, ref_offset } = pu.mode {
                    assert_eq!((mv, ref_offset), (MotionVector::new(-16, 4), 1));
                }
            }
        }
    }

    #[test]
    fn verify_reports_tampering() {
        let spec = ScenarioSpec::translate(6, (64, 64), init(), (2.0, 0.0));
        let files = generate(&spec).unwrap();

        let mut lines: Vec<&str> = files.mv_dump.lines().collect();
        let idx = lines.iter().position(|l| l.starts_with("pu ")).unwrap();
        lines.remove(idx);
        let dropped = FixtureFiles { mv_dump: lines.join("\n"), ..files.clone() };
        let err = verify(&dropped).unwrap_err();
        assert!(err.to_string().contains("coverage gap"), "{err}");

        let moved = FixtureFiles { ground_truth: files.ground_truth.replacen("11,11", "12,11", 1), ..files.clone() };
        assert!(verify(&moved).unwrap_err().to_string().contains("ground truth line 1"));

        let wrong_mv = FixtureFiles { mv_dump: files.mv_dump.replacen("mv=-8,0", "mv=-7,0", 1), ..files.clone() };
        assert!(verify(&wrong_mv).unwrap_err().to_string().contains("does not follow"));
    }

    #[test]
    fn verify_accepts_shuffled_detections() {
        let spec = ScenarioSpec::translate(8, (96, 96), init(), (1.0, 1.0)).with_decoys(&["car"], 3).with_seed(11);
        let files = generate(&spec).unwrap();
        let mut lines: Vec<&str> = files.detections.lines().collect();
        lines.reverse();
        let mid = lines.len() / 2;
        lines.rotate_left(mid);
        let shuffled = FixtureFiles { detections: lines.join("\n"), ..files.clone() };
        assert_eq!(verify(&shuffled).unwrap(), verify(&files).unwrap());
    }
}
