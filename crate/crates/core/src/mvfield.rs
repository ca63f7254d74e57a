//! Motion-vector sidecar format and per-frame MV normalization.
//!
//! A dump describes each inter-coded frame as a tiling of prediction units
//! (PUs). [`normalize`] turns every PU into a single integer-pel vector that
//! references the immediately preceding frame:
//!
//! * SKIP PUs get zero motion.
//! * INTER PUs referencing frame `t - k` are scaled by `1/k`, converted from
//!   sub-pel to pel units and floored per component.
//! * INTRA PUs get the polar vector median of the normalized INTER/SKIP
//!   vectors in their CTU, or zero motion when the CTU has none.
//!
//! Vectors point from a pixel of the current frame to the referenced
//! location, i.e. the referenced position of `p` is `p + v`.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::io::BufRead;

use thiserror::Error;

use crate::geometry::PixelBox;

/// Snap distance used before flooring trig-derived components, so that
/// e.g. `4·cos(3π/2)` floors to 0 rather than -1.
const FLOOR_SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MvError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("frame {frame}, pu #{pu}: {message}")]
    Validation { frame: u32, pu: usize, message: String },
    #[error("polar vector median of an empty vector list")]
    EmptyPvm,
    #[error("reading motion dump: {0}")]
    Io(#[from] std::io::Error),
}

fn format_err(line: usize, message: impl Into<String>) -> MvError {
    MvError::Format { line, message: message.into() }
}

/// Integer displacement. Units depend on context: sub-pel in a raw
/// [`PredictionUnit`], whole pels in a [`NormalizedField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MotionVector {
    pub dx: i32,
    pub dy: i32,
}

impl MotionVector {
    pub const ZERO: MotionVector = MotionVector { dx: 0, dy: 0 };

    pub fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }

    /// Angle to the horizontal axis in `[0, 2π)`; the zero vector has angle 0.
    pub fn angle(&self) -> f64 {
        if self.dx == 0 && self.dy == 0 {
            return 0.0;
        }
        let a = (self.dy as f64).atan2(self.dx as f64);
        if a < 0.0 {
            let wrapped = a + TAU;
            // a tiny negative angle can round up to exactly 2π
            if wrapped >= TAU {
                0.0
            } else {
                wrapped
            }
        } else {
            a
        }
    }

    pub fn magnitude(&self) -> f64 {
        (self.dx as f64).hypot(self.dy as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuMode {
    /// Motion-compensated from frame `t - ref_offset`; `mv` in sub-pel units.
    Inter { mv: MotionVector, ref_offset: u32 },
    Skip,
    Intra,
}

impl PuMode {
    pub fn name(&self) -> &'static str {
        match self {
            PuMode::Inter { .. } => "INTER",
            PuMode::Skip => "SKIP",
            PuMode::Intra => "INTRA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionUnit {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub mode: PuMode,
}

impl PredictionUnit {
    pub fn rect(&self) -> PixelBox {
        PixelBox::from_ints(self.x as i64, self.y as i64, self.w as i64, self.h as i64)
    }
}

/// Sequence-level parameters from the dump header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceHeader {
    pub width: u32,
    pub height: u32,
    pub ctu_size: u32,
    /// Sub-pel units per pel (4 = quarter-pel).
    pub subpel: u32,
    /// Number of frame records in the dump.
    pub frames: u32,
}

impl SequenceHeader {
    fn validate(&self, line: usize) -> Result<(), MvError> {
        if self.width == 0 || self.height == 0 {
            return Err(format_err(line, "frame dimensions must be positive"));
        }
        if self.ctu_size == 0 || !self.ctu_size.is_power_of_two() {
            return Err(format_err(line, format!("ctu size {} is not a power of two", self.ctu_size)));
        }
        if self.subpel == 0 {
            return Err(format_err(line, "subpel must be positive"));
        }
        Ok(())
    }
}

/// Validated PU tiling of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameField {
    frame_index: u32,
    width: u32,
    height: u32,
    ctu_size: u32,
    subpel: u32,
    pus: Vec<PredictionUnit>,
}

impl FrameField {
    /// Builds a field, checking that the PUs tile the frame exactly, that no
    /// PU crosses a CTU boundary, and that reference offsets stay inside the
    /// sequence.
    pub fn new(frame_index: u32, header: &SequenceHeader, pus: Vec<PredictionUnit>) -> Result<Self, MvError> {
        let field = Self {
            frame_index,
            width: header.width,
            height: header.height,
            ctu_size: header.ctu_size,
            subpel: header.subpel,
            pus,
        };
        field.validate()?;
        Ok(field)
    }

    fn validate(&self) -> Result<(), MvError> {
        let frame = self.frame_index;
        let invalid = |pu: usize, message: String| MvError::Validation { frame, pu, message };
        if frame == 0 {
            return Err(invalid(0, "frame index must be at least 1".into()));
        }
        let (w, h) = (self.width as usize, self.height as usize);
        let mut owner = vec![u32::MAX; w * h];
        for (i, pu) in self.pus.iter().enumerate() {
            if pu.w == 0 || pu.h == 0 {
                return Err(invalid(i, format!("empty PU {}x{} at ({}, {})", pu.w, pu.h, pu.x, pu.y)));
            }
            let (x1, y1) = (pu.x as u64 + pu.w as u64, pu.y as u64 + pu.h as u64);
            if x1 > self.width as u64 || y1 > self.height as u64 {
                return Err(invalid(i, format!("PU ({}, {}, {}, {}) exceeds the frame", pu.x, pu.y, pu.w, pu.h)));
            }
            let c = self.ctu_size;
            if pu.x / c != (x1 as u32 - 1) / c || pu.y / c != (y1 as u32 - 1) / c {
                return Err(invalid(i, format!("PU ({}, {}, {}, {}) crosses a CTU boundary", pu.x, pu.y, pu.w, pu.h)));
            }
            if let PuMode::Inter { ref_offset, .. } = pu.mode {
                if ref_offset == 0 || ref_offset >= frame {
                    return Err(invalid(i, format!("reference offset {ref_offset} invalid in frame {frame}")));
                }
            }
            for row in pu.y as usize..y1 as usize {
                for cell in &mut owner[row * w + pu.x as usize..row * w + x1 as usize] {
                    if *cell != u32::MAX {
                        return Err(invalid(i, format!("PU overlaps PU #{}", *cell)));
                    }
                    *cell = i as u32;
                }
            }
        }
        if let Some(pos) = owner.iter().position(|&o| o == u32::MAX) {
            return Err(invalid(
                self.pus.len(),
                format!("coverage gap at pixel ({}, {})", pos % w, pos / w),
            ));
        }
        Ok(())
    }

    pub fn frame_index(&self) -> u32 {
        self.frame_index
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn ctu_size(&self) -> u32 {
        self.ctu_size
    }

    pub fn subpel(&self) -> u32 {
        self.subpel
    }

    pub fn pus(&self) -> &[PredictionUnit] {
        &self.pus
    }

    fn ctu_columns(&self) -> u32 {
        self.width.div_ceil(self.ctu_size)
    }

    fn ctu_of(&self, pu: &PredictionUnit) -> usize {
        ((pu.y / self.ctu_size) * self.ctu_columns() + pu.x / self.ctu_size) as usize
    }
}

/// A parsed motion dump.
#[derive(Debug, Clone, PartialEq)]
pub struct MvDump {
    pub header: SequenceHeader,
    pub frames: Vec<FrameField>,
}

impl MvDump {
    /// Sequence length implied by the dump: the last frame index, or 1 for a
    /// dump without frame records.
    pub fn sequence_length(&self) -> u32 {
        self.frames.last().map_or(1, |f| f.frame_index())
    }

    pub fn frame(&self, t: u32) -> Option<&FrameField> {
        self.frames
            .binary_search_by_key(&t, |f| f.frame_index())
            .ok()
            .map(|i| &self.frames[i])
    }
}

fn parse_fields<'a>(line: usize, tokens: impl Iterator<Item = &'a str>) -> Result<Vec<(&'a str, &'a str)>, MvError> {
    tokens
        .map(|tok| {
            tok.split_once('=')
                .ok_or_else(|| format_err(line, format!("expected key=value, found `{tok}`")))
        })
        .collect()
}

fn int_field<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, MvError> {
    value
        .parse()
        .map_err(|_| format_err(line, format!("`{key}` has invalid integer value `{value}`")))
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn take(&mut self, key: &str) -> Option<&'a str> {
        let pos = self.pairs.iter().position(|(k, _)| *k == key)?;
        Some(self.pairs.remove(pos).1)
    }

    fn require(&mut self, key: &str) -> Result<&'a str, MvError> {
        self.take(key)
            .ok_or_else(|| format_err(self.line, format!("missing field `{key}`")))
    }

    fn int<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, MvError> {
        let v = self.require(key)?;
        int_field(self.line, key, v)
    }

    fn finish(self) -> Result<(), MvError> {
        match self.pairs.first() {
            Some((k, _)) => Err(format_err(self.line, format!("unexpected or duplicate field `{k}`"))),
            None => Ok(()),
        }
    }
}

fn parse_header(line: usize, rest: &str) -> Result<SequenceHeader, MvError> {
    let mut tokens = rest.split_whitespace();
    if tokens.next() != Some("v1") {
        return Err(format_err(line, "unsupported dump version (expected `mvdump v1`)"));
    }
    let mut f = Fields { line, pairs: parse_fields(line, tokens)? };
    let header = SequenceHeader {
        width: f.int("width")?,
        height: f.int("height")?,
        ctu_size: f.int("ctu")?,
        subpel: f.int("subpel")?,
        frames: f.int("frames")?,
    };
    f.finish()?;
    header.validate(line)?;
    Ok(header)
}

fn parse_pu(line: usize, rest: &str) -> Result<PredictionUnit, MvError> {
    let mut f = Fields { line, pairs: parse_fields(line, rest.split_whitespace())? };
    let (x, y, w, h) = (f.int("x")?, f.int("y")?, f.int("w")?, f.int("h")?);
    let mode = match f.require("mode")? {
        "INTER" => {
            let mv = f.require("mv")?;
            let (dx, dy) = mv
                .split_once(',')
                .ok_or_else(|| format_err(line, format!("mv `{mv}` is not `dx,dy`")))?;
            let mv = MotionVector::new(int_field(line, "mv", dx)?, int_field(line, "mv", dy)?);
            PuMode::Inter { mv, ref_offset: f.int("ref")? }
        }
        m @ ("SKIP" | "INTRA") => {
            if f.take("mv").is_some() || f.take("ref").is_some() {
                return Err(format_err(line, format!("{m} PU must not carry mv/ref")));
            }
            if m == "SKIP" {
                PuMode::Skip
            } else {
                PuMode::Intra
            }
        }
        other => return Err(format_err(line, format!("unknown PU mode `{other}`"))),
    };
    f.finish()?;
    Ok(PredictionUnit { x, y, w, h, mode })
}

/// Parses a motion dump, validating every frame.
pub fn parse_mv_dump(reader: impl BufRead) -> Result<MvDump, MvError> {
    let mut header: Option<SequenceHeader> = None;
    let mut frames: Vec<FrameField> = Vec::new();
    let mut current: Option<(u32, Vec<PredictionUnit>)> = None;

    let close = |header: &SequenceHeader, cur: Option<(u32, Vec<PredictionUnit>)>, frames: &mut Vec<FrameField>| {
        if let Some((t, pus)) = cur {
            frames.push(FrameField::new(t, header, pus)?);
        }
        Ok::<_, MvError>(())
    };

    let mut last_line = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let (kind, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        let Some(hdr) = header else {
            if kind != "mvdump" {
                return Err(format_err(line_no, "expected `mvdump` header record"));
            }
            header = Some(parse_header(line_no, rest)?);
            continue;
        };
        match kind {
            "frame" => {
                let mut f = Fields { line: line_no, pairs: parse_fields(line_no, rest.split_whitespace())? };
                let t: u32 = f.int("t")?;
                f.finish()?;
                if t == 0 {
                    return Err(format_err(line_no, "frame index must be at least 1"));
                }
                let prev = current.as_ref().map(|c| c.0).or(frames.last().map(|f| f.frame_index()));
                if prev.is_some_and(|p| t <= p) {
                    return Err(format_err(line_no, format!("frame index {t} is not strictly increasing")));
                }
                close(&hdr, current.take(), &mut frames)?;
                current = Some((t, Vec::new()));
            }
            "pu" => {
                let pu = parse_pu(line_no, rest)?;
                match current.as_mut() {
                    Some((_, pus)) => pus.push(pu),
                    None => return Err(format_err(line_no, "pu record before any frame record")),
                }
            }
            "mvdump" => return Err(format_err(line_no, "duplicate header record")),
            other => return Err(format_err(line_no, format!("unknown record `{other}`"))),
        }
    }
    let header = header.ok_or_else(|| format_err(last_line.max(1), "missing `mvdump` header"))?;
    close(&header, current.take(), &mut frames)?;
    if frames.len() != header.frames as usize {
        return Err(format_err(
            last_line.max(1),
            format!("header declares {} frames but {} were found", header.frames, frames.len()),
        ));
    }
    Ok(MvDump { header, frames })
}

pub fn parse_mv_dump_str(text: &str) -> Result<MvDump, MvError> {
    parse_mv_dump(text.as_bytes())
}

/// Serializes a dump in the line format accepted by [`parse_mv_dump`].
pub fn write_mv_dump(dump: &MvDump) -> String {
    let h = &dump.header;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "mvdump v1 width={} height={} ctu={} subpel={} frames={}",
        h.width,
        h.height,
        h.ctu_size,
        h.subpel,
        dump.frames.len()
    );
    for frame in &dump.frames {
        let _ = writeln!(out, "frame t={}", frame.frame_index());
        for pu in frame.pus() {
            let _ = write!(out, "pu x={} y={} w={} h={} mode={}", pu.x, pu.y, pu.w, pu.h, pu.mode.name());
            if let PuMode::Inter { mv, ref_offset } = pu.mode {
                let _ = write!(out, " mv={},{} ref={}", mv.dx, mv.dy, ref_offset);
            }
            out.push('\n');
        }
    }
    out
}

/// Vector in polar form, as produced by [`pvm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarVector {
    pub angle: f64,
    pub magnitude: f64,
}

impl PolarVector {
    pub fn to_cartesian(&self) -> (f64, f64) {
        (self.magnitude * self.angle.cos(), self.magnitude * self.angle.sin())
    }

    /// Floors each Cartesian component to an integer vector.
    pub fn floor_to_vector(&self) -> MotionVector {
        let (x, y) = self.to_cartesian();
        MotionVector::new(snapped_floor(x), snapped_floor(y))
    }
}

fn snapped_floor(v: f64) -> i32 {
    let r = v.round();
    if (v - r).abs() < FLOOR_SNAP {
        r as i32
    } else {
        v.floor() as i32
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PvmOptions {
    /// Take the magnitude median over the selected angular window instead of
    /// over every input vector.
    pub magnitude_over_window: bool,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Polar vector median.
///
/// Sorts the vectors by angle, picks the run of `⌊(n+1)/2⌋` consecutive
/// vectors whose summed successive angle differences is smallest (first run
/// wins on ties), and returns the median angle of that run together with the
/// median magnitude of all inputs.
pub fn pvm(vectors: &[MotionVector], opts: PvmOptions) -> Result<PolarVector, MvError> {
    if vectors.is_empty() {
        return Err(MvError::EmptyPvm);
    }
    let mut polar: Vec<(f64, f64)> = vectors.iter().map(|v| (v.angle(), v.magnitude())).collect();
    polar.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n = polar.len();
    let m = n.div_ceil(2);
    let diffs: Vec<f64> = polar.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let mut best_k = 0;
    let mut best_sum = f64::INFINITY;
    for k in 0..=(n - m) {
        let sum: f64 = diffs[k..k + m - 1].iter().sum();
        if sum < best_sum {
            best_sum = sum;
            best_k = k;
        }
    }

    let window = &polar[best_k..best_k + m];
    let angles: Vec<f64> = window.iter().map(|p| p.0).collect();
    let mut magnitudes: Vec<f64> = if opts.magnitude_over_window {
        window.iter().map(|p| p.1).collect()
    } else {
        polar.iter().map(|p| p.1).collect()
    };
    magnitudes.sort_by(f64::total_cmp);
    Ok(PolarVector { angle: median(&angles), magnitude: median(&magnitudes) })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NormalizeOptions {
    pub pvm: PvmOptions,
}

/// Per-PU integer-pel motion referencing frame `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedField {
    frame_index: u32,
    width: u32,
    height: u32,
    ctu_size: u32,
    pus: Vec<PredictionUnit>,
    mvs: Vec<MotionVector>,
    /// PU indices per CTU cell, row-major.
    ctu_index: Vec<Vec<usize>>,
}

impl NormalizedField {
    /// Builds a normalized field directly from a PU layout and pel vectors.
    /// The layout is validated like a [`FrameField`].
    pub fn from_parts(
        frame_index: u32,
        header: &SequenceHeader,
        rects: Vec<(u32, u32, u32, u32)>,
        mvs: Vec<MotionVector>,
    ) -> Result<Self, MvError> {
        assert_eq!(rects.len(), mvs.len(), "one vector per PU");
        let pus = rects
            .into_iter()
            .map(|(x, y, w, h)| PredictionUnit { x, y, w, h, mode: PuMode::Skip })
            .collect();
        let field = FrameField::new(frame_index, header, pus)?;
        let mut nf = normalize(&field, NormalizeOptions::default());
        nf.mvs = mvs;
        Ok(nf)
    }

    pub fn frame_index(&self) -> u32 {
        self.frame_index
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pus(&self) -> &[PredictionUnit] {
        &self.pus
    }

    /// Normalized vectors, aligned with [`Self::pus`].
    pub fn mvs(&self) -> &[MotionVector] {
        &self.mvs
    }

    /// PUs paired with their normalized vectors.
    pub fn iter(&self) -> impl Iterator<Item = (&PredictionUnit, MotionVector)> {
        self.pus.iter().zip(self.mvs.iter().copied())
    }

    /// Vector of the PU covering pixel `(px, py)`.
    pub fn mv_at(&self, px: u32, py: u32) -> Option<MotionVector> {
        if px >= self.width || py >= self.height {
            return None;
        }
        let cols = self.width.div_ceil(self.ctu_size);
        let cell = ((py / self.ctu_size) * cols + px / self.ctu_size) as usize;
        self.ctu_index[cell]
            .iter()
            .find(|&&i| {
                let pu = &self.pus[i];
                px >= pu.x && px < pu.x + pu.w && py >= pu.y && py < pu.y + pu.h
            })
            .map(|&i| self.mvs[i])
    }
}

fn scale_to_pel(mv: MotionVector, ref_offset: u32, subpel: u32) -> MotionVector {
    let denom = ref_offset as i64 * subpel as i64;
    MotionVector::new(
        (mv.dx as i64).div_euclid(denom) as i32,
        (mv.dy as i64).div_euclid(denom) as i32,
    )
}

/// Reduces every PU of `field` to one integer-pel vector referencing the
/// previous frame.
pub fn normalize(field: &FrameField, opts: NormalizeOptions) -> NormalizedField {
    let cols = field.ctu_columns();
    let rows = field.height.div_ceil(field.ctu_size);
    let mut ctu_index = vec![Vec::new(); (cols * rows) as usize];
    for (i, pu) in field.pus.iter().enumerate() {
        ctu_index[field.ctu_of(pu)].push(i);
    }

    let mut mvs: Vec<Option<MotionVector>> = field
        .pus
        .iter()
        .map(|pu| match pu.mode {
            PuMode::Skip => Some(MotionVector::ZERO),
            PuMode::Inter { mv, ref_offset } => Some(scale_to_pel(mv, ref_offset, field.subpel)),
            PuMode::Intra => None,
        })
        .collect();

    for members in &ctu_index {
        let neighbours: Vec<MotionVector> = members.iter().filter_map(|&i| mvs[i]).collect();
        let fill = if neighbours.is_empty() {
            MotionVector::ZERO
        } else {
            pvm(&neighbours, opts.pvm).expect("non-empty").floor_to_vector()
        };
        for &i in members {
            mvs[i].get_or_insert(fill);
        }
    }

    NormalizedField {
        frame_index: field.frame_index,
        width: field.width,
        height: field.height,
        ctu_size: field.ctu_size,
        pus: field.pus.clone(),
        mvs: mvs.into_iter().map(|m| m.expect("every PU assigned")).collect(),
        ctu_index,
    }
}
