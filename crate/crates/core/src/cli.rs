//! `mvtrack` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data-format or validation error,
//! 3 runtime error (I/O, detection service).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::decide::{parse_results, track_sequence, write_results, DecisionConfig, TrackError, TrackOptions};
use crate::detect::{infer_class_from, load_detections, DetectError, DetectionSource, IngestOptions, ServiceConfig};
use crate::eval::{load_ground_truth, summarize, EvalError};
use crate::geometry::PixelBox;
use crate::mvfield::{parse_mv_dump, MvError, NormalizeOptions, PvmOptions};
use crate::synth::{generate, verify, FixtureFiles, OcclusionWindow, ScenarioKind, ScenarioSpec, SynthError};

/// Environment variable overriding the detection-service endpoint.
pub const DET_URL_ENV: &str = "MVTRACK_DET_URL";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<MvError> for CliError {
    fn from(e: MvError) -> Self {
        match e {
            MvError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DetectError> for CliError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Format { .. } | DetectError::NoVote => CliError::Data(e.to_string()),
            DetectError::Io(_) | DetectError::Service(_) | DetectError::UnknownSequence(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrackError> for CliError {
    fn from(e: TrackError) -> Self {
        match e {
            TrackError::Detect(d) => d.into(),
            TrackError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mvtrack", version, about = "Motion-vector aided single-object tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track one object through a sequence.
    Track(TrackArgs),
    /// Score a results file against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic fixture.
    Synth(SynthArgs),
    /// Infer the target class from the first five frames of detections.
    InferClass(InferArgs),
    /// Check a synthetic fixture for internal consistency.
    Verify(VerifyArgs),
}

fn parse_box(s: &str) -> Result<PixelBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    if v.len() != 4 {
        return Err("expected x,y,w,h".into());
    }
    PixelBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected dx,dy")?;
    Ok((a.trim().parse().map_err(|_| format!("`{a}` is not a number"))?, b.trim().parse().map_err(|_| format!("`{b}` is not a number"))?))
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    Ok((w.parse().map_err(|_| format!("`{w}` is not an integer"))?, h.parse().map_err(|_| format!("`{h}` is not an integer"))?))
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once('-').ok_or("expected START-END")?;
    Ok((a.parse().map_err(|_| format!("`{a}` is not an integer"))?, b.parse().map_err(|_| format!("`{b}` is not an integer"))?))
}

#[derive(Debug, Args)]
struct DetectionArgs {
    /// Detection file.
    #[arg(long)]
    det: Option<PathBuf>,
    /// Detection service endpoint (overridden by MVTRACK_DET_URL).
    #[arg(long)]
    det_url: Option<String>,
    /// Sequence id sent to the detection service [default: motion dump file stem].
    #[arg(long)]
    sequence: Option<String>,
    /// Drop detections scoring below this value.
    #[arg(long)]
    min_score: Option<f64>,
    /// Detection service timeout in milliseconds.
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,
    /// Detection service retries after transport failures.
    #[arg(long, default_value_t = 2)]
    retries: u32,
}

impl DetectionArgs {
    fn source(&self, default_sequence: Option<&Path>) -> Result<DetectionSource, CliError> {
        if let Some(path) = &self.det {
            return Ok(DetectionSource::File(path.clone()));
        }
        let url = std::env::var(DET_URL_ENV).ok().filter(|u| !u.is_empty()).or_else(|| self.det_url.clone());
        let Some(url) = url else {
            return Err(CliError::Usage(format!("one of --det, --det-url or {DET_URL_ENV} is required")));
        };
        let sequence = self
            .sequence
            .clone()
            .or_else(|| default_sequence.and_then(|p| p.file_stem()).map(|s| s.to_string_lossy().into_owned()))
            .ok_or_else(|| CliError::Usage("--sequence is required with a detection service".into()))?;
        Ok(DetectionSource::Service(ServiceConfig {
            url,
            sequence,
            timeout: Duration::from_millis(self.timeout_ms),
            retries: self.retries,
        }))
    }

    fn ingest(&self, frame_size: Option<(u32, u32)>) -> Result<IngestOptions, CliError> {
        if self.min_score.is_some_and(|s| !(0.0..=1.0).contains(&s)) {
            return Err(CliError::Usage("--min-score must lie in [0, 1]".into()));
        }
        Ok(IngestOptions { min_score: self.min_score, frame_size })
    }
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Motion-vector dump.
    #[arg(long)]
    mv: PathBuf,
    #[command(flatten)]
    detections: DetectionArgs,
    /// Target box in frame 1 as 0-based x,y,w,h.
    #[arg(long, value_parser = parse_box)]
    init: PixelBox,
    /// Target class; inferred from the first five frames when omitted.
    #[arg(long)]
    class: Option<String>,
    /// Keep the threshold reduction after an accepted box.
    #[arg(long)]
    no_reduction_reset: bool,
    /// Median magnitude over the selected angular window only.
    #[arg(long)]
    pvm_magnitude_over_window: bool,
    /// Results file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    results: PathBuf,
    /// OTB-style ground truth (1-based x,y,w,h per line).
    #[arg(long)]
    gt: PathBuf,
    /// Report file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    success_csv: Option<PathBuf>,
    #[arg(long)]
    precision_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    detections: DetectionArgs,
    #[arg(long, value_parser = parse_box)]
    init: PixelBox,
    /// Write the class here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// translate, scale_change, occlusion or intra_noise.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    frames: u32,
    /// Frame size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size)]
    size: (u32, u32),
    #[arg(long, value_parser = parse_box)]
    init: PixelBox,
    /// Per-frame center displacement dx,dy in pels.
    #[arg(long, value_parser = parse_pair, default_value = "0,0", allow_hyphen_values = true)]
    velocity: (f64, f64),
    /// Per-frame size growth factor.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Hidden frames as START-END.
    #[arg(long, value_parser = parse_range)]
    occlusion: Option<(u32, u32)>,
    /// Emit a same-class bystander in hidden frames.
    #[arg(long)]
    bystander: bool,
    #[arg(long, default_value_t = 0.0)]
    intra_fraction: f64,
    #[arg(long, default_value = "person")]
    class: String,
    /// Comma-separated decoy classes.
    #[arg(long, value_delimiter = ',')]
    decoys: Vec<String>,
    #[arg(long, default_value_t = 0)]
    decoys_per_frame: usize,
    #[arg(long, default_value_t = 8)]
    pu_size: u32,
    #[arg(long, default_value_t = 64)]
    ctu_size: u32,
    #[arg(long, default_value_t = 4)]
    subpel: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// File stem [default: scenario name].
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    name: String,
    /// Write the verification report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, CliError> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| CliError::Runtime(format!("opening {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn cmd_track(args: TrackArgs) -> Result<(), CliError> {
    let dump = parse_mv_dump(open(&args.mv)?)?;
    let frame_size = (dump.header.width, dump.header.height);
    let source = args.detections.source(Some(&args.mv))?;
    let dets = load_detections(&source, dump.sequence_length(), args.detections.ingest(Some(frame_size))?)?;
    let options = TrackOptions {
        decision: DecisionConfig { reset_reduction_on_accept: !args.no_reduction_reset },
        normalize: NormalizeOptions { pvm: PvmOptions { magnitude_over_window: args.pvm_magnitude_over_window } },
    };
    let outcome = track_sequence(&dump, &dets, args.init, args.class.as_deref(), options)?;
    write_file(&args.out, &write_results(&outcome.steps))?;
    eprintln!("tracked {} frames, class={}", outcome.steps.len(), outcome.class);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let results = parse_results(open(&args.results)?)?;
    let gt = load_ground_truth(open(&args.gt)?)?;
    let boxes: Vec<PixelBox> = results.iter().map(|r| r.bbox).collect();
    let report = summarize(&boxes, &gt)?;
    write_file(&args.out, &report.to_text())?;
    if let Some(p) = &args.success_csv {
        write_file(p, &report.success.to_csv())?;
    }
    if let Some(p) = &args.precision_csv {
        write_file(p, &report.precision.to_csv())?;
    }
    if report.skipped_frames > 0 {
        eprintln!("skipped {} frames without valid ground truth", report.skipped_frames);
    }
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<(), CliError> {
    let source = args.detections.source(None)?;
    let dets = load_detections(&source, crate::detect::CLASS_VOTE_FRAMES, args.detections.ingest(None)?)?;
    let class = infer_class_from(&dets, &args.init)?;
    emit(args.out.as_deref(), &format!("{class}\n"))
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let kind: ScenarioKind = args.scenario.parse().map_err(|e: SynthError| CliError::Usage(e.to_string()))?;
    let spec = ScenarioSpec {
        kind,
        frames: args.frames,
        width: args.size.0,
        height: args.size.1,
        init_box: args.init,
        velocity: args.velocity,
        scale_per_frame: args.scale,
        occlusion: args.occlusion.map(|(start, end)| OcclusionWindow { start, end, bystander: args.bystander }),
        target_class: args.class,
        decoy_classes: args.decoys,
        decoys_per_frame: args.decoys_per_frame,
        intra_fraction: args.intra_fraction,
        pu_size: args.pu_size,
        ctu_size: args.ctu_size,
        subpel: args.subpel,
        seed: args.seed,
    };
    let files = generate(&spec)?;
    let stem = args.name.unwrap_or_else(|| kind.name().to_string());
    files.write_to(&args.out_dir, &stem)?;
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let files = FixtureFiles::read_from(&args.dir, &args.name)?;
    let report = verify(&files)?;
    emit(args.out.as_deref(), &report.to_string())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::InferClass(a) => cmd_infer(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("mvtrack: {}", e.message());
            e.code()
        }
    }
}
