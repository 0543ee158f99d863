//! Command-line front end. `humandet <subcommand> --help` lists the flags.
//!
//! Sequences are directories of zero-padded numeric `.pgm` frames. Data goes
//! to files or stdout (`-`); diagnostics go to stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench;
use crate::depthimage::{fill_holes, DepthImage};
use crate::encoding::{encode_with, EncodingScheme};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Annotation, Detection, PrPoint};
use crate::fusion::ScoreSource;
use crate::geometry::{CameraIntrinsics, GroundPlane};
use crate::io::{frame_file_name, list_frames, read_depth_pgm, read_jsonl, write_depth_pgm, write_json, write_jsonl_to, write_rgb};
use crate::pipeline::{Detector, PipelineConfig, ScorerSpec};
use crate::roi::{select_rois, Stages};
use crate::synth::{render, SceneSampler, SceneSpec};

#[derive(Debug, Parser)]
#[command(name = "humandet", version, about = "Depth-driven human detection: encodings, ROI selection, fusion and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fill holes and write a three-channel depth encoding.
    Encode(EncodeArgs),
    /// Run ground-plane detection, window search and filtering; write proposals.
    Rois(RoisArgs),
    /// Full pipeline: proposals, scoring, fusion and NMS; write detections.
    Detect(DetectArgs),
    /// Match detections to annotations; write the PR curve and print AP.
    Eval(EvalArgs),
    /// Render a synthetic depth sequence with annotations.
    Synth(SynthArgs),
    /// Time each pipeline stage and write a CSV report.
    Bench(BenchArgs),
}

/// Settings shared by the commands that run the pipeline. Flags override
/// the config file, which overrides the built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML config file (see config/default.toml).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Camera intrinsics JSON. Defaults to `intrinsics.json` next to the
    /// frames, then to the Kinect VGA camera.
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ROI stages, e.g. `gpd,sis,cpf` or `sis`.
    #[arg(long)]
    pub stages: Option<Stages>,
    /// Anchor stride in pixels.
    #[arg(long)]
    pub stride: Option<usize>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if self.intrinsics.is_some() {
            cfg.intrinsics = self.intrinsics.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(stages) = self.stages {
            cfg.stages = stages;
        }
        if let Some(stride) = self.stride {
            cfg.roi.stride = stride;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// A depth PGM or a sequence directory.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output image (.ppm or .png), or a directory when the input is one.
    #[arg(long, short)]
    pub output: PathBuf,
    /// dg, cd, ce or cecd. Defaults to the config value.
    #[arg(long)]
    pub scheme: Option<EncodingScheme>,
    /// Image format for directory output.
    #[arg(long, default_value = "ppm", value_parser = ["ppm", "png"])]
    pub format: String,
    /// Skip hole filling.
    #[arg(long)]
    pub no_fill: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RoisArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Proposals as JSON lines, `-` for stdout.
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Per-frame ground plane as JSON lines.
    #[arg(long)]
    pub planes: Option<PathBuf>,
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Detections after NMS as JSON lines, `-` for stdout.
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Every scored proposal before NMS, as JSON lines.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    /// Write each frame's depth encoding into this directory.
    #[arg(long)]
    pub encoded_dir: Option<PathBuf>,
    /// Ground truth for oracle scorers. Defaults to the config value, then to
    /// `annotations.jsonl` next to the frames.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// oracle, file:PATH or constant:P
    #[arg(long)]
    pub color_scorer: Option<ScorerSpec>,
    /// oracle, file:PATH or constant:P
    #[arg(long)]
    pub depth_scorer: Option<ScorerSpec>,
    /// Probability used for NMS and output ranking: fused, color or depth.
    #[arg(long)]
    pub score_source: Option<ScoreSource>,
    #[arg(long)]
    pub encoding: Option<EncodingScheme>,
    /// Worker threads; 0 uses all cores. Output order never depends on it.
    #[arg(long, short)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, short)]
    pub detections: PathBuf,
    #[arg(long, short)]
    pub annotations: PathBuf,
    /// PR curve CSV, `-` for stdout.
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Whitespace-separated `recall precision threshold` columns for gnuplot.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; created if missing.
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, short = 'n', default_value_t = 10)]
    pub frames: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Render this SceneSpec JSON for every frame (noise reseeded per frame)
    /// instead of sampling random scenes.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Depth noise standard deviation, millimeters (sampled scenes).
    #[arg(long, default_value_t = 0.0)]
    pub noise_mm: f64,
    /// Fraction of pixels dropped to invalid (sampled scenes).
    #[arg(long, default_value_t = 0.0)]
    pub invalid: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Sequence directory. Without it, synthetic 640x480 frames are used.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Number of synthetic frames.
    #[arg(long, default_value_t = 10)]
    pub synthetic: u64,
    /// Timing passes over the sequence.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Stage report CSV, `-` for stdout.
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Also time SIS + CPF at the configured stride and twice it, written
    /// to this CSV.
    #[arg(long)]
    pub stride_csv: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[command(flatten)]
    pub common: ConfigArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode(a) => cmd_encode(&a),
        Command::Rois(a) => cmd_rois(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn write_records<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = open_output(path)?;
    write_jsonl_to(&mut out, items)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let out = open_output(path)?;
    bench::write_rows(out, rows).map_err(|e| Error::format(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Frames of a directory, or a single file (frame id from a numeric stem,
/// else 0).
pub fn load_frames(input: &Path) -> Result<Vec<(u64, DepthImage)>> {
    if !input.exists() {
        return Err(Error::io(input, io::ErrorKind::NotFound.into()));
    }
    if input.is_dir() {
        let frames = list_frames(input)?;
        if frames.is_empty() {
            return Err(Error::format(input, "no numbered .pgm frames in directory"));
        }
        frames
            .into_iter()
            .map(|(id, path)| read_depth_pgm(&path).map(|d| (id, d)).map_err(|e| e.in_frame(id)))
            .collect()
    } else {
        let id = input
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        Ok(vec![(id, read_depth_pgm(input).map_err(|e| e.in_frame(id))?)])
    }
}

fn sequence_dir(input: &Path) -> Option<&Path> {
    if input.is_dir() {
        Some(input)
    } else {
        input.parent()
    }
}

fn resolve_intrinsics(cfg: &PipelineConfig, input: Option<&Path>, frames: &[(u64, DepthImage)]) -> Result<CameraIntrinsics> {
    let beside = input
        .and_then(sequence_dir)
        .map(|d| d.join("intrinsics.json"))
        .filter(|p| p.is_file());
    let k = match cfg.intrinsics.clone().or(beside) {
        Some(path) => CameraIntrinsics::load(&path)?,
        None => CameraIntrinsics::kinect_vga(),
    };
    if let Some((_, d)) = frames.first() {
        k.validate(d.width(), d.height())?;
    }
    Ok(k)
}

fn resolve_annotations(
    cfg: &PipelineConfig,
    flag: Option<&PathBuf>,
    input: Option<&Path>,
) -> Result<Option<Vec<Annotation>>> {
    let needed = cfg.color_scorer == ScorerSpec::Oracle || cfg.depth_scorer == ScorerSpec::Oracle;
    let beside = input
        .and_then(sequence_dir)
        .map(|d| d.join("annotations.jsonl"))
        .filter(|p| p.is_file());
    match flag.cloned().or(cfg.oracle.annotations.clone()).or(beside) {
        Some(path) if needed => Ok(Some(read_jsonl(&path)?)),
        _ => Ok(None),
    }
}

fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let scheme = a.scheme.unwrap_or(cfg.encoding);
    let hf = cfg.hole_fill;
    let encode_one = |d: &DepthImage| {
        let filled = if hf.enabled && !a.no_fill {
            fill_holes(d, hf.kernel_radius, hf.max_passes)
        } else {
            d.clone()
        };
        encode_with(&filled, scheme, cfg.normalize)
    };
    let frames = load_frames(&a.input)?;
    if a.input.is_dir() {
        create_dir(&a.output)?;
        for (id, d) in &frames {
            let name = Path::new(&frame_file_name(*id)).with_extension(&a.format);
            write_rgb(&a.output.join(name), &encode_one(d)).map_err(|e| e.in_frame(*id))?;
        }
        Ok(())
    } else {
        write_rgb(&a.output, &encode_one(&frames[0].1))
    }
}

#[derive(Debug, Serialize)]
struct ProposalRecord {
    frame: u64,
    x: i32,
    y: i32,
    side: u32,
    depth_m: f64,
}

#[derive(Debug, Serialize)]
struct PlaneRecord {
    frame: u64,
    plane: Option<GroundPlane>,
}

fn cmd_rois(a: &RoisArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let frames = load_frames(&a.input)?;
    let k = resolve_intrinsics(&cfg, Some(&a.input), &frames)?;
    // Same per-frame seeds as `detect`.
    let det = Detector::with_scorers(
        cfg.clone(),
        k,
        Box::new(crate::fusion::ConstantScorer(0.0)),
        Box::new(crate::fusion::ConstantScorer(0.0)),
    );
    let mut proposals = Vec::new();
    let mut planes = Vec::new();
    for (id, d) in &frames {
        let sel = select_rois(d, &k, &cfg.roi, cfg.stages, det.frame_seed(*id));
        proposals.extend(sel.proposals.iter().map(|p| ProposalRecord {
            frame: *id,
            x: p.x,
            y: p.y,
            side: p.side,
            depth_m: p.depth_m,
        }));
        planes.push(PlaneRecord { frame: *id, plane: sel.plane });
    }
    write_records(&a.output, &proposals)?;
    if let Some(path) = &a.planes {
        write_records(path, &planes)?;
    }
    Ok(())
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(s) = &a.color_scorer {
        cfg.color_scorer = s.clone();
    }
    if let Some(s) = &a.depth_scorer {
        cfg.depth_scorer = s.clone();
    }
    if let Some(s) = a.score_source {
        cfg.score_source = s;
    }
    if let Some(e) = a.encoding {
        cfg.encoding = e;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    let frames = load_frames(&a.input)?;
    let k = resolve_intrinsics(&cfg, Some(&a.input), &frames)?;
    let anns = resolve_annotations(&cfg, a.annotations.as_ref(), Some(&a.input))?;
    let det = Detector::new(cfg, k, anns.as_deref())?;
    let results = det.process_all(&frames, a.encoded_dir.is_some())?;

    if let Some(dir) = &a.encoded_dir {
        create_dir(dir)?;
        for r in &results {
            if let Some(img) = &r.encoded {
                let name = Path::new(&frame_file_name(r.frame)).with_extension("ppm");
                write_rgb(&dir.join(name), img).map_err(|e| e.in_frame(r.frame))?;
            }
        }
    }
    let detections: Vec<Detection> = results.iter().flat_map(|r| r.detection_records()).collect();
    write_records(&a.output, &detections)?;
    if let Some(path) = &a.scores_out {
        let scored: Vec<Detection> = results
            .iter()
            .flat_map(|r| r.scored.iter().map(|s| Detection::new(r.frame, s)))
            .collect();
        write_records(path, &scored)?;
    }
    Ok(())
}

/// Gnuplot data: one `recall precision threshold` line per curve point,
/// preceded by the recall-0 point the AP integral starts from.
pub fn write_curve<W: Write>(out: &mut W, curve: &[PrPoint], ap: f64) -> io::Result<()> {
    writeln!(out, "# AP = {ap:.6}")?;
    writeln!(out, "# recall precision threshold")?;
    if let Some(first) = curve.first() {
        writeln!(out, "0 {} {}", first.precision, first.threshold)?;
    }
    for p in curve {
        writeln!(out, "{} {} {}", p.recall, p.precision, p.threshold)?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        return Err(Error::InvalidParameter("--iou must be in (0, 1]".into()));
    }
    let dets: Vec<Detection> = read_jsonl(&a.detections)?;
    let anns: Vec<Annotation> = read_jsonl(&a.annotations)?;
    let (curve, ap) = evaluate(&dets, &anns, a.iou);
    write_csv(&a.output, &curve)?;
    if let Some(path) = &a.curve {
        let mut out = open_output(path)?;
        write_curve(&mut out, &curve, ap)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))?;
    }
    if a.output == Path::new("-") {
        eprintln!("AP {ap:.6}");
    } else {
        println!("AP {ap:.6}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TruePlane {
    frame: u64,
    normal: [f64; 3],
    offset: f64,
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let base = a.spec.as_deref().map(SceneSpec::load).transpose()?;
    let sampler = SceneSampler::noisy(a.noise_mm, a.invalid);
    create_dir(&a.output)?;
    let mut annotations = Vec::new();
    let mut planes = Vec::new();
    let mut camera = None;
    for frame in 0..a.frames {
        let spec = match &base {
            Some(s) => SceneSpec { seed: s.seed.wrapping_add(a.seed).wrapping_add(frame), ..s.clone() },
            None => sampler.sample(a.seed.wrapping_add(frame)),
        };
        let scene = render(&spec)?.with_frame(frame);
        write_depth_pgm(&a.output.join(frame_file_name(frame)), &scene.depth)?;
        annotations.extend(scene.annotations);
        planes.push(TruePlane { frame, normal: scene.plane.normal, offset: scene.plane.offset });
        camera = Some(spec.camera);
    }
    crate::io::write_jsonl(&a.output.join("annotations.jsonl"), &annotations)?;
    crate::io::write_jsonl(&a.output.join("planes.jsonl"), &planes)?;
    let camera = camera.or(base.map(|s| s.camera)).unwrap_or(sampler.camera);
    write_json(&a.output.join("intrinsics.json"), &camera)
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let (frames, anns) = match &a.input {
        Some(dir) => {
            let frames = load_frames(dir)?;
            let anns = resolve_annotations(&cfg, a.annotations.as_ref(), Some(dir))?;
            (frames, anns)
        }
        None => {
            let sampler = SceneSampler::noisy(10.0, 0.1);
            let mut frames = Vec::new();
            let mut anns = Vec::new();
            for i in 0..a.synthetic {
                let scene = render(&sampler.sample(cfg.seed.wrapping_add(i)))?.with_frame(i);
                frames.push((i, scene.depth));
                anns.extend(scene.annotations);
            }
            (frames, Some(anns))
        }
    };
    if frames.len() < 10 {
        eprintln!("note: {} frame(s); medians over fewer than 10 frames are noisy", frames.len());
    }
    let k = resolve_intrinsics(&cfg, a.input.as_deref(), &frames)?;
    let stride = cfg.roi.stride;
    let det = Detector::new(cfg, k, anns.as_deref())?;
    let report = bench::run(&det, &frames, a.repeats)?;
    let out = open_output(&a.output)?;
    report.write_csv(out).map_err(|e| Error::format(&a.output, e))?;
    eprintln!(
        "ROI selection median {:.2} ms/frame over {} runs",
        report.median_ms("roi_total"),
        report.timings.len()
    );
    if let Some(path) = &a.stride_csv {
        let rows = bench::stride_scaling(&det, &frames, &[stride, stride * 2], a.repeats);
        write_csv(path, &rows)?;
        eprintln!(
            "stride {} -> {}: anchors x{:.3}, SIS+CPF time x{:.3}",
            rows[0].stride,
            rows[1].stride,
            rows[1].anchors as f64 / rows[0].anchors.max(1) as f64,
            rows[1].sis_cpf_ms / rows[0].sis_cpf_ms.max(f64::MIN_POSITIVE),
        );
    }
    Ok(())
}
