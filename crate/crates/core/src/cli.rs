//! The `p4d` command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;

use crate::classes::ClassMap;
use crate::clustering::FeatureMode;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::kitti_io::{
    load_sequence, read_labels_unchecked, read_point_scan, read_sidecar, scan_file_name, write_labels, SequenceHandle,
};
use crate::metrics::{self, evaluate_dirs, sequence_dir, EvalConfig};
use crate::synth::{corrupt, generate_sequence, Corruption, SceneSpec};
use crate::tracking::{run_online_pipeline, ScanInput};
use crate::volume4d::{align_scan, Strategy};

#[derive(Debug, Parser)]
#[command(name = "p4d", version, about = "4D panoptic LiDAR segmentation and LSTQ evaluation")]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment and track sequences with the online pipeline.
    Run(RunArgs),
    /// Score predictions against ground truth.
    Evaluate(EvalArgs),
    /// Write a synthetic labelled sequence (and optional corrupted predictions).
    Synth(SynthArgs),
    /// Compare analytic loss gradients with finite differences.
    CheckGradients(GradArgs),
    /// Summarise scans, label files, sidecars or whole sequence directories.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root with `<seq>/` or `sequences/<seq>/` directories.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output root; labels go to `<out>/<seq>/predictions/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated sequence names.
    #[arg(long, value_delimiter = ',')]
    pub sequences: Vec<String>,
    /// Label subdirectory with per-point semantic predictions [default: labels].
    #[arg(long)]
    pub semantics: Option<String>,
    /// base | thing | importance | decay | stride [default: importance].
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Window length in scans, current scan included [default: 4].
    #[arg(long)]
    pub tau: Option<usize>,
    /// Fraction of each past scan kept by importance sampling [default: 0.1].
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Scan stride of the stride strategy [default: 2].
    #[arg(long)]
    pub stride: Option<usize>,
    /// Scale of the time coordinate [default: 1].
    #[arg(long)]
    pub time_scale: Option<f64>,
    /// xyz | xyzt | emb | emb+xyz | emb+xyzt [default: emb+xyzt].
    #[arg(long)]
    pub feature_mode: Option<FeatureMode>,
    /// Variance of appended x, y, z dimensions, m² [default: 1].
    #[arg(long)]
    pub spatial_variance: Option<f64>,
    /// Variance of the appended t dimension, slot² [default: 1].
    #[arg(long)]
    pub temporal_variance: Option<f64>,
    /// Membership probability threshold [default: 0.5].
    #[arg(long)]
    pub assign_prob: Option<f64>,
    /// Minimum instance size [default: 25].
    #[arg(long)]
    pub min_points: Option<usize>,
    /// Window overlap IoU needed to inherit an id [default: 0.5].
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, 0 = all cores [default: 0].
    #[arg(long)]
    pub threads: Option<usize>,
    /// Class map TOML [default: SemanticKITTI].
    #[arg(long)]
    pub classes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth root.
    #[arg(long, required_unless_present = "combine")]
    pub gt: Option<PathBuf>,
    /// Prediction root (`<seq>/predictions/` or `<seq>/labels/`).
    #[arg(long, required_unless_present = "combine")]
    pub pred: Option<PathBuf>,
    /// Comma-separated sequence names [default: every sequence under --gt].
    #[arg(long, value_delimiter = ',')]
    pub sequences: Vec<String>,
    /// Evaluation TOML: class map, ignore set, thresholds.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Text report path; the JSON report is written next to it.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Only combine two scores: prints sqrt(S_cls * S_assoc).
    #[arg(long, num_args = 2, value_names = ["S_ASSOC", "S_CLS"])]
    pub combine: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene TOML; without it a default scene is built from the flags below.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub objects: usize,
    #[arg(long, default_value_t = 20)]
    pub scans: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset root to write into.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "00")]
    pub sequence: String,
    /// TOML list of `[[corruption]]` tables; the result is written to `predictions/`.
    #[arg(long)]
    pub corruption: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

/// Exit status: 1 validation, 2 io, 3 internal invariant.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::MissingFile(_) => 2,
        Error::Invariant(_) => 3,
        _ => 1,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::CheckGradients(a) => cmd_check_gradients(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Merges flags over the file configuration.
pub fn resolve_run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($src:expr, $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(a.strategy, c.volume.strategy);
    set!(a.tau, c.volume.tau);
    set!(a.fraction, c.volume.fraction);
    set!(a.stride, c.volume.stride);
    set!(a.time_scale, c.volume.time_scale);
    set!(a.feature_mode, c.cluster.feature_mode);
    set!(a.spatial_variance, c.cluster.coord_variances.spatial);
    set!(a.temporal_variance, c.cluster.coord_variances.temporal);
    set!(a.assign_prob, c.cluster.assign_prob);
    set!(a.min_points, c.cluster.min_points);
    set!(a.iou_threshold, c.iou_threshold);
    set!(a.seed, c.seed);
    set!(a.threads, c.threads);
    if a.data.is_some() {
        c.io.data = a.data.clone();
    }
    if a.out.is_some() {
        c.io.out = a.out.clone();
    }
    if a.semantics.is_some() {
        c.io.semantics = a.semantics.clone();
    }
    if a.classes.is_some() {
        c.io.classes = a.classes.clone();
    }
    if !a.sequences.is_empty() {
        c.io.sequences = a.sequences.clone();
    }
    c.validate()?;
    Ok(c)
}

/// Reads one scan of a sequence as pipeline input: world coordinates from the
/// pose, semantics from `semantics/`, fields from the sidecar.
pub fn load_scan_input(seq: &SequenceHandle, semantics: &str, t: usize) -> Result<ScanInput> {
    let scan = seq.scan(t)?;
    let coords = align_scan(&scan, &seq.pose(t)?)?;
    let labels = seq.labels_in(semantics, t)?;
    if labels.len() != scan.len() {
        return Err(Error::LengthMismatch {
            expected: scan.len(),
            found: labels.len(),
        });
    }
    Ok(ScanInput {
        scan_index: t - seq.range().start,
        coords,
        semantic: labels.semantic,
        fields: seq.fields(t)?,
    })
}

fn run_sequence(config: &RunConfig, classes: &ClassMap, name: &str) -> Result<String> {
    let data = config.io.data.as_deref().expect("validated");
    let out = config.io.out.as_deref().expect("validated");
    let seq = load_sequence(sequence_dir(data, name), None)?;
    let semantics = config.io.semantics.as_deref().unwrap_or("labels");
    let start = seq.range().start;
    let result = run_online_pipeline(
        seq.len(),
        |t| load_scan_input(&seq, semantics, start + t),
        |c| classes.is_thing_raw(c),
        &config.pipeline(),
    )?;
    let dir = out.join(name).join("predictions");
    for (t, labels) in result.labels.iter().enumerate() {
        write_labels(labels, dir.join(scan_file_name(start + t, "label")))?;
    }
    let s = &result.stats;
    Ok(format!(
        "sequence {name}: {} scans in {:.3} s, peak volume {} points (peak scan {}), {} ids -> {}",
        s.scans,
        s.elapsed.as_secs_f64(),
        s.peak_volume_points,
        s.peak_scan_points,
        s.global_ids_issued,
        dir.display()
    ))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let config = resolve_run_config(&a)?;
    let classes = config.class_map()?;
    let started = Instant::now();
    let lines: Vec<String> = with_threads(config.threads, || {
        config
            .io
            .sequences
            .par_iter()
            .map(|s| run_sequence(&config, &classes, s))
            .collect::<Result<Vec<_>>>()
    })??;
    for l in lines {
        println!("{l}");
    }
    println!("total {:.3} s", started.elapsed().as_secs_f64());
    Ok(())
}

/// Sequence directories under `root` (or `root/sequences`) that hold labels.
pub fn discover_sequences(root: &Path) -> Result<Vec<String>> {
    let base = if root.join("sequences").is_dir() {
        root.join("sequences")
    } else {
        root.to_path_buf()
    };
    let entries = fs::read_dir(&base).map_err(|e| Error::io(&base, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("labels").is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::MissingFile(base.join("<seq>/labels")));
    }
    Ok(names)
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    if let Some(v) = &a.combine {
        let (s_assoc, s_cls) = (v[0], v[1]);
        for (name, x) in [("S_assoc", s_assoc), ("S_cls", s_cls)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {x}")));
            }
        }
        println!("LSTQ = {:.4}", metrics::lstq(s_cls, s_assoc));
        return Ok(());
    }
    let gt = a.gt.as_deref().expect("clap enforces --gt");
    let pred = a.pred.as_deref().expect("clap enforces --pred");
    let config = match &a.config {
        Some(p) => EvalConfig::load(p)?,
        None => EvalConfig::default(),
    };
    let sequences = if a.sequences.is_empty() {
        discover_sequences(gt)?
    } else {
        a.sequences.clone()
    };
    let report = with_threads(a.threads, || evaluate_dirs(gt, pred, &sequences, &config))??;
    print!("{}", report.to_text());
    if let Some(path) = &a.report {
        let (text, json) = report.write(path)?;
        println!("report: {}", text.display());
        println!("report: {}", json.display());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorruptionFile {
    #[serde(default, rename = "corruption")]
    corruptions: Vec<Corruption>,
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SceneSpec::load(p)?,
        None => SceneSpec::with_objects(a.objects, a.scans, a.seed.unwrap_or(0)),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let classes = ClassMap::default();
    let seq = generate_sequence(&spec, &classes)?;
    let dir = a.out.join(&a.sequence);
    seq.write(&dir)?;
    println!("wrote {} scans to {}", seq.len(), dir.display());
    if let Some(p) = &a.corruption {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let file: CorruptionFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let mut pred = seq.labels.clone();
        for c in &file.corruptions {
            pred = corrupt(&pred, c, &classes)?;
        }
        let pdir = dir.join("predictions");
        for (t, l) in pred.iter().enumerate() {
            write_labels(l, pdir.join(scan_file_name(t, "label")))?;
        }
        println!("wrote {} corrupted label files to {}", pred.len(), pdir.display());
    }
    Ok(())
}

fn cmd_check_gradients(a: GradArgs) -> Result<()> {
    if a.trials == 0 || !(a.step.is_finite() && a.step > 0.0) || !(a.tolerance.is_finite() && a.tolerance > 0.0) {
        return Err(Error::Config("trials, step and tolerance must be positive".into()));
    }
    let rows = gradcheck::check_all(a.seed, a.trials, a.step, a.tolerance);
    println!("{:<24} {:>7} {:>14} {:>10}  result", "loss", "trials", "worst rel err", "tolerance");
    for r in &rows {
        println!(
            "{:<24} {:>7} {:>14.3e} {:>10.1e}  {}",
            r.loss,
            r.trials,
            r.worst_relative_error,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    if rows.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Error::Invariant("analytic gradients disagree with finite differences".into()))
    }
}

fn histogram(values: impl Iterator<Item = u32>) -> BTreeMap<u32, usize> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_default() += 1;
    }
    h
}

fn format_histogram(h: &BTreeMap<u32, usize>, classes: Option<&ClassMap>) -> String {
    h.iter()
        .map(|(k, n)| match classes {
            Some(cm) => match cm.to_eval(*k) {
                Ok(id) => format!("{k}({}):{n}", cm.name(id)),
                Err(_) => format!("{k}(?):{n}"),
            },
            None => format!("{k}:{n}"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn describe_labels(l: &crate::kitti_io::PanopticLabels, cm: &ClassMap) -> String {
    let classes = histogram(l.semantic.iter().copied());
    let ids = histogram(l.instance.iter().copied().filter(|v| *v != 0));
    format!(
        "{} labels\n  classes: {}\n  ids: {}",
        l.len(),
        format_histogram(&classes, Some(cm)),
        format_histogram(&ids, None)
    )
}

/// Human-readable summary of one path.
pub fn inspect(path: &Path) -> Result<String> {
    let cm = ClassMap::default();
    if path.is_dir() {
        let seq = load_sequence(path, None)?;
        let mut s = format!("sequence {}: {} scans\n", path.display(), seq.len());
        let poses = seq.poses().map(|p| p.len());
        s += &format!("  poses: {}\n", poses.map_or_else(|e| format!("unavailable ({e})"), |n| n.to_string()));
        for sub in ["labels", "predictions"] {
            if !path.join(sub).is_dir() {
                continue;
            }
            let mut classes = BTreeMap::new();
            let mut ids = BTreeMap::new();
            for t in seq.range() {
                let l = seq.labels_in(sub, t)?;
                for c in &l.semantic {
                    *classes.entry(*c).or_default() += 1;
                }
                for i in l.instance.iter().filter(|v| **v != 0) {
                    *ids.entry(*i).or_default() += 1;
                }
            }
            s += &format!("  {sub} classes: {}\n", format_histogram(&classes, Some(&cm)));
            s += &format!("  {sub} ids: {}\n", format_histogram(&ids, None));
        }
        if seq.has_scans() {
            let total: usize = seq.range().map(|t| seq.scan(t).map(|x| x.len())).sum::<Result<usize>>()?;
            s += &format!("  points: {total}\n");
        }
        return Ok(s);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => {
            let scan = read_point_scan(path)?;
            let mut lo = [f32::INFINITY; 3];
            let mut hi = [f32::NEG_INFINITY; 3];
            for p in &scan.points {
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            Ok(format!("{}: {} points, bounds {lo:?} .. {hi:?}", path.display(), scan.len()))
        }
        Some("label") => Ok(format!("{}: {}", path.display(), describe_labels(&read_labels_unchecked(path)?, &cm))),
        Some("p4de") => {
            let f = read_sidecar(path)?;
            let (lo, hi) = f
                .objectness
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), o| (a.min(*o), b.max(*o)));
            Ok(format!(
                "{}: {} points, embedding dim {}, objectness {lo} .. {hi}",
                path.display(),
                f.len(),
                f.dim
            ))
        }
        _ => Err(Error::Format(format!("cannot inspect {}", path.display()))),
    }
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    for p in &a.paths {
        println!("{}", inspect(p)?);
    }
    Ok(())
}
