//! Run configuration, per-seed benchmark runs, run comparison and plot data.
//!
//! A run directory holds:
//!
//! ```text
//! config.toml      resolved configuration
//! manifest.json    schema version and content hashes of the inputs
//! metrics.csv      seed,mota,motp,miss,mismatch,fp
//! summary.json     per-seed reports and means
//! seed_<s>/        truth.jsonl, tracks.jsonl, metrics.json, events.json, loglr.csv (grid)
//! ```

pub mod suites;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid_tracker::{pixel_likelihood, GridParams, GridTracker};
use crate::io::{read_frames_file, write_frames_file, TrackFrame, TrackRecord};
use crate::metrics::{evaluate, MetricsReport};
use crate::rfs::{DetectionMode, RfsTracker, TrackerParams};
use crate::sim::grid::cell_size_for;
use crate::sim::replay::{read_log, write_box_frame, write_grid_frame, ReplayFrame};
use crate::sim::scenario::{Scenario, Simulation};
use crate::sim::{to_occupancy_grid, ImageSize, ProbabilityMap, RawDetection};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerKind {
    Uncertainty,
    Baseline,
    Grid,
}

impl std::str::FromStr for TrackerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncertainty" => Ok(TrackerKind::Uncertainty),
            "baseline" => Ok(TrackerKind::Baseline),
            "grid" => Ok(TrackerKind::Grid),
            _ => Err(Error::Config(format!("unknown tracker `{s}` (uncertainty, baseline or grid)"))),
        }
    }
}

/// Grid geometry of replayed probability maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario JSON file.
    pub scenario: Option<PathBuf>,
    /// Built-in scenario suite (`ood` or `clean`).
    pub suite: Option<String>,
    /// Replay log of detector outputs.
    pub replay: Option<PathBuf>,
    /// Ground truth for a replay log.
    pub truth: Option<PathBuf>,
    pub replay_image: ImageSize,
    pub replay_grid: Option<ReplayGrid>,
    pub tracker: TrackerKind,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub rfs: TrackerParams,
    pub grid: GridParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: None,
            suite: None,
            replay: None,
            truth: None,
            replay_image: ImageSize::default(),
            replay_grid: None,
            tracker: TrackerKind::Uncertainty,
            seeds: vec![0],
            out: PathBuf::from("runs/latest"),
            rfs: TrackerParams::default(),
            grid: GridParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file; relative input paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.scenario, &mut c.replay, &mut c.truth].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let sources = [self.scenario.is_some(), self.suite.is_some(), self.replay.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(Error::Config("give exactly one of `scenario`, `suite` or `replay`".into()));
        }
        if let Some(s) = &self.suite {
            if suites::by_name(s).is_none() {
                return Err(Error::Config(format!("unknown suite `{s}`")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        match self.tracker {
            TrackerKind::Grid => self.grid.validate(),
            _ => self.rfs.validate(),
        }
    }
}

/// Git blob hash: sha256 over `"blob <len>\0" + content`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub name: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub tracker: TrackerKind,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    /// Hashes of the scenario or replay inputs.
    pub inputs: Vec<InputHash>,
}

/// Per-frame anomalies of one seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedEvents {
    pub degenerate_frames: Vec<usize>,
    pub frame_errors: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Option<MetricsReport>,
    pub events: SeedEvents,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub mota: f64,
    pub motp: f64,
    pub miss: f64,
    pub mismatch: f64,
    pub fp: f64,
}

impl MetricMeans {
    fn of(reports: &[&MetricsReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(MetricMeans {
            mota: mean(|r| r.mota),
            motp: mean(|r| r.motp),
            miss: mean(|r| r.miss),
            mismatch: mean(|r| r.mismatch),
            fp: mean(|r| r.fp),
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Mota => self.mota,
            Metric::Motp => self.motp,
            Metric::Miss => self.miss,
            Metric::Mismatch => self.mismatch,
            Metric::Fp => self.fp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub schema_version: u32,
    pub tracker: TrackerKind,
    pub input_hash: String,
    pub seeds: Vec<SeedResult>,
    pub mean: Option<MetricMeans>,
}

/// Input of one seed's run.
enum Source {
    Scenario(Scenario),
    Replay { frames: Vec<ReplayFrame>, truth: Option<Vec<TrackFrame>> },
}

fn load_source(cfg: &RunConfig) -> Result<(Source, Vec<InputHash>)> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())));
    if let Some(name) = &cfg.suite {
        let s = suites::by_name(name).ok_or_else(|| Error::Config(format!("unknown suite `{name}`")))?;
        let text = serde_json::to_vec(&s)?;
        return Ok((Source::Scenario(s), vec![InputHash { name: format!("suite:{name}"), hash: content_hash(&text) }]));
    }
    if let Some(p) = &cfg.scenario {
        let bytes = read(p)?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
        let s = Scenario::from_json(&text)?;
        return Ok((Source::Scenario(s), vec![InputHash { name: file_name(p), hash: content_hash(&bytes) }]));
    }
    let p = cfg.replay.as_ref().ok_or_else(|| Error::Config("no input selected".into()))?;
    let bytes = read(p)?;
    let frames = read_log(bytes.as_slice())?;
    let mut hashes = vec![InputHash { name: file_name(p), hash: content_hash(&bytes) }];
    let truth = match &cfg.truth {
        Some(t) => {
            hashes.push(InputHash { name: file_name(t), hash: content_hash(&read(t)?) });
            Some(read_frames_file(t)?)
        }
        None => None,
    };
    Ok((Source::Replay { frames, truth }, hashes))
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Ground truth of a simulated scenario in the track format.
pub fn truth_frames(sim: &Simulation) -> Vec<TrackFrame> {
    sim.frames()
        .iter()
        .map(|f| TrackFrame {
            frame: f.frame,
            tracks: f.objects.iter().map(|o| TrackRecord { label: o.id, bbox: o.bbox.to_array(), cov_diag: vec![] }).collect(),
        })
        .collect()
}

/// Tracker output of one seed.
pub struct TrackOutput {
    pub frames: Vec<TrackFrame>,
    /// `(frame, label, log LR)` rows; grid tracker only.
    pub log_lrs: Vec<(usize, u64, f64)>,
    pub events: SeedEvents,
}

/// Frame-indexed detector inputs for the box trackers.
pub trait BoxInput {
    fn frames(&self) -> usize;
    fn detections(&self, frame: usize) -> Result<Vec<RawDetection>>;
}

/// Frame-indexed probability maps for the grid tracker.
pub trait GridInput {
    fn frames(&self) -> usize;
    fn map(&self, frame: usize) -> Result<ProbabilityMap>;
}

impl BoxInput for Simulation<'_> {
    fn frames(&self) -> usize {
        Simulation::frames(self).len()
    }
    fn detections(&self, frame: usize) -> Result<Vec<RawDetection>> {
        Ok(self.raw_detections(frame))
    }
}

impl GridInput for Simulation<'_> {
    fn frames(&self) -> usize {
        Simulation::frames(self).len()
    }
    fn map(&self, frame: usize) -> Result<ProbabilityMap> {
        Ok(self.probability_map(frame))
    }
}

struct ReplayInput<'a> {
    frames: &'a [ReplayFrame],
    grid: Option<&'a ReplayGrid>,
}

impl ReplayInput<'_> {
    fn count(&self) -> usize {
        self.frames.iter().map(|f| f.frame() + 1).max().unwrap_or(0)
    }
    fn find(&self, frame: usize) -> Option<&ReplayFrame> {
        self.frames.iter().find(|f| f.frame() == frame)
    }
}

impl BoxInput for ReplayInput<'_> {
    fn frames(&self) -> usize {
        self.count()
    }
    fn detections(&self, frame: usize) -> Result<Vec<RawDetection>> {
        match self.find(frame) {
            Some(ReplayFrame::Boxes { detections, .. }) => Ok(detections.clone()),
            Some(ReplayFrame::Grid { .. }) => Err(Error::Data(format!("frame {frame}: expected detections, found a p_map"))),
            None => Ok(Vec::new()),
        }
    }
}

impl GridInput for ReplayInput<'_> {
    fn frames(&self) -> usize {
        self.count()
    }
    fn map(&self, frame: usize) -> Result<ProbabilityMap> {
        let g = self.grid.ok_or_else(|| Error::Config("replaying p_maps needs `replay_grid`".into()))?;
        match self.find(frame) {
            Some(ReplayFrame::Grid { p_map, .. }) => {
                if p_map.len() != g.width * g.height {
                    return Err(Error::Data(format!("frame {frame}: p_map has {} cells, expected {}", p_map.len(), g.width * g.height)));
                }
                Ok(ProbabilityMap { width: g.width, height: g.height, cell_size: g.cell_size, p: p_map.clone() })
            }
            Some(ReplayFrame::Boxes { .. }) => Err(Error::Data(format!("frame {frame}: expected a p_map, found detections"))),
            None => Err(Error::Data(format!("frame {frame}: missing from the replay log"))),
        }
    }
}

/// Runs a box tracker over every frame. Frame errors are recorded and the
/// frame's output is left empty.
pub fn track_boxes(
    input: &dyn BoxInput,
    params: &TrackerParams,
    mode: DetectionMode,
    image: ImageSize,
    clutter_size: [f64; 2],
    seed: u64,
) -> Result<TrackOutput> {
    let mut tracker = RfsTracker::new(params.clone(), mode, params.box_model(image, clutter_size), seed)?;
    let mut frames = Vec::with_capacity(input.frames());
    let mut events = SeedEvents::default();
    for k in 0..input.frames() {
        match input.detections(k).and_then(|d| tracker.process(k, &d)) {
            Ok(r) => {
                if r.degenerate {
                    events.degenerate_frames.push(k);
                }
                frames.push(r.frame.to_record(k));
            }
            Err(e) => {
                events.frame_errors.push((k, e.to_string()));
                frames.push(TrackFrame { frame: k, tracks: vec![] });
            }
        }
    }
    Ok(TrackOutput { frames, log_lrs: Vec::new(), events })
}

/// Runs the grid tracker over every frame.
pub fn track_grid(input: &dyn GridInput, params: &GridParams, seed: u64) -> Result<TrackOutput> {
    let mut tracker = GridTracker::new(params.clone(), seed)?;
    let mut frames = Vec::with_capacity(input.frames());
    let mut log_lrs = Vec::new();
    let mut events = SeedEvents::default();
    for k in 0..input.frames() {
        match input.map(k).and_then(|m| to_occupancy_grid(&m)).and_then(|g| tracker.process(k, &g)) {
            Ok(r) => {
                if !r.degenerate.is_empty() {
                    events.degenerate_frames.push(k);
                }
                for (l, e) in r.errors {
                    events.frame_errors.push((k, format!("track {l}: {e}")));
                }
                log_lrs.extend(r.log_lrs.into_iter().map(|(l, v)| (k, l, v)));
                frames.push(r.output);
            }
            Err(e) => {
                events.frame_errors.push((k, e.to_string()));
                frames.push(TrackFrame { frame: k, tracks: vec![] });
            }
        }
    }
    Ok(TrackOutput { frames, log_lrs, events })
}

fn run_tracker(cfg: &RunConfig, source: &Source, seed: u64) -> Result<(TrackOutput, Option<Vec<TrackFrame>>)> {
    match source {
        Source::Scenario(s) => {
            let sim = Simulation::new(s, seed);
            let out = match cfg.tracker {
                TrackerKind::Grid => track_grid(&sim, &cfg.grid, seed)?,
                TrackerKind::Uncertainty => track_boxes(
                    &sim,
                    &cfg.rfs,
                    DetectionMode::Uncertainty { box_jitter: s.detector.box_jitter },
                    s.image,
                    s.detector.clutter_size,
                    seed,
                )?,
                TrackerKind::Baseline => track_boxes(
                    &sim,
                    &cfg.rfs,
                    DetectionMode::Baseline { threshold: cfg.rfs.threshold },
                    s.image,
                    s.detector.clutter_size,
                    seed,
                )?,
            };
            Ok((out, Some(truth_frames(&sim))))
        }
        Source::Replay { frames, truth } => {
            let input = ReplayInput { frames, grid: cfg.replay_grid.as_ref() };
            let clutter = crate::sim::DetectorModel::default().clutter_size;
            let out = match cfg.tracker {
                TrackerKind::Grid => track_grid(&input, &cfg.grid, seed)?,
                TrackerKind::Uncertainty => {
                    let jitter = crate::sim::DetectorModel::default().box_jitter;
                    track_boxes(&input, &cfg.rfs, DetectionMode::Uncertainty { box_jitter: jitter }, cfg.replay_image, clutter, seed)?
                }
                TrackerKind::Baseline => track_boxes(
                    &input,
                    &cfg.rfs,
                    DetectionMode::Baseline { threshold: cfg.rfs.threshold },
                    cfg.replay_image,
                    clutter,
                    seed,
                )?,
            };
            Ok((out, truth.clone()))
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn to_json_pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn log_lr_csv(rows: &[(usize, u64, f64)]) -> String {
    let mut s = String::from("frame,label,log_lr\n");
    for (f, l, v) in rows {
        let _ = writeln!(s, "{f},{l},{v}");
    }
    s
}

fn run_seed(cfg: &RunConfig, source: &Source, seed: u64, dir: &Path, score: bool) -> Result<SeedResult> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (out, truth) = run_tracker(cfg, source, seed)?;
    write_frames_file(&dir.join("tracks.jsonl"), &out.frames)?;
    if cfg.tracker == TrackerKind::Grid {
        write(&dir.join("loglr.csv"), log_lr_csv(&out.log_lrs))?;
    }
    let metrics = match truth.as_ref().filter(|_| score) {
        Some(t) => {
            write_frames_file(&dir.join("truth.jsonl"), t)?;
            let m = evaluate(&out.frames, t)?;
            write(&dir.join("metrics.json"), to_json_pretty(&m)?)?;
            Some(m)
        }
        None => None,
    };
    write(&dir.join("events.json"), to_json_pretty(&out.events)?)?;
    Ok(SeedResult { seed, metrics, events: out.events })
}

fn write_header(cfg: &RunConfig, inputs: &[InputHash]) -> Result<()> {
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_text = cfg.to_toml()?;
    write(&out.join("config.toml"), &config_text)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        tracker: cfg.tracker,
        seeds: cfg.seeds.clone(),
        config_hash: content_hash(config_text.as_bytes()),
        inputs: inputs.to_vec(),
    };
    write(&out.join("manifest.json"), to_json_pretty(&manifest)?)
}

/// Runs the tracker on every seed without scoring: `seed_<s>/tracks.jsonl`
/// plus events (and log LR traces for the grid tracker).
pub fn track(cfg: &RunConfig) -> Result<Vec<SeedResult>> {
    cfg.validate()?;
    let (source, inputs) = load_source(cfg)?;
    write_header(cfg, &inputs)?;
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, &source, s, &cfg.out.join(format!("seed_{s}")), false)).collect()
}

/// Writes each seed's ground truth and detector outputs as replay logs, plus
/// `replay_<s>.toml`, a config that tracks the logged detections.
///
/// Box detections go to `detections.jsonl`; probability maps
/// (`p_maps.jsonl`) are written only when the grid tracker is selected.
pub fn simulate(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let (source, inputs) = load_source(cfg)?;
    let Source::Scenario(scenario) = &source else {
        return Err(Error::Config("simulate needs `scenario` or `suite`, not `replay`".into()));
    };
    write_header(cfg, &inputs)?;
    cfg.seeds.par_iter().map(|&seed| simulate_seed(cfg, scenario, seed)).collect()
}

fn simulate_seed(cfg: &RunConfig, scenario: &Scenario, seed: u64) -> Result<()> {
    let name = format!("seed_{seed}");
    let dir = cfg.out.join(&name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let sim = Simulation::new(scenario, seed);
    write_frames_file(&dir.join("truth.jsonl"), &truth_frames(&sim))?;
    let grid = cfg.tracker == TrackerKind::Grid;
    let log = if grid { "p_maps.jsonl" } else { "detections.jsonl" };
    let mut buf = Vec::new();
    for k in 0..sim.frames().len() {
        if grid {
            write_grid_frame(&mut buf, k, &sim.probability_map(k))?;
        } else {
            write_box_frame(&mut buf, k, &sim.raw_detections(k))?;
        }
    }
    write(&dir.join(log), buf)?;
    let dims = scenario.detector.grid;
    let replay = RunConfig {
        scenario: None,
        suite: None,
        replay: Some(PathBuf::from(format!("{name}/{log}"))),
        truth: Some(PathBuf::from(format!("{name}/truth.jsonl"))),
        replay_image: scenario.image,
        replay_grid: grid.then(|| ReplayGrid { width: dims.cells_w, height: dims.cells_h, cell_size: cell_size_for(scenario.image, dims) }),
        seeds: vec![seed],
        out: PathBuf::from(format!("replay_{seed}")),
        ..cfg.clone()
    };
    write(&cfg.out.join(format!("replay_{seed}.toml")), replay.to_toml()?)
}

/// Scores one tracker output against ground truth.
pub fn evaluate_files(tracks: &Path, truth: &Path) -> Result<MetricsReport> {
    evaluate(&read_frames_file(tracks)?, &read_frames_file(truth)?)
}

/// Runs every seed (in parallel) and writes the run directory.
pub fn run(cfg: &RunConfig) -> Result<BenchmarkSummary> {
    cfg.validate()?;
    let (source, inputs) = load_source(cfg)?;
    let out = &cfg.out;
    write_header(cfg, &inputs)?;

    let results: Vec<Result<SeedResult>> =
        cfg.seeds.par_iter().map(|&s| run_seed(cfg, &source, s, &out.join(format!("seed_{s}")), true)).collect();
    let seeds = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut csv = format!("{}\n", MetricsReport::CSV_HEADER);
    for r in &seeds {
        if let Some(m) = &r.metrics {
            csv.push_str(&m.csv_row(r.seed));
            csv.push('\n');
        }
    }
    write(&out.join("metrics.csv"), csv)?;
    let reports: Vec<&MetricsReport> = seeds.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let input_hash = content_hash(inputs.iter().map(|i| i.hash.as_str()).collect::<Vec<_>>().join("\n").as_bytes());
    let summary =
        BenchmarkSummary { schema_version: SCHEMA_VERSION, tracker: cfg.tracker, input_hash, mean: MetricMeans::of(&reports), seeds };
    write(&out.join("summary.json"), to_json_pretty(&summary)?)?;
    Ok(summary)
}

pub fn load_summary(dir: &Path) -> Result<BenchmarkSummary> {
    let p = dir.join("summary.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
    let s: BenchmarkSummary = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
    if s.schema_version != SCHEMA_VERSION {
        return Err(Error::Data(format!("{}: schema version {} is not {SCHEMA_VERSION}", p.display(), s.schema_version)));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mota,
    Motp,
    Miss,
    Mismatch,
    Fp,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Mota, Metric::Motp, Metric::Miss, Metric::Mismatch, Metric::Fp];

    fn of(self, r: &MetricsReport) -> f64 {
        match self {
            Metric::Mota => r.mota,
            Metric::Motp => r.motp,
            Metric::Miss => r.miss,
            Metric::Mismatch => r.mismatch,
            Metric::Fp => r.fp,
        }
    }

    /// Whether larger values are better. MOTP (mean `1 - IoU`) is an error
    /// unless `motp_higher_is_better` flips it.
    pub fn higher_is_better(self, motp_higher_is_better: bool) -> bool {
        match self {
            Metric::Mota => true,
            Metric::Motp => motp_higher_is_better,
            _ => false,
        }
    }
}

/// Relative improvement of `ours` over `reference`; positive is better.
/// `None` when the reference is zero and the values differ.
pub fn improvement(ours: f64, reference: f64, higher_is_better: bool) -> Option<f64> {
    if ours == reference {
        return Some(0.0);
    }
    if reference == 0.0 {
        return None;
    }
    let d = if higher_is_better { ours - reference } else { reference - ours };
    Some(d / reference.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: Metric,
    pub higher_is_better: bool,
    pub ours: f64,
    pub reference: f64,
    pub improvement: Option<f64>,
    /// `ours - reference` per seed.
    pub paired_diffs: Vec<f64>,
    pub seeds_better: usize,
    pub seeds_worse: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub metrics: Vec<MetricComparison>,
}

/// Compares run `ours` against run `reference` seed by seed.
pub fn compare(ours: &BenchmarkSummary, reference: &BenchmarkSummary, motp_higher_is_better: bool) -> Result<Comparison> {
    let seeds: Vec<u64> = ours.seeds.iter().map(|s| s.seed).collect();
    let ref_seeds: Vec<u64> = reference.seeds.iter().map(|s| s.seed).collect();
    if seeds != ref_seeds {
        return Err(Error::Data(format!("seed lists differ: {seeds:?} vs {ref_seeds:?}")));
    }
    if ours.input_hash != reference.input_hash {
        return Err(Error::Data("runs were made on different inputs".into()));
    }
    let pairs: Vec<(&MetricsReport, &MetricsReport)> = ours
        .seeds
        .iter()
        .zip(&reference.seeds)
        .map(|(a, b)| match (&a.metrics, &b.metrics) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => Err(Error::Data(format!("seed {} has no metrics", a.seed))),
        })
        .collect::<Result<_>>()?;
    let n = pairs.len() as f64;
    let metrics = Metric::ALL
        .iter()
        .map(|&m| {
            let hib = m.higher_is_better(motp_higher_is_better);
            let diffs: Vec<f64> = pairs.iter().map(|(a, b)| m.of(a) - m.of(b)).collect();
            let o = pairs.iter().map(|(a, _)| m.of(a)).sum::<f64>() / n;
            let r = pairs.iter().map(|(_, b)| m.of(b)).sum::<f64>() / n;
            let better = diffs.iter().filter(|d| if hib { **d > 0.0 } else { **d < 0.0 }).count();
            let worse = diffs.iter().filter(|d| if hib { **d < 0.0 } else { **d > 0.0 }).count();
            MetricComparison {
                metric: m,
                higher_is_better: hib,
                ours: o,
                reference: r,
                improvement: improvement(o, r, hib),
                paired_diffs: diffs,
                seeds_better: better,
                seeds_worse: worse,
            }
        })
        .collect();
    Ok(Comparison { seeds, metrics })
}

/// Compares two run directories and writes `comparison.json` into `out`.
pub fn compare_dirs(ours: &Path, reference: &Path, motp_higher_is_better: bool, out: Option<&Path>) -> Result<Comparison> {
    let c = compare(&load_summary(ours)?, &load_summary(reference)?, motp_higher_is_better)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("comparison.json"), to_json_pretty(&c)?)?;
    }
    Ok(c)
}

/// Uncertainty levels of the likelihood curves.
pub const CURVE_U: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// `d,u=0,...,u=1` rows of `p(o=1, u | d)` for `d` in cells.
pub fn likelihood_curves(params: &GridParams, d_max: f64, steps: usize) -> Result<String> {
    let mut s = String::from("d");
    for u in CURVE_U {
        let _ = write!(s, ",u={u}");
    }
    s.push('\n');
    for i in 0..=steps {
        let d = d_max * i as f64 / steps as f64;
        let _ = write!(s, "{d}");
        for u in CURVE_U {
            let _ = write!(s, ",{}", pixel_likelihood(true, u, d, params)?);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Writes plot series into `<run_dir>/plot/`: likelihood curves, per-frame
/// track counts and (grid runs) log LR traces.
pub fn emit_plot_data(run_dir: &Path) -> Result<PathBuf> {
    let cfg_path = run_dir.join("config.toml");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::Data(format!("{}: {e}", cfg_path.display())))?;
    let cfg = RunConfig::from_toml(&text)?;
    let summary = load_summary(run_dir)?;
    let plot = run_dir.join("plot");
    std::fs::create_dir_all(&plot).map_err(|e| Error::io(&plot, e))?;
    write(&plot.join("likelihood.csv"), likelihood_curves(&cfg.grid, 6.0, 120)?)?;

    let mut counts = String::from("seed,frame,tracks\n");
    let mut traces = String::from("seed,frame,label,log_lr\n");
    for s in &summary.seeds {
        let dir = run_dir.join(format!("seed_{}", s.seed));
        for f in read_frames_file(&dir.join("tracks.jsonl"))? {
            let _ = writeln!(counts, "{},{},{}", s.seed, f.frame, f.tracks.len());
        }
        if summary.tracker == TrackerKind::Grid {
            let p = dir.join("loglr.csv");
            let body = std::fs::read_to_string(&p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            for line in body.lines().skip(1) {
                let _ = writeln!(traces, "{},{line}", s.seed);
            }
        }
    }
    write(&plot.join("track_counts.csv"), counts)?;
    if summary.tracker == TrackerKind::Grid {
        write(&plot.join("loglr.csv"), traces)?;
    }
    Ok(plot)
}
