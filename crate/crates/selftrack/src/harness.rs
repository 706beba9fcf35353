//! Run configuration and the experiment commands behind the CLI: training,
//! evaluation, the with/without-track-query conflict check, parameter
//! sweeps, profiling and dataset export.
//!
//! Every command writes into its output directory and finishes with a
//! `manifest.json` listing the files it produced. Wall-clock figures only
//! appear in manifests and profiles, so metric files are reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{coco_ap, gt_to_mot_csv, ApReport, MetricsReport};
use crate::model::{Model, ModelConfig};
use crate::synth::{DatasetSpec, Video};
use crate::tracker::{
    evaluate_videos, run_video, InferenceOptions, ProposalSource, TrackerConfig,
};
use crate::training::{train, Recipe, TrainConfig, TrainOutcome};

pub const RUN_FILE: &str = "run.json";
pub const TEACHER_DIR: &str = "teacher";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    Train,
    Eval,
    Conflict,
    Sweep,
    Profile,
    GenData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    CProp,
    DetectDecoderDepth,
    ProposalSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    /// Values as text: numbers for `c_prop` and depths, source names for
    /// `proposal_source`.
    pub values: Vec<String>,
}

/// Everything a command needs. `seed` overrides the model and training
/// seeds; the optional fields override the matching model settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub data: DatasetSpec,
    /// Checkpoint read by `eval`, `conflict`, `profile` and the depth sweep.
    pub checkpoint: Option<PathBuf>,
    /// Frozen detector for recipes and sources that need one.
    pub teacher: Option<PathBuf>,
    pub disable_track_queries_at_inference: bool,
    pub proposal_source: Option<ProposalSource>,
    pub c_prop: Option<f64>,
    pub detect_depth: Option<usize>,
    pub track_depth: Option<usize>,
    pub sweep: Option<SweepSpec>,
    pub profile_frames: usize,
    /// Worker threads for sweeps.
    pub threads: usize,
    pub dry_run: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Train,
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            tracker: TrackerConfig::default(),
            data: DatasetSpec::default(),
            checkpoint: None,
            teacher: None,
            disable_track_queries_at_inference: false,
            proposal_source: None,
            c_prop: None,
            detect_depth: None,
            track_depth: None,
            sweep: None,
            profile_frames: 100,
            threads: 1,
            dry_run: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain config")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json())
    }

    /// Model configuration with the seed and overrides applied.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.seed = self.seed;
        if let Some(c) = self.c_prop {
            m.c_prop = c;
        }
        if let Some(d) = self.detect_depth {
            m.detect_depth = d;
        }
        if let Some(d) = self.track_depth {
            m.track_depth = d;
        }
        m
    }

    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            clip_len: self.data.clip_len,
            ..self.train.clone()
        }
    }

    /// Checks the model, training, tracker and data settings.
    pub fn validate_settings(&self) -> Result<()> {
        self.effective_model().validate()?;
        self.effective_train().validate()?;
        self.tracker.validate()?;
        self.data.validate()?;
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// Checks the settings plus the files the command needs.
    pub fn validate(&self) -> Result<()> {
        self.validate_settings()?;
        match self.command {
            Command::Eval | Command::Conflict if self.checkpoint.is_none() => Err(Error::Config(
                format!("{:?} needs a checkpoint", self.command),
            )),
            Command::Train if self.train.recipe.needs_teacher() && self.teacher.is_none() => {
                Err(Error::Config(format!(
                    "recipe {:?} needs a teacher checkpoint",
                    self.train.recipe
                )))
            }
            Command::Sweep => {
                let spec = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| Error::Config("sweep needs a parameter and values".into()))?;
                if spec.values.is_empty() {
                    return Err(Error::Config("sweep has no values".into()));
                }
                if spec.param == SweepParam::DetectDecoderDepth && self.checkpoint.is_none() {
                    return Err(Error::Config("depth sweep needs a checkpoint".into()));
                }
                spec.values
                    .iter()
                    .map(|v| SweepValue::parse(spec.param, v))
                    .collect::<Result<Vec<_>>>()
                    .map(drop)
            }
            _ => Ok(()),
        }
    }
}

/// How a checkpoint was trained, stored next to its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub recipe: Recipe,
    pub proposal_source: ProposalSource,
}

/// A model plus its stored teacher, ready for inference.
pub struct LoadedModel {
    pub model: Model,
    pub info: RunInfo,
    pub teacher: Option<Model>,
}

impl LoadedModel {
    pub fn options(&self, source: Option<ProposalSource>, disable_tq: bool) -> InferenceOptions<'_> {
        InferenceOptions {
            source: source.unwrap_or(self.info.proposal_source),
            teacher: self.teacher.as_ref(),
            disable_track_queries: disable_tq,
        }
    }
}

/// Writes the model, its [`RunInfo`] and (when given) the teacher into `dir`.
pub fn save_checkpoint(dir: &Path, model: &Model, info: RunInfo, teacher: Option<&Model>) -> Result<()> {
    model.save(dir)?;
    write_json(&dir.join(RUN_FILE), &info)?;
    if let Some(t) = teacher {
        t.save(&dir.join(TEACHER_DIR))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedModel> {
    let model = Model::load(dir)?;
    let info_path = dir.join(RUN_FILE);
    let info = if info_path.exists() {
        read_json(&info_path)?
    } else {
        RunInfo {
            recipe: Recipe::Standard,
            proposal_source: ProposalSource::LearnableAnchor,
        }
    };
    let teacher_dir = dir.join(TEACHER_DIR);
    let teacher = if teacher_dir.join("model.json").exists() {
        Some(Model::load(&teacher_dir)?)
    } else {
        None
    };
    Ok(LoadedModel { model, info, teacher })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Option<Command>,
    pub files: Vec<String>,
    pub elapsed_secs: f64,
}

/// Collects the relative paths written by a command.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
    started: Instant,
}

impl Outputs {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Outputs {
            root: root.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.root.join(rel)
    }

    fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel);
        write_file(&p, text)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let p = self.path(rel);
        write_json(&p, value)
    }

    fn finish(mut self, command: Command) -> Result<()> {
        self.files.sort();
        let manifest = Manifest {
            command: Some(command),
            files: self.files,
            elapsed_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(&self.root.join("manifest.json"), &manifest)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_file(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_teacher(path: Option<&PathBuf>) -> Result<Option<Model>> {
    path.map(|p| Model::load(p)).transpose()
}

/// Result of [`cmd_train`] (and of the in-memory [`train_run`]).
pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub info: RunInfo,
    pub teacher: Option<Model>,
}

/// Trains according to `cfg` without touching the disk.
pub fn train_run(cfg: &RunConfig, teacher: Option<Model>) -> Result<TrainRun> {
    cfg.validate_settings()?;
    if cfg.train.recipe.needs_teacher() && teacher.is_none() {
        return Err(Error::Config(format!("recipe {:?} needs a teacher", cfg.train.recipe)));
    }
    let data = cfg.data.split()?;
    let model_cfg = cfg.effective_model();
    let train_cfg = cfg.effective_train();
    let outcome = train(
        &train_cfg,
        &model_cfg,
        &data.train_clips,
        &data.val_videos,
        cfg.tracker,
        teacher.as_ref(),
        |_| {},
    )?;
    let info = RunInfo {
        recipe: train_cfg.recipe,
        proposal_source: train_cfg.recipe.proposal_source(),
    };
    Ok(TrainRun { outcome, info, teacher })
}

/// Trains a detection-only model suitable as a teacher.
pub fn train_teacher(cfg: &RunConfig) -> Result<Model> {
    let mut c = cfg.clone();
    c.command = Command::Train;
    c.train.recipe = Recipe::DetPretrain;
    c.train.epochs = 0;
    c.teacher = None;
    Ok(train_run(&c, None)?.outcome.model)
}

/// Writes `config.json`, `log.jsonl`, `checkpoint/`, `metrics.json` and
/// `manifest.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Option<MetricsReport>> {
    cfg.validate()?;
    let teacher = load_teacher(cfg.teacher.as_ref())?;
    if cfg.dry_run {
        return Ok(None);
    }
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.text("config.json", &cfg.to_json())?;
    let run = train_run(cfg, teacher)?;
    let mut log = String::new();
    for rec in &run.outcome.log {
        log.push_str(&serde_json::to_string(rec).expect("plain record"));
        log.push('\n');
    }
    out.text("log.jsonl", &log)?;
    let dir = out.path(CHECKPOINT_DIR);
    save_checkpoint(&dir, &run.outcome.model, run.info, run.teacher.as_ref())?;
    if let Some(m) = &run.outcome.metrics {
        out.json("metrics.json", m)?;
    }
    out.finish(Command::Train)?;
    Ok(run.outcome.metrics)
}

/// Tracks every validation video with the checkpoint and writes per-video
/// MOT CSVs and `metrics.json`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Option<MetricsReport>> {
    cfg.validate()?;
    let ckpt = cfg.checkpoint.as_ref().expect("validated");
    let mut loaded = load_checkpoint(ckpt)?;
    apply_overrides(cfg, &mut loaded.model)?;
    if cfg.dry_run {
        return Ok(None);
    }
    let videos = cfg.data.val_videos()?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let opts = loaded.options(cfg.proposal_source, cfg.disable_track_queries_at_inference);
    let mut seqs = Vec::new();
    let mut dets = Vec::new();
    for (i, v) in videos.iter().enumerate() {
        let r = run_video(&loaded.model, &v.frames, cfg.tracker, &opts)?;
        out.text(&format!("tracks/val_{i:03}.csv"), &r.to_mot_csv())?;
        seqs.push(crate::evaluation::Sequence::from_tracking(&r, &v.gt));
        dets.extend(r.detections);
    }
    let metrics = crate::evaluation::evaluate(&seqs, &dets);
    out.json("metrics.json", &metrics)?;
    out.finish(Command::Eval)?;
    Ok(Some(metrics))
}

fn apply_overrides(cfg: &RunConfig, model: &mut Model) -> Result<()> {
    let m = model.config().clone();
    model.set_depths(
        cfg.detect_depth.unwrap_or(m.detect_depth),
        cfg.track_depth.unwrap_or(m.track_depth),
    )?;
    if let Some(c) = cfg.c_prop {
        model.set_c_prop(c)?;
    }
    Ok(())
}

/// Detection AP of the tracking pass with and without track queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub with_track_queries: ApReport,
    pub without_track_queries: ApReport,
    /// `AP(without) - AP(with)`; positive values mean track queries hurt
    /// detection.
    pub gap: f64,
}

/// Pairs the AP of normal inference with the AP when track queries are
/// dropped every frame.
pub fn conflict_report(
    model: &Model,
    videos: &[Video],
    tracker: TrackerConfig,
    opts: &InferenceOptions<'_>,
) -> Result<ConflictReport> {
    let ap = |disable: bool| -> Result<ApReport> {
        let o = InferenceOptions {
            disable_track_queries: disable,
            ..*opts
        };
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        for v in videos {
            dets.extend(run_video(model, &v.frames, tracker, &o)?.detections);
            gts.extend((0..v.len()).map(|t| v.gt.boxes(t)));
        }
        Ok(coco_ap(&dets, &gts))
    };
    let with = ap(false)?;
    let without = ap(true)?;
    Ok(ConflictReport {
        gap: without.ap - with.ap,
        with_track_queries: with,
        without_track_queries: without,
    })
}

pub fn cmd_conflict(cfg: &RunConfig) -> Result<Option<ConflictReport>> {
    cfg.validate()?;
    let mut loaded = load_checkpoint(cfg.checkpoint.as_ref().expect("validated"))?;
    apply_overrides(cfg, &mut loaded.model)?;
    if cfg.dry_run {
        return Ok(None);
    }
    let videos = cfg.data.val_videos()?;
    let opts = loaded.options(cfg.proposal_source, false);
    let report = conflict_report(&loaded.model, &videos, cfg.tracker, &opts)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.json("conflict.json", &report)?;
    out.finish(Command::Conflict)?;
    Ok(Some(report))
}

/// One parsed sweep value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SweepValue {
    CProp(f64),
    Depth(usize),
    Source(ProposalSource),
}

impl SweepValue {
    pub fn parse(param: SweepParam, text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad {param:?} value {text:?}"));
        match param {
            SweepParam::CProp => text.parse().map(SweepValue::CProp).map_err(|_| bad()),
            SweepParam::DetectDecoderDepth => text.parse().map(SweepValue::Depth).map_err(|_| bad()),
            SweepParam::ProposalSource => {
                serde_json::from_value(serde_json::Value::String(text.replace('-', "_")))
                    .map(SweepValue::Source)
                    .map_err(|_| bad())
            }
        }
    }
}

/// A row of a sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    #[serde(rename = "HOTA")]
    pub hota: f64,
    #[serde(rename = "DetA")]
    pub deta: f64,
    #[serde(rename = "AssA")]
    pub assa: f64,
    #[serde(rename = "IDF1")]
    pub idf1: f64,
    #[serde(rename = "MOTA")]
    pub mota: f64,
    #[serde(rename = "AP")]
    pub ap: f64,
    /// Detection-pass AP; only filled by the depth sweep.
    #[serde(rename = "AP_detection_pass")]
    pub ap_detection_pass: Option<f64>,
}

impl SweepRow {
    fn new(value: String, m: &MetricsReport, ap_detection_pass: Option<f64>) -> Self {
        SweepRow {
            value,
            hota: m.hota,
            deta: m.deta,
            assa: m.assa,
            idf1: m.idf1,
            mota: m.mota,
            ap: m.ap,
            ap_detection_pass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,HOTA,DetA,AssA,IDF1,MOTA,AP,AP_detection_pass\n");
        for r in &self.rows {
            let det = r.ap_detection_pass.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.value, r.hota, r.deta, r.assa, r.idf1, r.mota, r.ap, det
            );
        }
        s
    }
}

/// Recipe that trains a model for each proposal source.
pub fn recipe_for_source(source: ProposalSource) -> Recipe {
    match source {
        ProposalSource::LearnableAnchor => Recipe::Standard,
        ProposalSource::FrozenAnchor => Recipe::FrozenAnchorProposal,
        ProposalSource::SelfProposal => Recipe::SelfProposal,
    }
}

/// Detection-pass AP of `model` over `videos`.
pub fn detection_pass_ap(model: &Model, videos: &[Video]) -> Result<ApReport> {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for v in videos {
        for (t, f) in v.frames.iter().enumerate() {
            dets.push(model.detect(f)?);
            gts.push(v.gt.boxes(t));
        }
    }
    Ok(coco_ap(&dets, &gts))
}

/// Evaluates the checkpoint at every detection-pass depth in `depths`.
pub fn depth_sweep(
    loaded: &LoadedModel,
    depths: &[usize],
    videos: &[Video],
    tracker: TrackerConfig,
    source: Option<ProposalSource>,
) -> Result<SweepTable> {
    let mut rows = Vec::with_capacity(depths.len());
    for &depth in depths {
        let mut model = loaded.model.clone();
        let track = model.config().track_depth;
        model.set_depths(depth, track)?;
        let opts = loaded.options(source, false);
        let metrics = evaluate_videos(&model, videos, tracker, &opts)?;
        let det = if depth > 0 {
            Some(detection_pass_ap(&model, videos)?.ap)
        } else {
            None
        };
        rows.push(SweepRow::new(depth.to_string(), &metrics, det));
    }
    Ok(SweepTable {
        param: SweepParam::DetectDecoderDepth,
        rows,
    })
}

/// Trains one model per value, `threads` at a time, and returns rows in
/// value order.
fn training_sweep(cfg: &RunConfig, values: &[SweepValue]) -> Result<Vec<SweepRow>> {
    let needs_teacher = values
        .iter()
        .any(|v| matches!(v, SweepValue::Source(ProposalSource::FrozenAnchor)))
        || cfg.train.recipe.needs_teacher();
    let teacher = match load_teacher(cfg.teacher.as_ref())? {
        Some(t) => Some(t),
        None if needs_teacher => Some(train_teacher(cfg)?),
        None => None,
    };
    let mut rows: Vec<Option<Result<SweepRow>>> = (0..values.len()).map(|_| None).collect();
    for chunk in (0..values.len()).collect::<Vec<_>>().chunks(cfg.threads) {
        let results: Vec<(usize, Result<SweepRow>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let v = values[i];
                    let t = teacher.clone();
                    (i, s.spawn(move || sweep_point(cfg, v, t)))
                })
                .collect();
            handles
                .into_iter()
                .map(|(i, h)| (i, h.join().expect("sweep worker panicked")))
                .collect()
        });
        for (i, r) in results {
            rows[i] = Some(r);
        }
    }
    rows.into_iter().map(|r| r.expect("every point ran")).collect()
}

fn sweep_point(cfg: &RunConfig, v: SweepValue, teacher: Option<Model>) -> Result<SweepRow> {
    let mut c = cfg.clone();
    let label = match v {
        SweepValue::CProp(x) => {
            c.c_prop = Some(x);
            x.to_string()
        }
        SweepValue::Source(s) => {
            c.train.recipe = recipe_for_source(s);
            source_name(s)
        }
        SweepValue::Depth(_) => unreachable!("depth sweeps evaluate one checkpoint"),
    };
    c.command = Command::Train;
    let teacher = teacher.filter(|_| c.train.recipe.needs_teacher());
    let run = train_run(&c, teacher)?;
    let m = run
        .outcome
        .metrics
        .ok_or_else(|| Error::Data("sweep needs validation videos".into()))?;
    Ok(SweepRow::new(label, &m, None))
}

pub fn source_name(source: ProposalSource) -> String {
    serde_json::to_value(source)
        .ok()
        .and_then(|j| j.as_str().map(String::from))
        .unwrap_or_default()
}

pub fn sweep_table(cfg: &RunConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let spec = cfg.sweep.as_ref().expect("validated");
    let values = spec
        .values
        .iter()
        .map(|v| SweepValue::parse(spec.param, v))
        .collect::<Result<Vec<_>>>()?;
    if spec.param == SweepParam::DetectDecoderDepth {
        let loaded = load_checkpoint(cfg.checkpoint.as_ref().expect("validated"))?;
        let depths: Vec<usize> = values
            .iter()
            .map(|v| match v {
                SweepValue::Depth(d) => *d,
                _ => unreachable!("parsed as depths"),
            })
            .collect();
        let videos = cfg.data.val_videos()?;
        return depth_sweep(&loaded, &depths, &videos, cfg.tracker, cfg.proposal_source);
    }
    Ok(SweepTable {
        param: spec.param,
        rows: training_sweep(cfg, &values)?,
    })
}

/// Writes `sweep.csv` and `sweep.json`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Option<SweepTable>> {
    cfg.validate()?;
    if cfg.dry_run {
        return Ok(None);
    }
    let table = sweep_table(cfg)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.text("sweep.csv", &table.to_csv())?;
    out.json("sweep.json", &table)?;
    out.finish(Command::Sweep)?;
    Ok(Some(table))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileMode {
    pub frames: u64,
    pub encoder_calls: u64,
    pub decoder_calls: u64,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub self_proposal: ProfileMode,
    pub baseline: ProfileMode,
    /// Relative slowdown of self-proposal inference over the baseline.
    pub overhead: f64,
}

fn profile_mode(model: &Model, frames: &[&crate::tensor::Tensor], source: ProposalSource, tracker: TrackerConfig) -> Result<ProfileMode> {
    let opts = InferenceOptions {
        source,
        teacher: None,
        disable_track_queries: false,
    };
    model.reset_counters();
    let started = Instant::now();
    let owned: Vec<_> = frames.iter().map(|f| (*f).clone()).collect();
    run_video(model, &owned, tracker, &opts)?;
    let secs = started.elapsed().as_secs_f64();
    let c = model.counters();
    model.reset_counters();
    let n = frames.len() as u64;
    let expected_decoder = match source {
        ProposalSource::SelfProposal => 2 * n,
        _ => n,
    };
    if c.encoder != n || c.decoder != expected_decoder {
        return Err(Error::Contract(format!(
            "{source:?}: {n} frames ran the encoder {} and the decoder {} times",
            c.encoder, c.decoder
        )));
    }
    Ok(ProfileMode {
        frames: n,
        encoder_calls: c.encoder,
        decoder_calls: c.decoder,
        fps: n as f64 / secs.max(f64::MIN_POSITIVE),
    })
}

/// Times `frames` validation frames with self-proposal and learned-anchor
/// inference and checks the encoder and decoder call counts of each.
pub fn profile(model: &Model, videos: &[Video], frames: usize, tracker: TrackerConfig) -> Result<ProfileReport> {
    let picked: Vec<_> = videos.iter().flat_map(|v| v.frames.iter()).take(frames).collect();
    if picked.is_empty() {
        return Err(Error::Data("no frames to profile".into()));
    }
    let self_proposal = profile_mode(model, &picked, ProposalSource::SelfProposal, tracker)?;
    let baseline = profile_mode(model, &picked, ProposalSource::LearnableAnchor, tracker)?;
    Ok(ProfileReport {
        overhead: baseline.fps / self_proposal.fps - 1.0,
        self_proposal,
        baseline,
    })
}

/// Profiles the checkpoint, or a freshly initialized model without one.
pub fn cmd_profile(cfg: &RunConfig) -> Result<Option<ProfileReport>> {
    cfg.validate()?;
    let mut model = match &cfg.checkpoint {
        Some(p) => load_checkpoint(p)?.model,
        None => Model::new(cfg.effective_model())?,
    };
    apply_overrides(cfg, &mut model)?;
    if cfg.dry_run {
        return Ok(None);
    }
    let mut data = cfg.data.clone();
    data.val_frames = data.val_frames.max(cfg.profile_frames.div_ceil(data.val_seeds.len().max(1)));
    let videos = data.val_videos()?;
    let report = profile(&model, &videos, cfg.profile_frames, cfg.tracker)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.json("profile.json", &report)?;
    out.finish(Command::Profile)?;
    Ok(Some(report))
}

/// Shape of the raw frame files written by [`cmd_gen_data`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub seed: u64,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Little-endian `f32` values in frame, channel, row, column order.
    pub format: String,
}

/// Writes every train and val video as `frames.f32`, `gt.csv` and
/// `meta.json`, plus the dataset spec.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Option<usize>> {
    cfg.validate()?;
    if cfg.dry_run {
        return Ok(None);
    }
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.json("dataset.json", &cfg.data)?;
    let splits = [
        ("train", &cfg.data.train_seeds, cfg.data.train_frames),
        ("val", &cfg.data.val_seeds, cfg.data.val_frames),
    ];
    let mut count = 0;
    for (split, seeds, frames) in splits {
        for &seed in seeds {
            let scene = cfg.data.scene_for(seed, frames);
            let video = crate::synth::generate(&scene)?;
            let dir = format!("{split}/seed_{seed}");
            let mut raw = Vec::new();
            for f in &video.frames {
                for &x in f.data() {
                    raw.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            let p = out.path(&format!("{dir}/frames.f32"));
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&p, raw).map_err(|e| Error::io(&p, e))?;
            out.text(&format!("{dir}/gt.csv"), &gt_to_mot_csv(&video.gt))?;
            out.json(
                &format!("{dir}/meta.json"),
                &VideoMeta {
                    seed,
                    frames: video.len(),
                    channels: crate::synth::CHANNELS,
                    height: scene.height,
                    width: scene.width,
                    format: "f32le".into(),
                },
            )?;
            count += 1;
        }
    }
    out.finish(Command::GenData)?;
    Ok(Some(count))
}

/// Dispatches on `cfg.command` and returns the JSON of the main result.
pub fn run(cfg: &RunConfig) -> Result<serde_json::Value> {
    let to = |v: std::result::Result<serde_json::Value, serde_json::Error>| {
        v.map_err(|e| Error::Contract(format!("unserializable result: {e}")))
    };
    match cfg.command {
        Command::Train => to(serde_json::to_value(cmd_train(cfg)?)),
        Command::Eval => to(serde_json::to_value(cmd_eval(cfg)?)),
        Command::Conflict => to(serde_json::to_value(cmd_conflict(cfg)?)),
        Command::Sweep => to(serde_json::to_value(cmd_sweep(cfg)?)),
        Command::Profile => to(serde_json::to_value(cmd_profile(cfg)?)),
        Command::GenData => to(serde_json::to_value(cmd_gen_data(cfg)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips() {
        let cfg = RunConfig {
            command: Command::Sweep,
            sweep: Some(SweepSpec {
                param: SweepParam::CProp,
                values: vec!["0.05".into(), "0.5".into()],
            }),
            c_prop: Some(0.1),
            ..RunConfig::default()
        };
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn source_values_parse() {
        for (text, s) in [
            ("learnable_anchor", ProposalSource::LearnableAnchor),
            ("frozen_anchor", ProposalSource::FrozenAnchor),
            ("self", ProposalSource::SelfProposal),
        ] {
            assert_eq!(
                SweepValue::parse(SweepParam::ProposalSource, text).unwrap(),
                SweepValue::Source(s)
            );
        }
        assert!(SweepValue::parse(SweepParam::CProp, "x").is_err());
    }
}
