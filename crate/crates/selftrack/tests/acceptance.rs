//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `SELFTRACK_ACCEPTANCE=1,2,5` runs a subset. Criteria 1 to 5 and 10 check
//! exact properties and fail the process when they fail. Criteria 6 to 9
//! train models on the synthetic benchmark and compare the result with
//! fixed gates; their lines are reported and written to
//! `target/acceptance.json` but do not change the exit status.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use selftrack::evaluation::Sequence;
use selftrack::geometry::{giou, iou, BBox, DetectionSet};
use selftrack::harness::{
    conflict_report, depth_sweep, detection_pass_ap, read_json, recipe_for_source, train_run,
    train_teacher, Command, LoadedModel, RunConfig,
};
use selftrack::matching::hungarian;
use selftrack::model::{Model, ModelConfig, QueryKind, QuerySet, QuerySource};
use selftrack::synth::DatasetSpec;
use selftrack::tensor::gradcheck::{check_case, op_cases, Tolerance};
use selftrack::tensor::Tape;
use selftrack::tracker::{run_video, InferenceOptions, ProposalSource, TrackerConfig};
use selftrack::training::{ClipMode, Recipe, TrainConfig};

const GRAD_REL_TOL: f64 = 1e-4;
const CLIP_LOSS_REL_TOL: f64 = 1e-3;
const GEOMETRY_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-12;
const OVERFIT_AP: f64 = 0.6;
const OVERFIT_HOTA: f64 = 0.5;
const OVERFIT_SECS: f64 = 15.0 * 60.0;
const DEPTH_REL_TOL: f64 = 0.05;
const SEEDS: [u64; 3] = [11, 12, 13];

#[derive(Serialize)]
struct Line {
    criterion: u8,
    name: &'static str,
    pass: bool,
    gating: bool,
    detail: String,
    secs: f64,
}

/// Model, data and training budget of the trained criteria.
fn desk_config(seed: u64, recipe: Recipe, epochs: usize, train_frames: usize) -> RunConfig {
    RunConfig {
        command: Command::Train,
        seed,
        model: ModelConfig {
            d: 32,
            n_heads: 2,
            ffn_dim: 64,
            n_det: 30,
            n_dec_layers: 4,
            detect_depth: 4,
            track_depth: 4,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            recipe,
            epochs,
            pretrain_epochs: epochs,
            lr: 3e-3,
            stem_lr_scale: 1.0,
            eval_every: 0,
            ..TrainConfig::default()
        },
        data: DatasetSpec {
            train_seeds: (0..4).collect(),
            val_seeds: vec![1000, 1001],
            train_frames,
            val_frames: 60,
            clip_len: 10,
            ..DatasetSpec::default()
        },
        ..RunConfig::default()
    }
}

fn autodiff() -> (bool, String) {
    let mut failed = Vec::new();
    let mut checked = 0;
    let tol = Tolerance { rel: GRAD_REL_TOL, ..Tolerance::default() };
    for (k, case) in op_cases().iter().enumerate() {
        let r = check_case(case, 100 + k as u64, 20, tol).expect("op case runs");
        checked += 1;
        if !r.passed() || r.checked < 20 {
            failed.push(case.name);
        }
    }
    let mut model = Model::new(common::tiny_model_config()).expect("tiny model");
    let clip = common::tiny_clip(3, 2, 4);
    let mut spots = 0;
    for (mode, seed) in [
        (ClipMode::DetectionOnly, 1),
        (ClipMode::Tracking { source: ProposalSource::SelfProposal, distill: false }, 2),
    ] {
        let r = common::clip_loss_spot_check(&mut model, &clip, mode, 5, seed, CLIP_LOSS_REL_TOL);
        spots += r.len();
        if r.len() < 5 || r.iter().any(|x| !x.3) {
            failed.push("clip_loss");
        }
    }
    (
        failed.is_empty(),
        format!("{checked} ops x 20 inputs, {spots} clip_loss coordinates, failures {failed:?}"),
    )
}

fn matching() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = common::random_costs(&mut rng);
        let got = hungarian(&c).total_cost(&c);
        worst = worst.max((got - common::brute_force_min(&c)).abs());
    }
    (worst == 0.0, format!("100 matrices up to 6x6, max difference {worst}"))
}

fn geometry() -> (bool, String) {
    let a = common::corners(0.0, 0.0, 0.5, 0.5);
    let b = common::corners(0.25, 0.25, 0.75, 0.75);
    let c = common::corners(0.0, 0.0, 0.25, 0.25);
    let d = common::corners(0.5, 0.0, 0.75, 0.25);
    let cases = [
        (iou(&a, &b).unwrap(), 1.0 / 7.0),
        (giou(&c, &d).unwrap(), -1.0 / 3.0),
        (iou(&a, &a).unwrap(), 1.0),
        (giou(&a, &a).unwrap(), 1.0),
    ];
    let hand = cases.iter().all(|(x, y)| (x - y).abs() <= GEOMETRY_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    for _ in 0..10_000 {
        let p = random_box(&mut rng);
        let q = random_box(&mut rng);
        if giou(&p, &q).unwrap() > iou(&p, &q).unwrap() + 1e-15 {
            violations += 1;
        }
    }
    (
        hand && violations == 0,
        format!("hand cases {}, giou > iou on {violations} of 10000 pairs", if hand { "exact" } else { "off" }),
    )
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    use rand::Rng;
    BBox::new(
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.01..0.6),
        rng.random_range(0.01..0.6),
    )
}

fn metrics() -> (bool, String) {
    let oracles = common::metric_oracles();
    let exact = oracles.iter().all(|(_, got, want)| (got - want).abs() <= METRIC_TOL);
    let model = Model::new(common::tiny_model_config()).expect("tiny model");
    let clip = common::tiny_clip(8, 2, 3);
    let gt = selftrack::synth::GroundTruth { frames: clip.gt.clone() };
    let tracked = run_video(
        &model,
        &clip.frames,
        TrackerConfig { tau_en: 0.0, ..TrackerConfig::default() },
        &InferenceOptions::default(),
    )
    .expect("tracking runs");
    let runs = [
        vec![common::reshuffled_ids()],
        vec![Sequence::from_tracking(&tracked, &gt)],
    ];
    let identity = runs.iter().map(|s| common::hota_identity_error(s)).fold(0.0, f64::max);
    let values: Vec<String> = oracles.iter().map(|(n, g, _)| format!("{n}={g}")).collect();
    (
        exact && identity <= METRIC_TOL,
        format!("{}, HOTA identity error {identity:.1e}", values.join(" ")),
    )
}

fn mechanisms() -> (bool, String) {
    let mut notes = Vec::new();
    let cfg = ModelConfig { n_learned: 10, ..common::tiny_model_config() };
    let model = Model::new(cfg).expect("tiny model");
    let b = BBox::new(0.5, 0.5, 0.2, 0.2);
    let dets = DetectionSet { boxes: vec![b; 4], scores: vec![0.9, 0.01, 0.3, 0.05] };
    let tape = Tape::new();
    let set = model.build_proposals(&tape, &dets).expect("proposals");
    let filtered = dets.scores.iter().filter(|&&s| s >= model.config().c_prop).count();
    let count_ok = set.len() == filtered + 10
        && set.kinds().iter().filter(|k| **k == QueryKind::LearnedAnchor).count() == 10;
    notes.push(format!("proposals {} = {filtered} + 10", set.len()));

    let image = common::tiny_clip(1, 2, 5).frames.remove(0);
    model.reset_counters();
    for _ in 0..4 {
        let tape = Tape::new();
        model
            .forward_frame(&tape, &image, QuerySet::new(), QuerySource::SelfProposal)
            .expect("forward");
    }
    let c = model.counters();
    let calls_ok = c.encoder == 4 && c.decoder == 8;
    notes.push(format!("encoder:decoder {}:{}", c.encoder, c.decoder));

    let tape = Tape::new();
    let out = model
        .forward_frame(&tape, &image, QuerySet::new(), QuerySource::SelfProposal)
        .expect("forward");
    let det_params = out.detection.expect("detection pass").decode.params;
    let shared = det_params == out.tracking.params && !det_params.is_empty();
    notes.push(format!("shared decoder parameters {shared}"));

    let traces: Vec<usize> = [1, 20, 21].iter().map(|&k| common::reid_trace_ids(k).len()).collect();
    let lifecycle = traces == [1, 1, 2];
    notes.push(format!("ids after 1/20/21 low frames {traces:?}"));
    (count_ok && calls_ok && shared && lifecycle, notes.join(", "))
}

/// A trained self-proposal model reused by the depth criterion.
struct Trained {
    loaded: LoadedModel,
    videos: Vec<selftrack::synth::Video>,
}

fn overfit(trained: &mut Option<Trained>) -> (bool, String) {
    let cfg = desk_config(SEEDS[0], Recipe::SelfProposal, 30, 1000);
    let start = Instant::now();
    let run = train_run(&cfg, None).expect("training runs");
    let secs = start.elapsed().as_secs_f64();
    let m = run.outcome.metrics.clone().expect("validation metrics");
    let videos = cfg.data.val_videos().expect("val videos");
    let det_ap = detection_pass_ap(&run.outcome.model, &videos).expect("detection pass").ap;
    *trained = Some(Trained {
        loaded: LoadedModel { model: run.outcome.model, info: run.info, teacher: None },
        videos,
    });
    (
        m.ap >= OVERFIT_AP && m.hota >= OVERFIT_HOTA && secs <= OVERFIT_SECS,
        format!(
            "AP {:.3} (gate {OVERFIT_AP}), HOTA {:.3} (gate {OVERFIT_HOTA}), detection-pass AP {det_ap:.3}, {secs:.0}s (limit {OVERFIT_SECS}s)",
            m.ap, m.hota
        ),
    )
}

/// Per seed: conflict gaps of the baseline and self-proposal models and
/// HOTA of all three proposal sources.
#[derive(Debug, Serialize)]
struct SeedResult {
    seed: u64,
    gap_baseline: f64,
    gap_self: f64,
    hota_baseline: f64,
    hota_self: f64,
    hota_frozen: f64,
}

fn seed_results() -> Vec<SeedResult> {
    SEEDS
        .iter()
        .map(|&seed| {
            let base = desk_config(seed, Recipe::Standard, 15, 500);
            let videos = base.data.val_videos().expect("val videos");
            let teacher = train_teacher(&desk_config(seed, Recipe::DetPretrain, 15, 500)).expect("teacher");
            let mut gaps = Vec::new();
            let mut hotas = Vec::new();
            for source in [
                ProposalSource::LearnableAnchor,
                ProposalSource::SelfProposal,
                ProposalSource::FrozenAnchor,
            ] {
                let recipe = recipe_for_source(source);
                let cfg = desk_config(seed, recipe, 15, 500);
                let t = recipe.needs_teacher().then(|| teacher.clone());
                let run = train_run(&cfg, t).expect("training runs");
                hotas.push(run.outcome.metrics.as_ref().expect("validation metrics").hota);
                let opts = InferenceOptions {
                    source,
                    teacher: run.teacher.as_ref(),
                    disable_track_queries: false,
                };
                let r = conflict_report(&run.outcome.model, &videos, cfg.tracker, &opts).expect("conflict");
                gaps.push(r.gap);
            }
            let r = SeedResult {
                seed,
                gap_baseline: gaps[0],
                gap_self: gaps[1],
                hota_baseline: hotas[0],
                hota_self: hotas[1],
                hota_frozen: hotas[2],
            };
            eprintln!("  seed result {r:?}");
            r
        })
        .collect()
}

fn conflict(results: &[SeedResult]) -> (bool, String) {
    if results.len() < 2 {
        return (false, "needs the per-seed training runs".into());
    }
    let gaps: Vec<f64> = results.iter().map(|r| r.gap_baseline).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let std = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let smaller = results.iter().filter(|r| r.gap_self.abs() < r.gap_baseline.abs()).count();
    let self_gaps: Vec<String> = results.iter().map(|r| format!("{:.3}", r.gap_self)).collect();
    (
        mean > 0.0 && mean > std && smaller >= 2,
        format!(
            "baseline gap mean {mean:.3} sd {std:.3}, self-proposal gaps [{}], smaller in {smaller}/3 seeds",
            self_gaps.join(", ")
        ),
    )
}

fn ablation(results: &[SeedResult]) -> (bool, String) {
    if results.is_empty() {
        return (false, "needs the per-seed training runs".into());
    }
    let self_wins = results.iter().filter(|r| r.hota_self > r.hota_baseline).count();
    let frozen_wins = results.iter().filter(|r| r.hota_frozen > r.hota_baseline).count();
    let rows: Vec<String> = results
        .iter()
        .map(|r| format!("{:.3}/{:.3}/{:.3}", r.hota_self, r.hota_frozen, r.hota_baseline))
        .collect();
    (
        self_wins >= 2 && frozen_wins >= 2,
        format!(
            "HOTA self/frozen/learnable per seed [{}], wins {self_wins}/3 and {frozen_wins}/3",
            rows.join(", ")
        ),
    )
}

fn depth(trained: &Option<Trained>) -> (bool, String) {
    let Some(t) = trained else {
        return (false, "needs the model trained by criterion 6".into());
    };
    let table = depth_sweep(&t.loaded, &[1, 2, 3, 4], &t.videos, TrackerConfig::default(), None)
        .expect("depth sweep");
    let ap: Vec<f64> = table.rows.iter().map(|r| r.ap_detection_pass.unwrap_or(0.0)).collect();
    let plateau = ap[3];
    let rel = (ap[1] - plateau).abs() / plateau.max(f64::MIN_POSITIVE);
    let hota: Vec<String> = table.rows.iter().map(|r| format!("{:.3}", r.hota)).collect();
    (
        rel <= DEPTH_REL_TOL,
        format!(
            "detection-pass AP by depth [{}], depth 2 vs 4 relative {rel:.3} (limit {DEPTH_REL_TOL}), HOTA [{}]",
            ap.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(", "),
            hota.join(", ")
        ),
    )
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut texts = Vec::new();
    for run in 0..2 {
        let mut cfg = desk_config(5, Recipe::SelfProposal, 1, 20);
        cfg.model = common::tiny_model_config();
        cfg.data.scene.width = 32;
        cfg.data.scene.height = 32;
        cfg.data.val_frames = 10;
        cfg.output_dir = tmp.path().join(format!("run{run}"));
        selftrack::harness::cmd_train(&cfg).expect("training runs");
        texts.push(std::fs::read(cfg.output_dir.join("metrics.json")).expect("metrics file"));
        let _: selftrack::evaluation::MetricsReport =
            read_json(&cfg.output_dir.join("metrics.json")).expect("metrics parse");
    }
    let same = texts[0] == texts[1];
    (same, format!("metrics.json byte-identical across runs: {same} ({} bytes)", texts[0].len()))
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn main() -> ExitCode {
    let selected: Option<BTreeSet<u8>> = std::env::var("SELFTRACK_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |c: u8| selected.as_ref().is_none_or(|s| s.contains(&c));
    let mut lines: Vec<Line> = Vec::new();
    let mut record = |criterion: u8, name: &'static str, gating: bool, f: &mut dyn FnMut() -> (bool, String)| {
        if !wanted(criterion) {
            return;
        }
        let start = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(&mut *f))
            .unwrap_or_else(|e| (false, format!("aborted: {}", panic_text(&e))));
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {criterion:>2} {} {name}: {detail} [{secs:.1}s]",
            if pass { "PASS" } else { "FAIL" }
        );
        lines.push(Line { criterion, name, pass, gating, detail, secs });
    };
    record(1, "autodiff", true, &mut autodiff);
    record(2, "matching", true, &mut matching);
    record(3, "geometry", true, &mut geometry);
    record(4, "metrics", true, &mut metrics);
    record(5, "mechanisms", true, &mut mechanisms);
    let mut trained = None;
    record(6, "overfit", false, &mut || overfit(&mut trained));
    let results = if wanted(7) || wanted(8) {
        catch_unwind(seed_results).unwrap_or_else(|e| {
            eprintln!("per-seed training aborted: {}", panic_text(&e));
            Vec::new()
        })
    } else {
        Vec::new()
    };
    record(7, "conflict", false, &mut || conflict(&results));
    record(8, "ablation", false, &mut || ablation(&results));
    record(9, "depth", false, &mut || depth(&trained));
    record(10, "determinism", true, &mut determinism);
    let failed_gates = lines.iter().filter(|l| l.gating && !l.pass).count();
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("acceptance: {passed}/{} passed", lines.len());
    let report = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance.json");
    let json = serde_json::json!({ "criteria": lines, "seeds": results });
    if let Err(e) = selftrack::harness::write_json(&report, &json) {
        eprintln!("could not write {}: {e}", report.display());
    }
    if failed_gates > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
