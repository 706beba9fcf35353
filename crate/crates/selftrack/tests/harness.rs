mod common;

use std::path::Path;
use std::process::Command as Process;

use selftrack::harness::{
    cmd_conflict, cmd_eval, cmd_gen_data, cmd_profile, cmd_sweep, cmd_train, read_json, Command,
    Manifest, RunConfig, SweepParam, SweepSpec, VideoMeta, train_run, train_teacher,
};
use selftrack::synth::{DatasetSpec, SceneConfig};
use selftrack::training::Recipe;

fn tiny_run(command: Command, dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        command,
        output_dir: dir.to_path_buf(),
        seed: 3,
        model: common::tiny_model_config(),
        data: DatasetSpec {
            train_seeds: vec![1, 2],
            val_seeds: vec![50],
            train_frames: 10,
            val_frames: 6,
            objects: (1, 2),
            clip_len: 5,
            scene: SceneConfig { width: 32, height: 32, ..SceneConfig::default() },
        },
        profile_frames: 4,
        ..RunConfig::default()
    };
    cfg.train.epochs = 1;
    cfg.train.pretrain_epochs = 1;
    cfg
}

fn manifest_files(dir: &Path) -> Vec<String> {
    let m: Manifest = read_json(&dir.join("manifest.json")).unwrap();
    for f in &m.files {
        assert!(dir.join(f).exists(), "{f} listed but missing");
    }
    m.files
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    for command in [Command::Train, Command::Profile, Command::GenData] {
        let dir = tmp.path().join(format!("{command:?}"));
        let cfg = RunConfig { dry_run: true, ..tiny_run(command, &dir) };
        selftrack::harness::run(&cfg).unwrap();
        assert!(!dir.exists(), "{command:?} wrote output on a dry run");
    }
}

#[test]
fn config_files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        sweep: Some(SweepSpec { param: SweepParam::ProposalSource, values: vec!["self".into()] }),
        ..tiny_run(Command::Sweep, tmp.path())
    };
    let path = tmp.path().join("cfg.json");
    cfg.save(&path).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}

#[test]
fn invalid_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(cmd_eval(&tiny_run(Command::Eval, tmp.path())).is_err());
    assert!(cmd_conflict(&tiny_run(Command::Conflict, tmp.path())).is_err());
    assert!(cmd_sweep(&tiny_run(Command::Sweep, tmp.path())).is_err());
    let mut distill = tiny_run(Command::Train, tmp.path());
    distill.train.recipe = Recipe::Distill;
    assert!(cmd_train(&distill).is_err());
    let depth = RunConfig {
        sweep: Some(SweepSpec { param: SweepParam::DetectDecoderDepth, values: vec!["1".into()] }),
        ..tiny_run(Command::Sweep, tmp.path())
    };
    assert!(cmd_sweep(&depth).is_err());
    let zero_threads = RunConfig { threads: 0, ..tiny_run(Command::Train, tmp.path()) };
    assert!(cmd_train(&zero_threads).is_err());
}

#[test]
fn train_then_eval_conflict_profile_and_depth_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    let metrics = cmd_train(&tiny_run(Command::Train, &train_dir)).unwrap().unwrap();
    assert!((0.0..=1.0).contains(&metrics.hota));
    let files = manifest_files(&train_dir);
    for f in ["config.json", "log.jsonl", "checkpoint", "metrics.json"] {
        assert!(files.iter().any(|x| x == f), "missing {f}");
    }
    let ckpt = train_dir.join("checkpoint");

    let eval_dir = tmp.path().join("eval");
    let cfg = RunConfig { checkpoint: Some(ckpt.clone()), ..tiny_run(Command::Eval, &eval_dir) };
    let first = cmd_eval(&cfg).unwrap().unwrap();
    assert_eq!(first, metrics);
    assert!(manifest_files(&eval_dir).contains(&"tracks/val_000.csv".to_string()));
    let csv = std::fs::read_to_string(eval_dir.join("tracks/val_000.csv")).unwrap();
    assert!(csv.lines().all(|l| l.split(',').count() >= 7));

    let conflict_dir = tmp.path().join("conflict");
    let cfg = RunConfig { checkpoint: Some(ckpt.clone()), ..tiny_run(Command::Conflict, &conflict_dir) };
    let report = cmd_conflict(&cfg).unwrap().unwrap();
    assert!((report.gap - (report.without_track_queries.ap - report.with_track_queries.ap)).abs() < 1e-12);
    assert_eq!(manifest_files(&conflict_dir), vec!["conflict.json".to_string()]);

    let profile_dir = tmp.path().join("profile");
    let cfg = RunConfig { checkpoint: Some(ckpt.clone()), ..tiny_run(Command::Profile, &profile_dir) };
    let p = cmd_profile(&cfg).unwrap().unwrap();
    assert_eq!(p.self_proposal.frames, 4);
    assert_eq!(p.self_proposal.decoder_calls, 2 * p.self_proposal.encoder_calls);
    assert_eq!(p.baseline.decoder_calls, p.baseline.encoder_calls);

    let sweep_dir = tmp.path().join("depth");
    let cfg = RunConfig {
        checkpoint: Some(ckpt),
        sweep: Some(SweepSpec {
            param: SweepParam::DetectDecoderDepth,
            values: vec!["0".into(), "2".into()],
        }),
        ..tiny_run(Command::Sweep, &sweep_dir)
    };
    let table = cmd_sweep(&cfg).unwrap().unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].ap_detection_pass, None);
    assert!(table.rows[1].ap_detection_pass.is_some());
    let csv = std::fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn proposal_source_sweep_trains_its_own_teacher() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        sweep: Some(SweepSpec {
            param: SweepParam::ProposalSource,
            values: vec!["learnable-anchor".into(), "frozen-anchor".into(), "self".into()],
        }),
        ..tiny_run(Command::Sweep, tmp.path())
    };
    let table = cmd_sweep(&cfg).unwrap().unwrap();
    assert_eq!(table.rows.len(), 3);
}

#[test]
fn train_run_takes_an_in_memory_teacher() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(Command::Train, tmp.path());
    cfg.train.recipe = Recipe::FrozenAnchorProposal;
    assert!(train_run(&cfg, None).is_err());
    let teacher = train_teacher(&cfg).unwrap();
    let run = train_run(&cfg, Some(teacher)).unwrap();
    assert!(run.teacher.is_some());
    assert!(cmd_train(&cfg).is_err());
}

#[test]
fn training_sweep_keeps_value_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        threads: 2,
        sweep: Some(SweepSpec { param: SweepParam::CProp, values: vec!["0.5".into(), "0.05".into()] }),
        ..tiny_run(Command::Sweep, tmp.path())
    };
    let table = cmd_sweep(&cfg).unwrap().unwrap();
    let values: Vec<_> = table.rows.iter().map(|r| r.value.as_str()).collect();
    assert_eq!(values, ["0.5", "0.05"]);
}

#[test]
fn gen_data_exports_frames_and_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_run(Command::GenData, tmp.path());
    assert_eq!(cmd_gen_data(&cfg).unwrap(), Some(3));
    let files = manifest_files(tmp.path());
    assert!(files.contains(&"dataset.json".to_string()));
    let dir = tmp.path().join("val/seed_50");
    let meta: VideoMeta = read_json(&dir.join("meta.json")).unwrap();
    assert_eq!((meta.frames, meta.height, meta.width), (6, 32, 32));
    let bytes = std::fs::metadata(dir.join("frames.f32")).unwrap().len() as usize;
    assert_eq!(bytes, 4 * meta.frames * meta.channels * meta.height * meta.width);
    let gt = std::fs::read_to_string(dir.join("gt.csv")).unwrap();
    assert!(!gt.is_empty());
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let bin = env!("CARGO_BIN_EXE_selftrack");
    let out = Process::new(bin).args(["eval", "--dry-run"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = Process::new(bin).arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    let tmp = tempfile::tempdir().unwrap();
    let out = Process::new(bin)
        .args(["gen-data", "--dry-run", "--output-dir"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
