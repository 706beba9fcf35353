//! Trains a self-proposal tracker on synthetic videos, then evaluates and
//! saves it.
//!
//! ```bash
//! cargo run --release --example train_self_proposal -- 20 runs/self
//! ```
//!
//! The first argument is the number of epochs and the second a checkpoint
//! directory to write.

use std::time::Instant;

use selftrack::harness::{save_checkpoint, RunInfo};
use selftrack::model::ModelConfig;
use selftrack::synth::DatasetSpec;
use selftrack::tracker::TrackerConfig;
use selftrack::training::{train, Recipe, TrainConfig};

fn main() -> selftrack::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let out = args.next();

    let data = DatasetSpec {
        train_seeds: (0..4).collect(),
        val_seeds: vec![1000],
        train_frames: 100,
        val_frames: 40,
        clip_len: 10,
        ..DatasetSpec::default()
    }
    .split()?;
    let model = ModelConfig { d: 32, n_heads: 2, ffn_dim: 64, n_det: 30, ..ModelConfig::default() };
    let train_cfg = TrainConfig {
        recipe: Recipe::SelfProposal,
        epochs,
        clip_len: 10,
        lr: 3e-3,
        stem_lr_scale: 1.0,
        eval_every: 2,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(
        &train_cfg,
        &model,
        &data.train_clips,
        &data.val_videos,
        TrackerConfig::default(),
        None,
        |r| {
            let val = match (r.ap_val, r.hota_val) {
                (Some(ap), Some(h)) => format!(" AP {ap:.3} HOTA {h:.3}"),
                _ => String::new(),
            };
            println!(
                "epoch {:>3} loss {:.3} (track {:.3}, proposal {:.3}){val} [{:.0}s]",
                r.epoch,
                r.loss,
                r.loss_motr,
                r.loss_prop,
                start.elapsed().as_secs_f64()
            );
        },
    )?;
    if let Some(m) = &outcome.metrics {
        println!(
            "val: AP {:.3} HOTA {:.3} DetA {:.3} AssA {:.3} MOTA {:.3} IDF1 {:.3}",
            m.ap, m.hota, m.deta, m.assa, m.mota, m.idf1
        );
    }
    if let Some(dir) = out {
        let info = RunInfo { recipe: Recipe::SelfProposal, proposal_source: Recipe::SelfProposal.proposal_source() };
        save_checkpoint(dir.as_ref(), &outcome.model, info, None)?;
        println!("saved checkpoint to {dir}");
    }
    Ok(())
}
