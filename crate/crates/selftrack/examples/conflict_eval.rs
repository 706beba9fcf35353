//! Measures how much track queries cost detection: AP of the tracking pass
//! with normal online inference against AP with the tracker cleared every
//! frame, for the learnable-anchor baseline and for self-proposal.
//!
//! ```bash
//! cargo run --release --example conflict_eval -- 8
//! ```

use selftrack::harness::{conflict_report, train_run, Command, RunConfig};
use selftrack::model::ModelConfig;
use selftrack::synth::DatasetSpec;
use selftrack::training::{inference_options, Recipe, TrainConfig};

fn main() -> selftrack::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    for recipe in [Recipe::Standard, Recipe::SelfProposal] {
        let cfg = RunConfig {
            command: Command::Train,
            seed: 1,
            model: ModelConfig { d: 32, n_heads: 2, ffn_dim: 64, n_det: 30, ..ModelConfig::default() },
            train: TrainConfig { recipe, epochs, lr: 3e-3, stem_lr_scale: 1.0, eval_every: 0, ..TrainConfig::default() },
            data: DatasetSpec {
                train_seeds: (0..4).collect(),
                val_seeds: vec![1000],
                train_frames: 100,
                val_frames: 40,
                clip_len: 10,
                ..DatasetSpec::default()
            },
            ..RunConfig::default()
        };
        let run = train_run(&cfg, None)?;
        let videos = cfg.data.val_videos()?;
        let opts = inference_options(recipe, None);
        let r = conflict_report(&run.outcome.model, &videos, cfg.tracker, &opts)?;
        println!(
            "{recipe:?}: AP with track queries {:.3}, without {:.3}, gap {:+.3}",
            r.with_track_queries.ap, r.without_track_queries.ap, r.gap
        );
    }
    Ok(())
}
