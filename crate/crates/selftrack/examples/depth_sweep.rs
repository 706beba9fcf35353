//! Evaluates one trained checkpoint with 1 to 4 decoder layers in the
//! detection pass.
//!
//! ```bash
//! cargo run --release --example train_self_proposal -- 20 runs/self
//! cargo run --release --example depth_sweep -- runs/self
//! ```
//!
//! Without a checkpoint argument a small 4-layer model is trained first.

use selftrack::harness::{depth_sweep, load_checkpoint, train_run, Command, LoadedModel, RunConfig};
use selftrack::model::ModelConfig;
use selftrack::synth::DatasetSpec;
use selftrack::tracker::TrackerConfig;
use selftrack::training::{Recipe, TrainConfig};

fn main() -> selftrack::Result<()> {
    let data = DatasetSpec {
        train_seeds: (0..4).collect(),
        val_seeds: vec![1000],
        train_frames: 60,
        val_frames: 40,
        clip_len: 10,
        ..DatasetSpec::default()
    };
    let loaded = match std::env::args().nth(1) {
        Some(dir) => load_checkpoint(dir.as_ref())?,
        None => {
            let cfg = RunConfig {
                command: Command::Train,
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
                train: TrainConfig { recipe: Recipe::SelfProposal, epochs: 4, lr: 3e-3, stem_lr_scale: 1.0, eval_every: 0, ..TrainConfig::default() },
                data: data.clone(),
                ..RunConfig::default()
            };
            let run = train_run(&cfg, None)?;
            LoadedModel { model: run.outcome.model, info: run.info, teacher: None }
        }
    };
    let layers = loaded.model.config().n_dec_layers;
    let depths: Vec<usize> = (1..=layers.min(4)).collect();
    let table = depth_sweep(&loaded, &depths, &data.val_videos()?, TrackerConfig::default(), None)?;
    print!("{}", table.to_csv());
    Ok(())
}
