//! Trains one model per proposal source (learnable anchors, a frozen
//! detector's boxes, the model's own detection pass) and prints the table.
//!
//! ```bash
//! cargo run --release --example proposal_sweep -- 6 2
//! ```
//!
//! Arguments: epochs per model and worker threads.

use selftrack::harness::{sweep_table, Command, RunConfig, SweepParam, SweepSpec};
use selftrack::model::ModelConfig;
use selftrack::synth::DatasetSpec;
use selftrack::training::TrainConfig;

fn main() -> selftrack::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let threads: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = RunConfig {
        command: Command::Sweep,
        seed: 2,
        threads,
        model: ModelConfig { d: 32, n_heads: 2, ffn_dim: 64, n_det: 30, ..ModelConfig::default() },
        train: TrainConfig { epochs, pretrain_epochs: epochs, lr: 3e-3, stem_lr_scale: 1.0, eval_every: 0, ..TrainConfig::default() },
        data: DatasetSpec {
            train_seeds: (0..4).collect(),
            val_seeds: vec![1000],
            train_frames: 60,
            val_frames: 40,
            clip_len: 10,
            ..DatasetSpec::default()
        },
        sweep: Some(SweepSpec {
            param: SweepParam::ProposalSource,
            values: ["learnable_anchor", "frozen_anchor", "self"].map(String::from).to_vec(),
        }),
        ..RunConfig::default()
    };
    print!("{}", sweep_table(&cfg)?.to_csv());
    Ok(())
}
