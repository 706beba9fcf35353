mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selftrack::geometry::{boxes_to_tensor, giou_var, BBox};
use selftrack::model::Model;
use selftrack::tensor::gradcheck::{check, check_case, op_cases, Tolerance};
use selftrack::tensor::{Tape, Tensor};
use selftrack::training::ClipMode;

#[test]
fn every_op_matches_central_differences_on_20_inputs() {
    for (k, case) in op_cases().iter().enumerate() {
        let r = check_case(case, 100 + k as u64, 20, Tolerance::default()).unwrap();
        assert!(r.passed(), "{}: {:?}", case.name, &r.failures[..r.failures.len().min(3)]);
        assert!(r.checked >= 20);
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(
        rng.random_range(0.2..0.8),
        rng.random_range(0.2..0.8),
        rng.random_range(0.05..0.4),
        rng.random_range(0.05..0.4),
    )
}

#[test]
fn giou_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let a: Vec<BBox> = (0..3).map(|_| random_box(&mut rng)).collect();
        let b: Vec<BBox> = (0..3).map(|_| random_box(&mut rng)).collect();
        let r = check(
            |_, v| Ok(giou_var(v[0], v[1])?.sum()),
            &[boxes_to_tensor(&a), boxes_to_tensor(&b)],
            Tolerance::default(),
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.failures);
    }
}

#[test]
fn attention_layer_gradient_matches_central_differences() {
    let model = Model::new(common::tiny_model_config()).unwrap();
    let attn = model.cross_attention(0).clone();
    let store = model.params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand = |r: usize, c: usize| {
        Tensor::new(&[r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let inputs = [rand(3, 16), rand(5, 16), rand(5, 16), rand(3, 5)];
    let r = check(
        |tape: &Tape, v| {
            let out = attn.forward(tape, &store, v[0], v[1], v[2], Some(v[3]))?;
            Ok(out.mul(out)?.sum())
        },
        &inputs,
        Tolerance::default(),
    )
    .unwrap();
    assert!(r.passed(), "{:?}", r.failures);
}

#[test]
fn clip_loss_spot_checks_pass() {
    let clip = common::tiny_clip(2, 2, 11);
    for (seed, mode) in [
        (1, ClipMode::DetectionOnly),
        (
            2,
            ClipMode::Tracking {
                source: selftrack::tracker::ProposalSource::SelfProposal,
                distill: false,
            },
        ),
    ] {
        let mut model = Model::new(common::tiny_model_config()).unwrap();
        let checks = common::clip_loss_spot_check(&mut model, &clip, mode, 5, seed, 1e-3);
        assert_eq!(checks.len(), 5);
        for (name, a, n, ok) in checks {
            assert!(ok, "{name}: analytic {a} numeric {n}");
        }
    }
}
