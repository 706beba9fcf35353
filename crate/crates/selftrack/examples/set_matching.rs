//! Hungarian assignment and the set-prediction loss it drives.
//!
//! ```bash
//! cargo run --example set_matching
//! ```

use selftrack::geometry::{boxes_to_tensor, BBox};
use selftrack::matching::{hungarian, set_criterion, CostMatrix, FocalParams, LossWeights};
use selftrack::tensor::{Tape, Tensor};

fn main() -> selftrack::Result<()> {
    let costs = CostMatrix::new(3, 3, vec![4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0])?;
    let a = hungarian(&costs);
    println!("assignment {:?}, cost {}", a.pairs, a.total_cost(&costs));

    let preds = [
        BBox::new(0.30, 0.30, 0.20, 0.20),
        BBox::new(0.70, 0.65, 0.15, 0.20),
        BBox::new(0.50, 0.10, 0.10, 0.10),
    ];
    let gts = [BBox::new(0.72, 0.66, 0.15, 0.18), BBox::new(0.28, 0.31, 0.22, 0.20)];
    let tape = Tape::new();
    let boxes = tape.leaf(&boxes_to_tensor(&preds).with_requires_grad(true));
    let logits = tape.leaf(&Tensor::new(&[3, 1], vec![1.0, 0.5, -2.0])?.with_requires_grad(true));
    let (loss, assignment) = set_criterion(boxes, logits, &gts, &LossWeights::default(), FocalParams::default())?;
    println!("prediction -> ground truth: {:?}", assignment.pairs);
    println!(
        "total {:.4} (focal {:.4}, l1 {:.4}, giou {:.4})",
        loss.total.item()?,
        loss.focal.item()?,
        loss.l1.item()?,
        loss.giou.item()?
    );
    let grads = tape.backward(loss.total)?;
    println!("dL/dlogits = {:?}", grads.wrt(logits).unwrap_or(&[]));
    Ok(())
}
