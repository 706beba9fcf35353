//! Reverse-mode gradients on the tape, checked against central differences.
//!
//! ```bash
//! cargo run --example autodiff
//! ```

use selftrack::tensor::gradcheck::{check, Tolerance};
use selftrack::tensor::{Tape, Tensor};

fn main() -> selftrack::Result<()> {
    let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let w = Tensor::new(&[3, 2], vec![1.0, -0.5, 0.25, 0.75, -1.5, 0.2])?;

    let tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_requires_grad(true));
    let wv = tape.leaf(&w.clone().with_requires_grad(true));
    let y = xv.matmul(wv)?.sigmoid().softmax(1)?;
    let loss = y.mul(y)?.sum();
    let grads = tape.backward(loss)?;
    println!("loss = {:.6}", loss.item()?);
    println!("dL/dx = {:?}", grads.wrt(xv).unwrap_or(&[]));
    println!("dL/dw = {:?}", grads.wrt(wv).unwrap_or(&[]));

    let report = check(
        |_, v| {
            let y = v[0].matmul(v[1])?.sigmoid().softmax(1)?;
            y.mul(y).map(|z| z.sum())
        },
        &[x, w],
        Tolerance::default(),
    )?;
    println!(
        "finite-difference check: {} coordinates, {} failures",
        report.checked,
        report.failures.len()
    );
    Ok(())
}
