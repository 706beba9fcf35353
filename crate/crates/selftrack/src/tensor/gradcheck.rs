//! Central finite-difference gradient checking.
//!
//! The checker only evaluates the forward function, so it stays independent
//! of the backward rules it verifies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-5,
            rel: 1e-4,
            abs: 1e-7,
        }
    }
}

/// An element passes when its absolute error is under `tol.abs` or its
/// relative error (against the larger magnitude) is under `tol.rel`.
pub fn within(analytic: f64, numeric: f64, tol: Tolerance) -> (bool, f64, f64) {
    let abs = (analytic - numeric).abs();
    let rel = abs / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
    (abs <= tol.abs || rel <= tol.rel, abs, rel)
}

/// Compares analytic gradients of the scalar `f(inputs)` against central
/// differences for every input element.
pub fn check<F>(f: F, inputs: &[Tensor], tol: Tolerance) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .wrt(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t)).collect();
        f(&tape, &vars)?.item()
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        failures: Vec::new(),
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + tol.step;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - tol.step;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * tol.step);
            let (ok, abs, rel) = within(analytic[i][j], numeric, tol);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if abs > tol.abs {
                report.max_rel_err = report.max_rel_err.max(rel);
            }
            if !ok {
                report.failures.push(format!(
                    "input {i}[{j}]: analytic {} vs numeric {numeric}",
                    analytic[i][j]
                ));
            }
        }
    }
    Ok(report)
}

/// Builds a scalar from `inputs` through the op under test.
pub type OpFn = for<'t> fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>;

/// A differentiable op with a generator of valid random inputs. Inputs stay
/// away from kinks and domain edges so central differences are meaningful.
#[derive(Clone, Copy)]
pub struct OpCase {
    pub name: &'static str,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    pub f: OpFn,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive extents")
}

/// Values in `[-2, -0.1] ∪ [0.1, 2]`.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape, 0.1, 2.0);
    for x in t.data_mut() {
        if rng.random_bool(0.5) {
            *x = -*x;
        }
    }
    t
}

fn reduce<'t>(v: Var<'t>) -> Result<Var<'t>> {
    v.mul(v)?.scale(0.5).sum().add(v.sum().scale(0.3))
}

fn two(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![rand_tensor(rng, &[3, 4], -2.0, 2.0), rand_tensor(rng, &[3, 4], -2.0, 2.0)]
}

fn one(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![rand_tensor(rng, &[3, 4], -2.0, 2.0)]
}

fn positive(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![rand_tensor(rng, &[3, 4], 0.2, 2.0)]
}

fn nonzero(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![off_zero(rng, &[3, 4])]
}

fn separated(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let a = rand_tensor(rng, &[3, 4], -2.0, 2.0);
    let gap = off_zero(rng, &[3, 4]);
    let b = Tensor::new(&[3, 4], a.data().iter().zip(gap.data()).map(|(x, g)| x + g).collect())
        .expect("same shape");
    vec![a, b]
}

/// Every differentiable op of the tape, one case each.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase { name: "add", inputs: two, f: |_, v| reduce(v[0].add(v[1])?) },
        OpCase {
            name: "add_broadcast",
            inputs: |r| vec![rand_tensor(r, &[3, 4], -2.0, 2.0), rand_tensor(r, &[4], -2.0, 2.0)],
            f: |_, v| reduce(v[0].add(v[1])?),
        },
        OpCase { name: "sub", inputs: two, f: |_, v| reduce(v[0].sub(v[1])?) },
        OpCase {
            name: "mul_broadcast",
            inputs: |r| vec![rand_tensor(r, &[3, 4], -2.0, 2.0), rand_tensor(r, &[3, 1], -2.0, 2.0)],
            f: |_, v| reduce(v[0].mul(v[1])?),
        },
        OpCase {
            name: "div",
            inputs: |r| vec![rand_tensor(r, &[3, 4], -2.0, 2.0), off_zero(r, &[3, 4])],
            f: |_, v| reduce(v[0].div(v[1])?),
        },
        OpCase { name: "maximum", inputs: separated, f: |_, v| reduce(v[0].maximum(v[1])?) },
        OpCase { name: "minimum", inputs: separated, f: |_, v| reduce(v[0].minimum(v[1])?) },
        OpCase { name: "neg", inputs: one, f: |_, v| reduce(v[0].neg()) },
        OpCase { name: "scale", inputs: one, f: |_, v| reduce(v[0].scale(-1.7)) },
        OpCase { name: "add_scalar", inputs: one, f: |_, v| reduce(v[0].add_scalar(0.4)) },
        OpCase { name: "sigmoid", inputs: one, f: |_, v| reduce(v[0].sigmoid()) },
        OpCase { name: "relu", inputs: nonzero, f: |_, v| reduce(v[0].relu()) },
        OpCase { name: "exp", inputs: one, f: |_, v| reduce(v[0].exp()) },
        OpCase { name: "ln", inputs: positive, f: |_, v| reduce(v[0].ln()) },
        OpCase { name: "softplus", inputs: one, f: |_, v| reduce(v[0].softplus()) },
        OpCase { name: "abs", inputs: nonzero, f: |_, v| reduce(v[0].abs()) },
        OpCase { name: "powf", inputs: positive, f: |_, v| reduce(v[0].powf(1.7)) },
        OpCase { name: "sqrt", inputs: positive, f: |_, v| reduce(v[0].sqrt()) },
        OpCase {
            name: "logit",
            inputs: |r| vec![rand_tensor(r, &[3, 4], 0.05, 0.95)],
            f: |_, v| reduce(v[0].logit(1e-5)),
        },
        OpCase {
            name: "matmul",
            inputs: |r| vec![rand_tensor(r, &[3, 4], -2.0, 2.0), rand_tensor(r, &[4, 2], -2.0, 2.0)],
            f: |_, v| reduce(v[0].matmul(v[1])?),
        },
        OpCase { name: "matmul_t", inputs: two, f: |_, v| reduce(v[0].matmul_t(v[1])?) },
        OpCase { name: "transpose", inputs: one, f: |_, v| reduce(v[0].transpose()?.matmul(v[0])?) },
        OpCase { name: "sum", inputs: one, f: |_, v| v[0].sum().mul(v[0].sum()) },
        OpCase { name: "mean", inputs: one, f: |_, v| v[0].mean().mul(v[0].sum()) },
        OpCase { name: "sum_axis0", inputs: one, f: |_, v| reduce(v[0].sum_axis(0)?) },
        OpCase { name: "sum_axis1", inputs: one, f: |_, v| reduce(v[0].sum_axis(1)?) },
        OpCase { name: "softmax_axis1", inputs: one, f: |_, v| reduce(v[0].softmax(1)?.mul(v[0])?) },
        OpCase { name: "softmax_axis0", inputs: one, f: |_, v| reduce(v[0].softmax(0)?.mul(v[0])?) },
        OpCase {
            name: "layer_norm",
            inputs: |r| {
                vec![
                    rand_tensor(r, &[3, 4], -2.0, 2.0),
                    rand_tensor(r, &[4], 0.5, 1.5),
                    rand_tensor(r, &[4], -0.5, 0.5),
                ]
            },
            f: |_, v| reduce(v[0].layer_norm(v[1], v[2], 1e-5)?.mul(v[0])?),
        },
        OpCase {
            name: "concat",
            inputs: |r| vec![rand_tensor(r, &[3, 4], -2.0, 2.0), rand_tensor(r, &[3, 2], -2.0, 2.0)],
            f: |_, v| reduce(Var::concat(&[v[0], v[1].exp()], 1)?),
        },
        OpCase { name: "slice", inputs: one, f: |_, v| reduce(v[0].slice(1, 1, 3)?.exp()) },
        OpCase { name: "gather_rows", inputs: one, f: |_, v| reduce(v[0].gather_rows(&[2, 0, 2])?.exp()) },
        OpCase { name: "reshape", inputs: one, f: |_, v| reduce(v[0].reshape(&[2, 6])?.softmax(1)?) },
        OpCase {
            name: "broadcast_to",
            inputs: |r| vec![rand_tensor(r, &[1, 4], -2.0, 2.0)],
            f: |_, v| reduce(v[0].broadcast_to(&[3, 4])?.mul(v[0])?.exp()),
        },
    ]
}

/// Runs `case` on `trials` random inputs drawn from `seed`.
pub fn check_case(case: &OpCase, seed: u64, trials: usize, tol: Tolerance) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        failures: Vec::new(),
    };
    for trial in 0..trials {
        let inputs = (case.inputs)(&mut rng);
        let r = check(case.f, &inputs, tol)?;
        total.checked += r.checked;
        total.max_rel_err = total.max_rel_err.max(r.max_rel_err);
        total.max_abs_err = total.max_abs_err.max(r.max_abs_err);
        total
            .failures
            .extend(r.failures.into_iter().map(|f| format!("trial {trial}: {f}")));
    }
    Ok(total)
}
