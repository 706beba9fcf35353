//! Parameterized building blocks: linear maps, MLPs, layer norm and
//! multi-head dot-product attention.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{ParamId, ParamStore, Result, Tape, Tensor, Var};

pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    pub fn xavier(&mut self, name: String, fan_in: usize, fan_out: usize) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.store
            .add(name, Tensor::new(&[fan_in, fan_out], data).expect("positive extents"))
    }

    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.add(name, Tensor::new(shape, data).expect("positive extents"))
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: init.xavier(format!("{name}.w"), fan_in, fan_out),
            b: init.constant(format!("{name}.b"), &[fan_out], 0.0),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(tape.param(store, self.w))?
            .add(tape.param(store, self.b))
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Two linear maps with a ReLU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, dims: [usize; 3]) -> Self {
        Mlp {
            fc1: Linear::new(init, &format!("{name}.0"), dims[0], dims[1]),
            fc2: Linear::new(init, &format!("{name}.1"), dims[1], dims[2]),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.fc1.forward(tape, store, x)?.relu();
        self.fc2.forward(tape, store, h)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [self.fc1.ids(), self.fc2.ids()].concat()
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl Norm {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, d: usize) -> Self {
        Norm {
            gain: init.constant(format!("{name}.gain"), &[d], 1.0),
            bias: init.constant(format!("{name}.bias"), &[d], 0.0),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(
            tape.param(store, self.gain),
            tape.param(store, self.bias),
            NORM_EPS,
        )
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}

/// Multi-head attention without projection biases.
#[derive(Clone, Debug)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl Attention {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, d: usize, heads: usize) -> Self {
        Attention {
            wq: init.xavier(format!("{name}.wq"), d, d),
            wk: init.xavier(format!("{name}.wk"), d, d),
            wv: init.xavier(format!("{name}.wv"), d, d),
            wo: init.xavier(format!("{name}.wo"), d, d),
            heads,
        }
    }

    /// `softmax(q Wq (k Wk)ᵀ / √d_h + bias) v Wv`, per head, then `Wo`.
    /// `bias` is `[n_q, n_k]` and shared by all heads.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        q: Var<'t>,
        k: Var<'t>,
        v: Var<'t>,
        bias: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let d = q.shape()[1];
        let dh = d / self.heads;
        let qp = q.matmul(tape.param(store, self.wq))?;
        let kp = k.matmul(tape.param(store, self.wk))?;
        let vp = v.matmul(tape.param(store, self.wv))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = if self.heads == 1 { qp } else { qp.slice(1, lo, hi)? };
            let kh = if self.heads == 1 { kp } else { kp.slice(1, lo, hi)? };
            let vh = if self.heads == 1 { vp } else { vp.slice(1, lo, hi)? };
            let mut logits = qh.matmul_t(kh)?.scale(scale);
            if let Some(b) = bias {
                logits = logits.add(b)?;
            }
            outs.push(logits.softmax(1)?.matmul(vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            Var::concat(&outs, 1)?
        };
        merged.matmul(tape.param(store, self.wo))
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.wq, self.wk, self.wv, self.wo]
    }
}

/// Post-norm self-attention encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: Attention,
    pub norm1: Norm,
    pub ffn: Mlp,
    pub norm2: Norm,
}

impl EncoderLayer {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        EncoderLayer {
            attn: Attention::new(init, &format!("{name}.attn"), d, heads),
            norm1: Norm::new(init, &format!("{name}.norm1"), d),
            ffn: Mlp::new(init, &format!("{name}.ffn"), [d, ffn, d]),
            norm2: Norm::new(init, &format!("{name}.norm2"), d),
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        pos: Var<'t>,
    ) -> Result<Var<'t>> {
        let qk = x.add(pos)?;
        let a = self.attn.forward(tape, store, qk, qk, x, None)?;
        let x = self.norm1.forward(tape, store, x.add(a)?)?;
        let f = self.ffn.forward(tape, store, x)?;
        self.norm2.forward(tape, store, x.add(f)?)
    }
}

/// Post-norm decoder layer: query self-attention, cross-attention to the
/// encoder memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub norm1: Norm,
    pub cross_attn: Attention,
    pub norm2: Norm,
    pub ffn: Mlp,
    pub norm3: Norm,
}

impl DecoderLayer {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        DecoderLayer {
            self_attn: Attention::new(init, &format!("{name}.self"), d, heads),
            norm1: Norm::new(init, &format!("{name}.norm1"), d),
            cross_attn: Attention::new(init, &format!("{name}.cross"), d, heads),
            norm2: Norm::new(init, &format!("{name}.norm2"), d),
            ffn: Mlp::new(init, &format!("{name}.ffn"), [d, ffn, d]),
            norm3: Norm::new(init, &format!("{name}.norm3"), d),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        pos: Var<'t>,
        mem_key: Var<'t>,
        mem_value: Var<'t>,
        bias: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let qk = x.add(pos)?;
        let a = self.self_attn.forward(tape, store, qk, qk, x, None)?;
        let x = self.norm1.forward(tape, store, x.add(a)?)?;
        let q = x.add(pos)?;
        let c = self.cross_attn.forward(tape, store, q, mem_key, mem_value, bias)?;
        let x = self.norm2.forward(tape, store, x.add(c)?)?;
        let f = self.ffn.forward(tape, store, x)?;
        self.norm3.forward(tape, store, x.add(f)?)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        v.extend(self.self_attn.ids());
        v.extend(self.norm1.ids());
        v.extend(self.cross_attn.ids());
        v.extend(self.norm2.ids());
        v.extend(self.ffn.ids());
        v.extend(self.norm3.ids());
        v
    }
}
