//! Layer building blocks shared by the encoders and the fusion transformer.
//!
//! Layers register their tensors under a dotted prefix at construction and
//! look them up by id when applied to a [`Graph`].

use ndarray::Array2;

use crate::autograd::{Graph, Var};
use crate::error::{GmtError, Result};
use crate::params::{Initializer, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    weight: usize,
    bias: Option<usize>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), init.fan_in_uniform(d_in, d_out));
        let bias = bias.then(|| store.insert(format!("{name}.bias"), Array2::zeros((1, d_out))));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    gamma: usize,
    beta: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.insert(format!("{name}.gamma"), Array2::ones((1, dim))),
            beta: store.insert(format!("{name}.beta"), Array2::zeros((1, dim))),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head scaled dot-product attention, `softmax(QKᵀ/√d_k)V` per head,
/// followed by an output projection. Queries come from one token set and
/// keys/values from another (the same one for self-attention).
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        d_query: usize,
        d_key: usize,
        dim: usize,
        heads: usize,
    ) -> Self {
        assert!(dim % heads == 0, "attention dim {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, init, &format!("{name}.q"), d_query, dim, false),
            k: Linear::new(store, init, &format!("{name}.k"), d_key, dim, false),
            v: Linear::new(store, init, &format!("{name}.v"), d_key, dim, false),
            out: Linear::new(store, init, &format!("{name}.out"), dim, dim, false),
            heads,
            dim,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// `key_mask[j] == false` removes key token `j` from every query's softmax.
    pub fn apply(
        &self,
        g: &mut Graph,
        queries: Var,
        keys: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        if let Some(m) = key_mask {
            if !m.iter().any(|&b| b) {
                return Err(GmtError::AllTokensMasked);
            }
        }
        let q = self.q.apply(g, queries);
        let k = self.k.apply(g, keys);
        let v = self.v.apply(g, keys);
        let d_head = self.dim / self.heads;
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * d_head, (h + 1) * d_head);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, lo, hi), g.slice_cols(k, lo, hi), g.slice_cols(v, lo, hi))
            };
            let logits = g.matmul_t(qh, kh);
            let logits = g.scale(logits, scale);
            let probs = g.softmax(logits, key_mask);
            outputs.push(g.matmul(probs, vh));
        }
        let joined = if outputs.len() == 1 {
            outputs[0]
        } else {
            g.concat_cols(&outputs)
        };
        Ok(self.out.apply(g, joined))
    }
}

/// Two-layer GELU MLP.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            up: Linear::new(store, init, &format!("{name}.up"), dim, hidden, true),
            down: Linear::new(store, init, &format!("{name}.down"), hidden, dim, true),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.up.apply(g, x);
        let h = g.gelu(h);
        self.down.apply(g, h)
    }
}

/// Shared per-point MLP (linear + GELU per layer), as used inside set abstraction.
#[derive(Debug, Clone)]
pub struct PointMlp {
    layers: Vec<Linear>,
}

impl PointMlp {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        d_in: usize,
        widths: &[usize],
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut d = d_in;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(store, init, &format!("{name}.{i}"), d, w, true));
            d = w;
        }
        Self { layers }
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }

    pub fn apply(&self, g: &mut Graph, mut x: Var) -> Var {
        for layer in &self.layers {
            x = layer.apply(g, x);
            x = g.gelu(x);
        }
        x
    }
}

/// Sinusoidal encoding of integer positions, `rows × dim`.
pub fn sinusoidal_encoding(rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
        let angle = pos as f64 * freq;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
