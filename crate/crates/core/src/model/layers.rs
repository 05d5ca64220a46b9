//! Transformer building blocks. Each block only stores parameter ids; the
//! forward passes record onto a caller-supplied tape.

use std::sync::Arc;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Scalar, SeededRng, Tape, Tensor, Var};

use super::config::Activation;

/// Training mode carries the dropout generator; evaluation is deterministic.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut SeededRng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub(crate) struct Init<'s> {
    pub store: &'s mut ParamStore,
    pub rng: SeededRng,
    pub embed_std: f64,
}

impl Init<'_> {
    fn normal(&mut self, name: &str, shape: Vec<usize>, std: f64) -> Result<ParamId> {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| (rng.normal() * std) as f32);
        self.store.register(name, t)
    }

    fn filled(&mut self, name: &str, shape: Vec<usize>, value: f32) -> Result<ParamId> {
        self.store.register(name, Tensor::from_fn(shape, |_| value))
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        self.linear_scaled(name, fan_in, fan_out, 1.0)
    }

    pub fn linear_scaled(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
    ) -> Result<Linear> {
        let std = gain / (fan_in as f64).sqrt();
        Ok(Linear {
            w: self.normal(&format!("{name}.w"), vec![fan_in, fan_out], std)?,
            b: self.filled(&format!("{name}.b"), vec![fan_out], 0.0)?,
        })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gain: self.filled(&format!("{name}.gain"), vec![dim], 1.0)?,
            bias: self.filled(&format!("{name}.bias"), vec![dim], 0.0)?,
        })
    }

    pub fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let std = self.embed_std;
        self.normal(name, vec![rows, cols], std)
    }

    pub fn bias(&mut self, name: &str, dim: usize) -> Result<ParamId> {
        self.filled(name, vec![dim], 0.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward<'a, T: Scalar>(
        &self,
        t: &mut Tape<'a, T>,
        p: &'a ParamStore,
        x: Var,
    ) -> Result<Var> {
        let w = t.param(p, self.w);
        let b = t.param(p, self.b);
        let y = t.matmul(x, w)?;
        t.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn forward<'a, T: Scalar>(
        &self,
        t: &mut Tape<'a, T>,
        p: &'a ParamStore,
        x: Var,
        eps: f64,
    ) -> Result<Var> {
        let g = t.param(p, self.gain);
        let b = t.param(p, self.bias);
        t.layer_norm(x, g, b, eps)
    }
}

pub fn activate<T: Scalar>(t: &mut Tape<'_, T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Gelu => t.gelu(x),
        Activation::Tanh => t.tanh(x),
        Activation::Identity => x,
    }
}

pub fn dropout<T: Scalar>(
    t: &mut Tape<'_, T>,
    x: Var,
    rate: f64,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let Mode::Train(rng) = mode else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    let (r, c) = t.dims(x);
    let keep = T::cast(1.0 / (1.0 - rate));
    let mask = (0..r * c)
        .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
        .collect();
    let m = t.constant(r, c, mask)?;
    t.mul(x, m)
}

/// `mask[i * keys + j]` is true when query `i` may attend to key `j`.
pub fn causal_mask(n: usize) -> Arc<[bool]> {
    (0..n * n).map(|k| k % n <= k / n).collect()
}

pub fn key_padding_mask(queries: usize, key_is_pad: &[bool]) -> Arc<[bool]> {
    let keys = key_is_pad.len();
    (0..queries * keys).map(|k| !key_is_pad[k % keys]).collect()
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub(crate) fn new(
        init: &mut Init<'_>,
        name: &str,
        hidden: usize,
        heads: usize,
        out_gain: f64,
    ) -> Result<Self> {
        Ok(Self {
            q: init.linear(&format!("{name}.q"), hidden, hidden)?,
            k: init.linear(&format!("{name}.k"), hidden, hidden)?,
            v: init.linear(&format!("{name}.v"), hidden, hidden)?,
            o: init.linear_scaled(&format!("{name}.o"), hidden, hidden, out_gain)?,
            heads,
        })
    }

    /// Multi-head scaled dot-product attention. Attention probability
    /// matrices are appended to `probs` when given.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<'a, T: Scalar>(
        &self,
        t: &mut Tape<'a, T>,
        p: &'a ParamStore,
        queries: Var,
        keys: Var,
        mask: Option<&Arc<[bool]>>,
        mut probs: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let q = self.q.forward(t, p, queries)?;
        let k = self.k.forward(t, p, keys)?;
        let v = self.v.forward(t, p, keys)?;
        let hidden = t.dims(q).1;
        let dh = hidden / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    t.slice_cols(q, h * dh, dh)?,
                    t.slice_cols(k, h * dh, dh)?,
                    t.slice_cols(v, h * dh, dh)?,
                )
            };
            let s = t.matmul_nt(qh, kh)?;
            let s = t.scale(s, scale);
            let a = t.masked_softmax_rows(s, mask);
            if let Some(pv) = probs.as_deref_mut() {
                pv.push(a);
            }
            outs.push(t.matmul(a, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            t.concat_cols(&outs)?
        };
        self.o.forward(t, p, merged)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn forward<'a, T: Scalar>(
        &self,
        t: &mut Tape<'a, T>,
        p: &'a ParamStore,
        x: Var,
    ) -> Result<Var> {
        let h = self.up.forward(t, p, x)?;
        let h = t.gelu(h);
        self.down.forward(t, p, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub ln_attn: LayerNorm,
    pub attn: Attention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub(crate) fn new(
        init: &mut Init<'_>,
        name: &str,
        hidden: usize,
        heads: usize,
        ffn: usize,
        layers: usize,
    ) -> Result<Self> {
        let out_gain = 1.0 / ((2 * layers) as f64).sqrt();
        Ok(Self {
            ln_attn: init.layer_norm(&format!("{name}.ln_attn"), hidden)?,
            attn: Attention::new(init, &format!("{name}.attn"), hidden, heads, out_gain)?,
            ln_ffn: init.layer_norm(&format!("{name}.ln_ffn"), hidden)?,
            ffn: FeedForward {
                up: init.linear(&format!("{name}.ffn.up"), hidden, ffn)?,
                down: init.linear_scaled(&format!("{name}.ffn.down"), ffn, hidden, out_gain)?,
            },
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<'a, T: Scalar>(
        &self,
        t: &mut Tape<'a, T>,
        p: &'a ParamStore,
        x: Var,
        mask: Option<&Arc<[bool]>>,
        eps: f64,
        dropout_rate: f64,
        mode: &mut Mode<'_>,
        probs: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let h = self.ln_attn.forward(t, p, x, eps)?;
        let a = self.attn.forward(t, p, h, h, mask, probs)?;
        let a = dropout(t, a, dropout_rate, mode)?;
        let x = t.add(x, a)?;
        let h = self.ln_ffn.forward(t, p, x, eps)?;
        let f = self.ffn.forward(t, p, h)?;
        let f = dropout(t, f, dropout_rate, mode)?;
        t.add(x, f)
    }
}

/// Pre-norm decoder block: causal self-attention, cross-attention over the
/// memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_cross: LayerNorm,
    pub cross_attn: Attention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    pub(crate) fn new(
        init: &mut Init<'_>,
        name: &str,
        hidden: usize,
        heads: usize,
        ffn: usize,
        layers: usize,
    ) -> Result<Self> {
        let out_gain = 1.0 / ((3 * layers) as f64).sqrt();
        Ok(Self {
            ln_self: init.layer_norm(&format!("{name}.ln_self"), hidden)?,
            self_attn: Attention::new(init, &format!("{name}.self_attn"), hidden, heads, out_gain)?,
            ln_cross: init.layer_norm(&format!("{name}.ln_cross"), hidden)?,
            cross_attn: Attention::new(
                init,
                &format!("{name}.cross_attn"),
                hidden,
                heads,
                out_gain,
            )?,
            ln_ffn: init.layer_norm(&format!("{name}.ln_ffn"), hidden)?,
            ffn: FeedForward {
                up: init.linear(&format!("{name}.ffn.up"), hidden, ffn)?,
                down: init.linear_scaled(&format!("{name}.ffn.down"), ffn, hidden, out_gain)?,
            },
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<'a, T: Scalar>(
        &self,
        t: &mut Tape<'a, T>,
        p: &'a ParamStore,
        x: Var,
        memory: Var,
        causal: &Arc<[bool]>,
        eps: f64,
        dropout_rate: f64,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let h = self.ln_self.forward(t, p, x, eps)?;
        let a = self.self_attn.forward(t, p, h, h, Some(causal), None)?;
        let a = dropout(t, a, dropout_rate, mode)?;
        let x = t.add(x, a)?;
        let h = self.ln_cross.forward(t, p, x, eps)?;
        let c = self.cross_attn.forward(t, p, h, memory, None, None)?;
        let c = dropout(t, c, dropout_rate, mode)?;
        let x = t.add(x, c)?;
        let h = self.ln_ffn.forward(t, p, x, eps)?;
        let f = self.ffn.forward(t, p, h)?;
        let f = dropout(t, f, dropout_rate, mode)?;
        t.add(x, f)
    }
}

/// Fixed sinusoidal position table, `rows × dim`.
pub fn sinusoidal_table(rows: usize, dim: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * dim];
    for pos in 0..rows {
        for i in 0..dim {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            out[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    out
}
