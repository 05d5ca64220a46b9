//! The paraphrase network: an edit encoder over the packed pair, BOS
//! pooling, a two-affine bottleneck producing the edit vector `z`, a
//! conditioned encoder-decoder generator, and the MLM / entailment / score
//! heads.
//!
//! All forward functions record onto a caller-owned [`Tape`] so the same
//! code serves training (f32), gradient checks (f64) and inference.

mod config;
pub mod layers;

use std::path::Path;
use std::sync::Arc;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, SeededRng, Tape, Tensor, Var};
use crate::text::{PackedPair, TokenId, BOS, PAD};

pub use config::{Activation, ModelConfig, PositionEncoding};
pub use layers::Mode;
use layers::{
    activate, causal_mask, dropout, key_padding_mask, DecoderBlock, EncoderBlock, Init, LayerNorm,
    Linear,
};

/// Parameter name prefixes, one per component. Ablation checks hash the
/// parameters under a prefix.
pub mod prefix {
    pub const EDIT: &str = "edit.";
    pub const BOTTLENECK: &str = "bottleneck.";
    pub const COND: &str = "cond.";
    pub const S2S: &str = "s2s.";
    pub const MLM: &str = "head.mlm.";
    pub const ENTAIL: &str = "head.entail.";
    pub const SCORE: &str = "head.score.";
}

/// Run metadata stored alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    /// Fingerprint of the vocabulary the model was trained with.
    pub vocab_fingerprint: Option<String>,
    /// Affine map from score-head output back to the score scale.
    pub score_mean: f64,
    pub score_std: f64,
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self {
            vocab_fingerprint: None,
            score_mean: 0.0,
            score_std: 1.0,
        }
    }
}

impl ModelMeta {
    fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            (
                "meta.score_mean".to_string(),
                format!("{:?}", self.score_mean),
            ),
            (
                "meta.score_std".to_string(),
                format!("{:?}", self.score_std),
            ),
        ];
        if let Some(fp) = &self.vocab_fingerprint {
            kv.push(("meta.vocab_fingerprint".to_string(), fp.clone()));
        }
        kv
    }

    fn from_kv(kv: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        let num = |k: &str, default: f64| -> Result<f64> {
            match kv.get(k) {
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Format(format!("bad value {v:?} for {k}"))),
                None => Ok(default),
            }
        };
        Ok(Self {
            vocab_fingerprint: kv.get("meta.vocab_fingerprint").cloned(),
            score_mean: num("meta.score_mean", 0.0)?,
            score_std: num("meta.score_std", 1.0)?,
        })
    }
}

/// The bottlenecked edit representation of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EditVector(pub Vec<f32>);

#[derive(Clone, Debug)]
struct Embeddings {
    tokens: crate::tensor::ParamId,
    positions: Option<crate::tensor::ParamId>,
    segments: Option<crate::tensor::ParamId>,
}

#[derive(Clone, Debug)]
struct MlmHead {
    dense: Linear,
    ln: LayerNorm,
    /// Output projection when embeddings are not tied.
    out: Option<Linear>,
    bias: crate::tensor::ParamId,
}

#[derive(Clone, Debug)]
pub struct ParaBleuModel {
    config: ModelConfig,
    pub meta: ModelMeta,
    params: ParamStore,
    edit_emb: Embeddings,
    edit_blocks: Vec<EncoderBlock>,
    edit_ln: LayerNorm,
    bottleneck_in: Linear,
    bottleneck_out: Linear,
    cond: Linear,
    s2s_emb: Embeddings,
    s2s_enc: Vec<EncoderBlock>,
    s2s_enc_ln: LayerNorm,
    s2s_dec: Vec<DecoderBlock>,
    s2s_dec_ln: LayerNorm,
    s2s_out: Option<Linear>,
    s2s_out_bias: crate::tensor::ParamId,
    mlm: MlmHead,
    entail: Linear,
    score: Linear,
    sinusoid: Option<Arc<[f32]>>,
}

impl ParaBleuModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (h, v) = (c.hidden, c.vocab_size);
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: SeededRng::new(seed),
            embed_std: c.init_std,
        };
        let learned = c.positions == PositionEncoding::Learned;

        let edit_emb = Embeddings {
            tokens: init.embedding("edit.tok_emb", v, h)?,
            positions: if learned {
                Some(init.embedding("edit.pos_emb", c.max_len, h)?)
            } else {
                None
            },
            segments: Some(init.embedding("edit.seg_emb", 2, h)?),
        };
        let edit_blocks = (0..c.layers_enc)
            .map(|i| {
                EncoderBlock::new(
                    &mut init,
                    &format!("edit.layer{i}"),
                    h,
                    c.heads,
                    c.ffn_dim,
                    c.layers_enc,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let edit_ln = init.layer_norm("edit.ln_final", h)?;

        let bottleneck_in = init.linear("bottleneck.in", h, c.bottleneck)?;
        let bottleneck_out = init.linear("bottleneck.out", c.bottleneck, c.bottleneck)?;
        let cond = init.linear("cond.proj", c.bottleneck, h)?;

        let s2s_emb = Embeddings {
            tokens: init.embedding("s2s.tok_emb", v, h)?,
            positions: if learned {
                Some(init.embedding("s2s.pos_emb", c.max_len, h)?)
            } else {
                None
            },
            segments: None,
        };
        let s2s_enc = (0..c.layers_s2s_enc)
            .map(|i| {
                EncoderBlock::new(
                    &mut init,
                    &format!("s2s.enc{i}"),
                    h,
                    c.heads,
                    c.ffn_dim,
                    c.layers_s2s_enc,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let s2s_enc_ln = init.layer_norm("s2s.enc_ln", h)?;
        let s2s_dec = (0..c.layers_s2s_dec)
            .map(|i| {
                DecoderBlock::new(
                    &mut init,
                    &format!("s2s.dec{i}"),
                    h,
                    c.heads,
                    c.ffn_dim,
                    c.layers_s2s_dec,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let s2s_dec_ln = init.layer_norm("s2s.dec_ln", h)?;
        let s2s_out = if c.tie_embeddings {
            None
        } else {
            Some(init.linear("s2s.out", h, v)?)
        };
        let s2s_out_bias = init.bias("s2s.out_bias", v)?;

        let mlm = MlmHead {
            dense: init.linear("head.mlm.dense", h, h)?,
            ln: init.layer_norm("head.mlm.ln", h)?,
            out: if c.tie_embeddings {
                None
            } else {
                Some(init.linear("head.mlm.out", h, v)?)
            },
            bias: init.bias("head.mlm.bias", v)?,
        };
        let entail = init.linear("head.entail", h, 1)?;
        let score = init.linear("head.score", h, c.output_dim)?;

        let sinusoid = (!learned).then(|| layers::sinusoidal_table(c.max_len, h).into());
        Ok(Self {
            config,
            meta: ModelMeta::default(),
            params,
            edit_emb,
            edit_blocks,
            edit_ln,
            bottleneck_in,
            bottleneck_out,
            cond,
            s2s_emb,
            s2s_enc,
            s2s_enc_ln,
            s2s_dec,
            s2s_dec_ln,
            s2s_out,
            s2s_out_bias,
            mlm,
            entail,
            score,
            sinusoid,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// SHA-256 of every parameter whose name starts with `prefix`.
    pub fn digest(&self, prefix: &str) -> String {
        self.params.digest(|n| n.starts_with(prefix))
    }

    /// Turns gradient tracking on or off for every parameter under `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, on: bool) {
        let ids: Vec<_> = self
            .params
            .ids()
            .filter(|&id| self.params.name(id).starts_with(prefix))
            .collect();
        for id in ids {
            self.params.get_mut(id).set_requires_grad(on);
        }
    }

    fn check_len(&self, n: usize, what: &str) -> Result<()> {
        if n == 0 || n > self.config.max_len {
            return Err(Error::Contract(format!(
                "{what} of length {n} outside 1..={}",
                self.config.max_len
            )));
        }
        Ok(())
    }

    fn embed<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        emb: &Embeddings,
        ids: &[TokenId],
        segments: Option<&[u8]>,
    ) -> Result<Var> {
        let p = &self.params;
        let table = t.param(p, emb.tokens);
        let mut x = t.gather_rows(table, ids)?;
        let n = ids.len();
        let pos = match (emb.positions, &self.sinusoid) {
            (Some(id), _) => {
                let table = t.param(p, id);
                t.slice_rows(table, 0, n)?
            }
            (None, Some(s)) => {
                t.constant_f32(n, self.config.hidden, &s[..n * self.config.hidden])?
            }
            (None, None) => unreachable!("positions are either learned or sinusoidal"),
        };
        x = t.add(x, pos)?;
        if let (Some(id), Some(seg)) = (emb.segments, segments) {
            let table = t.param(p, id);
            let idx: Vec<usize> = seg.iter().map(|&s| s as usize).collect();
            let s = t.gather_rows(table, &idx)?;
            x = t.add(x, s)?;
        }
        Ok(x)
    }

    /// Hidden states `[len × H]` of the edit encoder over a packed pair.
    /// Attention is unrestricted except that PAD keys are masked out.
    pub fn edit_encode<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        pair: &PackedPair,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        self.edit_encode_impl(t, &pair.ids, &pair.segments, mode, None)
    }

    /// Like [`edit_encode`](Self::edit_encode) but also returns every
    /// attention probability matrix, layer-major then head.
    pub fn edit_encode_with_attention<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        pair: &PackedPair,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Vec<Var>)> {
        let mut probs = Vec::new();
        let h = self.edit_encode_impl(t, &pair.ids, &pair.segments, mode, Some(&mut probs))?;
        Ok((h, probs))
    }

    /// Edit encoder over raw ids and segments, e.g. after MLM masking.
    pub fn edit_encode_ids<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        ids: &[TokenId],
        segments: &[u8],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        self.edit_encode_impl(t, ids, segments, mode, None)
    }

    fn edit_encode_impl<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        ids: &[TokenId],
        segments: &[u8],
        mode: &mut Mode<'_>,
        mut probs: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        self.check_len(ids.len(), "packed pair")?;
        if segments.len() != ids.len() {
            return Err(Error::Dimension(format!(
                "{} segment ids for {} tokens",
                segments.len(),
                ids.len()
            )));
        }
        let c = &self.config;
        let mut x = self.embed(t, &self.edit_emb, ids, Some(segments))?;
        x = dropout(t, x, c.dropout, mode)?;
        let pad: Vec<bool> = ids.iter().map(|&i| i == PAD).collect();
        let mask = pad
            .iter()
            .any(|&b| b)
            .then(|| key_padding_mask(ids.len(), &pad));
        for block in &self.edit_blocks {
            x = block.forward(
                t,
                &self.params,
                x,
                mask.as_ref(),
                c.ln_eps,
                c.dropout,
                mode,
                probs.as_deref_mut(),
            )?;
        }
        self.edit_ln.forward(t, &self.params, x, c.ln_eps)
    }

    /// The BOS row of the encoder output.
    pub fn pool<T: Scalar>(&self, t: &mut Tape<'_, T>, hiddens: Var) -> Result<Var> {
        t.slice_rows(hiddens, 0, 1)
    }

    /// `z = A2 · act(A1 · pooled + b1) + b2`.
    pub fn bottleneck<'a, T: Scalar>(&'a self, t: &mut Tape<'a, T>, pooled: Var) -> Result<Var> {
        let a = self.bottleneck_in.forward(t, &self.params, pooled)?;
        let a = activate(t, a, self.config.bottleneck_activation);
        self.bottleneck_out.forward(t, &self.params, a)
    }

    /// Encoder memory for the generator: the encoded reference, preceded by
    /// the projected edit vector when `z` is given.
    pub fn s2s_memory<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        reference: &[TokenId],
        z: Option<Var>,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let c = &self.config;
        let mut src = Vec::with_capacity(reference.len() + 2);
        src.push(BOS);
        src.extend_from_slice(reference);
        src.push(crate::text::EOS);
        self.check_len(src.len(), "generator source")?;
        let mut x = self.embed(t, &self.s2s_emb, &src, None)?;
        x = dropout(t, x, c.dropout, mode)?;
        for block in &self.s2s_enc {
            x = block.forward(t, &self.params, x, None, c.ln_eps, c.dropout, mode, None)?;
        }
        let enc = self.s2s_enc_ln.forward(t, &self.params, x, c.ln_eps)?;
        match z {
            Some(z) => {
                let slot = self.cond.forward(t, &self.params, z)?;
                t.concat_rows(&[slot, enc])
            }
            None => Ok(enc),
        }
    }

    /// Next-token logits `[len × V]` for a decoder input that starts with BOS.
    pub fn decode<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        memory: Var,
        target: &[TokenId],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        if target.first() != Some(&BOS) {
            return Err(Error::Contract("decoder input must begin with BOS".into()));
        }
        self.check_len(target.len(), "decoder input")?;
        let c = &self.config;
        let mut x = self.embed(t, &self.s2s_emb, target, None)?;
        x = dropout(t, x, c.dropout, mode)?;
        let causal = causal_mask(target.len());
        for block in &self.s2s_dec {
            x = block.forward(
                t,
                &self.params,
                x,
                memory,
                &causal,
                c.ln_eps,
                c.dropout,
                mode,
            )?;
        }
        let x = self.s2s_dec_ln.forward(t, &self.params, x, c.ln_eps)?;
        self.vocab_projection(t, x, self.s2s_emb.tokens, self.s2s_out, self.s2s_out_bias)
    }

    /// Teacher-forced generator logits for `target` given the reference and
    /// an optional edit vector `z` (`None` ablates the conditioning slot).
    pub fn seq2seq_forward<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        reference: &[TokenId],
        z: Option<Var>,
        target: &[TokenId],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        if target.first() != Some(&BOS) {
            return Err(Error::Contract("decoder input must begin with BOS".into()));
        }
        let memory = self.s2s_memory(t, reference, z, mode)?;
        self.decode(t, memory, target, mode)
    }

    fn vocab_projection<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        x: Var,
        tied: crate::tensor::ParamId,
        untied: Option<Linear>,
        bias: crate::tensor::ParamId,
    ) -> Result<Var> {
        match untied {
            Some(l) => l.forward(t, &self.params, x),
            None => {
                let table = t.param(&self.params, tied);
                let logits = t.matmul_nt(x, table)?;
                let b = t.param(&self.params, bias);
                t.add_row(logits, b)
            }
        }
    }

    /// MLM logits for the selected rows of the encoder output (all rows when
    /// `rows` is `None`).
    pub fn mlm_logits<'a, T: Scalar>(
        &'a self,
        t: &mut Tape<'a, T>,
        hiddens: Var,
        rows: Option<&[usize]>,
    ) -> Result<Var> {
        let x = match rows {
            Some(r) => t.gather_rows(hiddens, r)?,
            None => hiddens,
        };
        let x = self.mlm.dense.forward(t, &self.params, x)?;
        let x = t.gelu(x);
        let x = self
            .mlm
            .ln
            .forward(t, &self.params, x, self.config.ln_eps)?;
        self.vocab_projection(t, x, self.edit_emb.tokens, self.mlm.out, self.mlm.bias)
    }

    pub fn entail_logit<'a, T: Scalar>(&'a self, t: &mut Tape<'a, T>, pooled: Var) -> Result<Var> {
        self.entail.forward(t, &self.params, pooled)
    }

    pub fn score_head<'a, T: Scalar>(&'a self, t: &mut Tape<'a, T>, pooled: Var) -> Result<Var> {
        self.score.forward(t, &self.params, pooled)
    }

    /// Eval-mode edit vector of a packed pair.
    pub fn edit_vector(&self, pair: &PackedPair) -> Result<EditVector> {
        let mut t = Tape::<f32>::new();
        let h = self.edit_encode(&mut t, pair, &mut Mode::Eval)?;
        let p = self.pool(&mut t, h)?;
        let z = self.bottleneck(&mut t, p)?;
        Ok(EditVector(t.value(z).to_vec()))
    }

    /// Eval-mode entailment logit of a packed pair.
    pub fn entailment_logit(&self, pair: &PackedPair) -> Result<f32> {
        let mut t = Tape::<f32>::new();
        let h = self.edit_encode(&mut t, pair, &mut Mode::Eval)?;
        let p = self.pool(&mut t, h)?;
        let l = self.entail_logit(&mut t, p)?;
        Ok(t.scalar(l))
    }

    /// Eval-mode score head output of a packed pair.
    pub fn score_pair(&self, pair: &PackedPair) -> Result<Vec<f32>> {
        let mut t = Tape::<f32>::new();
        let h = self.edit_encode(&mut t, pair, &mut Mode::Eval)?;
        let p = self.pool(&mut t, h)?;
        let s = self.score_head(&mut t, p)?;
        Ok(t.value(s).to_vec())
    }

    /// Eval-mode teacher-forced logits, conditioned on `z` when given.
    pub fn generator_logits(
        &self,
        reference: &[TokenId],
        z: Option<&EditVector>,
        target: &[TokenId],
    ) -> Result<Vec<f32>> {
        let mut t = Tape::<f32>::new();
        let zv = match z {
            Some(z) => Some(self.z_constant(&mut t, z)?),
            None => None,
        };
        let l = self.seq2seq_forward(&mut t, reference, zv, target, &mut Mode::Eval)?;
        Ok(t.value(l).to_vec())
    }

    /// Records an edit vector as a tape constant.
    pub fn z_constant<T: Scalar>(&self, t: &mut Tape<'_, T>, z: &EditVector) -> Result<Var> {
        if z.0.len() != self.config.bottleneck {
            return Err(Error::Dimension(format!(
                "edit vector of length {} for bottleneck {}",
                z.0.len(),
                self.config.bottleneck
            )));
        }
        t.constant_f32(1, z.0.len(), &z.0)
    }

    /// Writes a checkpoint whose header holds the model configuration, the
    /// metadata and any `extra` run settings.
    pub fn save(&self, path: &Path, extra: &[(String, String)]) -> Result<()> {
        let mut header = self.config.to_kv();
        header.extend(self.meta.to_kv());
        header.extend(extra.iter().cloned());
        checkpoint::save(path, &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::load_with_header(path)?.0)
    }

    /// Loads a checkpoint and also returns its full header.
    pub fn load_with_header(
        path: &Path,
    ) -> Result<(Self, std::collections::BTreeMap<String, String>)> {
        let ck = checkpoint::load(path)?;
        let config = ModelConfig::from_kv(&ck.header)?;
        let mut model = Self::new(config, 0)?;
        model.meta = ModelMeta::from_kv(&ck.header)?;
        model.restore(ck.tensors)?;
        Ok((model, ck.header))
    }

    /// Fails when `vocab` is not the vocabulary the model was built for.
    pub fn check_vocab(&self, vocab: &crate::text::Vocab) -> Result<()> {
        if vocab.len() != self.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        match &self.meta.vocab_fingerprint {
            Some(fp) if *fp != vocab.fingerprint() => Err(Error::Config(
                "vocabulary fingerprint differs from the one recorded in the model".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Replaces every parameter with the named tensors, which must match the
    /// model's manifest exactly.
    pub fn restore(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in tensors {
            let id = self
                .params
                .lookup(&name)
                .ok_or_else(|| Error::Format(format!("unexpected parameter {name}")))?;
            let slot = self.params.get_mut(id);
            if slot.shape() != tensor.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(tensor.data());
        }
        Ok(())
    }
}
