//! Beam-search decoding and one-shot conditional paraphrasing: encode a
//! demonstration pair into an edit vector, then generate from an unseen
//! reference conditioned on it.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EditVector, Mode, ParaBleuModel};
use crate::tensor::Tape;
use crate::text::{is_special, pack_pair, TokenId, Vocab, BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    /// Maximum hypothesis length, counting the leading BOS.
    pub max_len: usize,
    /// Exponent `p` in `logprob / len^p`, where `len` counts generated
    /// tokens including EOS.
    pub length_penalty: f64,
    pub bos: TokenId,
    pub eos: TokenId,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 4,
            max_len: 24,
            length_penalty: 0.6,
            bos: BOS,
            eos: EOS,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max length must be at least 2".into()));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::Config("length penalty must be finite".into()));
        }
        Ok(())
    }

    /// Sets one field (`beam`, `max_len` or `length_penalty`).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let k = format!("generate.{key}");
        match key {
            "beam" => self.beam = crate::parse_setting(&k, raw)?,
            "max_len" => self.max_len = crate::parse_setting(&k, raw)?,
            "length_penalty" => self.length_penalty = crate::parse_setting(&k, raw)?,
            _ => return Err(Error::Config(format!("unknown setting {k}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("generate.beam".into(), self.beam.to_string()),
            ("generate.max_len".into(), self.max_len.to_string()),
            (
                "generate.length_penalty".into(),
                format!("{:?}", self.length_penalty),
            ),
        ]
    }
}

/// Source of next-token log-probabilities for a prefix that starts with BOS.
pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

/// A finished hypothesis. `tokens` excludes BOS and includes the final EOS
/// when one was produced.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub score: f64,
}

impl Hypothesis {
    /// Tokens with a trailing EOS removed.
    pub fn content(&self, eos: TokenId) -> &[TokenId] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == eos => rest,
            _ => &self.tokens,
        }
    }
}

pub fn normalized_score(logprob: f64, len: usize, penalty: f64) -> f64 {
    logprob / (len.max(1) as f64).powf(penalty)
}

/// Descending by `key`, then lexicographically smaller token ids, then
/// shorter.
fn rank(a_key: f64, a: &[TokenId], b_key: f64, b: &[TokenId]) -> Ordering {
    b_key
        .partial_cmp(&a_key)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.cmp(b))
        .then_with(|| a.len().cmp(&b.len()))
}

/// Finished hypotheses, best first.
pub fn beam_search<S: NextTokenScorer + ?Sized>(
    scorer: &S,
    config: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    config.validate()?;
    let vocab = scorer.vocab_size();
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(vec![config.bos], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut cands: Vec<(Vec<TokenId>, f64)> = Vec::with_capacity(live.len() * vocab);
        for (prefix, lp) in &live {
            let next = scorer.log_probs(prefix)?;
            if next.len() != vocab {
                return Err(Error::Dimension(format!(
                    "scorer returned {} log-probabilities for a vocabulary of {vocab}",
                    next.len()
                )));
            }
            for (tok, l) in next.into_iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut seq = prefix.clone();
                seq.push(tok);
                cands.push((seq, lp + l));
            }
        }
        cands.sort_by(|a, b| rank(a.1, &a.0[1..], b.1, &b.0[1..]));
        cands.truncate(config.beam);
        live.clear();
        for (seq, lp) in cands {
            if seq.last() == Some(&config.eos) || seq.len() >= config.max_len {
                let tokens = seq[1..].to_vec();
                let score = normalized_score(lp, tokens.len(), config.length_penalty);
                finished.push(Hypothesis {
                    tokens,
                    logprob: lp,
                    score,
                });
            } else {
                live.push((seq, lp));
            }
        }
    }
    finished.sort_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens));
    Ok(finished)
}

/// Argmax decoding; ties go to the lower token id.
pub fn greedy<S: NextTokenScorer + ?Sized>(scorer: &S, config: &BeamConfig) -> Result<Hypothesis> {
    config.validate()?;
    let mut seq = vec![config.bos];
    let mut lp = 0.0;
    loop {
        let next = scorer.log_probs(&seq)?;
        let (tok, l) =
            next.iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, l)| {
                    if l > best.1 {
                        (i, l)
                    } else {
                        best
                    }
                });
        seq.push(tok);
        lp += l;
        if tok == config.eos || seq.len() >= config.max_len {
            break;
        }
    }
    let tokens = seq[1..].to_vec();
    let score = normalized_score(lp, tokens.len(), config.length_penalty);
    Ok(Hypothesis {
        tokens,
        logprob: lp,
        score,
    })
}

/// Every complete sequence up to `max_len` (EOS-terminated, or cut at the
/// length limit), best first under the beam ranking. Exponential; meant for
/// checking beam search on tiny vocabularies.
pub fn exhaustive_search<S: NextTokenScorer + ?Sized>(
    scorer: &S,
    config: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    config.validate()?;
    let mut out = Vec::new();
    let mut stack = vec![(vec![config.bos], 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        let next = scorer.log_probs(&prefix)?;
        for (tok, l) in next.into_iter().enumerate() {
            if l == f64::NEG_INFINITY {
                continue;
            }
            let mut seq = prefix.clone();
            seq.push(tok);
            if tok == config.eos || seq.len() >= config.max_len {
                let tokens = seq[1..].to_vec();
                let score = normalized_score(lp + l, tokens.len(), config.length_penalty);
                out.push(Hypothesis {
                    tokens,
                    logprob: lp + l,
                    score,
                });
            } else {
                stack.push((seq, lp + l));
            }
        }
    }
    out.sort_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens));
    Ok(out)
}

fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let lse = max
        + logits
            .iter()
            .map(|&x| (x as f64 - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|&x| x as f64 - lse).collect()
}

/// The generator of a trained model, conditioned on a fixed reference and
/// edit vector. The encoder memory is computed once.
pub struct ModelScorer<'m> {
    model: &'m ParaBleuModel,
    memory: Vec<f32>,
    memory_rows: usize,
}

impl<'m> ModelScorer<'m> {
    pub fn new(
        model: &'m ParaBleuModel,
        reference: &[TokenId],
        z: Option<&EditVector>,
    ) -> Result<Self> {
        let mut t = Tape::<f32>::new();
        let zv = z.map(|z| model.z_constant(&mut t, z)).transpose()?;
        let m = model.s2s_memory(&mut t, reference, zv, &mut Mode::Eval)?;
        Ok(Self {
            model,
            memory: t.value(m).to_vec(),
            memory_rows: t.dims(m).0,
        })
    }
}

impl NextTokenScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    /// Special tokens other than EOS are never proposed.
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut t = Tape::<f32>::new();
        let h = self.model.config().hidden;
        let memory = t.constant_f32(self.memory_rows, h, &self.memory)?;
        let logits = self.model.decode(&mut t, memory, prefix, &mut Mode::Eval)?;
        let (rows, v) = t.dims(logits);
        let mut last = t.value(logits)[(rows - 1) * v..].to_vec();
        for (id, x) in last.iter_mut().enumerate() {
            if is_special(id) && id != EOS {
                *x = f32::NEG_INFINITY;
            }
        }
        Ok(log_softmax(&last))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OneShotResult {
    pub candidate: String,
    /// Sigmoid of the entailment logit of the demonstration pair.
    pub entailment_probability: f64,
    /// `(text, normalized score)` of the best `beam` finished hypotheses.
    pub beams: Vec<(String, f64)>,
    /// Fraction of generated tokens that occur in the demonstration
    /// candidate but not in the new reference.
    pub leakage: f64,
}

/// Fraction of `generated` tokens found in `demo_cand` but not `new_ref`.
pub fn leakage(generated: &[String], demo_cand: &[String], new_ref: &[String]) -> f64 {
    if generated.is_empty() {
        return 0.0;
    }
    let leaked = generated
        .iter()
        .filter(|t| demo_cand.contains(t) && !new_ref.contains(t))
        .count();
    leaked as f64 / generated.len() as f64
}

pub fn one_shot(
    model: &ParaBleuModel,
    vocab: &Vocab,
    demo_ref: &str,
    demo_cand: &str,
    new_ref: &str,
    config: &BeamConfig,
) -> Result<OneShotResult> {
    let max_len = model.config().max_len;
    let demo = pack_pair(&vocab.encode(demo_ref), &vocab.encode(demo_cand), max_len)?;
    let z = model.edit_vector(&demo)?;
    let logit = model.entailment_logit(&demo)? as f64;
    let mut reference = vocab.encode(new_ref);
    reference.truncate(max_len - 2);
    let scorer = ModelScorer::new(model, &reference, Some(&z))?;
    let cfg = BeamConfig {
        max_len: config.max_len.min(max_len),
        ..*config
    };
    let hyps = beam_search(&scorer, &cfg)?;
    let beams: Vec<(String, f64)> = hyps
        .iter()
        .take(cfg.beam)
        .map(|h| (vocab.decode(h.content(cfg.eos)), h.score))
        .collect();
    let candidate = beams.first().map(|b| b.0.clone()).unwrap_or_default();
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    Ok(OneShotResult {
        leakage: leakage(
            &words(&candidate),
            &words(&vocab.decode(&vocab.encode(demo_cand))),
            &words(&vocab.decode(&reference)),
        ),
        candidate,
        entailment_probability: 1.0 / (1.0 + (-logit).exp()),
        beams,
    })
}
