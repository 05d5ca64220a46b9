//! The three-part pretraining objective and its training loop.
//!
//! `L = L_AR + α·L_MLM + β·L_CLS`, where L_AR and L_MLM are per-token means
//! over the batch and L_CLS is the mean over labeled examples. Each term can
//! be disabled for ablations.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::ParaExample;
use crate::error::{Error, Result};
use crate::model::{Mode, ParaBleuModel};
use crate::parse_setting;
use crate::tensor::{
    AdamConfig, AdamState, Gradients, OwnedObjective, ParamStore, Scalar, SeededRng, Tape, Var,
    WarmupSchedule,
};
use crate::text::{
    apply_mlm_mask, pack_pair, MaskMode, MaskedBatch, PackedPair, TokenId, Vocab, BOS, EOS,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub enable_ar: bool,
    pub enable_mlm: bool,
    pub enable_cls: bool,
    /// Drop the edit-vector slot from the generator's memory.
    pub ablate_conditioning: bool,
    pub mask_prob: f64,
    pub mask_mode: MaskMode,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub steps: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl Default for PretrainConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 10.0,
            enable_ar: true,
            enable_mlm: true,
            enable_cls: true,
            ablate_conditioning: false,
            mask_prob: 0.15,
            mask_mode: MaskMode::Bert,
            batch_size: 16,
            lr: 1e-3,
            warmup: 100,
            steps: 2000,
            seed: 0,
            checkpoint_every: 0,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

impl PretrainConfig {
    /// Full-scale hyperparameters: learning rate 1e-4 with 2400 warmup steps.
    pub fn paper_scale() -> Self {
        Self {
            lr: 1e-4,
            warmup: 2400,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.enable_ar || self.enable_mlm || self.enable_cls) {
            return Err(Error::Config(
                "at least one loss term must be enabled".into(),
            ));
        }
        if self.warmup > self.steps {
            return Err(Error::Config(format!(
                "warmup {} exceeds total steps {}",
                self.warmup, self.steps
            )));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!(
                "mask_prob {} outside [0, 1]",
                self.mask_prob
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps that makes `epochs` passes over `n` examples.
    pub fn steps_for_epochs(&self, n: usize, epochs: usize) -> usize {
        (n * epochs).div_ceil(self.batch_size)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let kv = [
            ("alpha", format!("{:?}", self.alpha)),
            ("beta", format!("{:?}", self.beta)),
            ("enable_ar", self.enable_ar.to_string()),
            ("enable_mlm", self.enable_mlm.to_string()),
            ("enable_cls", self.enable_cls.to_string()),
            ("ablate_conditioning", self.ablate_conditioning.to_string()),
            ("mask_prob", format!("{:?}", self.mask_prob)),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("warmup", self.warmup.to_string()),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("mask_mode", self.mask_mode.name().to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            (
                "clip_norm",
                self.clip_norm
                    .map_or("none".to_string(), |c| format!("{c:?}")),
            ),
        ];
        kv.into_iter()
            .map(|(k, v)| (format!("pretrain.{k}"), v))
            .collect()
    }

    /// Sets one field by its `to_kv` name (without the `pretrain.` prefix).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let k = format!("pretrain.{key}");
        match key {
            "alpha" => self.alpha = parse_setting(&k, raw)?,
            "beta" => self.beta = parse_setting(&k, raw)?,
            "enable_ar" => self.enable_ar = parse_setting(&k, raw)?,
            "enable_mlm" => self.enable_mlm = parse_setting(&k, raw)?,
            "enable_cls" => self.enable_cls = parse_setting(&k, raw)?,
            "ablate_conditioning" => self.ablate_conditioning = parse_setting(&k, raw)?,
            "mask_prob" => self.mask_prob = parse_setting(&k, raw)?,
            "mask_mode" => self.mask_mode = raw.parse()?,
            "batch_size" => self.batch_size = parse_setting(&k, raw)?,
            "lr" => self.lr = parse_setting(&k, raw)?,
            "warmup" => self.warmup = parse_setting(&k, raw)?,
            "steps" => self.steps = parse_setting(&k, raw)?,
            "seed" => self.seed = parse_setting(&k, raw)?,
            "checkpoint_every" => self.checkpoint_every = parse_setting(&k, raw)?,
            "weight_decay" => self.weight_decay = parse_setting(&k, raw)?,
            "clip_norm" => {
                self.clip_norm = if raw.trim() == "none" {
                    None
                } else {
                    Some(parse_setting(&k, raw)?)
                }
            }
            _ => return Err(Error::Config(format!("unknown setting {k}"))),
        }
        Ok(())
    }
}

/// Loss terms of one step or evaluation pass, with the number of tokens or
/// examples behind each mean.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub step: usize,
    pub l_ar: f64,
    pub l_mlm: f64,
    pub l_cls: f64,
    pub l_total: f64,
    pub lr: f64,
    pub n_ar: usize,
    pub n_mlm: usize,
    pub n_cls: usize,
}

pub const LOG_HEADER: &str = "step,l_ar,l_mlm,l_cls,l_total,lr";

impl LossBreakdown {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?}",
            self.step, self.l_ar, self.l_mlm, self.l_cls, self.l_total, self.lr
        )
    }
}

/// `l_ar + α·l_mlm + β·l_cls` over the enabled terms.
pub fn loss_total(l_ar: f64, l_mlm: f64, l_cls: f64, config: &PretrainConfig) -> f64 {
    let mut total = 0.0;
    if config.enable_ar {
        total += l_ar;
    }
    if config.enable_mlm {
        total += config.alpha * l_mlm;
    }
    if config.enable_cls {
        total += config.beta * l_cls;
    }
    total
}

/// A pair in model form: the packed edit-encoder input, the generator's
/// source and target tokens, and the optional entailment label.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub pair: PackedPair,
    pub reference: Vec<TokenId>,
    pub candidate: Vec<TokenId>,
    pub label: Option<u8>,
}

impl EncodedExample {
    pub fn new(
        vocab: &Vocab,
        reference: &str,
        candidate: &str,
        label: Option<u8>,
        max_len: usize,
    ) -> Result<Self> {
        let r = vocab.encode(reference);
        let c = vocab.encode(candidate);
        let pair = pack_pair(&r, &c, max_len)?;
        let mut reference = r;
        reference.truncate(max_len - 2);
        let mut candidate = c;
        candidate.truncate(max_len - 1);
        Ok(Self {
            pair,
            reference,
            candidate,
            label,
        })
    }

    pub fn from_para(vocab: &Vocab, ex: &ParaExample, max_len: usize) -> Result<Self> {
        Self::new(vocab, &ex.reference, &ex.candidate, ex.label, max_len)
    }

    /// Decoder input `BOS · cand` and its next-token targets `cand · EOS`.
    pub fn teacher_forcing(&self) -> (Vec<TokenId>, Vec<Option<usize>>) {
        let mut input = Vec::with_capacity(self.candidate.len() + 1);
        input.push(BOS);
        input.extend_from_slice(&self.candidate);
        let mut targets: Vec<Option<usize>> = self.candidate.iter().map(|&t| Some(t)).collect();
        targets.push(Some(EOS));
        (input, targets)
    }
}

pub fn encode_corpus(
    vocab: &Vocab,
    corpus: &[ParaExample],
    max_len: usize,
) -> Result<Vec<EncodedExample>> {
    corpus
        .iter()
        .map(|ex| EncodedExample::from_para(vocab, ex, max_len))
        .collect()
}

/// Batch-wide denominators for the three means.
#[derive(Clone, Copy, Debug, Default)]
struct Counts {
    ar: usize,
    mlm: usize,
    cls: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct Sums {
    ar: f64,
    mlm: f64,
    cls: f64,
}

fn counts(examples: &[&EncodedExample], masks: &[MaskedBatch], config: &PretrainConfig) -> Counts {
    Counts {
        ar: if config.enable_ar {
            examples.iter().map(|e| e.candidate.len() + 1).sum()
        } else {
            0
        },
        mlm: if config.enable_mlm {
            masks.iter().map(MaskedBatch::num_masked).sum()
        } else {
            0
        },
        cls: if config.enable_cls {
            examples.iter().filter(|e| e.label.is_some()).count()
        } else {
            0
        },
    }
}

fn scale(n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        1.0 / n as f64
    }
}

/// Records one example's weighted contribution to the batch objective.
/// Returns the loss node (if any term applies) and the unweighted sums.
fn record_example<'a, T: Scalar>(
    model: &'a ParaBleuModel,
    t: &mut Tape<'a, T>,
    ex: &EncodedExample,
    masked: &MaskedBatch,
    n: Counts,
    config: &PretrainConfig,
    mode: &mut Mode<'_>,
) -> Result<(Option<Var>, Sums)> {
    let mut parts = Vec::new();
    let mut sums = Sums::default();
    let h = model.edit_encode_ids(t, &masked.input_ids, &masked.segments, mode)?;
    let pooled = model.pool(t, h)?;

    if config.enable_ar {
        let z = if config.ablate_conditioning {
            None
        } else {
            Some(model.bottleneck(t, pooled)?)
        };
        let (input, targets) = ex.teacher_forcing();
        let logits = model.seq2seq_forward(t, &ex.reference, z, &input, mode)?;
        let raw = t.cross_entropy_sum(logits, &targets, 1.0)?;
        sums.ar = t.scalar(raw).as_f64();
        parts.push(t.scale(raw, scale(n.ar)));
    }
    if config.enable_mlm {
        let rows: Vec<usize> = (0..masked.masked.len())
            .filter(|&i| masked.masked[i])
            .collect();
        if !rows.is_empty() {
            let logits = model.mlm_logits(t, h, Some(&rows))?;
            let targets: Vec<Option<usize>> = rows.iter().map(|&i| masked.labels[i]).collect();
            let raw = t.cross_entropy_sum(logits, &targets, 1.0)?;
            sums.mlm = t.scalar(raw).as_f64();
            parts.push(t.scale(raw, config.alpha * scale(n.mlm)));
        }
    }
    if let (true, Some(label)) = (config.enable_cls, ex.label) {
        let logit = model.entail_logit(t, pooled)?;
        let raw = t.bce_with_logit(logit, label as f64, 1.0)?;
        sums.cls = t.scalar(raw).as_f64();
        parts.push(t.scale(raw, config.beta * scale(n.cls)));
    }
    let mut loss = None;
    for p in parts {
        loss = Some(match loss {
            None => p,
            Some(acc) => t.add(acc, p)?,
        });
    }
    Ok((loss, sums))
}

fn breakdown(step: usize, lr: f64, n: Counts, s: Sums, config: &PretrainConfig) -> LossBreakdown {
    let l_ar = if config.enable_ar {
        s.ar * scale(n.ar)
    } else {
        0.0
    };
    let l_mlm = if config.enable_mlm {
        s.mlm * scale(n.mlm)
    } else {
        0.0
    };
    let l_cls = if config.enable_cls {
        s.cls * scale(n.cls)
    } else {
        0.0
    };
    LossBreakdown {
        step,
        l_ar,
        l_mlm,
        l_cls,
        l_total: loss_total(l_ar, l_mlm, l_cls, config),
        lr,
        n_ar: n.ar,
        n_mlm: n.mlm,
        n_cls: n.cls,
    }
}

fn mask_all(
    examples: &[&EncodedExample],
    rng: &mut SeededRng,
    vocab_size: usize,
    config: &PretrainConfig,
) -> Result<Vec<MaskedBatch>> {
    examples
        .iter()
        .map(|e| {
            if config.enable_mlm {
                apply_mlm_mask(&e.pair, rng, config.mask_prob, vocab_size, config.mask_mode)
            } else {
                Ok(MaskedBatch::unmasked(&e.pair))
            }
        })
        .collect()
}

/// Forward and backward over a batch. Per-example gradients are summed in
/// batch order, so the result does not depend on thread scheduling.
fn batch_gradients(
    model: &ParaBleuModel,
    examples: &[&EncodedExample],
    masks: &[MaskedBatch],
    config: &PretrainConfig,
    dropout_seed: u64,
) -> Result<(Gradients, Counts, Sums)> {
    let n = counts(examples, masks, config);
    let results: Vec<Result<(Option<Gradients>, Sums)>> = examples
        .par_iter()
        .zip(masks.par_iter())
        .enumerate()
        .map(|(j, (ex, masked))| {
            let mut rng = SeededRng::new(dropout_seed).fork(j as u64);
            let mut mode = Mode::Train(&mut rng);
            let mut t = Tape::new();
            let (loss, sums) = record_example(model, &mut t, ex, masked, n, config, &mut mode)?;
            let grads = loss.map(|l| t.backward(l)).transpose()?;
            Ok((grads, sums))
        })
        .collect();
    let mut total = Gradients::empty(model.params().len());
    let mut sums = Sums::default();
    for r in results {
        let (g, s) = r?;
        if let Some(g) = g {
            total.add_assign(&g);
        }
        sums.ar += s.ar;
        sums.mlm += s.mlm;
        sums.cls += s.cls;
    }
    Ok((total, n, sums))
}

/// Eval-mode losses over a fixed example set, masked with `seed`.
pub fn evaluate_losses(
    model: &ParaBleuModel,
    examples: &[EncodedExample],
    config: &PretrainConfig,
    seed: u64,
) -> Result<LossBreakdown> {
    let refs: Vec<&EncodedExample> = examples.iter().collect();
    let mut rng = SeededRng::new(seed);
    let masks = mask_all(&refs, &mut rng, model.config().vocab_size, config)?;
    let n = counts(&refs, &masks, config);
    let sums: Vec<Result<Sums>> = refs
        .par_iter()
        .zip(masks.par_iter())
        .map(|(ex, masked)| {
            let mut t = Tape::<f32>::new();
            Ok(record_example(model, &mut t, ex, masked, n, config, &mut Mode::Eval)?.1)
        })
        .collect();
    let mut total = Sums::default();
    for s in sums {
        let s = s?;
        total.ar += s.ar;
        total.mlm += s.mlm;
        total.cls += s.cls;
    }
    Ok(breakdown(0, 0.0, n, total, config))
}

/// The batch objective with fixed masks, evaluated in eval mode, for
/// gradient checks over the whole model.
pub struct PretrainObjective {
    pub model: ParaBleuModel,
    pub examples: Vec<EncodedExample>,
    pub masks: Vec<MaskedBatch>,
    pub config: PretrainConfig,
}

impl PretrainObjective {
    pub fn new(
        model: ParaBleuModel,
        examples: Vec<EncodedExample>,
        config: PretrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let refs: Vec<&EncodedExample> = examples.iter().collect();
        let masks = mask_all(
            &refs,
            &mut SeededRng::new(seed),
            model.config().vocab_size,
            &config,
        )?;
        Ok(Self {
            model,
            examples,
            masks,
            config,
        })
    }
}

impl OwnedObjective for PretrainObjective {
    fn store(&self) -> &ParamStore {
        self.model.params()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.model.params_mut()
    }

    fn loss<'a, T: Scalar>(&'a self, t: &mut Tape<'a, T>) -> Result<Var> {
        let refs: Vec<&EncodedExample> = self.examples.iter().collect();
        let n = counts(&refs, &self.masks, &self.config);
        let mut total: Option<Var> = None;
        for (ex, masked) in self.examples.iter().zip(&self.masks) {
            if let (Some(l), _) =
                record_example(&self.model, t, ex, masked, n, &self.config, &mut Mode::Eval)?
            {
                total = Some(match total {
                    None => l,
                    Some(acc) => t.add(acc, l)?,
                });
            }
        }
        total.ok_or_else(|| Error::Contract("no loss term applies to this batch".into()))
    }
}

/// Output of a pretraining run.
#[derive(Clone, Debug, Default)]
pub struct PretrainOutcome {
    pub log: Vec<LossBreakdown>,
    pub checkpoints: Vec<PathBuf>,
}

pub const LOG_FILE: &str = "loss_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Trains `model` in place. With an output directory, the loss log is
/// appended to `loss_log.csv` as training runs and checkpoints are written
/// at the configured cadence plus once at the end.
pub fn pretrain_run(
    model: &mut ParaBleuModel,
    vocab: &Vocab,
    corpus: &[ParaExample],
    config: &PretrainConfig,
    out_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("pretraining corpus is empty".into()));
    }
    model.check_vocab(vocab)?;
    model.meta.vocab_fingerprint = Some(vocab.fingerprint());
    let encoded = encode_corpus(vocab, corpus, model.config().max_len)?;
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };

    let root = SeededRng::new(config.seed);
    let mut order_rng = root.fork(1);
    let mut mask_rng = root.fork(2);
    let dropout_root = root.fork(3);
    let schedule = WarmupSchedule {
        base_lr: config.lr,
        warmup: config.warmup,
    };
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            clip_norm: config.clip_norm,
            ..AdamConfig::default()
        },
    );

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut outcome = PretrainOutcome::default();
    for step in 0..config.steps {
        let mut idx = Vec::with_capacity(config.batch_size);
        while idx.len() < config.batch_size {
            if cursor == order.len() {
                order = (0..encoded.len()).collect();
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &encoded[i]).collect();
        let masks = mask_all(&batch, &mut mask_rng, vocab.len(), config)?;
        let dropout_seed = dropout_root.fork(step as u64).seed();
        let (grads, n, sums) = batch_gradients(model, &batch, &masks, config, dropout_seed)
            .map_err(|e| at_step(e, step))?;
        let lr = schedule.lr_at(step);
        let entry = breakdown(step, lr, n, sums, config);
        if !entry.l_total.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!(
                    "loss terms ar={} mlm={} cls={}",
                    entry.l_ar, entry.l_mlm, entry.l_cls
                ),
            });
        }
        let params = model.params_mut();
        params.zero_grad();
        params.accumulate(&grads)?;
        adam.step(params, lr)?;

        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", entry.csv_row()).map_err(|e| Error::io(&*path, e))?;
        }
        outcome.log.push(entry);
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0
                && (step + 1) % config.checkpoint_every == 0
                && step + 1 < config.steps
            {
                let p = dir.join(format!("step-{:06}.ckpt", step + 1));
                model.save(&p, &checkpoint_header(config, step + 1))?;
                outcome.checkpoints.push(p);
            }
        }
    }
    if let Some((mut f, path)) = log_file {
        f.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(dir) = out_dir {
        let p = dir.join(FINAL_CHECKPOINT);
        model.save(&p, &checkpoint_header(config, config.steps))?;
        outcome.checkpoints.push(p);
    }
    Ok(outcome)
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { detail, .. } => Error::NonFinite { step, detail },
        other => other,
    }
}

fn checkpoint_header(config: &PretrainConfig, step: usize) -> Vec<(String, String)> {
    let mut kv = config.to_kv();
    kv.push(("pretrain.completed_steps".into(), step.to_string()));
    kv
}

/// Parses a loss log written by [`pretrain_run`].
pub fn parse_loss_log(text: &str) -> Result<Vec<LossBreakdown>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::Format("loss log has an unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("loss log line {}: {line:?}", i + 2));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
            Ok(LossBreakdown {
                step: f[0].parse().map_err(|_| bad())?,
                l_ar: num(1)?,
                l_mlm: num(2)?,
                l_cls: num(3)?,
                l_total: num(4)?,
                lr: num(5)?,
                ..LossBreakdown::default()
            })
        })
        .collect()
}

/// Renders a whole log as CSV text.
pub fn loss_log_csv(log: &[LossBreakdown]) -> String {
    let mut s = String::new();
    writeln!(s, "{LOG_HEADER}").unwrap();
    for e in log {
        writeln!(s, "{}", e.csv_row()).unwrap();
    }
    s
}
