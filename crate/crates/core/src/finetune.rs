//! Fine-tuning the edit encoder and the linear score head as a learned
//! evaluation metric, with reference-disjoint train/validation splits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::correlation::pearson;
use crate::data::ScoredPair;
use crate::error::{Error, Result};
use crate::model::{prefix, Mode, ParaBleuModel};
use crate::parse_setting;
use crate::tensor::{AdamConfig, AdamState, Gradients, SeededRng, Tape, WarmupSchedule};
use crate::text::{pack_pair, PackedPair, Vocab};

pub const CURVE_FILE: &str = "val_curve.csv";
pub const CURVE_HEADER: &str = "step,train_mse,val_mse,val_pearson";
pub const FINAL_CHECKPOINT: &str = "finetuned.ckpt";
/// Training examples scored for the `train_mse` column.
const TRAIN_EVAL_CAP: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub steps: usize,
    pub val_fraction: f64,
    pub seed: u64,
    /// Edit-encoder layers (from the bottom, plus embeddings) kept frozen.
    pub freeze_layers: usize,
    /// Validation cadence in steps; 0 evaluates only at the start and end.
    pub eval_every: usize,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-5,
            warmup: 0,
            steps: 2000,
            val_fraction: 0.10,
            seed: 0,
            freeze_layers: 0,
            eval_every: 100,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

impl FinetuneConfig {
    /// Settings sized for the desk model and the synthetic scored set.
    pub fn desk() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-3,
            warmup: 100,
            steps: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} must lie strictly between 0 and 1",
                self.val_fraction
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("finetune.batch_size", self.batch_size.to_string()),
            ("finetune.lr", format!("{:?}", self.lr)),
            ("finetune.warmup", self.warmup.to_string()),
            ("finetune.steps", self.steps.to_string()),
            ("finetune.val_fraction", format!("{:?}", self.val_fraction)),
            ("finetune.seed", self.seed.to_string()),
            ("finetune.freeze_layers", self.freeze_layers.to_string()),
            ("finetune.eval_every", self.eval_every.to_string()),
            ("finetune.weight_decay", format!("{:?}", self.weight_decay)),
        ];
        if let Some(c) = self.clip_norm {
            kv.push(("finetune.clip_norm", format!("{c:?}")));
        }
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Sets one field by its `to_kv` name (without the `finetune.` prefix).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let k = format!("finetune.{key}");
        match key {
            "batch_size" => self.batch_size = parse_setting(&k, raw)?,
            "lr" => self.lr = parse_setting(&k, raw)?,
            "warmup" => self.warmup = parse_setting(&k, raw)?,
            "steps" => self.steps = parse_setting(&k, raw)?,
            "val_fraction" => self.val_fraction = parse_setting(&k, raw)?,
            "seed" => self.seed = parse_setting(&k, raw)?,
            "freeze_layers" => self.freeze_layers = parse_setting(&k, raw)?,
            "eval_every" => self.eval_every = parse_setting(&k, raw)?,
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

/// Splits so that no reference string appears on both sides. Groups are
/// visited in a seeded order and each goes to validation while that moves
/// the validation count closer to `fraction · n`.
pub fn split_by_reference(
    data: &[ScoredPair],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<ScoredPair>, Vec<ScoredPair>)> {
    if data.is_empty() {
        return Err(Error::Split("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in data.iter().enumerate() {
        groups.entry(p.reference.as_str()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Split("all items share one reference".into()));
    }
    let mut order: Vec<Vec<usize>> = groups.into_values().collect();
    SeededRng::new(seed).shuffle(&mut order);
    let target = fraction * data.len() as f64;
    let mut in_val = vec![false; order.len()];
    let mut val_count = 0usize;
    for (g, members) in order.iter().enumerate() {
        let with = (val_count + members.len()) as f64;
        if (with - target).abs() < (val_count as f64 - target).abs() {
            in_val[g] = true;
            val_count += members.len();
        }
    }
    // Both sides must be non-empty.
    if val_count == 0 {
        let g = (0..order.len())
            .min_by_key(|&g| order[g].len())
            .unwrap_or(0);
        in_val[g] = true;
    } else if val_count == data.len() {
        let g = (0..order.len())
            .min_by_key(|&g| order[g].len())
            .unwrap_or(0);
        in_val[g] = false;
    }
    let (mut train_idx, mut val_idx) = (Vec::new(), Vec::new());
    for (g, members) in order.iter().enumerate() {
        if in_val[g] {
            val_idx.extend(members);
        } else {
            train_idx.extend(members);
        }
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((pick(&train_idx), pick(&val_idx)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    /// MSE in standardized units.
    pub train_mse: f64,
    pub val_mse: f64,
    /// Pearson r between predictions and validation scores; NaN when
    /// undefined.
    pub val_pearson: f64,
}

impl CurvePoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?}",
            self.step, self.train_mse, self.val_mse, self.val_pearson
        )
    }
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for p in curve {
        let _ = writeln!(s, "{}", p.csv_row());
    }
    s
}

#[derive(Clone, Debug, Default)]
pub struct FinetuneOutcome {
    pub curve: Vec<CurvePoint>,
    pub train_size: usize,
    pub val_size: usize,
}

struct Encoded {
    pair: PackedPair,
    /// Standardized target.
    target: f64,
}

fn encode(model: &ParaBleuModel, vocab: &Vocab, data: &[ScoredPair]) -> Result<Vec<Encoded>> {
    let (mean, std) = (model.meta.score_mean, model.meta.score_std);
    data.iter()
        .map(|p| {
            if !p.score.is_finite() {
                return Err(Error::Format(format!(
                    "non-finite score for reference {:?}",
                    p.reference
                )));
            }
            Ok(Encoded {
                pair: pack_pair(
                    &vocab.encode(&p.reference),
                    &vocab.encode(&p.candidate),
                    model.config().max_len,
                )?,
                target: (p.score - mean) / std,
            })
        })
        .collect()
}

/// Raw score-head output (standardized units) for each pair.
fn head_outputs(model: &ParaBleuModel, pairs: &[&PackedPair]) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| Ok(model.score_pair(p)?[0] as f64))
        .collect()
}

fn mse(model: &ParaBleuModel, data: &[&Encoded]) -> Result<(f64, Vec<f64>)> {
    let pairs: Vec<&PackedPair> = data.iter().map(|e| &e.pair).collect();
    let out = head_outputs(model, &pairs)?;
    let err = out
        .iter()
        .zip(data)
        .map(|(o, e)| (o - e.target).powi(2))
        .sum::<f64>()
        / data.len().max(1) as f64;
    Ok((err, out))
}

fn batch_gradients(
    model: &ParaBleuModel,
    batch: &[&Encoded],
    dropout_seed: u64,
) -> Result<Gradients> {
    let scale = 1.0 / batch.len() as f64;
    let grads: Vec<Result<Gradients>> = batch
        .par_iter()
        .enumerate()
        .map(|(j, ex)| {
            let mut rng = SeededRng::new(dropout_seed).fork(j as u64);
            let mut mode = Mode::Train(&mut rng);
            let mut t = Tape::new();
            let h = model.edit_encode(&mut t, &ex.pair, &mut mode)?;
            let pooled = model.pool(&mut t, h)?;
            let out = model.score_head(&mut t, pooled)?;
            let pred = t.slice_cols(out, 0, 1)?;
            let target = t.constant(1, 1, vec![ex.target as f32])?;
            let diff = t.sub(pred, target)?;
            let sq = t.mul(diff, diff)?;
            let loss = t.scale(sq, scale);
            t.backward(loss)
        })
        .collect();
    let mut total = Gradients::empty(model.params().len());
    for g in grads {
        total.add_assign(&g?);
    }
    Ok(total)
}

/// Freezes everything outside the edit encoder and the score head, plus the
/// bottom `freeze_layers` encoder layers. Returns the previous flags.
fn freeze_for_finetune(model: &mut ParaBleuModel, freeze_layers: usize) -> Vec<bool> {
    let store = model.params();
    let ids: Vec<_> = store.ids().collect();
    let before: Vec<bool> = ids
        .iter()
        .map(|&id| store.get(id).requires_grad())
        .collect();
    let names: Vec<String> = ids.iter().map(|&id| store.name(id).to_string()).collect();
    let frozen_layers: Vec<String> = (0..freeze_layers)
        .map(|i| format!("edit.layer{i}."))
        .collect();
    let store = model.params_mut();
    for (id, name) in ids.into_iter().zip(names) {
        let trainable = if name.starts_with(prefix::SCORE) {
            true
        } else if name.starts_with(prefix::EDIT) {
            let embedding = name.starts_with("edit.tok_emb")
                || name.starts_with("edit.pos_emb")
                || name.starts_with("edit.seg_emb");
            !(freeze_layers > 0 && embedding)
                && !frozen_layers.iter().any(|p| name.starts_with(p.as_str()))
        } else {
            false
        };
        store.get_mut(id).set_requires_grad(trainable);
    }
    before
}

fn restore_flags(model: &mut ParaBleuModel, flags: &[bool]) {
    let ids: Vec<_> = model.params().ids().collect();
    for (id, &on) in ids.into_iter().zip(flags) {
        model.params_mut().get_mut(id).set_requires_grad(on);
    }
}

/// Splits `data` by reference with `config.val_fraction` and fine-tunes.
pub fn finetune_run(
    model: &mut ParaBleuModel,
    vocab: &Vocab,
    data: &[ScoredPair],
    config: &FinetuneConfig,
    out_dir: Option<&Path>,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let (train, val) = split_by_reference(data, config.val_fraction, config.seed)?;
    finetune_on_split(model, vocab, &train, &val, config, out_dir)
}

/// Fine-tunes on an explicit split. Scores are standardized with the mean
/// and standard deviation of `train`, which are stored in the model so
/// predictions come back on the original scale. Only the edit encoder and
/// the score head are updated.
pub fn finetune_on_split(
    model: &mut ParaBleuModel,
    vocab: &Vocab,
    train: &[ScoredPair],
    val: &[ScoredPair],
    config: &FinetuneConfig,
    out_dir: Option<&Path>,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Split(format!(
            "train ({}) and validation ({}) must both be non-empty",
            train.len(),
            val.len()
        )));
    }
    model.check_vocab(vocab)?;
    model.meta.vocab_fingerprint = Some(vocab.fingerprint());
    let n = train.len() as f64;
    let mean = train.iter().map(|p| p.score).sum::<f64>() / n;
    let var = train.iter().map(|p| (p.score - mean).powi(2)).sum::<f64>() / n;
    model.meta.score_mean = mean;
    model.meta.score_std = if var > 0.0 { var.sqrt() } else { 1.0 };

    let train_enc = encode(model, vocab, train)?;
    let val_enc = encode(model, vocab, val)?;
    let val_refs: Vec<&Encoded> = val_enc.iter().collect();
    let train_eval: Vec<&Encoded> = train_enc.iter().take(TRAIN_EVAL_CAP).collect();
    let val_scores: Vec<f64> = val.iter().map(|p| p.score).collect();

    let flags = freeze_for_finetune(model, config.freeze_layers);
    let result = train_loop(
        model,
        config,
        &train_enc,
        &train_eval,
        &val_refs,
        &val_scores,
    );
    restore_flags(model, &flags);
    let curve = result?;

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::write_atomic(&dir.join(CURVE_FILE), curve_csv(&curve).as_bytes())?;
        let mut header = config.to_kv();
        header.push(("finetune.train_size".into(), train.len().to_string()));
        header.push(("finetune.val_size".into(), val.len().to_string()));
        model.save(&dir.join(FINAL_CHECKPOINT), &header)?;
    }
    Ok(FinetuneOutcome {
        curve,
        train_size: train.len(),
        val_size: val.len(),
    })
}

fn train_loop(
    model: &mut ParaBleuModel,
    config: &FinetuneConfig,
    train: &[Encoded],
    train_eval: &[&Encoded],
    val: &[&Encoded],
    val_scores: &[f64],
) -> Result<Vec<CurvePoint>> {
    let root = SeededRng::new(config.seed);
    let mut order_rng = root.fork(11);
    let dropout_root = root.fork(12);
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
    let point = |model: &ParaBleuModel, step: usize| -> Result<CurvePoint> {
        let (train_mse, _) = mse(model, train_eval)?;
        let (val_mse, out) = mse(model, val)?;
        let val_pearson = pearson(&out, val_scores).unwrap_or(f64::NAN);
        if !(train_mse.is_finite() && val_mse.is_finite()) {
            return Err(Error::NonFinite {
                step,
                detail: format!("train_mse={train_mse} val_mse={val_mse}"),
            });
        }
        Ok(CurvePoint {
            step,
            train_mse,
            val_mse,
            val_pearson,
        })
    };

    let mut curve = vec![point(model, 0)?];
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order = (0..train.len()).collect();
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(&train[order[cursor]]);
            cursor += 1;
        }
        let grads =
            batch_gradients(model, &batch, dropout_root.fork(step as u64).seed()).map_err(|e| {
                match e {
                    Error::NonFinite { detail, .. } => Error::NonFinite { step, detail },
                    other => other,
                }
            })?;
        let params = model.params_mut();
        params.zero_grad();
        params.accumulate(&grads)?;
        adam.step(params, schedule.lr_at(step))?;
        let done = step + 1;
        if done == config.steps || (config.eval_every > 0 && done % config.eval_every == 0) {
            curve.push(point(model, done)?);
        }
    }
    Ok(curve)
}

/// Predicted score on the training scale.
pub fn predict_score(
    model: &ParaBleuModel,
    vocab: &Vocab,
    reference: &str,
    candidate: &str,
) -> Result<f64> {
    let pair = pack_pair(
        &vocab.encode(reference),
        &vocab.encode(candidate),
        model.config().max_len,
    )?;
    let out = model.score_pair(&pair)?[0] as f64;
    Ok(out * model.meta.score_std + model.meta.score_mean)
}

/// [`predict_score`] over many pairs, scored in parallel.
pub fn predict_scores(
    model: &ParaBleuModel,
    vocab: &Vocab,
    pairs: &[(&str, &str)],
) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|(r, c)| predict_score(model, vocab, r, c))
        .collect()
}
