use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::manifest::RunManifest;
use super::{
    BuildVocabArgs, EvaluateArgs, FinetuneArgs, GenerateArgs, GlobalArgs, MetricsArgs, Preset,
    PretrainArgs, Settings, SweepArgs, SweepKind, SynthArgs, SynthKind,
};
use crate::correlation::{
    evaluate_metric, groups_csv, markdown_table, report_from_values, summary_csv, MetricReport,
};
use crate::data::{
    load_para_tsv, load_scored_tsv, pretrain_corpus, save_para_tsv, save_scored_tsv, scored_corpus,
    synth_generate, CorpusSpec, Lexicon, ParaExample, ScoredPair, SynthSpec, Transform,
};
use crate::error::{Error, Result};
use crate::finetune::{
    finetune_on_split, finetune_run, predict_scores, split_by_reference, FinetuneConfig,
};
use crate::generation::{one_shot, BeamConfig};
use crate::metrics::{bleu, Metric};
use crate::model::{ModelConfig, ParaBleuModel};
use crate::pretrain::{pretrain_run, PretrainConfig, LOG_FILE};
use crate::tensor::SeededRng;
use crate::text::{tokenize, Vocab};

pub const VOCAB_FILE: &str = "vocab.txt";
/// Validation share used by sweeps, fixed regardless of the grid.
pub const SWEEP_VAL_FRACTION: f64 = 0.25;

pub struct Context {
    pub settings: Settings,
    pub global: GlobalArgs,
    pub raw: Vec<String>,
}

impl Context {
    /// `--seed`, else `<section>.seed` or `seed` from the config file, else 0.
    fn seed(&self, section: &str) -> Result<u64> {
        if let Some(s) = self.global.seed {
            return Ok(s);
        }
        let key = format!("{section}seed");
        match self
            .settings
            .get(&key)
            .or_else(|| self.settings.get("seed"))
        {
            Some(v) => crate::parse_setting(&key, v),
            None => Ok(0),
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        let dir = self
            .global
            .out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("--out-dir is required for this command".into()))?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(dir)
    }

    fn optional_out_dir(&self) -> Result<Option<&Path>> {
        match self.global.out_dir {
            Some(_) => self.out_dir().map(Some),
            None => Ok(None),
        }
    }

    fn manifest(&self, subcommand: &str, seed: u64) -> RunManifest {
        RunManifest::start(subcommand, &self.raw, seed)
    }
}

fn load_corpus(path: &Path) -> Result<Vec<ParaExample>> {
    let load = load_para_tsv(path)?;
    if !load.malformed.is_empty() {
        log::warn!(
            "{}: {} malformed line(s) skipped: {:?}",
            path.display(),
            load.malformed.len(),
            load.malformed
        );
    }
    Ok(load.examples)
}

fn corpus_texts(corpus: &[ParaExample]) -> Vec<&str> {
    corpus
        .iter()
        .flat_map(|e| [e.reference.as_str(), e.candidate.as_str()])
        .collect()
}

fn lexicon(args: &SynthArgs) -> Result<Lexicon> {
    let mut lex = match &args.lexicon {
        Some(dir) => Lexicon::from_dir(dir)?,
        None => Lexicon::builtin(),
    };
    if let Some(p) = args.modifier_prob {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "modifier probability {p} outside [0, 1]"
            )));
        }
        lex.modifier_prob = p;
    }
    Ok(lex)
}

pub fn cmd_build_vocab(ctx: &Context, args: &BuildVocabArgs) -> Result<()> {
    if args.input.is_empty() && args.scored_input.is_empty() {
        return Err(Error::Config(
            "give at least one --input or --scored-input file".into(),
        ));
    }
    let out = ctx.out_dir()?;
    let mut texts: Vec<String> = Vec::new();
    for p in &args.input {
        for e in load_corpus(p)? {
            texts.push(e.reference);
            texts.push(e.candidate);
        }
    }
    for p in &args.scored_input {
        for s in load_scored_tsv(p)? {
            texts.push(s.reference);
            texts.push(s.candidate);
        }
    }
    let vocab = Vocab::build(&texts, args.max_size)?;
    let path = out.join(VOCAB_FILE);
    vocab.save(&path)?;
    let mut m = ctx.manifest("build-vocab", 0);
    m.record_config([
        ("vocab.max_size".to_string(), args.max_size.to_string()),
        ("vocab.fingerprint".to_string(), vocab.fingerprint()),
    ]);
    m.inputs = args
        .input
        .iter()
        .chain(&args.scored_input)
        .cloned()
        .collect();
    m.outputs = vec![path.clone()];
    m.finish(out)?;
    println!("vocab {} tokens -> {}", vocab.len(), path.display());
    Ok(())
}

pub fn cmd_synth(ctx: &Context, args: &SynthArgs) -> Result<()> {
    let out = ctx.out_dir()?;
    let seed = ctx.seed("synth.")?;
    let lex = lexicon(args)?;
    let mut m = ctx.manifest("synth", seed);
    m.record_config([
        (
            "synth.kind".to_string(),
            format!("{:?}", args.kind).to_lowercase(),
        ),
        ("synth.count".to_string(), args.count.to_string()),
        (
            "synth.modifier_prob".to_string(),
            format!("{:?}", lex.modifier_prob),
        ),
    ]);
    match args.kind {
        SynthKind::Pretrain => {
            let transforms = match &args.transforms {
                Some(list) => list
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<Vec<Transform>>>()?,
                None => Transform::PRETRAIN.to_vec(),
            };
            let spec = CorpusSpec {
                count: args.count,
                seed,
                labeled_fraction: args.labeled_fraction.unwrap_or(1.0 / 3.0),
                transforms,
            };
            m.record_config([
                (
                    "synth.labeled_fraction".to_string(),
                    format!("{:?}", spec.labeled_fraction),
                ),
                (
                    "synth.transforms".to_string(),
                    spec.transforms
                        .iter()
                        .map(|t| t.name())
                        .collect::<Vec<_>>()
                        .join(","),
                ),
            ]);
            let corpus = pretrain_corpus(&lex, &spec)?;
            let path = out.join("corpus.tsv");
            save_para_tsv(&path, &corpus)?;
            println!("{} pairs -> {}", corpus.len(), path.display());
            m.outputs.push(path);
        }
        SynthKind::Scored => {
            let pairs = scored_corpus(&lex, args.count, seed)?;
            let path = out.join("scored.tsv");
            save_scored_tsv(&path, &pairs)?;
            println!("{} scored pairs -> {}", pairs.len(), path.display());
            m.outputs.push(path);
        }
        SynthKind::Transform => {
            let name = args
                .transform
                .as_deref()
                .ok_or_else(|| Error::Config("--kind transform needs --transform".into()))?;
            let spec = SynthSpec {
                transform: name.parse()?,
                severity: args.severity,
                seed,
                count: args.count,
            };
            m.record_config([
                (
                    "synth.transform".to_string(),
                    spec.transform.name().to_string(),
                ),
                ("synth.severity".to_string(), spec.severity.to_string()),
            ]);
            let (para, scored) = synth_generate(&spec, &lex)?;
            let (pp, sp) = (out.join("para.tsv"), out.join("scored.tsv"));
            save_para_tsv(&pp, &para)?;
            save_scored_tsv(&sp, &scored)?;
            println!("{} pairs -> {}, {}", para.len(), pp.display(), sp.display());
            m.outputs.extend([pp, sp]);
        }
    }
    m.finish(out)?;
    Ok(())
}

fn resolve_model_config(
    ctx: &Context,
    vocab_size: usize,
    args: Option<&PretrainArgs>,
) -> Result<ModelConfig> {
    let mut mc = ModelConfig::desk(vocab_size);
    for (k, v) in ctx.settings.section("model.") {
        mc.set(k, v)?;
    }
    if let Some(a) = args {
        if let Some(x) = a.hidden {
            mc.hidden = x;
        }
        if let Some(x) = a.heads {
            mc.heads = x;
        }
        if let Some(x) = a.layers {
            mc.layers_enc = x;
            mc.layers_s2s_enc = x;
            mc.layers_s2s_dec = x;
        }
        if let Some(x) = a.bottleneck {
            mc.bottleneck = x;
        }
        if let Some(x) = a.max_len {
            mc.max_len = x;
        }
    }
    if mc.vocab_size != vocab_size {
        return Err(Error::Config(format!(
            "model.vocab_size {} does not match the vocabulary ({vocab_size} tokens)",
            mc.vocab_size
        )));
    }
    mc.validate()?;
    Ok(mc)
}

fn resolve_pretrain_config(ctx: &Context, args: &PretrainArgs) -> Result<PretrainConfig> {
    let mut pc = match args.preset {
        Preset::Desk => PretrainConfig::default(),
        Preset::Paper => PretrainConfig::paper_scale(),
    };
    for (k, v) in ctx.settings.section("pretrain.") {
        pc.set(k, v)?;
    }
    macro_rules! flag {
        ($($f:ident),*) => {$(if let Some(x) = args.$f { pc.$f = x; })*};
    }
    flag!(
        steps,
        batch_size,
        lr,
        warmup,
        alpha,
        beta,
        mask_prob,
        checkpoint_every
    );
    pc.enable_ar &= !args.no_ar;
    pc.enable_mlm &= !args.no_mlm;
    pc.enable_cls &= !args.no_cls;
    pc.ablate_conditioning |= args.ablate_conditioning;
    if args.warmup.is_none() && ctx.settings.get("pretrain.warmup").is_none() {
        pc.warmup = pc.warmup.min(pc.steps);
    }
    pc.seed = ctx.seed("pretrain.")?;
    pc.validate()?;
    Ok(pc)
}

fn pretrain_vocab(vocab: Option<&Path>, corpus: &[ParaExample], max_vocab: usize) -> Result<Vocab> {
    match vocab {
        Some(p) => Vocab::load(p),
        None => Vocab::build(&corpus_texts(corpus), max_vocab),
    }
}

pub fn cmd_pretrain(ctx: &Context, args: &PretrainArgs) -> Result<()> {
    let out = ctx.out_dir()?;
    let corpus = load_corpus(&args.corpus)?;
    let vocab = pretrain_vocab(args.vocab.as_deref(), &corpus, args.max_vocab)?;
    let mc = resolve_model_config(ctx, vocab.len(), Some(args))?;
    let pc = resolve_pretrain_config(ctx, args)?;
    let mut model = ParaBleuModel::new(mc.clone(), pc.seed)?;
    let vocab_path = out.join(VOCAB_FILE);
    vocab.save(&vocab_path)?;
    let outcome = pretrain_run(&mut model, &vocab, &corpus, &pc, Some(out))?;

    let mut m = ctx.manifest("pretrain", pc.seed);
    m.record_config(mc.to_kv());
    m.record_config(pc.to_kv());
    m.record_config([("vocab.fingerprint".to_string(), vocab.fingerprint())]);
    m.inputs.push(args.corpus.clone());
    m.inputs.extend(args.vocab.clone());
    m.outputs.push(vocab_path);
    m.outputs.push(out.join(LOG_FILE));
    m.outputs.extend(outcome.checkpoints.iter().cloned());
    m.finish(out)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "step {} l_total {:.4} (ar {:.4} mlm {:.4} cls {:.4}) -> {}",
            last.step + 1,
            last.l_total,
            last.l_ar,
            last.l_mlm,
            last.l_cls,
            out.display()
        );
    }
    Ok(())
}

fn resolve_finetune_config(ctx: &Context, preset: Preset) -> Result<FinetuneConfig> {
    let mut fc = match preset {
        Preset::Desk => FinetuneConfig::desk(),
        Preset::Paper => FinetuneConfig::default(),
    };
    for (k, v) in ctx.settings.section("finetune.") {
        fc.set(k, v)?;
    }
    fc.seed = ctx.seed("finetune.")?;
    Ok(fc)
}

/// A shortened run keeps the preset warmup only if it was asked for.
fn clamp_finetune_warmup(ctx: &Context, fc: &mut FinetuneConfig) {
    if ctx.settings.get("finetune.warmup").is_none() {
        fc.warmup = fc.warmup.min(fc.steps);
    }
}

fn load_model_and_vocab(checkpoint: &Path, vocab: &Path) -> Result<(ParaBleuModel, Vocab)> {
    let model = ParaBleuModel::load(checkpoint)?;
    let vocab = Vocab::load(vocab)?;
    model.check_vocab(&vocab)?;
    Ok((model, vocab))
}

pub fn cmd_finetune(ctx: &Context, args: &FinetuneArgs) -> Result<()> {
    let out = ctx.out_dir()?;
    let (mut model, vocab) = load_model_and_vocab(&args.checkpoint, &args.vocab)?;
    let data = load_scored_tsv(&args.data)?;
    let mut fc = resolve_finetune_config(ctx, args.preset)?;
    macro_rules! flag {
        ($($f:ident),*) => {$(if let Some(x) = args.$f { fc.$f = x; })*};
    }
    flag!(
        steps,
        batch_size,
        lr,
        warmup,
        val_fraction,
        freeze_layers,
        eval_every
    );
    if args.warmup.is_none() {
        clamp_finetune_warmup(ctx, &mut fc);
    }
    fc.validate()?;
    let outcome = finetune_run(&mut model, &vocab, &data, &fc, Some(out))?;
    let vocab_path = out.join(VOCAB_FILE);
    vocab.save(&vocab_path)?;

    let mut m = ctx.manifest("finetune", fc.seed);
    m.record_config(fc.to_kv());
    m.record_config([
        (
            "finetune.train_size".to_string(),
            outcome.train_size.to_string(),
        ),
        (
            "finetune.val_size".to_string(),
            outcome.val_size.to_string(),
        ),
    ]);
    m.inputs = vec![
        args.checkpoint.clone(),
        args.vocab.clone(),
        args.data.clone(),
    ];
    m.outputs = vec![
        out.join(crate::finetune::FINAL_CHECKPOINT),
        out.join(crate::finetune::CURVE_FILE),
        vocab_path,
    ];
    m.finish(out)?;
    if let Some(p) = outcome.curve.last() {
        println!(
            "step {} train_mse {:.4} val_mse {:.4} val_pearson {:.4} -> {}",
            p.step,
            p.train_mse,
            p.val_mse,
            p.val_pearson,
            out.display()
        );
    }
    Ok(())
}

/// Correlation report of a fine-tuned model's predictions.
pub fn model_report(
    model: &ParaBleuModel,
    vocab: &Vocab,
    data: &[ScoredPair],
) -> Result<MetricReport> {
    let pairs: Vec<(&str, &str)> = data
        .iter()
        .map(|p| (p.reference.as_str(), p.candidate.as_str()))
        .collect();
    let preds = predict_scores(model, vocab, &pairs)?;
    report_from_values("parableu", data, &preds)
}

pub fn cmd_evaluate(ctx: &Context, args: &EvaluateArgs) -> Result<()> {
    let data = load_scored_tsv(&args.data)?;
    let mut names: Vec<String> = Vec::new();
    for m in &args.metric {
        if m == "all" {
            names.extend(Metric::ALL.iter().map(|m| m.name().to_string()));
            if args.checkpoint.is_some() {
                names.push("model".into());
            }
        } else {
            names.push(m.clone());
        }
    }
    names.dedup();
    let mut reports = Vec::new();
    for name in &names {
        if name == "model" || name == "parableu" {
            let (ck, vp) = match (&args.checkpoint, &args.vocab) {
                (Some(c), Some(v)) => (c, v),
                _ => {
                    return Err(Error::Config(
                        "metric `model` needs --checkpoint and --vocab".into(),
                    ))
                }
            };
            let (model, vocab) = load_model_and_vocab(ck, vp)?;
            reports.push(model_report(&model, &vocab, &data)?);
        } else {
            let metric: Metric = name.parse()?;
            reports.push(evaluate_metric(metric.name(), &data, |r, c| {
                metric.score(r, c)
            })?);
        }
    }
    let md = markdown_table(&reports);
    print!("{md}");
    if let Some(out) = ctx.optional_out_dir()? {
        let files = [
            (out.join("report.csv"), summary_csv(&reports)),
            (out.join("groups.csv"), groups_csv(&reports)),
            (out.join("report.md"), md),
        ];
        let mut m = ctx.manifest("evaluate", 0);
        m.record_config([("evaluate.metrics".to_string(), names.join(","))]);
        m.inputs.push(args.data.clone());
        m.inputs.extend(args.checkpoint.clone());
        for (p, text) in files {
            crate::write_atomic(&p, text.as_bytes())?;
            m.outputs.push(p);
        }
        m.finish(out)?;
    }
    Ok(())
}

fn parse_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut cols = l.split('\t');
            match (cols.next(), cols.next()) {
                (Some(r), Some(c)) => Ok((r.to_string(), c.to_string())),
                _ => Err(Error::Format(format!(
                    "{} line {}: expected ref<TAB>cand",
                    path.display(),
                    i + 1
                ))),
            }
        })
        .collect()
}

pub fn cmd_metrics(ctx: &Context, args: &MetricsArgs) -> Result<()> {
    let pairs = parse_pairs(&args.input)?;
    let rows: Vec<Vec<crate::metrics::MetricValue>> = pairs
        .par_iter()
        .map(|(r, c)| {
            Metric::ALL
                .iter()
                .map(|m| m.evaluate(r, c))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut per_pair = String::from("line");
    for m in Metric::ALL {
        let _ = write!(per_pair, ",{m}");
    }
    per_pair.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(per_pair, "{}", i + 1);
        for v in row {
            let _ = write!(per_pair, ",{}", v.value);
        }
        per_pair.push('\n');
    }

    let mut corpus = String::from("metric,value\n");
    if !pairs.is_empty() {
        let refs: Vec<Vec<String>> = pairs.iter().map(|p| tokenize(&p.0)).collect();
        let cands: Vec<Vec<String>> = pairs.iter().map(|p| tokenize(&p.1)).collect();
        for (k, m) in Metric::ALL.iter().enumerate() {
            let value = match m {
                Metric::Bleu => bleu(&refs, &cands, 4)?.value,
                Metric::Ter => {
                    let edits: f64 = rows
                        .iter()
                        .map(|r| {
                            r[k].component("edits").unwrap_or(0.0)
                                + r[k].component("shifts").unwrap_or(0.0)
                        })
                        .sum();
                    let len: f64 = rows
                        .iter()
                        .map(|r| r[k].component("ref_len").unwrap_or(0.0))
                        .sum();
                    edits / len
                }
                _ => rows.iter().map(|r| r[k].value).sum::<f64>() / rows.len() as f64,
            };
            let _ = writeln!(corpus, "{m},{value}");
        }
    }
    match ctx.optional_out_dir()? {
        Some(out) => {
            let (pp, cp) = (out.join("metrics.csv"), out.join("corpus.csv"));
            crate::write_atomic(&pp, per_pair.as_bytes())?;
            crate::write_atomic(&cp, corpus.as_bytes())?;
            let mut m = ctx.manifest("metrics", 0);
            m.inputs.push(args.input.clone());
            m.outputs = vec![pp, cp];
            m.finish(out)?;
            print!("{corpus}");
        }
        None => print!("{per_pair}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct GenerationRecord<'a> {
    demo_ref: &'a str,
    demo_cand: &'a str,
    reference: &'a str,
    #[serde(flatten)]
    result: crate::generation::OneShotResult,
}

pub fn cmd_generate(ctx: &Context, args: &GenerateArgs) -> Result<()> {
    let (model, vocab) = load_model_and_vocab(&args.checkpoint, &args.vocab)?;
    let mut bc = BeamConfig::default();
    for (k, v) in ctx.settings.section("generate.") {
        bc.set(k, v)?;
    }
    if let Some(x) = args.beam {
        bc.beam = x;
    }
    if let Some(x) = args.max_len {
        bc.max_len = x;
    }
    if let Some(x) = args.length_penalty {
        bc.length_penalty = x;
    }
    bc.validate()?;
    let mut lines = String::new();
    for r in &args.refs {
        let result = one_shot(&model, &vocab, &args.demo_ref, &args.demo_cand, r, &bc)?;
        let rec = GenerationRecord {
            demo_ref: &args.demo_ref,
            demo_cand: &args.demo_cand,
            reference: r,
            result,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?;
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    }
    if let Some(out) = ctx.optional_out_dir()? {
        let p = out.join("generations.jsonl");
        crate::write_atomic(&p, lines.as_bytes())?;
        let mut m = ctx.manifest("generate", 0);
        m.record_config(bc.to_kv());
        m.inputs = vec![args.checkpoint.clone(), args.vocab.clone()];
        m.outputs.push(p);
        m.finish(out)?;
    }
    Ok(())
}

/// Seeded subset of `round(fraction · n)` items (at least one), in their
/// original order. A fraction of 1 returns everything.
pub fn subsample(items: &[ScoredPair], fraction: f64, seed: u64) -> Result<Vec<ScoredPair>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "fraction {fraction} must lie in (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(items.to_vec());
    }
    let k = ((fraction * items.len() as f64).round() as usize).max(1);
    let mut idx: Vec<usize> = (0..items.len()).collect();
    SeededRng::new(seed).fork(0x5eed).shuffle(&mut idx);
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| items[i].clone()).collect())
}

#[derive(Clone, Debug)]
struct SweepRow {
    value: f64,
    train_size: usize,
    val_size: usize,
    report: MetricReport,
}

fn check_grid(kind: SweepKind, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "sweep grid must be strictly ascending".into(),
        ));
    }
    for &g in grid {
        let ok = match kind {
            SweepKind::FinetuneFraction => g > 0.0 && g <= 1.0,
            SweepKind::PretrainSteps => g >= 1.0 && g.fract() == 0.0,
        };
        if !ok {
            return Err(Error::Config(format!(
                "grid value {g} is not valid for this sweep"
            )));
        }
    }
    Ok(())
}

pub fn cmd_sweep(ctx: &Context, args: &SweepArgs) -> Result<()> {
    check_grid(args.kind, &args.grid)?;
    let out = ctx.out_dir()?;
    let data = load_scored_tsv(&args.data)?;
    let mut fc = resolve_finetune_config(ctx, Preset::Desk)?;
    if let Some(s) = args.steps {
        fc.steps = s;
    }
    fc.val_fraction = SWEEP_VAL_FRACTION;
    clamp_finetune_warmup(ctx, &mut fc);
    fc.validate()?;
    let (train, val) = split_by_reference(&data, SWEEP_VAL_FRACTION, fc.seed)?;
    let test = match &args.test {
        Some(p) => load_scored_tsv(p)?,
        None => val.clone(),
    };
    let mut m = ctx.manifest("sweep", fc.seed);
    m.record_config(fc.to_kv());
    m.inputs.push(args.data.clone());
    m.inputs.extend(args.test.clone());

    let point =
        |value: f64, base: &ParaBleuModel, vocab: &Vocab, sub: &[ScoredPair]| -> Result<SweepRow> {
            let mut model = base.clone();
            finetune_on_split(&mut model, vocab, sub, &val, &fc, None)?;
            Ok(SweepRow {
                value,
                train_size: sub.len(),
                val_size: val.len(),
                report: model_report(&model, vocab, &test)?,
            })
        };
    let run_grid = |f: &(dyn Fn(f64) -> Result<SweepRow> + Sync)| -> Result<Vec<SweepRow>> {
        if args.parallel {
            args.grid.par_iter().map(|&g| f(g)).collect()
        } else {
            args.grid.iter().map(|&g| f(g)).collect()
        }
    };

    let rows = match args.kind {
        SweepKind::FinetuneFraction => {
            let (ck, vp) = match (&args.checkpoint, &args.vocab) {
                (Some(c), Some(v)) => (c, v),
                _ => {
                    return Err(Error::Config(
                        "finetune_fraction sweeps need --checkpoint and --vocab".into(),
                    ))
                }
            };
            let (base, vocab) = load_model_and_vocab(ck, vp)?;
            m.inputs.extend([ck.clone(), vp.clone()]);
            run_grid(&|g| point(g, &base, &vocab, &subsample(&train, g, fc.seed)?))?
        }
        SweepKind::PretrainSteps => {
            let corpus_path = args
                .corpus
                .as_ref()
                .ok_or_else(|| Error::Config("pretrain_steps sweeps need --corpus".into()))?;
            let corpus = load_corpus(corpus_path)?;
            let vocab = pretrain_vocab(args.vocab.as_deref(), &corpus, args.max_vocab)?;
            let mc = resolve_model_config(ctx, vocab.len(), None)?;
            let mut pc = PretrainConfig::default();
            for (k, v) in ctx.settings.section("pretrain.") {
                pc.set(k, v)?;
            }
            pc.seed = ctx.seed("pretrain.")?;
            m.record_config(mc.to_kv());
            m.record_config(pc.to_kv());
            m.inputs.push(corpus_path.clone());
            run_grid(&|g| {
                let steps = g as usize;
                let cfg = PretrainConfig {
                    steps,
                    warmup: pc.warmup.min(steps),
                    ..pc.clone()
                };
                let mut model = ParaBleuModel::new(mc.clone(), cfg.seed)?;
                pretrain_run(&mut model, &vocab, &corpus, &cfg, None)?;
                point(g, &model, &vocab, &train)
            })?
        }
    };

    let kind = match args.kind {
        SweepKind::PretrainSteps => "pretrain_steps",
        SweepKind::FinetuneFraction => "finetune_fraction",
    };
    let mut csv = String::from("kind,value,train_size,val_size,abs_tau,abs_r\n");
    for r in &rows {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:?}"));
        let _ = writeln!(
            csv,
            "{kind},{},{},{},{},{}",
            r.value,
            r.train_size,
            r.val_size,
            fmt(r.report.mean_abs_tau),
            fmt(r.report.mean_abs_r)
        );
    }
    let path: PathBuf = out.join("sweep.csv");
    crate::write_atomic(&path, csv.as_bytes())?;
    m.outputs.push(path);
    m.finish(out)?;
    print!("{csv}");
    Ok(())
}
