//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Set `ACCEPTANCE_ONLY=1,5,14` to run a subset.
//!
//! Expensive artifacts (the desk pretraining runs, fine-tuned models and
//! one-shot generations) are computed once and shared between criteria.

#[path = "support/fixtures.rs"]
mod fixtures;
#[path = "support/oracles.rs"]
mod oracles;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fixtures::*;
use oracles::*;
use parableu_core::cli::subsample;
use parableu_core::correlation::{evaluate_metric, kendall_tau_b, pearson, report_from_values};
use parableu_core::data::{
    pretrain_corpus, scored_corpus, synth_generate, CorpusSpec, Lexicon, ParaExample, ScoredPair,
    SynthSpec, Transform,
};
use parableu_core::finetune::{
    finetune_on_split, predict_scores, split_by_reference, FinetuneConfig,
};
use parableu_core::generation::{
    beam_search, exhaustive_search, greedy, one_shot, BeamConfig, OneShotResult,
};
use parableu_core::metrics::{
    bleu, chrf_pp, meteor_lite, rouge_l, sentence_bleu, ter, ChrfConfig, Metric,
};
use parableu_core::model::{prefix, ModelConfig, ParaBleuModel};
use parableu_core::pretrain::{
    encode_corpus, evaluate_losses, parse_loss_log, pretrain_run, LossBreakdown, PretrainConfig,
    PretrainObjective, LOG_FILE,
};
use parableu_core::tensor::{grad_check_owned, GradCheckOptions, SeededRng};
use parableu_core::text::{tokenize, Vocab};
use parableu_core::Error;
use rayon::prelude::*;

const SEEDS: [u64; 3] = [0, 1, 2];

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workdir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn lexicon() -> &'static Lexicon {
    static L: OnceLock<Lexicon> = OnceLock::new();
    L.get_or_init(Lexicon::builtin)
}

/// The 2k-pair pretraining corpus and a vocabulary built from it.
fn corpus() -> &'static (Vec<ParaExample>, Vocab) {
    static C: OnceLock<(Vec<ParaExample>, Vocab)> = OnceLock::new();
    C.get_or_init(|| {
        let corpus = pretrain_corpus(lexicon(), &CorpusSpec::default()).unwrap();
        let texts: Vec<&str> = corpus
            .iter()
            .flat_map(|e| [e.reference.as_str(), e.candidate.as_str()])
            .collect();
        let vocab = Vocab::build(&texts, 4000).unwrap();
        (corpus, vocab)
    })
}

fn vocab() -> &'static Vocab {
    &corpus().1
}

struct Run {
    model: ParaBleuModel,
    config: PretrainConfig,
    log_path: PathBuf,
}

/// Desk pretraining for every seed, with and without the edit vector
/// reaching the generator.
fn pretrained() -> &'static Vec<(u64, bool, Run)> {
    static R: OnceLock<Vec<(u64, bool, Run)>> = OnceLock::new();
    R.get_or_init(|| {
        let jobs: Vec<(u64, bool)> = SEEDS
            .iter()
            .flat_map(|&s| [(s, false), (s, true)])
            .collect();
        jobs.into_par_iter()
            .map(|(seed, ablate)| {
                let config = PretrainConfig {
                    seed,
                    ablate_conditioning: ablate,
                    ..PretrainConfig::default()
                };
                let dir = workdir().join(format!("pretrain-{seed}-{ablate}"));
                let mut model = ParaBleuModel::new(ModelConfig::desk(vocab().len()), seed).unwrap();
                pretrain_run(&mut model, vocab(), &corpus().0, &config, Some(&dir)).unwrap();
                let run = Run {
                    model,
                    config,
                    log_path: dir.join(LOG_FILE),
                };
                (seed, ablate, run)
            })
            .collect()
    })
}

fn conditioned(seed: u64) -> &'static Run {
    &pretrained()
        .iter()
        .find(|(s, a, _)| *s == seed && !a)
        .unwrap()
        .2
}

fn read_log(run: &Run) -> Vec<LossBreakdown> {
    parse_loss_log(&std::fs::read_to_string(&run.log_path).unwrap()).unwrap()
}

struct FlagRun {
    label: &'static str,
    config: PretrainConfig,
    init: ParaBleuModel,
    trained: ParaBleuModel,
    log: Vec<LossBreakdown>,
}

/// Short desk runs with one loss term disabled each.
fn flag_runs() -> &'static Vec<FlagRun> {
    static R: OnceLock<Vec<FlagRun>> = OnceLock::new();
    R.get_or_init(|| {
        let base = PretrainConfig {
            steps: 40,
            warmup: 10,
            ..PretrainConfig::default()
        };
        let cases = [
            (
                "ar",
                PretrainConfig {
                    enable_ar: false,
                    ..base.clone()
                },
            ),
            (
                "mlm",
                PretrainConfig {
                    enable_mlm: false,
                    ..base.clone()
                },
            ),
            (
                "cls",
                PretrainConfig {
                    enable_cls: false,
                    ..base.clone()
                },
            ),
        ];
        cases
            .into_iter()
            .map(|(label, config)| {
                let init = ParaBleuModel::new(ModelConfig::desk(vocab().len()), 7).unwrap();
                let mut trained = init.clone();
                let log = pretrain_run(&mut trained, vocab(), &corpus().0, &config, None)
                    .unwrap()
                    .log;
                FlagRun {
                    label,
                    config,
                    init,
                    trained,
                    log,
                }
            })
            .collect()
    })
}

fn scored_test() -> &'static Vec<ScoredPair> {
    static T: OnceLock<Vec<ScoredPair>> = OnceLock::new();
    T.get_or_init(|| scored_corpus(lexicon(), 1000, 999).unwrap())
}

fn finetune_config(seed: u64) -> FinetuneConfig {
    FinetuneConfig {
        seed,
        eval_every: 250,
        ..FinetuneConfig::desk()
    }
}

/// Train/validation split of the fine-tuning data for `seed`, validation
/// fixed at 25%.
fn finetune_split(seed: u64) -> (Vec<ScoredPair>, Vec<ScoredPair>) {
    let data = scored_corpus(lexicon(), 8000, 100 + seed).unwrap();
    split_by_reference(&data, 0.25, seed).unwrap()
}

/// Mean |r| over the test groups of a model fine-tuned from the seed's
/// pretrained checkpoint on `fraction` of its training split.
fn finetuned_abs_r(seed: u64, fraction: f64) -> f64 {
    let (train, val) = finetune_split(seed);
    let train = subsample(&train, fraction, seed).unwrap();
    let mut model = conditioned(seed).model.clone();
    finetune_on_split(
        &mut model,
        vocab(),
        &train,
        &val,
        &finetune_config(seed),
        None,
    )
    .unwrap();
    let pairs: Vec<(&str, &str)> = scored_test()
        .iter()
        .map(|p| (p.reference.as_str(), p.candidate.as_str()))
        .collect();
    let preds = predict_scores(&model, vocab(), &pairs).unwrap();
    report_from_values("parableu", scored_test(), &preds)
        .unwrap()
        .mean_abs_r
        .unwrap()
}

fn full_data_r() -> &'static Vec<f64> {
    static R: OnceLock<Vec<f64>> = OnceLock::new();
    R.get_or_init(|| SEEDS.par_iter().map(|&s| finetuned_abs_r(s, 1.0)).collect())
}

struct OneShots {
    identity: Vec<(String, OneShotResult)>,
    negation: Vec<OneShotResult>,
}

fn held_out(t: Transform, seed: u64) -> Vec<ParaExample> {
    let spec = SynthSpec {
        transform: t,
        severity: 0,
        seed,
        count: 100,
    };
    synth_generate(&spec, lexicon()).unwrap().0
}

/// Identity-demonstration outputs paired with the normalized target text.
fn identity_one_shots(model: &ParaBleuModel) -> Vec<(String, OneShotResult)> {
    let targets = held_out(Transform::Identity, 20_000);
    let demos = held_out(Transform::Identity, 20_001);
    let cfg = BeamConfig::default();
    targets
        .par_iter()
        .zip(&demos)
        .map(|(t, d)| {
            let r = one_shot(
                model,
                vocab(),
                &d.reference,
                &d.reference,
                &t.reference,
                &cfg,
            )
            .unwrap();
            (vocab().decode(&vocab().encode(&t.reference)), r)
        })
        .collect()
}

fn exact_regenerations(outs: &[(String, OneShotResult)]) -> usize {
    outs.iter()
        .filter(|(want, r)| tokenize(&r.candidate) == tokenize(want))
        .count()
}

/// One-shot generations for held-out references under identity and
/// negation demonstrations, using the seed-0 pretrained model.
fn one_shots() -> &'static OneShots {
    static O: OnceLock<OneShots> = OnceLock::new();
    O.get_or_init(|| {
        let model = &conditioned(0).model;
        let targets = held_out(Transform::Identity, 20_000);
        let negations = held_out(Transform::Negation, 20_002);
        let cfg = BeamConfig::default();
        let identity = identity_one_shots(model);
        let negation = targets
            .par_iter()
            .zip(&negations)
            .map(|(t, d)| {
                one_shot(
                    model,
                    vocab(),
                    &d.reference,
                    &d.candidate,
                    &t.reference,
                    &cfg,
                )
                .unwrap()
            })
            .collect();
        OneShots { identity, negation }
    })
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn crit_gradients() -> Verdict {
    let start = Instant::now();
    let vocab = tiny_vocab();
    let mc = ModelConfig::tiny();
    let model = ParaBleuModel::new(mc.clone(), 3).unwrap();
    let examples = tiny_examples(&vocab, mc.max_len);
    let mut obj = PretrainObjective::new(model, examples, PretrainConfig::default(), 4).unwrap();
    let opts = GradCheckOptions {
        max_coords_per_param: Some(64),
        zero_floor: 1e-6,
        ..GradCheckOptions::default()
    };
    let report = grad_check_owned(&mut obj, 1e-3, &opts).unwrap();
    let elapsed = start.elapsed();
    let coords: usize = report.per_param.iter().map(|p| p.coords_checked).sum();
    let worst = report.worst().unwrap();
    ensure(
        report.passed() && elapsed < Duration::from_secs(120),
        format!(
            "{} tensors, {coords} coordinates, max rel error {:.2e} ({}), {:.1}s",
            report.per_param.len(),
            report.max_rel_error,
            worst.name,
            elapsed.as_secs_f64()
        ),
    )
}

fn crit_metric_oracles() -> Verdict {
    let mut rng = SeededRng::new(2);
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let cfg = ChrfConfig::default();
    let mut failures = Vec::new();
    for i in 0..200 {
        let r = random_tokens(&mut rng, 5, 1, 10);
        let c = random_tokens(&mut rng, 5, 0, 10);
        let (rs, cs) = (r.join(" "), c.join(" "));
        let (rr, cc) = (std::slice::from_ref(&r), std::slice::from_ref(&c));
        let checks = [
            (
                "bleu",
                close(bleu(rr, cc, 4).unwrap().value, bleu_oracle(rr, cc, 4)),
            ),
            (
                "sentence_bleu",
                close(
                    sentence_bleu(&r, &c, 4).unwrap().value,
                    sentence_bleu_oracle(&r, &c, 4),
                ),
            ),
            (
                "rouge_l",
                close(rouge_l(&r, &c).value, rouge_l_oracle(&r, &c)),
            ),
            (
                "meteor_lite",
                close(meteor_lite(&r, &c).value, meteor_oracle(&r, &c)),
            ),
            (
                "chrf_pp",
                close(
                    chrf_pp(&rs, &cs, &cfg).value,
                    chrf_oracle(&rs, &cs, tokenize),
                ),
            ),
            ("bleu identity", bleu(rr, rr, 4).unwrap().value == 1.0),
            ("ter identity", ter(&r, &r).unwrap().value == 0.0),
            ("rouge_l identity", rouge_l(&r, &r).value == 1.0),
            ("chrf_pp identity", chrf_pp(&rs, &rs, &cfg).value == 1.0),
            (
                "meteor_lite identity",
                meteor_lite(&r, &r).value == 1.0 - 0.5 / (r.len() as f64).powi(3),
            ),
        ];
        failures.extend(
            checks
                .iter()
                .filter(|c| !c.1)
                .map(|c| format!("{} #{i}", c.0)),
        );
        let (tr, tc) = (
            random_tokens(&mut rng, 4, 1, 7),
            random_tokens(&mut rng, 4, 0, 7),
        );
        if !close(ter(&tr, &tc).unwrap().value, ter_oracle(&tr, &tc)) {
            failures.push(format!("ter #{i}"));
        }
    }
    ensure(
        failures.is_empty(),
        format!(
            "200 instances x 5 metrics, mismatches: {}",
            if failures.is_empty() {
                "none".into()
            } else {
                failures.join(", ")
            }
        ),
    )
}

fn crit_correlation_oracles() -> Verdict {
    let mut rng = SeededRng::new(3);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 100 {
        let n = 2 + rng.below(49);
        let levels = 2 + rng.below(10);
        let x: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let (Ok(t), Ok(r)) = (kendall_tau_b(&x, &y), pearson(&x, &y)) else {
            continue;
        };
        worst = worst
            .max((t - kendall_oracle(&x, &y)).abs())
            .max((r - pearson_oracle(&x, &y)).abs());
        checked += 1;
    }
    let c = vec![1.5; 8];
    let x: Vec<f64> = (0..8).map(f64::from).collect();
    let undefined = [
        pearson(&c, &x),
        pearson(&x, &c),
        kendall_tau_b(&c, &x),
        kendall_tau_b(&x, &c),
    ]
    .iter()
    .all(|r| matches!(r, Err(Error::UndefinedCorrelation(_))));
    ensure(
        worst < 1e-12 && undefined,
        format!("100 vectors, max deviation {worst:.1e}, constant inputs undefined: {undefined}"),
    )
}

fn crit_loss_bookkeeping() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    let mut check = |log: &[LossBreakdown], cfg: &PretrainConfig| {
        for e in log {
            let mut want = 0.0;
            if cfg.enable_ar {
                want += e.l_ar;
            }
            if cfg.enable_mlm {
                want += cfg.alpha * e.l_mlm;
            }
            if cfg.enable_cls {
                want += cfg.beta * e.l_cls;
            }
            worst = worst.max((e.l_total - want).abs());
            steps += 1;
        }
    };
    for (_, _, run) in pretrained() {
        check(&read_log(run), &run.config);
    }
    for f in flag_runs() {
        check(&f.log, &f.config);
    }
    let defaults = PretrainConfig::default();
    ensure(
        worst < 1e-6 && (defaults.alpha, defaults.beta) == (2.0, 10.0),
        format!("{steps} logged steps over 9 runs, max |l_total - sum| {worst:.1e}"),
    )
}

fn crit_pretraining_dynamics() -> Verdict {
    let log = read_log(conditioned(0));
    let first = mean(log[..50].iter().map(|e| e.l_total));
    let last = mean(log[log.len() - 50..].iter().map(|e| e.l_total));
    let ln_v = (vocab().len() as f64).ln();
    let mlm0 = log[0].l_mlm;
    let drop = 1.0 - last / first;
    let mlm_err = (mlm0 - ln_v).abs() / ln_v;
    ensure(
        log.len() == 2000 && drop >= 0.5 && mlm_err < 0.05,
        format!(
            "l_total first-50 mean {first:.3} -> last-50 mean {last:.3} ({:.1}% drop); initial l_mlm {mlm0:.3} vs ln V {ln_v:.3} ({:.1}%)",
            100.0 * drop,
            100.0 * mlm_err
        ),
    )
}

fn crit_bottleneck_utility() -> Verdict {
    let held_out = pretrain_corpus(
        lexicon(),
        &CorpusSpec {
            count: 500,
            seed: 10_000,
            ..CorpusSpec::default()
        },
    )
    .unwrap();
    let encoded =
        encode_corpus(vocab(), &held_out, ModelConfig::desk(vocab().len()).max_len).unwrap();
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let ar = |ablate: bool| {
            let run = &pretrained()
                .iter()
                .find(|(s, a, _)| *s == seed && *a == ablate)
                .unwrap()
                .2;
            evaluate_losses(&run.model, &encoded, &run.config, 0)
                .unwrap()
                .l_ar
        };
        let (with_z, without) = (ar(false), ar(true));
        let gain = (without - with_z) / without;
        if gain >= 0.02 {
            wins += 1;
        }
        parts.push(format!(
            "seed {seed}: {with_z:.3} vs {without:.3} ({:+.1}%)",
            -100.0 * gain
        ));
    }
    ensure(
        wins >= 2,
        format!(
            "held-out l_ar with z vs ablated, {}; {wins}/3 seeds >= 2% better",
            parts.join("; ")
        ),
    )
}

fn crit_ablation_harness() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for f in flag_runs() {
        let frozen: &[&str] = match f.label {
            "ar" => &[prefix::S2S, prefix::COND],
            "mlm" => &[prefix::MLM],
            _ => &[prefix::ENTAIL],
        };
        let unchanged = frozen
            .iter()
            .all(|p| f.init.digest(p) == f.trained.digest(p));
        let trained = f.init.digest(prefix::EDIT) != f.trained.digest(prefix::EDIT);
        ok &= unchanged && trained;
        parts.push(format!(
            "no-{}: {} {}",
            f.label,
            frozen.join("+"),
            if unchanged { "at init" } else { "CHANGED" }
        ));
    }
    ensure(ok, parts.join("; "))
}

fn crit_identity_regeneration() -> Verdict {
    let o = one_shots();
    let exact = exact_regenerations(&o.identity);
    let rate = exact as f64 / o.identity.len() as f64;
    // Failures that stop early, i.e. drop the trailing modifier like a summary edit.
    let truncated = o
        .identity
        .iter()
        .filter(|(want, r)| {
            let (w, c) = (tokenize(want), tokenize(&r.candidate));
            c.len() < w.len() && w.starts_with(&c)
        })
        .count();
    // Other seeds are reported for context only; the verdict uses seed 0.
    let others: Vec<String> = SEEDS[1..]
        .iter()
        .map(|&s| {
            format!(
                "seed {s} {}%",
                exact_regenerations(&identity_one_shots(&conditioned(s).model))
            )
        })
        .collect();
    ensure(
        rate >= 0.7,
        format!(
            "seed 0: {exact}/{} exact regenerations ({:.0}%), {truncated} of the misses truncated before the modifier; {}",
            o.identity.len(),
            100.0 * rate,
            others.join(", ")
        ),
    )
}

fn crit_one_shot_transfer() -> Verdict {
    let o = one_shots();
    let marked = o
        .negation
        .iter()
        .filter(|r| tokenize(&r.candidate).iter().any(|w| w == "not"))
        .count();
    let rate = marked as f64 / o.negation.len() as f64;
    let p_neg = mean(o.negation.iter().map(|r| r.entailment_probability));
    let p_id = mean(o.identity.iter().map(|(_, r)| r.entailment_probability));
    ensure(
        rate >= 0.6 && p_neg < 0.5 && p_id > 0.5,
        format!(
            "negation marker in {marked}/{} outputs; mean demo entailment p: negation {p_neg:.3}, identity {p_id:.3}",
            o.negation.len()
        ),
    )
}

fn crit_learned_vs_classical() -> Verdict {
    let bleu_r = evaluate_metric("bleu", scored_test(), |r, c| Metric::Bleu.score(r, c))
        .unwrap()
        .mean_abs_r
        .unwrap();
    let rs = full_data_r();
    let wins = rs.iter().filter(|&&r| r > bleu_r + 0.05).count();
    let shown: Vec<String> = rs.iter().map(|r| format!("{r:.3}")).collect();
    ensure(
        wins >= 2,
        format!(
            "fine-tuned |r| per seed [{}] vs BLEU |r| {bleu_r:.3}; {wins}/3 ahead by >= 0.05",
            shown.join(", ")
        ),
    )
}

fn crit_data_scarcity() -> Verdict {
    let full = full_data_r()[0];
    let tenth = finetuned_abs_r(0, 0.1);
    ensure(
        full >= tenth - 0.02,
        format!("|r| at 100% {full:.3}, at 10% {tenth:.3} (validation 25%)"),
    )
}

fn crit_split_hygiene() -> Verdict {
    let mut rng = SeededRng::new(12);
    let mut overlaps = 0;
    for trial in 0..1000u64 {
        let groups = 2 + rng.below(80);
        let mut data = Vec::new();
        for g in 0..groups {
            for k in 0..1 + rng.below(6) {
                data.push(ScoredPair {
                    group: "g".into(),
                    reference: format!("reference {g}"),
                    candidate: format!("candidate {k}"),
                    score: rng.uniform(),
                });
            }
        }
        rng.shuffle(&mut data);
        let fraction = 0.05 + 0.9 * rng.uniform();
        let (train, val) = split_by_reference(&data, fraction, trial).unwrap();
        let refs = |v: &[ScoredPair]| {
            v.iter()
                .map(|p| p.reference.clone())
                .collect::<BTreeSet<_>>()
        };
        if !refs(&train).is_disjoint(&refs(&val)) || train.len() + val.len() != data.len() {
            overlaps += 1;
        }
    }
    ensure(
        overlaps == 0,
        format!("1000 randomized datasets, {overlaps} with shared references"),
    )
}

fn cli(args: &[&str]) -> i32 {
    std::process::Command::new(env!("CARGO_BIN_EXE_parableu"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .map_or(-1, |s| s.code().unwrap_or(-1))
}

fn crit_determinism() -> Verdict {
    let root = workdir().join("determinism");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = root.join("data");
    let d = s(&data);
    let mut codes = vec![
        cli(&["--seed", "4", "--out-dir", &d, "synth", "--count", "300"]),
        cli(&[
            "--seed",
            "4",
            "--out-dir",
            &d,
            "synth",
            "--kind",
            "scored",
            "--count",
            "300",
        ]),
    ];
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let pre = s(&root.join(format!("pre-{run}")));
        let ft = s(&root.join(format!("ft-{run}")));
        let corpus = s(&data.join("corpus.tsv"));
        codes.push(cli(&[
            "--seed",
            "9",
            "--out-dir",
            &pre,
            "pretrain",
            "--corpus",
            &corpus,
            "--steps",
            "60",
        ]));
        let ckpt = format!("{pre}/final.ckpt");
        let vocab = format!("{pre}/vocab.txt");
        let scored = s(&data.join("scored.tsv"));
        codes.push(cli(&[
            "--seed",
            "9",
            "--out-dir",
            &ft,
            "finetune",
            "--checkpoint",
            &ckpt,
            "--vocab",
            &vocab,
            "--data",
            &scored,
            "--steps",
            "60",
            "--eval-every",
            "20",
        ]));
        let read = |dir: &str, f: &str| std::fs::read(Path::new(dir).join(f)).unwrap_or_default();
        files.push([
            read(&pre, "final.ckpt"),
            read(&pre, LOG_FILE),
            read(&ft, "finetuned.ckpt"),
            read(&ft, "val_curve.csv"),
        ]);
    }
    let names = [
        "pretrain checkpoint",
        "pretrain log",
        "finetune checkpoint",
        "finetune curve",
    ];
    let differing: Vec<&str> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| files[0][*i] != files[1][*i] || files[0][*i].is_empty())
        .map(|(_, n)| *n)
        .collect();
    ensure(
        codes.iter().all(|&c| c == 0) && differing.is_empty(),
        format!(
            "exit codes {codes:?}; {}",
            if differing.is_empty() {
                "all artifacts bit-identical".into()
            } else {
                format!("differ or missing: {}", differing.join(", "))
            }
        ),
    )
}

fn crit_beam_search() -> Verdict {
    let fixtures = toy_fixtures();
    let cfg = |beam| BeamConfig {
        beam,
        max_len: 5,
        ..BeamConfig::default()
    };
    let mut beam4 = 0;
    let mut beam1 = 0;
    for f in &fixtures {
        let best = &exhaustive_search(f, &cfg(4)).unwrap()[0];
        if beam_search(f, &cfg(4)).unwrap()[0].tokens == best.tokens {
            beam4 += 1;
        }
        if beam_search(f, &cfg(1)).unwrap()[0].tokens == greedy(f, &cfg(1)).unwrap().tokens {
            beam1 += 1;
        }
    }
    let n = fixtures.len();
    ensure(
        n == 50 && beam4 == n && beam1 == n,
        format!("beam-4 = exhaustive on {beam4}/{n}, beam-1 = greedy on {beam1}/{n}"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 14] = [
        (1, "gradient correctness", crit_gradients),
        (2, "metric oracle equivalence", crit_metric_oracles),
        (
            3,
            "correlation oracle equivalence",
            crit_correlation_oracles,
        ),
        (12, "split hygiene", crit_split_hygiene),
        (14, "beam-search optimality", crit_beam_search),
        (13, "determinism", crit_determinism),
        (7, "ablation harness", crit_ablation_harness),
        (4, "loss bookkeeping", crit_loss_bookkeeping),
        (5, "pretraining dynamics", crit_pretraining_dynamics),
        (6, "bottleneck utility", crit_bottleneck_utility),
        (
            8,
            "one-shot identity invariance",
            crit_identity_regeneration,
        ),
        (9, "one-shot transfer", crit_one_shot_transfer),
        (
            10,
            "learned vs classical ordering",
            crit_learned_vs_classical,
        ),
        (11, "data-scarcity trend", crit_data_scarcity),
    ];
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS [{id:>2}] {name}: {detail} [{secs:.0}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{id:>2}] {name}: {detail} [{secs:.0}s]");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
