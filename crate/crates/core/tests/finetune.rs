use std::collections::BTreeSet;
use std::sync::OnceLock;

use parableu_core::data::{
    scored_corpus, synth_generate, Lexicon, ScoredPair, SynthSpec, Transform, MAX_SEVERITY,
};
use parableu_core::finetune::{
    finetune_on_split, finetune_run, predict_score, predict_scores, split_by_reference,
    FinetuneConfig, CURVE_FILE, CURVE_HEADER, FINAL_CHECKPOINT,
};
use parableu_core::model::{prefix, ModelConfig, ParaBleuModel};
use parableu_core::tensor::SeededRng;
use parableu_core::text::Vocab;
use parableu_core::Error;

fn pair(r: &str, c: &str, s: f64) -> ScoredPair {
    ScoredPair {
        reference: r.into(),
        candidate: c.into(),
        score: s,
        group: "g".into(),
    }
}

fn references(items: &[ScoredPair]) -> BTreeSet<&str> {
    items.iter().map(|p| p.reference.as_str()).collect()
}

#[test]
fn unique_references_split_evenly() {
    let data: Vec<ScoredPair> = (0..10)
        .map(|i| pair(&format!("r{i}"), "c", i as f64))
        .collect();
    let (train, val) = split_by_reference(&data, 0.5, 0).unwrap();
    assert_eq!((train.len(), val.len()), (5, 5));
}

#[test]
fn split_errors() {
    let one: Vec<ScoredPair> = (0..5)
        .map(|i| pair("same", &format!("c{i}"), 0.0))
        .collect();
    assert!(matches!(
        split_by_reference(&one, 0.1, 0),
        Err(Error::Split(_))
    ));
    assert!(matches!(
        split_by_reference(&[], 0.1, 0),
        Err(Error::Split(_))
    ));
    let two = vec![pair("a", "x", 0.0), pair("b", "y", 1.0)];
    for bad in [0.0, 1.0, -0.2, f64::NAN] {
        assert!(matches!(
            split_by_reference(&two, bad, 0),
            Err(Error::Config(_))
        ));
    }
}

/// Datasets of `groups` references with 1 to `max_group` items each.
fn grouped(rng: &mut SeededRng, groups: usize, max_group: usize) -> Vec<ScoredPair> {
    let mut data = Vec::new();
    for g in 0..groups {
        for k in 0..1 + rng.below(max_group) {
            data.push(pair(
                &format!("ref {g}"),
                &format!("cand {k}"),
                rng.uniform(),
            ));
        }
    }
    rng.shuffle(&mut data);
    data
}

#[test]
fn splits_never_share_references() {
    let mut rng = SeededRng::new(77);
    for trial in 0..1000 {
        let (groups, max_group) = (2 + rng.below(60), 1 + rng.below(8));
        let data = grouped(&mut rng, groups, max_group);
        let fraction = 0.05 + 0.9 * rng.uniform();
        let (train, val) = split_by_reference(&data, fraction, trial).unwrap();
        assert!(!train.is_empty() && !val.is_empty());
        assert!(references(&train).is_disjoint(&references(&val)));
        let mut all: Vec<String> = train
            .iter()
            .chain(&val)
            .map(|p| format!("{}|{}", p.reference, p.candidate))
            .collect();
        let mut want: Vec<String> = data
            .iter()
            .map(|p| format!("{}|{}", p.reference, p.candidate))
            .collect();
        all.sort();
        want.sort();
        assert_eq!(all, want);
    }
}

#[test]
fn mixed_group_sizes_stay_near_the_target_fraction() {
    let mut rng = SeededRng::new(5);
    for seed in 0..20 {
        let data = grouped(&mut rng, 100, 6);
        let (_, val) = split_by_reference(&data, 0.10, seed).unwrap();
        let realized = val.len() as f64 / data.len() as f64;
        assert!((0.05..=0.15).contains(&realized), "{realized}");
    }
}

#[test]
fn splits_are_seeded() {
    let data = grouped(&mut SeededRng::new(1), 40, 4);
    assert_eq!(
        split_by_reference(&data, 0.3, 9).unwrap(),
        split_by_reference(&data, 0.3, 9).unwrap()
    );
}

#[test]
fn config_validation_and_settings() {
    let mut c = FinetuneConfig::default();
    assert_eq!((c.batch_size, c.lr, c.val_fraction), (32, 1e-5, 0.10));
    c.validate().unwrap();
    c.set("val_fraction", "1").unwrap();
    assert!(c.validate().is_err());
    assert!(c.set("momentum", "0.9").is_err());
    let d = FinetuneConfig::desk();
    let mut back = FinetuneConfig::default();
    for (k, v) in d.to_kv() {
        back.set(k.trim_start_matches("finetune."), &v).unwrap();
    }
    assert_eq!(back, d);
}

fn lexicon() -> Lexicon {
    Lexicon::builtin()
}

/// Vocabulary covering everything the synthetic generator can emit.
fn vocab() -> &'static Vocab {
    static V: OnceLock<Vocab> = OnceLock::new();
    V.get_or_init(|| {
        let data = scored_corpus(&lexicon(), 3000, 0).unwrap();
        let mut texts: Vec<&str> = data
            .iter()
            .flat_map(|p| [p.reference.as_str(), p.candidate.as_str()])
            .collect();
        let (unrel, _) = synth_generate(
            &SynthSpec {
                transform: Transform::Unrelated,
                severity: 0,
                seed: 0,
                count: 500,
            },
            &lexicon(),
        )
        .unwrap();
        texts.extend(unrel.iter().map(|p| p.candidate.as_str()));
        Vocab::build(&texts, 4000).unwrap()
    })
}

fn quick_config(steps: usize) -> FinetuneConfig {
    FinetuneConfig {
        steps,
        eval_every: steps / 4,
        warmup: 10,
        ..FinetuneConfig::desk()
    }
}

/// An untrained desk model fine-tuned directly on synthetic scores.
fn trained() -> &'static ParaBleuModel {
    static M: OnceLock<ParaBleuModel> = OnceLock::new();
    M.get_or_init(|| {
        let data = scored_corpus(&lexicon(), 2000, 3).unwrap();
        let (train, val) = split_by_reference(&data, 0.1, 0).unwrap();
        let mut model = ParaBleuModel::new(ModelConfig::desk(vocab().len()), 0).unwrap();
        finetune_on_split(&mut model, vocab(), &train, &val, &quick_config(600), None).unwrap();
        model
    })
}

#[test]
fn constant_scores_are_learned_exactly() {
    let data: Vec<ScoredPair> = scored_corpus(&lexicon(), 200, 4)
        .unwrap()
        .into_iter()
        .map(|p| ScoredPair { score: 0.7, ..p })
        .collect();
    let mut model = ParaBleuModel::new(ModelConfig::desk(vocab().len()), 1).unwrap();
    finetune_run(&mut model, vocab(), &data, &quick_config(40), None).unwrap();
    for p in data.iter().take(50) {
        let s = predict_score(&model, vocab(), &p.reference, &p.candidate).unwrap();
        assert!((s - 0.7).abs() < 0.05, "{s}");
    }
}

#[test]
fn validation_error_falls_and_reruns_repeat_exactly() {
    let data = scored_corpus(&lexicon(), 600, 5).unwrap();
    let base = ParaBleuModel::new(ModelConfig::desk(vocab().len()), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut a = base.clone();
    let out = finetune_run(&mut a, vocab(), &data, &quick_config(120), Some(dir.path())).unwrap();
    let first = out.curve.first().unwrap();
    let last = out.curve.last().unwrap();
    assert_eq!((first.step, last.step), (0, 120));
    assert!(
        last.val_mse < first.val_mse,
        "{} -> {}",
        first.val_mse,
        last.val_mse
    );
    assert_eq!(out.train_size + out.val_size, data.len());

    let csv = std::fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
    assert_eq!(csv.lines().next(), Some(CURVE_HEADER));
    assert_eq!(csv.lines().count(), out.curve.len() + 1);
    let saved = ParaBleuModel::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(saved.digest(""), a.digest(""));
    assert_eq!(saved.meta, a.meta);

    let mut b = base.clone();
    let again = finetune_run(&mut b, vocab(), &data, &quick_config(120), None).unwrap();
    assert_eq!(again.curve, out.curve);
    assert_eq!(a.digest(""), b.digest(""));
}

#[test]
fn generator_parameters_are_never_updated() {
    let data = scored_corpus(&lexicon(), 300, 6).unwrap();
    let mut model = ParaBleuModel::new(ModelConfig::desk(vocab().len()), 3).unwrap();
    let before = model.digest(prefix::S2S);
    let trainable_before: Vec<bool> = model
        .params()
        .ids()
        .map(|id| model.params().get(id).requires_grad())
        .collect();
    finetune_run(&mut model, vocab(), &data, &quick_config(20), None).unwrap();
    assert_eq!(model.digest(prefix::S2S), before);
    let after: Vec<bool> = model
        .params()
        .ids()
        .map(|id| model.params().get(id).requires_grad())
        .collect();
    assert_eq!(after, trainable_before);
}

#[test]
fn vocabulary_mismatch_is_a_configuration_error() {
    let data = scored_corpus(&lexicon(), 50, 6).unwrap();
    let mut model = ParaBleuModel::new(ModelConfig::desk(vocab().len() + 1), 3).unwrap();
    let r = finetune_run(&mut model, vocab(), &data, &quick_config(4), None);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn empty_candidates_score_finitely_and_batching_is_exact() {
    let model = trained();
    let s = predict_score(model, vocab(), "the old man bought a car", "").unwrap();
    assert!(s.is_finite());
    let data = scored_corpus(&lexicon(), 64, 8).unwrap();
    let pairs: Vec<(&str, &str)> = data
        .iter()
        .map(|p| (p.reference.as_str(), p.candidate.as_str()))
        .collect();
    let batch = predict_scores(model, vocab(), &pairs).unwrap();
    for ((r, c), b) in pairs.iter().zip(&batch) {
        assert_eq!(
            predict_score(model, vocab(), r, c).unwrap().to_bits(),
            b.to_bits()
        );
    }
}

#[test]
fn identical_pairs_outscore_unrelated_ones() {
    let model = trained();
    let (unrelated, _) = synth_generate(
        &SynthSpec {
            transform: Transform::Unrelated,
            severity: 0,
            seed: 42,
            count: 200,
        },
        &lexicon(),
    )
    .unwrap();
    let wins = unrelated
        .iter()
        .filter(|p| {
            predict_score(model, vocab(), &p.reference, &p.reference).unwrap()
                > predict_score(model, vocab(), &p.reference, &p.candidate).unwrap()
        })
        .count();
    assert!(
        wins * 10 >= unrelated.len() * 9,
        "{wins}/{}",
        unrelated.len()
    );
}

#[test]
fn predicted_scores_fall_along_the_severity_ladder() {
    let model = trained();
    for transform in [Transform::Identity, Transform::Passive] {
        let mut prev = f64::INFINITY;
        for severity in 0..=MAX_SEVERITY {
            let (_, scored) = synth_generate(
                &SynthSpec {
                    transform,
                    severity,
                    seed: 900 + severity as u64,
                    count: 200,
                },
                &lexicon(),
            )
            .unwrap();
            let pairs: Vec<(&str, &str)> = scored
                .iter()
                .map(|p| (p.reference.as_str(), p.candidate.as_str()))
                .collect();
            let preds = predict_scores(model, vocab(), &pairs).unwrap();
            let mean = preds.iter().sum::<f64>() / preds.len() as f64;
            assert!(
                mean < prev,
                "{transform} severity {severity}: {mean} >= {prev}"
            );
            prev = mean;
        }
    }
}
