//! Template-grammar corpus generator. References follow
//! `the <subject> <verb> the <object> [<modifier>]`; candidates are produced
//! by rule-based transforms and optionally corrupted by content-word
//! substitutions whose count sets the synthetic quality score.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{ParaExample, ScoredPair};
use crate::error::{Error, Result};
use crate::tensor::SeededRng;
use crate::text::tokenize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verb {
    pub past: String,
    pub base: String,
    pub participle: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub subjects: Vec<String>,
    pub verbs: Vec<Verb>,
    pub objects: Vec<String>,
    pub modifiers: Vec<String>,
    /// `(word, informal replacement)` pairs.
    pub slang: Vec<(String, String)>,
    /// Probability that a sampled sentence carries a modifier phrase.
    pub modifier_prob: f64,
}

pub const DEFAULT_MODIFIER_PROB: f64 = 0.8;

fn fixture_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

impl Lexicon {
    /// The word lists shipped in `data/lexicon`.
    pub fn builtin() -> Self {
        Self::parse(
            include_str!("../../data/lexicon/subjects.txt"),
            include_str!("../../data/lexicon/verbs.txt"),
            include_str!("../../data/lexicon/objects.txt"),
            include_str!("../../data/lexicon/modifiers.txt"),
            include_str!("../../data/lexicon/slang.txt"),
        )
        .expect("builtin lexicon is well formed")
    }

    /// Reads `subjects.txt`, `verbs.txt`, `objects.txt`, `modifiers.txt` and
    /// `slang.txt` from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        Self::parse(
            &read("subjects.txt")?,
            &read("verbs.txt")?,
            &read("objects.txt")?,
            &read("modifiers.txt")?,
            &read("slang.txt")?,
        )
    }

    pub fn parse(
        subjects: &str,
        verbs: &str,
        objects: &str,
        modifiers: &str,
        slang: &str,
    ) -> Result<Self> {
        let words = |t: &str| fixture_lines(t).map(str::to_lowercase).collect::<Vec<_>>();
        let verbs = fixture_lines(verbs)
            .map(|l| match l.split_whitespace().collect::<Vec<_>>()[..] {
                [past, base, participle] => Ok(Verb {
                    past: past.into(),
                    base: base.into(),
                    participle: participle.into(),
                }),
                _ => Err(Error::Config(format!(
                    "verb line {l:?} needs past, base and participle"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let slang = fixture_lines(slang)
            .map(|l| match l.split_whitespace().collect::<Vec<_>>()[..] {
                [w, s] => Ok((w.to_string(), s.to_string())),
                _ => Err(Error::Config(format!("slang line {l:?} needs two words"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let lex = Self {
            subjects: words(subjects),
            verbs,
            objects: words(objects),
            modifiers: words(modifiers),
            slang,
            modifier_prob: DEFAULT_MODIFIER_PROB,
        };
        for (name, n) in [
            ("subjects", lex.subjects.len()),
            ("verbs", lex.verbs.len()),
            ("objects", lex.objects.len()),
            ("modifiers", lex.modifiers.len()),
        ] {
            if n < 2 {
                return Err(Error::Config(format!(
                    "lexicon needs at least 2 {name}, found {n}"
                )));
            }
        }
        Ok(lex)
    }

    fn informal(&self, word: &str) -> Option<&str> {
        self.slang
            .iter()
            .find(|(w, _)| w == word)
            .map(|(_, s)| s.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transform {
    Negation,
    Summary,
    Passive,
    ConditionalPerfect,
    Personal,
    Informal,
    Identity,
    Unrelated,
}

impl Transform {
    pub const ALL: [Transform; 8] = [
        Transform::Negation,
        Transform::Summary,
        Transform::Passive,
        Transform::ConditionalPerfect,
        Transform::Personal,
        Transform::Informal,
        Transform::Identity,
        Transform::Unrelated,
    ];

    /// Default pretraining mix. Unrelated pairs are left out: their
    /// candidate cannot be predicted from the reference, which pushes the
    /// edit vector to carry content words.
    pub const PRETRAIN: [Transform; 7] = [
        Transform::Negation,
        Transform::Summary,
        Transform::Passive,
        Transform::ConditionalPerfect,
        Transform::Personal,
        Transform::Informal,
        Transform::Identity,
    ];

    /// Meaning-preserving transforms used for scored evaluation sets.
    pub const SCORED: [Transform; 6] = [
        Transform::Identity,
        Transform::Passive,
        Transform::Informal,
        Transform::ConditionalPerfect,
        Transform::Personal,
        Transform::Summary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Transform::Negation => "negation",
            Transform::Summary => "summary",
            Transform::Passive => "passive",
            Transform::ConditionalPerfect => "conditional_perfect",
            Transform::Personal => "personal",
            Transform::Informal => "informal",
            Transform::Identity => "identity",
            Transform::Unrelated => "unrelated",
        }
    }

    /// Entailment label: only negation and unrelated candidates are 0.
    pub fn label(self) -> u8 {
        match self {
            Transform::Negation | Transform::Unrelated => 0,
            _ => 1,
        }
    }

    /// Rule-based check that `cand` looks like this transform of `reference`.
    pub fn detect(self, reference: &str, cand: &str) -> bool {
        let r = tokenize(reference);
        let c = tokenize(cand);
        let has = |w: &str| c.iter().any(|t| t == w);
        let has_pair = |a: &str, b: &str| c.windows(2).any(|p| p[0] == a && p[1] == b);
        match self {
            Transform::Negation => has("not"),
            Transform::Summary => c.len() < r.len() && r.starts_with(&c),
            Transform::Passive => has("was") && has("by"),
            Transform::ConditionalPerfect => has_pair("would", "have"),
            Transform::Personal => c.first().map(String::as_str) == Some("we"),
            Transform::Informal => has_pair("like", "some"),
            Transform::Identity => c == r,
            // subject, verb and object of the reference template
            Transform::Unrelated => [1, 2, 4].iter().filter_map(|&i| r.get(i)).all(|w| !has(w)),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Transform::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown transform {s:?}")))
    }
}

/// Request for `count` pairs of one transform at one severity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub transform: Transform,
    /// Number of content-word substitutions applied to the candidate, 0–4.
    pub severity: u8,
    pub seed: u64,
    pub count: usize,
}

pub const MAX_SEVERITY: u8 = 4;
const SCORE_NOISE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Function,
    Subject,
    Past,
    Base,
    Participle,
    Object,
    ModNoun,
}

#[derive(Clone, Copy, Debug)]
struct Sentence {
    subj: usize,
    verb: usize,
    obj: usize,
    modifier: Option<usize>,
}

type Words = Vec<(String, Slot)>;

impl Sentence {
    fn sample(lex: &Lexicon, rng: &mut SeededRng, with_modifier: Option<bool>) -> Self {
        let with_modifier = with_modifier.unwrap_or_else(|| rng.bernoulli(lex.modifier_prob));
        Self {
            subj: rng.below(lex.subjects.len()),
            verb: rng.below(lex.verbs.len()),
            obj: rng.below(lex.objects.len()),
            modifier: with_modifier.then(|| rng.below(lex.modifiers.len())),
        }
    }

    /// A sentence sharing no subject, verb or object with `self`.
    fn unrelated(&self, lex: &Lexicon, rng: &mut SeededRng) -> Self {
        let other =
            |n: usize, avoid: usize, rng: &mut SeededRng| (avoid + 1 + rng.below(n - 1)) % n;
        Self {
            subj: other(lex.subjects.len(), self.subj, rng),
            verb: other(lex.verbs.len(), self.verb, rng),
            obj: other(lex.objects.len(), self.obj, rng),
            modifier: rng
                .bernoulli(lex.modifier_prob)
                .then(|| rng.below(lex.modifiers.len())),
        }
    }

    fn render(&self, lex: &Lexicon, transform: Transform) -> Words {
        use Slot::*;
        let f = |w: &str| (w.to_string(), Function);
        let v = &lex.verbs[self.verb];
        let subj = || vec![f("the"), (lex.subjects[self.subj].clone(), Subject)];
        let obj = || vec![f("the"), (lex.objects[self.obj].clone(), Object)];
        let mut out: Words = match transform {
            Transform::Identity | Transform::Summary | Transform::Unrelated => {
                [subj(), vec![(v.past.clone(), Past)], obj()].concat()
            }
            Transform::Negation => [
                subj(),
                vec![f("did"), f("not"), (v.base.clone(), Base)],
                obj(),
            ]
            .concat(),
            Transform::Passive => [
                obj(),
                vec![f("was"), (v.participle.clone(), Participle), f("by")],
                subj(),
            ]
            .concat(),
            Transform::ConditionalPerfect => [
                subj(),
                vec![f("would"), f("have"), (v.participle.clone(), Participle)],
                obj(),
            ]
            .concat(),
            Transform::Personal => [vec![f("we"), (v.past.clone(), Past)], obj()].concat(),
            Transform::Informal => {
                let o = &lex.objects[self.obj];
                let o = lex.informal(o).unwrap_or(o);
                [
                    subj(),
                    vec![
                        (v.past.clone(), Past),
                        f("like"),
                        f("some"),
                        (o.to_string(), Object),
                    ],
                ]
                .concat()
            }
        };
        if let (Some(m), false) = (self.modifier, transform == Transform::Summary) {
            let words: Vec<&str> = lex.modifiers[m].split_whitespace().collect();
            let last = words.len() - 1;
            for (i, w) in words.iter().enumerate() {
                out.push((w.to_string(), if i == last { ModNoun } else { Function }));
            }
        }
        out
    }
}

fn join(words: &Words) -> String {
    words
        .iter()
        .map(|(w, _)| w.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Replaces up to `k` distinct content words with a different word of the
/// same class.
fn corrupt(words: &mut Words, k: usize, lex: &Lexicon, rng: &mut SeededRng) {
    let mut slots: Vec<usize> = (0..words.len())
        .filter(|&i| words[i].1 != Slot::Function)
        .collect();
    rng.shuffle(&mut slots);
    let modifier_nouns: Vec<String> = lex
        .modifiers
        .iter()
        .filter_map(|m| m.split_whitespace().last().map(str::to_string))
        .collect();
    for &i in slots.iter().take(k) {
        let (word, slot) = &words[i];
        let pool: Vec<&str> = match slot {
            Slot::Subject => lex.subjects.iter().map(String::as_str).collect(),
            Slot::Object => lex.objects.iter().map(String::as_str).collect(),
            Slot::Past => lex.verbs.iter().map(|v| v.past.as_str()).collect(),
            Slot::Base => lex.verbs.iter().map(|v| v.base.as_str()).collect(),
            Slot::Participle => lex.verbs.iter().map(|v| v.participle.as_str()).collect(),
            Slot::ModNoun => modifier_nouns.iter().map(String::as_str).collect(),
            Slot::Function => unreachable!(),
        };
        let choices: Vec<&str> = pool.into_iter().filter(|w| w != word).collect();
        if let Some(&w) = (!choices.is_empty()).then(|| rng.choose(&choices)) {
            words[i].0 = w.to_string();
        }
    }
}

fn synthetic_score(severity: u8, rng: &mut SeededRng) -> f64 {
    (1.0 - 0.2 * severity as f64 + SCORE_NOISE * rng.normal()).clamp(0.0, 1.0)
}

struct Generated {
    reference: String,
    candidate: String,
    score: f64,
}

fn generate_one(
    lex: &Lexicon,
    transform: Transform,
    severity: u8,
    rng: &mut SeededRng,
) -> Generated {
    let needs_modifier = (transform == Transform::Summary).then_some(true);
    let s = Sentence::sample(lex, rng, needs_modifier);
    let reference = join(&s.render(lex, Transform::Identity));
    let mut cand = match transform {
        Transform::Unrelated => s.unrelated(lex, rng).render(lex, Transform::Identity),
        t => s.render(lex, t),
    };
    corrupt(&mut cand, severity as usize, lex, rng);
    Generated {
        reference,
        candidate: join(&cand),
        score: synthetic_score(severity, rng),
    }
}

/// `spec.count` pairs of a single transform. Every pair is labeled; the
/// scored view carries the severity-derived score with the transform name
/// as its group.
pub fn synth_generate(
    spec: &SynthSpec,
    lex: &Lexicon,
) -> Result<(Vec<ParaExample>, Vec<ScoredPair>)> {
    if spec.count == 0 {
        return Err(Error::Config("synthetic count must be at least 1".into()));
    }
    if spec.severity > MAX_SEVERITY {
        return Err(Error::Config(format!(
            "severity {} above {MAX_SEVERITY}",
            spec.severity
        )));
    }
    let mut rng = SeededRng::new(spec.seed);
    let mut para = Vec::with_capacity(spec.count);
    let mut scored = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let g = generate_one(lex, spec.transform, spec.severity, &mut rng);
        para.push(ParaExample {
            reference: g.reference.clone(),
            candidate: g.candidate.clone(),
            label: Some(spec.transform.label()),
            source: format!("synth:{}", spec.transform),
        });
        scored.push(ScoredPair {
            reference: g.reference,
            candidate: g.candidate,
            score: g.score,
            group: spec.transform.name().to_string(),
        });
    }
    Ok((para, scored))
}

/// Shape of a pretraining corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub count: usize,
    pub seed: u64,
    /// Share of examples that keep their entailment label.
    pub labeled_fraction: f64,
    /// Transforms used, in equal shares.
    pub transforms: Vec<Transform>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            count: 2000,
            seed: 0,
            labeled_fraction: 1.0 / 3.0,
            transforms: Transform::PRETRAIN.to_vec(),
        }
    }
}

/// Uncorrupted pairs of the requested transforms in equal shares and
/// seeded random order.
pub fn pretrain_corpus(lex: &Lexicon, spec: &CorpusSpec) -> Result<Vec<ParaExample>> {
    if spec.count == 0 || spec.transforms.is_empty() {
        return Err(Error::Config(
            "corpus needs at least one example and one transform".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.labeled_fraction) {
        return Err(Error::Config(format!(
            "labeled fraction {} outside [0, 1]",
            spec.labeled_fraction
        )));
    }
    let mut rng = SeededRng::new(spec.seed);
    let kinds = &spec.transforms;
    let mut plan: Vec<Transform> = (0..spec.count).map(|i| kinds[i % kinds.len()]).collect();
    rng.shuffle(&mut plan);
    Ok(plan
        .into_iter()
        .map(|t| {
            let g = generate_one(lex, t, 0, &mut rng);
            ParaExample {
                reference: g.reference,
                candidate: g.candidate,
                label: rng.bernoulli(spec.labeled_fraction).then(|| t.label()),
                source: format!("synth:{t}"),
            }
        })
        .collect())
}

pub const SCORED_GROUPS: [&str; 4] = ["syn-a", "syn-b", "syn-c", "syn-d"];

/// Scored evaluation set: meaning-preserving transforms crossed with
/// severities 0–4, spread over four groups.
pub fn scored_corpus(lex: &Lexicon, count: usize, seed: u64) -> Result<Vec<ScoredPair>> {
    if count == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let cells = Transform::SCORED.len() * (MAX_SEVERITY as usize + 1);
    let mut plan: Vec<usize> = (0..count).map(|i| i % cells).collect();
    rng.shuffle(&mut plan);
    Ok(plan
        .into_iter()
        .map(|cell| {
            let t = Transform::SCORED[cell % Transform::SCORED.len()];
            let severity = (cell / Transform::SCORED.len()) as u8;
            let g = generate_one(lex, t, severity, &mut rng);
            ScoredPair {
                reference: g.reference,
                candidate: g.candidate,
                score: g.score,
                group: rng.choose(&SCORED_GROUPS).to_string(),
            }
        })
        .collect())
}

/// Fresh template references, for held-out generation checks.
pub fn references(lex: &Lexicon, count: usize, seed: u64) -> Vec<String> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| join(&Sentence::sample(lex, &mut rng, None).render(lex, Transform::Identity)))
        .collect()
}

/// A demonstration pair of the given transform, without corruption.
pub fn demonstration(lex: &Lexicon, transform: Transform, rng: &mut SeededRng) -> (String, String) {
    let g = generate_one(lex, transform, 0, rng);
    (g.reference, g.candidate)
}

/// Applies a transform to an existing reference produced by this grammar.
/// Returns `None` when the text does not parse as a template sentence.
pub fn transform_reference(lex: &Lexicon, reference: &str, transform: Transform) -> Option<String> {
    let toks = tokenize(reference);
    if toks.len() < 5 || toks[0] != "the" || toks[3] != "the" {
        return None;
    }
    let subj = lex.subjects.iter().position(|s| *s == toks[1])?;
    let verb = lex.verbs.iter().position(|v| v.past == toks[2])?;
    let obj = lex.objects.iter().position(|o| *o == toks[4])?;
    let rest = toks[5..].join(" ");
    let modifier = if rest.is_empty() {
        None
    } else {
        Some(lex.modifiers.iter().position(|m| *m == rest)?)
    };
    let s = Sentence {
        subj,
        verb,
        obj,
        modifier,
    };
    match transform {
        Transform::Unrelated => None,
        Transform::Summary if modifier.is_none() => None,
        t => Some(join(&s.render(lex, t))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lexicon_sizes() {
        let lex = Lexicon::builtin();
        assert!(lex.subjects.len() >= 20);
        assert!(lex.verbs.len() >= 20);
        assert!(lex.objects.len() >= 20);
        assert!(lex.modifiers.len() >= 20);
    }

    #[test]
    fn render_examples() {
        let lex = Lexicon::builtin();
        let s = Sentence {
            subj: 0,
            verb: 0,
            obj: 2,
            modifier: Some(0),
        };
        let r = |t| join(&s.render(&lex, t));
        assert_eq!(
            r(Transform::Identity),
            "the teacher painted the car near the river"
        );
        assert_eq!(
            r(Transform::Negation),
            "the teacher did not paint the car near the river"
        );
        assert_eq!(r(Transform::Summary), "the teacher painted the car");
        assert_eq!(
            r(Transform::Passive),
            "the car was painted by the teacher near the river"
        );
        assert_eq!(
            r(Transform::ConditionalPerfect),
            "the teacher would have painted the car near the river"
        );
        assert_eq!(r(Transform::Personal), "we painted the car near the river");
        assert_eq!(
            r(Transform::Informal),
            "the teacher painted like some ride near the river"
        );
    }

    #[test]
    fn transform_reference_inverts_render() {
        let lex = Lexicon::builtin();
        for r in references(&lex, 50, 3) {
            assert_eq!(
                transform_reference(&lex, &r, Transform::Identity).as_deref(),
                Some(r.as_str())
            );
            let neg = transform_reference(&lex, &r, Transform::Negation).unwrap();
            assert!(Transform::Negation.detect(&r, &neg));
        }
    }
}
