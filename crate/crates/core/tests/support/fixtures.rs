//! Shared fixtures: a 50-token vocabulary for the tiny model and a
//! hand-weighted next-token model for decoder checks.

#![allow(dead_code)]

use parableu_core::data::{pretrain_corpus, CorpusSpec, Lexicon, ParaExample};
use parableu_core::generation::NextTokenScorer;
use parableu_core::pretrain::EncodedExample;
use parableu_core::tensor::SeededRng;
use parableu_core::text::{TokenId, Vocab, EOS};

pub fn small_corpus(count: usize, seed: u64) -> Vec<ParaExample> {
    let spec = CorpusSpec {
        count,
        seed,
        ..CorpusSpec::default()
    };
    pretrain_corpus(&Lexicon::builtin(), &spec).unwrap()
}

/// Vocabulary of exactly 50 tokens built from a synthetic corpus.
pub fn tiny_vocab() -> Vocab {
    let corpus = small_corpus(400, 1);
    let texts: Vec<&str> = corpus
        .iter()
        .flat_map(|e| [e.reference.as_str(), e.candidate.as_str()])
        .collect();
    let v = Vocab::build(&texts, 50).unwrap();
    assert_eq!(v.len(), 50);
    v
}

/// A few encoded pairs, at least one of them labeled.
pub fn tiny_examples(vocab: &Vocab, max_len: usize) -> Vec<EncodedExample> {
    let mut corpus = small_corpus(40, 2);
    corpus.sort_by_key(|e| e.label.is_none());
    corpus
        .iter()
        .take(2)
        .map(|e| EncodedExample::from_para(vocab, e, max_len).unwrap())
        .collect()
}

/// The toy model emits three tokens: EOS and two words. Ids 0 and 1 are
/// PAD and BOS.
pub const TOY_WORDS: [TokenId; 2] = [3, 4];
pub const TOY_VOCAB: usize = 5;

/// Bigram logits `W[last][next]`, hand-set. After BOS word 3 looks best
/// locally, but its continuations are flat, which traps greedy decoding on
/// some inputs.
const NO: f64 = f64::NEG_INFINITY;
const W: [[f64; TOY_VOCAB]; TOY_VOCAB] = [
    [0.0; TOY_VOCAB],
    [NO, NO, -1.0, 1.0, 0.6],
    [0.0; TOY_VOCAB],
    [NO, NO, 0.2, 0.0, 0.0],
    [NO, NO, 0.8, -0.3, 1.2],
];

/// Bigram model plus a copy bonus toward the source token at the current
/// position; the source plays the role of the encoder input.
pub struct ToyScorer {
    pub source: Vec<TokenId>,
    pub copy_bonus: f64,
}

impl NextTokenScorer for ToyScorer {
    fn vocab_size(&self) -> usize {
        TOY_VOCAB
    }

    fn log_probs(&self, prefix: &[TokenId]) -> parableu_core::Result<Vec<f64>> {
        let last = *prefix.last().unwrap();
        let pos = prefix.len() - 1;
        let mut logits = W[last].to_vec();
        match self.source.get(pos) {
            Some(&s) => logits[s] += self.copy_bonus,
            None => logits[EOS] += self.copy_bonus,
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(logits.iter().map(|l| l - lse).collect())
    }
}

/// The 50 fixture inputs: sources of length 1 to 3 with varying copy
/// strength.
pub fn toy_fixtures() -> Vec<ToyScorer> {
    let mut rng = SeededRng::new(2024);
    (0..50)
        .map(|i| {
            let len = 1 + rng.below(3);
            let source = (0..len)
                .map(|_| TOY_WORDS[rng.below(TOY_WORDS.len())])
                .collect();
            ToyScorer {
                source,
                copy_bonus: [0.0, 0.5, 1.0, 2.0, 4.0][i % 5],
            }
        })
        .collect()
}
