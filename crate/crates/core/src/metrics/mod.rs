//! Classical reference-based metrics. Word-level metrics operate on
//! [`tokenize`](crate::text::tokenize) output; chrF++ also takes raw text
//! for its character n-grams.

mod bleu;
mod chrf;
mod meteor;
mod rouge;
mod ter;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::tokenize;

pub use bleu::{bleu, sentence_bleu};
pub use chrf::{chrf_pp, ChrfConfig};
pub use meteor::meteor_lite;
pub use rouge::{lcs_len, rouge_l};
pub use ter::{ter, TER_EXHAUSTIVE_LEN, TER_MAX_SHIFT_ITERATIONS, TER_MAX_SHIFT_LEN};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricValue {
    pub name: &'static str,
    pub value: f64,
    /// Intermediate quantities, e.g. n-gram precisions or edit counts.
    pub components: Vec<(&'static str, f64)>,
}

impl MetricValue {
    pub fn component(&self, key: &str) -> Option<f64> {
        self.components.iter().find(|c| c.0 == key).map(|c| c.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Metric {
    Bleu,
    Ter,
    RougeL,
    MeteorLite,
    ChrfPP,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Bleu,
        Metric::Ter,
        Metric::RougeL,
        Metric::MeteorLite,
        Metric::ChrfPP,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::Ter => "ter",
            Metric::RougeL => "rouge_l",
            Metric::MeteorLite => "meteor_lite",
            Metric::ChrfPP => "chrf_pp",
        }
    }

    /// Whether larger values mean closer to the reference.
    pub fn higher_is_better(self) -> bool {
        self != Metric::Ter
    }

    /// Segment-level value for one pair of raw texts. BLEU uses the
    /// smoothed sentence variant.
    pub fn score(self, reference: &str, candidate: &str) -> Result<f64> {
        Ok(self.evaluate(reference, candidate)?.value)
    }

    pub fn evaluate(self, reference: &str, candidate: &str) -> Result<MetricValue> {
        let (r, c) = (tokenize(reference), tokenize(candidate));
        match self {
            Metric::Bleu => sentence_bleu(&r, &c, 4),
            Metric::Ter => ter(&r, &c),
            Metric::RougeL => Ok(rouge_l(&r, &c)),
            Metric::MeteorLite => Ok(meteor_lite(&r, &c)),
            Metric::ChrfPP => Ok(chrf_pp(reference, candidate, &ChrfConfig::default())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Metric::ALL
            .into_iter()
            .find(|m| {
                m.name() == key
                    || (key == "rouge" && *m == Metric::RougeL)
                    || (key == "meteor" && *m == Metric::MeteorLite)
                    || (key == "chrf++" && *m == Metric::ChrfPP)
            })
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// Multiset of n-grams of one order.
pub(crate) fn ngram_counts<T: Ord + Clone>(
    tokens: &[T],
    n: usize,
) -> std::collections::BTreeMap<Vec<T>, usize> {
    let mut m = std::collections::BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    m
}

/// Size of the multiset intersection of two n-gram count maps.
pub(crate) fn clipped_matches<T: Ord>(
    cand: &std::collections::BTreeMap<Vec<T>, usize>,
    reference: &std::collections::BTreeMap<Vec<T>, usize>,
) -> usize {
    cand.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}
