use super::{clipped_matches, ngram_counts, MetricValue};
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChrfConfig {
    pub char_n: usize,
    pub word_n: usize,
    pub beta: f64,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        Self {
            char_n: 6,
            word_n: 2,
            beta: 2.0,
        }
    }
}

/// `(matches, candidate total, reference total)` for one n-gram order.
fn order_stats<T: Ord + Clone>(reference: &[T], cand: &[T], n: usize) -> (usize, usize, usize) {
    let rc = ngram_counts(reference, n);
    let cc = ngram_counts(cand, n);
    (
        clipped_matches(&cc, &rc),
        cand.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

/// chrF++: precision and recall are averaged over character orders
/// `1..=char_n` (whitespace removed) and word orders `1..=word_n`, then
/// combined into F-beta. Orders where neither side has an n-gram are left
/// out; two empty texts score 1.
pub fn chrf_pp(reference: &str, cand: &str, config: &ChrfConfig) -> MetricValue {
    let chars = |s: &str| {
        s.chars()
            .filter(|c| !c.is_whitespace())
            .collect::<Vec<char>>()
    };
    let (rc, cc) = (chars(reference), chars(cand));
    let (rw, cw) = (tokenize(reference), tokenize(cand));
    let stats = (1..=config.char_n)
        .map(|n| order_stats(&rc, &cc, n))
        .chain((1..=config.word_n).map(|n| order_stats(&rw, &cw, n)));
    let (mut p_sum, mut r_sum, mut orders) = (0.0, 0.0, 0usize);
    for (m, ct, rt) in stats {
        if ct == 0 && rt == 0 {
            continue;
        }
        orders += 1;
        if ct > 0 {
            p_sum += m as f64 / ct as f64;
        }
        if rt > 0 {
            r_sum += m as f64 / rt as f64;
        }
    }
    let (p, r, f) = if orders == 0 {
        (1.0, 1.0, 1.0)
    } else {
        let (p, r) = (p_sum / orders as f64, r_sum / orders as f64);
        let b2 = config.beta * config.beta;
        let f = if p == 0.0 && r == 0.0 {
            0.0
        } else {
            (1.0 + b2) * p * r / (b2 * p + r)
        };
        (p, r, f)
    };
    MetricValue {
        name: "chrf_pp",
        value: f,
        components: vec![("precision", p), ("recall", r), ("orders", orders as f64)],
    }
}
