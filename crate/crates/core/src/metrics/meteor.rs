use std::collections::HashMap;

use super::MetricValue;

/// Search nodes explored before settling for the best alignment so far.
const NODE_BUDGET: usize = 200_000;

struct Search<'a> {
    cand: &'a [String],
    positions: HashMap<&'a str, Vec<usize>>,
    /// Matches each word type still has to receive.
    need: HashMap<&'a str, usize>,
    /// Occurrences of each word type at or after the current cand position.
    left: HashMap<&'a str, usize>,
    used: Vec<bool>,
    best: usize,
    nodes: usize,
}

impl Search<'_> {
    /// `prev` is the ref position matched at cand position `i - 1`.
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        self.nodes += 1;
        if chunks >= self.best || (self.nodes > NODE_BUDGET && self.best != usize::MAX) {
            return;
        }
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        let w = self.cand[i].as_str();
        let need = self.need.get(w).copied().unwrap_or(0);
        let left = self.left.get(w).copied().unwrap_or(0);
        *self.left.get_mut(w).unwrap() -= 1;
        if need > 0 {
            let mut opts: Vec<usize> = self.positions[w]
                .iter()
                .copied()
                .filter(|&j| !self.used[j])
                .collect();
            // Continuing the current chunk first finds good bounds early.
            if let Some(p) = prev {
                if let Some(k) = opts.iter().position(|&j| j == p + 1) {
                    opts.swap(0, k);
                }
            }
            *self.need.get_mut(w).unwrap() -= 1;
            for j in opts {
                self.used[j] = true;
                let extra = usize::from(prev.is_none_or(|p| p + 1 != j));
                self.run(i + 1, Some(j), chunks + extra);
                self.used[j] = false;
            }
            *self.need.get_mut(w).unwrap() += 1;
        }
        if left > need {
            self.run(i + 1, None, chunks);
        }
        *self.left.get_mut(w).unwrap() += 1;
    }
}

/// Fewest chunks over all maximum exact-match alignments, with the number
/// of matches.
pub(crate) fn align(reference: &[String], cand: &[String]) -> (usize, usize) {
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, w) in reference.iter().enumerate() {
        positions.entry(w.as_str()).or_default().push(j);
    }
    let mut left: HashMap<&str, usize> = HashMap::new();
    for w in cand {
        *left.entry(w.as_str()).or_insert(0) += 1;
    }
    let need: HashMap<&str, usize> = left
        .iter()
        .map(|(&w, &c)| (w, c.min(positions.get(w).map_or(0, Vec::len))))
        .collect();
    let matches = need.values().sum();
    if matches == 0 {
        return (0, 0);
    }
    let mut s = Search {
        cand,
        positions,
        need,
        left,
        used: vec![false; reference.len()],
        best: usize::MAX,
        nodes: 0,
    };
    s.run(0, None, 0);
    (matches, s.best)
}

/// METEOR with exact matching only: `Fmean = 10PR / (R + 9P)`, fragmentation
/// penalty `0.5 (chunks / matches)^3`.
pub fn meteor_lite(reference: &[String], cand: &[String]) -> MetricValue {
    let (m, chunks) = align(reference, cand);
    let value_of = |m: usize, chunks: usize| {
        if m == 0 {
            return (0.0, 0.0, 0.0, 0.0);
        }
        let p = m as f64 / cand.len() as f64;
        let r = m as f64 / reference.len() as f64;
        let fmean = 10.0 * p * r / (r + 9.0 * p);
        let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
        (fmean * (1.0 - penalty), p, r, penalty)
    };
    let (score, p, r, penalty) = value_of(m, chunks);
    MetricValue {
        name: "meteor_lite",
        value: score,
        components: vec![
            ("matches", m as f64),
            ("chunks", chunks as f64),
            ("precision", p),
            ("recall", r),
            ("penalty", penalty),
        ],
    }
}
