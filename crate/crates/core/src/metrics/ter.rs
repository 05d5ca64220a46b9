use std::collections::HashSet;

use super::MetricValue;
use crate::error::{Error, Result};

pub const TER_MAX_SHIFT_ITERATIONS: usize = 50;
/// Longest block considered for a shift.
pub const TER_MAX_SHIFT_LEN: usize = 10;
/// Pairs where both sides are at most this long also get an exhaustive
/// search over all sequences of up to two shifts.
pub const TER_EXHAUSTIVE_LEN: usize = 7;

/// Word-level Levenshtein distance with unit costs.
pub(crate) fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `seq` with the block `[start, start + len)` removed and reinserted so it
/// begins at index `dest` of the result.
pub(crate) fn shifted<T: Clone>(seq: &[T], start: usize, len: usize, dest: usize) -> Vec<T> {
    let block = &seq[start..start + len];
    let mut rest: Vec<T> = seq[..start]
        .iter()
        .chain(&seq[start + len..])
        .cloned()
        .collect();
    rest.splice(dest..dest, block.iter().cloned());
    rest
}

/// Every block move of `hyp` whose block is a reference phrase, in scan
/// order (start, length, destination).
fn moves<'a>(
    hyp: &'a [String],
    phrases: &'a HashSet<&[String]>,
) -> impl Iterator<Item = Vec<String>> + 'a {
    (0..hyp.len()).flat_map(move |start| {
        (1..=TER_MAX_SHIFT_LEN.min(hyp.len() - start))
            .filter(move |&len| phrases.contains(&hyp[start..start + len]))
            .flat_map(move |len| {
                (0..=hyp.len() - len)
                    .filter(move |&dest| dest != start)
                    .map(move |dest| shifted(hyp, start, len, dest))
            })
    })
}

/// `(edit distance, shifts)` from the greedy loop.
fn greedy_shifts(
    reference: &[String],
    cand: &[String],
    phrases: &HashSet<&[String]>,
) -> (usize, usize) {
    let mut hyp = cand.to_vec();
    let mut dist = edit_distance(&hyp, reference);
    let mut shifts = 0;
    for _ in 0..TER_MAX_SHIFT_ITERATIONS {
        if dist == 0 {
            break;
        }
        let mut best: Option<(usize, Vec<String>)> = None;
        for moved in moves(&hyp, phrases) {
            let d = edit_distance(&moved, reference);
            if best.as_ref().map_or(d < dist, |b| d < b.0) {
                best = Some((d, moved));
            }
        }
        match best {
            Some((d, moved)) => {
                hyp = moved;
                dist = d;
                shifts += 1;
            }
            None => break,
        }
    }
    (dist, shifts)
}

/// Best `(edit distance, shifts)` over all sequences of at most two shifts.
fn two_shift_search(
    reference: &[String],
    cand: &[String],
    phrases: &HashSet<&[String]>,
) -> (usize, usize) {
    let mut best = (edit_distance(cand, reference), 0);
    let total = |b: (usize, usize)| b.0 + b.1;
    for first in moves(cand, phrases) {
        let d = edit_distance(&first, reference);
        if d + 1 < total(best) {
            best = (d, 1);
        }
        for second in moves(&first, phrases) {
            let d = edit_distance(&second, reference);
            if d + 2 < total(best) {
                best = (d, 2);
            }
        }
    }
    best
}

/// Translation edit rate: `(edits + shifts) / |ref|`. Shifts move a block of
/// the candidate that also occurs as a phrase of the reference. Each round
/// applies the shift that lowers the remaining edit distance the most
/// (first one in scan order on ties) until none helps. For short pairs the
/// greedy result is compared with an exhaustive two-shift search and the
/// cheaper one kept, since greedy misses shifts that only pay off in pairs.
pub fn ter(reference: &[String], cand: &[String]) -> Result<MetricValue> {
    if reference.is_empty() {
        return Err(Error::Contract("TER needs a non-empty reference".into()));
    }
    let phrases: HashSet<&[String]> = (1..=TER_MAX_SHIFT_LEN.min(reference.len()))
        .flat_map(|k| reference.windows(k))
        .collect();
    let (mut dist, mut shifts) = greedy_shifts(reference, cand, &phrases);
    if reference.len() <= TER_EXHAUSTIVE_LEN && cand.len() <= TER_EXHAUSTIVE_LEN && dist > 0 {
        let (d, s) = two_shift_search(reference, cand, &phrases);
        if d + s < dist + shifts {
            (dist, shifts) = (d, s);
        }
    }
    let edits = dist + shifts;
    Ok(MetricValue {
        name: "ter",
        value: edits as f64 / reference.len() as f64,
        components: vec![
            ("edits", dist as f64),
            ("shifts", shifts as f64),
            ("ref_len", reference.len() as f64),
        ],
    })
}
