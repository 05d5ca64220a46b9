//! Brute-force reference implementations used to check the production
//! metrics and statistics. Written independently of the library code and
//! deliberately slow.

#![allow(dead_code)]

use parableu_core::tensor::SeededRng;

/// Occurrences of `gram` in `seq` by linear scan.
fn occurrences(seq: &[String], gram: &[String]) -> usize {
    if gram.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - gram.len())
        .filter(|&i| seq[i..i + gram.len()] == *gram)
        .count()
}

/// Clipped matches: each distinct candidate n-gram counted once, clipped to
/// its count in the reference.
fn clipped(reference: &[String], cand: &[String], n: usize) -> (usize, usize) {
    if cand.len() < n {
        return (0, 0);
    }
    let mut seen: Vec<&[String]> = Vec::new();
    let mut m = 0;
    for i in 0..=cand.len() - n {
        let g = &cand[i..i + n];
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        m += occurrences(cand, g).min(occurrences(reference, g));
    }
    (m, cand.len() - n + 1)
}

fn geometric(ps: &[f64]) -> f64 {
    if ps.is_empty() || ps.contains(&0.0) {
        return 0.0;
    }
    ps.iter().product::<f64>().powf(1.0 / ps.len() as f64)
}

fn bp(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

pub fn bleu_oracle(refs: &[Vec<String>], cands: &[Vec<String>], max_n: usize) -> f64 {
    let mut ps = Vec::new();
    for n in 1..=max_n {
        let (mut m, mut t) = (0, 0);
        for (r, c) in refs.iter().zip(cands) {
            let (a, b) = clipped(r, c, n);
            m += a;
            t += b;
        }
        if t > 0 {
            ps.push(m as f64 / t as f64);
        }
    }
    let c: usize = cands.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    bp(c, r) * geometric(&ps)
}

pub fn sentence_bleu_oracle(reference: &[String], cand: &[String], max_n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut ps = Vec::new();
    for n in 1..=max_n {
        let (m, t) = clipped(reference, cand, n);
        ps.push(if n == 1 {
            m as f64 / t as f64
        } else {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        });
    }
    bp(cand.len(), reference.len()) * geometric(&ps)
}

/// Levenshtein distance from a full dynamic-programming table.
pub fn levenshtein(a: &[String], b: &[String]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

/// Every sequence reachable from `seq` by moving one block that is also a
/// phrase of `reference`.
fn one_shift(seq: &[String], reference: &[String]) -> Vec<Vec<String>> {
    let is_phrase = |g: &[String]| occurrences(reference, g) > 0;
    let mut out = Vec::new();
    for start in 0..seq.len() {
        for end in start + 1..=seq.len() {
            if !is_phrase(&seq[start..end]) {
                continue;
            }
            let block: Vec<String> = seq[start..end].to_vec();
            let mut rest: Vec<String> = seq[..start].to_vec();
            rest.extend_from_slice(&seq[end..]);
            for dest in 0..=rest.len() {
                if dest == start {
                    continue;
                }
                let mut v = rest[..dest].to_vec();
                v.extend(block.iter().cloned());
                v.extend_from_slice(&rest[dest..]);
                out.push(v);
            }
        }
    }
    out
}

/// Minimum of `edits + shifts` over every sequence of at most two shifts.
pub fn ter_oracle(reference: &[String], cand: &[String]) -> f64 {
    let mut best = levenshtein(cand, reference);
    for s1 in one_shift(cand, reference) {
        best = best.min(levenshtein(&s1, reference) + 1);
        for s2 in one_shift(&s1, reference) {
            best = best.min(levenshtein(&s2, reference) + 2);
        }
    }
    best as f64 / reference.len() as f64
}

/// LCS length by enumerating every subsequence of `a` (|a| ≤ ~12).
pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1u32 << a.len()) {
        let sub: Vec<&String> = (0..a.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &a[i])
            .collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|w| it.any(|x| x == *w)) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l_oracle(reference: &[String], cand: &[String]) -> f64 {
    let l = lcs_oracle(cand, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Enumerates every partial one-to-one alignment of equal words and keeps
/// the maximum-size ones; returns `(matches, fewest chunks)`.
pub fn meteor_alignment_oracle(reference: &[String], cand: &[String]) -> (usize, usize) {
    fn rec(
        i: usize,
        reference: &[String],
        cand: &[String],
        used: &mut Vec<bool>,
        map: &mut Vec<Option<usize>>,
        best: &mut (usize, usize),
    ) {
        if i == cand.len() {
            let m = map.iter().flatten().count();
            let mut chunks = 0;
            for k in 0..map.len() {
                if let Some(j) = map[k] {
                    let continues = k > 0 && map[k - 1] == Some(j.wrapping_sub(1)) && j > 0;
                    if !continues {
                        chunks += 1;
                    }
                }
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        map.push(None);
        rec(i + 1, reference, cand, used, map, best);
        map.pop();
        for j in 0..reference.len() {
            if !used[j] && reference[j] == cand[i] {
                used[j] = true;
                map.push(Some(j));
                rec(i + 1, reference, cand, used, map, best);
                map.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    rec(
        0,
        reference,
        cand,
        &mut vec![false; reference.len()],
        &mut Vec::new(),
        &mut best,
    );
    best
}

pub fn meteor_oracle(reference: &[String], cand: &[String]) -> f64 {
    let (m, ch) = meteor_alignment_oracle(reference, cand);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    f * (1.0 - 0.5 * (ch as f64 / m as f64).powi(3))
}

/// Multiset intersection of two n-gram lists by sorting and merging.
fn sorted_intersection(mut a: Vec<Vec<String>>, mut b: Vec<Vec<String>>) -> usize {
    a.sort();
    b.sort();
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn grams(units: &[String], n: usize) -> Vec<Vec<String>> {
    if units.len() < n {
        return Vec::new();
    }
    (0..=units.len() - n)
        .map(|i| units[i..i + n].to_vec())
        .collect()
}

pub fn chrf_oracle(reference: &str, cand: &str, words: fn(&str) -> Vec<String>) -> f64 {
    let chars = |s: &str| {
        s.chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect::<Vec<_>>()
    };
    let mut orders: Vec<(Vec<Vec<String>>, Vec<Vec<String>>)> = Vec::new();
    for n in 1..=6 {
        orders.push((grams(&chars(reference), n), grams(&chars(cand), n)));
    }
    for n in 1..=2 {
        orders.push((grams(&words(reference), n), grams(&words(cand), n)));
    }
    let (mut ps, mut rs) = (Vec::new(), Vec::new());
    for (r, c) in orders {
        if r.is_empty() && c.is_empty() {
            continue;
        }
        let (rl, cl) = (r.len(), c.len());
        let m = sorted_intersection(r, c) as f64;
        ps.push(if cl > 0 { m / cl as f64 } else { 0.0 });
        rs.push(if rl > 0 { m / rl as f64 } else { 0.0 });
    }
    if ps.is_empty() {
        return 1.0;
    }
    let p = ps.iter().sum::<f64>() / ps.len() as f64;
    let r = rs.iter().sum::<f64>() / rs.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        5.0 * p * r / (4.0 * p + r)
    }
}

/// Pearson r straight from the covariance definition.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1.0);
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    cov / (sx * sy)
}

/// Tau-b from classifying all n(n-1)/2 pairs.
pub fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tx += 1;
            } else if dy == 0.0 {
                ty += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    (c - d) as f64 / (((c + d + tx) as f64) * ((c + d + ty) as f64)).sqrt()
}

/// Random token sequence over a small vocabulary so n-grams collide often.
pub fn random_tokens(
    rng: &mut SeededRng,
    vocab: usize,
    min_len: usize,
    max_len: usize,
) -> Vec<String> {
    let len = min_len + rng.below(max_len - min_len + 1);
    (0..len).map(|_| format!("w{}", rng.below(vocab))).collect()
}
