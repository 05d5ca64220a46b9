use super::{clipped_matches, ngram_counts, MetricValue};
use crate::error::{Error, Result};

const ORDER_NAMES: [&str; 8] = ["p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8"];

fn order_name(n: usize) -> &'static str {
    ORDER_NAMES.get(n - 1).copied().unwrap_or("pn")
}

fn check_order(max_n: usize) -> Result<()> {
    if max_n == 0 {
        return Err(Error::Config("BLEU order must be at least 1".into()));
    }
    Ok(())
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        0.0
    } else if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

/// Geometric mean over orders that have at least one candidate n-gram.
fn combine(precisions: &[Option<f64>], bp: f64) -> f64 {
    let used: Vec<f64> = precisions.iter().flatten().copied().collect();
    if used.is_empty() || used.contains(&0.0) {
        return 0.0;
    }
    let log_mean = used.iter().map(|p| p.ln()).sum::<f64>() / used.len() as f64;
    bp * log_mean.exp()
}

/// Corpus BLEU: clipped n-gram matches and totals are summed over all pairs
/// before taking precisions. Orders with no candidate n-grams anywhere in the
/// corpus are left out of the geometric mean.
pub fn bleu(refs: &[Vec<String>], cands: &[Vec<String>], max_n: usize) -> Result<MetricValue> {
    check_order(max_n)?;
    if refs.len() != cands.len() {
        return Err(Error::Contract(format!(
            "{} references for {} candidates",
            refs.len(),
            cands.len()
        )));
    }
    if refs.is_empty() {
        return Err(Error::Contract("BLEU of an empty corpus".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0, 0);
    for (r, c) in refs.iter().zip(cands) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=max_n {
            let cc = ngram_counts(c, n);
            matches[n - 1] += clipped_matches(&cc, &ngram_counts(r, n));
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    let precisions: Vec<Option<f64>> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (t > 0).then(|| m as f64 / t as f64))
        .collect();
    let bp = brevity_penalty(c_len, r_len);
    Ok(result(combine(&precisions, bp), &precisions, bp))
}

/// Sentence BLEU with add-one smoothing on orders 2 and above.
pub fn sentence_bleu(reference: &[String], cand: &[String], max_n: usize) -> Result<MetricValue> {
    check_order(max_n)?;
    let precisions: Vec<Option<f64>> = (1..=max_n)
        .map(|n| {
            let m = clipped_matches(&ngram_counts(cand, n), &ngram_counts(reference, n)) as f64;
            let t = cand.len().saturating_sub(n - 1) as f64;
            if n == 1 {
                (t > 0.0).then(|| m / t)
            } else {
                Some((m + 1.0) / (t + 1.0))
            }
        })
        .collect();
    let bp = brevity_penalty(cand.len(), reference.len());
    let value = if cand.is_empty() {
        0.0
    } else {
        combine(&precisions, bp)
    };
    Ok(result(value, &precisions, bp))
}

fn result(value: f64, precisions: &[Option<f64>], bp: f64) -> MetricValue {
    let mut components: Vec<(&'static str, f64)> = precisions
        .iter()
        .enumerate()
        .map(|(i, p)| (order_name(i + 1), p.unwrap_or(f64::NAN)))
        .collect();
    components.push(("bp", bp));
    MetricValue {
        name: "bleu",
        value,
        components,
    }
}
