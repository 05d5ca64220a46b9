use super::MetricValue;

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1.
pub fn rouge_l(reference: &[String], cand: &[String]) -> MetricValue {
    let lcs = lcs_len(reference, cand);
    let (p, r) = if lcs == 0 {
        (0.0, 0.0)
    } else {
        (
            lcs as f64 / cand.len() as f64,
            lcs as f64 / reference.len() as f64,
        )
    };
    let f = if lcs == 0 { 0.0 } else { 2.0 * p * r / (p + r) };
    MetricValue {
        name: "rouge_l",
        value: f,
        components: vec![("lcs", lcs as f64), ("precision", p), ("recall", r)],
    }
}
