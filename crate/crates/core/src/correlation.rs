//! Agreement between a metric and reference scores: Pearson r and Kendall
//! tau-b, per group and averaged over groups.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::ScoredPair;
use crate::error::{Error, Result};

fn check_lengths(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Contract(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Contract(
            "correlation needs at least two points".into(),
        ));
    }
    Ok(())
}

/// Sample Pearson correlation. Undefined when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_lengths(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "pearson: constant input".into(),
        ));
    }
    if !(sxy.is_finite() && sxx.is_finite() && syy.is_finite()) {
        return Err(Error::UndefinedCorrelation(
            "pearson: non-finite input".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Number of pairs inside runs of equal values of an already sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort that returns the number of inversions (strictly greater
/// element before a smaller one).
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        sort_counting_swaps(l, bl) + sort_counting_swaps(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_lengths(xs, ys)?;
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation(
            "kendall: non-finite input".into(),
        ));
    }
    let n = xs.len() as u64;
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = n * (n - 1) / 2;
    let xs_sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs_sorted);
    let n3 = tied_pairs(&pairs);
    let mut ys_sorted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys_sorted.len()];
    let swaps = sort_counting_swaps(&mut ys_sorted, &mut buf);
    let n2 = tied_pairs(&ys_sorted);
    if n0 == n1 || n0 == n2 {
        return Err(Error::UndefinedCorrelation(
            "kendall: all values tied".into(),
        ));
    }
    let numer = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let denom = ((n0 - n1) as f64).sqrt() * ((n0 - n2) as f64).sqrt();
    Ok((numer / denom).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupStat {
    pub group: String,
    pub n: usize,
    /// `|tau|` and `|r|`, absent when the group was skipped.
    pub abs_tau: Option<f64>,
    pub abs_r: Option<f64>,
    /// Why the group was skipped.
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    /// Sorted by group name.
    pub groups: Vec<GroupStat>,
    /// Unweighted means over the groups that produced both statistics.
    pub mean_abs_tau: Option<f64>,
    pub mean_abs_r: Option<f64>,
}

impl MetricReport {
    pub fn degenerate_groups(&self) -> usize {
        self.groups.iter().filter(|g| g.note.is_some()).count()
    }
}

/// Correlates precomputed metric values with the scores of `scored`.
pub fn report_from_values(
    metric: &str,
    scored: &[ScoredPair],
    values: &[f64],
) -> Result<MetricReport> {
    if scored.len() != values.len() {
        return Err(Error::Contract(format!(
            "{} metric values for {} scored pairs",
            values.len(),
            scored.len()
        )));
    }
    let mut by_group: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (pair, &v) in scored.iter().zip(values) {
        let e = by_group.entry(pair.group.as_str()).or_default();
        e.0.push(v);
        e.1.push(pair.score);
    }
    let mut groups = Vec::with_capacity(by_group.len());
    for (group, (m, h)) in by_group {
        let n = m.len();
        let stat = if n < 2 {
            log::warn!("{metric}: group {group} has {n} item(s), skipped");
            GroupStat {
                group: group.to_string(),
                n,
                abs_tau: None,
                abs_r: None,
                note: Some("fewer than 2 items".into()),
            }
        } else {
            match (kendall_tau_b(&m, &h), pearson(&m, &h)) {
                (Ok(t), Ok(r)) => GroupStat {
                    group: group.to_string(),
                    n,
                    abs_tau: Some(t.abs()),
                    abs_r: Some(r.abs()),
                    note: None,
                },
                (Err(e), _) | (_, Err(e)) => {
                    log::warn!("{metric}: group {group} skipped: {e}");
                    GroupStat {
                        group: group.to_string(),
                        n,
                        abs_tau: None,
                        abs_r: None,
                        note: Some(e.to_string()),
                    }
                }
            }
        };
        groups.push(stat);
    }
    let defined: Vec<&GroupStat> = groups.iter().filter(|g| g.note.is_none()).collect();
    let mean = |f: fn(&GroupStat) -> Option<f64>| {
        (!defined.is_empty())
            .then(|| defined.iter().filter_map(|g| f(g)).sum::<f64>() / defined.len() as f64)
    };
    Ok(MetricReport {
        metric: metric.to_string(),
        mean_abs_tau: mean(|g| g.abs_tau),
        mean_abs_r: mean(|g| g.abs_r),
        groups,
    })
}

/// Scores every pair with `metric` and correlates per group.
pub fn evaluate_metric<F>(name: &str, scored: &[ScoredPair], metric: F) -> Result<MetricReport>
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    let values = scored
        .par_iter()
        .map(|p| metric(&p.reference, &p.candidate))
        .collect::<Result<Vec<f64>>>()?;
    report_from_values(name, scored, &values)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

/// One row per metric: `metric,abs_tau,abs_r,groups,degenerate_groups`.
pub fn summary_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from("metric,abs_tau,abs_r,groups,degenerate_groups\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.metric,
            fmt_opt(r.mean_abs_tau),
            fmt_opt(r.mean_abs_r),
            r.groups.len(),
            r.degenerate_groups()
        );
    }
    s
}

/// One row per metric and group: `metric,group,n,abs_tau,abs_r,note`.
pub fn groups_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from("metric,group,n,abs_tau,abs_r,note\n");
    for r in reports {
        for g in &r.groups {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.metric,
                g.group,
                g.n,
                fmt_opt(g.abs_tau),
                fmt_opt(g.abs_r),
                g.note.as_deref().unwrap_or("").replace(',', ";")
            );
        }
    }
    s
}

/// Aligned markdown table, metrics as rows and `|τ|`, `|r|` as columns.
pub fn markdown_table(reports: &[MetricReport]) -> String {
    let rows: Vec<[String; 3]> = reports
        .iter()
        .map(|r| {
            [
                r.metric.clone(),
                fmt_opt(r.mean_abs_tau),
                fmt_opt(r.mean_abs_r),
            ]
        })
        .collect();
    let head = ["Metric".to_string(), "|τ|".to_string(), "|r|".to_string()];
    let width = |i: usize| {
        rows.iter()
            .map(|r| r[i].chars().count())
            .chain([head[i].chars().count(), 3])
            .max()
            .unwrap_or(3)
    };
    let w = [width(0), width(1), width(2)];
    let line = |cells: &[String; 3]| {
        format!(
            "| {:<a$} | {:>b$} | {:>c$} |\n",
            cells[0],
            cells[1],
            cells[2],
            a = w[0],
            b = w[1],
            c = w[2]
        )
    };
    let mut s = line(&head);
    s.push_str(&format!(
        "|{}|{}:|{}:|\n",
        "-".repeat(w[0] + 2),
        "-".repeat(w[1] + 1),
        "-".repeat(w[2] + 1)
    ));
    for r in &rows {
        s.push_str(&line(r));
    }
    s
}
