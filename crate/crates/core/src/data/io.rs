use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ParaExample, ScoredPair};
use crate::error::{Error, Result};
use crate::text::tokenize;

/// Result of reading a pretraining TSV: the parsed examples and the 1-based
/// line numbers that could not be parsed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParaLoad {
    pub examples: Vec<ParaExample>,
    pub malformed: Vec<usize>,
}

/// `entailment` maps to 1, `contradiction` and `neutral` to 0.
pub fn map_entailment_label(raw: &str) -> Result<u8> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "entailment" => Ok(1),
        "contradiction" | "neutral" => Ok(0),
        _ => Err(Error::Format(format!("unknown entailment label {raw:?}"))),
    }
}

fn parse_label(raw: &str) -> Option<Option<u8>> {
    match raw.trim() {
        "" => Some(None),
        "0" => Some(Some(0)),
        "1" => Some(Some(1)),
        other => map_entailment_label(other).ok().map(Some),
    }
}

fn parse_para_line(line: &str) -> Option<ParaExample> {
    let cols: Vec<&str> = line.split('\t').collect();
    if !(2..=4).contains(&cols.len()) {
        return None;
    }
    let (reference, candidate) = (cols[0].trim(), cols[1].trim());
    if tokenize(reference).is_empty() || tokenize(candidate).is_empty() {
        return None;
    }
    let label = match cols.get(2) {
        Some(raw) => parse_label(raw)?,
        None => None,
    };
    Some(ParaExample {
        reference: reference.to_string(),
        candidate: candidate.to_string(),
        label,
        source: cols
            .get(3)
            .map(|s| s.trim().to_string())
            .unwrap_or_default(),
    })
}

/// Parses `ref\tcand[\tlabel[\tsource]]` lines. Labels may be `0`/`1` or
/// an NLI label name. Blank lines are skipped; malformed lines are counted,
/// and more than 10% malformed is an error.
pub fn parse_para_tsv(text: &str) -> Result<ParaLoad> {
    let mut out = ParaLoad::default();
    let mut seen = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        match parse_para_line(line) {
            Some(ex) => out.examples.push(ex),
            None => out.malformed.push(i + 1),
        }
    }
    if !out.malformed.is_empty() {
        log::warn!(
            "{} malformed lines (first at line {})",
            out.malformed.len(),
            out.malformed[0]
        );
    }
    if out.malformed.len() * 10 > seen {
        return Err(Error::Format(format!(
            "{} of {seen} lines are malformed (first at line {})",
            out.malformed.len(),
            out.malformed[0]
        )));
    }
    Ok(out)
}

pub fn load_para_tsv(path: &Path) -> Result<ParaLoad> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_para_tsv(&text)
}

fn check_field(s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::Format(format!(
            "field {s:?} contains a tab or newline"
        )));
    }
    Ok(())
}

pub fn save_para_tsv(path: &Path, examples: &[ParaExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        for f in [&ex.reference, &ex.candidate, &ex.source] {
            check_field(f)?;
        }
        let label = ex.label.map(|l| l.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            ex.reference, ex.candidate, label, ex.source
        )
        .unwrap();
    }
    crate::write_atomic(path, out.as_bytes())
}

/// Parses `group\tref\tcand\tscore` lines.
pub fn parse_scored_tsv(text: &str) -> Result<Vec<ScoredPair>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Format(format!(
                "line {n}: expected 4 columns, found {}",
                cols.len()
            )));
        }
        let score: f64 = cols[3]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {n}: unparsable score {:?}", cols[3])))?;
        if !score.is_finite() {
            return Err(Error::Format(format!(
                "line {n}: score {score} is not finite"
            )));
        }
        let group = cols[0].trim();
        if group.is_empty() {
            return Err(Error::Format(format!("line {n}: empty group")));
        }
        out.push(ScoredPair {
            reference: cols[1].to_string(),
            candidate: cols[2].to_string(),
            score,
            group: group.to_string(),
        });
    }
    if out.is_empty() {
        log::warn!("scored file has no pairs");
    }
    Ok(out)
}

pub fn load_scored_tsv(path: &Path) -> Result<Vec<ScoredPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scored_tsv(&text)
}

pub fn save_scored_tsv(path: &Path, pairs: &[ScoredPair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        for f in [&p.group, &p.reference, &p.candidate] {
            check_field(f)?;
        }
        writeln!(
            out,
            "{}\t{}\t{}\t{:?}",
            p.group, p.reference, p.candidate, p.score
        )
        .unwrap();
    }
    crate::write_atomic(path, out.as_bytes())
}
