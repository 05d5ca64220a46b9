//! Word-level tokenization, vocabularies, reference/candidate packing and
//! masked-language-model corruption.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::SeededRng;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const MASK: TokenId = 4;
pub const UNK: TokenId = 5;
pub const NUM_SPECIAL: usize = 6;

/// Surface forms of the special tokens, in id order.
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] =
    ["<pad>", "<bos>", "<eos>", "<sep>", "<mask>", "<unk>"];

/// Lowercases, splits on whitespace and emits every ASCII punctuation
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars().flat_map(char::to_lowercase) {
            if ch.is_ascii_punctuation() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    /// Keeps the `max_size - 6` most frequent tokens (ties broken
    /// lexicographically) after the six specials.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self> {
        if max_size <= NUM_SPECIAL {
            return Err(Error::Config(format!(
                "vocabulary size {max_size} leaves no room for ordinary tokens (need at least {})",
                NUM_SPECIAL + 1
            )));
        }
        if corpus.is_empty() {
            return Err(Error::Config(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIAL_TOKENS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_SPECIAL);
        Self::from_tokens(
            SPECIAL_TOKENS
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(t, _)| t))
                .collect(),
        )
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Format(format!(
                    "vocabulary line {} must be {s}",
                    i + 1
                )));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined surface form of the ordinary tokens; specials other than
    /// UNK are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&i| i == UNK || i >= NUM_SPECIAL)
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Hex SHA-256 of the token list, recorded in checkpoints.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// `BOS · ref · SEP · cand · EOS`, optionally followed by PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedPair {
    pub ids: Vec<TokenId>,
    /// 0 for BOS, reference tokens and SEP; 1 for candidate tokens, EOS and PAD.
    pub segments: Vec<u8>,
    ref_len: usize,
    cand_len: usize,
}

impl PackedPair {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Length without trailing padding.
    pub fn content_len(&self) -> usize {
        self.ref_len + self.cand_len + 3
    }

    pub fn sep_position(&self) -> usize {
        self.ref_len + 1
    }

    /// The (possibly truncated) reference and candidate tokens.
    pub fn unpack(&self) -> (&[TokenId], &[TokenId]) {
        let sep = self.sep_position();
        (
            &self.ids[1..sep],
            &self.ids[sep + 1..sep + 1 + self.cand_len],
        )
    }

    pub fn padded(mut self, len: usize) -> Self {
        while self.ids.len() < len {
            self.ids.push(PAD);
            self.segments.push(1);
        }
        self
    }
}

/// Packs a pair, truncating both sides proportionally from their tails when
/// the combined length would exceed `max_len`.
pub fn pack_pair(
    reference: &[TokenId],
    candidate: &[TokenId],
    max_len: usize,
) -> Result<PackedPair> {
    if max_len < 5 {
        return Err(Error::Config(format!(
            "max_len {max_len} is below the minimum packed length of 5"
        )));
    }
    let budget = max_len - 3;
    let (r, c) = (reference.len(), candidate.len());
    let (keep_r, keep_c) = if r + c <= budget {
        (r, c)
    } else {
        (budget * r / (r + c), budget * c / (r + c))
    };
    let mut ids = Vec::with_capacity(keep_r + keep_c + 3);
    let mut segments = Vec::with_capacity(ids.capacity());
    ids.push(BOS);
    ids.extend_from_slice(&reference[..keep_r]);
    ids.push(SEP);
    segments.resize(ids.len(), 0);
    ids.extend_from_slice(&candidate[..keep_c]);
    ids.push(EOS);
    segments.resize(ids.len(), 1);
    Ok(PackedPair {
        ids,
        segments,
        ref_len: keep_r,
        cand_len: keep_c,
    })
}

pub fn is_special(id: TokenId) -> bool {
    id < NUM_SPECIAL && id != UNK
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Selected positions: 80% MASK, 10% random ordinary token, 10% kept.
    #[default]
    Bert,
    /// Every selected position becomes MASK.
    AlwaysMask,
}

impl MaskMode {
    pub fn name(self) -> &'static str {
        match self {
            MaskMode::Bert => "bert",
            MaskMode::AlwaysMask => "always_mask",
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bert" => Ok(MaskMode::Bert),
            "always_mask" => Ok(MaskMode::AlwaysMask),
            other => Err(Error::Config(format!("unknown mask mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    pub input_ids: Vec<TokenId>,
    pub segments: Vec<u8>,
    /// Original id at masked positions, `None` elsewhere.
    pub labels: Vec<Option<TokenId>>,
    pub masked: Vec<bool>,
}

impl MaskedBatch {
    pub fn num_masked(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    /// The unmodified pair viewed as a batch with nothing masked.
    pub fn unmasked(pair: &PackedPair) -> Self {
        Self {
            input_ids: pair.ids.clone(),
            segments: pair.segments.clone(),
            labels: vec![None; pair.len()],
            masked: vec![false; pair.len()],
        }
    }
}

/// Selects each non-special position of both segments with probability
/// `mask_prob` and corrupts it according to `mode`.
pub fn apply_mlm_mask(
    pair: &PackedPair,
    rng: &mut SeededRng,
    mask_prob: f64,
    vocab_size: usize,
    mode: MaskMode,
) -> Result<MaskedBatch> {
    if !(0.0..=1.0).contains(&mask_prob) {
        return Err(Error::Config(format!(
            "mask probability {mask_prob} outside [0, 1]"
        )));
    }
    let mut out = MaskedBatch::unmasked(pair);
    for (i, &id) in pair.ids.iter().enumerate() {
        if is_special(id) || !rng.bernoulli(mask_prob) {
            continue;
        }
        out.masked[i] = true;
        out.labels[i] = Some(id);
        out.input_ids[i] = match mode {
            MaskMode::AlwaysMask => MASK,
            MaskMode::Bert => {
                let u = rng.uniform();
                if u < 0.8 || vocab_size <= NUM_SPECIAL {
                    MASK
                } else if u < 0.9 {
                    NUM_SPECIAL + rng.below(vocab_size - NUM_SPECIAL)
                } else {
                    id
                }
            }
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat sat."), ["the", "cat", "sat", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("don't stop"), ["don", "'", "t", "stop"]);
        assert_eq!(tokenize("  A,b  "), ["a", ",", "b"]);
    }

    #[test]
    fn vocab_small_corpus() {
        let v = Vocab::build(&["a a b"], 8).unwrap();
        assert_eq!(v.len(), 8.min(NUM_SPECIAL + 2));
        assert_eq!(v.id("a"), 6);
        assert_eq!(v.id("b"), 7);
        assert_eq!(v.id("zebra"), UNK);
        assert!(matches!(Vocab::build(&["a"], 6), Err(Error::Config(_))));
        assert!(matches!(
            Vocab::build::<&str>(&[], 10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn vocab_ties_are_lexicographic() {
        // counts: d=3, b=2, c=2, a=1, e=1
        let corpus = ["d b c", "e d c", "a d b"];
        let v = Vocab::build(&corpus, 9).unwrap();
        let ordinary: Vec<&str> = v.tokens()[NUM_SPECIAL..]
            .iter()
            .map(String::as_str)
            .collect();
        let mut oracle = [("d", 3), ("b", 2), ("c", 2), ("a", 1), ("e", 1)];
        oracle.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(y.0)));
        let expect: Vec<&str> = oracle.iter().take(3).map(|x| x.0).collect();
        assert_eq!(ordinary, expect);
        assert_eq!(Vocab::build(&corpus, 9).unwrap(), v);
    }

    #[test]
    fn vocab_file_roundtrip_and_validation() {
        let v = Vocab::build(&["x y z y"], 20).unwrap();
        assert_eq!(Vocab::parse(&v.to_file_string()).unwrap(), v);
        assert!(Vocab::parse("<bos>\n<pad>\n<eos>\n<sep>\n<mask>\n<unk>\n").is_err());
    }

    #[test]
    fn pack_examples() {
        let p = pack_pair(&[10], &[11], 16).unwrap();
        assert_eq!(p.ids, vec![BOS, 10, SEP, 11, EOS]);
        assert_eq!(p.segments, vec![0, 0, 0, 1, 1]);

        let p = pack_pair(&[10, 12], &[], 16).unwrap();
        assert_eq!(p.ids, vec![BOS, 10, 12, SEP, EOS]);

        let r: Vec<usize> = (100..110).collect();
        let c: Vec<usize> = (200..210).collect();
        let p = pack_pair(&r, &c, 14).unwrap();
        let (pr, pc) = p.unpack();
        assert_eq!(pr, &r[..5]);
        assert_eq!(pc, &c[..5]);
        assert!(matches!(pack_pair(&r, &c, 4), Err(Error::Config(_))));
    }

    #[test]
    fn masking_boundaries() {
        let p = pack_pair(&[10, 11, 12], &[13, 14], 32).unwrap();
        let mut rng = SeededRng::new(0);
        let m = apply_mlm_mask(&p, &mut rng, 0.0, 20, MaskMode::Bert).unwrap();
        assert_eq!(m.input_ids, p.ids);
        assert_eq!(m.num_masked(), 0);

        let m = apply_mlm_mask(&p, &mut rng, 1.0, 20, MaskMode::AlwaysMask).unwrap();
        for (i, &id) in p.ids.iter().enumerate() {
            if is_special(id) {
                assert_eq!(m.input_ids[i], id);
                assert!(m.labels[i].is_none());
            } else {
                assert_eq!(m.input_ids[i], MASK);
                assert_eq!(m.labels[i], Some(id));
            }
        }
        assert!(apply_mlm_mask(&p, &mut rng, 1.5, 20, MaskMode::Bert).is_err());
    }

    #[test]
    fn masking_rate_is_close_to_target() {
        let ids: Vec<usize> = (0..98).map(|i| 6 + i % 30).collect();
        let p = pack_pair(&ids[..49], &ids[49..], 128).unwrap();
        let mut rng = SeededRng::new(123);
        let mut masked = 0usize;
        let mut total = 0usize;
        while total < 100_000 {
            let m = apply_mlm_mask(&p, &mut rng, 0.15, 40, MaskMode::Bert).unwrap();
            masked += m.num_masked();
            total += ids.len();
        }
        let rate = masked as f64 / total as f64;
        assert!((rate - 0.15).abs() < 0.01, "rate {rate}");

        let a = apply_mlm_mask(&p, &mut SeededRng::new(5), 0.15, 40, MaskMode::Bert).unwrap();
        let b = apply_mlm_mask(&p, &mut SeededRng::new(5), 0.15, 40, MaskMode::Bert).unwrap();
        assert_eq!(a, b);
    }
}
