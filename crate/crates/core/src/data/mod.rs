//! Corpus schemas, TSV loaders and the synthetic corpus generator.

mod io;
pub mod synth;

pub use io::{
    load_para_tsv, load_scored_tsv, map_entailment_label, parse_para_tsv, parse_scored_tsv,
    save_para_tsv, save_scored_tsv, ParaLoad,
};
pub use synth::{
    pretrain_corpus, scored_corpus, synth_generate, CorpusSpec, Lexicon, SynthSpec, Transform,
    MAX_SEVERITY,
};

/// One pretraining pair. `label` is the binary entailment label when known.
#[derive(Clone, Debug, PartialEq)]
pub struct ParaExample {
    pub reference: String,
    pub candidate: String,
    pub label: Option<u8>,
    pub source: String,
}

/// An evaluation pair with a quality score and a group tag such as a
/// language pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPair {
    pub reference: String,
    pub candidate: String,
    pub score: f64,
    pub group: String,
}
