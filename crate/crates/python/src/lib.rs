//! Python module `parableu`: vocabularies, models, the classical metrics,
//! correlations and synthetic data.

use std::collections::HashMap;
use std::path::PathBuf;

use parableu_core::correlation;
use parableu_core::data::{self, Lexicon, ParaExample, ScoredPair, SynthSpec, Transform};
use parableu_core::finetune::{self, FinetuneConfig};
use parableu_core::generation::{self, BeamConfig};
use parableu_core::metrics::{self, Metric};
use parableu_core::model::{ModelConfig, ParaBleuModel};
use parableu_core::pretrain::{self, PretrainConfig};
use parableu_core::text::{self, pack_pair};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(
    parableu,
    ParableuError,
    PyException,
    "Base class for errors raised by parableu."
);

fn err(e: parableu_core::Error) -> PyErr {
    let msg = format!("[{}] {e}", e.category());
    match e {
        parableu_core::Error::Io { .. } => PyIOError::new_err(msg),
        parableu_core::Error::Config(_) => PyValueError::new_err(msg),
        _ => ParableuError::new_err(msg),
    }
}

type Scored = (String, String, String, f64);

fn to_scored(items: Vec<Scored>) -> Vec<ScoredPair> {
    items
        .into_iter()
        .map(|(group, reference, candidate, score)| ScoredPair {
            reference,
            candidate,
            score,
            group,
        })
        .collect()
}

fn from_scored(items: Vec<ScoredPair>) -> Vec<Scored> {
    items
        .into_iter()
        .map(|p| (p.group, p.reference, p.candidate, p.score))
        .collect()
}

fn apply<F>(settings: Option<HashMap<String, String>>, mut set: F) -> PyResult<()>
where
    F: FnMut(&str, &str) -> parableu_core::Result<()>,
{
    let mut kv: Vec<_> = settings.unwrap_or_default().into_iter().collect();
    kv.sort();
    for (k, v) in kv {
        set(&k, &v).map_err(err)?;
    }
    Ok(())
}

#[pyclass(name = "Vocab", frozen)]
pub struct PyVocab {
    inner: text::Vocab,
}

#[pymethods]
impl PyVocab {
    /// Frequency-ranked vocabulary over whitespace/punctuation tokens.
    #[staticmethod]
    #[pyo3(signature = (texts, max_size = 4000))]
    fn build(texts: Vec<String>, max_size: usize) -> PyResult<Self> {
        Ok(Self {
            inner: text::Vocab::build(&texts, max_size).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: text::Vocab::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn encode(&self, text: &str) -> Vec<usize> {
        self.inner.encode(text)
    }

    fn decode(&self, ids: Vec<usize>) -> String {
        self.inner.decode(&ids)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Vocab(size={})", self.inner.len())
    }
}

#[pyclass(name = "Model")]
pub struct PyModel {
    inner: ParaBleuModel,
}

#[pymethods]
impl PyModel {
    /// A freshly initialized model. `preset` is `"desk"` or `"tiny"`;
    /// `settings` overrides individual `model.*` keys.
    #[new]
    #[pyo3(signature = (vocab_size, preset = "desk", seed = 0, settings = None))]
    fn new(
        vocab_size: usize,
        preset: &str,
        seed: u64,
        settings: Option<HashMap<String, String>>,
    ) -> PyResult<Self> {
        let mut config = match preset {
            "desk" => ModelConfig::desk(vocab_size),
            "tiny" => ModelConfig {
                vocab_size,
                ..ModelConfig::tiny()
            },
            other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
        };
        apply(settings, |k, v| config.set(k, v))?;
        Ok(Self {
            inner: ParaBleuModel::new(config, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ParaBleuModel::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path, &[]).map_err(err)
    }

    /// SHA-256 over the parameters whose names start with `prefix`.
    #[pyo3(signature = (prefix = ""))]
    fn digest(&self, prefix: &str) -> String {
        self.inner.digest(prefix)
    }

    fn config(&self) -> std::collections::BTreeMap<String, String> {
        self.inner.config().to_kv()
    }

    /// Pretrains in place on `(reference, candidate, label)` triples and
    /// returns the per-step loss log as dicts.
    #[pyo3(signature = (vocab, corpus, settings = None, out_dir = None))]
    fn pretrain(
        &mut self,
        py: Python<'_>,
        vocab: &PyVocab,
        corpus: Vec<(String, String, Option<u8>)>,
        settings: Option<HashMap<String, String>>,
        out_dir: Option<PathBuf>,
    ) -> PyResult<Vec<HashMap<&'static str, f64>>> {
        let mut config = PretrainConfig::default();
        apply(settings, |k, v| config.set(k, v))?;
        let corpus: Vec<ParaExample> = corpus
            .into_iter()
            .map(|(reference, candidate, label)| ParaExample {
                reference,
                candidate,
                label,
                source: "python".into(),
            })
            .collect();
        let model = &mut self.inner;
        let out = py
            .detach(|| {
                pretrain::pretrain_run(model, &vocab.inner, &corpus, &config, out_dir.as_deref())
            })
            .map_err(err)?;
        Ok(out
            .log
            .iter()
            .map(|e| {
                HashMap::from([
                    ("step", e.step as f64),
                    ("l_ar", e.l_ar),
                    ("l_mlm", e.l_mlm),
                    ("l_cls", e.l_cls),
                    ("l_total", e.l_total),
                    ("lr", e.lr),
                ])
            })
            .collect())
    }

    /// Fine-tunes in place on `(group, reference, candidate, score)` tuples
    /// and returns the validation curve as `(step, train_mse, val_mse,
    /// val_pearson)`.
    #[pyo3(signature = (vocab, data, settings = None, out_dir = None))]
    fn finetune(
        &mut self,
        py: Python<'_>,
        vocab: &PyVocab,
        data: Vec<Scored>,
        settings: Option<HashMap<String, String>>,
        out_dir: Option<PathBuf>,
    ) -> PyResult<Vec<(usize, f64, f64, f64)>> {
        let mut config = FinetuneConfig::desk();
        apply(settings, |k, v| config.set(k, v))?;
        let data = to_scored(data);
        let model = &mut self.inner;
        let out = py
            .detach(|| {
                finetune::finetune_run(model, &vocab.inner, &data, &config, out_dir.as_deref())
            })
            .map_err(err)?;
        Ok(out
            .curve
            .iter()
            .map(|p| (p.step, p.train_mse, p.val_mse, p.val_pearson))
            .collect())
    }

    fn score(&self, vocab: &PyVocab, reference: &str, candidate: &str) -> PyResult<f64> {
        finetune::predict_score(&self.inner, &vocab.inner, reference, candidate).map_err(err)
    }

    fn scores(
        &self,
        py: Python<'_>,
        vocab: &PyVocab,
        pairs: Vec<(String, String)>,
    ) -> PyResult<Vec<f64>> {
        let refs: Vec<(&str, &str)> = pairs
            .iter()
            .map(|(r, c)| (r.as_str(), c.as_str()))
            .collect();
        py.detach(|| finetune::predict_scores(&self.inner, &vocab.inner, &refs))
            .map_err(err)
    }

    /// Probability that `reference` entails `candidate`.
    fn entailment(&self, vocab: &PyVocab, reference: &str, candidate: &str) -> PyResult<f64> {
        let v = &vocab.inner;
        let pair = pack_pair(
            &v.encode(reference),
            &v.encode(candidate),
            self.inner.config().max_len,
        )
        .map_err(err)?;
        let logit = self.inner.entailment_logit(&pair).map_err(err)? as f64;
        Ok(1.0 / (1.0 + (-logit).exp()))
    }

    /// Applies the edit shown by `demo_ref -> demo_cand` to `reference`.
    #[pyo3(signature = (vocab, demo_ref, demo_cand, reference, beam = 4, max_len = 24, length_penalty = 0.6))]
    #[allow(clippy::too_many_arguments)]
    fn generate<'py>(
        &self,
        py: Python<'py>,
        vocab: &PyVocab,
        demo_ref: &str,
        demo_cand: &str,
        reference: &str,
        beam: usize,
        max_len: usize,
        length_penalty: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let config = BeamConfig {
            beam,
            max_len,
            length_penalty,
            ..BeamConfig::default()
        };
        config.validate().map_err(err)?;
        let r = generation::one_shot(
            &self.inner,
            &vocab.inner,
            demo_ref,
            demo_cand,
            reference,
            &config,
        )
        .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("candidate", r.candidate)?;
        d.set_item("entailment_probability", r.entailment_probability)?;
        d.set_item("beams", r.beams)?;
        d.set_item("leakage", r.leakage)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Model(vocab_size={}, hidden={}, layers={})",
            c.vocab_size, c.hidden, c.layers_enc
        )
    }
}

/// Names of the classical metrics, in report order.
#[pyfunction]
fn metric_names() -> Vec<&'static str> {
    Metric::ALL.iter().map(|m| m.name()).collect()
}

/// Segment-level score of one classical metric.
#[pyfunction]
fn metric(name: &str, reference: &str, candidate: &str) -> PyResult<f64> {
    let m: Metric = name.parse().map_err(err)?;
    m.score(reference, candidate).map_err(err)
}

/// Corpus BLEU over parallel lists of references and candidates.
#[pyfunction]
#[pyo3(signature = (references, candidates, max_n = 4))]
fn corpus_bleu(references: Vec<String>, candidates: Vec<String>, max_n: usize) -> PyResult<f64> {
    let r: Vec<Vec<String>> = references.iter().map(|s| text::tokenize(s)).collect();
    let c: Vec<Vec<String>> = candidates.iter().map(|s| text::tokenize(s)).collect();
    Ok(metrics::bleu(&r, &c, max_n).map_err(err)?.value)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    text::tokenize(text)
}

#[pyfunction]
fn kendall_tau_b(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    correlation::kendall_tau_b(&x, &y).map_err(err)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    correlation::pearson(&x, &y).map_err(err)
}

/// Splits `(group, reference, candidate, score)` tuples so that no
/// reference appears on both sides.
#[pyfunction]
#[pyo3(signature = (data, val_fraction, seed = 0))]
fn split_by_reference(
    data: Vec<Scored>,
    val_fraction: f64,
    seed: u64,
) -> PyResult<(Vec<Scored>, Vec<Scored>)> {
    let (train, val) =
        finetune::split_by_reference(&to_scored(data), val_fraction, seed).map_err(err)?;
    Ok((from_scored(train), from_scored(val)))
}

/// `(reference, candidate, label)` pairs from one synthetic transform.
#[pyfunction]
#[pyo3(signature = (transform, count, severity = 0, seed = 0))]
fn synth(
    transform: &str,
    count: usize,
    severity: u8,
    seed: u64,
) -> PyResult<Vec<(String, String, Option<u8>)>> {
    let transform: Transform = transform.parse().map_err(err)?;
    let spec = SynthSpec {
        transform,
        severity,
        seed,
        count,
    };
    let (para, _) = data::synth_generate(&spec, &Lexicon::builtin()).map_err(err)?;
    Ok(para
        .into_iter()
        .map(|e| (e.reference, e.candidate, e.label))
        .collect())
}

/// The mixed-transform pretraining corpus as `(reference, candidate, label)`.
#[pyfunction]
#[pyo3(signature = (count = 2000, seed = 0))]
fn pretrain_corpus(count: usize, seed: u64) -> PyResult<Vec<(String, String, Option<u8>)>> {
    let spec = data::CorpusSpec {
        count,
        seed,
        ..data::CorpusSpec::default()
    };
    let corpus = data::pretrain_corpus(&Lexicon::builtin(), &spec).map_err(err)?;
    Ok(corpus
        .into_iter()
        .map(|e| (e.reference, e.candidate, e.label))
        .collect())
}

/// A scored evaluation set as `(group, reference, candidate, score)`.
#[pyfunction]
#[pyo3(signature = (count, seed = 0))]
fn scored_corpus(count: usize, seed: u64) -> PyResult<Vec<Scored>> {
    Ok(from_scored(
        data::scored_corpus(&Lexicon::builtin(), count, seed).map_err(err)?,
    ))
}

#[pymodule]
fn parableu(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("ParableuError", m.py().get_type::<ParableuError>())?;
    m.add_class::<PyVocab>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(metric_names, m)?)?;
    m.add_function(wrap_pyfunction!(metric, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau_b, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(split_by_reference, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(scored_corpus, m)?)?;
    Ok(())
}
