//! Python bindings: `import pcr`.

use std::collections::{BTreeSet, HashMap};

use pcr_core::corpus::{
    build_candidate_pool, build_queries, load_articles, load_paragraphs, load_queries, query_text as join_query,
    split_by_year, write_jsonl, Article, DEFAULT_PIVOT_YEAR,
};
use pcr_core::encoder::tokenize as split_tokens;
use pcr_core::evaluate::{self, read_run, MetricReport, RankedQuery};
use pcr_core::index::build_index;
use pcr_core::objective::{self, LossConfig};
use pcr_core::sampling::{citation_lookup, read_quadruplets, sample_corpus, write_quadruplets, QuadrupletHeader, Quota};
use pcr_core::synthetic::{generate, SyntheticConfig};
use pcr_core::trainer::{self, LossKind, TrainConfig, TrainingData};
use pcr_core::{Embedding, EncoderConfig, EncoderParams, PcrError, VectorIndex};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: PcrError) -> PyErr {
    match e {
        PcrError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn id_set(obj: &Bound<'_, PyAny>) -> PyResult<BTreeSet<String>> {
    obj.try_iter()?.map(|item| item?.extract::<String>()).collect()
}

fn report_dict<'py>(py: Python<'py>, r: &MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("r_precision", r.r_precision)?;
    d.set_item("r_at_5", r.r_at_5)?;
    d.set_item("r_at_10", r.r_at_10)?;
    d.set_item("mrr", r.mrr)?;
    d.set_item("n_queries", r.n_queries)?;
    d.set_item("pool_coverage", r.pool_coverage)?;
    Ok(d)
}

/// Lower-cased tokens, with `[TS]` kept whole.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    split_tokens(text)
}

#[pyfunction]
#[pyo3(name = "query_text")]
fn py_query_text(title: &str, abstract_text: &str, topic_sentence: &str) -> String {
    join_query(title, abstract_text, topic_sentence)
}

#[pyfunction]
#[pyo3(signature = (q, pos, neg, margin = 0.5))]
fn triplet_loss(q: Vec<f64>, pos: Vec<f64>, neg: Vec<f64>, margin: f64) -> PyResult<f64> {
    objective::triplet_loss(&q, &pos, &neg, &LossConfig::with_margin(margin)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (q, p1, p2, neg, margin = 0.5))]
fn quadruplet_loss(q: Vec<f64>, p1: Vec<f64>, p2: Vec<f64>, neg: Vec<f64>, margin: f64) -> PyResult<f64> {
    objective::quadruplet_loss(&q, &p1, &p2, &neg, &LossConfig::with_margin(margin)).map_err(err)
}

/// Gradients of the quadruplet loss as `(d_q, d_p1, d_p2, d_neg)`.
#[pyfunction]
#[pyo3(signature = (q, p1, p2, neg, margin = 0.5))]
#[allow(clippy::type_complexity)]
fn quadruplet_grad(
    q: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    neg: Vec<f64>,
    margin: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = objective::quadruplet_grad(&q, &p1, &p2, &neg, &LossConfig::with_margin(margin)).map_err(err)?;
    Ok((g.query, g.pos1, g.pos2, g.neg))
}

#[pyfunction]
fn r_precision(ranking: Vec<String>, relevant: &Bound<'_, PyAny>) -> PyResult<f64> {
    evaluate::r_precision(&ranking, &id_set(relevant)?).map_err(err)
}

#[pyfunction]
fn recall_at_k(ranking: Vec<String>, relevant: &Bound<'_, PyAny>, k: usize) -> PyResult<f64> {
    evaluate::recall_at_k(&ranking, &id_set(relevant)?, k).map_err(err)
}

#[pyfunction]
fn mrr(ranking: Vec<String>, relevant: &Bound<'_, PyAny>) -> PyResult<f64> {
    evaluate::mrr(&ranking, &id_set(relevant)?).map_err(err)
}

#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    evaluate::pearson(&xs, &ys).map_err(err)
}

#[pyfunction]
fn jaccard(a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>) -> PyResult<f64> {
    evaluate::jaccard(&id_set(a)?, &id_set(b)?).map_err(err)
}

/// Scores a run file against gold queries; metrics are fractions in [0, 1].
#[pyfunction]
fn evaluate_run<'py>(py: Python<'py>, run_path: &str, gold_path: &str) -> PyResult<Bound<'py, PyDict>> {
    let gold = load_queries(gold_path).map_err(err)?;
    let by_id: HashMap<&str, _> = gold.iter().map(|q| (q.paragraph_id.as_str(), q)).collect();
    let mut run = Vec::new();
    for (qid, ranking) in read_run(run_path).map_err(err)? {
        let q = by_id
            .get(qid.as_str())
            .ok_or_else(|| PyValueError::new_err(format!("run lists unknown query {qid:?}")))?;
        run.push(RankedQuery {
            year: q.year,
            gold: q.relevant_ids.clone(),
            query_id: qid,
            ranking,
        });
    }
    report_dict(py, &evaluate::evaluate_run(&run).map_err(err)?)
}

#[pyclass(name = "Encoder", module = "pcr", skip_from_py_object)]
#[derive(Clone)]
struct PyEncoder {
    inner: EncoderParams,
}

#[pymethods]
impl PyEncoder {
    #[new]
    #[pyo3(signature = (hash_buckets = None, embed_dim = None, hidden_dim = None, out_dim = None, seed = 0))]
    fn new(
        hash_buckets: Option<usize>,
        embed_dim: Option<usize>,
        hidden_dim: Option<usize>,
        out_dim: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let d = EncoderConfig::default();
        let cfg = EncoderConfig {
            hash_buckets: hash_buckets.unwrap_or(d.hash_buckets),
            embed_dim: embed_dim.unwrap_or(d.embed_dim),
            hidden_dim: hidden_dim.unwrap_or(d.hidden_dim),
            out_dim: out_dim.unwrap_or(d.out_dim),
            seed,
        };
        Ok(PyEncoder {
            inner: EncoderParams::init(cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyEncoder {
            inner: EncoderParams::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    #[getter]
    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }

    fn encode(&self, text: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.encode(text).map_err(err)?.0)
    }

    fn encode_query(&self, title: &str, abstract_text: &str, topic_sentence: &str) -> PyResult<Vec<f64>> {
        self.encode(&join_query(title, abstract_text, topic_sentence))
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Encoder(hash_buckets={}, embed_dim={}, hidden_dim={}, out_dim={}, seed={})",
            c.hash_buckets, c.embed_dim, c.hidden_dim, c.out_dim, c.seed
        )
    }
}

#[pyclass(name = "Index", module = "pcr")]
struct PyIndex {
    inner: VectorIndex,
}

#[pymethods]
impl PyIndex {
    /// Exact index over `vectors`, one row per id.
    #[new]
    fn new(ids: Vec<String>, years: Vec<i32>, vectors: Vec<Vec<f64>>) -> PyResult<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(PyValueError::new_err("all vectors must have the same length"));
        }
        let matrix = vectors.iter().flatten().map(|&v| v as f32).collect();
        Ok(PyIndex {
            inner: VectorIndex::new(ids, years, dim, matrix).map_err(err)?,
        })
    }

    /// Embeds the candidate pool of an article JSONL file.
    #[staticmethod]
    fn build(encoder: &PyEncoder, articles_path: &str) -> PyResult<Self> {
        let (articles, _) = load_articles(articles_path).map_err(err)?;
        let pool = build_candidate_pool(&articles);
        Ok(PyIndex {
            inner: build_index(&pool, &encoder.inner).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyIndex {
            inner: VectorIndex::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(id, distance)` pairs of the `k` nearest rows older than `max_year`.
    #[pyo3(signature = (query, k = 10, max_year = None))]
    fn search(&self, query: Vec<f64>, k: usize, max_year: Option<i32>) -> PyResult<Vec<(String, f64)>> {
        let hits = self.inner.search(&Embedding(query), k, max_year).map_err(err)?;
        Ok(hits.into_iter().map(|h| (h.id, h.distance)).collect())
    }
}

/// Writes a clustered toy corpus as `articles.jsonl` and `paragraphs.jsonl`.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 0))]
fn synthesize(out_dir: &str, seed: u64) -> PyResult<(usize, usize)> {
    let corpus = generate(&SyntheticConfig {
        seed,
        ..Default::default()
    });
    std::fs::create_dir_all(out_dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let dir = std::path::Path::new(out_dir);
    write_jsonl(dir.join("articles.jsonl"), &corpus.articles).map_err(err)?;
    write_jsonl(dir.join("paragraphs.jsonl"), &corpus.paragraphs).map_err(err)?;
    Ok((corpus.articles.len(), corpus.paragraphs.len()))
}

/// Builds queries from a corpus and splits them by year into
/// `train.jsonl`, `validation.jsonl` and `test.jsonl` under `out_dir`.
#[pyfunction]
#[pyo3(signature = (articles_path, paragraphs_path, out_dir, pivot = DEFAULT_PIVOT_YEAR))]
fn prepare_queries(
    articles_path: &str,
    paragraphs_path: &str,
    out_dir: &str,
    pivot: i32,
) -> PyResult<(usize, usize, usize)> {
    let (articles, _) = load_articles(articles_path).map_err(err)?;
    let paragraphs = load_paragraphs(paragraphs_path).map_err(err)?;
    let by_id: HashMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let (queries, _) = build_queries(&paragraphs, &by_id);
    let split = split_by_year(&queries, pivot);
    let dir = std::path::Path::new(out_dir);
    write_jsonl(dir.join("train.jsonl"), &split.train).map_err(err)?;
    write_jsonl(dir.join("validation.jsonl"), &split.validation).map_err(err)?;
    write_jsonl(dir.join("test.jsonl"), &split.test).map_err(err)?;
    Ok((split.train.len(), split.validation.len(), split.test.len()))
}

/// Samples quadruplets for the paragraphs behind `queries_path`; returns
/// how many were written.
#[pyfunction]
#[pyo3(signature = (articles_path, paragraphs_path, queries_path, out_path, seed = 0))]
fn sample(articles_path: &str, paragraphs_path: &str, queries_path: &str, out_path: &str, seed: u64) -> PyResult<usize> {
    let (articles, _) = load_articles(articles_path).map_err(err)?;
    let paragraphs = load_paragraphs(paragraphs_path).map_err(err)?;
    let wanted: BTreeSet<String> = load_queries(queries_path)
        .map_err(err)?
        .into_iter()
        .map(|q| q.paragraph_id)
        .collect();
    let training: Vec<_> = paragraphs.iter().filter(|p| wanted.contains(&p.id)).cloned().collect();
    let by_id: HashMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let lookup = citation_lookup(&articles);
    let quota = Quota::default();
    let quads = sample_corpus(&training, &paragraphs, &by_id, &lookup, seed, quota).map_err(err)?;
    write_quadruplets(out_path, QuadrupletHeader { seed, quota: quota.0 }, &quads).map_err(err)?;
    Ok(quads.len())
}

/// Fine-tunes `encoder` and returns `(best_encoder, best_epoch, log_tsv)`.
#[pyfunction]
#[pyo3(signature = (
    encoder, articles_path, train_queries_path, validation_queries_path, quadruplets_path,
    epochs = 5, lr = 1e-5, seed = 0, loss = "quadruplet", train_embeddings = false
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    encoder: &PyEncoder,
    articles_path: &str,
    train_queries_path: &str,
    validation_queries_path: &str,
    quadruplets_path: &str,
    epochs: usize,
    lr: f64,
    seed: u64,
    loss: &str,
    train_embeddings: bool,
) -> PyResult<(PyEncoder, usize, String)> {
    let loss = match loss {
        "quadruplet" => LossKind::Quadruplet,
        "triplet" => LossKind::Triplet,
        other => return Err(PyValueError::new_err(format!("unknown loss {other:?}"))),
    };
    let (articles, _) = load_articles(articles_path).map_err(err)?;
    let train_queries = load_queries(train_queries_path).map_err(err)?;
    let validation = load_queries(validation_queries_path).map_err(err)?;
    let (_, quads) = read_quadruplets(quadruplets_path).map_err(err)?;
    let pool = build_candidate_pool(&articles);
    let data = TrainingData::new(&articles, &train_queries, validation, pool);
    let mut initial = encoder.inner.clone();
    if train_embeddings {
        initial.frozen.embeddings = false;
    }
    let cfg = TrainConfig {
        epochs,
        lr,
        seed,
        loss,
        ..Default::default()
    };
    let outcome = py
        .detach(|| trainer::train(&data, &quads, initial, &cfg))
        .map_err(err)?;
    let log = outcome.log_tsv();
    Ok((PyEncoder { inner: outcome.best }, outcome.best_epoch, log))
}

#[pymodule]
fn pcr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(py_query_text, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(quadruplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(quadruplet_grad, m)?)?;
    m.add_function(wrap_pyfunction!(r_precision, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_run, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(prepare_queries, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
