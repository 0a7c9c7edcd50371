//! Exact nearest-neighbour search over pool embeddings.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CandidatePool;
use crate::encoder::{Embedding, EncoderParams};
use crate::error::{PcrError, Result};

const INDEX_FORMAT: &str = "pcr-index";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    ids: Vec<String>,
    years: Vec<i32>,
    dim: usize,
    /// Row-major `ids.len() x dim`.
    matrix: Vec<f32>,
    positions: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(ids: Vec<String>, years: Vec<i32>, dim: usize, matrix: Vec<f32>) -> Result<Self> {
        if ids.len() != years.len() || matrix.len() != ids.len() * dim {
            return Err(PcrError::Format(format!(
                "index with {} ids, {} years and {} values for dim {dim}",
                ids.len(),
                years.len(),
                matrix.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(PcrError::NonFinite("index matrix".into()));
        }
        let mut positions = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(PcrError::DuplicateId(id.clone()));
            }
        }
        Ok(VectorIndex {
            ids,
            years,
            dim,
            matrix,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// L2 distance from `query` to row `i`, accumulated in `f64`.
    pub fn distance(&self, i: usize, query: &[f64]) -> f64 {
        self.row(i)
            .iter()
            .zip(query)
            .map(|(&r, &q)| {
                let d = f64::from(r) - q;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    fn check_query(&self, query: &Embedding) -> Result<()> {
        if query.dim() != self.dim {
            return Err(PcrError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        Ok(())
    }

    fn scored(&self, query: &Embedding, max_year: Option<i32>) -> Vec<(usize, f64)> {
        (0..self.len())
            .filter(|&i| max_year.is_none_or(|y| self.years[i] < y))
            .map(|i| (i, self.distance(i, query.as_slice())))
            .collect()
    }

    fn order(&self, a: &(usize, f64), b: &(usize, f64)) -> Ordering {
        a.1.total_cmp(&b.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
    }

    fn to_hits(&self, scored: Vec<(usize, f64)>) -> Vec<Hit> {
        scored
            .into_iter()
            .map(|(i, distance)| Hit {
                id: self.ids[i].clone(),
                distance,
            })
            .collect()
    }

    /// The `k` nearest rows with year strictly below `max_year` (when
    /// given), by ascending distance then ascending id.
    pub fn search(&self, query: &Embedding, k: usize, max_year: Option<i32>) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(PcrError::Precondition("k must be at least 1".into()));
        }
        self.check_query(query)?;
        let mut scored = self.scored(query, max_year);
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, |a, b| self.order(a, b));
            scored.truncate(k);
        }
        scored.sort_unstable_by(|a, b| self.order(a, b));
        Ok(self.to_hits(scored))
    }

    /// Every eligible row, ranked.
    pub fn full_ranking(&self, query: &Embedding, max_year: Option<i32>) -> Result<Vec<Hit>> {
        self.check_query(query)?;
        let mut scored = self.scored(query, max_year);
        scored.sort_unstable_by(|a, b| self.order(a, b));
        Ok(self.to_hits(scored))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| PcrError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| PcrError::io(path, e))?;
        w.flush().map_err(|e| PcrError::io(path, e))
    }

    /// JSON header line with version, N, d, ids and years, then the
    /// row-major little-endian `f32` matrix.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            n: self.len(),
            dim: self.dim,
            ids: self.ids.clone(),
            years: self.years.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for v in &self.matrix {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| PcrError::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)
            .map_err(|e| PcrError::Format(format!("reading index header: {e}")))?;
        let h: IndexHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| PcrError::Format(format!("index header: {e}")))?;
        if h.format != INDEX_FORMAT || h.version != INDEX_VERSION {
            return Err(PcrError::Format(format!("unsupported index {} v{}", h.format, h.version)));
        }
        if h.ids.len() != h.n {
            return Err(PcrError::Format(format!("header lists {} ids for n={}", h.ids.len(), h.n)));
        }
        let mut bytes = vec![0u8; h.n * h.dim * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| PcrError::Format(format!("truncated index matrix: {e}")))?;
        let matrix = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(h.ids, h.years, h.dim, matrix)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    n: usize,
    dim: usize,
    ids: Vec<String>,
    years: Vec<i32>,
}

/// Embeds every pool article (ascending id order).
pub fn build_index(pool: &CandidatePool, params: &EncoderParams) -> Result<VectorIndex> {
    if pool.is_empty() {
        return Err(PcrError::Empty("candidate pool".into()));
    }
    let dim = params.out_dim();
    let mut matrix = Vec::with_capacity(pool.len() * dim);
    for a in pool.articles() {
        let e = params.encode_article(a)?;
        matrix.extend(e.0.iter().map(|&v| v as f32));
    }
    VectorIndex::new(
        pool.articles().iter().map(|a| a.id.clone()).collect(),
        pool.articles().iter().map(|a| a.year).collect(),
        dim,
        matrix,
    )
}
