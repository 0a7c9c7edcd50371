//! Hashed bag-of-tokens text encoder.
//!
//! Tokens are hashed into `hash_buckets` rows of an embedding table `E`,
//! mean-pooled, and passed through a two-layer head:
//!
//! ```text
//! pooled = mean(E[bucket(t)] for t in tokens)      (zero if no tokens)
//! out    = W2 · tanh(W1 · pooled + b1) + b2
//! ```
//!
//! Parameters are stored as `f32`; all forward and backward arithmetic runs
//! in `f64`. By default `E` is frozen and only the head is trained.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Query, TOPIC_SEPARATOR};
use crate::error::{PcrError, Result};

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

const CHECKPOINT_FORMAT: &str = "pcr-encoder";
const CHECKPOINT_VERSION: u32 = 1;

/// 64-bit FNV-1a over the UTF-8 bytes of `token`.
pub fn fnv1a64(token: &str) -> u64 {
    token.bytes().fold(FNV_OFFSET_BASIS, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn bucket_of(token: &str, buckets: usize) -> usize {
    (fnv1a64(token) % buckets as u64) as usize
}

/// Lowercases and splits on runs of non-alphanumeric characters. The
/// separator `[ts]` survives as a single token.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let sep = TOPIC_SEPARATOR.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut rest = lower.as_str();
    while let Some(c) = rest.chars().next() {
        if rest.starts_with(&sep) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(sep.clone());
            rest = &rest[sep.len()..];
            continue;
        }
        if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        rest = &rest[c.len_utf8()..];
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hash_buckets: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hash_buckets: 1 << 18,
            embed_dim: 64,
            hidden_dim: 64,
            out_dim: 64,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_buckets < 2 {
            return Err(PcrError::Config("hash_buckets must be at least 2".into()));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(PcrError::Config("encoder dimensions must be at least 1".into()));
        }
        Ok(())
    }

    fn shape(&self, slot: Slot) -> (usize, usize) {
        match slot {
            Slot::Embeddings => (self.hash_buckets, self.embed_dim),
            Slot::Hidden => (self.hidden_dim, self.embed_dim),
            Slot::HiddenBias => (self.hidden_dim, 1),
            Slot::Output => (self.out_dim, self.hidden_dim),
            Slot::OutputBias => (self.out_dim, 1),
        }
    }
}

/// The five parameter tensors, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Embeddings,
    Hidden,
    HiddenBias,
    Output,
    OutputBias,
}

impl Slot {
    pub const ALL: [Slot; 5] = [
        Slot::Embeddings,
        Slot::Hidden,
        Slot::HiddenBias,
        Slot::Output,
        Slot::OutputBias,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Embeddings => "E",
            Slot::Hidden => "W1",
            Slot::HiddenBias => "b1",
            Slot::Output => "W2",
            Slot::OutputBias => "b2",
        }
    }
}

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f32]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Which slots are excluded from optimisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenFlags {
    #[serde(rename = "E")]
    pub embeddings: bool,
    #[serde(rename = "W1")]
    pub hidden: bool,
    #[serde(rename = "b1")]
    pub hidden_bias: bool,
    #[serde(rename = "W2")]
    pub output: bool,
    #[serde(rename = "b2")]
    pub output_bias: bool,
}

impl Default for FrozenFlags {
    fn default() -> Self {
        FrozenFlags {
            embeddings: true,
            hidden: false,
            hidden_bias: false,
            output: false,
            output_bias: false,
        }
    }
}

impl FrozenFlags {
    pub fn is_frozen(&self, slot: Slot) -> bool {
        match slot {
            Slot::Embeddings => self.embeddings,
            Slot::Hidden => self.hidden,
            Slot::HiddenBias => self.hidden_bias,
            Slot::Output => self.output,
            Slot::OutputBias => self.output_bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn l2_distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activation {
    pub buckets: Vec<usize>,
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Embedding,
}

/// Gradient accumulator mirroring [`EncoderParams`]. Embedding-table
/// gradients are kept sparse by row.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub dense: [Vec<f64>; 5],
    pub embedding_rows: std::collections::BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        let dense = Slot::ALL.map(|slot| match slot {
            Slot::Embeddings => Vec::new(),
            _ => vec![0.0; params.tensor(slot).data.len()],
        });
        Gradients {
            dense,
            embedding_rows: Default::default(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.dense.iter_mut().flatten() {
            *v *= factor;
        }
        for v in self.embedding_rows.values_mut().flatten() {
            *v *= factor;
        }
    }

    /// Gradient for entry `i` (row-major) of `slot`.
    pub fn value(&self, slot: Slot, cols: usize, i: usize) -> f64 {
        match slot {
            Slot::Embeddings => self
                .embedding_rows
                .get(&(i / cols))
                .map_or(0.0, |row| row[i % cols]),
            _ => self.dense[slot.index()][i],
        }
    }

    pub fn all_finite(&self, slot: Slot) -> bool {
        match slot {
            Slot::Embeddings => self.embedding_rows.values().flatten().all(|v| v.is_finite()),
            _ => self.dense[slot.index()].iter().all(|v| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    tensors: [Tensor; 5],
    pub frozen: FrozenFlags,
}

impl EncoderParams {
    /// Uniform `±1/sqrt(fan_in)` initialisation of `E`, `W1`, `W2` (fan-in
    /// is the column count), zero biases.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = Slot::ALL.map(|slot| {
            let (rows, cols) = config.shape(slot);
            let mut t = Tensor::zeros(rows, cols);
            if matches!(slot, Slot::Embeddings | Slot::Hidden | Slot::Output) {
                let bound = 1.0 / (cols as f32).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                t.data.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
            }
            t
        });
        Ok(EncoderParams {
            config,
            tensors,
            frozen: FrozenFlags::default(),
        })
    }

    /// Assembles parameters from explicit tensors, checking shapes and
    /// finiteness.
    pub fn from_tensors(
        config: EncoderConfig,
        tensors: [Tensor; 5],
        frozen: FrozenFlags,
    ) -> Result<Self> {
        config.validate()?;
        for slot in Slot::ALL {
            let t = &tensors[slot.index()];
            let (rows, cols) = config.shape(slot);
            if (t.rows, t.cols) != (rows, cols) || t.data.len() != rows * cols {
                return Err(PcrError::Format(format!(
                    "{} has shape {}x{}, expected {rows}x{cols}",
                    slot.name(),
                    t.rows,
                    t.cols
                )));
            }
            if !t.all_finite() {
                return Err(PcrError::NonFinite(slot.name().into()));
            }
        }
        Ok(EncoderParams {
            config,
            tensors,
            frozen,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    pub fn tensor(&self, slot: Slot) -> &Tensor {
        &self.tensors[slot.index()]
    }

    pub fn tensor_mut(&mut self, slot: Slot) -> &mut Tensor {
        &mut self.tensors[slot.index()]
    }

    pub fn trainable_slots(&self) -> impl Iterator<Item = Slot> + '_ {
        Slot::ALL.into_iter().filter(|s| !self.frozen.is_frozen(*s))
    }

    /// Hash buckets of every token in `text`, in order.
    pub fn buckets(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .map(|t| bucket_of(t, self.config.hash_buckets))
            .collect()
    }

    pub fn forward(&self, text: &str) -> Result<Activation> {
        self.forward_buckets(self.buckets(text))
    }

    /// Forward pass from pre-hashed tokens.
    pub fn forward_buckets(&self, buckets: Vec<usize>) -> Result<Activation> {
        let cfg = &self.config;
        let table = self.tensor(Slot::Embeddings);
        if let Some(&b) = buckets.iter().find(|&&b| b >= cfg.hash_buckets) {
            return Err(PcrError::Precondition(format!("bucket {b} out of range")));
        }

        let mut pooled = vec![0.0f64; cfg.embed_dim];
        for &b in &buckets {
            let row = table.row(b);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(PcrError::NonFinite(format!("E row {b}")));
            }
            for (p, &v) in pooled.iter_mut().zip(row) {
                *p += f64::from(v);
            }
        }
        if !buckets.is_empty() {
            let n = buckets.len() as f64;
            pooled.iter_mut().for_each(|p| *p /= n);
        }

        for slot in [Slot::Hidden, Slot::HiddenBias, Slot::Output, Slot::OutputBias] {
            if !self.tensor(slot).all_finite() {
                return Err(PcrError::NonFinite(slot.name().into()));
            }
        }
        let hidden = affine(self.tensor(Slot::Hidden), self.tensor(Slot::HiddenBias), &pooled)
            .into_iter()
            .map(f64::tanh)
            .collect::<Vec<_>>();
        let output = affine(self.tensor(Slot::Output), self.tensor(Slot::OutputBias), &hidden);
        Ok(Activation {
            buckets,
            pooled,
            hidden,
            output: Embedding(output),
        })
    }

    pub fn encode(&self, text: &str) -> Result<Embedding> {
        self.forward(text).map(|a| a.output)
    }

    pub fn encode_query(&self, query: &Query) -> Result<Embedding> {
        let topic_present = query
            .text
            .split_once(TOPIC_SEPARATOR)
            .is_some_and(|(_, topic)| !topic.trim().is_empty());
        if !topic_present {
            return Err(PcrError::Precondition(format!(
                "query {:?} has no topic sentence",
                query.paragraph_id
            )));
        }
        self.encode(&query.text)
    }

    pub fn encode_article(&self, article: &Article) -> Result<Embedding> {
        self.encode(&article.text())
    }

    /// Accumulates into `grads` the gradient of a scalar loss whose
    /// gradient w.r.t. this activation's output is `grad_out`. Frozen slots
    /// receive nothing.
    pub fn backward(&self, act: &Activation, grad_out: &[f64], grads: &mut Gradients) {
        let cfg = &self.config;
        debug_assert_eq!(grad_out.len(), cfg.out_dim);
        let w2 = self.tensor(Slot::Output);
        let w1 = self.tensor(Slot::Hidden);

        if !self.frozen.output {
            let g = &mut grads.dense[Slot::Output.index()];
            for (i, &go) in grad_out.iter().enumerate() {
                for (j, &h) in act.hidden.iter().enumerate() {
                    g[i * cfg.hidden_dim + j] += go * h;
                }
            }
        }
        if !self.frozen.output_bias {
            for (g, &go) in grads.dense[Slot::OutputBias.index()].iter_mut().zip(grad_out) {
                *g += go;
            }
        }

        let needs_lower = !(self.frozen.hidden && self.frozen.hidden_bias && self.frozen.embeddings);
        if !needs_lower {
            return;
        }
        // d loss / d pre-activation of the hidden layer
        let mut dz = vec![0.0f64; cfg.hidden_dim];
        for (i, &go) in grad_out.iter().enumerate() {
            let row = w2.row(i);
            for (d, &w) in dz.iter_mut().zip(row) {
                *d += f64::from(w) * go;
            }
        }
        for (d, &h) in dz.iter_mut().zip(&act.hidden) {
            *d *= 1.0 - h * h;
        }

        if !self.frozen.hidden {
            let g = &mut grads.dense[Slot::Hidden.index()];
            for (j, &d) in dz.iter().enumerate() {
                for (k, &p) in act.pooled.iter().enumerate() {
                    g[j * cfg.embed_dim + k] += d * p;
                }
            }
        }
        if !self.frozen.hidden_bias {
            for (g, &d) in grads.dense[Slot::HiddenBias.index()].iter_mut().zip(&dz) {
                *g += d;
            }
        }
        if !self.frozen.embeddings && !act.buckets.is_empty() {
            let mut dp = vec![0.0f64; cfg.embed_dim];
            for (j, &d) in dz.iter().enumerate() {
                for (p, &w) in dp.iter_mut().zip(w1.row(j)) {
                    *p += f64::from(w) * d;
                }
            }
            let inv_n = 1.0 / act.buckets.len() as f64;
            for &b in &act.buckets {
                let row = grads
                    .embedding_rows
                    .entry(b)
                    .or_insert_with(|| vec![0.0; cfg.embed_dim]);
                for (r, &p) in row.iter_mut().zip(&dp) {
                    *r += p * inv_n;
                }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| PcrError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| PcrError::io(path, e))?;
        w.flush().map_err(|e| PcrError::io(path, e))
    }

    /// Header line (JSON) followed by E, W1, b1, W2, b2, each as
    /// `u64 rows, u64 cols` then row-major little-endian `f32`.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            frozen: self.frozen,
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for t in &self.tensors {
            w.write_all(&(t.rows as u64).to_le_bytes())?;
            w.write_all(&(t.cols as u64).to_le_bytes())?;
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| PcrError::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)
            .map_err(|e| PcrError::Format(format!("reading checkpoint header: {e}")))?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| PcrError::Format(format!("checkpoint header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(PcrError::Format(format!(
                "unsupported checkpoint {} v{}",
                header.format, header.version
            )));
        }
        header.config.validate()?;
        let mut tensors: Vec<Tensor> = Vec::with_capacity(5);
        for slot in Slot::ALL {
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let expected = header.config.shape(slot);
            if (rows, cols) != expected {
                return Err(PcrError::Format(format!(
                    "{} has shape {rows}x{cols}, expected {}x{}",
                    slot.name(),
                    expected.0,
                    expected.1
                )));
            }
            let mut bytes = vec![0u8; rows * cols * 4];
            r.read_exact(&mut bytes)
                .map_err(|e| PcrError::Format(format!("reading {}: {e}", slot.name())))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor { rows, cols, data });
        }
        let tensors: [Tensor; 5] = tensors.try_into().expect("five slots read");
        Self::from_tensors(header.config, tensors, header.frozen)
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| PcrError::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows)
        .map(|i| {
            w.row(i)
                .iter()
                .zip(x)
                .map(|(&wij, &xj)| f64::from(wij) * xj)
                .sum::<f64>()
                + f64::from(b.data[i])
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    config: EncoderConfig,
    frozen: FrozenFlags,
}
