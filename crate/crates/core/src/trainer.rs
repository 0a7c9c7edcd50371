//! Fine-tuning the encoder head on sampled quadruplets with AdamW.
//!
//! The learning rate ramps linearly from 0 over the first
//! `warmup_fraction` of all optimiser steps and stays constant afterwards.
//! After every epoch the model is scored on the validation queries and the
//! parameters with the best validation R-precision are kept.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, CandidatePool, Query};
use crate::encoder::{Activation, EncoderParams, Gradients, Slot};
use crate::error::{PcrError, Result};
use crate::evaluate::MetricReport;
use crate::index::build_index;
use crate::objective::{quadruplet_loss_and_grad, triplet_loss_and_grad, LossConfig};
use crate::pipeline::{evaluate_queries, QueryVariant};
use crate::sampling::Quadruplet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Two positives, four hinge terms.
    #[default]
    Quadruplet,
    /// Query, first positive and negative only.
    Triplet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub seed: u64,
    pub adam_epsilon: f64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            lr: 1e-5,
            beta1: 0.99,
            beta2: 0.999,
            weight_decay: 0.01,
            warmup_fraction: 0.10,
            batch_size: 32,
            margin: 0.5,
            seed: 0,
            adam_epsilon: 1e-8,
            loss: LossKind::Quadruplet,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PcrError::Config(m.into()));
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup fraction must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight decay must be non-negative");
        }
        LossConfig::with_margin(self.margin).validate()
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_fraction * total_steps as f64).ceil() as usize
    }
}

/// Learning rate for optimiser step `step` (1-based during training).
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_steps(total_steps.max(1));
    if warmup == 0 || step >= warmup {
        cfg.lr
    } else {
        cfg.lr * step as f64 / warmup as f64
    }
}

/// AdamW moment estimates for the trainable slots.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    first: [Vec<f64>; 5],
    second: [Vec<f64>; 5],
    pub step: u64,
}

impl OptState {
    pub fn new(params: &EncoderParams) -> Self {
        let alloc = || {
            Slot::ALL.map(|s| {
                if params.frozen.is_frozen(s) {
                    Vec::new()
                } else {
                    vec![0.0; params.tensor(s).data.len()]
                }
            })
        };
        OptState {
            first: alloc(),
            second: alloc(),
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay. Frozen slots are left
/// untouched.
pub fn adamw_step(
    params: &mut EncoderParams,
    opt: &mut OptState,
    grads: &Gradients,
    lr_now: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let trainable: Vec<Slot> = params.trainable_slots().collect();
    for &slot in &trainable {
        if !grads.all_finite(slot) {
            return Err(PcrError::NonFinite(format!("gradient of {}", slot.name())));
        }
        if opt.first[slot.index()].len() != params.tensor(slot).data.len() {
            return Err(PcrError::Precondition(format!(
                "optimiser state has no moments for {}",
                slot.name()
            )));
        }
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for slot in trainable {
        let i = slot.index();
        let cols = params.tensor(slot).cols;
        let (m, v) = (&mut opt.first[i], &mut opt.second[i]);
        let tensor = params.tensor_mut(slot);
        for (j, p) in tensor.data.iter_mut().enumerate() {
            let g = grads.value(slot, cols, j);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            let w = f64::from(*p);
            let updated = w - lr_now * (m_hat / (v_hat.sqrt() + cfg.adam_epsilon)) - lr_now * cfg.weight_decay * w;
            *p = updated as f32;
        }
    }
    Ok(())
}

/// Texts needed during training and the validation setup.
#[derive(Debug, Clone)]
pub struct TrainingData {
    article_texts: HashMap<String, String>,
    query_texts: HashMap<String, String>,
    pub validation: Vec<Query>,
    pub pool: CandidatePool,
}

impl TrainingData {
    pub fn new(articles: &[Article], train_queries: &[Query], validation: Vec<Query>, pool: CandidatePool) -> Self {
        TrainingData {
            article_texts: articles.iter().map(|a| (a.id.clone(), a.text())).collect(),
            query_texts: train_queries
                .iter()
                .map(|q| (q.paragraph_id.clone(), q.text.clone()))
                .collect(),
            validation,
            pool,
        }
    }

    fn article_text(&self, id: &str) -> Result<&str> {
        self.article_texts
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| PcrError::Precondition(format!("quadruplet references unknown article {id:?}")))
    }

    fn query_text(&self, paragraph_id: &str) -> Result<&str> {
        self.query_texts
            .get(paragraph_id)
            .map(String::as_str)
            .ok_or_else(|| PcrError::Precondition(format!("no training query for paragraph {paragraph_id:?}")))
    }

    /// Scores `params` on the validation queries.
    pub fn validate(&self, params: &EncoderParams) -> Result<MetricReport> {
        let index = build_index(&self.pool, params)?;
        evaluate_queries(params, &index, &self.validation, QueryVariant::WithTopic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub validation: MetricReport,
}

impl fmt::Display for EpochLog {
    /// `epoch  loss  r_prec  r@5  r@10  mrr`, tab-separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = &self.validation;
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.mean_train_loss, v.r_precision, v.r_at_5, v.r_at_10, v.mrr
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: EncoderParams,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub initial_validation: Option<MetricReport>,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_tsv(&self) -> String {
        self.log.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn best_validation(&self) -> Option<&MetricReport> {
        self.log.get(self.best_epoch.checked_sub(1)?).map(|l| &l.validation)
    }
}

struct Prepared {
    query: Vec<usize>,
    pos1: Vec<usize>,
    pos2: Vec<usize>,
    neg: Vec<usize>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Loss and accumulated parameter gradients for a single quadruplet.
fn accumulate(
    params: &EncoderParams,
    item: &Prepared,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    grads: &mut Gradients,
) -> Result<f64> {
    let fwd = |b: &Vec<usize>| -> Result<Activation> { params.forward_buckets(b.clone()) };
    let q = fwd(&item.query)?;
    let p1 = fwd(&item.pos1)?;
    let n = fwd(&item.neg)?;
    match cfg.loss {
        LossKind::Quadruplet => {
            let p2 = fwd(&item.pos2)?;
            let (loss, g) = quadruplet_loss_and_grad(
                q.output.as_slice(),
                p1.output.as_slice(),
                p2.output.as_slice(),
                n.output.as_slice(),
                loss_cfg,
            )?;
            params.backward(&q, &g.query, grads);
            params.backward(&p1, &g.pos1, grads);
            params.backward(&p2, &g.pos2, grads);
            params.backward(&n, &g.neg, grads);
            Ok(loss)
        }
        LossKind::Triplet => {
            let (loss, g) =
                triplet_loss_and_grad(q.output.as_slice(), p1.output.as_slice(), n.output.as_slice(), loss_cfg)?;
            params.backward(&q, &g.query, grads);
            params.backward(&p1, &g.pos, grads);
            params.backward(&n, &g.neg, grads);
            Ok(loss)
        }
    }
}

/// Mean loss of `quads` under `params` and the gradient of that mean.
pub fn batch_loss_and_grad(
    params: &EncoderParams,
    data: &TrainingData,
    quads: &[Quadruplet],
    cfg: &TrainConfig,
) -> Result<(f64, Gradients)> {
    let prepared = prepare(params, data, quads)?;
    let loss_cfg = LossConfig::with_margin(cfg.margin);
    let mut grads = Gradients::zeros_like(params);
    let mut total = 0.0;
    for item in &prepared {
        total += accumulate(params, item, cfg, &loss_cfg, &mut grads)?;
    }
    let inv = 1.0 / prepared.len().max(1) as f64;
    grads.scale(inv);
    Ok((total * inv, grads))
}

fn prepare(params: &EncoderParams, data: &TrainingData, quads: &[Quadruplet]) -> Result<Vec<Prepared>> {
    let buckets = |text: &str| params.buckets(text);
    let mut out = Vec::with_capacity(quads.len());
    for q in quads {
        out.push(Prepared {
            query: buckets(data.query_text(&q.paragraph_id)?),
            pos1: buckets(data.article_text(&q.pos1)?),
            pos2: buckets(data.article_text(&q.pos2)?),
            neg: buckets(data.article_text(&q.neg)?),
        });
    }
    Ok(out)
}

pub fn train(
    data: &TrainingData,
    quads: &[Quadruplet],
    initial: EncoderParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            best: initial,
            best_epoch: 0,
            initial_validation: None,
            log: Vec::new(),
        });
    }
    if quads.is_empty() {
        return Err(PcrError::Empty("no training quadruplets".into()));
    }

    let prepared = prepare(&initial, data, quads)?;
    let loss_cfg = LossConfig::with_margin(cfg.margin);
    let steps_per_epoch = prepared.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;

    let initial_validation = Some(data.validate(&initial)?);
    let mut params = initial;
    let mut opt = OptState::new(&params);
    let mut best: Option<(usize, f64, EncoderParams)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&params);
            let mut batch_loss = 0.0;
            for &i in batch {
                let loss = accumulate(&params, &prepared[i], cfg, &loss_cfg, &mut grads)?;
                if !loss.is_finite() || loss < 0.0 {
                    return Err(PcrError::NonFinite(format!(
                        "loss {loss} at epoch {epoch}, quadruplet {i} (paragraph {:?})",
                        quads[i].paragraph_id
                    )));
                }
                batch_loss += loss;
            }
            epoch_loss += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            step += 1;
            adamw_step(&mut params, &mut opt, &grads, lr_at(step, total_steps, cfg), cfg)?;
        }

        let validation = data.validate(&params)?;
        let entry = EpochLog {
            epoch,
            mean_train_loss: epoch_loss / prepared.len() as f64,
            validation,
        };
        log::info!("epoch {entry}");
        log.push(entry);
        if best.as_ref().is_none_or(|(_, r, _)| validation.r_precision > *r) {
            best = Some((epoch, validation.r_precision, params.clone()));
        }
    }

    let (best_epoch, _, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        initial_validation,
        log,
    })
}
