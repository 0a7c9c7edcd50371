//! Hinge losses over L2 distances.
//!
//! ```text
//! L_t = max(0, |q - p| - |q - n| + m)
//! L_q = sum_i max(0, |q - p_i| - |q - n| + m)
//!     + sum_i max(0, |p_1 - p_2| - |p_i - n| + m)        i in {1, 2}
//! ```

use crate::error::{PcrError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    /// Lower bound on the distance used when normalising difference vectors.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.5,
            epsilon: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn with_margin(margin: f64) -> Self {
        LossConfig {
            margin,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.margin.is_nan() || self.margin < 0.0 {
            return Err(PcrError::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(PcrError::Config("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

fn check_dims(first: &[f64], rest: &[&[f64]]) -> Result<()> {
    for v in rest {
        if v.len() != first.len() {
            return Err(PcrError::DimensionMismatch {
                expected: first.len(),
                actual: v.len(),
            });
        }
    }
    Ok(())
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[inline]
fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

pub fn triplet_loss(q: &[f64], pos: &[f64], neg: &[f64], cfg: &LossConfig) -> Result<f64> {
    check_dims(q, &[pos, neg])?;
    Ok(hinge(l2(q, pos) - l2(q, neg) + cfg.margin))
}

/// The four hinge arguments, in order: (q,p1,n), (q,p2,n), (p1p2,p1n),
/// (p1p2,p2n).
fn quadruplet_arguments(q: &[f64], p1: &[f64], p2: &[f64], n: &[f64], m: f64) -> [f64; 4] {
    let d_qn = l2(q, n);
    let d_pp = l2(p1, p2);
    [
        l2(q, p1) - d_qn + m,
        l2(q, p2) - d_qn + m,
        d_pp - l2(p1, n) + m,
        d_pp - l2(p2, n) + m,
    ]
}

/// Hinges summed pairwise so that swapping the positives is exact.
fn sum_hinges(args: [f64; 4]) -> f64 {
    (hinge(args[0]) + hinge(args[1])) + (hinge(args[2]) + hinge(args[3]))
}

pub fn quadruplet_loss(q: &[f64], p1: &[f64], p2: &[f64], n: &[f64], cfg: &LossConfig) -> Result<f64> {
    check_dims(q, &[p1, p2, n])?;
    Ok(sum_hinges(quadruplet_arguments(q, p1, p2, n, cfg.margin)))
}

/// Smallest absolute hinge argument; callers use it to stay clear of kinks
/// when comparing against finite differences.
pub fn quadruplet_kink_distance(q: &[f64], p1: &[f64], p2: &[f64], n: &[f64], cfg: &LossConfig) -> f64 {
    quadruplet_arguments(q, p1, p2, n, cfg.margin)
        .into_iter()
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrupletGrad {
    pub query: Vec<f64>,
    pub pos1: Vec<f64>,
    pub pos2: Vec<f64>,
    pub neg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub query: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

/// `(a - b) / max(|a - b|, eps)`
fn unit_diff(a: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let d = l2(a, b).max(eps);
    a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()
}

fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

/// Loss value and gradients with respect to all four embeddings. Hinges
/// contribute only where their argument is strictly positive.
pub fn quadruplet_loss_and_grad(
    q: &[f64],
    p1: &[f64],
    p2: &[f64],
    n: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, QuadrupletGrad)> {
    check_dims(q, &[p1, p2, n])?;
    let dim = q.len();
    let args = quadruplet_arguments(q, p1, p2, n, cfg.margin);
    let eps = cfg.epsilon;
    let mut g = QuadrupletGrad {
        query: vec![0.0; dim],
        pos1: vec![0.0; dim],
        pos2: vec![0.0; dim],
        neg: vec![0.0; dim],
    };

    let u_qn = unit_diff(q, n, eps);
    for (active, p, gp) in [(args[0] > 0.0, p1, 0usize), (args[1] > 0.0, p2, 1)] {
        if !active {
            continue;
        }
        let u_qp = unit_diff(q, p, eps);
        axpy(&mut g.query, 1.0, &u_qp);
        axpy(&mut g.query, -1.0, &u_qn);
        axpy(&mut g.neg, 1.0, &u_qn);
        let target = if gp == 0 { &mut g.pos1 } else { &mut g.pos2 };
        axpy(target, -1.0, &u_qp);
    }

    let u_pp = unit_diff(p1, p2, eps);
    for (active, which) in [(args[2] > 0.0, 0usize), (args[3] > 0.0, 1)] {
        if !active {
            continue;
        }
        axpy(&mut g.pos1, 1.0, &u_pp);
        axpy(&mut g.pos2, -1.0, &u_pp);
        let p = if which == 0 { p1 } else { p2 };
        let u_pn = unit_diff(p, n, eps);
        axpy(&mut g.neg, 1.0, &u_pn);
        let target = if which == 0 { &mut g.pos1 } else { &mut g.pos2 };
        axpy(target, -1.0, &u_pn);
    }

    Ok((sum_hinges(args), g))
}

pub fn quadruplet_grad(
    q: &[f64],
    p1: &[f64],
    p2: &[f64],
    n: &[f64],
    cfg: &LossConfig,
) -> Result<QuadrupletGrad> {
    quadruplet_loss_and_grad(q, p1, p2, n, cfg).map(|(_, g)| g)
}

pub fn triplet_loss_and_grad(
    q: &[f64],
    pos: &[f64],
    neg: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, TripletGrad)> {
    check_dims(q, &[pos, neg])?;
    let dim = q.len();
    let arg = l2(q, pos) - l2(q, neg) + cfg.margin;
    let mut g = TripletGrad {
        query: vec![0.0; dim],
        pos: vec![0.0; dim],
        neg: vec![0.0; dim],
    };
    if arg > 0.0 {
        let u_qp = unit_diff(q, pos, cfg.epsilon);
        let u_qn = unit_diff(q, neg, cfg.epsilon);
        axpy(&mut g.query, 1.0, &u_qp);
        axpy(&mut g.query, -1.0, &u_qn);
        axpy(&mut g.pos, -1.0, &u_qp);
        axpy(&mut g.neg, 1.0, &u_qn);
    }
    Ok((hinge(arg), g))
}
