//! Closed-form multiply-accumulate counts per architecture variant, the CNN
//! DDoA-corrector reference count, and Pareto-front extraction.
//!
//! With `n` tokens and `k` values per patch:
//! embedding `k * d_model * n`, self-attention `n^2 * d_model` and
//! feed-forward `n * d_model * d_ff` per layer, plus the regression head.
//! Multi-CIR uses `n = 150 / L_patch`, `k = N_total * L_patch`; per-CIR uses
//! `n = N * 150 / L_patch`, `k = L_patch`, where `N` is `N_total` for fixed
//! ordering and the mean number of available anchors for time ordering.
//! The CLS token is counted in the attention and feed-forward `n`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cir::{CirOrdering, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::patching::PatchStrategy;

/// Operations per forward pass of the CNN corrector, per anchor pair.
pub const CNN_OPS_PER_PAIR: u64 = 173_704;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperationCount {
    pub embedding_ops: f64,
    /// Per layer.
    pub attention_ops: f64,
    /// Per layer.
    pub feedforward_ops: f64,
    pub head_ops: f64,
    pub total_ops: f64,
}

/// `n_av` may be fractional (a dataset mean).
pub fn op_count(cfg: &ModelConfig, n_total: usize, n_av: f64) -> Result<OperationCount> {
    cfg.validate()?;
    if n_total == 0 || !(n_av > 0.0) || n_av > n_total as f64 {
        return Err(Error::InvalidConfig(format!(
            "need 0 < n_av <= n_total, got n_av {n_av}, n_total {n_total}"
        )));
    }
    let d = cfg.d_model as f64;
    let k_per_cir = (WINDOW_LEN / cfg.patch.l_patch) as f64;
    let l = cfg.patch.l_patch as f64;
    let (patches, values_per_patch) = match cfg.patch.strategy {
        PatchStrategy::MultiCir => (k_per_cir, n_total as f64 * l),
        PatchStrategy::PerCir => {
            let rows = match cfg.ordering {
                CirOrdering::Fixed => n_total as f64,
                CirOrdering::TimeBased => n_av,
            };
            (rows * k_per_cir, l)
        }
    };
    let tokens = patches + 1.0;
    let embedding_ops = values_per_patch * d * patches;
    let attention_ops = tokens * tokens * d;
    let feedforward_ops = tokens * d * cfg.d_ff as f64;
    let mut head_ops = 0.0;
    let mut width = cfg.d_model + 3;
    for &w in &cfg.head_widths {
        head_ops += (width * w) as f64;
        width = w;
    }
    let total_ops = embedding_ops + cfg.n_layers as f64 * (attention_ops + feedforward_ops) + head_ops;
    Ok(OperationCount {
        embedding_ops,
        attention_ops,
        feedforward_ops,
        head_ops,
        total_ops,
    })
}

pub fn cnn_baseline_ops(n_available_pairs: u64) -> u64 {
    CNN_OPS_PER_PAIR * n_available_pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ModelConfig,
    pub total_ops: f64,
    pub mae: f64,
    pub cep: BTreeMap<u32, f64>,
}

/// True iff `a` dominates `b` in (ops, mae), lower is better on both.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.0 <= b.0 && a.1 < b.1) || (a.0 < b.0 && a.1 <= b.1)
}

/// Indices of non-dominated points, sorted by ascending ops (then mae).
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[a].1.total_cmp(&points[b].1))
    });
    let mut front: Vec<usize> = Vec::new();
    let mut best = f64::INFINITY;
    for i in order {
        let (ops, err) = points[i];
        let duplicate = front.last().is_some_and(|&j| points[j] == (ops, err));
        if err < best || duplicate {
            best = best.min(err);
            front.push(i);
        }
    }
    front
}

pub fn pareto_front(results: &[SweepResult]) -> Vec<SweepResult> {
    let points: Vec<(f64, f64)> = results.iter().map(|r| (r.total_ops, r.mae)).collect();
    pareto_indices(&points)
        .into_iter()
        .map(|i| results[i].clone())
        .collect()
}
