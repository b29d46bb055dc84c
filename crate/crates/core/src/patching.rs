//! Splitting the CIR matrix into patches and embedding them as tokens.
//!
//! Multi-CIR patches cut the same time slice out of every row, so a token
//! mixes all anchors. Per-CIR patches cut each row separately, so every
//! token belongs to exactly one anchor and can carry that anchor's
//! position encoding.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::cir::{InputTensor, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tdoa::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchStrategy {
    MultiCir,
    PerCir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub strategy: PatchStrategy,
    pub l_patch: usize,
}

impl PatchConfig {
    pub fn new(strategy: PatchStrategy, l_patch: usize) -> Result<Self> {
        let cfg = Self { strategy, l_patch };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_patch_len(self.l_patch)
    }

    /// `K = 150 / L_patch`.
    pub fn patches_per_cir(&self) -> usize {
        WINDOW_LEN / self.l_patch
    }

    /// Flattened values per patch.
    pub fn patch_size(&self, n_total: usize) -> usize {
        match self.strategy {
            PatchStrategy::MultiCir => n_total * self.l_patch,
            PatchStrategy::PerCir => self.l_patch,
        }
    }

    /// Tokens excluding CLS for a tensor with `n_rows` rows.
    pub fn n_patches(&self, n_rows: usize) -> usize {
        match self.strategy {
            PatchStrategy::MultiCir => self.patches_per_cir(),
            PatchStrategy::PerCir => n_rows * self.patches_per_cir(),
        }
    }
}

fn check_patch_len(l_patch: usize) -> Result<()> {
    if l_patch == 0 || !WINDOW_LEN.is_multiple_of(l_patch) {
        return Err(Error::InvalidConfig(format!(
            "patch length {l_patch} does not divide {WINDOW_LEN}"
        )));
    }
    Ok(())
}

/// Where a token came from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TokenMeta {
    pub anchor_position: Option<Point3>,
    pub rx_time: Option<f64>,
    /// Row `i` of the tensor (per-CIR only).
    pub row: Option<usize>,
    /// Patch index `j` within the CIR (per-CIR) or within the sequence (multi-CIR).
    pub patch_index: usize,
    pub is_cls: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    /// One flattened patch per row.
    pub values: Array2<f64>,
    pub meta: Vec<TokenMeta>,
    pub strategy: PatchStrategy,
}

impl Patches {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

pub fn patch_multi_cir(m: &InputTensor, l_patch: usize) -> Result<Patches> {
    check_patch_len(l_patch)?;
    if m.n_rows() != m.n_total {
        return Err(Error::IncompatibleOrdering(format!(
            "multi-CIR patching needs all {} anchor rows, tensor has {}; pad the tensor first",
            m.n_total,
            m.n_rows()
        )));
    }
    let k_count = WINDOW_LEN / l_patch;
    let height = m.n_rows();
    let mut values = Array2::zeros((k_count, height * l_patch));
    for k in 0..k_count {
        for (i, row) in m.rows.iter().enumerate() {
            for c in 0..l_patch {
                values[[k, i * l_patch + c]] = row.amplitude[k * l_patch + c];
            }
        }
    }
    let meta = (0..k_count)
        .map(|k| TokenMeta {
            patch_index: k,
            ..Default::default()
        })
        .collect();
    Ok(Patches {
        values,
        meta,
        strategy: PatchStrategy::MultiCir,
    })
}

pub fn patch_per_cir(m: &InputTensor, l_patch: usize) -> Result<Patches> {
    check_patch_len(l_patch)?;
    let k_count = WINDOW_LEN / l_patch;
    let n = m.n_rows() * k_count;
    let mut values = Array2::zeros((n, l_patch));
    let mut meta = Vec::with_capacity(n);
    for k in 0..n {
        let (i, j) = (k / k_count, k % k_count);
        let row = &m.rows[i];
        for c in 0..l_patch {
            values[[k, c]] = row.amplitude[j * l_patch + c];
        }
        meta.push(TokenMeta {
            anchor_position: Some(row.anchor_position),
            rx_time: row.rx_time,
            row: Some(i),
            patch_index: j,
            is_cls: false,
        });
    }
    Ok(Patches {
        values,
        meta,
        strategy: PatchStrategy::PerCir,
    })
}

pub fn patchify(m: &InputTensor, cfg: &PatchConfig) -> Result<Patches> {
    match cfg.strategy {
        PatchStrategy::MultiCir => patch_multi_cir(m, cfg.l_patch),
        PatchStrategy::PerCir => patch_per_cir(m, cfg.l_patch),
    }
}

/// Embedded tokens, CLS first.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f64>,
    pub meta: Vec<TokenMeta>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn d_model(&self) -> usize {
        self.tokens.ncols()
    }
}

/// `token_k = patch_k W + b`, with the CLS vector prepended.
pub fn embed_patches(patches: &Patches, weights: &Linear, cls: &Array1<f64>) -> Result<TokenSequence> {
    if weights.in_dim() != patches.values.ncols() {
        return Err(Error::Shape(format!(
            "embedding expects patches of {} values, got {}",
            weights.in_dim(),
            patches.values.ncols()
        )));
    }
    if cls.len() != weights.out_dim() {
        return Err(Error::Shape(format!(
            "CLS vector has {} entries, d_model is {}",
            cls.len(),
            weights.out_dim()
        )));
    }
    let embedded = weights.forward(&patches.values);
    let mut tokens = Array2::zeros((patches.len() + 1, weights.out_dim()));
    tokens.row_mut(0).assign(cls);
    tokens.slice_mut(ndarray::s![1.., ..]).assign(&embedded);
    let mut meta = Vec::with_capacity(patches.len() + 1);
    meta.push(TokenMeta {
        is_cls: true,
        ..Default::default()
    });
    meta.extend_from_slice(&patches.meta);
    Ok(TokenSequence { tokens, meta })
}
