//! Architecture grid, resumable per-configuration results and the Pareto
//! table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use uwb_tdoa::cir::CirOrdering;
use uwb_tdoa::complexity::{pareto_indices, SweepResult};
use uwb_tdoa::encoding::EncodingKind;
use uwb_tdoa::metrics::CEP_QUANTILES;
use uwb_tdoa::nn::ModelConfig;
use uwb_tdoa::patching::{PatchConfig, PatchStrategy};

pub const MULTI_CIR_PATCH_LENGTHS: [usize; 9] = [1, 3, 5, 6, 10, 15, 30, 50, 75];
pub const MULTI_CIR_D_MODEL: [usize; 6] = [8, 16, 32, 64, 128, 256];
pub const PER_CIR_PATCH_LENGTHS: [usize; 6] = [6, 15, 30, 50, 75, 150];
pub const PER_CIR_D_MODEL: [usize; 4] = [32, 64, 128, 256];

/// Axes of the architecture grid. Multi-CIR patches mix anchors within a
/// token, so only the learned encoding applies there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub orderings: Vec<CirOrdering>,
    pub per_cir_encodings: Vec<EncodingKind>,
    pub multi_cir_patch_lengths: Vec<usize>,
    pub multi_cir_d_model: Vec<usize>,
    pub per_cir_patch_lengths: Vec<usize>,
    pub per_cir_d_model: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            orderings: vec![CirOrdering::Fixed, CirOrdering::TimeBased],
            per_cir_encodings: vec![EncodingKind::Learned, EncodingKind::Spatial, EncodingKind::SpatialTime],
            multi_cir_patch_lengths: MULTI_CIR_PATCH_LENGTHS.to_vec(),
            multi_cir_d_model: MULTI_CIR_D_MODEL.to_vec(),
            per_cir_patch_lengths: PER_CIR_PATCH_LENGTHS.to_vec(),
            per_cir_d_model: PER_CIR_D_MODEL.to_vec(),
        }
    }
}

impl GridSpec {
    fn combinations(&self, strategy: PatchStrategy, base: &ModelConfig) -> Vec<ModelConfig> {
        let (encodings, lengths, widths): (&[EncodingKind], &[usize], &[usize]) = match strategy {
            PatchStrategy::MultiCir => (
                &[EncodingKind::Learned],
                &self.multi_cir_patch_lengths,
                &self.multi_cir_d_model,
            ),
            PatchStrategy::PerCir => (
                &self.per_cir_encodings,
                &self.per_cir_patch_lengths,
                &self.per_cir_d_model,
            ),
        };
        let mut out = Vec::new();
        for &ordering in &self.orderings {
            for &encoding in encodings {
                for &l_patch in lengths {
                    for &d_model in widths {
                        out.push(ModelConfig {
                            patch: PatchConfig { strategy, l_patch },
                            ordering,
                            encoding,
                            d_model,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }

    /// Every listed combination must form a valid model.
    pub fn validate(&self, base: &ModelConfig) -> Result<()> {
        for strategy in [PatchStrategy::MultiCir, PatchStrategy::PerCir] {
            for cfg in self.combinations(strategy, base) {
                cfg.validate()
                    .with_context(|| format!("sweep grid entry {}", config_id(&cfg)))?;
            }
        }
        Ok(())
    }

    pub fn grid(&self, strategy: PatchStrategy, base: &ModelConfig) -> Vec<ModelConfig> {
        self.combinations(strategy, base)
            .into_iter()
            .filter(|c| c.validate().is_ok())
            .collect()
    }

    pub fn full_grid(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let mut all = self.grid(PatchStrategy::MultiCir, base);
        all.extend(self.grid(PatchStrategy::PerCir, base));
        all
    }
}

/// The default grid for `strategy`, derived from `base` (which supplies
/// depth, heads, head widths, dropout and encoding constants).
pub fn grid(strategy: PatchStrategy, base: &ModelConfig) -> Vec<ModelConfig> {
    GridSpec::default().grid(strategy, base)
}

pub fn full_grid(base: &ModelConfig) -> Vec<ModelConfig> {
    GridSpec::default().full_grid(base)
}

fn strategy_name(s: PatchStrategy) -> &'static str {
    match s {
        PatchStrategy::MultiCir => "multi_cir",
        PatchStrategy::PerCir => "per_cir",
    }
}

fn ordering_name(o: CirOrdering) -> &'static str {
    match o {
        CirOrdering::Fixed => "fixed",
        CirOrdering::TimeBased => "time_based",
    }
}

fn encoding_name(e: EncodingKind) -> &'static str {
    match e {
        EncodingKind::Learned => "learned",
        EncodingKind::Spatial => "spatial",
        EncodingKind::SpatialTime => "spatial_time",
    }
}

/// Stable identifier used to resume a sweep.
pub fn config_id(cfg: &ModelConfig) -> String {
    format!(
        "{}-{}-{}-L{}-d{}",
        strategy_name(cfg.patch.strategy),
        ordering_name(cfg.ordering),
        encoding_name(cfg.encoding),
        cfg.patch.l_patch,
        cfg.d_model
    )
}

/// One CSV row. Failed configurations keep their identity and an error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub id: String,
    pub strategy: String,
    pub ordering: String,
    pub encoding: String,
    pub l_patch: usize,
    pub d_model: usize,
    pub total_ops: Option<f64>,
    pub mae: Option<f64>,
    pub cep50: Option<f64>,
    pub cep75: Option<f64>,
    pub cep90: Option<f64>,
    pub cep95: Option<f64>,
    pub cep99: Option<f64>,
    pub baseline_mae: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn identity(cfg: &ModelConfig) -> Self {
        Self {
            id: config_id(cfg),
            strategy: strategy_name(cfg.patch.strategy).into(),
            ordering: ordering_name(cfg.ordering).into(),
            encoding: encoding_name(cfg.encoding).into(),
            l_patch: cfg.patch.l_patch,
            d_model: cfg.d_model,
            total_ops: None,
            mae: None,
            cep50: None,
            cep75: None,
            cep90: None,
            cep95: None,
            cep99: None,
            baseline_mae: None,
            best_epoch: None,
            error: None,
        }
    }

    pub fn from_result(r: &SweepResult, baseline_mae: f64, best_epoch: usize) -> Self {
        let q = |k: u32| r.cep.get(&k).copied();
        Self {
            total_ops: Some(r.total_ops),
            mae: Some(r.mae),
            cep50: q(50),
            cep75: q(75),
            cep90: q(90),
            cep95: q(95),
            cep99: q(99),
            baseline_mae: Some(baseline_mae),
            best_epoch: Some(best_epoch),
            ..Self::identity(&r.config)
        }
    }

    pub fn failed(cfg: &ModelConfig, error: String) -> Self {
        Self {
            error: Some(error),
            ..Self::identity(cfg)
        }
    }

    /// `(ops, mae)` for completed rows.
    pub fn point(&self) -> Option<(f64, f64)> {
        match (self.total_ops, self.mae, &self.error) {
            (Some(ops), Some(mae), None) => Some((ops, mae)),
            _ => None,
        }
    }

    pub fn cep(&self) -> BTreeMap<u32, f64> {
        CEP_QUANTILES
            .iter()
            .zip([self.cep50, self.cep75, self.cep90, self.cep95, self.cep99])
            .filter_map(|(&q, v)| v.map(|v| (q, v)))
            .collect()
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .with_context(|| format!("reading {}", path.display()))
}

/// Ids already present; failed rows are retried.
pub fn completed_ids(rows: &[SweepRow]) -> BTreeSet<String> {
    rows.iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.id.clone())
        .collect()
}

/// Appends rows, writing the header only for a new or empty file.
pub struct RowWriter {
    inner: csv::Writer<std::fs::File>,
}

impl RowWriter {
    pub fn append(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let inner = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &SweepRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Non-dominated completed rows sorted by operations. When a configuration
/// appears more than once the last row wins.
pub fn pareto_rows(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut latest: BTreeMap<&str, &SweepRow> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.point().is_some()) {
        latest.insert(&r.id, r);
    }
    let rows: Vec<&SweepRow> = latest.into_values().collect();
    let points: Vec<(f64, f64)> = rows.iter().map(|r| r.point().expect("completed")).collect();
    pareto_indices(&points).into_iter().map(|i| rows[i].clone()).collect()
}

pub fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
