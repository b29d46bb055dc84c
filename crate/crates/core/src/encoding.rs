//! Positional encodings added to the patch tokens.
//!
//! Besides the usual learned per-position table, tokens produced by per-CIR
//! patching can be tagged with the 3D position of the anchor that received
//! them. Each normalized coordinate is expanded over `F` log-spaced angular
//! frequencies into `(sin, cos)` pairs; the three coordinate blocks are
//! concatenated into `6F` values and right-padded with zeros to `d_model`.
//! The time-difference encoding applies the same construction to the
//! reception delay relative to the earliest CIR.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::{TokenMeta, TokenSequence};
use crate::tdoa::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    Learned,
    Spatial,
    SpatialTime,
}

impl EncodingKind {
    pub fn is_spatial(self) -> bool {
        matches!(self, EncodingKind::Spatial | EncodingKind::SpatialTime)
    }
}

pub const DEFAULT_OMEGA_MIN: f64 = 1.0;
pub const DEFAULT_OMEGA_MAX: f64 = 1000.0;
/// Time-difference normalization constant, seconds.
pub const DEFAULT_DT_MAX: f64 = 200e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub kind: EncodingKind,
    pub d_model: usize,
    pub f_bands: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    pub dt_max: f64,
    /// Rows of the learned sequence table (tokens excluding CLS).
    pub max_seq_len: usize,
    /// Rows of the within-CIR table (patches per CIR).
    pub patches_per_cir: usize,
    /// Clamp out-of-extent positions instead of failing.
    pub clamp: bool,
}

impl EncodingConfig {
    pub fn new(kind: EncodingKind, d_model: usize, max_seq_len: usize, patches_per_cir: usize) -> Self {
        Self {
            kind,
            d_model,
            f_bands: max_bands(d_model),
            omega_min: DEFAULT_OMEGA_MIN,
            omega_max: DEFAULT_OMEGA_MAX,
            dt_max: DEFAULT_DT_MAX,
            max_seq_len,
            patches_per_cir,
            clamp: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_spatial() {
            if self.f_bands == 0 || 6 * self.f_bands > self.d_model {
                return Err(Error::InvalidConfig(format!(
                    "{} frequency bands do not fit d_model {}",
                    self.f_bands, self.d_model
                )));
            }
            frequency_bands(self.f_bands, self.omega_min, self.omega_max)?;
            if !(self.dt_max > 0.0) {
                return Err(Error::InvalidConfig("dt_max must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Largest `F` with `6F <= d_model`.
pub fn max_bands(d_model: usize) -> usize {
    d_model / 6
}

/// `omega_f = omega_min (omega_max / omega_min)^(f / (F-1))`.
pub fn frequency_bands(f_bands: usize, omega_min: f64, omega_max: f64) -> Result<Vec<f64>> {
    if !(omega_min > 0.0) || !(omega_min < omega_max) || !omega_max.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "need 0 < omega_min < omega_max, got {omega_min}, {omega_max}"
        )));
    }
    if f_bands == 1 {
        return Ok(vec![omega_min]);
    }
    let ratio = omega_max / omega_min;
    Ok((0..f_bands)
        .map(|f| {
            if f == f_bands - 1 {
                omega_max
            } else {
                omega_min * ratio.powf(f as f64 / (f_bands - 1) as f64)
            }
        })
        .collect())
}

fn write_bands(out: &mut [f64], value: f64, bands: &[f64]) {
    for (f, w) in bands.iter().enumerate() {
        out[2 * f] = (value * w).sin();
        out[2 * f + 1] = (value * w).cos();
    }
}

pub fn spatial_pe(position: &Point3, extent: &[f64; 3], cfg: &EncodingConfig) -> Result<Array1<f64>> {
    if !extent.iter().all(|e| *e > 0.0) {
        return Err(Error::InvalidConfig(format!("extent must be positive, got {extent:?}")));
    }
    let bands = frequency_bands(cfg.f_bands, cfg.omega_min, cfg.omega_max)?;
    let f = cfg.f_bands;
    let mut out = Array1::zeros(cfg.d_model);
    let slice = out.as_slice_mut().expect("contiguous");
    for axis in 0..3 {
        let mut v = position[axis];
        if !(0.0..=extent[axis]).contains(&v) {
            if cfg.clamp {
                v = v.clamp(0.0, extent[axis]);
            } else {
                return Err(Error::OutOfBounds(format!(
                    "coordinate {axis} = {v} outside [0, {}]",
                    extent[axis]
                )));
            }
        }
        write_bands(&mut slice[2 * f * axis..2 * f * (axis + 1)], v / extent[axis], &bands);
    }
    Ok(out)
}

/// Encoding of a reception delay relative to the earliest CIR, clamped to
/// `[0, dt_max]`.
pub fn time_diff_pe(delta_t: f64, cfg: &EncodingConfig) -> Result<Array1<f64>> {
    let bands = frequency_bands(cfg.f_bands, cfg.omega_min, cfg.omega_max)?;
    let normalized = delta_t.clamp(0.0, cfg.dt_max) / cfg.dt_max;
    let mut out = Array1::zeros(cfg.d_model);
    write_bands(
        &mut out.as_slice_mut().expect("contiguous")[..2 * cfg.f_bands],
        normalized,
        &bands,
    );
    Ok(out)
}

pub fn learned_pe(seq_index: usize, table: &Array2<f64>) -> Result<ArrayView1<'_, f64>> {
    if seq_index >= table.nrows() {
        return Err(Error::InvalidIndex {
            index: seq_index,
            len: table.nrows(),
        });
    }
    Ok(table.row(seq_index))
}

/// Trainable encoding parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingTables {
    /// Encoding row of the CLS token.
    pub cls: Array1<f64>,
    /// Per sequence position (learned kind).
    pub sequence: Array2<f64>,
    /// Per within-CIR patch index (spatial kinds with several patches per CIR).
    pub within_cir: Array2<f64>,
}

impl EncodingTables {
    pub fn zeros(cfg: &EncodingConfig) -> Self {
        Self {
            cls: Array1::zeros(cfg.d_model),
            sequence: Array2::zeros((cfg.max_seq_len, cfg.d_model)),
            within_cir: Array2::zeros((cfg.patches_per_cir, cfg.d_model)),
        }
    }
}

/// Which learned rows a token draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnedRow {
    Cls,
    Sequence(usize),
    WithinCir(usize),
    None,
}

/// Non-trainable part of the encoding, one row per token (CLS row zero), and
/// the learned row each token uses.
pub fn fixed_encodings(
    meta: &[TokenMeta],
    cfg: &EncodingConfig,
    extent: &[f64; 3],
) -> Result<(Array2<f64>, Vec<LearnedRow>)> {
    let mut fixed = Array2::zeros((meta.len(), cfg.d_model));
    let mut rows = Vec::with_capacity(meta.len());
    let earliest = meta.iter().filter_map(|m| m.rx_time).min_by(f64::total_cmp);
    for (k, m) in meta.iter().enumerate() {
        if m.is_cls {
            rows.push(LearnedRow::Cls);
            continue;
        }
        match cfg.kind {
            EncodingKind::Learned => {
                let idx = if meta[0].is_cls { k - 1 } else { k };
                if idx >= cfg.max_seq_len {
                    return Err(Error::InvalidIndex {
                        index: idx,
                        len: cfg.max_seq_len,
                    });
                }
                rows.push(LearnedRow::Sequence(idx));
            }
            EncodingKind::Spatial | EncodingKind::SpatialTime => {
                let position = m.anchor_position.ok_or_else(|| {
                    Error::IncompatibleEncoding("spatial encoding is not possible for multi-CIR patching".into())
                })?;
                let mut row = spatial_pe(&position, extent, cfg)?;
                if cfg.kind == EncodingKind::SpatialTime {
                    // silent anchors count as maximally late
                    let dt = match (m.rx_time, earliest) {
                        (Some(t), Some(t0)) => t - t0,
                        _ => cfg.dt_max,
                    };
                    row += &time_diff_pe(dt, cfg)?;
                }
                fixed.row_mut(k).assign(&row);
                if cfg.patches_per_cir > 1 {
                    if m.patch_index >= cfg.patches_per_cir {
                        return Err(Error::InvalidIndex {
                            index: m.patch_index,
                            len: cfg.patches_per_cir,
                        });
                    }
                    rows.push(LearnedRow::WithinCir(m.patch_index));
                } else {
                    rows.push(LearnedRow::None);
                }
            }
        }
    }
    Ok((fixed, rows))
}

/// Adds the learned rows selected by `rows` to `x` in place.
pub fn add_learned_rows(x: &mut Array2<f64>, rows: &[LearnedRow], tables: &EncodingTables) {
    for (k, row) in rows.iter().enumerate() {
        let mut target = x.row_mut(k);
        match *row {
            LearnedRow::Cls => target += &tables.cls,
            LearnedRow::Sequence(i) => target += &tables.sequence.row(i),
            LearnedRow::WithinCir(j) => target += &tables.within_cir.row(j),
            LearnedRow::None => {}
        }
    }
}

pub fn apply_encodings(
    tokens: &TokenSequence,
    cfg: &EncodingConfig,
    tables: &EncodingTables,
    extent: &[f64; 3],
) -> Result<TokenSequence> {
    if tokens.d_model() != cfg.d_model {
        return Err(Error::Shape(format!(
            "tokens have width {}, encodings {}",
            tokens.d_model(),
            cfg.d_model
        )));
    }
    let (fixed, rows) = fixed_encodings(&tokens.meta, cfg, extent)?;
    let mut out = &tokens.tokens + &fixed;
    add_learned_rows(&mut out, &rows, tables);
    Ok(TokenSequence {
        tokens: out,
        meta: tokens.meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Environment;

    fn cfg(kind: EncodingKind, d_model: usize) -> EncodingConfig {
        EncodingConfig::new(kind, d_model, 30, 2)
    }

    #[test]
    fn band_examples() {
        assert_eq!(frequency_bands(2, 1.0, 100.0).unwrap(), vec![1.0, 100.0]);
        let b = frequency_bands(3, 1.0, 100.0).unwrap();
        assert!((b[1] - 10.0).abs() < 1e-12 && b[2] == 100.0);
        let b = frequency_bands(10, 1.0, 1000.0).unwrap();
        let r0 = b[1] / b[0];
        for w in b.windows(2) {
            assert!((w[1] / w[0] - r0).abs() < 1e-9);
        }
        assert_eq!(frequency_bands(1, 2.0, 5.0).unwrap(), vec![2.0]);
        assert!(frequency_bands(3, 0.0, 5.0).is_err());
        assert!(frequency_bands(3, 5.0, 5.0).is_err());
    }

    #[test]
    fn spatial_origin_and_padding() {
        let c = cfg(EncodingKind::Spatial, 64);
        assert_eq!(c.f_bands, 10);
        let pe = spatial_pe(&Point3::zeros(), &[30.0, 10.0, 3.0], &c).unwrap();
        for k in 0..60 {
            assert_eq!(pe[k], if k % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!(pe.iter().skip(60).all(|&v| v == 0.0));
        assert_eq!(pe.len(), 64);
    }

    #[test]
    fn spatial_bounds() {
        let mut c = cfg(EncodingKind::Spatial, 32);
        let outside = Point3::new(31.0, 1.0, 1.0);
        assert!(matches!(
            spatial_pe(&outside, &[30.0, 10.0, 3.0], &c),
            Err(Error::OutOfBounds(_))
        ));
        c.clamp = true;
        let clamped = spatial_pe(&outside, &[30.0, 10.0, 3.0], &c).unwrap();
        let edge = spatial_pe(&Point3::new(30.0, 1.0, 1.0), &[30.0, 10.0, 3.0], &c).unwrap();
        assert_eq!(clamped, edge);
    }

    #[test]
    fn warehouse_anchors_encode_distinctly() {
        let env = Environment::default_warehouse();
        let c = cfg(EncodingKind::Spatial, 64);
        let pes: Vec<_> = env
            .anchors
            .iter()
            .map(|a| spatial_pe(&a.position, &env.extent, &c).unwrap())
            .collect();
        for i in 0..pes.len() {
            for j in i + 1..pes.len() {
                let d: f64 = (&pes[i] - &pes[j]).mapv(|v| v * v).sum();
                assert!(d.sqrt() > 1e-3, "anchors {i} and {j} collide");
            }
        }
    }

    #[test]
    fn time_examples() {
        let c = cfg(EncodingKind::SpatialTime, 64);
        let zero = time_diff_pe(0.0, &c).unwrap();
        for k in 0..20 {
            assert_eq!(zero[k], if k % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!(zero.iter().skip(20).all(|&v| v == 0.0));
        let bands = frequency_bands(c.f_bands, c.omega_min, c.omega_max).unwrap();
        let full = time_diff_pe(c.dt_max, &c).unwrap();
        for (f, w) in bands.iter().enumerate() {
            assert_eq!(full[2 * f], w.sin());
            assert_eq!(full[2 * f + 1], w.cos());
        }
        assert_eq!(time_diff_pe(5.0 * c.dt_max, &c).unwrap(), full);
    }

    #[test]
    fn learned_lookup() {
        let table = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(learned_pe(2, &table).unwrap(), learned_pe(2, &table).unwrap());
        assert_eq!(learned_pe(2, &table).unwrap().to_vec(), vec![6.0, 7.0, 8.0]);
        assert!(matches!(
            learned_pe(4, &table),
            Err(Error::InvalidIndex { index: 4, len: 4 })
        ));
    }

    #[test]
    fn apply_spatial_and_time() {
        let extent = [30.0, 10.0, 3.0];
        let a = Point3::new(1.0, 2.0, 2.0);
        let meta = vec![
            TokenMeta {
                is_cls: true,
                ..Default::default()
            },
            TokenMeta {
                anchor_position: Some(a),
                rx_time: Some(3e-9),
                row: Some(0),
                patch_index: 0,
                is_cls: false,
            },
            TokenMeta {
                anchor_position: Some(a),
                rx_time: Some(3e-9),
                row: Some(0),
                patch_index: 1,
                is_cls: false,
            },
            TokenMeta {
                anchor_position: Some(a),
                rx_time: Some(1e-9),
                row: Some(1),
                patch_index: 0,
                is_cls: false,
            },
        ];
        let tokens = TokenSequence {
            tokens: Array2::zeros((4, 32)),
            meta,
        };
        let mut c = cfg(EncodingKind::SpatialTime, 32);
        let mut tables = EncodingTables::zeros(&c);
        tables.within_cir.row_mut(1).fill(0.5);
        tables.cls.fill(2.0);
        let out = apply_encodings(&tokens, &c, &tables, &extent).unwrap();
        let s = spatial_pe(&a, &extent, &c).unwrap();
        let close = |got: ArrayView1<f64>, want: Array1<f64>| {
            assert!(
                got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-12),
                "{got} vs {want}"
            );
        };
        assert_eq!(out.tokens.row(0), tables.cls);
        close(out.tokens.row(1), &s + &time_diff_pe(2e-9, &c).unwrap());
        close(out.tokens.row(2), &s + &time_diff_pe(2e-9, &c).unwrap() + 0.5);
        close(out.tokens.row(3), &s + &time_diff_pe(0.0, &c).unwrap());

        c.kind = EncodingKind::Spatial;
        let multi = TokenSequence {
            tokens: Array2::zeros((2, 32)),
            meta: vec![
                TokenMeta {
                    is_cls: true,
                    ..Default::default()
                },
                TokenMeta::default(),
            ],
        };
        assert!(matches!(
            apply_encodings(&multi, &c, &tables, &extent),
            Err(Error::IncompatibleEncoding(_))
        ));
    }
}
