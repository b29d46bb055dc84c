//! Raw CIR → normalized input tensor.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{Environment, RawCir, Sample};
use crate::error::{Error, Result};
use crate::tdoa::Point3;

/// Samples kept per CIR.
pub const WINDOW_LEN: usize = 150;
/// Samples kept before the detected first path.
pub const WINDOW_PRE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CirOrdering {
    /// One predetermined row per environment anchor, zero rows for silent anchors.
    #[default]
    Fixed,
    /// Only received CIRs, earliest first.
    TimeBased,
}

pub fn iq_to_amplitude(iq: &[Complex64]) -> Vec<f64> {
    iq.iter().map(|c| c.norm()).collect()
}

/// 150-sample window starting 50 samples before the first path; positions
/// outside the buffer are zero.
pub fn trim_window(amplitude: &[f64], first_path_index: usize) -> [f64; WINDOW_LEN] {
    let mut out = [0.0; WINDOW_LEN];
    let start = first_path_index as isize - WINDOW_PRE as isize;
    for (k, v) in out.iter_mut().enumerate() {
        let src = start + k as isize;
        if src >= 0 && (src as usize) < amplitude.len() {
            *v = amplitude[src as usize];
        }
    }
    out
}

/// Min-max scaling to `[0, 1]`; a constant window maps to all zeros.
pub fn normalize_minmax(window: &[f64]) -> Vec<f64> {
    let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if window.is_empty() || hi <= lo {
        return vec![0.0; window.len()];
    }
    let span = hi - lo;
    window.iter().map(|&v| (v - lo) / span).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedCir {
    pub amplitude: [f64; WINDOW_LEN],
    pub anchor_id: u32,
    pub anchor_position: Point3,
    pub rx_time: f64,
}

pub fn process_cir(raw: &RawCir, anchor_position: Point3) -> ProcessedCir {
    let trimmed = trim_window(&iq_to_amplitude(&raw.iq), raw.first_path_index);
    let mut amplitude = [0.0; WINDOW_LEN];
    amplitude.copy_from_slice(&normalize_minmax(&trimmed));
    ProcessedCir {
        amplitude,
        anchor_id: raw.anchor_id,
        anchor_position,
        rx_time: raw.rx_time,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRow {
    pub amplitude: [f64; WINDOW_LEN],
    pub present: bool,
    pub anchor_id: u32,
    pub anchor_position: Point3,
    pub rx_time: Option<f64>,
}

/// The matrix `M` with one row per CIR.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub rows: Vec<TensorRow>,
    pub ordering: CirOrdering,
    pub n_total: usize,
}

impl InputTensor {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Earliest reception time among present rows.
    pub fn earliest_rx_time(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.rx_time).min_by(f64::total_cmp)
    }

    pub fn n_present(&self) -> usize {
        self.rows.iter().filter(|r| r.present).count()
    }
}

pub fn build_input_tensor(sample: &Sample, env: &Environment, ordering: CirOrdering) -> Result<InputTensor> {
    if sample.raw_cirs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "sample {} has no CIRs",
            sample.sample_id
        )));
    }
    let mut processed = Vec::with_capacity(sample.raw_cirs.len());
    for raw in &sample.raw_cirs {
        let anchor = env.anchor(raw.anchor_id).ok_or(Error::MissingAnchor(raw.anchor_id))?;
        processed.push(process_cir(raw, anchor.position));
    }
    let to_row = |p: ProcessedCir| TensorRow {
        amplitude: p.amplitude,
        present: true,
        anchor_id: p.anchor_id,
        anchor_position: p.anchor_position,
        rx_time: Some(p.rx_time),
    };
    let rows = match ordering {
        CirOrdering::Fixed => {
            let mut rows: Vec<TensorRow> = env
                .anchors
                .iter()
                .map(|a| TensorRow {
                    amplitude: [0.0; WINDOW_LEN],
                    present: false,
                    anchor_id: a.id,
                    anchor_position: a.position,
                    rx_time: None,
                })
                .collect();
            for p in processed {
                let row = env.anchor_row(p.anchor_id).ok_or(Error::MissingAnchor(p.anchor_id))?;
                if rows[row].present {
                    return Err(Error::InvalidArgument(format!(
                        "sample {} has two CIRs from anchor {}",
                        sample.sample_id, p.anchor_id
                    )));
                }
                rows[row] = to_row(p);
            }
            rows
        }
        CirOrdering::TimeBased => {
            processed.sort_by(|a, b| a.rx_time.total_cmp(&b.rx_time).then(a.anchor_id.cmp(&b.anchor_id)));
            processed.into_iter().map(to_row).collect()
        }
    };
    Ok(InputTensor {
        rows,
        ordering,
        n_total: env.anchors.len(),
    })
}
