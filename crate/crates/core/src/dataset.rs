//! JSON-lines dataset format, one sample per line:
//!
//! ```json
//! {"sample_id": 0, "true_position": [x, y, z], "tx_time_s": 0.0,
//!  "measurements": [{"anchor_id": 1, "rx_time_s": 1.2e-8, "first_path_index": 75,
//!                    "cir_real": [...], "cir_imag": [...]}]}
//! ```
//!
//! Anchors files are JSON arrays of `{"id", "x", "y", "z"}` objects.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{RawCir, Sample};
use crate::error::{Error, Result};
use crate::tdoa::{validate_anchors, Anchor, Point3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub anchor_id: u32,
    pub rx_time_s: f64,
    pub first_path_index: usize,
    pub cir_real: Vec<f64>,
    pub cir_imag: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub true_position: [f64; 3],
    pub tx_time_s: f64,
    pub measurements: Vec<MeasurementRecord>,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        Self {
            sample_id: s.sample_id,
            true_position: [s.true_position.x, s.true_position.y, s.true_position.z],
            tx_time_s: s.tx_time,
            measurements: s
                .raw_cirs
                .iter()
                .map(|c| MeasurementRecord {
                    anchor_id: c.anchor_id,
                    rx_time_s: c.rx_time,
                    first_path_index: c.first_path_index,
                    cir_real: c.iq.iter().map(|v| v.re).collect(),
                    cir_imag: c.iq.iter().map(|v| v.im).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<SampleRecord> for Sample {
    type Error = Error;

    fn try_from(r: SampleRecord) -> Result<Self> {
        let raw_cirs = r
            .measurements
            .into_iter()
            .map(|m| {
                if m.cir_real.len() != m.cir_imag.len() {
                    return Err(Error::InvalidArgument(format!(
                        "sample {}: anchor {} has {} real and {} imaginary CIR values",
                        r.sample_id,
                        m.anchor_id,
                        m.cir_real.len(),
                        m.cir_imag.len()
                    )));
                }
                if m.first_path_index >= m.cir_real.len() {
                    return Err(Error::InvalidArgument(format!(
                        "sample {}: first path index {} beyond CIR of length {}",
                        r.sample_id,
                        m.first_path_index,
                        m.cir_real.len()
                    )));
                }
                Ok(RawCir {
                    anchor_id: m.anchor_id,
                    iq: m
                        .cir_real
                        .iter()
                        .zip(&m.cir_imag)
                        .map(|(&re, &im)| Complex64::new(re, im))
                        .collect(),
                    first_path_index: m.first_path_index,
                    rx_time: m.rx_time_s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sample {
            sample_id: r.sample_id,
            true_position: Point3::from(r.true_position),
            tx_time: r.tx_time_s,
            raw_cirs,
        })
    }
}

pub fn write_jsonl<W: Write>(samples: &[Sample], mut out: W) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, &SampleRecord::from(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("dataset line {}: {e}", lineno + 1)))?;
        samples.push(Sample::try_from(record)?);
    }
    Ok(samples)
}

pub fn save_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    write_jsonl(samples, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn load_anchors(path: &Path) -> Result<Vec<Anchor>> {
    let anchors: Vec<Anchor> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    validate_anchors(&anchors)?;
    Ok(anchors)
}

pub fn save_anchors(path: &Path, anchors: &[Anchor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, anchors)?;
    w.write_all(b"\n")?;
    Ok(())
}
