//! Positioning error metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tdoa::Point3;

/// Quantiles (percent) reported for the circular error probability.
pub const CEP_QUANTILES: [u32; 5] = [50, 75, 90, 95, 99];

/// Euclidean error per sample.
pub fn position_errors(estimates: &[Point3], truths: &[Point3]) -> Result<Vec<f64>> {
    if estimates.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} estimates vs {} ground-truth positions",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("no positions to score".into()));
    }
    Ok(estimates.iter().zip(truths).map(|(e, t)| (e - t).norm()).collect())
}

pub fn mae(estimates: &[Point3], truths: &[Point3]) -> Result<f64> {
    let errors = position_errors(estimates, truths)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// `ceil(q/100 * n)`-th smallest error; no interpolation.
pub fn cep_of_errors(errors: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 100]")));
    }
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no errors to score".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn cep(estimates: &[Point3], truths: &[Point3], q: f64) -> Result<f64> {
    cep_of_errors(&position_errors(estimates, truths)?, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    /// Keyed by quantile in percent.
    pub cep: BTreeMap<u32, f64>,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InvalidArgument("no errors to score".into()));
        }
        let mut cep = BTreeMap::new();
        for q in CEP_QUANTILES {
            cep.insert(q, cep_of_errors(errors, f64::from(q))?);
        }
        Ok(Self {
            mae: errors.iter().sum::<f64>() / errors.len() as f64,
            cep,
            n_samples: errors.len(),
        })
    }

    pub fn compute(estimates: &[Point3], truths: &[Point3]) -> Result<Self> {
        Self::from_errors(&position_errors(estimates, truths)?)
    }
}
