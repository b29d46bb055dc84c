//! Glue between the stages: TDoA baseline per sample, training examples,
//! and baseline-vs-corrected evaluation on the same solvable subset.

use crate::channel::{Environment, Sample};
use crate::error::{Error, Result};
use crate::metrics::{position_errors, MetricsReport};
use crate::nn::{Example, TransformerModel};
use crate::tdoa::{measured_ddoa_set, PairPolicy, Point3, PositionEstimate, SolverOptions, TdoaSolver};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    pub policy: PairPolicy,
    pub solver: SolverOptions,
    /// Project the solution into the environment box. Heavily biased DDoAs
    /// often have no intersection inside the hall and the least-squares
    /// iterate runs off along a hyperbola asymptote.
    pub clamp_to_extent: bool,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            policy: PairPolicy::default(),
            solver: SolverOptions::default(),
            clamp_to_extent: true,
        }
    }
}

pub fn baseline_estimate(sample: &Sample, env: &Environment, opts: &BaselineOptions) -> Result<PositionEstimate> {
    let timestamps = sample.timestamps();
    if timestamps.len() < 3 {
        return Err(Error::InsufficientAnchors {
            required: 3,
            got: timestamps.len(),
        });
    }
    let ddoas = measured_ddoa_set(&timestamps, opts.policy)?;
    let mut estimate = TdoaSolver::new(opts.solver).solve(&ddoas, &env.anchors, None)?;
    if !estimate.position.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("sample {}: solver diverged", sample.sample_id)));
    }
    if opts.clamp_to_extent {
        for k in 0..3 {
            estimate.position[k] = estimate.position[k].clamp(0.0, env.extent[k]);
        }
    }
    Ok(estimate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    /// `None` where the sample could not be solved.
    pub estimates: Vec<Option<Point3>>,
    pub n_unsolvable: usize,
}

impl BaselineRun {
    pub fn solved(&self) -> impl Iterator<Item = (usize, Point3)> + '_ {
        self.estimates.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p)))
    }
}

/// Samples with too few anchors, or where the solver produces a
/// non-finite point, are counted as unsolvable rather than failing the run.
pub fn run_baseline(samples: &[Sample], env: &Environment, opts: &BaselineOptions) -> BaselineRun {
    let estimates: Vec<Option<Point3>> = samples
        .iter()
        .map(|s| baseline_estimate(s, env, opts).ok().map(|e| e.position))
        .collect();
    let n_unsolvable = estimates.iter().filter(|e| e.is_none()).count();
    BaselineRun {
        estimates,
        n_unsolvable,
    }
}

/// Examples for every solved sample, paired with the sample index.
pub fn prepare_examples(
    model: &TransformerModel,
    samples: &[Sample],
    env: &Environment,
    baseline: &BaselineRun,
) -> Result<(Vec<usize>, Vec<Example>)> {
    if baseline.estimates.len() != samples.len() {
        return Err(Error::InvalidArgument(format!(
            "{} baseline estimates for {} samples",
            baseline.estimates.len(),
            samples.len()
        )));
    }
    let mut indices = Vec::new();
    let mut examples = Vec::new();
    for (i, p_tdoa) in baseline.solved() {
        let sample = &samples[i];
        examples.push(Example {
            input: model.prepare(sample, env, p_tdoa)?,
            target: sample.true_position,
        });
        indices.push(i);
    }
    Ok((indices, examples))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub baseline: MetricsReport,
    pub corrected: MetricsReport,
    pub predictions: Vec<Option<Point3>>,
    pub n_unsolvable: usize,
}

pub fn evaluate(
    model: &TransformerModel,
    samples: &[Sample],
    env: &Environment,
    baseline: &BaselineRun,
) -> Result<Evaluation> {
    let (indices, examples) = prepare_examples(model, samples, env, baseline)?;
    if examples.is_empty() {
        return Err(Error::InsufficientData("no solvable samples to evaluate".into()));
    }
    let mut predictions = vec![None; samples.len()];
    let mut corrected = Vec::with_capacity(examples.len());
    let mut tdoa = Vec::with_capacity(examples.len());
    let mut truth = Vec::with_capacity(examples.len());
    for (&i, ex) in indices.iter().zip(&examples) {
        let p = model.predict(&ex.input)?;
        predictions[i] = Some(p);
        corrected.push(p);
        tdoa.push(baseline.estimates[i].expect("solved sample"));
        truth.push(ex.target);
    }
    Ok(Evaluation {
        baseline: MetricsReport::from_errors(&position_errors(&tdoa, &truth)?)?,
        corrected: MetricsReport::from_errors(&position_errors(&corrected, &truth)?)?,
        predictions,
        n_unsolvable: baseline.n_unsolvable,
    })
}
