#![allow(dead_code)]

use uwb_tdoa::channel::{generate_dataset, Environment, Sample};
use uwb_tdoa::cir::CirOrdering;
use uwb_tdoa::encoding::EncodingKind;
use uwb_tdoa::nn::{compute_gradients, Example, ModelConfig, TransformerModel};
use uwb_tdoa::patching::{PatchConfig, PatchStrategy};
use uwb_tdoa::tdoa::Point3;

pub fn tiny_config(encoding: EncodingKind, ordering: CirOrdering) -> ModelConfig {
    ModelConfig {
        patch: PatchConfig {
            strategy: PatchStrategy::PerCir,
            l_patch: 75,
        },
        encoding,
        ordering,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        head_widths: vec![16, 8, 3],
        zero_init_output: false,
        ..Default::default()
    }
}

pub fn samples(env: &Environment, n: usize, drop: f64, seed: u64) -> Vec<Sample> {
    let traj: Vec<Point3> = (0..n)
        .map(|i| Point3::new(2.0 + 1.7 * i as f64 % 26.0, 1.0 + (i % 4) as f64 * 2.3, 1.0))
        .collect();
    generate_dataset(env, &traj, drop, seed).unwrap()
}

/// Examples whose TDoA input is the truth shifted by a fixed offset.
pub fn examples(model: &TransformerModel, env: &Environment, samples: &[Sample]) -> Vec<Example> {
    samples
        .iter()
        .map(|s| Example {
            input: model
                .prepare(s, env, s.true_position + Point3::new(0.4, -0.3, 0.1))
                .unwrap(),
            target: s.true_position,
        })
        .collect()
}

/// Largest per-group relative error between analytic and central-difference
/// gradients, with the name of that group.
pub fn gradient_check(model: &TransformerModel, batch: &[Example], h: f64) -> (f64, String) {
    let (_, analytic) = compute_gradients(model, batch, None).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = analytic.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
    let loss = |m: &TransformerModel| compute_gradients(m, batch, None).unwrap().0;
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    for (group, (name, grad)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.tensors_mut()[group].1[k];
            probe.tensors_mut()[group].1[k] = orig + h;
            let up = loss(&probe);
            probe.tensors_mut()[group].1[k] = orig - h;
            let down = loss(&probe);
            probe.tensors_mut()[group].1[k] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = grad
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, name.clone());
        }
    }
    worst
}
