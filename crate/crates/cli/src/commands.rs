use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use uwb_tdoa::channel::{derive_seed, random_walk_trajectory, systematic_trajectory, Environment, Sample};
use uwb_tdoa::complexity::{cnn_baseline_ops, op_count, SweepResult};
use uwb_tdoa::dataset::{load_dataset, save_anchors, save_dataset};
use uwb_tdoa::metrics::{position_errors, MetricsReport};
use uwb_tdoa::nn::{
    train_with_progress, Checkpoint, EpochRecord, ModelConfig, TrainConfig, TrainedModel, TransformerModel,
};
use uwb_tdoa::patching::PatchStrategy;
use uwb_tdoa::pipeline::{evaluate, prepare_examples, run_baseline, BaselineRun};

use crate::config::ExperimentConfig;
use crate::sweep::{completed_ids, config_id, pareto_rows, read_rows, write_rows, RowWriter, SweepRow};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const ENVIRONMENT_FILE: &str = "environment.json";
pub const ANCHORS_FILE: &str = "anchors.json";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_environment(path: &Path) -> Result<Environment> {
    let env: Environment = serde_json::from_reader(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))?;
    env.validate()?;
    Ok(env)
}

/// Environment from `--env` if given, else from the configuration.
pub fn environment(cfg: &ExperimentConfig, env_file: Option<&Path>) -> Result<Environment> {
    match env_file {
        Some(p) => read_environment(p),
        None => cfg.build_environment(),
    }
}

pub struct SimulatedData {
    pub env: Environment,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

/// Training set along systematic straight passes, evaluation set along an
/// independent random walk.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulatedData> {
    let env = cfg.build_environment()?;
    let sim = &cfg.simulation;
    if sim.train_samples == 0 || sim.eval_samples == 0 {
        bail!("simulation needs at least one training and one evaluation sample");
    }
    let train_traj = systematic_trajectory(&env, sim.tag_height, sim.step, sim.train_samples);
    if train_traj.is_empty() {
        bail!("no free straight-line path in the environment");
    }
    let eval_traj = random_walk_trajectory(
        &env,
        sim.tag_height,
        sim.eval_samples,
        sim.step,
        derive_seed(cfg.seed, &[2]),
    );
    let drop = sim.drop_probability;
    let train = sim
        .channel
        .generate_dataset(&env, &train_traj, drop, derive_seed(cfg.seed, &[3]))?;
    let eval = sim
        .channel
        .generate_dataset(&env, &eval_traj, drop, derive_seed(cfg.seed, &[4]))?;
    Ok(SimulatedData { env, train, eval })
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SimulatedData> {
    let data = simulate(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    save_dataset(&out_dir.join(TRAIN_FILE), &data.train)?;
    save_dataset(&out_dir.join(EVAL_FILE), &data.eval)?;
    write_json(&out_dir.join(ENVIRONMENT_FILE), &data.env)?;
    save_anchors(&out_dir.join(ANCHORS_FILE), &data.env.anchors)?;
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub n_samples: usize,
    pub n_unsolvable: usize,
    pub baseline: MetricsReport,
}

pub fn baseline_summary(samples: &[Sample], run: &BaselineRun) -> Result<BaselineSummary> {
    let (est, truth): (Vec<_>, Vec<_>) = run.solved().map(|(i, p)| (p, samples[i].true_position)).unzip();
    if est.is_empty() {
        bail!("no sample could be solved");
    }
    Ok(BaselineSummary {
        n_samples: samples.len(),
        n_unsolvable: run.n_unsolvable,
        baseline: MetricsReport::from_errors(&position_errors(&est, &truth)?)?,
    })
}

/// One row of the per-sample baseline table; unsolvable samples have no
/// estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub sample_id: u64,
    pub n_anchors: usize,
    pub est_x: Option<f64>,
    pub est_y: Option<f64>,
    pub est_z: Option<f64>,
    pub true_x: f64,
    pub true_y: f64,
    pub true_z: f64,
    pub error_m: Option<f64>,
}

pub fn estimate_rows(samples: &[Sample], run: &BaselineRun) -> Vec<EstimateRow> {
    samples
        .iter()
        .zip(&run.estimates)
        .map(|(s, est)| EstimateRow {
            sample_id: s.sample_id,
            n_anchors: s.raw_cirs.len(),
            est_x: est.map(|p| p.x),
            est_y: est.map(|p| p.y),
            est_z: est.map(|p| p.z),
            true_x: s.true_position.x,
            true_y: s.true_position.y,
            true_z: s.true_position.z,
            error_m: est.map(|p| (p - s.true_position).norm()),
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_baseline(
    cfg: &ExperimentConfig,
    env: &Environment,
    data: &Path,
    out: Option<&Path>,
    estimates: Option<&Path>,
) -> Result<BaselineSummary> {
    let samples = load_dataset(data)?;
    let run = run_baseline(&samples, env, &cfg.baseline_options());
    let summary = baseline_summary(&samples, &run)?;
    if let Some(out) = out {
        write_json(out, &summary)?;
    }
    if let Some(path) = estimates {
        write_csv(path, &estimate_rows(&samples, &run))?;
    }
    Ok(summary)
}

pub fn train_model(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    cfg: &ExperimentConfig,
    env: &Environment,
    samples: &[Sample],
    progress: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    let model = TransformerModel::new(model_cfg.clone(), env, derive_seed(train_cfg.seed, &[0x6d6f64]))?;
    let run = run_baseline(samples, env, &cfg.baseline_options());
    let (_, examples) = prepare_examples(&model, samples, env, &run)?;
    if examples.is_empty() {
        bail!("no solvable training samples");
    }
    Ok(train_with_progress(model, &examples, train_cfg, progress)?)
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    env: &Environment,
    data: &Path,
    out: &Path,
    history: Option<&Path>,
    quiet: bool,
) -> Result<TrainedModel> {
    let samples = load_dataset(data)?;
    let train_cfg = TrainConfig {
        seed: derive_seed(cfg.seed, &[cfg.training.seed]),
        ..cfg.training.clone()
    };
    let trained = train_model(&cfg.model, &train_cfg, cfg, env, &samples, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  train {:.5}  val {:.5}  lr {:.2e}",
                r.epoch, r.train_loss, r.val_loss, r.lr
            );
        }
    })?;
    Checkpoint::from_model(&trained.model, &trained.history).save(out)?;
    if let Some(path) = history {
        write_csv(path, &trained.history)?;
    }
    Ok(trained)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub n_samples: usize,
    pub n_unsolvable: usize,
    pub baseline: MetricsReport,
    pub corrected: MetricsReport,
    /// `1 - corrected / baseline` MAE.
    pub improvement: f64,
}

pub fn evaluate_samples(
    model: &TransformerModel,
    cfg: &ExperimentConfig,
    env: &Environment,
    samples: &[Sample],
) -> Result<EvaluationSummary> {
    let run = run_baseline(samples, env, &cfg.baseline_options());
    let e = evaluate(model, samples, env, &run)?;
    Ok(EvaluationSummary {
        n_samples: samples.len(),
        n_unsolvable: e.n_unsolvable,
        improvement: 1.0 - e.corrected.mae / e.baseline.mae,
        baseline: e.baseline,
        corrected: e.corrected,
    })
}

pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    env: &Environment,
    checkpoint: &Path,
    data: &Path,
    out: Option<&Path>,
) -> Result<EvaluationSummary> {
    let model = Checkpoint::load(checkpoint)?.into_model()?;
    if model.n_total != env.anchors.len() {
        bail!(
            "checkpoint expects {} anchors, environment has {}",
            model.n_total,
            env.anchors.len()
        );
    }
    let summary = evaluate_samples(&model, cfg, env, &load_dataset(data)?)?;
    if let Some(out) = out {
        write_json(out, &summary)?;
    }
    Ok(summary)
}

/// Mean number of receiving anchors per sample.
pub fn mean_available(samples: &[Sample]) -> f64 {
    samples.iter().map(|s| s.raw_cirs.len() as f64).sum::<f64>() / samples.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSelection {
    All,
    Only(PatchStrategy),
}

pub struct SweepOptions<'a> {
    pub data_dir: Option<&'a Path>,
    pub results: &'a Path,
    pub pareto: &'a Path,
    pub selection: GridSelection,
    pub limit: Option<usize>,
    pub quiet: bool,
}

pub struct SweepOutcome {
    pub attempted: usize,
    pub skipped: usize,
    pub failed: usize,
    pub pareto: Vec<SweepRow>,
}

fn load_or_simulate(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<SimulatedData> {
    match data_dir {
        Some(dir) => {
            let env_path = dir.join(ENVIRONMENT_FILE);
            let env = if env_path.exists() {
                read_environment(&env_path)?
            } else {
                cfg.build_environment()?
            };
            Ok(SimulatedData {
                env,
                train: load_dataset(&dir.join(TRAIN_FILE))?,
                eval: load_dataset(&dir.join(EVAL_FILE))?,
            })
        }
        None => simulate(cfg),
    }
}

/// Trains and scores every configuration missing from the results file,
/// appending one row each, then rewrites the Pareto table.
pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<SweepOutcome> {
    let mut data = load_or_simulate(cfg, opts.data_dir)?;
    if let Some(n) = cfg.sweep.train_samples {
        data.train.truncate(n);
    }
    if let Some(n) = cfg.sweep.eval_samples {
        data.eval.truncate(n);
    }
    let n_av = mean_available(&data.eval);
    let eval_run = run_baseline(&data.eval, &data.env, &cfg.baseline_options());
    let baseline_mae = baseline_summary(&data.eval, &eval_run)?.baseline.mae;

    let configs = match opts.selection {
        GridSelection::All => cfg.sweep.grid.full_grid(&cfg.model),
        GridSelection::Only(s) => cfg.sweep.grid.grid(s, &cfg.model),
    };
    let done = completed_ids(&read_rows(opts.results)?);
    let mut writer = RowWriter::append(opts.results)?;
    let (mut attempted, mut skipped, mut failed) = (0, 0, 0);
    for (index, model_cfg) in configs.iter().enumerate() {
        let id = config_id(model_cfg);
        if done.contains(&id) {
            skipped += 1;
            continue;
        }
        if opts.limit.is_some_and(|l| attempted >= l) {
            break;
        }
        attempted += 1;
        let train_cfg = TrainConfig {
            max_epochs: cfg.training.max_epochs.min(cfg.sweep.epochs),
            seed: derive_seed(cfg.seed, &[0x5eed, index as u64]),
            ..cfg.training.clone()
        };
        let outcome = (|| -> Result<SweepRow> {
            let trained = train_model(model_cfg, &train_cfg, cfg, &data.env, &data.train, |_| {})?;
            let e = evaluate(&trained.model, &data.eval, &data.env, &eval_run)?;
            let ops = op_count(model_cfg, data.env.anchors.len(), n_av)?;
            let result = SweepResult {
                config: model_cfg.clone(),
                total_ops: ops.total_ops,
                mae: e.corrected.mae,
                cep: e.corrected.cep,
            };
            Ok(SweepRow::from_result(&result, baseline_mae, trained.best_epoch))
        })();
        let row = outcome.unwrap_or_else(|err| {
            failed += 1;
            SweepRow::failed(model_cfg, format!("{err:#}"))
        });
        if !opts.quiet {
            match (&row.mae, &row.error) {
                (Some(mae), _) => eprintln!("{id}: MAE {mae:.3} m (baseline {baseline_mae:.3} m)"),
                (_, Some(err)) => eprintln!("{id}: failed: {err}"),
                _ => {}
            }
        }
        writer.write(&row)?;
    }
    let pareto = pareto_rows(&read_rows(opts.results)?);
    write_rows(opts.pareto, &pareto)?;
    Ok(SweepOutcome {
        attempted,
        skipped,
        failed,
        pareto,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub id: String,
    pub embedding_ops: f64,
    pub attention_ops: f64,
    pub feedforward_ops: f64,
    pub head_ops: f64,
    pub total_ops: f64,
}

/// Operation counts for the whole grid plus the CNN reference row, which
/// runs once per anchor.
pub fn complexity_table(cfg: &ExperimentConfig, n_total: usize, n_av: f64) -> Result<Vec<ComplexityRow>> {
    let mut rows = Vec::new();
    for model_cfg in cfg.sweep.grid.full_grid(&cfg.model) {
        let o = op_count(&model_cfg, n_total, n_av)?;
        rows.push(ComplexityRow {
            id: config_id(&model_cfg),
            embedding_ops: o.embedding_ops,
            attention_ops: o.attention_ops,
            feedforward_ops: o.feedforward_ops,
            head_ops: o.head_ops,
            total_ops: o.total_ops,
        });
    }
    let cnn = cnn_baseline_ops(n_total as u64) as f64;
    rows.push(ComplexityRow {
        id: format!("cnn_reference-n{n_total}"),
        embedding_ops: 0.0,
        attention_ops: 0.0,
        feedforward_ops: 0.0,
        head_ops: 0.0,
        total_ops: cnn,
    });
    Ok(rows)
}

pub fn cmd_complexity(
    cfg: &ExperimentConfig,
    n_total: usize,
    n_av: f64,
    out: Option<&Path>,
) -> Result<Vec<ComplexityRow>> {
    let rows = complexity_table(cfg, n_total, n_av)?;
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn cmd_pareto(results: &Path, out: &Path) -> Result<Vec<SweepRow>> {
    if !results.exists() {
        bail!("{} does not exist", results.display());
    }
    let front = pareto_rows(&read_rows(results)?);
    write_rows(out, &front)?;
    Ok(front)
}

pub fn default_path(dir: Option<&Path>, name: &str) -> PathBuf {
    dir.map(|d| d.join(name)).unwrap_or_else(|| PathBuf::from(name))
}
