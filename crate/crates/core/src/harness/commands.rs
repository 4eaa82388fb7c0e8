//! Experiment drivers behind the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, InstanceStore};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::harness::config::{resolve_output, EvalSpec, ExperimentConfig};
use crate::harness::datasets::{
    make_dataset, write_dataset_binary, write_dataset_text, Dataset, DatasetSpec,
};
use crate::harness::records::{Record, RecordWriter};
use crate::models::Generator;
use crate::neighborhoods::{select_instances, SelectionResult};
use crate::rng::derive_rng;
use crate::training::{train_with, StepMetrics};

const SELECT_STREAM: u64 = 0x5e1ec7;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// Stored conditionings for evaluation: all instances, or `n` chosen by `spec.method`.
pub fn select_for_eval(store: &InstanceStore, spec: &EvalSpec) -> Result<SelectionResult> {
    match spec.n_instances {
        None => Ok(SelectionResult::all(store.len())),
        Some(n) => {
            let mut rng = derive_rng(spec.seed, &[SELECT_STREAM]);
            select_instances(store.features(), n, spec.method, &mut rng)
        }
    }
}

pub fn evaluate_model(
    generator: &Generator,
    store: &InstanceStore,
    embedder: &Embedder,
    reference: &Dataset,
    spec: &EvalSpec,
) -> Result<(EvalReport, SelectionResult)> {
    let selection = select_for_eval(store, spec)?;
    let report = evaluate(
        generator,
        store,
        &selection,
        &reference.data,
        reference.labels.as_deref(),
        embedder,
        &spec.eval_config(),
    )?;
    Ok((report, selection))
}

/// Stratified FID is only requested for class-conditional models.
fn reference_for(ckpt_labels_used: bool, reference: Dataset) -> Dataset {
    if ckpt_labels_used {
        reference
    } else {
        Dataset {
            labels: None,
            ..reference
        }
    }
}

pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    reference: &Dataset,
    spec: &EvalSpec,
) -> Result<EvalReport> {
    let reference = reference_for(ckpt.train_config.class_conditional, reference.clone());
    Ok(evaluate_model(
        &ckpt.generator,
        &ckpt.store,
        &ckpt.embedder,
        &reference,
        spec,
    )?
    .0)
}

/// In-memory training run: dataset, embedder, adversarial loop. `on_step`
/// sees every step's metrics and, when requested, an interval FID.
pub fn run_training(
    config: &ExperimentConfig,
    mut on_step: impl FnMut(&StepMetrics, Option<f64>) -> Result<()>,
) -> Result<Checkpoint> {
    let data = make_dataset(&config.dataset)?;
    let embedder = config.embedder.fit(&data.data)?;
    let labels = data
        .labels
        .as_deref()
        .filter(|_| config.train.class_conditional);
    let reference = match config.eval.eval_every {
        Some(_) => Some(make_dataset(&config.reference_spec())?),
        None => None,
    };
    let out = train_with(&config.train, &data.data, labels, &embedder, |state, m| {
        let fid = match (config.eval.eval_every, &reference) {
            (Some(every), Some(r)) if every > 0 && m.step % every == 0 => {
                let r = reference_for(false, r.clone());
                Some(
                    evaluate_model(&state.generator, state.store(), &embedder, &r, &config.eval)?
                        .0
                        .fid,
                )
            }
            _ => None,
        };
        on_step(m, fid)
    })?;
    Ok(Checkpoint {
        generator: out.generator,
        discriminator: out.discriminator,
        embedder,
        store: out.store,
        train_config: config.train.clone(),
        dataset: Some(config.dataset.clone()),
        rng: out.rng,
        selection: None,
    })
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub output_dir: PathBuf,
    pub checkpoint_path: PathBuf,
    pub checkpoint: Checkpoint,
    pub report: EvalReport,
}

fn prepare_dir(dir: &Path) -> Result<PathBuf> {
    let dir = resolve_output(dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Trains, checkpoints and evaluates; writes the resolved config, step
/// records, the checkpoint and a final eval record under the output dir.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainRun> {
    let dir = prepare_dir(&config.output_dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml()?)
        .map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
    let mut metrics = RecordWriter::create(&dir.join(METRICS_FILE))?;
    let log_every = config.eval.log_every.max(1);
    let mut ckpt = run_training(config, |m, fid| {
        if m.step % log_every == 0 || fid.is_some() || m.step == config.train.steps {
            metrics.write(&Record::Step {
                step: m.step,
                d_loss: m.d_loss,
                g_loss: m.g_loss,
                fid,
            })?;
        }
        Ok(())
    })?;
    let reference = make_dataset(&config.reference_spec())?;
    let reference = reference_for(config.train.class_conditional, reference);
    let (report, selection) = evaluate_model(
        &ckpt.generator,
        &ckpt.store,
        &ckpt.embedder,
        &reference,
        &config.eval,
    )?;
    ckpt.selection = Some(selection);
    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint_path, &ckpt)?;
    RecordWriter::create(&dir.join(EVAL_FILE))?.write(&Record::Eval {
        name: "final".into(),
        report: report.clone(),
    })?;
    Ok(TrainRun {
        output_dir: dir,
        checkpoint_path,
        checkpoint: ckpt,
        report,
    })
}

/// Evaluates a checkpoint against `reference` (default: held-out draw of its
/// training dataset). Writes an eval record to `out` when given.
pub fn cmd_eval(
    checkpoint: &Path,
    spec: &EvalSpec,
    reference: Option<&DatasetSpec>,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let reference = match (reference, &ckpt.dataset) {
        (Some(r), _) => r.clone(),
        (None, Some(d)) => d.held_out(),
        (None, None) => {
            return Err(Error::Config {
                what: "eval",
                detail: "checkpoint has no dataset spec; pass a reference".into(),
            })
        }
    };
    let report = evaluate_checkpoint(&ckpt, &make_dataset(&reference)?, spec)?;
    if let Some(path) = out {
        let path = resolve_output(path);
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        RecordWriter::create(&path)?.write(&Record::Eval {
            name: checkpoint.display().to_string(),
            report: report.clone(),
        })?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub n_instances: Vec<usize>,
    pub k: Vec<usize>,
    pub seeds: Vec<u64>,
}

pub fn cell_key(n: usize, k: usize, seed: u64) -> String {
    format!("n={n},k={k},seed={seed}")
}

/// One model per (k, seed), evaluated at every n. Emits exactly one record
/// per grid cell; failures become error records.
pub fn ablate(config: &ExperimentConfig, grid: &AblationGrid) -> Vec<Record> {
    let mut records = Vec::new();
    for &seed in &grid.seeds {
        for &k in &grid.k {
            let mut cfg = config.clone();
            cfg.train.k = k;
            cfg.train.seed = seed;
            cfg.eval.eval_every = None;
            let trained = run_training(&cfg, |_, _| Ok(()))
                .and_then(|ckpt| Ok((ckpt, make_dataset(&cfg.reference_spec())?)));
            for &n in &grid.n_instances {
                let result =
                    trained
                        .as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|(ckpt, reference)| {
                            let spec = EvalSpec {
                                n_instances: Some(n),
                                ..cfg.eval.clone()
                            };
                            evaluate_checkpoint(ckpt, reference, &spec).map_err(|e| e.to_string())
                        });
                let (report, error) = match result {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e)),
                };
                records.push(Record::AblationCell {
                    cell: cell_key(n, k, seed),
                    n_instances: n,
                    k,
                    seed,
                    report,
                    error,
                });
            }
        }
    }
    records
}

/// Runs [`ablate`] and writes its records to `ablation.jsonl` in the output dir.
pub fn cmd_ablate(
    config: &ExperimentConfig,
    grid: &AblationGrid,
) -> Result<(PathBuf, Vec<Record>)> {
    let dir = prepare_dir(&config.output_dir)?;
    let path = dir.join("ablation.jsonl");
    let records = ablate(config, grid);
    let mut w = RecordWriter::create(&path)?;
    for r in &records {
        w.write(r)?;
    }
    Ok((path, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Conditioned on instances embedded from the target dataset.
    pub target_instances: EvalReport,
    /// Conditioned on the training instances.
    pub source_instances: EvalReport,
}

/// Swaps in conditioning instances from `target` and scores both the swapped
/// and the original conditionings against a held-out target reference.
pub fn transfer(
    ckpt: &Checkpoint,
    target: &DatasetSpec,
    spec: &EvalSpec,
) -> Result<TransferReport> {
    let data = make_dataset(target)?;
    let labels = data
        .labels
        .clone()
        .filter(|_| ckpt.train_config.class_conditional);
    let target_store = ckpt.embedder.embed_all(&data.data, labels)?;
    let reference = Dataset {
        labels: None,
        ..make_dataset(&target.held_out())?
    };
    let (target_instances, _) = evaluate_model(
        &ckpt.generator,
        &target_store,
        &ckpt.embedder,
        &reference,
        spec,
    )?;
    let (source_instances, _) = evaluate_model(
        &ckpt.generator,
        &ckpt.store,
        &ckpt.embedder,
        &reference,
        spec,
    )?;
    Ok(TransferReport {
        target_instances,
        source_instances,
    })
}

pub fn cmd_transfer(
    checkpoint: &Path,
    target: &DatasetSpec,
    spec: &EvalSpec,
    out: Option<&Path>,
) -> Result<TransferReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let report = transfer(&ckpt, target, spec)?;
    if let Some(path) = out {
        let path = resolve_output(path);
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = RecordWriter::create(&path)?;
        for (name, r) in [
            ("target_instances", &report.target_instances),
            ("source_instances", &report.source_instances),
        ] {
            w.write(&Record::Transfer {
                conditioning: name.into(),
                report: r.clone(),
            })?;
        }
    }
    Ok(report)
}

pub fn cmd_make_dataset(spec: &DatasetSpec, path: &Path, binary: bool) -> Result<Dataset> {
    let ds = make_dataset(spec)?;
    let path = resolve_output(path);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    if binary {
        write_dataset_binary(&path, &ds)?;
    } else {
        write_dataset_text(&path, &ds)?;
    }
    Ok(ds)
}
