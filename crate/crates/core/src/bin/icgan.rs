//! `icgan`: train, evaluate, ablate and transfer instance-conditioned GANs.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use icgan_core::harness::{
    apply_overrides, cmd_ablate, cmd_eval, cmd_make_dataset, cmd_train, cmd_transfer, AblationGrid,
    DatasetSpec, EvalSpec, ExperimentConfig,
};
use icgan_core::neighborhoods::SelectionMethod;
use icgan_core::training::{ConditioningMode, LossVariant};
use icgan_core::Result;

#[derive(Parser)]
#[command(name = "icgan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, save a checkpoint and write a final evaluation.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a reference set.
    Eval(EvalArgs),
    /// Sweep stored instances x neighbourhood size.
    Ablate(AblateArgs),
    /// Condition a trained model on instances from another dataset.
    Transfer(TransferArgs),
    /// Write a synthetic dataset to disk.
    MakeDataset(MakeDatasetArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Arbitrary `section.field=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_parser = parse_dataset_kind)]
    dataset: Option<String>,
    #[arg(long)]
    dataset_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    g_lr: Option<f64>,
    #[arg(long)]
    d_lr: Option<f64>,
    #[arg(long)]
    d_updates: Option<usize>,
    #[arg(long)]
    loss: Option<LossVariant>,
    #[arg(long, value_parser = parse_conditioning)]
    conditioning: Option<ConditioningMode>,
    #[arg(long)]
    class_conditional: bool,
    #[arg(long)]
    flip_augmentation: bool,
    #[arg(long)]
    class_balance_temperature: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Args, Clone)]
struct EvalFlags {
    /// Stored conditioning instances (default: all).
    #[arg(long)]
    n_instances: Option<usize>,
    #[arg(long, value_parser = parse_method)]
    method: Option<SelectionMethod>,
    #[arg(long)]
    samples_per_instance: Option<usize>,
    #[arg(long)]
    k_pr: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
}

impl EvalFlags {
    fn apply(&self, spec: &mut EvalSpec) {
        if let Some(n) = self.n_instances {
            spec.n_instances = Some(n);
        }
        if let Some(m) = self.method {
            spec.method = m;
        }
        if let Some(s) = self.samples_per_instance {
            spec.samples_per_instance = s;
        }
        if let Some(k) = self.k_pr {
            spec.k_pr = k;
        }
        if let Some(s) = self.eval_seed {
            spec.seed = s;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Reference dataset spec (TOML); default is a held-out draw of the
    /// training dataset.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Write the report record here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long = "grid-n", value_delimiter = ',', required = true)]
    grid_n: Vec<usize>,
    #[arg(long = "grid-k", value_delimiter = ',', required = true)]
    grid_k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Target dataset spec (TOML); default is `shifted_mixture`.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    target_seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Args)]
struct MakeDatasetArgs {
    #[arg(long, value_parser = parse_dataset_kind, default_value = "ring8")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset spec (TOML); overrides --kind.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// `field=value` override of dataset parameters, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Little-endian binary instead of text.
    #[arg(long)]
    binary: bool,
}

fn parse_dataset_kind(s: &str) -> std::result::Result<String, String> {
    match s {
        "ring8" | "grid25" | "longtail_mixture" | "shifted_mixture" => Ok(s.to_string()),
        other => Err(format!(
            "unknown dataset {other:?}; expected ring8, grid25, longtail_mixture or shifted_mixture"
        )),
    }
}

fn parse_method(s: &str) -> std::result::Result<SelectionMethod, String> {
    match s {
        "random" => Ok(SelectionMethod::Random),
        "clustered" => Ok(SelectionMethod::Clustered),
        other => Err(format!("unknown selection method {other:?}")),
    }
}

fn parse_conditioning(s: &str) -> std::result::Result<ConditioningMode, String> {
    match s {
        "instance" => Ok(ConditioningMode::Instance),
        "constant" => Ok(ConditioningMode::Constant),
        other => Err(format!("unknown conditioning {other:?}")),
    }
}

fn dataset_spec(kind: &str, seed: u64) -> DatasetSpec {
    match kind {
        "grid25" => DatasetSpec::grid25(seed),
        "longtail_mixture" => DatasetSpec::longtail(seed),
        "shifted_mixture" => DatasetSpec::shifted(seed),
        _ => DatasetSpec::ring8(seed),
    }
}

fn load_spec(path: &PathBuf) -> Result<DatasetSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| icgan_core::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| icgan_core::Error::Config {
        what: "dataset spec",
        detail: e.to_string(),
    })
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.set)?;
        if let Some(kind) = &self.dataset {
            cfg.dataset = dataset_spec(kind, cfg.dataset.seed);
        }
        if let Some(s) = self.dataset_seed {
            cfg.dataset.seed = s;
        }
        let t = &mut cfg.train;
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { t.$field = v; })*};
        }
        set!(
            seed,
            steps,
            k,
            batch_size,
            g_lr,
            d_lr,
            d_updates,
            loss,
            conditioning
        );
        if self.class_balance_temperature.is_some() {
            t.class_balance_temperature = self.class_balance_temperature;
        }
        t.class_conditional |= self.class_conditional;
        t.flip_augmentation |= self.flip_augmentation;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        self.eval.apply(&mut cfg.eval);
        Ok(cfg)
    }
}

fn print_line(line: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(icgan_core::Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    print_line(&serde_json::to_string_pretty(value)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = a.experiment.resolve()?;
            let run = cmd_train(&cfg)?;
            eprintln!("checkpoint: {}", run.checkpoint_path.display());
            print_json(&run.report)
        }
        Command::Eval(a) => {
            let mut spec = EvalSpec::default();
            a.eval.apply(&mut spec);
            let reference = a.reference.as_ref().map(load_spec).transpose()?;
            let report = cmd_eval(&a.checkpoint, &spec, reference.as_ref(), a.out.as_deref())?;
            print_json(&report)
        }
        Command::Ablate(a) => {
            let cfg = a.experiment.resolve()?;
            let grid = AblationGrid {
                n_instances: a.grid_n,
                k: a.grid_k,
                seeds: a.seeds,
            };
            let (path, records) = cmd_ablate(&cfg, &grid)?;
            eprintln!("records: {}", path.display());
            for r in &records {
                print_line(&serde_json::to_string(r)?)?;
            }
            Ok(())
        }
        Command::Transfer(a) => {
            let mut spec = EvalSpec::default();
            a.eval.apply(&mut spec);
            let mut target = match &a.target {
                Some(p) => load_spec(p)?,
                None => DatasetSpec::shifted(0),
            };
            if let Some(s) = a.target_seed {
                target.seed = s;
            }
            let report = cmd_transfer(&a.checkpoint, &target, &spec, a.out.as_deref())?;
            print_json(&report)
        }
        Command::MakeDataset(a) => {
            let spec = match &a.spec {
                Some(p) => load_spec(p)?,
                None => dataset_spec(&a.kind, a.seed),
            };
            let spec = apply_overrides(&spec, &a.set)?;
            let ds = cmd_make_dataset(&spec, &a.out, a.binary)?;
            eprintln!("wrote {} samples to {}", ds.len(), a.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
