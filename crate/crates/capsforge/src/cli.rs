//! Command-line surface. `main` only parses and maps errors to exit codes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use capsforge_core::capsule::CapsNet;
use capsforge_core::data::Split;
use capsforge_core::optim::OptimizerKind;
use capsforge_core::train::{evaluate, Arch, Model};

use crate::checkpoint::{load_checkpoint, CheckpointMeta};
use crate::config::{DatasetKind, Scale, TrainConfig, DEFAULT_SEED};
use crate::datasets::{deformed_test_set, load_split, require_files, split_files};
use crate::error::{write_atomic, Error, Result};
use crate::export;
use crate::manifest::RunManifest;
use crate::trainer::{routing_sweep, sweep_table, train, RunLayout};

#[derive(Parser, Debug)]
#[command(name = "capsforge", version, about = "Train, evaluate and probe capsule networks")]
pub struct Cli {
    /// Dataset root; see the README for the expected layout.
    #[arg(long, global = true, env = "CAPSFORGE_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model; writes checkpoints/, metrics.csv and manifest.json.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a checkpoint, optionally on the
    /// deformed test set.
    Eval(EvalArgs),
    /// Train one CapsNet per routing iteration count.
    SweepRouting(SweepArgs),
    /// Reconstruction, perturbation, error-case, embedding and PCA artifacts.
    Export(ExportArgs),
    /// A 10×10 grid of deformed test images.
    DeformPreview(PreviewArgs),
}

#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    #[arg(long, value_enum, conflicts_with = "config")]
    pub dataset: Option<DatasetKind>,
    #[arg(long, value_enum, conflicts_with = "config")]
    pub arch: Option<ArchArg>,
    #[arg(long, value_enum, conflicts_with = "config")]
    pub scale: Option<Scale>,
    /// Resolved configuration to replay: a manifest.json or a bare config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the preset's training subset size.
    #[arg(long)]
    pub train_subset: Option<usize>,
    /// Override the preset's test subset size.
    #[arg(long)]
    pub test_subset: Option<usize>,
    /// Assert coupling and output-length invariants on every training batch.
    #[arg(long)]
    pub check_routing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub routing_iters: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Comma-separated routing iteration counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5",
          value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: Vec<u64>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ArchArg {
    Capsnet,
    Cnn,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug, Clone)]
pub struct CheckpointArgs {
    /// Output directory of a training run.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Explicit checkpoint; defaults to <run>/checkpoints/final.cpsn.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset to evaluate on; defaults to the one the checkpoint was trained on.
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Defaults to the checkpoint's training test subset.
    #[arg(long)]
    pub test_subset: Option<usize>,
    /// Where outputs go; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: CheckpointArgs,
    /// Also evaluate on the deformed test set.
    #[arg(long)]
    pub deform: bool,
    /// Seed of the deformation.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Cache of deformed sets; defaults to <data-dir>/deformed.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("artifact").required(true).multiple(true)
    .args(["reconstructions", "perturb", "errors", "embeddings"])))]
pub struct ExportArgs {
    #[command(flatten)]
    pub source: CheckpointArgs,
    /// Early checkpoint for the reconstruction comparison.
    #[arg(long)]
    pub early_checkpoint: Option<PathBuf>,
    /// Reconstruction grids of the first N test images.
    #[arg(long, value_name = "N")]
    pub reconstructions: Option<usize>,
    /// Perturbation sweep of one test sample.
    #[arg(long, value_name = "SAMPLE_IDX")]
    pub perturb: Option<usize>,
    /// The K most confident misclassifications.
    #[arg(long, value_name = "K")]
    pub errors: Option<usize>,
    /// Winning-capsule vectors of the first N test samples.
    #[arg(long, value_name = "N")]
    pub embeddings: Option<usize>,
    /// One embedding row per routing iteration.
    #[arg(long, requires = "embeddings")]
    pub per_iteration: bool,
    /// 3-component PCA of the exported embeddings.
    #[arg(long, requires = "embeddings")]
    pub pca: bool,
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    #[arg(long, value_enum, default_value = "mnist")]
    pub dataset: DatasetKind,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = "runs/deform-preview")]
    pub out: PathBuf,
}

fn args() -> Vec<String> {
    std::env::args().collect()
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let config = value.get("config").cloned().unwrap_or(value);
    Ok(serde_json::from_value(config)?)
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => {
                let arch = match self.arch.unwrap_or(ArchArg::Capsnet) {
                    ArchArg::Capsnet => Arch::CapsNet,
                    ArchArg::Cnn => Arch::Cnn,
                };
                TrainConfig::preset(
                    self.dataset.unwrap_or(DatasetKind::Mnist),
                    arch,
                    self.scale.unwrap_or(Scale::Full),
                )
            }
        };
        if let Some(e) = self.epochs {
            cfg.epochs = e as usize;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b as usize;
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Usage(format!("--lr must be positive, got {lr}")));
            }
            cfg.optimizer.learning_rate = lr;
        }
        if let Some(o) = self.optimizer {
            cfg.optimizer.kind = match o {
                OptimizerArg::Adam => OptimizerKind::Adam,
                OptimizerArg::Sgd => OptimizerKind::Sgd,
            };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.train_subset.is_some() {
            cfg.train_subset = self.train_subset;
        }
        if self.test_subset.is_some() {
            cfg.test_subset = self.test_subset;
        }
        if self.check_routing {
            cfg.routing_check = Some(1e-6);
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &TrainConfig, what: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            PathBuf::from("runs").join(format!("{}-{}-{what}", cfg.dataset.as_str(), cfg.arch().as_str()))
        })
    }
}

fn dataset_files(data_dir: &Path, kind: DatasetKind) -> Vec<PathBuf> {
    let mut files = split_files(data_dir, kind, Split::Train);
    files.extend(split_files(data_dir, kind, Split::Test));
    files
}

fn cmd_train(data_dir: &Path, a: &TrainArgs) -> Result<()> {
    let mut cfg = a.flags.resolve()?;
    if let Some(r) = a.routing_iters {
        cfg.set_routing_iterations(r as usize)
            .map_err(|_| Error::Usage("--routing-iters applies to --arch capsnet only".into()))?;
    }
    cfg.validate()?;
    let out = RunLayout::new(a.flags.out_dir(&cfg, "train"));
    let files = dataset_files(data_dir, cfg.dataset);
    require_files(&files)?;
    RunManifest::new("train", args(), cfg.seed, serde_json::to_value(&cfg)?, &files, &out.root)?
        .write(&out.manifest("train"))?;
    let train_set = load_split(data_dir, cfg.dataset, Split::Train, cfg.train_subset)?;
    let test_set = load_split(data_dir, cfg.dataset, Split::Test, cfg.test_subset)?;
    log::info!(
        "training {} on {} ({} train / {} test), {} epochs, batch {}",
        cfg.arch().as_str(),
        cfg.dataset.as_str(),
        train_set.len(),
        test_set.len(),
        cfg.epochs,
        cfg.batch_size
    );
    let outcome = train(&cfg, &train_set, &test_set, Some(&out))?;
    let last = outcome.metrics.last().expect("at least one epoch");
    println!("final test accuracy {:.4} after {} epochs", last.test_acc, last.epoch);
    println!("outputs in {}", out.root.display());
    Ok(())
}

fn cmd_sweep(data_dir: &Path, a: &SweepArgs) -> Result<()> {
    let cfg = a.flags.resolve()?;
    if cfg.arch() != Arch::CapsNet {
        return Err(Error::Usage("sweep-routing needs --arch capsnet".into()));
    }
    cfg.validate()?;
    let rs: Vec<usize> = a.iters.iter().map(|&r| r as usize).collect();
    let out = a.flags.out_dir(&cfg, "sweep");
    let files = dataset_files(data_dir, cfg.dataset);
    require_files(&files)?;
    let config = json!({ "base": cfg, "routing_iterations": rs });
    RunManifest::new("sweep-routing", args(), cfg.seed, config, &files, &out)?
        .write(&out.join("manifest.json"))?;
    let train_set = load_split(data_dir, cfg.dataset, Split::Train, cfg.train_subset)?;
    let test_set = load_split(data_dir, cfg.dataset, Split::Test, cfg.test_subset)?;
    let rows = routing_sweep(&cfg, &rs, &train_set, &test_set, Some(&out))?;
    print!("{}", sweep_table(&rows));
    Ok(())
}

/// Resolved checkpoint source: paths, loaded model and evaluation data.
struct Loaded {
    checkpoint: PathBuf,
    out: PathBuf,
    model: Model<f32>,
    meta: CheckpointMeta,
    dataset: DatasetKind,
    test_subset: Option<usize>,
}

impl CheckpointArgs {
    fn checkpoint_path(&self) -> Result<PathBuf> {
        match (&self.checkpoint, &self.run) {
            (Some(c), _) => Ok(c.clone()),
            (None, Some(r)) => Ok(RunLayout::new(r).final_checkpoint()),
            (None, None) => Err(Error::Usage("give --run or --checkpoint".into())),
        }
    }

    fn out_dir(&self, checkpoint: &Path) -> PathBuf {
        self.out.clone().or_else(|| self.run.clone()).unwrap_or_else(|| {
            // <run>/checkpoints/x.cpsn → <run>
            checkpoint
                .parent()
                .and_then(Path::parent)
                .map(Path::to_path_buf)
                .unwrap_or_default()
        })
    }

    fn load(&self) -> Result<Loaded> {
        let checkpoint = self.checkpoint_path()?;
        if !checkpoint.is_file() {
            return Err(Error::Missing(checkpoint));
        }
        let (model, meta) = load_checkpoint::<f32>(&checkpoint)?;
        let trained_on = meta.train.as_ref().map(|t| t.dataset);
        let dataset = self
            .dataset
            .or(trained_on)
            .ok_or_else(|| Error::Usage("checkpoint does not record its dataset; pass --dataset".into()))?;
        let (ch, hw) = dataset.image_dims();
        if model.config().input_shape() != [ch, hw, hw] {
            return Err(Error::Incompatible(format!(
                "checkpoint expects {:?} inputs, {} has [{ch}, {hw}, {hw}]",
                model.config().input_shape(),
                dataset.as_str()
            )));
        }
        let test_subset = self.test_subset.or_else(|| meta.train.as_ref().and_then(|t| t.test_subset));
        Ok(Loaded {
            out: self.out_dir(&checkpoint),
            checkpoint,
            model,
            meta,
            dataset,
            test_subset,
        })
    }
}

fn cmd_eval(data_dir: &Path, a: &EvalArgs) -> Result<()> {
    let l = a.source.load()?;
    let files = split_files(data_dir, l.dataset, Split::Test);
    require_files(&files)?;
    let cache = a.cache_dir.clone().unwrap_or_else(|| data_dir.join("deformed"));
    let config = json!({
        "checkpoint": l.checkpoint,
        "dataset": l.dataset,
        "test_subset": l.test_subset,
        "deform": a.deform,
        "deform_seed": a.seed,
        "cache_dir": cache,
    });
    let mut inputs = files.clone();
    inputs.push(l.checkpoint.clone());
    RunManifest::new("eval", args(), a.seed, config, &inputs, &l.out)?
        .write(&RunLayout::new(&l.out).manifest("eval"))?;
    let test = load_split(data_dir, l.dataset, Split::Test, l.test_subset)?;
    let batch = l.meta.train.as_ref().map_or(100, |t| t.eval_batch_size);
    let clean = evaluate(&l.model, &test, batch)?;
    write_atomic(&l.out.join("confusion.csv"), export::confusion_csv(&clean.confusion).as_bytes())?;
    println!(
        "clean accuracy {:.4} ({}/{})",
        clean.accuracy,
        clean.confusion.correct(),
        clean.confusion.total()
    );
    if a.deform {
        let deformed = deformed_test_set(&cache, &test, a.seed)?;
        let d = evaluate(&l.model, &deformed, batch)?;
        write_atomic(
            &l.out.join(format!("confusion-deformed-seed{}.csv", a.seed)),
            export::confusion_csv(&d.confusion).as_bytes(),
        )?;
        println!(
            "deformed accuracy {:.4} ({}/{}), seed {}",
            d.accuracy,
            d.confusion.correct(),
            d.confusion.total(),
            a.seed
        );
        println!("drop {:.2} points", (clean.accuracy - d.accuracy) * 100.0);
    }
    Ok(())
}

fn capsnet(model: Model<f32>, what: &Path) -> Result<CapsNet<f32>> {
    match model {
        Model::CapsNet { net, .. } => Ok(net),
        Model::Cnn(_) => Err(Error::Incompatible(format!(
            "{} holds a CNN; exports need a CapsNet",
            what.display()
        ))),
    }
}

fn cmd_export(data_dir: &Path, a: &ExportArgs) -> Result<()> {
    let l = a.source.load()?;
    let early_path = a.early_checkpoint.clone().unwrap_or_else(|| {
        let epoch = l.meta.train.as_ref().and_then(|t| t.snapshot_epochs.first().copied()).unwrap_or(2);
        l.checkpoint.with_file_name(format!("epoch-{epoch:03}.cpsn"))
    });
    if a.reconstructions.is_some() && !early_path.is_file() {
        return Err(Error::Missing(early_path));
    }
    let files = split_files(data_dir, l.dataset, Split::Test);
    require_files(&files)?;
    let mut inputs = files.clone();
    inputs.push(l.checkpoint.clone());
    if a.reconstructions.is_some() {
        inputs.push(early_path.clone());
    }
    let config = json!({
        "checkpoint": l.checkpoint,
        "early_checkpoint": a.reconstructions.map(|_| &early_path),
        "dataset": l.dataset,
        "test_subset": l.test_subset,
        "reconstructions": a.reconstructions,
        "perturb": a.perturb,
        "errors": a.errors,
        "embeddings": a.embeddings,
        "per_iteration": a.per_iteration,
        "pca": a.pca,
    });
    let layout = RunLayout::new(&l.out);
    RunManifest::new("export", args(), l.meta.seed, config, &inputs, &l.out)?.write(&layout.manifest("export"))?;
    let net = capsnet(l.model, &l.checkpoint)?;
    let test = load_split(data_dir, l.dataset, Split::Test, l.test_subset)?;
    let figures = layout.figures();
    if let Some(n) = a.reconstructions {
        let (early, _) = load_checkpoint::<f32>(&early_path)?;
        let early = capsnet(early, &early_path)?;
        let tag = early_path.file_stem().and_then(|s| s.to_str()).unwrap_or("early");
        for p in export::export_reconstructions(&early, tag, &net, &test, n, &figures)? {
            println!("wrote {}", p.display());
        }
    }
    if let Some(i) = a.perturb {
        println!("wrote {}", export::export_perturbation(&net, &test, i, &figures)?.display());
    }
    if let Some(k) = a.errors {
        let (p, found) = export::export_error_cases(&net, &test, k, &figures)?;
        println!("wrote {} ({found} cases)", p.display());
    }
    if let Some(n) = a.embeddings {
        let (p, rows) = export::export_embeddings(&net, &test, n, a.per_iteration, &layout.embeddings())?;
        println!("wrote {} ({} rows)", p.display(), rows.len());
        if a.pca {
            let (p, pca) = export::export_pca(&rows, &layout.embeddings())?;
            let total: f64 = pca.explained.iter().sum();
            println!("wrote {} (top 3 explain {:.4} of the variance)", p.display(), total);
        }
    }
    Ok(())
}

fn cmd_preview(data_dir: &Path, a: &PreviewArgs) -> Result<()> {
    let files = split_files(data_dir, a.dataset, Split::Test);
    require_files(&files)?;
    let config = json!({ "dataset": a.dataset, "seed": a.seed, "count": 100 });
    let layout = RunLayout::new(&a.out);
    RunManifest::new("deform-preview", args(), a.seed, config, &files, &a.out)?
        .write(&layout.manifest("deform-preview"))?;
    let test = load_split(data_dir, a.dataset, Split::Test, Some(100))?;
    let path = layout.figures().join(format!("deform-preview-seed{}.pgm", a.seed));
    println!("wrote {}", export::export_deform_preview(&test, a.seed, &path)?.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(&cli.data_dir, a),
        Command::Eval(a) => cmd_eval(&cli.data_dir, a),
        Command::SweepRouting(a) => cmd_sweep(&cli.data_dir, a),
        Command::Export(a) => cmd_export(&cli.data_dir, a),
        Command::DeformPreview(a) => cmd_preview(&cli.data_dir, a),
    }
}
