//! The epoch loop, metrics CSV, checkpoints and the routing sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use capsforge_core::data::{batches, substream, LabeledDataset, Stream};
use capsforge_core::optim::Optimizer;
use capsforge_core::train::{evaluate, Model};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::config::TrainConfig;
use crate::error::{write_atomic, Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    /// Accuracy of the predictions made before each step.
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// Wall time of the epoch including evaluation.
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{:.6},{:.4},{:.3}",
            self.epoch, self.train_loss, self.train_acc, self.test_loss, self.test_acc, self.seconds
        )
    }
}

/// Fixed layout under a run's output directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch-{epoch:03}.cpsn"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.cpsn")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        if command == "train" {
            self.root.join("manifest.json")
        } else {
            self.root.join(format!("manifest-{command}.json"))
        }
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub metrics: Vec<EpochMetrics>,
    pub steps: u64,
}

fn append(path: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Trains from a fresh initialisation. With `out`, streams `metrics.csv` and
/// writes snapshot and final checkpoints.
pub fn train(
    cfg: &TrainConfig,
    train_set: &LabeledDataset<f32>,
    test_set: &LabeledDataset<f32>,
    out: Option<&RunLayout>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::<f32>::init(&cfg.model, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer)?;
    if let Some(out) = out {
        std::fs::create_dir_all(out.checkpoints()).map_err(|e| Error::io(&out.checkpoints(), e))?;
        write_atomic(&out.metrics(), format!("{METRICS_HEADER}\n").as_bytes())?;
    }
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut rng = substream(cfg.seed, Stream::Shuffle, (epoch - 1) as u64);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in batches(train_set.len(), cfg.batch_size, &mut rng)? {
            let (images, labels) = train_set.gather(&idx);
            let out = model.train_step(&mut opt, &images, &labels, cfg.routing_check).map_err(|e| {
                log::error!("epoch {epoch}, step {}: {e}", opt.steps() + 1);
                e
            })?;
            loss_sum += out.loss as f64 * idx.len() as f64;
            correct += out.correct(&labels);
        }
        let eval = evaluate(&model, test_set, cfg.eval_batch_size)?;
        let n = train_set.len().max(1) as f64;
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_loss: eval.loss,
            test_acc: eval.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: train loss {:.4} acc {:.4}, test loss {:.4} acc {:.4} ({:.1}s)",
            cfg.epochs,
            row.train_loss,
            row.train_acc,
            row.test_loss,
            row.test_acc,
            row.seconds
        );
        if let Some(out) = out {
            append(&out.metrics(), &row.csv_row())?;
            let meta = CheckpointMeta {
                model: cfg.model.clone(),
                epoch,
                seed: cfg.seed,
                optimizer_steps: opt.steps(),
                next_shuffle_index: epoch as u64,
                train: Some(cfg.clone()),
            };
            if cfg.snapshot_epochs.contains(&epoch) {
                save_checkpoint(&out.checkpoint(epoch), &model, &meta)?;
            }
            if epoch == cfg.epochs {
                save_checkpoint(&out.final_checkpoint(), &model, &meta)?;
            }
        }
        metrics.push(row);
    }
    Ok(TrainOutcome {
        model,
        metrics,
        steps: opt.steps(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub routing_iterations: usize,
    pub test_acc: f64,
    pub seconds_per_epoch: f64,
}

pub const SWEEP_HEADER: &str = "r,test_acc,seconds_per_epoch";

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{:.4},{:.3}", r.routing_iterations, r.test_acc, r.seconds_per_epoch).unwrap();
    }
    s
}

/// One run per `r` with the same seed and data; each run's artifacts go to
/// `<out>/r<r>/` and the table to `<out>/routing_sweep.csv`.
pub fn routing_sweep(
    base: &TrainConfig,
    rs: &[usize],
    train_set: &LabeledDataset<f32>,
    test_set: &LabeledDataset<f32>,
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(rs.len());
    for &r in rs {
        let mut cfg = base.clone();
        cfg.set_routing_iterations(r)?;
        let layout = out.map(|o| RunLayout::new(o.join(format!("r{r}"))));
        log::info!("routing sweep: r = {r}");
        let result = train(&cfg, train_set, test_set, layout.as_ref())?;
        let last = result.metrics.last().expect("at least one epoch");
        let secs: f64 = result.metrics.iter().map(|m| m.seconds).sum();
        rows.push(SweepRow {
            routing_iterations: r,
            test_acc: last.test_acc,
            seconds_per_epoch: secs / result.metrics.len() as f64,
        });
        if let Some(o) = out {
            write_atomic(&o.join("routing_sweep.csv"), sweep_table(&rows).as_bytes())?;
        }
    }
    Ok(rows)
}
