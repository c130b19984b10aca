use std::path::PathBuf;

use anyhow::{Context, Result};
use caggnet::data_io::read_dataset;
use caggnet::models::build;
use caggnet::train::{train_loop, EarlyStopper};
use caggnet::{DType, Scalar};
use serde::Serialize;

use super::{mkdir, write_json, write_text};
use crate::config::{Overrides, RunConfig, ValSplit};
use crate::{EXIT_DIVERGED, EXIT_OK};

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// JSON run config; flags below override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; receives config.json, training_log.csv, best/, last/ and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Suppress the per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Serialize)]
struct Summary {
    epochs_run: usize,
    best_epoch: Option<usize>,
    best_val_iou: Option<f64>,
    stopped_early: bool,
    diverged_at: Option<usize>,
    num_params: usize,
}

pub fn train(args: &TrainArgs) -> Result<u8> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&args.overrides)?;
    cfg.validate()?;
    // the saved config must stay valid wherever it is reloaded from
    if let Some(d) = &cfg.dataset {
        cfg.dataset = Some(std::path::absolute(d).with_context(|| format!("resolving {}", d.display()))?);
    }
    match cfg.precision {
        DType::Single => run::<f32>(&cfg, args),
        DType::Double => run::<f64>(&cfg, args),
    }
}

fn run<T: Scalar>(cfg: &RunConfig, args: &TrainArgs) -> Result<u8> {
    let dataset = cfg.dataset.as_ref().expect("validated");
    let data = read_dataset::<T>(dataset, cfg.resize.map(|[h, w]| (h, w)))
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    let val = match cfg.val_split {
        ValSplit::Val => &data.val,
        ValSplit::Train => &data.train,
    };
    let mut model = build::<T>(&cfg.model)?;
    mkdir(&args.out)?;
    write_json(&args.out.join("config.json"), cfg)?;

    let quiet = args.quiet;
    let outcome = train_loop(
        &mut model,
        &data.train,
        val,
        &cfg.loss,
        &cfg.optimizer,
        EarlyStopper::new(cfg.train.patience),
        &cfg.train,
        |r| {
            if !quiet {
                eprintln!(
                    "epoch {:>4}  loss {:.6}  val_iou {:.4}  val_f1 {:.4}",
                    r.epoch, r.train_loss, r.val_iou, r.val_f1
                );
            }
        },
    )?;
    let log = &outcome.log;
    write_text(&args.out.join("training_log.csv"), &log.to_csv())?;
    outcome.best.save(&args.out.join("best"))?;
    model.save(&args.out.join("last"))?;
    write_json(
        &args.out.join("summary.json"),
        &Summary {
            epochs_run: log.records.len(),
            best_epoch: log.best_epoch,
            best_val_iou: log.best_val_iou,
            stopped_early: log.stopped_early,
            diverged_at: log.diverged_at,
            num_params: model.num_params(),
        },
    )?;
    if let Some(epoch) = log.diverged_at {
        eprintln!("training diverged at epoch {epoch}; last finite checkpoint kept");
        return Ok(EXIT_DIVERGED);
    }
    Ok(EXIT_OK)
}
