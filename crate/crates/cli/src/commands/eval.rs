use std::path::PathBuf;

use anyhow::{Context, Result};
use caggnet::data_io::{read_dataset, write_mask, Sample};
use caggnet::metrics::{binarize, MetricsReport, DEFAULT_THRESHOLD};
use caggnet::models::{CheckpointManifest, Model};
use caggnet::train::predict_all;
use caggnet::{DType, Scalar};

use super::{mkdir, write_json, write_text};
use crate::EXIT_OK;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Train,
    Val,
    All,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Checkpoint directory, e.g. `RUN/best`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for metrics.csv and metrics.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: EvalSplit,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Nearest-neighbour resize applied to every sample and mask.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub resize: Option<Vec<usize>>,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    /// Also write each thresholded prediction as `masks/ID.pgm`.
    #[arg(long)]
    pub dump_masks: bool,
}

pub fn eval(args: &EvalArgs) -> Result<u8> {
    let manifest = CheckpointManifest::read(&args.checkpoint)
        .with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?;
    match manifest.dtype {
        DType::Single => run::<f32>(args),
        DType::Double => run::<f64>(args),
    }
}

fn run<T: Scalar>(args: &EvalArgs) -> Result<u8> {
    let model = Model::<T>::load(&args.checkpoint)?;
    let resize = args.resize.as_ref().map(|v| (v[0], v[1]));
    let data = read_dataset::<T>(&args.dataset, resize)
        .with_context(|| format!("loading dataset {}", args.dataset.display()))?;
    let samples: Vec<Sample<T>> = match args.split {
        EvalSplit::Train => data.train,
        EvalSplit::Val => data.val,
        EvalSplit::All => data.train.into_iter().chain(data.val).collect(),
    };
    if samples.is_empty() {
        anyhow::bail!("the selected split is empty");
    }
    for s in &samples {
        model
            .check_input(&s.image)
            .with_context(|| format!("sample '{}' does not fit the model", s.id))?;
    }
    let preds = predict_all(&model, &samples, args.batch_size)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let masks: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
    let report = MetricsReport::evaluate(&ids, &preds, &masks, args.threshold)?;

    mkdir(&args.out)?;
    write_text(&args.out.join("metrics.csv"), &report.to_csv())?;
    write_json(&args.out.join("metrics.json"), &report)?;
    if args.dump_masks {
        let dir = args.out.join("masks");
        mkdir(&dir)?;
        for (id, p) in ids.iter().zip(&preds) {
            write_mask(&dir.join(format!("{id}.pgm")), &binarize(p, args.threshold)?)?;
        }
    }
    println!(
        "{} images  mean_iou {:.4}  mean_f1 {:.4}  pooled_iou {:.4}",
        report.per_image.len(),
        report.mean_iou,
        report.mean_f1,
        report.pooled.iou
    );
    Ok(EXIT_OK)
}
