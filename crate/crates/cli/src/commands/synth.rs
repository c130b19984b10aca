use std::path::PathBuf;

use anyhow::{Context, Result};
use caggnet::data_io::{gen_synthetic, split, write_dataset, Dataset, SynthConfig};

use crate::EXIT_OK;

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator config; flags below override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Side length in pixels; must be a power of two.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub blobs_min: Option<usize>,
    #[arg(long)]
    pub blobs_max: Option<usize>,
    #[arg(long)]
    pub radius_min: Option<f64>,
    #[arg(long)]
    pub radius_max: Option<f64>,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of samples assigned to the train split; 1 puts all there.
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
}

pub fn synth(args: &SynthArgs) -> Result<u8> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(
        count,
        size,
        blobs_min,
        blobs_max,
        radius_min,
        radius_max,
        noise_sigma,
        seed
    );
    cfg.validate()?;
    let samples = gen_synthetic::<f32>(&cfg)?;
    let data = if args.train_fraction == 1.0 {
        Dataset {
            train: samples,
            val: Vec::new(),
        }
    } else {
        let (train, val) = split(samples, args.train_fraction, cfg.seed)?;
        Dataset { train, val }
    };
    write_dataset(&args.out, &data)?;
    println!(
        "wrote {} train / {} val samples to {}",
        data.train.len(),
        data.val.len(),
        args.out.display()
    );
    Ok(EXIT_OK)
}
