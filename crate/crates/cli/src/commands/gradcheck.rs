use std::path::PathBuf;

use anyhow::Result;
use caggnet::autograd::suites::{corrupted_backward_check, run_suite, Scope};
use caggnet::autograd::{CheckReport, GradCheckConfig};

use super::{mkdir, write_json};
use crate::{EXIT_ERROR, EXIT_OK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ScopeArg {
    Ops,
    Blocks,
    Model,
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub scope: ScopeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step, in [1e-6, 1e-3].
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Coordinates checked per case; larger parameter sets are sampled.
    #[arg(long, default_value_t = 256)]
    pub max_coords: usize,
    /// Write the reports as `gradcheck.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Appends a check whose backward rule is wrong on purpose.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<u8> {
    let cfg = GradCheckConfig {
        eps: args.eps,
        tol: args.tol,
        max_coords: args.max_coords,
        seed: args.seed,
        ..Default::default()
    };
    let scope = match args.scope {
        ScopeArg::Ops => Scope::Ops,
        ScopeArg::Blocks => Scope::Blocks,
        ScopeArg::Model => Scope::Model,
    };
    let mut reports: Vec<CheckReport> = run_suite(scope, &cfg)?;
    if args.corrupt_backward {
        reports.push(corrupted_backward_check(&cfg)?);
    }
    println!("{:<22} {:>12}  {:<6} worst", "op", "max_rel_err", "result");
    for r in &reports {
        println!(
            "{:<22} {:>12.3e}  {:<6} {}",
            r.op,
            r.max_rel_err,
            if r.passed { "pass" } else { "FAIL" },
            r.worst_coord.as_deref().unwrap_or("-")
        );
    }
    if let Some(dir) = &args.out {
        mkdir(dir)?;
        write_json(&dir.join("gradcheck.json"), &reports)?;
    }
    Ok(if reports.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_ERROR
    })
}
