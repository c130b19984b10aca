mod eval;
mod gradcheck;
mod synth;
mod train;

pub use eval::{eval, EvalArgs};
pub use gradcheck::{gradcheck, GradcheckArgs};
pub use synth::{synth, SynthArgs};
pub use train::{train, TrainArgs};

use std::path::Path;

use anyhow::{Context, Result};

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub(crate) fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
