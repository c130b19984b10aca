//! Central finite differences against tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::ctx::{ForwardCtx, Mode};
use crate::autograd::tape::NodeId;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Shape4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub op: String,
    /// Largest `|a − b| / max(1, |a|, |b|)` over coordinates that did not
    /// straddle a ReLU or max-pool kink.
    pub max_rel_err: f64,
    pub worst_coord: Option<String>,
    pub passed: bool,
    #[serde(skip)]
    pub coords_checked: usize,
    /// Coordinates whose ±eps evaluations crossed a kink; judged against
    /// the looser kink tolerance.
    #[serde(skip)]
    pub kink_coords: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    pub kink_tol: f64,
    /// Coordinates beyond this count are sampled without replacement.
    pub max_coords: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            tol: 1e-4,
            kink_tol: 1e-2,
            max_coords: 256,
            seed: 0,
            mode: Mode::Train,
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn evaluate<F>(store: &ParamStore<f64>, mode: Mode, f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut ForwardCtx<f64>) -> Result<NodeId>,
{
    let mut ctx = ForwardCtx::new(store, mode);
    let loss = f(&mut ctx)?;
    let v = ctx.value(loss)?;
    if v.shape() != Shape4::scalar() {
        return Err(Error::NonScalarLoss(v.shape()));
    }
    let value = v.data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite {
            op: "finite_diff_check".into(),
            index: 0,
        });
    }
    Ok((value, ctx.tape.kink_signature()))
}

/// Compares tape gradients of the scalar `f` with respect to every
/// parameter in `store` against central differences.
pub fn finite_diff_check<F>(name: &str, store: &ParamStore<f64>, f: F, cfg: &GradCheckConfig) -> Result<CheckReport>
where
    F: Fn(&mut ForwardCtx<f64>) -> Result<NodeId>,
{
    if !(1e-6..=1e-3).contains(&cfg.eps) {
        return Err(Error::Config(format!("gradcheck eps {} outside [1e-6, 1e-3]", cfg.eps)));
    }

    let mut ctx = ForwardCtx::new(store, cfg.mode);
    let loss = f(&mut ctx)?;
    let base_sig = ctx.tape.kink_signature();
    let grads = ctx.tape.backward(loss)?;
    let analytic: std::collections::BTreeMap<String, Vec<f64>> = ctx
        .param_grads(&grads)?
        .into_iter()
        .map(|(k, t)| (k, t.into_data()))
        .collect();
    drop(ctx);

    let coords: Vec<(String, usize)> = store
        .params()
        .flat_map(|(name, p)| (0..p.value.len()).map(move |i| (name.to_string(), i)))
        .collect();
    let chosen: Vec<usize> = if coords.len() <= cfg.max_coords {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = sample(&mut rng, coords.len(), cfg.max_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut work = store.clone();
    let mut report = CheckReport {
        op: name.to_string(),
        max_rel_err: 0.0,
        worst_coord: None,
        passed: true,
        coords_checked: 0,
        kink_coords: 0,
    };
    for &ci in &chosen {
        let (pname, idx) = &coords[ci];
        let a = analytic.get(pname).map_or(0.0, |g| g[*idx]);
        work.perturb(pname, *idx, cfg.eps)?;
        let (plus, sig_plus) = evaluate(&work, cfg.mode, &f)?;
        work.perturb(pname, *idx, -2.0 * cfg.eps)?;
        let (minus, sig_minus) = evaluate(&work, cfg.mode, &f)?;
        work.perturb(pname, *idx, cfg.eps)?;
        // restore exactly; the three additions may not round-trip
        work.set(pname, store.value(pname)?.clone())?;

        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let err = relative_error(a, numeric);
        report.coords_checked += 1;
        if sig_plus != base_sig || sig_minus != base_sig {
            report.kink_coords += 1;
            if err >= cfg.kink_tol {
                report.passed = false;
            }
            continue;
        }
        if err > report.max_rel_err || report.worst_coord.is_none() {
            report.max_rel_err = err;
            report.worst_coord = Some(format!("{pname}[{idx}]"));
        }
        if err >= cfg.tol {
            report.passed = false;
        }
    }
    Ok(report)
}
