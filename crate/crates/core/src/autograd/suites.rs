//! Finite-difference suites behind `gradcheck --scope`.
//!
//! Every check differentiates `sum(out ⊙ R)` for a fixed random `R`, so
//! each output coordinate contributes a distinct weight. Inputs to ReLU
//! and max-pool are drawn away from their kinks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{finite_diff_check, CheckReport, CustomOp, ForwardCtx, GradCheckConfig, NodeId};
use crate::blocks::{cam_forward, conv_block_forward, wab_forward, BnSettings, CamNode, ConvBlock, WabParams, WamHead};
use crate::error::Result;
use crate::models::{build_caggnet, build_unet, Arch, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Shape4, Tensor4};
use crate::train::{FocalLossConfig, Loss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Ops,
    Blocks,
    Model,
}

fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
    Shape4::new(n, c, h, w).expect("static shape")
}

struct Inputs {
    rng: ChaCha8Rng,
}

impl Inputs {
    fn new(seed: u64) -> Self {
        Inputs {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: Shape4, lo: f64, hi: f64) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_, _, _, _| self.rng.random_range(lo..hi)).expect("finite")
    }

    /// Values with magnitude in [0.1, 1], clear of the ReLU kink.
    fn signed_away_from_zero(&mut self, shape: Shape4) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_, _, _, _| {
            let m = self.rng.random_range(0.1..1.0);
            if self.rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .expect("finite")
    }

    /// Distinct values spaced 0.05 apart in random order, so every
    /// max-pool window has a clear winner.
    fn distinct(&mut self, shape: Shape4) -> Tensor4<f64> {
        let mut v: Vec<f64> = (0..shape.numel()).map(|i| i as f64 * 0.05 - 1.0).collect();
        use rand::seq::SliceRandom;
        v.shuffle(&mut self.rng);
        Tensor4::from_vec(shape, v).expect("finite")
    }
}

/// `sum(out ⊙ r)` with `r` a constant leaf.
fn weighted_sum(ctx: &mut ForwardCtx<f64>, out: NodeId, r: &Tensor4<f64>) -> Result<NodeId> {
    let rid = ctx.input(r.clone());
    let p = ctx.tape.mul(out, rid)?;
    ctx.tape.sum(p)
}

fn store_of(entries: Vec<(&str, Tensor4<f64>)>) -> Result<ParamStore<f64>> {
    let mut s = ParamStore::new();
    for (k, v) in entries {
        s.insert_param(k, v)?;
    }
    Ok(s)
}

fn check<F>(
    name: &str,
    store: &ParamStore<f64>,
    out_shape: Shape4,
    seed: u64,
    cfg: &GradCheckConfig,
    f: F,
) -> Result<CheckReport>
where
    F: Fn(&mut ForwardCtx<f64>) -> Result<NodeId>,
{
    let r = Inputs::new(seed ^ 0x5eed).uniform(out_shape, -1.0, 1.0);
    finite_diff_check(
        name,
        store,
        |ctx| {
            let out = f(ctx)?;
            weighted_sum(ctx, out, &r)
        },
        cfg,
    )
}

pub fn ops_suite(cfg: &GradCheckConfig) -> Result<Vec<CheckReport>> {
    let mut g = Inputs::new(cfg.seed);
    let mut out = Vec::new();
    let s = sh(2, 3, 4, 4);

    let st = store_of(vec![("a", g.uniform(s, -1.0, 1.0)), ("b", g.uniform(s, -1.0, 1.0))])?;
    out.push(check("add", &st, s, 1, cfg, |c| {
        let (a, b) = (c.param("a")?, c.param("b")?);
        c.tape.add(a, b)
    })?);
    out.push(check("mul", &st, s, 2, cfg, |c| {
        let (a, b) = (c.param("a")?, c.param("b")?);
        c.tape.mul(a, b)
    })?);
    out.push(check("scale", &st, s, 3, cfg, |c| {
        let a = c.param("a")?;
        c.tape.scale(a, -1.7)
    })?);
    out.push(check("sum", &st, Shape4::scalar(), 4, cfg, |c| {
        let a = c.param("a")?;
        c.tape.sum(a)
    })?);
    out.push(check("mean", &st, Shape4::scalar(), 5, cfg, |c| {
        let a = c.param("a")?;
        c.tape.mean(a)
    })?);

    let st = store_of(vec![
        ("a", g.uniform(sh(2, 2, 3, 3), -1.0, 1.0)),
        ("b", g.uniform(sh(2, 3, 3, 3), -1.0, 1.0)),
    ])?;
    out.push(check("concat_channels", &st, sh(2, 7, 3, 3), 6, cfg, |c| {
        let (a, b) = (c.param("a")?, c.param("b")?);
        c.tape.concat_channels(&[a, b, a])
    })?);
    let st = store_of(vec![
        ("x", g.uniform(s, -1.0, 1.0)),
        ("w", g.uniform(sh(2, 3, 1, 1), 0.1, 1.0)),
    ])?;
    out.push(check("channel_scale", &st, s, 7, cfg, |c| {
        let (x, w) = (c.param("x")?, c.param("w")?);
        c.tape.channel_scale(x, w)
    })?);

    for k in [3, 1] {
        let st = store_of(vec![
            ("x", g.uniform(sh(2, 3, 5, 4), -1.0, 1.0)),
            ("weight", g.uniform(sh(4, 3, k, k), -0.5, 0.5)),
            ("bias", g.uniform(sh(1, 4, 1, 1), -0.5, 0.5)),
        ])?;
        out.push(check(
            &format!("conv2d_{k}x{k}"),
            &st,
            sh(2, 4, 5, 4),
            8 + k as u64,
            cfg,
            |c| {
                let (x, w, b) = (c.param("x")?, c.param("weight")?, c.param("bias")?);
                c.tape.conv2d(x, w, b)
            },
        )?);
    }

    let st = store_of(vec![("x", g.distinct(sh(2, 2, 4, 6)))])?;
    out.push(check("maxpool2", &st, sh(2, 2, 2, 3), 12, cfg, |c| {
        let x = c.param("x")?;
        c.tape.maxpool2(x)
    })?);
    let st = store_of(vec![("x", g.uniform(sh(2, 2, 2, 3), -1.0, 1.0))])?;
    out.push(check("upsample_nearest2", &st, sh(2, 2, 4, 6), 13, cfg, |c| {
        let x = c.param("x")?;
        c.tape.upsample_nearest2(x)
    })?);

    let bn = store_of(vec![
        ("x", g.uniform(sh(3, 2, 3, 3), -2.0, 2.0)),
        ("gamma", g.uniform(sh(1, 2, 1, 1), 0.5, 1.5)),
        ("beta", g.uniform(sh(1, 2, 1, 1), -0.5, 0.5)),
    ])?;
    out.push(check("batchnorm_train", &bn, sh(3, 2, 3, 3), 14, cfg, |c| {
        let (x, ga, be) = (c.param("x")?, c.param("gamma")?, c.param("beta")?);
        Ok(c.tape.batchnorm_train(x, ga, be, 1e-5)?.0)
    })?);
    let mut bn_eval = bn.clone();
    bn_eval.insert_buffer("mean", g.uniform(sh(1, 2, 1, 1), -0.5, 0.5))?;
    bn_eval.insert_buffer("var", g.uniform(sh(1, 2, 1, 1), 0.5, 2.0))?;
    out.push(check("batchnorm_eval", &bn_eval, sh(3, 2, 3, 3), 15, cfg, |c| {
        let (x, ga, be) = (c.param("x")?, c.param("gamma")?, c.param("beta")?);
        let (m, v) = (c.buffer("mean")?, c.buffer("var")?);
        c.tape.batchnorm_eval(x, ga, be, m, v, 1e-5)
    })?);

    let st = store_of(vec![("x", g.signed_away_from_zero(s))])?;
    out.push(check("relu", &st, s, 16, cfg, |c| {
        let x = c.param("x")?;
        c.tape.relu(x)
    })?);
    let st = store_of(vec![("x", g.uniform(s, -4.0, 4.0))])?;
    out.push(check("sigmoid", &st, s, 17, cfg, |c| {
        let x = c.param("x")?;
        c.tape.sigmoid(x)
    })?);
    out.push(check("global_avg_pool", &st, sh(2, 3, 1, 1), 18, cfg, |c| {
        let x = c.param("x")?;
        c.tape.global_avg_pool(x)
    })?);

    let target = Tensor4::from_fn(
        sh(2, 1, 3, 3),
        |_, _, _, _| if g.rng.random_bool(0.4) { 1.0 } else { 0.0 },
    )?;
    let st = store_of(vec![("pred", g.uniform(sh(2, 1, 3, 3), 0.05, 0.95))])?;
    for (name, loss) in [
        ("bce_loss", Loss::bce()),
        ("focal_loss", Loss::Focal(FocalLossConfig::default())),
    ] {
        out.push(finite_diff_check(
            name,
            &st,
            |c| {
                let p = c.param("pred")?;
                loss.record(&mut c.tape, p, &target)
            },
            cfg,
        )?);
    }
    Ok(out)
}

pub fn blocks_suite(cfg: &GradCheckConfig) -> Result<Vec<CheckReport>> {
    let mut g = Inputs::new(cfg.seed.wrapping_add(100));
    let mut init = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(101));
    let bn = BnSettings::default();
    let mut out = Vec::new();

    let mut st = ParamStore::new();
    let block = ConvBlock::register(&mut st, "blk", 2, 3, bn, &mut init)?;
    st.insert_param("x", g.uniform(sh(2, 2, 4, 4), -1.0, 1.0))?;
    out.push(check("conv_block", &st, sh(2, 3, 4, 4), 20, cfg, |c| {
        let x = c.param("x")?;
        conv_block_forward(c, x, &block)
    })?);

    for (label, above, below) in [
        ("cam_top", false, true),
        ("cam_middle", true, true),
        ("cam_bottom", true, false),
    ] {
        let mut st = ParamStore::new();
        let node = CamNode::register(&mut st, "cam", 2, above.then_some(1), below.then_some(4), bn, &mut init)?;
        st.insert_param("same", g.uniform(sh(2, 2, 4, 4), -1.0, 1.0))?;
        if above {
            st.insert_param("above", g.uniform(sh(2, 1, 8, 8), -1.0, 1.0))?;
        }
        if below {
            st.insert_param("below", g.uniform(sh(2, 4, 2, 2), -1.0, 1.0))?;
        }
        out.push(check(label, &st, sh(2, 2, 4, 4), 21, cfg, |c| {
            let s = c.param("same")?;
            let a = if above { Some(c.param("above")?) } else { None };
            let b = if below { Some(c.param("below")?) } else { None };
            cam_forward(c, s, a, b, &node)
        })?);
    }

    let mut st = ParamStore::new();
    let wab = WabParams::register(&mut st, "wab", 4, 2, &mut init)?;
    st.insert_param("x", g.uniform(sh(2, 4, 3, 3), -1.0, 1.0))?;
    out.push(check("wab", &st, sh(2, 4, 3, 3), 22, cfg, |c| {
        let x = c.param("x")?;
        wab_forward(c, x, &wab)
    })?);

    let mut st = ParamStore::new();
    let head = WamHead::register(&mut st, "wam", &[2, 4], 2, &mut init)?;
    st.insert_param("f0", g.uniform(sh(2, 2, 4, 4), -1.0, 1.0))?;
    st.insert_param("f1", g.uniform(sh(2, 4, 2, 2), -1.0, 1.0))?;
    out.push(check("wam_head", &st, sh(2, 1, 4, 4), 23, cfg, |c| {
        let (a, b) = (c.param("f0")?, c.param("f1")?);
        head.forward(c, &[a, b])
    })?);
    Ok(out)
}

/// Focal-loss gradients of the tiny networks (L=2, J=1, C0=2) on 8×8 inputs.
pub fn model_suite(cfg: &GradCheckConfig) -> Result<Vec<CheckReport>> {
    let mut g = Inputs::new(cfg.seed.wrapping_add(200));
    let x = g.uniform(sh(2, 1, 8, 8), 0.0, 1.0);
    let y = Tensor4::from_fn(sh(2, 1, 8, 8), |_, _, r, c| {
        if (r as f64 - 3.5).hypot(c as f64 - 3.5) < 2.5 {
            1.0
        } else {
            0.0
        }
    })?;
    let loss = Loss::Focal(FocalLossConfig::default());
    let mut out = Vec::new();
    for arch in [Arch::Caggnet, Arch::Unet] {
        let mcfg = ModelConfig {
            seed: cfg.seed,
            ..ModelConfig::tiny(arch)
        };
        let model = match arch {
            Arch::Caggnet => build_caggnet::<f64>(&mcfg)?,
            Arch::Unet => build_unet::<f64>(&mcfg)?,
        };
        let name = match arch {
            Arch::Caggnet => "caggnet_tiny_focal",
            Arch::Unet => "unet_tiny_focal",
        };
        out.push(finite_diff_check(
            name,
            &model.store,
            |c| {
                let p = model.forward(c, &x)?;
                loss.record(&mut c.tape, p, &y)
            },
            cfg,
        )?);
    }
    Ok(out)
}

pub fn run_suite(scope: Scope, cfg: &GradCheckConfig) -> Result<Vec<CheckReport>> {
    match scope {
        Scope::Ops => ops_suite(cfg),
        Scope::Blocks => blocks_suite(cfg),
        Scope::Model => model_suite(cfg),
    }
}

/// `x²` whose backward claims `3x`: the negative control.
struct CorruptSquare;

impl CustomOp<f64> for CorruptSquare {
    fn name(&self) -> &str {
        "corrupt_square"
    }

    fn backward(
        &self,
        inputs: &[&Tensor4<f64>],
        _output: &Tensor4<f64>,
        grad_out: &Tensor4<f64>,
    ) -> Result<Vec<Option<Tensor4<f64>>>> {
        Ok(vec![Some(inputs[0].scale(3.0)?.mul(grad_out)?)])
    }
}

pub fn corrupted_backward_check(cfg: &GradCheckConfig) -> Result<CheckReport> {
    let mut g = Inputs::new(cfg.seed.wrapping_add(300));
    let s = sh(1, 2, 3, 3);
    let st = store_of(vec![("x", g.uniform(s, 0.2, 1.0))])?;
    check("corrupt_square", &st, s, 30, cfg, |c| {
        let x = c.param("x")?;
        let v = c.value(x)?.mul(c.value(x)?)?;
        c.tape.custom(&[x], v, CorruptSquare)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_all_pass(reps: &[CheckReport]) {
        for r in reps {
            assert!(r.passed, "{r:?}");
            assert!(r.coords_checked > 0);
        }
    }

    #[test]
    fn ops_pass() {
        let reps = ops_suite(&GradCheckConfig::default()).unwrap();
        assert_all_pass(&reps);
        for r in &reps {
            assert_eq!(r.kink_coords, 0, "{} crossed a kink", r.op);
        }
    }

    #[test]
    fn blocks_pass() {
        assert_all_pass(&blocks_suite(&GradCheckConfig::default()).unwrap());
    }

    #[test]
    fn negative_control_fails() {
        let r = corrupted_backward_check(&GradCheckConfig::default()).unwrap();
        assert!(!r.passed && r.max_rel_err > 0.1, "{r:?}");
    }
}
