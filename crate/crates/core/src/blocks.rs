//! Composite blocks: the conv-BN-ReLU pair, the crossing aggregation node,
//! the channel-attention gate and the multi-level fusion head.
//!
//! Blocks hold parameter *names*; values live in a [`ParamStore`] and are
//! bound to tape leaves through a [`ForwardCtx`] on every pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ForwardCtx, NodeId};
use crate::error::{Error, Result};
use crate::params::{BnUpdate, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2dParams {
    pub weight: String,
    pub bias: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl Conv2dParams {
    /// Registers a `k×k` convolution with weights drawn from
    /// `U(−1/√fan_in, 1/√fan_in)` and zero bias.
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if k != 1 && k != 3 {
            return Err(Error::Config(format!("{prefix}: kernel size {k} not in {{1, 3}}")));
        }
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        let weight = Tensor4::from_fn(Shape4::new(c_out, c_in, k, k)?, |_, _, _, _| {
            T::lit(rng.random_range(-bound..bound))
        })?;
        let p = Conv2dParams {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            c_in,
            c_out,
            k,
        };
        store.insert_param(&p.weight, weight)?;
        store.insert_param(&p.bias, Tensor4::zeros(Shape4::new(1, c_out, 1, 1)?)?)?;
        Ok(p)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut ForwardCtx<'_, T>, x: NodeId) -> Result<NodeId> {
        let w = ctx.param(&self.weight)?;
        let b = ctx.param(&self.bias)?;
        ctx.tape.conv2d(x, w, b)
    }

    pub fn names(&self) -> [&str; 2] {
        [&self.weight, &self.bias]
    }

    pub fn num_scalars(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k + self.c_out
    }

    pub fn fill<T: Scalar>(&self, store: &mut ParamStore<T>, weight: T, bias: T) -> Result<()> {
        store.set(&self.weight, Tensor4::full(store.value(&self.weight)?.shape(), weight)?)?;
        store.set(&self.bias, Tensor4::full(store.value(&self.bias)?.shape(), bias)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: String,
    pub beta: String,
    pub running_mean: String,
    pub running_var: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormState {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        eps: f64,
        momentum: f64,
    ) -> Result<Self> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Config(format!("{prefix}: batchnorm eps must be positive")));
        }
        let s = BatchNormState {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            running_mean: format!("{prefix}.running_mean"),
            running_var: format!("{prefix}.running_var"),
            channels,
            eps,
            momentum,
        };
        let shape = Shape4::new(1, channels, 1, 1)?;
        store.insert_param(&s.gamma, Tensor4::ones(shape)?)?;
        store.insert_param(&s.beta, Tensor4::zeros(shape)?)?;
        store.insert_buffer(&s.running_mean, Tensor4::zeros(shape)?)?;
        store.insert_buffer(&s.running_var, Tensor4::ones(shape)?)?;
        Ok(s)
    }

    /// Batch statistics in training mode (recording a running-stat update
    /// on `ctx`), running statistics in eval mode.
    pub fn forward<T: Scalar>(&self, ctx: &mut ForwardCtx<'_, T>, x: NodeId) -> Result<NodeId> {
        let gamma = ctx.param(&self.gamma)?;
        let beta = ctx.param(&self.beta)?;
        let eps = T::lit(self.eps);
        if ctx.mode().is_training() {
            let s = ctx.value(x)?.shape();
            let (y, batch_mean, batch_var) = ctx.tape.batchnorm_train(x, gamma, beta, eps)?;
            ctx.record_bn_update(BnUpdate {
                running_mean: self.running_mean.clone(),
                running_var: self.running_var.clone(),
                batch_mean,
                batch_var,
                count: s.n * s.plane(),
                momentum: T::lit(self.momentum),
            });
            Ok(y)
        } else {
            let mean = ctx.buffer(&self.running_mean)?;
            let var = ctx.buffer(&self.running_var)?;
            ctx.tape.batchnorm_eval(x, gamma, beta, mean, var, eps)
        }
    }

    pub fn num_scalars(&self) -> usize {
        2 * self.channels
    }
}

/// `relu(bn2(conv2(relu(bn1(conv1(x))))))` with 3×3 convolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv1: Conv2dParams,
    pub bn1: BatchNormState,
    pub conv2: Conv2dParams,
    pub bn2: BatchNormState,
}

#[derive(Clone, Copy, Debug)]
pub struct BnSettings {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnSettings {
    fn default() -> Self {
        BnSettings {
            eps: crate::nn_ops::DEFAULT_BN_EPS,
            momentum: crate::nn_ops::DEFAULT_BN_MOMENTUM,
        }
    }
}

impl ConvBlock {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        bn: BnSettings,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(ConvBlock {
            conv1: Conv2dParams::register(store, &format!("{prefix}.conv1"), c_in, c_out, 3, rng)?,
            bn1: BatchNormState::register(store, &format!("{prefix}.bn1"), c_out, bn.eps, bn.momentum)?,
            conv2: Conv2dParams::register(store, &format!("{prefix}.conv2"), c_out, c_out, 3, rng)?,
            bn2: BatchNormState::register(store, &format!("{prefix}.bn2"), c_out, bn.eps, bn.momentum)?,
        })
    }

    pub fn c_in(&self) -> usize {
        self.conv1.c_in
    }

    pub fn c_out(&self) -> usize {
        self.conv2.c_out
    }

    pub fn num_scalars(&self) -> usize {
        self.conv1.num_scalars() + self.bn1.num_scalars() + self.conv2.num_scalars() + self.bn2.num_scalars()
    }

    /// Zeroes both convolutions and both batchnorm shifts so the block
    /// outputs exactly zero for any input.
    pub fn zero_fill<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        self.conv1.fill(store, T::zero(), T::zero())?;
        self.conv2.fill(store, T::zero(), T::zero())?;
        for bn in [&self.bn1, &self.bn2] {
            store.set(&bn.beta, Tensor4::zeros(store.value(&bn.beta)?.shape())?)?;
        }
        Ok(())
    }
}

pub fn conv_block_forward<T: Scalar>(ctx: &mut ForwardCtx<'_, T>, x: NodeId, block: &ConvBlock) -> Result<NodeId> {
    let h = block.conv1.forward(ctx, x)?;
    let h = block.bn1.forward(ctx, h)?;
    let h = ctx.tape.relu(h)?;
    let h = block.conv2.forward(ctx, h)?;
    let h = block.bn2.forward(ctx, h)?;
    ctx.tape.relu(h)
}

/// Crossing aggregation node at one grid position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamNode {
    pub body: ConvBlock,
    /// Channels of the same-level predecessor (and of the output).
    pub width: usize,
    pub above_width: Option<usize>,
    pub below_width: Option<usize>,
}

impl CamNode {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        above_width: Option<usize>,
        below_width: Option<usize>,
        bn: BnSettings,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let z = width + above_width.unwrap_or(0) + below_width.unwrap_or(0);
        Ok(CamNode {
            body: ConvBlock::register(store, prefix, z, width, bn, rng)?,
            width,
            above_width,
            below_width,
        })
    }
}

fn require_spatial(op: &'static str, what: &str, got: Shape4, want: Shape4) -> Result<()> {
    if got.h != want.h || got.w != want.w || got.n != want.n {
        return Err(Error::InvalidShape {
            op,
            detail: format!("{what} has shape {got}, expected spatial/batch extents of {want}"),
        });
    }
    Ok(())
}

/// `x_same_prev + body(concat[x_same_prev, DS(x_above), US(x_below)])`,
/// omitting absent neighbours from the concatenation.
pub fn cam_forward<T: Scalar>(
    ctx: &mut ForwardCtx<'_, T>,
    x_same_prev: NodeId,
    x_above: Option<NodeId>,
    x_below: Option<NodeId>,
    node: &CamNode,
) -> Result<NodeId> {
    let base = ctx.value(x_same_prev)?.shape();
    let mut parts = vec![x_same_prev];
    if let Some(above) = x_above {
        let ds = ctx.tape.maxpool2(above)?;
        require_spatial("cam_forward", "down-sampled upper input", ctx.value(ds)?.shape(), base)?;
        parts.push(ds);
    }
    if let Some(below) = x_below {
        let us = ctx.tape.upsample_nearest2(below)?;
        require_spatial("cam_forward", "up-sampled lower input", ctx.value(us)?.shape(), base)?;
        parts.push(us);
    }
    let z = ctx.tape.concat_channels(&parts)?;
    let zc = ctx.value(z)?.shape().c;
    if zc != node.body.c_in() || base.c != node.body.c_out() {
        return Err(Error::InvalidShape {
            op: "cam_forward",
            detail: format!(
                "node expects {} concatenated / {} residual channels, got {zc} / {}",
                node.body.c_in(),
                node.body.c_out(),
                base.c
            ),
        });
    }
    let branch = conv_block_forward(ctx, z, &node.body)?;
    ctx.tape.add(x_same_prev, branch)
}

/// Channel attention: two 1×1 convolutions over the globally pooled input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WabParams {
    pub fc1: Conv2dParams,
    pub fc2: Conv2dParams,
    pub reduction: usize,
}

impl WabParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        reduction: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "{prefix}: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(WabParams {
            fc1: Conv2dParams::register(store, &format!("{prefix}.fc1"), channels, hidden, 1, rng)?,
            fc2: Conv2dParams::register(store, &format!("{prefix}.fc2"), hidden, channels, 1, rng)?,
            reduction,
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.fc1.num_scalars() + self.fc2.num_scalars()
    }
}

pub fn wab_forward<T: Scalar>(ctx: &mut ForwardCtx<'_, T>, x: NodeId, p: &WabParams) -> Result<NodeId> {
    let pooled = ctx.tape.global_avg_pool(x)?;
    let h = p.fc1.forward(ctx, pooled)?;
    let h = ctx.tape.relu(h)?;
    let h = p.fc2.forward(ctx, h)?;
    let weights = ctx.tape.sigmoid(h)?;
    ctx.tape.channel_scale(x, weights)
}

/// Bottom-up fusion of per-level attention outputs into a probability map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WamHead {
    /// One gate per level, level 0 (full resolution) first.
    pub wabs: Vec<WabParams>,
    /// `fuse[i]` merges level `i` with the upsampled level below it.
    pub fuse: Vec<Conv2dParams>,
    pub head: Conv2dParams,
}

impl WamHead {
    /// `widths[i]` is the channel count at level `i`.
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        widths: &[usize],
        reduction: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let wabs = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| WabParams::register(store, &format!("{prefix}.wab{i}"), c, reduction, rng))
            .collect::<Result<Vec<_>>>()?;
        let fuse = (0..widths.len().saturating_sub(1))
            .map(|i| {
                Conv2dParams::register(
                    store,
                    &format!("{prefix}.fuse{i}"),
                    widths[i] + widths[i + 1],
                    widths[i],
                    1,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2dParams::register(store, &format!("{prefix}.head"), widths[0], 1, 1, rng)?;
        Ok(WamHead { wabs, fuse, head })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut ForwardCtx<'_, T>, feats: &[NodeId]) -> Result<NodeId> {
        wam_head(ctx, feats, &self.wabs, &self.fuse, &self.head)
    }

    pub fn num_scalars(&self) -> usize {
        self.wabs.iter().map(WabParams::num_scalars).sum::<usize>()
            + self.fuse.iter().map(Conv2dParams::num_scalars).sum::<usize>()
            + self.head.num_scalars()
    }
}

/// `feats[i]` is the level-`i` feature map (spatial size `H / 2^i`).
pub fn wam_head<T: Scalar>(
    ctx: &mut ForwardCtx<'_, T>,
    feats: &[NodeId],
    wabs: &[WabParams],
    fuse_convs: &[Conv2dParams],
    head: &Conv2dParams,
) -> Result<NodeId> {
    let levels = feats.len();
    if levels == 0 || wabs.len() != levels || fuse_convs.len() + 1 != levels {
        return Err(Error::InvalidShape {
            op: "wam_head",
            detail: format!(
                "{levels} feature levels, {} gates, {} fusion convs",
                wabs.len(),
                fuse_convs.len()
            ),
        });
    }
    let gated = feats
        .iter()
        .zip(wabs)
        .map(|(&f, p)| wab_forward(ctx, f, p))
        .collect::<Result<Vec<_>>>()?;
    let mut running = gated[levels - 1];
    for i in (0..levels - 1).rev() {
        let up = ctx.tape.upsample_nearest2(running)?;
        require_spatial(
            "wam_head",
            "up-sampled lower level",
            ctx.value(up)?.shape(),
            ctx.value(gated[i])?.shape(),
        )?;
        let cat = ctx.tape.concat_channels(&[gated[i], up])?;
        let fused = fuse_convs[i].forward(ctx, cat)?;
        running = ctx.tape.relu(fused)?;
    }
    let logits = head.forward(ctx, running)?;
    ctx.tape.sigmoid(logits)
}
