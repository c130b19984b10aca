//! CAggNet and the U-Net baseline assembled from [`crate::blocks`].

mod checkpoint;
mod config;

pub use checkpoint::{CheckpointManifest, TensorEntry};
pub use config::{Arch, ModelConfig, UpsampleMode};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ForwardCtx, Mode, NodeId};
use crate::blocks::{cam_forward, conv_block_forward, CamNode, Conv2dParams, ConvBlock, WamHead};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// One aggregation node and the grid coordinates `(level, column)` it reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CamStep {
    pub level: usize,
    pub column: usize,
    pub same: (usize, usize),
    pub above: Option<(usize, usize)>,
    pub below: Option<(usize, usize)>,
}

/// Column-major, top-down order: node `(i, j)` reads `(i, j−1)`, the
/// freshly computed `(i−1, j)` and the previous column's `(i+1, j−1)`.
/// Verifies that every input is produced strictly earlier.
pub fn caggnet_schedule(levels: usize, columns: usize) -> Result<Vec<CamStep>> {
    let mut done = vec![vec![false; columns + 1]; levels];
    for row in done.iter_mut() {
        row[0] = true;
    }
    let mut steps = Vec::with_capacity(levels * columns);
    for j in 1..=columns {
        for i in 0..levels {
            let step = CamStep {
                level: i,
                column: j,
                same: (i, j - 1),
                above: (i > 0).then(|| (i - 1, j)),
                below: (i + 1 < levels).then(|| (i + 1, j - 1)),
            };
            for (li, lj) in [Some(step.same), step.above, step.below].into_iter().flatten() {
                if !done[li][lj] {
                    return Err(Error::Config(format!(
                        "schedule reads X[{li}][{lj}] before it is computed (node {i},{j})"
                    )));
                }
            }
            done[i][j] = true;
            steps.push(step);
        }
    }
    Ok(steps)
}

#[derive(Clone, Debug, PartialEq)]
enum Network {
    CAggNet {
        encoder: Vec<ConvBlock>,
        schedule: Vec<CamStep>,
        nodes: Vec<CamNode>,
        wam: WamHead,
    },
    UNet {
        encoder: Vec<ConvBlock>,
        /// `decoder[i]` produces level `i`, for `i < L−1`.
        decoder: Vec<ConvBlock>,
        head: Conv2dParams,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    cfg: ModelConfig,
    pub store: ParamStore<T>,
    net: Network,
}

fn build_encoder<T: Scalar>(
    cfg: &ModelConfig,
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ConvBlock>> {
    (0..cfg.levels)
        .map(|i| {
            let c_in = if i == 0 { cfg.in_channels } else { cfg.width(i - 1) };
            ConvBlock::register(store, &format!("enc{i}"), c_in, cfg.width(i), cfg.bn(), rng)
        })
        .collect()
}

pub fn build_caggnet<T: Scalar>(cfg: &ModelConfig) -> Result<Model<T>> {
    let cfg = ModelConfig {
        arch: Arch::Caggnet,
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let encoder = build_encoder(&cfg, &mut store, &mut rng)?;
    let schedule = caggnet_schedule(cfg.levels, cfg.columns)?;
    let nodes = schedule
        .iter()
        .map(|s| {
            CamNode::register(
                &mut store,
                &format!("cam{}_{}", s.level, s.column),
                cfg.width(s.level),
                s.above.map(|(l, _)| cfg.width(l)),
                s.below.map(|(l, _)| cfg.width(l)),
                cfg.bn(),
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let wam = WamHead::register(&mut store, "wam", &cfg.widths(), cfg.wab_reduction, &mut rng)?;
    Ok(Model {
        cfg,
        store,
        net: Network::CAggNet {
            encoder,
            schedule,
            nodes,
            wam,
        },
    })
}

pub fn build_unet<T: Scalar>(cfg: &ModelConfig) -> Result<Model<T>> {
    let cfg = ModelConfig {
        arch: Arch::Unet,
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let encoder = build_encoder(&cfg, &mut store, &mut rng)?;
    let decoder = (0..cfg.levels - 1)
        .rev()
        .map(|i| {
            ConvBlock::register(
                &mut store,
                &format!("dec{i}"),
                cfg.width(i) + cfg.width(i + 1),
                cfg.width(i),
                cfg.bn(),
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .rev()
        .collect();
    let head = Conv2dParams::register(&mut store, "head", cfg.width(0), 1, 1, &mut rng)?;
    Ok(Model {
        cfg,
        store,
        net: Network::UNet { encoder, decoder, head },
    })
}

pub fn build<T: Scalar>(cfg: &ModelConfig) -> Result<Model<T>> {
    match cfg.arch {
        Arch::Caggnet => build_caggnet(cfg),
        Arch::Unet => build_unet(cfg),
    }
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn encoder(&self) -> &[ConvBlock] {
        match &self.net {
            Network::CAggNet { encoder, .. } | Network::UNet { encoder, .. } => encoder,
        }
    }

    /// Aggregation nodes in schedule order (empty for U-Net).
    pub fn cam_nodes(&self) -> &[CamNode] {
        match &self.net {
            Network::CAggNet { nodes, .. } => nodes,
            Network::UNet { .. } => &[],
        }
    }

    pub fn schedule(&self) -> &[CamStep] {
        match &self.net {
            Network::CAggNet { schedule, .. } => schedule,
            Network::UNet { .. } => &[],
        }
    }

    pub fn wam(&self) -> Option<&WamHead> {
        match &self.net {
            Network::CAggNet { wam, .. } => Some(wam),
            Network::UNet { .. } => None,
        }
    }

    pub fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        let m = self.cfg.spatial_multiple();
        if s.c != self.cfg.in_channels {
            return Err(Error::InvalidShape {
                op: "forward",
                detail: format!("input {s} has {} channels, model expects {}", s.c, self.cfg.in_channels),
            });
        }
        if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
            return Err(Error::InvalidShape {
                op: "forward",
                detail: format!(
                    "input {}x{} is not a multiple of {m} (required for {} levels)",
                    s.h, s.w, self.cfg.levels
                ),
            });
        }
        Ok(())
    }

    /// Records the network on `ctx.tape` and returns the probability map node.
    pub fn forward(&self, ctx: &mut ForwardCtx<'_, T>, x: &Tensor4<T>) -> Result<NodeId> {
        self.check_input(x)?;
        let input = ctx.input(x.clone());
        let mut column0 = Vec::with_capacity(self.cfg.levels);
        for (i, block) in self.encoder().iter().enumerate() {
            let src = if i == 0 {
                input
            } else {
                ctx.tape.maxpool2(column0[i - 1])?
            };
            column0.push(conv_block_forward(ctx, src, block)?);
        }
        match &self.net {
            Network::CAggNet {
                schedule, nodes, wam, ..
            } => {
                let mut grid = vec![vec![None; self.cfg.columns + 1]; self.cfg.levels];
                for (i, &f) in column0.iter().enumerate() {
                    grid[i][0] = Some(f);
                }
                let at = |g: &Vec<Vec<Option<NodeId>>>, (i, j): (usize, usize)| {
                    g[i][j].ok_or_else(|| Error::Config(format!("X[{i}][{j}] missing")))
                };
                for (step, node) in schedule.iter().zip(nodes) {
                    let same = at(&grid, step.same)?;
                    let above = step.above.map(|c| at(&grid, c)).transpose()?;
                    let below = step.below.map(|c| at(&grid, c)).transpose()?;
                    grid[step.level][step.column] = Some(cam_forward(ctx, same, above, below, node)?);
                }
                let last = (0..self.cfg.levels)
                    .map(|i| at(&grid, (i, self.cfg.columns)))
                    .collect::<Result<Vec<_>>>()?;
                wam.forward(ctx, &last)
            }
            Network::UNet { decoder, head, .. } => {
                let mut d = column0[self.cfg.levels - 1];
                for i in (0..self.cfg.levels - 1).rev() {
                    let up = ctx.tape.upsample_nearest2(d)?;
                    let cat = ctx.tape.concat_channels(&[column0[i], up])?;
                    d = conv_block_forward(ctx, cat, &decoder[i])?;
                }
                let logits = head.forward(ctx, d)?;
                ctx.tape.sigmoid(logits)
            }
        }
    }

    /// Eval-mode probability map.
    pub fn predict(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut ctx = ForwardCtx::new(&self.store, Mode::Eval);
        let out = self.forward(&mut ctx, x)?;
        Ok(ctx.tape.value(out)?.clone())
    }

    /// Converts parameters and buffers to another precision.
    pub fn cast<U: Scalar>(&self) -> Result<Model<U>> {
        Ok(Model {
            cfg: self.cfg.clone(),
            store: self.store.cast()?,
            net: self.net.clone(),
        })
    }
}
