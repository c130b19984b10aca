//! Pixel-wise binary cross entropy and focal loss, mean-reduced.

use serde::{Deserialize, Serialize};

use crate::autograd::{CustomOp, NodeId, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalLossConfig {
    pub alpha: f64,
    pub gamma: f64,
    #[serde(default = "default_clamp")]
    pub clamp_eps: f64,
}

fn default_clamp() -> f64 {
    DEFAULT_CLAMP_EPS
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        FocalLossConfig {
            alpha: 0.25,
            gamma: 2.0,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }
}

impl FocalLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("focal alpha {} not in (0, 1)", self.alpha)));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Config(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        validate_clamp(self.clamp_eps)
    }
}

fn validate_clamp(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1e-3) {
        return Err(Error::Config(format!("clamp_eps {eps} not in (0, 1e-3)")));
    }
    Ok(())
}

/// Which objective the training loop minimises.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Loss {
    Bce {
        #[serde(default = "default_clamp")]
        clamp_eps: f64,
    },
    Focal(FocalLossConfig),
}

impl Default for Loss {
    fn default() -> Self {
        Loss::Focal(FocalLossConfig::default())
    }
}

impl Loss {
    pub fn bce() -> Self {
        Loss::Bce {
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Loss::Bce { clamp_eps } => validate_clamp(*clamp_eps),
            Loss::Focal(cfg) => cfg.validate(),
        }
    }

    fn terms(&self) -> Terms {
        match *self {
            Loss::Bce { clamp_eps } => Terms {
                alpha: None,
                gamma: 0.0,
                clamp_eps,
            },
            Loss::Focal(c) => Terms {
                alpha: Some(c.alpha),
                gamma: c.gamma,
                clamp_eps: c.clamp_eps,
            },
        }
    }

    pub fn evaluate<T: Scalar>(&self, pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
        self.validate()?;
        self.terms().value(pred, target)
    }

    /// Appends the loss of `pred` against the constant `target` to `tape`.
    pub fn record<T: Scalar>(&self, tape: &mut Tape<T>, pred: NodeId, target: &Tensor4<T>) -> Result<NodeId> {
        self.validate()?;
        let terms = self.terms();
        let value = terms.value(tape.value(pred)?, target)?;
        tape.custom(
            &[pred],
            Tensor4::scalar(value)?,
            LossRule {
                terms,
                target: target.clone(),
            },
        )
    }
}

/// `−α_t (1 − P_t)^γ ln P_t`; plain BCE is `α_t = 1, γ = 0`.
#[derive(Clone, Copy, Debug)]
struct Terms {
    alpha: Option<f64>,
    gamma: f64,
    clamp_eps: f64,
}

impl Terms {
    fn check<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<()> {
        if pred.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "loss",
                left: pred.shape(),
                right: target.shape(),
            });
        }
        if let Some((index, &v)) = target
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| v != T::zero() && v != T::one())
        {
            return Err(Error::NonBinaryTarget {
                index,
                value: v.as_f64(),
            });
        }
        Ok(())
    }

    /// Per-pixel loss and its derivative with respect to the raw prediction.
    fn pixel<T: Scalar>(&self, p: T, y: T) -> (T, T) {
        let eps = T::lit(self.clamp_eps);
        let lo = eps;
        let hi = T::one() - eps;
        let clamped = p < lo || p > hi;
        let p = p.max(lo).min(hi);
        let positive = y == T::one();
        let pt = if positive { p } else { T::one() - p };
        let alpha_t = match self.alpha {
            Some(a) if positive => T::lit(a),
            Some(a) => T::lit(1.0 - a),
            None => T::one(),
        };
        let gamma = T::lit(self.gamma);
        let q = T::one() - pt;
        let ln = pt.ln();
        let modulator = if self.gamma == 0.0 { T::one() } else { q.powf(gamma) };
        let loss = -alpha_t * modulator * ln;
        if clamped {
            return (loss, T::zero());
        }
        let d_mod = if self.gamma == 0.0 {
            T::zero()
        } else {
            gamma * q.powf(gamma - T::one())
        };
        let d_pt = alpha_t * (d_mod * ln - modulator / pt);
        (loss, if positive { d_pt } else { -d_pt })
    }

    fn value<T: Scalar>(&self, pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
        Self::check(pred, target)?;
        let total: T = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| self.pixel(p, y).0)
            .sum();
        Ok(total / T::from_usize(pred.len()).expect("pixel count"))
    }
}

struct LossRule<T> {
    terms: Terms,
    target: Tensor4<T>,
}

impl<T: Scalar> CustomOp<T> for LossRule<T> {
    fn name(&self) -> &str {
        match self.terms.alpha {
            Some(_) => "focal_loss",
            None => "bce_loss",
        }
    }

    fn backward(
        &self,
        inputs: &[&Tensor4<T>],
        _output: &Tensor4<T>,
        grad_out: &Tensor4<T>,
    ) -> Result<Vec<Option<Tensor4<T>>>> {
        let pred = inputs[0];
        let scale = grad_out.data()[0] / T::from_usize(pred.len()).expect("pixel count");
        let data = pred
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&p, &y)| self.terms.pixel(p, y).1 * scale)
            .collect();
        Ok(vec![Some(Tensor4::from_kernel(self.name(), pred.shape(), data)?)])
    }
}

pub fn bce_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
    Loss::bce().evaluate(pred, target)
}

pub fn focal_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>, cfg: &FocalLossConfig) -> Result<T> {
    Loss::Focal(*cfg).evaluate(pred, target)
}
