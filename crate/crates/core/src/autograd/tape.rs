//! Append-only operation record and reverse accumulation.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::nn_ops::{self, BatchNormSaved};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Backward rule for an operation defined outside this module.
///
/// The forward value is computed by the caller and handed to
/// [`Tape::custom`]; the tape only needs the vector-Jacobian product.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    /// Returns one gradient per input, `None` for inputs that receive none.
    fn backward(
        &self,
        inputs: &[&Tensor4<T>],
        output: &Tensor4<T>,
        grad_out: &Tensor4<T>,
    ) -> Result<Vec<Option<Tensor4<T>>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    ChannelScale(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Upsample2(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: BatchNormSaved<T>,
        training: bool,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    GlobalAvgPool(NodeId),
    Custom {
        inputs: Vec<NodeId>,
        rule: Box<dyn CustomOp<T>>,
    },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Concat(_) => "concat_channels",
            Op::ChannelScale(..) => "channel_scale",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Upsample2(_) => "upsample_nearest2",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Custom { rule, .. } => rule.name(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor4<T>,
    op: Op<T>,
}

/// Gradients keyed by node; a missing entry is a zero gradient.
pub struct GradStore<T> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor4<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// The gradient for `id`, materializing zeros for absent entries.
    pub fn get_or_zeros(&self, tape: &Tape<T>, id: NodeId) -> Result<Tensor4<T>> {
        match self.get(id) {
            Some(g) => Ok(g.clone()),
            None => Tensor4::zeros(tape.value(id)?.shape()),
        }
    }
}

#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor4<T>> {
        self.nodes.get(id.0).map(|n| &n.value).ok_or(Error::UnknownNode(id.0))
    }

    pub fn op_name(&self, id: NodeId) -> Result<&str> {
        self.nodes
            .get(id.0)
            .map(|n| n.op.name())
            .ok_or(Error::UnknownNode(id.0))
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, ids: &[NodeId]) -> Result<()> {
        match ids.iter().find(|id| id.0 >= self.nodes.len()) {
            Some(id) => Err(Error::UnknownNode(id.0)),
            None => Ok(()),
        }
    }

    pub fn leaf(&mut self, value: Tensor4<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let v = self.value(a)?.add(self.value(b)?)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let v = self.value(a)?.mul(self.value(b)?)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, k: T) -> Result<NodeId> {
        let v = self.value(a)?.scale(k)?;
        Ok(self.push(v, Op::Scale(a, k)))
    }

    /// Sum of all elements as a `(1,1,1,1)` tensor.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor4::scalar(self.value(a)?.sum())?;
        Ok(self.push(v, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = T::from_usize(self.value(a)?.len()).expect("length fits scalar");
        let s = self.sum(a)?;
        self.scale(s, T::one() / n)
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.check(parts)?;
        let values: Vec<&Tensor4<T>> = parts.iter().map(|&p| &self.nodes[p.0].value).collect();
        let v = Tensor4::concat_channels(&values)?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    pub fn channel_scale(&mut self, x: NodeId, weights: NodeId) -> Result<NodeId> {
        self.check(&[x, weights])?;
        let v = self.value(x)?.channel_scale(self.value(weights)?)?;
        Ok(self.push(v, Op::ChannelScale(x, weights)))
    }

    pub fn conv2d(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(&[x, weight, bias])?;
        let v = nn_ops::conv2d(self.value(x)?, self.value(weight)?, self.value(bias)?)?;
        Ok(self.push(v, Op::Conv2d { x, weight, bias }))
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (v, argmax) = nn_ops::maxpool2(self.value(x)?)?;
        Ok(self.push(v, Op::MaxPool2 { x, argmax }))
    }

    pub fn upsample_nearest2(&mut self, x: NodeId) -> Result<NodeId> {
        let v = nn_ops::upsample_nearest2(self.value(x)?)?;
        Ok(self.push(v, Op::Upsample2(x)))
    }

    /// Batch-statistics batchnorm. Returns the output node together with the
    /// batch mean and biased variance for running-statistic updates.
    pub fn batchnorm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: T,
    ) -> Result<(NodeId, Vec<T>, Vec<T>)> {
        self.check(&[x, gamma, beta])?;
        let fwd = nn_ops::batchnorm2d_train(self.value(x)?, self.value(gamma)?, self.value(beta)?, eps)?;
        let id = self.push(
            fwd.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved: fwd.saved,
                training: true,
            },
        );
        Ok((id, fwd.batch_mean, fwd.batch_var))
    }

    pub fn batchnorm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Tensor4<T>,
        running_var: &Tensor4<T>,
        eps: T,
    ) -> Result<NodeId> {
        self.check(&[x, gamma, beta])?;
        let fwd = nn_ops::batchnorm2d_eval(
            self.value(x)?,
            self.value(gamma)?,
            self.value(beta)?,
            running_mean,
            running_var,
            eps,
        )?;
        Ok(self.push(
            fwd.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved: fwd.saved,
                training: false,
            },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = nn_ops::relu(self.value(x)?)?;
        Ok(self.push(v, Op::Relu(x)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let v = nn_ops::sigmoid(self.value(x)?)?;
        Ok(self.push(v, Op::Sigmoid(x)))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let v = nn_ops::global_avg_pool(self.value(x)?)?;
        Ok(self.push(v, Op::GlobalAvgPool(x)))
    }

    /// Records an externally computed `output` with a custom backward rule.
    pub fn custom(
        &mut self,
        inputs: &[NodeId],
        output: Tensor4<T>,
        rule: impl CustomOp<T> + 'static,
    ) -> Result<NodeId> {
        self.check(inputs)?;
        output.check_finite(rule.name())?;
        Ok(self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule: Box::new(rule),
            },
        ))
    }

    /// Fingerprint of every piecewise decision taken in the forward pass:
    /// ReLU input signs and max-pool winners. Two evaluations with equal
    /// fingerprints lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.nodes[x.0].value.data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse accumulation from a scalar `loss`. Gradients from multiple
    /// paths are summed in reverse node order.
    pub fn backward(&self, loss: NodeId) -> Result<GradStore<T>> {
        let shape = self.value(loss)?.shape();
        if shape != Shape4::scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::ones(Shape4::scalar())?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            for (input, contribution) in self.node_backward(node, &g)? {
                accumulate(&mut grads, input, contribution)?;
            }
            grads[i] = Some(g);
        }
        Ok(GradStore { grads })
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor4<T>) -> Result<Vec<(NodeId, Tensor4<T>)>> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => vec![(*a, g.mul(val(*b))?), (*b, g.mul(val(*a))?)],
            Op::Scale(a, k) => vec![(*a, g.scale(*k)?)],
            Op::Sum(a) => vec![(*a, Tensor4::full(val(*a).shape(), g.data()[0])?)],
            Op::Concat(parts) => {
                let mut start = 0;
                let mut v = Vec::with_capacity(parts.len());
                for &p in parts {
                    let c = val(p).shape().c;
                    v.push((p, g.slice_channels(start..start + c)?));
                    start += c;
                }
                v
            }
            Op::ChannelScale(x, w) => {
                let xs = val(*x).shape();
                let dx = g.channel_scale(val(*w))?;
                let prod = g.mul(val(*x))?;
                let dw = Tensor4::from_fn(xs.with_hw(1, 1), |n, c, _, _| {
                    prod.plane(n, c).iter().fold(T::zero(), |a, &v| a + v)
                })?;
                vec![(*x, dx), (*w, dw)]
            }
            Op::Conv2d { x, weight, bias } => {
                let gr = nn_ops::conv2d_backward(val(*x), val(*weight), g)?;
                vec![(*x, gr.input), (*weight, gr.weight), (*bias, gr.bias)]
            }
            Op::MaxPool2 { x, argmax } => vec![(*x, nn_ops::maxpool2_backward(val(*x), argmax, g)?)],
            Op::Upsample2(x) => vec![(*x, nn_ops::upsample_nearest2_backward(g)?)],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                training,
            } => {
                let gr = nn_ops::batchnorm2d_backward(saved, val(*gamma), g, *training)?;
                vec![(*x, gr.input), (*gamma, gr.gamma), (*beta, gr.beta)]
            }
            Op::Relu(x) => vec![(*x, nn_ops::relu_backward(val(*x), g)?)],
            Op::Sigmoid(x) => vec![(*x, nn_ops::sigmoid_backward(&node.value, g)?)],
            Op::GlobalAvgPool(x) => vec![(*x, nn_ops::global_avg_pool_backward(val(*x), g)?)],
            Op::Custom { inputs, rule } => {
                let ins: Vec<&Tensor4<T>> = inputs.iter().map(|&i| val(i)).collect();
                let gs = rule.backward(&ins, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::InvalidShape {
                        op: "custom backward",
                        detail: format!(
                            "{} returned {} gradients for {} inputs",
                            rule.name(),
                            gs.len(),
                            inputs.len()
                        ),
                    });
                }
                inputs
                    .iter()
                    .zip(gs)
                    .filter_map(|(&i, gi)| gi.map(|t| (i, t)))
                    .collect()
            }
        };
        Ok(out)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor4<T>>], id: NodeId, g: Tensor4<T>) -> Result<()> {
    let slot = &mut grads[id.0];
    *slot = Some(match slot.take() {
        Some(existing) => existing.add(&g)?,
        None => g,
    });
    Ok(())
}
