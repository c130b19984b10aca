use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    x.map("relu", |v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes only where the input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_kernel("relu_backward", x.shape(), data)
}

/// Logistic function, evaluated without overflow and clamped to
/// `[ε, 1 − ε]` with machine ε so outputs stay strictly inside `(0, 1)`.
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    let one = T::one();
    let s = if v >= T::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    };
    s.max(T::epsilon()).min(one - T::epsilon())
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    x.map("sigmoid", sigmoid_scalar)
}

pub fn sigmoid_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor4::from_kernel("sigmoid_backward", output.shape(), data)
}

/// Mean over each `h × w` plane, giving shape `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = x.shape();
    let count = T::from_usize(s.plane()).expect("plane fits scalar");
    let data = (0..s.n * s.c)
        .map(|nc| x.plane(nc / s.c, nc % s.c).iter().fold(T::zero(), |a, &v| a + v) / count)
        .collect();
    Tensor4::from_kernel("global_avg_pool", s.with_hw(1, 1), data)
}

pub fn global_avg_pool_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = input.shape();
    if grad_out.shape() != s.with_hw(1, 1) {
        return Err(Error::ShapeMismatch {
            op: "global_avg_pool_backward",
            left: s.with_hw(1, 1),
            right: grad_out.shape(),
        });
    }
    let count = T::from_usize(s.plane()).expect("plane fits scalar");
    let mut data = Vec::with_capacity(input.len());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / count, s.plane()));
    }
    Tensor4::from_kernel("global_avg_pool_backward", s, data)
}
