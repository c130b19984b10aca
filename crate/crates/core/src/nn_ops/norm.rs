use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// What backward needs from a batchnorm forward.
#[derive(Clone, Debug)]
pub struct BatchNormSaved<T> {
    /// Normalized input `(x - mean) / sqrt(var + eps)`.
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormForward<T> {
    pub output: Tensor4<T>,
    pub saved: BatchNormSaved<T>,
    /// Batch mean and biased batch variance; empty in eval mode.
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

fn check_channels<T: Scalar>(x: &Tensor4<T>, v: &Tensor4<T>, what: &'static str) -> Result<()> {
    if v.shape() != Shape4::new(1, x.shape().c, 1, 1)? {
        return Err(Error::ShapeMismatch {
            op: what,
            left: x.shape(),
            right: v.shape(),
        });
    }
    Ok(())
}

fn normalize<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
    mean: &[T],
    inv_std: &[T],
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let s = x.shape();
    let mut xhat = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let (g, b) = (gamma.data()[c], beta.data()[c]);
            for &v in x.plane(n, c) {
                let h = (v - mean[c]) * inv_std[c];
                xhat.push(h);
                out.push(g * h + b);
            }
        }
    }
    Ok((
        Tensor4::from_kernel("batchnorm2d", s, out)?,
        Tensor4::from_kernel("batchnorm2d", s, xhat)?,
    ))
}

/// Training-mode batchnorm: normalizes with batch statistics over `(n, h, w)`.
pub fn batchnorm2d_train<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
    eps: T,
) -> Result<BatchNormForward<T>> {
    check_channels(x, gamma, "batchnorm2d gamma")?;
    check_channels(x, beta, "batchnorm2d beta")?;
    let s = x.shape();
    let count = T::from_usize(s.n * s.plane()).expect("count fits scalar");
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let sum = (0..s.n).fold(T::zero(), |acc, n| x.plane(n, c).iter().fold(acc, |a, &v| a + v));
        mean[c] = sum / count;
        let sq = (0..s.n).fold(T::zero(), |acc, n| {
            x.plane(n, c).iter().fold(acc, |a, &v| {
                let d = v - mean[c];
                a + d * d
            })
        });
        var[c] = sq / count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (output, xhat) = normalize(x, gamma, beta, &mean, &inv_std)?;
    Ok(BatchNormForward {
        output,
        saved: BatchNormSaved { xhat, inv_std },
        batch_mean: mean,
        batch_var: var,
    })
}

/// Eval-mode batchnorm with frozen running statistics.
pub fn batchnorm2d_eval<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
    running_mean: &Tensor4<T>,
    running_var: &Tensor4<T>,
    eps: T,
) -> Result<BatchNormForward<T>> {
    for (v, what) in [
        (gamma, "batchnorm2d gamma"),
        (beta, "batchnorm2d beta"),
        (running_mean, "batchnorm2d running_mean"),
        (running_var, "batchnorm2d running_var"),
    ] {
        check_channels(x, v, what)?;
    }
    let inv_std: Vec<T> = running_var
        .data()
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let (output, xhat) = normalize(x, gamma, beta, running_mean.data(), &inv_std)?;
    Ok(BatchNormForward {
        output,
        saved: BatchNormSaved { xhat, inv_std },
        batch_mean: Vec::new(),
        batch_var: Vec::new(),
    })
}

pub struct BatchNormGrads<T> {
    pub input: Tensor4<T>,
    pub gamma: Tensor4<T>,
    pub beta: Tensor4<T>,
}

/// Backward through batchnorm. In training mode the input gradient carries
/// the full dependence of the batch mean and variance on every input.
pub fn batchnorm2d_backward<T: Scalar>(
    saved: &BatchNormSaved<T>,
    gamma: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    training: bool,
) -> Result<BatchNormGrads<T>> {
    let s = grad_out.shape();
    let count = T::from_usize(s.n * s.plane()).expect("count fits scalar");
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            for (&g, &h) in grad_out.plane(n, c).iter().zip(saved.xhat.plane(n, c)) {
                dgamma[c] += g * h;
                dbeta[c] += g;
            }
        }
    }
    let mut dx = Vec::with_capacity(grad_out.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let scale = gamma.data()[c] * saved.inv_std[c];
            for (&g, &h) in grad_out.plane(n, c).iter().zip(saved.xhat.plane(n, c)) {
                let v = if training {
                    // sum(dxhat) = gamma*dbeta and sum(dxhat*xhat) = gamma*dgamma
                    scale * (g - dbeta[c] / count - h * dgamma[c] / count)
                } else {
                    scale * g
                };
                dx.push(v);
            }
        }
    }
    let vshape = Shape4::new(1, s.c, 1, 1)?;
    Ok(BatchNormGrads {
        input: Tensor4::from_kernel("batchnorm2d_backward", s, dx)?,
        gamma: Tensor4::from_kernel("batchnorm2d_backward", vshape, dgamma)?,
        beta: Tensor4::from_kernel("batchnorm2d_backward", vshape, dbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_c(v: Vec<f64>) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, v.len(), 1, 1).unwrap(), v).unwrap()
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor4::from_fn(
            Shape4::new(2, 2, 3, 3).unwrap(),
            |_, c, _, _| if c == 0 { 4.0 } else { -1.5 },
        )
        .unwrap();
        let f = batchnorm2d_train(&x, &vec_c(vec![1.0, 1.0]), &vec_c(vec![0.0, 0.0]), 1e-5).unwrap();
        assert!(f.output.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor4::from_fn(Shape4::new(2, 2, 2, 2).unwrap(), |n, c, h, w| {
            (n + c * 3 + h * 7 + w) as f64
        })
        .unwrap();
        let f = batchnorm2d_train(&x, &vec_c(vec![0.0, 0.0]), &vec_c(vec![0.5, -2.0]), 1e-5).unwrap();
        for n in 0..2 {
            assert!(f.output.plane(n, 0).iter().all(|&v| v == 0.5));
            assert!(f.output.plane(n, 1).iter().all(|&v| v == -2.0));
        }
    }

    #[test]
    fn two_values_by_hand() {
        // mean 2, biased variance 1: (x - 2) / sqrt(1 + 1e-5)
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 2).unwrap(), vec![1.0, 3.0]).unwrap();
        let f = batchnorm2d_train(&x, &vec_c(vec![1.0]), &vec_c(vec![0.0]), 1e-5).unwrap();
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((f.output.data()[0] + expected).abs() < 1e-12);
        assert!((f.output.data()[1] - expected).abs() < 1e-12);
        assert!((expected - 0.999995).abs() < 1e-6);
        assert_eq!(f.batch_mean, vec![2.0]);
        assert_eq!(f.batch_var, vec![1.0]);
    }

    #[test]
    fn training_output_is_standardized() {
        let x = Tensor4::from_fn(Shape4::new(3, 2, 4, 4).unwrap(), |n, c, h, w| {
            ((n * 13 + c * 7 + h * 5 + w * 3) % 11) as f64 * 0.7 - 2.0
        })
        .unwrap();
        let f = batchnorm2d_train(&x, &vec_c(vec![1.0, 1.0]), &vec_c(vec![0.0, 0.0]), 1e-5).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| f.output.plane(n, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 3, 2, 2).unwrap()).unwrap();
        assert!(batchnorm2d_train(&x, &vec_c(vec![1.0]), &vec_c(vec![0.0]), 1e-5).is_err());
    }

    #[test]
    fn eval_uses_running_statistics() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 2).unwrap(), vec![1.0, 3.0]).unwrap();
        let f = batchnorm2d_eval(
            &x,
            &vec_c(vec![2.0]),
            &vec_c(vec![1.0]),
            &vec_c(vec![1.0]),
            &vec_c(vec![4.0]),
            0.0,
        )
        .unwrap();
        assert_eq!(f.output.data(), &[1.0, 3.0]);
    }
}
