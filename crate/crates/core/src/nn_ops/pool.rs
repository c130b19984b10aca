use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// 2×2 max-pool with stride 2. Also returns, per output element, the flat
/// input index of the first maximum in scan order.
pub fn maxpool2<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::InvalidShape {
            op: "maxpool2",
            detail: format!("spatial size of {s} must be even"),
        });
    }
    let out_shape = s.with_hw(s.h / 2, s.w / 2);
    let (oh, ow) = (out_shape.h, out_shape.w);
    let xd = x.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for y in 0..oh {
            for xo in 0..ow {
                let mut best_idx = base + 2 * y * s.w + 2 * xo;
                let mut best = xd[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * s.w + 2 * xo + dx;
                    if xd[idx] > best {
                        best = xd[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor4::from_kernel("maxpool2", out_shape, out)?, argmax))
}

pub fn maxpool2_backward<T: Scalar>(input: &Tensor4<T>, argmax: &[usize], grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let mut dx = vec![T::zero(); input.len()];
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        dx[idx] += g;
    }
    Tensor4::from_kernel("maxpool2_backward", input.shape(), dx)
}

/// Nearest-neighbour 2× upsampling: each pixel becomes a 2×2 block.
pub fn upsample_nearest2<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = x.shape();
    let out_shape = s.with_hw(
        s.h.checked_mul(2).ok_or(Error::ShapeOverflow(s.dims()))?,
        s.w.checked_mul(2).ok_or(Error::ShapeOverflow(s.dims()))?,
    );
    out_shape.validate()?;
    let xd = x.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    for nc in 0..s.n * s.c {
        let src = &xd[nc * s.plane()..(nc + 1) * s.plane()];
        for y in 0..out_shape.h {
            let row = &src[(y / 2) * s.w..(y / 2 + 1) * s.w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    Tensor4::from_kernel("upsample_nearest2", out_shape, out)
}

/// Sums each 2×2 block of `grad_out` back onto its source pixel.
pub fn upsample_nearest2_backward<T: Scalar>(grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = grad_out.shape();
    let in_shape = s.with_hw(s.h / 2, s.w / 2);
    let gd = grad_out.data();
    let mut dx = Vec::with_capacity(in_shape.numel());
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for y in 0..in_shape.h {
            for x in 0..in_shape.w {
                let at = |dy: usize, dx: usize| gd[base + (2 * y + dy) * s.w + 2 * x + dx];
                dx.push(at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
            }
        }
    }
    Tensor4::from_kernel("upsample_nearest2_backward", in_shape, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use proptest::prelude::*;

    fn square(v: Vec<f64>, side: usize) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, side, side).unwrap(), v).unwrap()
    }

    #[test]
    fn maxpool_cases() {
        let (y, _) = maxpool2(&square(vec![1.0, 2.0, 3.0, 4.0], 2)).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let (y, _) = maxpool2(&square(vec![2.5; 16], 4)).unwrap();
        assert_eq!(y.data(), &[2.5; 4]);
        let ramp = square((0..16).map(|v| v as f64).collect(), 4);
        let (y, _) = maxpool2(&ramp).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn maxpool_rejects_odd_sizes() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 1, 3, 4).unwrap()).unwrap();
        assert!(maxpool2(&x).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first_in_scan_order() {
        let x = square(vec![1.0, 1.0, 1.0, 1.0], 2);
        let (_, argmax) = maxpool2(&x).unwrap();
        assert_eq!(argmax, vec![0]);
        let g = Tensor4::from_vec(Shape4::scalar(), vec![3.0]).unwrap();
        assert_eq!(
            maxpool2_backward(&x, &argmax, &g).unwrap().data(),
            &[3.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn upsample_cases() {
        let y = upsample_nearest2(&square(vec![1.0, 2.0, 3.0, 4.0], 2)).unwrap();
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        let c = upsample_nearest2(&square(vec![0.25; 4], 2)).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.25));
        let g = Tensor4::<f64>::ones(y.shape()).unwrap();
        assert_eq!(upsample_nearest2_backward(&g).unwrap().data(), &[4.0; 4]);
    }

    proptest! {
        #[test]
        fn pool_inverts_upsample(n in 1usize..3, c in 1usize..3, h in 1usize..5, w in 1usize..5,
                                 vals in proptest::collection::vec(-10.0f64..10.0, 64)) {
            let shape = Shape4::new(n, c, h, w).unwrap();
            let x = Tensor4::from_fn(shape, |a, b, y, z| vals[(a * 31 + b * 17 + y * 5 + z) % 64]).unwrap();
            let (back, _) = maxpool2(&upsample_nearest2(&x).unwrap()).unwrap();
            prop_assert_eq!(back, x);
        }
    }
}
