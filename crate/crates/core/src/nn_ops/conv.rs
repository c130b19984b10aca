//! Same-size 2-D cross-correlation with `k ∈ {1, 3}`, stride 1.
//!
//! The optimized kernel walks `(c_in, ky, kx)` outermost and sweeps whole
//! output rows innermost, so each output element receives its bias and then
//! its products in exactly the order the naive reference uses. That makes
//! the two paths bit-identical, not just close.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Output channels processed together so one input row feeds several planes.
const CO_BLOCK: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
}

fn geometry<T: Scalar>(x: &Tensor4<T>, weight: &Tensor4<T>, bias: &Tensor4<T>) -> Result<Geometry> {
    let xs = x.shape();
    let ws = weight.shape();
    if ws.h != ws.w || !(ws.h == 1 || ws.h == 3) {
        return Err(Error::InvalidShape {
            op: "conv2d",
            detail: format!("kernel must be 1x1 or 3x3, weight shape is {ws}"),
        });
    }
    if ws.c != xs.c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: xs,
            right: ws,
        });
    }
    let bs = bias.shape();
    if bs != Shape4::new(1, ws.n, 1, 1)? {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: ws,
            right: bs,
        });
    }
    Ok(Geometry {
        n: xs.n,
        c_in: xs.c,
        c_out: ws.n,
        h: xs.h,
        w: xs.w,
        k: ws.h,
        pad: ws.h / 2,
    })
}

/// Output index range `[lo, hi)` for which `i + offset` stays inside `0..len`.
#[inline]
fn valid_range(offset: isize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

pub fn conv2d<T: Scalar>(x: &Tensor4<T>, weight: &Tensor4<T>, bias: &Tensor4<T>) -> Result<Tensor4<T>> {
    let g = geometry(x, weight, bias)?;
    let plane = g.h * g.w;
    let kk = g.k * g.k;
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![T::zero(); g.n * g.c_out * plane];

    out.par_chunks_mut(g.c_out * plane).enumerate().for_each(|(n, item)| {
        let x_item = &xd[n * g.c_in * plane..(n + 1) * g.c_in * plane];
        item.par_chunks_mut(CO_BLOCK * plane)
            .enumerate()
            .for_each(|(blk, planes)| {
                let co0 = blk * CO_BLOCK;
                let width = planes.len() / plane;
                for (j, p) in planes.chunks_mut(plane).enumerate() {
                    p.fill(bd[co0 + j]);
                }
                for ci in 0..g.c_in {
                    let x_plane = &x_item[ci * plane..(ci + 1) * plane];
                    for ky in 0..g.k {
                        let dy = ky as isize - g.pad as isize;
                        let (y0, y1) = valid_range(dy, g.h);
                        for kx in 0..g.k {
                            let dx = kx as isize - g.pad as isize;
                            let (x0, x1) = valid_range(dx, g.w);
                            if x0 >= x1 {
                                continue;
                            }
                            let mut wv = [T::zero(); CO_BLOCK];
                            for (j, slot) in wv.iter_mut().enumerate().take(width) {
                                *slot = wd[((co0 + j) * g.c_in + ci) * kk + ky * g.k + kx];
                            }
                            for y in y0..y1 {
                                let iy = (y as isize + dy) as usize;
                                let src = &x_plane[iy * g.w + (x0 as isize + dx) as usize..][..x1 - x0];
                                for (j, p) in planes.chunks_mut(plane).enumerate() {
                                    let dst = &mut p[y * g.w + x0..y * g.w + x1];
                                    let wj = wv[j];
                                    for (o, &s) in dst.iter_mut().zip(src) {
                                        *o += wj * s;
                                    }
                                }
                            }
                        }
                    }
                }
            });
    });
    Tensor4::from_kernel("conv2d", Shape4::new(g.n, g.c_out, g.h, g.w)?, out)
}

/// Five nested loops, no reordering. Reference for the optimized kernel.
pub fn conv2d_naive<T: Scalar>(x: &Tensor4<T>, weight: &Tensor4<T>, bias: &Tensor4<T>) -> Result<Tensor4<T>> {
    let g = geometry(x, weight, bias)?;
    let shape = Shape4::new(g.n, g.c_out, g.h, g.w)?;
    let pad = g.pad as isize;
    Tensor4::from_fn(shape, |n, co, y, xo| {
        let mut acc = bias.at(0, co, 0, 0);
        for ci in 0..g.c_in {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let iy = y as isize + ky as isize - pad;
                    let ix = xo as isize + kx as isize - pad;
                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                        continue;
                    }
                    acc += x.at(n, ci, iy as usize, ix as usize) * weight.at(co, ci, ky, kx);
                }
            }
        }
        acc
    })
}

pub struct Conv2dGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<Conv2dGrads<T>> {
    let bias_shape = Shape4::new(1, weight.shape().n, 1, 1)?;
    let g = geometry(x, weight, &Tensor4::zeros(bias_shape)?)?;
    let out_shape = Shape4::new(g.n, g.c_out, g.h, g.w)?;
    if grad_out.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: out_shape,
            right: grad_out.shape(),
        });
    }
    let plane = g.h * g.w;
    let kk = g.k * g.k;
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();

    // d input: scatter each output gradient back through the kernel.
    let mut dx = vec![T::zero(); x.len()];
    dx.par_chunks_mut(plane).enumerate().for_each(|(idx, dplane)| {
        let (n, ci) = (idx / g.c_in, idx % g.c_in);
        for co in 0..g.c_out {
            let gplane = &gd[(n * g.c_out + co) * plane..][..plane];
            for ky in 0..g.k {
                let dy = ky as isize - g.pad as isize;
                let (y0, y1) = valid_range(dy, g.h);
                for kx in 0..g.k {
                    let dxo = kx as isize - g.pad as isize;
                    let (x0, x1) = valid_range(dxo, g.w);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = wd[(co * g.c_in + ci) * kk + ky * g.k + kx];
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let src = &gplane[y * g.w + x0..y * g.w + x1];
                        let start = iy * g.w + (x0 as isize + dxo) as usize;
                        for (d, &s) in dplane[start..start + (x1 - x0)].iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });

    // d weight: correlate output gradients with shifted inputs.
    let mut dw = vec![T::zero(); weight.len()];
    dw.par_chunks_mut(g.c_in * kk).enumerate().for_each(|(co, dwc)| {
        for ci in 0..g.c_in {
            for ky in 0..g.k {
                let dy = ky as isize - g.pad as isize;
                let (y0, y1) = valid_range(dy, g.h);
                for kx in 0..g.k {
                    let dxo = kx as isize - g.pad as isize;
                    let (x0, x1) = valid_range(dxo, g.w);
                    let mut acc = T::zero();
                    for n in 0..g.n {
                        let gplane = &gd[(n * g.c_out + co) * plane..][..plane];
                        let xplane = &xd[(n * g.c_in + ci) * plane..][..plane];
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let grow = &gplane[y * g.w + x0..y * g.w + x1];
                            let start = iy * g.w + (x0 as isize + dxo) as usize;
                            for (&gv, &xv) in grow.iter().zip(&xplane[start..start + (x1 - x0)]) {
                                acc += gv * xv;
                            }
                        }
                    }
                    dwc[ci * kk + ky * g.k + kx] = acc;
                }
            }
        }
    });

    let db: Vec<T> = (0..g.c_out)
        .map(|co| {
            (0..g.n).fold(T::zero(), |acc, n| {
                gd[(n * g.c_out + co) * plane..][..plane]
                    .iter()
                    .fold(acc, |a, &v| a + v)
            })
        })
        .collect();

    Ok(Conv2dGrads {
        input: Tensor4::from_kernel("conv2d_backward", x.shape(), dx)?,
        weight: Tensor4::from_kernel("conv2d_backward", weight.shape(), dw)?,
        bias: Tensor4::from_kernel("conv2d_backward", bias_shape, db)?,
    })
}
