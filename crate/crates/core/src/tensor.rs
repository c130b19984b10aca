//! Dense batch-channel-height-width tensors.
//!
//! A [`Tensor4`] owns a contiguous row-major buffer over `(n, c, h, w)`.
//! Tensors are immutable values: every operation returns a fresh tensor and
//! rejects results containing NaN or infinity.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let shape = Shape4 { n, c, h, w };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<usize> {
        let dims = self.dims();
        if dims.contains(&0) {
            return Err(Error::ZeroExtent(dims));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::ShapeOverflow(dims))
    }

    pub const fn scalar() -> Self {
        Shape4 { n: 1, c: 1, h: 1, w: 1 }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Element count; only meaningful for validated shapes.
    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape4 { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Shape4 { h, w, ..self }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape4) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape4, value: T) -> Result<Self> {
        let len = shape.validate()?;
        let t = Tensor4 {
            shape,
            data: vec![value; len],
        };
        t.check_finite("full")?;
        Ok(t)
    }

    pub fn scalar(value: T) -> Result<Self> {
        Self::from_vec(Shape4::scalar(), vec![value])
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        let expected = shape.validate()?;
        if data.len() != expected {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        let t = Tensor4 { shape, data };
        t.check_finite("from_vec")?;
        Ok(t)
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` in layout order.
    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        let len = shape.validate()?;
        let mut data = Vec::with_capacity(len);
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self::from_vec(shape, data)
    }

    /// Wraps kernel output whose length is correct by construction, then
    /// enforces finiteness on behalf of `op`.
    pub(crate) fn from_kernel(op: &str, shape: Shape4, data: Vec<T>) -> Result<Self> {
        debug_assert_eq!(data.len(), shape.numel());
        let t = Tensor4 { shape, data };
        t.check_finite(op)?;
        Ok(t)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access for in-place optimizer and perturbation updates.
    /// Callers must keep values finite.
    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    /// The `h × w` plane for batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn check_finite(&self, op: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite {
                op: op.to_string(),
                index,
            }),
            None => Ok(()),
        }
    }

    pub fn map(&self, op: &str, f: impl Fn(T) -> T) -> Result<Self> {
        Self::from_kernel(op, self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        let mut out = vec![T::zero(); self.data.len()];
        zip_into(&self.data, &other.data, &mut out, f);
        Self::from_kernel(op, self.shape, out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Result<Self> {
        self.map("scale", |v| v * k)
    }

    pub fn neg(&self) -> Result<Self> {
        self.map("neg", |v| -v)
    }

    /// Sum in flat layout order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).expect("length fits scalar")
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        Ok(self.sub(other)?.max_abs())
    }

    /// Concatenates along channels; part `k` fills its own contiguous channel
    /// block within every batch item.
    pub fn concat_channels(parts: &[&Tensor4<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("concat_channels"))?;
        let base = first.shape;
        for p in &parts[1..] {
            let s = p.shape;
            if s.n != base.n || s.h != base.h || s.w != base.w {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    left: base,
                    right: s,
                });
            }
        }
        let c_total = parts.iter().map(|p| p.shape.c).sum();
        let shape = base.with_c(c_total);
        shape.validate()?;
        let mut out = vec![T::zero(); shape.numel()];
        let slices: Vec<(&[T], usize)> = parts.iter().map(|p| (p.data(), p.shape.c)).collect();
        concat_into(&slices, base.n, base.plane(), &mut out);
        Self::from_kernel("concat_channels", shape, out)
    }

    /// Copies channels `range` of every batch item.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.shape.c {
            return Err(Error::InvalidShape {
                op: "slice_channels",
                detail: format!("channel range {range:?} outside {}", self.shape),
            });
        }
        let plane = self.shape.plane();
        let shape = self.shape.with_c(range.len());
        let mut out = Vec::with_capacity(shape.numel());
        for n in 0..self.shape.n {
            let start = (n * self.shape.c + range.start) * plane;
            let end = (n * self.shape.c + range.end) * plane;
            out.extend_from_slice(&self.data[start..end]);
        }
        Self::from_kernel("slice_channels", shape, out)
    }

    /// Multiplies every `(n, c)` plane by `weights[n, c, 0, 0]`.
    pub fn channel_scale(&self, weights: &Tensor4<T>) -> Result<Self> {
        let ws = weights.shape;
        if ws.n != self.shape.n || ws.c != self.shape.c || ws.h != 1 || ws.w != 1 {
            return Err(Error::ShapeMismatch {
                op: "channel_scale",
                left: self.shape,
                right: ws,
            });
        }
        let mut out = vec![T::zero(); self.data.len()];
        channel_scale_into(&self.data, &weights.data, self.shape.plane(), &mut out);
        Self::from_kernel("channel_scale", self.shape, out)
    }

    /// Selects batch items `range` into a new tensor.
    pub fn slice_batch(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.shape.n {
            return Err(Error::InvalidShape {
                op: "slice_batch",
                detail: format!("batch range {range:?} outside {}", self.shape),
            });
        }
        let item = self.shape.c * self.shape.plane();
        let shape = Shape4 {
            n: range.len(),
            ..self.shape
        };
        Self::from_kernel(
            "slice_batch",
            shape,
            self.data[range.start * item..range.end * item].to_vec(),
        )
    }

    /// Stacks equally shaped tensors along the batch dimension.
    pub fn stack_batch(items: &[&Tensor4<T>]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("stack_batch"))?;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape.c != first.shape.c || t.shape.h != first.shape.h || t.shape.w != first.shape.w {
                return Err(Error::ShapeMismatch {
                    op: "stack_batch",
                    left: first.shape,
                    right: t.shape,
                });
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        let shape = Shape4 { n, ..first.shape };
        shape.validate()?;
        Self::from_kernel("stack_batch", shape, data)
    }

    pub fn cast<U: Scalar>(&self) -> Result<Tensor4<U>> {
        let data = self
            .data
            .iter()
            .map(|&v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan))
            .collect();
        Tensor4::<U>::from_kernel("cast", self.shape, data)
    }

    /// Little-endian dump: four `u32` extents, one dtype tag byte, raw scalars.
    pub fn to_dump_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.data.len() * T::DTYPE.byte_width());
        for d in self.shape.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(T::DTYPE.tag());
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_dump_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 17;
        if bytes.len() < HEADER {
            return Err(Error::Dump(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let raw: [u8; 4] = bytes[i * 4..i * 4 + 4].try_into().expect("4 bytes");
            *d = u32::from_le_bytes(raw) as usize;
        }
        let found =
            DType::from_tag(bytes[16]).ok_or_else(|| Error::Dump(format!("unknown dtype tag {}", bytes[16])))?;
        if found != T::DTYPE {
            return Err(Error::DType {
                expected: T::DTYPE,
                found,
            });
        }
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3])?;
        let width = found.byte_width();
        let payload = &bytes[HEADER..];
        if payload.len() != shape.numel() * width {
            return Err(Error::Dump(format!(
                "payload is {} bytes, shape {shape} needs {}",
                payload.len(),
                shape.numel() * width
            )));
        }
        let data = payload.chunks_exact(width).map(T::read_le).collect();
        Self::from_vec(shape, data)
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_dump_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_dump(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_dump_bytes(&bytes)
    }
}

// Slice-level kernels. They touch exactly the declared extents of their
// arguments, which the tests verify against canary-padded buffers.

pub(crate) fn zip_into<T: Copy>(a: &[T], b: &[T], out: &mut [T], f: impl Fn(T, T) -> T) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
}

pub(crate) fn concat_into<T: Copy>(parts: &[(&[T], usize)], n: usize, plane: usize, out: &mut [T]) {
    let mut cursor = 0;
    for b in 0..n {
        for &(data, c) in parts {
            let block = c * plane;
            out[cursor..cursor + block].copy_from_slice(&data[b * block..(b + 1) * block]);
            cursor += block;
        }
    }
}

pub(crate) fn channel_scale_into<T: Scalar>(x: &[T], weights: &[T], plane: usize, out: &mut [T]) {
    for (k, &wk) in weights.iter().enumerate() {
        let range = k * plane..(k + 1) * plane;
        for (o, &v) in out[range.clone()].iter_mut().zip(&x[range]) {
            *o = v * wk;
        }
    }
}
