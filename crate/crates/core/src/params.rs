//! Named learnable tensors, their gradients and Adam moments, plus
//! non-learnable buffers such as batchnorm running statistics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub adam_m: Tensor4<T>,
    pub adam_v: Tensor4<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor4<T>) -> Result<Self> {
        let zeros = Tensor4::zeros(value.shape())?;
        Ok(Param {
            value,
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
        })
    }
}

/// Running-statistic update produced by a training-mode batchnorm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub running_mean: String,
    pub running_var: String,
    pub batch_mean: Vec<T>,
    /// Biased batch variance.
    pub batch_var: Vec<T>,
    /// Elements per channel that produced the statistics.
    pub count: usize,
    pub momentum: T,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
    buffers: BTreeMap<String, Tensor4<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Tensor4<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.params.insert(name, Param::new(value)?);
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor4<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.buffers.insert(name, value);
        Ok(())
    }

    pub fn param(&self, name: &str) -> Result<&Param<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor4<T>> {
        Ok(&self.param(name)?.value)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor4<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replaces a parameter or buffer value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor4<T>) -> Result<()> {
        let slot = match self.params.get_mut(name) {
            Some(p) => &mut p.value,
            None => self
                .buffers
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.to_string()))?,
        };
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::set",
                left: slot.shape(),
                right: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor4<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total learnable scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor4<T>) -> Result<()> {
        let p = self.param_mut(name)?;
        p.grad = p.grad.add(grad)?;
        Ok(())
    }

    /// Adds `delta` to one scalar of a parameter, in place.
    pub(crate) fn perturb(&mut self, name: &str, index: usize, delta: T) -> Result<()> {
        let p = self.param_mut(name)?;
        let slot = p
            .value
            .data_mut()
            .get_mut(index)
            .ok_or_else(|| Error::UnknownParam(format!("{name}[{index}]")))?;
        *slot += delta;
        Ok(())
    }

    /// Exponential moving average of batch statistics into the running
    /// buffers; the variance is stored unbiased.
    pub fn apply_bn_update(&mut self, u: &BnUpdate<T>) -> Result<()> {
        let m = u.momentum;
        let keep = T::one() - m;
        let correction = if u.count > 1 {
            T::from_usize(u.count).expect("count") / T::from_usize(u.count - 1).expect("count")
        } else {
            T::one()
        };
        let mean = self
            .buffers
            .get_mut(&u.running_mean)
            .ok_or_else(|| Error::UnknownParam(u.running_mean.clone()))?;
        for (r, &b) in mean.data_mut().iter_mut().zip(&u.batch_mean) {
            *r = keep * *r + m * b;
        }
        let var = self
            .buffers
            .get_mut(&u.running_var)
            .ok_or_else(|| Error::UnknownParam(u.running_var.clone()))?;
        for (r, &b) in var.data_mut().iter_mut().zip(&u.batch_var) {
            *r = keep * *r + m * b * correction;
        }
        Ok(())
    }

    /// Converts values and buffers to another precision; gradients and
    /// moments start at zero.
    pub fn cast<U: Scalar>(&self) -> Result<ParamStore<U>> {
        let mut out = ParamStore::new();
        for (k, p) in &self.params {
            out.insert_param(k.clone(), p.value.cast()?)?;
        }
        for (k, b) in &self.buffers {
            out.insert_buffer(k.clone(), b.cast()?)?;
        }
        Ok(out)
    }

    /// Same names, values and buffers (gradients and moments ignored).
    pub fn same_weights(&self, other: &Self) -> bool {
        self.buffers == other.buffers
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, a), (kb, b))| ka == kb && a.value == b.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn names_are_unique_across_params_and_buffers() {
        let mut s = ParamStore::<f32>::new();
        let t = Tensor4::zeros(Shape4::scalar()).unwrap();
        s.insert_param("a", t.clone()).unwrap();
        assert!(matches!(s.insert_param("a", t.clone()), Err(Error::DuplicateParam(_))));
        assert!(matches!(s.insert_buffer("a", t), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn moments_match_value_shape() {
        let mut s = ParamStore::<f64>::new();
        s.insert_param("w", Tensor4::ones(Shape4::new(2, 3, 3, 3).unwrap()).unwrap())
            .unwrap();
        let p = s.param("w").unwrap();
        assert_eq!(p.grad.shape(), p.value.shape());
        assert_eq!(p.adam_m.shape(), p.value.shape());
        assert_eq!(p.adam_v.shape(), p.value.shape());
        assert_eq!(s.num_scalars(), 54);
    }

    #[test]
    fn bn_update_blends_running_stats() {
        let mut s = ParamStore::<f64>::new();
        let shape = Shape4::new(1, 1, 1, 1).unwrap();
        s.insert_buffer("m", Tensor4::zeros(shape).unwrap()).unwrap();
        s.insert_buffer("v", Tensor4::ones(shape).unwrap()).unwrap();
        s.apply_bn_update(&BnUpdate {
            running_mean: "m".into(),
            running_var: "v".into(),
            batch_mean: vec![2.0],
            batch_var: vec![1.0],
            count: 2,
            momentum: 0.1,
        })
        .unwrap();
        assert!((s.buffer("m").unwrap().data()[0] - 0.2).abs() < 1e-15);
        // 0.9 * 1 + 0.1 * (1 * 2/1)
        assert!((s.buffer("v").unwrap().data()[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn set_checks_shape() {
        let mut s = ParamStore::<f32>::new();
        s.insert_param("w", Tensor4::zeros(Shape4::scalar()).unwrap()).unwrap();
        let wrong = Tensor4::zeros(Shape4::new(1, 2, 1, 1).unwrap()).unwrap();
        assert!(s.set("w", wrong).is_err());
        assert!(s.set("missing", Tensor4::zeros(Shape4::scalar()).unwrap()).is_err());
    }
}
