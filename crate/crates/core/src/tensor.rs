//! Dense row-major tensors.
//!
//! A [`Tensor`] is an immutable value: every operation returns a new tensor.
//! Runtime code uses `Tensor<f32>`; `Tensor<f64>` exists so gradient checks and
//! test oracles can run with tighter tolerances.

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64_lossy(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<&T> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("precision", &T::PRECISION)
            .field("data", &preview)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(Error::contract(format!(
            "tensor dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    /// Builds a tensor, checking that `shape` matches `data` and that every
    /// element is finite.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite element at index {i}")));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for results of arithmetic on already-valid tensors.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self::from_parts(shape.to_vec(), vec![T::zero(); n]))
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Callers must keep every element finite.
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

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        )
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != self.len() {
            return Err(Error::contract(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self::from_parts(shape, self.data.clone()))
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::contract(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Euclidean norm, accumulated in double precision.
    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
    }

    pub fn clip(&self, lo: T, hi: T) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::contract(format!("clip: lo {lo} > hi {hi}")));
        }
        Ok(self.map(|v| v.max(lo).min(hi)))
    }

    /// Index of the largest element; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate().skip(1) {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![data.len()], data).unwrap()
    }

    #[test]
    fn add_examples() {
        assert_eq!(t(&[1., 2.]).add(&t(&[0., 0.])).unwrap().data(), &[1., 2.]);
        assert_eq!(t(&[1., 2.]).add(&t(&[3., 4.])).unwrap().data(), &[4., 6.]);
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let err = t(&[1., 2.]).add(&t(&[1., 2., 3.])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn add_random_28x28_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f32> = (0..784).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..784).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ta = Tensor::new(vec![28, 28], a.clone()).unwrap();
        let tb = Tensor::new(vec![28, 28], b.clone()).unwrap();
        let sum = ta.add(&tb).unwrap();
        assert_eq!(sum.shape(), &[28, 28]);
        for i in 0..784 {
            assert_eq!(sum.data()[i], a[i] + b[i]);
        }
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(t(&[0., 0., 0.]).l2_norm(), 0.0);
        assert_eq!(t(&[3., 4.]).l2_norm(), 5.0);
    }

    #[test]
    fn l2_norm_random_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut acc = 0.0;
        for x in &v {
            acc += x * x;
        }
        let oracle = acc.sqrt();
        let got = t(&v).l2_norm();
        assert!((got - oracle).abs() <= 1e-6 * oracle);
    }

    #[test]
    fn clip_examples() {
        let c = t(&[-0.5, 0.5, 1.5]).clip(0.0, 1.0).unwrap();
        assert_eq!(c.data(), &[0.0, 0.5, 1.0]);
        let a = t(&[-1e30, 3.0, 1e30]);
        assert_eq!(a.clip(f64::MIN, f64::MAX).unwrap(), a);
        assert!(t(&[1.0]).clip(1.0, 0.0).is_err());
    }

    #[test]
    #[allow(clippy::manual_clamp)]
    fn clip_random_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = t(&v).clip(-0.3, 0.7).unwrap();
        for (i, &x) in v.iter().enumerate() {
            let expect = if x < -0.3 {
                -0.3
            } else if x > 0.7 {
                0.7
            } else {
                x
            };
            assert_eq!(c.data()[i], expect);
        }
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![1], vec![f32::NAN]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(t(&[0.5, 0.5, 0.0]).argmax(), 0);
        assert_eq!(t(&[0.1, 0.7, 0.7]).argmax(), 1);
    }

    fn vec_in_range() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..64)
    }

    proptest! {
        #[test]
        fn binary_ops_preserve_shape(a in vec_in_range()) {
            let ta = t(&a);
            let tb = ta.map(|v| v * 0.5 + 1.0);
            let (sum, diff) = (ta.add(&tb).unwrap(), ta.sub(&tb).unwrap());
            prop_assert_eq!(sum.shape(), ta.shape());
            prop_assert_eq!(diff.shape(), ta.shape());
        }

        #[test]
        fn l2_norm_nonnegative_and_zero_iff_zero(a in vec_in_range()) {
            let n = t(&a).l2_norm();
            prop_assert!(n >= 0.0);
            prop_assert_eq!(n == 0.0, a.iter().all(|&v| v == 0.0));
        }

        #[test]
        fn single_and_double_precision_agree(a in vec_in_range(), b in vec_in_range()) {
            let len = a.len().min(b.len());
            let (a, b) = (&a[..len], &b[..len]);
            let (a64, b64) = (t(a), t(b));
            let (a32, b32) = (a64.cast::<f32>(), b64.cast::<f32>());
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-4 * x.abs().max(y.abs()).max(1.0);
            let s64 = a64.add(&b64).unwrap();
            let s32 = a32.add(&b32).unwrap();
            for (x, y) in s64.data().iter().zip(s32.data()) {
                prop_assert!(close(*x, *y as f64));
            }
            let c64 = a64.clip(-1.0, 1.0).unwrap();
            let c32 = a32.clip(-1.0, 1.0).unwrap();
            for (x, y) in c64.data().iter().zip(c32.data()) {
                prop_assert!(close(*x, *y as f64));
            }
            prop_assert!(close(a64.l2_norm(), a32.l2_norm()));
        }
    }
}
