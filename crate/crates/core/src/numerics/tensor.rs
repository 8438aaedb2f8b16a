use crate::error::{Error, Result};
use crate::numerics::scalar::Scalar;

/// Dense row-major tensor. Invariant: `data.len() == shape.iter().product()`.
///
/// Rank conventions used across the crate:
///   `[1]`        scalars (losses, reductions)
///   `[T]`        waveforms
///   `[C, T]`     channel x time feature maps
///   `[C, H, W]`  single video frames
///   `[M, C, F]`  per-speaker embedding stacks
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::from_vec",
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert!(!shape.is_empty(), "rank-0 tensors are not supported");
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// A single value wrapped as a `[1]` tensor.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// The single element of a `[1]` tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::reshape",
                expected: shape,
                got: self.shape.clone(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Row `c` of a `[C, T]` tensor.
    pub fn row(&self, c: usize) -> &[T] {
        assert_eq!(self.rank(), 2);
        let t = self.shape[1];
        &self.data[c * t..(c + 1) * t]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [T] {
        assert_eq!(self.rank(), 2);
        let t = self.shape[1];
        &mut self.data[c * t..(c + 1) * t]
    }

    /// Element of a `[C, T]` tensor.
    pub fn at2(&self, c: usize, t: usize) -> T {
        self.data[c * self.shape[1] + t]
    }

    /// Widen / narrow the element type, value by value.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64v())).collect(),
        }
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Sum of squares in f64, the common building block of the energy math.
pub fn sum_sq<T: Scalar>(xs: &[T]) -> f64 {
    xs.iter().map(|v| v.to_f64v() * v.to_f64v()).sum()
}

/// Inner product in f64.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.to_f64v() * y.to_f64v())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn row_indexing_matches_linear_layout() {
        let t = Tensor::<f64>::from_vec(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.row(0), &[0.0, 1.0, 2.0]);
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.at2(1, 2), 5.0);
    }

    #[test]
    fn cast_round_trips_f32_values() {
        let t = Tensor::<f32>::from_vec(vec![3], vec![0.1, -2.5, 7.0]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }
}
