//! Dense row-major f64 tensors. Only rank 1 and 2 are used in practice.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::fmath;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Every dimension must be positive and the data length must equal the
    /// shape product; empty tensors are not representable.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, CoreError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(CoreError::shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(CoreError::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, CoreError> {
        let len: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; len])
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, CoreError> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, CoreError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Result<Self, CoreError> {
        let mut t = Tensor::zeros(vec![n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform_init(
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self, CoreError> {
        if fan_in == 0 {
            return Err(CoreError::invalid("fan_in must be positive"));
        }
        let bound = 1.0 / fmath::sqrt(fan_in as f64);
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // positive dims are enforced at construction
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Numerically stable softmax of a non-empty slice.
///
/// The maximum is subtracted before exponentiation, so entries around 1000
/// come out finite. Output is non-negative and sums to 1 up to rounding.
pub fn softmax(xs: &[f64]) -> Result<Vec<f64>, CoreError> {
    if xs.is_empty() {
        return Err(CoreError::domain("softmax of empty input"));
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(CoreError::domain("softmax input must be finite"));
    }
    let mut out: Vec<f64> = xs.iter().map(|&x| fmath::exp(x - max)).collect();
    let sum: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_enforced() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(CoreError::Shape(_))
        ));
        assert!(matches!(
            Tensor::new(vec![0], vec![]),
            Err(CoreError::Shape(_))
        ));
    }

    #[test]
    fn row_access() {
        let t = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let p = softmax(&[3.5, 3.5, 3.5, 3.5]).unwrap();
        for &x in &p {
            assert!(fmath::abs(x - 0.25) < 1e-15);
        }
    }

    #[test]
    fn softmax_large_inputs_finite() {
        let p = softmax(&[1000.0, 999.0, 998.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        let s: f64 = p.iter().sum();
        assert!(fmath::abs(s - 1.0) < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
    }

    #[test]
    fn softmax_empty_rejected() {
        assert!(matches!(softmax(&[]), Err(CoreError::Domain(_))));
    }

    #[test]
    fn init_respects_bound() {
        let mut rng = SplitMix64::new(3);
        let t = Tensor::uniform_init(vec![16, 16], 64, &mut rng).unwrap();
        let bound = 1.0 / 8.0;
        assert!(t.data().iter().all(|&x| x >= -bound && x <= bound));
        // not all identical
        assert!(t.data().iter().any(|&x| x != t.data()[0]));
    }
}
