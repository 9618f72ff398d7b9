use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. The leading dimension is the batch axis wherever a
/// network consumes one.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {want} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    /// A batch of one built from a flat sample.
    pub fn from_sample(sample_shape: &[usize], data: Vec<T>) -> Result<Self> {
        let mut shape = Vec::with_capacity(sample_shape.len() + 1);
        shape.push(1);
        shape.extend_from_slice(sample_shape);
        Self::new(shape, data)
    }

    /// Stack equally sized rows into a `[rows.len(), sample_shape..]` batch.
    pub fn stack<'a, I>(sample_shape: &[usize], rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        let per: usize = sample_shape.iter().product();
        let mut data = Vec::new();
        let mut n = 0;
        for row in rows {
            if row.len() != per {
                return Err(Error::Shape(format!(
                    "row of length {} where {per} expected",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
            n += 1;
        }
        let mut shape = vec![n];
        shape.extend_from_slice(sample_shape);
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
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

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per batch entry.
    pub fn sample_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.sample_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        self.map(|v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan))
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        ensure_finite(&self.data, what)
    }
}

pub(crate) fn ensure_finite<T: Scalar>(values: &[T], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!(
            "{what}: non-finite value {:?} at index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_shape() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.batch(), 2);
        assert_eq!(t.sample_len(), 3);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let t = Tensor::<f64>::new(vec![3], vec![1.0, f64::NAN, 2.0]).unwrap();
        assert!(matches!(t.ensure_finite("x"), Err(Error::Numeric(_))));
    }

    #[test]
    fn stack_builds_batch() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32, 4.0];
        let t = Tensor::stack(&[2], [&a[..], &b[..]]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.row(1), &[3.0, 4.0]);
    }
}
