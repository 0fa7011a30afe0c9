use num_complex::Complex64;

use crate::{ArrayError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Real64,
    Complex128,
}

impl DType {
    pub(crate) fn tag(self) -> u8 {
        match self {
            DType::Real64 => 0,
            DType::Complex128 => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::Real64),
            1 => Some(DType::Complex128),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Storage {
    fn len(&self) -> usize {
        match self {
            Storage::Real(v) => v.len(),
            Storage::Complex(v) => v.len(),
        }
    }
}

/// Row-major dense tensor. Immutable once built, except through the
/// explicit `*_mut` accessors used by owners that are still filling it.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Storage,
    requires_grad: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            storage: Storage::Real(vec![0.0; numel(shape)]),
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            storage: Storage::Real(vec![value; numel(shape)]),
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[], value)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected = numel(shape);
        if expected != data.len() {
            return Err(ArrayError::ShapeMismatch {
                shape: shape.to_vec(),
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            storage: Storage::Real(data),
            requires_grad: false,
        })
    }

    pub fn from_complex(shape: &[usize], data: Vec<Complex64>) -> Result<Self> {
        let expected = numel(shape);
        if expected != data.len() {
            return Err(ArrayError::ShapeMismatch {
                shape: shape.to_vec(),
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            storage: Storage::Complex(data),
            requires_grad: false,
        })
    }

    /// Builds a complex tensor from matching real and imaginary parts.
    pub fn from_parts(re: &Tensor, im: &Tensor) -> Result<Self> {
        if re.shape != im.shape {
            return Err(ArrayError::LengthMismatch(re.len(), im.len()));
        }
        let (r, i) = (re.try_real()?, im.try_real()?);
        let data = r.iter().zip(i).map(|(&a, &b)| Complex64::new(a, b)).collect();
        Self::from_complex(&re.shape, data)
    }

    /// Splits into real and imaginary parts. A real tensor yields a zero
    /// imaginary part.
    pub fn split_complex(&self) -> (Tensor, Tensor) {
        match &self.storage {
            Storage::Real(v) => (
                Tensor::from_vec(&self.shape, v.clone()).unwrap(),
                Tensor::zeros(&self.shape),
            ),
            Storage::Complex(v) => (
                Tensor::from_vec(&self.shape, v.iter().map(|c| c.re).collect()).unwrap(),
                Tensor::from_vec(&self.shape, v.iter().map(|c| c.im).collect()).unwrap(),
            ),
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self.storage {
            Storage::Real(_) => DType::Real64,
            Storage::Complex(_) => DType::Complex128,
        }
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn try_real(&self) -> Result<&[f64]> {
        match &self.storage {
            Storage::Real(v) => Ok(v),
            Storage::Complex(_) => Err(ArrayError::WrongDType {
                expected: DType::Real64,
                found: DType::Complex128,
            }),
        }
    }

    pub fn try_complex(&self) -> Result<&[Complex64]> {
        match &self.storage {
            Storage::Complex(v) => Ok(v),
            Storage::Real(_) => Err(ArrayError::WrongDType {
                expected: DType::Complex128,
                found: DType::Real64,
            }),
        }
    }

    /// Real payload. Panics on a complex tensor; the tape only ever holds
    /// real values.
    pub fn data(&self) -> &[f64] {
        self.try_real().expect("real tensor expected")
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        match &mut self.storage {
            Storage::Real(v) => v,
            Storage::Complex(_) => panic!("real tensor expected"),
        }
    }

    pub fn into_data(self) -> Vec<f64> {
        match self.storage {
            Storage::Real(v) => v,
            Storage::Complex(_) => panic!("real tensor expected"),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(ArrayError::ShapeMismatch {
                shape: shape.to_vec(),
                expected: numel(shape),
                found: self.len(),
            });
        }
        let mut out = self.clone();
        out.shape = shape.to_vec();
        Ok(out)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data()[self.offset(index)]
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                assert!(i < n, "index {i} out of bounds for extent {n}");
                acc * n + i
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_vec(&self.shape, self.data().iter().map(|&v| f(v)).collect()).unwrap()
    }

    pub fn sum(&self) -> f64 {
        self.data().iter().sum()
    }

    pub fn norm(&self) -> f64 {
        match &self.storage {
            Storage::Real(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Storage::Complex(v) => v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        match &self.storage {
            Storage::Real(v) => v.iter().all(|x| x.is_finite()),
            Storage::Complex(v) => v.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
        }
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) for strided loops.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
