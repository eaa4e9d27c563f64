use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RealTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    pub shape: Vec<usize>,
    pub data: Vec<Complex64>,
}

/// A node value: real or complex, row-major with an explicit shape.
/// A shape of `[]` is a scalar.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Real(RealTensor),
    Complex(ComplexTensor),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Real,
    Complex,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![x],
        }
    }
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![Complex64::new(0.0, 0.0); n],
        }
    }
}

impl Value {
    pub fn real(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        RealTensor::new(shape, data).map(Value::Real)
    }

    pub fn complex(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        ComplexTensor::new(shape, data).map(Value::Complex)
    }

    pub fn scalar(x: f64) -> Self {
        Value::Real(RealTensor::scalar(x))
    }

    pub fn kind(&self) -> Kind {
        match self {
            Value::Real(_) => Kind::Real,
            Value::Complex(_) => Kind::Complex,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Value::Real(t) => &t.shape,
            Value::Complex(t) => &t.shape,
        }
    }

    pub fn numel(&self) -> usize {
        numel(self.shape())
    }

    pub fn as_real(&self) -> Result<&RealTensor> {
        match self {
            Value::Real(t) => Ok(t),
            Value::Complex(_) => Err(Error::shape("expected a real tensor, got complex")),
        }
    }

    pub fn as_complex(&self) -> Result<&ComplexTensor> {
        match self {
            Value::Complex(t) => Ok(t),
            Value::Real(_) => Err(Error::shape("expected a complex tensor, got real")),
        }
    }

    /// The single entry of a real scalar (any shape with one element).
    pub fn to_scalar(&self) -> Result<f64> {
        let t = self.as_real()?;
        if t.data.len() != 1 {
            return Err(Error::shape(format!("expected a scalar, got shape {:?}", t.shape)));
        }
        Ok(t.data[0])
    }

    pub fn zeros_like(&self) -> Value {
        match self {
            Value::Real(t) => Value::Real(RealTensor::zeros(t.shape.clone())),
            Value::Complex(t) => Value::Complex(ComplexTensor::zeros(t.shape.clone())),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Value::Real(t) => t.data.iter().all(|x| x.is_finite()),
            Value::Complex(t) => t.data.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    pub(crate) fn accumulate(&mut self, other: &Value) -> Result<()> {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) if a.shape == b.shape => {
                for (x, y) in a.data.iter_mut().zip(&b.data) {
                    *x += y;
                }
                Ok(())
            }
            (Value::Complex(a), Value::Complex(b)) if a.shape == b.shape => {
                for (x, y) in a.data.iter_mut().zip(&b.data) {
                    *x += y;
                }
                Ok(())
            }
            _ => Err(Error::Tape("adjoint kind/shape mismatch during accumulation".into())),
        }
    }
}
