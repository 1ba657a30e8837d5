use alloc::vec::Vec;

use crate::ir::{ScalarType, ValueType};

/// Dense row-major array.
#[derive(Debug, Clone)]
pub struct Array<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Clone + Default> Array<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Array { shape: shape.into(), data: alloc::vec![T::default(); n] }
    }
}

impl<T> Array<T> {
    /// `None` if `data.len()` does not match the shape.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Option<Self> {
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e))?;
        (n == data.len()).then_some(Array { shape, data })
    }
}

/// A runtime value. Equality is bitwise for floats.
#[derive(Debug, Clone)]
pub enum Value {
    I64(i64),
    F64(f64),
    I64Array(Array<i64>),
    F64Array(Array<f64>),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::I64(a), Value::I64(b)) => a == b,
            (Value::F64(a), Value::F64(b)) => a.to_bits() == b.to_bits(),
            (Value::I64Array(a), Value::I64Array(b)) => a.shape == b.shape && a.data == b.data,
            (Value::F64Array(a), Value::F64Array(b)) => {
                a.shape == b.shape
                    && a.data.len() == b.data.len()
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Value {
    pub fn ty(&self) -> ValueType {
        match self {
            Value::I64(_) => ValueType::I64,
            Value::F64(_) => ValueType::F64,
            Value::I64Array(a) => ValueType::array(ScalarType::I64, &a.shape),
            Value::F64Array(a) => ValueType::array(ScalarType::F64, &a.shape),
        }
    }

    /// Zero-filled value of the given type.
    pub fn zeros(ty: &ValueType) -> Self {
        match ty {
            ValueType::Scalar(ScalarType::I64) => Value::I64(0),
            ValueType::Scalar(ScalarType::F64) => Value::F64(0.0),
            ValueType::Array { elem: ScalarType::I64, shape } => Value::I64Array(Array::zeros(shape)),
            ValueType::Array { elem: ScalarType::F64, shape } => Value::F64Array(Array::zeros(shape)),
        }
    }

    pub fn matches(&self, ty: &ValueType) -> bool {
        match (self, ty) {
            (Value::I64(_), ValueType::Scalar(ScalarType::I64)) => true,
            (Value::F64(_), ValueType::Scalar(ScalarType::F64)) => true,
            (Value::I64Array(a), ValueType::Array { elem: ScalarType::I64, shape }) => {
                a.shape == *shape && a.data.len() == a.shape.iter().product::<usize>()
            }
            (Value::F64Array(a), ValueType::Array { elem: ScalarType::F64, shape }) => {
                a.shape == *shape && a.data.len() == a.shape.iter().product::<usize>()
            }
            _ => false,
        }
    }

    pub fn is_array(&self) -> bool {
        matches!(self, Value::I64Array(_) | Value::F64Array(_))
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::I64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::F64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64_array(&self) -> Option<&Array<f64>> {
        match self {
            Value::F64Array(a) => Some(a),
            _ => None,
        }
    }
}
