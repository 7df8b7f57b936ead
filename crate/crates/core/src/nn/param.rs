use crate::error::{Error, Result};

/// A named learnable array with a gradient buffer of the same shape.
///
/// Values are stored row-major. A rank-2 array of shape `[rows, cols]`
/// addresses entry `(i, j)` at `i * cols + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl ParamArray {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn from_values(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::dim(format!("parameter {name}"), len, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "parameter {name} has non-finite value at index {i}"
            )));
        }
        Ok(Self {
            name,
            shape: shape.to_vec(),
            grad: vec![0.0; len],
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    /// Split borrow used by optimizers.
    pub fn values_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Row `i` of a rank-2 array.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.values[i * cols..(i + 1) * cols]
    }
}

/// Anything that owns a fixed, ordered collection of learnable arrays.
pub trait Parameters {
    fn params(&self) -> Vec<&ParamArray>;
    fn params_mut(&mut self) -> Vec<&mut ParamArray>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl Parameters for ParamArray {
    fn params(&self) -> Vec<&ParamArray> {
        vec![self]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamArray> {
        vec![self]
    }
}

impl Parameters for Vec<ParamArray> {
    fn params(&self) -> Vec<&ParamArray> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamArray> {
        self.iter_mut().collect()
    }
}
