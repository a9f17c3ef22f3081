//! Dense `f64` tensors with a record-and-replay reverse-mode tape.
//!
//! Parameters live in a [`ParamStore`]; a forward pass records primitive
//! operations on a [`Tape`], and [`Tape::backward`] walks the record in
//! reverse, accumulating gradients into the store.

mod checkpoint;
mod layers;
mod optim;
mod params;
mod tape;

pub use checkpoint::{load_params, save_params};
pub use layers::{mse_loss, softmax, Conv2d, Dropout, GruCell, GruVars, Linear, LinearVars, MaxPool2d};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error in {context}: {detail}")]
    Shape { context: String, detail: String },
    #[error("invalid value: {0}")]
    Validation(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl TensorError {
    pub(crate) fn shape(context: &str, detail: impl Into<String>) -> Self {
        TensorError::Shape { context: context.to_string(), detail: detail.into() }
    }

    /// Prefix the error context with the layer that raised it.
    pub fn in_layer(self, layer: &str) -> Self {
        match self {
            TensorError::Shape { context, detail } => {
                TensorError::Shape { context: format!("{layer}/{context}"), detail }
            }
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::shape("tensor", format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }
}
