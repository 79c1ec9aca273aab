//! A small multi-headed 1-D convolutional network with reverse-mode
//! gradients, Adam, and a finite-difference gradient checker. Everything
//! runs in `f64`.

mod adam;
mod gradcheck;
mod io;
pub mod layers;
mod model;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::OptimizerState;
pub use gradcheck::{check_gradients, finite_difference_check, FdConfig, FdReport};
pub use io::{load_model, save_model, MODEL_MAGIC};
pub use model::{
    backward_from_output, init_params, loss_and_gradients, model_backward, model_forward, model_input, mse_loss, ConvLayerSpec,
    GradientSet, HeadSpec, ModelInput, ModelParams, ModelSpec, PoolSpec, Tape,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    Shape { op: &'static str, expected: String, actual: String },
    #[error("non-finite value at {path}")]
    NonFinite { path: String },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Dense row-major array.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape {
                op: "tensor",
                expected: format!("{n} values for shape {shape:?}"),
                actual: data.len().to_string(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor { shape: vec![data.len()], data }
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

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(NnError::Shape { op, expected: format!("{shape:?}"), actual: format!("{:?}", self.shape) });
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.shape.len() != rank {
            return Err(NnError::Shape {
                op,
                expected: format!("rank {rank}"),
                actual: format!("{:?}", self.shape),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}
