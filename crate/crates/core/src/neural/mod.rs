//! From-scratch numerical engine: LSTM and Bi-LSTM with backpropagation through
//! time, dense layers, softmax cross-entropy, Adam, finite-difference gradient
//! checks and the binary tensor file format.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod lstm;
pub mod tensor;
pub mod tensorfile;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use dense::DenseParams;
pub use gradcheck::{grad_check, GradCheckFailure, GradCheckOptions, GradCheckReport};
pub use loss::{softmax, softmax_xent};
pub use lstm::{bilstm_backward, bilstm_forward, lstm_step, BiLstmParams, BiLstmTrace, LstmParams};
pub use tensor::{Matrix, Real};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, NeuralError>;

/// A named, ordered collection of trainable tensors.
///
/// The visiting order defines the layout used by the optimizer, the gradient
/// checker and the tensor file, so implementations must keep it stable.
pub trait Parameters<F: Real> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<F>)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<F>)>);

    fn named(&self) -> Vec<(String, &Matrix<F>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix<F>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    /// Same structure with every tensor set to zero; used as a gradient buffer.
    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for (_, m) in z.named_mut() {
            m.fill(F::zero());
        }
        z
    }

    /// Accumulates `other` into `self`; both must share a structure.
    fn accumulate(&mut self, other: &Self) {
        let theirs = other.named();
        for ((_, mine), (_, t)) in self.named_mut().into_iter().zip(theirs) {
            mine.add_assign(t);
        }
    }

    fn scale_all(&mut self, k: F) {
        for (_, m) in self.named_mut() {
            m.scale(k);
        }
    }

    /// Errors with the first parameter holding a NaN or infinity.
    fn check_finite_grads(&self) -> Result<()> {
        for (name, m) in self.named() {
            if !m.is_finite() {
                return Err(NeuralError::NonFiniteGradient(name));
            }
        }
        Ok(())
    }

    fn global_norm(&self) -> F {
        self.named()
            .iter()
            .map(|(_, m)| m.sum_squares())
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }

    fn cast_into<G: Real, P: Parameters<G>>(&self, target: &mut P) {
        for ((_, dst), (_, src)) in target.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
