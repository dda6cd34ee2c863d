//! Tape-based reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every primitive executed through it together with the
//! activations its backward rule needs. [`Tape::backward`] walks the record
//! once in reverse order, so gradients are exact and bitwise reproducible.
//! Both parameters and inputs are leaves, which is what input-gradient probes
//! rely on.
//!
//! ```
//! use ugrn::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod optim;
mod tape;
mod tensor;

pub use optim::{sgd_step, Adam};
pub use tape::{Gradients, Tape, Var, BCE_EPS, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("variable is not recorded on this tape")]
    ForeignVar,
    #[error("tape was created without recording; backward is unavailable")]
    NotRecording,
    #[error("{op} over zero elements")]
    EmptyReduction { op: &'static str },
}

#[cfg(test)]
mod tests;
