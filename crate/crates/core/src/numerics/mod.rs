//! Dense `f64` tensors and the reverse-mode machinery used for training.

mod gradcheck;
mod lstm;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use lstm::{lstm_cell, zero_state, LstmParams, LstmVars};
pub(crate) use lstm::lstm_cell_gates;
pub use ops::{Eval, Ops, ParamId, ParamStore, BCE_EPS, LAYER_NORM_EPS};
pub(crate) use ops::{bce_sum_tensor, bce_value};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{sigmoid, Tensor};
