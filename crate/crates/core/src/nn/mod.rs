//! Minimal reverse-mode differentiation over dense row-major matrices, with
//! the handful of layers the models need: affine maps, gated recurrent
//! (LSTM) stacks, dropout, and ADAM.

mod adam;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradcheck, gradcheck_sampled, GradCheckReport};
pub use layers::{dropout, dropout_mask, BiLstm, Linear, LstmLayer, RecurrentEncoderConfig};
pub use params::{Bound, Checkpoint, ParamId, ParamStore};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
