//! Dense f64 kernels with hand-derived gradients.

pub mod adam;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
pub mod param;

pub use adam::{adam_update, AdamConfig};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, GroupError};
pub use lstm::{lstm_step, LstmCache, LstmCell, LstmWeights};
pub use ops::{
    cross_entropy, linear_forward, softmax, Embedding, Linear, LossFunction, Matrix, Objective,
    PROB_FLOOR,
};
pub use param::{ParamId, Parameter, ParameterStore};
