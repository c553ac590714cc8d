//! Dense tensors, a reverse-mode tape, Adam, finite-difference checks and
//! parameter checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use params::{BoundParams, ParamStore};
pub use tape::{masked_softmax, Activation, Gradients, MultiHotPattern, Tape, Var};
pub use tensor::Tensor;
