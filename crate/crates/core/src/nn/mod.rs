//! Small reverse-mode autodiff engine over `f64` tensors.

mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{GradCheck, check_gradients, check_gradients_where, relative_error, store_of};
pub use kernels::Conv2dSpec;
pub use params::{Adam, ParamId, ParamStore, clip_global_norm, load_archive, save_archive, uniform, xavier};
pub use tape::{Gradients, Tape, Var, softmax_inplace, weighted_ce_from_logits};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
