//! A small differentiable-compute core.
//!
//! Dense `f64` matrices, an eager [`Graph`] with reverse-mode gradients,
//! feed-forward networks, Gaussian initialization, Adam, a central-difference
//! gradient checker and a binary checkpoint format. Only the operations the
//! path-matching model needs are provided.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod mlp;
pub mod params;
pub mod tensor;
pub mod topk;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, relative_error, ridders, GradCheckReport};
pub use graph::{log_loss_value, Graph, NodeId, PROB_CLAMP};
pub use init::{gaussian_init, GaussianInit, INIT_STD};
pub use mlp::{mlp_forward, MlpParams, OutputActivation};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
pub use topk::topk_select;

use crate::error::{Error, Result};

/// Softmax of a 1-D tensor, computed with max subtraction.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    Tensor::new(v.shape().to_vec(), graph::softmax(v.data()))
}
