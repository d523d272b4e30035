//! Deterministic numeric core: dense MLPs with reverse-mode gradients,
//! Adam, seeded random streams and finite-difference checking.

mod adam;
mod gradcheck;
mod mlp;
mod prng;

pub use adam::AdamState;
pub use gradcheck::{fd_check, grad_check, grad_check_with, relative_error, FD_STEP};
pub use mlp::{
    backward_batch, forward_batch, mlp_forward, mlp_grad, Gradients, LayerRanges, MlpSpec, OutputActivation,
    ParamVector, Real, Tape,
};
pub use prng::{Prng, PrngState, Stream};
