//! Dense tensors, reverse-mode differentiation, MLPs and Adam.

mod adam;
mod gradcheck;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_steps, GRAD_CHECK_FLOOR};
pub use mlp::{mlp_forward, Activation, Dense, Mlp};
pub use tape::{rbf_kernel, Gradients, KernelWeights, Tape, Var};
pub(crate) use tensor::gemm;
pub use tensor::Tensor;

/// Copies gradients for `vars` into the `grad` field of `params`.
pub fn load_grads(
    grads: &Gradients,
    vars: &[Var],
    params: &mut [&mut Tensor],
) -> crate::error::Result<()> {
    for (p, v) in params.iter_mut().zip(vars) {
        p.grad = Some(grads.get(*v)?.into_values());
    }
    Ok(())
}
