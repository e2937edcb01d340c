//! The skip-connection network: parameters, forward and backward
//! propagation, and gradient assembly.
//!
//! Every block keeps the first `d` coordinates tied to the input:
//!
//! ```text
//! z_{k+1} = x + C_k σ(B_k z_k + r_k y_k)
//! y_{k+1} = y_k + a_kᵀ σ(B_k z_k + r_k y_k)
//! f(x)    = y_{L-1}
//! ```

mod batch;
mod params;
mod propagate;

pub use params::{sample_init, sample_init_alt, BlockDeviation, Gradients, LayerBlocks, ModelParams};
pub use propagate::{
    backward, forward, forward_with, grad_output, grad_risk, risk, AdjointTrace, ForwardTrace, InputPolicy,
    Propagator, UNIT_NORM_TOL,
};
pub use batch::BatchPropagator;
pub(crate) use propagate::check_unit;
#[cfg(test)]
pub(crate) use propagate::accumulate_risk_grad;

#[cfg(test)]
mod tests;
