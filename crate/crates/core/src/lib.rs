//! Skip-connection deep networks trained by gradient descent, the random
//! feature model obtained by freezing their inner weights, and numerical
//! checks of the stability and trajectory-coupling estimates that tie the two
//! together.

pub mod activation;
pub mod data;
mod error;
pub mod fit;
pub mod kernelgram;
pub mod landscape;
pub mod netcore;
pub mod reference;
pub mod resnetlab;
pub mod sampling;
pub mod trainer;

pub use activation::ActivationKind;
pub use error::{Error, Result};
