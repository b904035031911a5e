//! A small learned image codec with a hyperprior entropy model and
//! decoder-side latent shifting along entropy gradients.
//!
//! The pipeline is the usual analysis / hyper-analysis / hyper-synthesis /
//! synthesis stack. On top of it, [`shift`] picks two step sizes at encode
//! time and the decoder moves the decoded side and main latents along the
//! gradients of their own code lengths, which it can compute without the
//! source image.

pub mod analysis;
pub mod checkpoint;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod harness;
pub mod layers;
pub mod optim;
pub mod par;
pub mod range_coder;
pub mod shift;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
