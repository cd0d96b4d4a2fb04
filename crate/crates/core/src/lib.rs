//! Distributed black-box adversarial attacks against an image
//! classification service, together with the service itself.

pub mod attacks;
pub mod classifier;
pub mod client;
pub mod codec;
pub mod harness;
pub mod loss;
pub mod norm;
pub mod rng;
pub mod service;
pub mod tensor;

pub use attacks::{
    Attack, AttackError, AttackOutcome, AttackParams, Execution, Method, RunnerConfig,
};
pub use classifier::{ClassProbabilities, Model, ModelSpec, WeightSet};
pub use client::{ClientError, QueryBudget, ServiceClient};
pub use codec::{CodecError, EncodedImage, ImageFormatKind};
pub use loss::{argmax, margin_loss};
pub use norm::{Norm, NormBudget};
pub use rng::Rng;
pub use service::{Service, ServiceConfig, ServiceHandle};
pub use tensor::{ImageTensor, QuantizedImage};
