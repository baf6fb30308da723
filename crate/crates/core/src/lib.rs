//! UI layout auto-completion: layout trees, a small reverse-mode tensor
//! engine, three transformer tree decoders (vanilla bracket sequence,
//! parent pointer, recursive top-down), autoregressive completion, the
//! evaluation metrics and the experiment harness.

pub mod decode;
pub mod harness;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod tensor;
