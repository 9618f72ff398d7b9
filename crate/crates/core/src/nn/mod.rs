//! Small feed-forward network kernel: conv/dense/ReLU/sigmoid/flatten layers
//! with a hand-written backward pass, losses, optimizers and a gradient checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod optim;
pub mod spec;
pub mod tensor;

pub use gradcheck::{compare_gradients, grad_check, GradCheckReport};
pub use loss::Loss;
pub use network::{ForwardPass, Gradients, Network};
pub use optim::{clip_grad_norm, Optimizer, OptimizerKind};
pub use spec::{LayerSpec, NetworkSpec, SampleShape};
pub use tensor::Tensor;
