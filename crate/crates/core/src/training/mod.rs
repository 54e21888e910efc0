//! Offset log loss, momentum SGD, rebalanced sampling, the training loop, and the linear transfer head.

mod config;
mod linear_head;
mod loss;
mod optim;
mod sampling;
mod trainer;

pub use config::*;
pub use linear_head::*;
pub use loss::*;
pub use optim::*;
pub use sampling::*;
pub use trainer::*;
