//! Reverse-mode differentiation substrate for the learned components.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod store;

pub use gradcheck::{grad_check, grad_check_report, grad_check_subset, relative_error, ParamCheck};
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use layers::{mlp_forward, Activation, DenseLayer, LstmCell, Mlp};
pub use store::{ParamGrads, ParamGroup, ParamId, ParamStore, Tensor};
