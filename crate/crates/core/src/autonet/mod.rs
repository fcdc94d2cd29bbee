//! Minimal dense-tensor engine for the fixed layer set used by the models.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod ops;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use graph::{GraphBuilder, Head, ModelGraph, Node, NodeId, Op, Param, ParamId};
pub use ops::{Mode, Padding};
pub use tensor::Tensor;
