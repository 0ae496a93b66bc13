//! Dense kernels and a tape-based reverse-mode autodiff engine.
//!
//! Training runs in `f32`; gradient verification runs the same code in `f64`
//! (every type here is generic over [`Real`]).

mod gradcheck;
mod graph;
pub mod kernels;
mod param;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheck, LossFn};
pub use graph::{Gradients, Graph, NodeId};
pub use param::{accumulate_into, Parameter};
pub use tensor::Tensor;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Layer-norm epsilon used throughout the encoder.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Floating-point element type of tensors.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
