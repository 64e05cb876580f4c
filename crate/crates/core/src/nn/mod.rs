//! Reverse-mode differentiable tensor operations.
//!
//! Every forward pass records onto a [`Graph`] tape; [`Graph::backward`]
//! replays it in reverse. All ops are generic over [`Real`] so the same
//! layer code runs in `f32` for training and in `f64` for gradient checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::atomic::{AtomicBool, Ordering};

use num_traits::{Float, NumAssign};

mod adam;
pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod ops;
mod params;
mod tensor;

pub use adam::Adam;
pub use graph::{corrupt_backward, BackwardCtx, BackwardFn, Gradients, Graph, Var};
pub use ops::Padding;
pub use params::{Init, ParamEntry, ParamId, ParameterStore};
pub use tensor::{Shape, Tensor};

/// Floating-point element type of a tensor.
pub trait Real:
    Float + NumAssign + Default + Debug + Display + Send + Sync + Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Value rounded to `f32`.
    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

static PARALLEL: AtomicBool = AtomicBool::new(false);

/// Enables intra-op parallelism over batch/channel planes.
///
/// Kernels partition work by output plane and keep a fixed summation order
/// inside each plane, so results do not depend on this setting.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}
