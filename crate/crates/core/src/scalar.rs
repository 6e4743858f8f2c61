//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point element type: `f32` or `f64`.
///
/// All models, losses and metrics are generic over this trait. Persistence
/// always goes through `f64`, so checkpoints are lossless for both widths.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Probability floor applied before every logarithm or division by a probability.
pub const PROB_FLOOR: f64 = 1e-12;
