use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Scalar able to carry probabilities: `f32`, `f64`, or an exact rational.
///
/// Only field operations and ordering are needed, so every routine bounded by
/// this trait is exact when instantiated with a rational type.
pub trait Probability: Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug {
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }
}

impl<T> Probability for T where T: Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug {}
