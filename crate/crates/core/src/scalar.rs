//! Scalar abstraction shared by the numerical modules.
//!
//! Everything that does arithmetic on model values is generic over
//! [`Scalar`]; market data, metrics and checkpoints stay in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Slope of the leaky rectifier used by the relation-strength functions.
    const LEAKY_SLOPE: f64 = 0.2;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
