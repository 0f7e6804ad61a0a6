//! Random and skew-product Hénon map dynamics.

pub mod averaging;
pub mod currents;
pub mod ergodic;
pub mod error;
pub mod family;
pub mod green;
pub mod maps;
pub mod scalar;
pub mod sequence;
pub mod slice;
pub mod stats;

pub use error::{Error, Result};
pub use family::{AffineCoeff, BaseDynamics, FactorRule, HenonFamily, ParameterDomain, ParameterPoint};
pub use maps::{Composite, Factor, Mat2, Point2};
pub use scalar::Scalar;
pub use sequence::{OrbitDirection, ParameterSequence};

/// C² point in double precision.
pub type ComplexPoint2 = Point2<f64>;
pub type ComplexPoint2F32 = Point2<f32>;
pub type HenonFactor = Factor<f64>;
pub type HenonFactorF32 = Factor<f32>;
pub type HenonComposite = Composite<f64>;
pub type HenonCompositeF32 = Composite<f32>;
