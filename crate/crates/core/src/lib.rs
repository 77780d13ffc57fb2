//! Spectral curves `y² = λ a(λ)` of finite-type CMC planes: period-constrained
//! pencils, winding invariants, handle attachment, Whitham deformations and
//! the Grassmannian model of the gcd stratification.

pub mod curve;
pub mod error;
pub mod grassmann;
pub mod invariants;
pub mod linalg;
mod pairs;
pub mod periods;
pub mod polyring;
pub mod quadrature;
pub mod sampling;
pub mod whitham;

pub use curve::{build_curve, CurveSpec, SpectralCurve};
pub use error::{Error, Result};
pub use periods::{solve_ba, DerivedPencil, PencilBasis};
pub use polyring::{CPoly, RealityReport};
pub use quadrature::QuadConfig;
