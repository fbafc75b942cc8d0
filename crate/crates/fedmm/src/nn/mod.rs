//! Minimal dense neural-network core: matrices, two-tower encoders with
//! L2-normalized outputs, a linear multi-label head, exact batch gradients,
//! and Adam. Everything operates on `f64` and round-trips through a single
//! flat parameter vector so federated averaging can treat models as plain
//! numeric vectors.

pub mod adam;
pub mod backprop;
pub mod encoder;
pub mod linalg;
pub mod loss;
pub mod model;
