//! Dense linear algebra, seeded sampling and the manual forward/backward
//! passes of a linear layer.

mod linear;
mod matrix;
mod rng;

pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use matrix::Matrix;
pub(crate) use matrix::read_u64;
pub use rng::{gaussian_sample, Purpose, Rng};
