//! Kernels `s_t(x,y)`, the operators `theta_t`, and the vertical and conical
//! square functions evaluated with a shared log-midpoint rule in `t`.

mod certify;
mod kernel;
mod quadrature;
mod square;

pub use certify::{certify_kernel, KernelReport, KernelWitness, SamplerSpec};
pub use kernel::{KernelSpec, MeanZero, SizeProfile, TimeKernel, TransformedKernel};
pub use quadrature::{Quadrature, TimeRange};
pub use square::{
    conical_sf_sq, testing_functional, theta, transform_kernel, vertical_sf_sq, TestingValue,
};
