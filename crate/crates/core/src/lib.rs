#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod estimates;
pub mod gauss;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod lp;
pub mod operator;
pub mod oracle_mc;
pub mod point;
pub mod scalar;
pub mod wiener;

pub use kernel::{GaussianLaw, KernelContext, KernelError};
pub use linalg::Matrix;
pub use operator::{alpha, BlockSignature, OperatorConfig, OperatorError, OperatorSpec};
pub use point::SpaceTimePoint;
pub use scalar::Scalar;

pub type Operator = OperatorSpec<f64>;
pub type Point = SpaceTimePoint<f64>;
pub type Kernel = KernelContext<f64>;
pub type Mat = Matrix<f64>;

pub type OperatorF32 = OperatorSpec<f32>;
pub type KernelF32 = KernelContext<f32>;
