//! Finite-width Gaussian approximation certificates for wide random networks.

// `!(x > 0.0)` is used deliberately so that NaN is rejected with the other bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod certify;
pub mod gaussian;
pub mod interpolation;
pub mod kernel;
pub mod matrix;
pub mod network;
pub mod posterior;
pub mod quadrature;
pub mod rng;
