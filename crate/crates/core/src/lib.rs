#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decomposer;
pub mod design2d;
pub mod exposure;
pub mod harness;
pub mod health_model;
pub mod io;
pub mod lasso;
pub mod sparse;
pub mod wavelet_basis;
