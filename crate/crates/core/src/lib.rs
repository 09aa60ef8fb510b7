//! Geodesics, covariant derivatives and Finsler lengths on manifolds modeled
//! on graded-seminorm spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod cli;
pub mod covariant;
pub mod curve;
pub mod error;
pub mod family;
pub mod finsler;
pub mod geodesic;
pub mod graded;
pub mod injectivity;
pub mod kernel;
pub mod linalg;
pub mod ode;
pub mod parallel;
pub mod problem;
pub mod ricci;
pub mod selftest;
pub mod spd;
pub mod spray;
pub mod variational;

pub use error::{GeoError, Result};
