//! Simulation of local laser-heating spectral tuning of quantum dots and
//! photonic-crystal cavities on thermally isolated suspended membranes, and
//! inverse solvers that pick heating powers for spectral targets.

// `!(x > 0.0)` is used on purpose throughout so that NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod device;
pub mod exec;
pub mod fit;
pub mod output;
pub mod roots;
pub mod spectral;
pub mod sweep;
pub mod thermal;
