//! Numerical toolkit for deforming tame almost complex structures on
//! 4-dimensional symplectic models into compatible ones.
//!
//! The crate is organised bottom-up: [`linear_core`] handles a single fiber,
//! [`linear_isotopy`] deforms one fiber, [`inflation`] builds inflated forms on
//! disk-bundle models, [`jet_extension`] extends fiberwise data to a tubular
//! neighbourhood, and [`pipeline`] runs the step-by-step preparation along a
//! curve. [`reports`] drives everything from configuration files.

pub mod linalg;
pub mod linear_core;
pub mod inflation;
pub mod jet_extension;
pub mod linear_isotopy;
pub mod model;
pub mod pipeline;
pub mod reports;
pub mod smooth;
pub mod sphere;
pub mod tolerance;
