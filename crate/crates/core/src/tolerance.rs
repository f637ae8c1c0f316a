//! Tolerance tiers used throughout the crate.

use serde::{Deserialize, Serialize};

/// Exact algebraic identities (matrix products, involutions).
pub const STRUCTURAL: f64 = 1e-12;
/// Equalities that follow from closed-form consequences.
pub const DERIVED: f64 = 1e-9;
/// Agreement with sampled or brute-force oracles.
pub const SAMPLED: f64 = 1e-6;

/// A runtime-configurable copy of the three tiers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub structural: f64,
    pub derived: f64,
    pub sampled: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            structural: STRUCTURAL,
            derived: DERIVED,
            sampled: SAMPLED,
        }
    }
}

impl Tolerances {
    pub fn uniform(value: f64) -> Self {
        Self {
            structural: value,
            derived: value,
            sampled: value,
        }
    }
}
