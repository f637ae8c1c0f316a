//! Almost complex structures on the tubular model `S¹_z × R_y × R²_w`.
//!
//! Along `Z = {w = 0}` the structure is `J_{B(z)}` in the standard frame.
//! Off `Z` it is conjugated by `P = [[I, 0], [−G(w), I]]` with
//! `G(w) = −½·J₀·(w1·I + w2·J₀)·C₁`, which makes the lower-left block grow
//! linearly in `|w|` with slope `‖C₁‖` when `B = 0`.

use crate::linalg::{block, j0, skew_block, Mat2, Mat4};
use crate::linear_core::SkewPart;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Skew part of `J` along the curve, as a function of the circle parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SkewProfile {
    Constant { a: f64, b: f64 },
    /// `N(z) = mean + amplitude·sin(z)`, direction angle `winding·z`.
    Sinusoidal { mean: f64, amplitude: f64, winding: i32 },
}

impl SkewProfile {
    pub fn zero() -> Self {
        SkewProfile::Constant { a: 0.0, b: 0.0 }
    }

    pub fn skew(&self, z: f64) -> SkewPart {
        match *self {
            SkewProfile::Constant { a, b } => SkewPart::new(a, b),
            SkewProfile::Sinusoidal { mean, amplitude, winding } => {
                let n = mean + amplitude * z.sin();
                let phi = winding as f64 * z;
                SkewPart::new(n * phi.cos(), n * phi.sin())
            }
        }
    }

    /// Supremum of `N` over the circle.
    pub fn n_max(&self) -> f64 {
        match *self {
            SkewProfile::Constant { a, b } => a.hypot(b),
            SkewProfile::Sinusoidal { mean, amplitude, .. } => (mean + amplitude.abs()).abs().max((mean - amplitude.abs()).abs()),
        }
    }
}

/// The family `J(z, w) = P(w)·J_{B(z)}·P(w)⁻¹`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcsFamily {
    pub skew: SkewProfile,
    /// `C₁ = ((c_a, c_b), (c_b, −c_a))`.
    #[serde(default)]
    pub twist: [f64; 2],
}

/// The four blocks of `J` in the local frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blocks {
    pub a: Mat2,
    pub b: Mat2,
    pub c: Mat2,
    pub d: Mat2,
}

impl Blocks {
    pub fn matrix(&self) -> Mat4 {
        block(&self.a, &self.b, &self.c, &self.d)
    }
}

impl AcsFamily {
    pub fn new(skew: SkewProfile, twist: [f64; 2]) -> Self {
        Self { skew, twist }
    }

    pub fn constant(a: f64, b: f64) -> Self {
        Self::new(SkewProfile::Constant { a, b }, [0.0, 0.0])
    }

    pub fn c1(&self) -> Mat2 {
        skew_block(self.twist[0], self.twist[1])
    }

    fn g(&self, w: [f64; 2]) -> Mat2 {
        let m = Mat2::identity() * w[0] + j0() * w[1];
        j0() * m * self.c1() * (-0.5)
    }

    /// Blocks at `(z, w)`: `A = J₀ + BG`, `B`, `C = J₀G − GJ₀ − GBG`, `D = J₀ − GB`.
    pub fn blocks(&self, z: f64, w: [f64; 2]) -> Blocks {
        let b = self.skew.skew(z).matrix();
        let g = self.g(w);
        let j = j0();
        Blocks {
            a: j + b * g,
            b,
            c: j * g - g * j - g * b * g,
            d: j - g * b,
        }
    }

    pub fn matrix(&self, z: f64, w: [f64; 2]) -> Mat4 {
        self.blocks(z, w).matrix()
    }

    /// `J` at a polar point `(z, r, θ)` of the normal disk.
    pub fn at_polar(&self, z: f64, r: f64, theta: f64) -> Blocks {
        let (s, c) = theta.sin_cos();
        self.blocks(z, [r * c, r * s])
    }
}

/// Uniform grid of `n` points on `[0, 2π)`.
pub fn circle_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}
