//! Deterministic sampling of S³ and sphere maximization with a local polish.
//!
//! Used as the brute-force oracle for margins and operator norms.

use crate::linalg::{Mat4, Vec4};
use std::f64::consts::TAU;
use std::sync::OnceLock;

/// Quasi-uniform point set on the unit 3-sphere.
///
/// Points come from the additive R3 sequence pushed through the
/// area-preserving map `(u1, u2, u3) ↦ (√(1-u1)·e^{2πi u2}, √u1·e^{2πi u3})`.
#[derive(Clone, Debug)]
pub struct SphereSampler {
    points: Vec<Vec4>,
}

impl SphereSampler {
    pub fn new(n: usize) -> Self {
        // Plastic-number generalization: φ₃ is the real root of x⁴ = x + 1.
        let mut g = 1.0f64;
        for _ in 0..64 {
            g = (1.0 + g).powf(0.25);
        }
        let alpha = [1.0 / g, 1.0 / (g * g), 1.0 / (g * g * g)];
        let points = (0..n)
            .map(|k| {
                let kf = k as f64 + 0.5;
                let u1 = (kf * alpha[0]).fract();
                let u2 = (kf * alpha[1]).fract();
                let u3 = (kf * alpha[2]).fract();
                let (s2, c2) = (TAU * u2).sin_cos();
                let (s3, c3) = (TAU * u3).sin_cos();
                let p = (1.0 - u1).sqrt();
                let q = u1.sqrt();
                Vec4::new(p * s2, p * c2, q * s3, q * c3)
            })
            .collect();
        Self { points }
    }

    pub fn points(&self) -> &[Vec4] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Shared sampler used for operator norms (quadratic objectives, one local max).
pub fn coarse_sampler() -> &'static SphereSampler {
    static S: OnceLock<SphereSampler> = OnceLock::new();
    S.get_or_init(|| SphereSampler::new(512))
}

/// Shared dense sampler, 20 000 points.
pub fn dense_sampler() -> &'static SphereSampler {
    static S: OnceLock<SphereSampler> = OnceLock::new();
    S.get_or_init(|| SphereSampler::new(20_000))
}

fn tangent_basis(x: &Vec4) -> [Vec4; 3] {
    let mut basis: Vec<Vec4> = Vec::with_capacity(3);
    for k in 0..4 {
        let mut v = Vec4::zeros();
        v[k] = 1.0;
        v -= x * x.dot(&v);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let n = v.norm();
        if n > 1e-6 {
            basis.push(v / n);
            if basis.len() == 3 {
                break;
            }
        }
    }
    [basis[0], basis[1], basis[2]]
}

/// Pattern search on the sphere starting from `x`, stepping along tangent
/// directions and halving the step when no move improves `f`.
pub fn polish_max<F: Fn(&Vec4) -> f64>(f: &F, x: Vec4, tol: f64) -> (f64, Vec4) {
    let mut x = x.normalize();
    let mut fx = f(&x);
    let mut step = 0.05;
    let mut basis = tangent_basis(&x);
    while step > tol {
        let mut moved = false;
        for t in basis {
            for sign in [1.0, -1.0] {
                let y = (x + t * (sign * step)).normalize();
                let fy = f(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    moved = true;
                }
            }
        }
        if moved {
            basis = tangent_basis(&x);
        } else {
            step *= 0.5;
        }
    }
    (fx, x)
}

/// Maximize `f` over the sampled sphere, then polish the best sample.
pub fn maximize<F: Fn(&Vec4) -> f64>(f: F, sampler: &SphereSampler) -> (f64, Vec4) {
    let (mut best, mut arg) = (f64::NEG_INFINITY, Vec4::new(1.0, 0.0, 0.0, 0.0));
    for p in sampler.points() {
        let v = f(p);
        if v > best {
            best = v;
            arg = *p;
        }
    }
    polish_max(&f, arg, 1e-10)
}

pub fn minimize<F: Fn(&Vec4) -> f64>(f: F, sampler: &SphereSampler) -> (f64, Vec4) {
    let (v, x) = maximize(|y| -f(y), sampler);
    (-v, x)
}

/// `max_{|x|=1} |M x|` by sampling, power-iteration ascent from the best
/// sample, then polish.
pub fn operator_norm(m: &Mat4) -> f64 {
    let f = |x: &Vec4| (m * x).norm_squared();
    let mut x = coarse_sampler().points().iter().copied().max_by(|a, b| f(a).total_cmp(&f(b))).unwrap_or_else(|| Vec4::new(1.0, 0.0, 0.0, 0.0));
    let mtm = m.transpose() * m;
    let mut fx = f(&x);
    for _ in 0..500 {
        let y = mtm * x;
        let n = y.norm();
        if n == 0.0 {
            break;
        }
        let y = y / n;
        let fy = f(&y);
        if fy <= fx * (1.0 + 1e-15) {
            break;
        }
        x = y;
        fx = fy;
    }
    polish_max(&f, x, 1e-10).0.sqrt()
}
