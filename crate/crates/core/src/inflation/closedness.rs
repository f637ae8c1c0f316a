//! The inflated form in ambient coordinates `(s1, s2, x, y)` of a local chart.
//!
//! The connection form is `α = dθ + μ·s1·ds2` with `μ = m` for `Z·Z = −m` and
//! `μ = −m` for `Z·Z = m`, so `dα = μ·ds1∧ds2` away from `Z`. Then
//! `ω_f = (1 + μ(½r² − f))·ds1∧ds2 + (1 − f'/r)·[dx∧dy + μ·s1·(x dx + y dy)∧ds2]`.

use super::{BundleCase, RadialProfile};
use crate::linalg::{Mat4, Vec4};

fn mu(case: BundleCase) -> f64 {
    match case {
        BundleCase::Trivial => 0.0,
        BundleCase::Negative(m) => m as f64,
        BundleCase::Positive(m) => -(m as f64),
    }
}

fn set(m: &mut Mat4, i: usize, j: usize, v: f64) {
    m[(i, j)] = v;
    m[(j, i)] = -v;
}

/// Matrix of `ω_f` at `p = (s1, s2, x, y)`.
pub fn ambient_form(case: BundleCase, profile: &RadialProfile, p: [f64; 4]) -> Mat4 {
    let [s1, _s2, x, y] = p;
    let r = x.hypot(y);
    let (f, fp) = profile.eval(r);
    let mut w = Mat4::zeros();
    if case == BundleCase::Trivial {
        set(&mut w, 0, 1, 1.0);
        set(&mut w, 2, 3, f);
        return w;
    }
    let m = mu(case);
    let q = if r > 0.0 { 1.0 - fp / r } else { 1.0 };
    set(&mut w, 0, 1, 1.0 + m * (0.5 * r * r - f));
    set(&mut w, 2, 3, q);
    set(&mut w, 2, 1, q * m * s1 * x);
    set(&mut w, 3, 1, q * m * s1 * y);
    w
}

/// Frame `(e1, e2, e3, e4)`: normalized horizontal lifts of `∂s1, ∂s2` and `∂x, ∂y`.
pub fn adapted_frame(case: BundleCase, p: [f64; 4]) -> Mat4 {
    let [s1, _s2, x, y] = p;
    let m = mu(case);
    let r2 = x * x + y * y;
    let p0 = (1.0 + 0.5 * m * r2).sqrt();
    let e1 = Vec4::new(1.0, 0.0, 0.0, 0.0) / p0;
    // ∂θ = −y∂x + x∂y and α(∂s2 − μ s1 ∂θ) = 0.
    let e2 = Vec4::new(0.0, 1.0, m * s1 * y, -m * s1 * x) / p0;
    Mat4::from_columns(&[e1, e2, Vec4::new(0.0, 0.0, 1.0, 0.0), Vec4::new(0.0, 0.0, 0.0, 1.0)])
}

/// Largest component of the central-difference exterior derivative of `ω_f`
/// at `p` with step `h`.
pub fn exterior_derivative_defect(case: BundleCase, profile: &RadialProfile, p: [f64; 4], h: f64) -> f64 {
    let mut grads = [Mat4::zeros(); 4];
    for (k, g) in grads.iter_mut().enumerate() {
        let mut plus = p;
        let mut minus = p;
        plus[k] += h;
        minus[k] -= h;
        *g = (ambient_form(case, profile, plus) - ambient_form(case, profile, minus)) / (2.0 * h);
    }
    let mut worst = 0.0f64;
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let d = grads[i][(j, k)] + grads[j][(k, i)] + grads[k][(i, j)];
                worst = worst.max(d.abs());
            }
        }
    }
    worst
}
