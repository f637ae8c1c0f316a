//! The linear diffeotopy `Ψ_t` that deforms `(ω₀, J_B)` into a compatible pair.
//!
//! In a unitary frame `Ψ_t = [[I, α·t·J₀B], [0, α·I]]` with
//! `α(t) = (1 − N²·t(1−t))^{-1/2}`. It pulls `ω_t = (1−t)ω + t·ι(ω)` back to
//! `ω`, and the pulled-back structure has skew block `(1−2t)·α(t)·B`.

use crate::linalg::{block, j0, skew_block, Mat2, Mat4};
use crate::linear_core::{iota, AcsMatrix, SkewPart, TwoForm};
use crate::sphere::operator_norm;
use crate::tolerance::DERIVED;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsotopyError {
    #[error("skew norm N = {0} must lie in [0, 2)")]
    SkewOutOfRange(f64),
    #[error("time t = {0} must lie in [0, 1/2]")]
    TimeOutOfRange(f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("B is not of the form ((a, b), (b, -a)) (defect {0:.3e})")]
    SkewShape(f64),
    #[error("defect {value:.6e} exceeds the bound ((α-1)² + (tNα)²)^(1/2) = {bound:.6e}")]
    BoundViolated { value: f64, bound: f64 },
    #[error(
        "step {t_prime} → {t} is below (ε/√2)(1/N − 1/2) = {step_bound:.6e} but the defect {value:.6e} ≥ ε = {epsilon}"
    )]
    StepLemmaViolated { t_prime: f64, t: f64, value: f64, epsilon: f64, step_bound: f64 },
}

/// `α(t) = (1 − N²·t(1−t))^{-1/2}`.
pub fn alpha(t: f64, n: f64) -> Result<f64, IsotopyError> {
    if !(0.0..2.0).contains(&n) {
        return Err(IsotopyError::SkewOutOfRange(n));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(IsotopyError::TimeOutOfRange(t));
    }
    Ok((1.0 - n * n * t * (1.0 - t)).powf(-0.5))
}

/// Skew norm after pulling back by `Ψ_t`: `|1 − 2t|·α(t)·N`.
pub fn n_of_t(t: f64, n: f64) -> Result<f64, IsotopyError> {
    Ok((1.0 - 2.0 * t).abs() * alpha(t, n)? * n)
}

/// Skew block `B` in a unitary frame together with its norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotopyContext {
    b: Mat2,
    n: f64,
}

impl IsotopyContext {
    pub fn new(b: Mat2) -> Result<Self, IsotopyError> {
        let a = 0.5 * (b[(0, 0)] - b[(1, 1)]);
        let c = 0.5 * (b[(0, 1)] + b[(1, 0)]);
        let defect = (b - skew_block(a, c)).amax();
        if defect > DERIVED {
            return Err(IsotopyError::SkewShape(defect));
        }
        let n = a.hypot(c);
        if n >= 2.0 {
            return Err(IsotopyError::SkewOutOfRange(n));
        }
        Ok(Self { b, n })
    }

    pub fn from_skew(s: &SkewPart) -> Result<Self, IsotopyError> {
        Self::new(s.matrix())
    }

    pub fn b(&self) -> &Mat2 {
        &self.b
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    /// `J_B` in the unitary frame.
    pub fn j_b(&self) -> AcsMatrix {
        AcsMatrix::block_form(&self.b)
    }

    /// `L_t = t·J₀·B : V₂ → V₁`.
    pub fn l_t(&self, t: f64) -> Mat2 {
        j0() * self.b * t
    }

    /// `ω_t = (1 − t)ω₀ + t·ι(ω₀)`.
    pub fn omega_t(&self, t: f64) -> TwoForm {
        let w = TwoForm::standard();
        let io = iota(&w, &self.j_b()).expect("context has N < 2");
        w.lerp(&io, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotopyStep {
    pub t: f64,
    pub alpha: f64,
    pub psi: Mat4,
    pub psi_inverse: Mat4,
    pub pulled_j: AcsMatrix,
    pub n_of_t: f64,
}

/// `Ψ_t`, its inverse and `Ψ_t^* J_B`, for `t ∈ [0, 1/2]`.
pub fn psi(ctx: &IsotopyContext, t: f64) -> Result<IsotopyStep, IsotopyError> {
    if !(0.0..=0.5).contains(&t) {
        return Err(IsotopyError::TimeOutOfRange(t));
    }
    let a = alpha(t, ctx.n)?;
    let id = Mat2::identity();
    let l = ctx.l_t(t);
    let psi = block(&id, &(l * a), &Mat2::zeros(), &(id * a));
    let psi_inverse = block(&id, &(-l), &Mat2::zeros(), &(id / a));
    // Closed form of Ψ⁻¹ J_B Ψ; checked against the product in tests.
    let pulled_j = AcsMatrix::block_form(&(ctx.b * ((1.0 - 2.0 * t) * a)));
    Ok(IsotopyStep {
        t,
        alpha: a,
        psi,
        psi_inverse,
        pulled_j,
        n_of_t: (1.0 - 2.0 * t).abs() * a * ctx.n,
    })
}

/// `Ψ_t` at the matrix level for arbitrary `t ∈ [0, 1]`; used by the pipeline.
pub fn psi_matrix(b: &Mat2, n: f64, t: f64) -> Result<(Mat4, Mat4), IsotopyError> {
    let a = alpha(t, n)?;
    let id = Mat2::identity();
    let l = j0() * b * t;
    Ok((
        block(&id, &(l * a), &Mat2::zeros(), &(id * a)),
        block(&id, &(-l), &Mat2::zeros(), &(id / a)),
    ))
}

/// Bound `((α − 1)² + (t·N·α)²)^{1/2}` on `‖Ψ_t − Id‖`.
pub fn psi_defect_bound(t: f64, n: f64) -> Result<f64, IsotopyError> {
    let a = alpha(t, n)?;
    Ok(((a - 1.0).powi(2) + (t * n * a).powi(2)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormDefect {
    pub value: f64,
    pub bound: f64,
}

/// `‖Ψ_t − Id‖` by sphere maximization, checked against its bound.
pub fn psi_norm_defect(ctx: &IsotopyContext, t: f64) -> Result<NormDefect, IsotopyError> {
    let step = psi(ctx, t)?;
    let value = operator_norm(&(step.psi - Mat4::identity()));
    let bound = psi_defect_bound(t, ctx.n)?;
    if value > bound + DERIVED {
        return Err(IsotopyError::BoundViolated { value, bound });
    }
    Ok(NormDefect { value, bound })
}

/// `‖Ψ_t Ψ_{t'}⁻¹ − Id‖` by sphere maximization.
pub fn composition_defect(ctx: &IsotopyContext, t_prime: f64, t: f64) -> Result<f64, IsotopyError> {
    let a = psi(ctx, t)?;
    let b = psi(ctx, t_prime)?;
    Ok(operator_norm(&(a.psi * b.psi_inverse - Mat4::identity())))
}

/// `‖Ψ_t Ψ_{t'}⁻¹ − Id‖` in closed form. The difference is
/// `[[0, X], [0, (y − 1)·I]]` with `y = α_t/α_{t'}` and the conformal block
/// `X = (α_t·t/α_{t'} − t')·J₀B`, so its norm is `√(‖X‖² + (y − 1)²)`.
pub fn composition_defect_exact(n: f64, t_prime: f64, t: f64) -> Result<f64, IsotopyError> {
    let (at, ap) = (alpha(t, n)?, alpha(t_prime, n)?);
    let x = (at * t / ap - t_prime) * n;
    let y = at / ap;
    Ok((x * x + (y - 1.0).powi(2)).sqrt())
}

/// Checks the step lemma: if `t − t' < (ε/√2)(1/N − 1/2)` then the composition defect is `< ε`.
pub fn check_step_lemma(ctx: &IsotopyContext, t_prime: f64, t: f64, epsilon: f64) -> Result<f64, IsotopyError> {
    let value = composition_defect(ctx, t_prime, t)?;
    let step_bound = lemma_step_bound(ctx.n, epsilon)?;
    if (t - t_prime).abs() < step_bound && value >= epsilon {
        return Err(IsotopyError::StepLemmaViolated { t_prime, t, value, epsilon, step_bound });
    }
    Ok(value)
}

/// `(ε/√2)·(1/N − 1/2)`, infinite for `N = 0`.
pub fn lemma_step_bound(n: f64, epsilon: f64) -> Result<f64, IsotopyError> {
    if !(0.0..2.0).contains(&n) {
        return Err(IsotopyError::SkewOutOfRange(n));
    }
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(IsotopyError::BadEpsilon(epsilon));
    }
    if n == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(epsilon / std::f64::consts::SQRT_2 * (1.0 / n - 0.5))
}

/// Fraction of the lemma bound used as the actual step.
pub const STEP_SAFETY: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimePartition {
    pub times: Vec<f64>,
    pub step_bound: f64,
    pub epsilon: f64,
    pub n_max: f64,
}

impl TimePartition {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Uniform partition with `d` steps, regardless of the lemma.
    pub fn uniform(d: usize, n_max: f64, epsilon: f64) -> Result<Self, IsotopyError> {
        let d = d.max(1);
        Ok(Self {
            times: (0..=d).map(|k| 0.5 * k as f64 / d as f64).collect(),
            step_bound: lemma_step_bound(n_max, epsilon)?,
            epsilon,
            n_max,
        })
    }
}

/// Uniform partition of `[0, 1/2]` with step `0.95 ×` the lemma bound.
pub fn time_partition(n_max: f64, epsilon: f64) -> Result<TimePartition, IsotopyError> {
    let bound = lemma_step_bound(n_max, epsilon)?;
    let d = if bound.is_infinite() {
        1
    } else {
        (0.5 / (STEP_SAFETY * bound)).ceil().max(1.0) as usize
    };
    TimePartition::uniform(d, n_max, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_core::{skew_norm, split, tameness_margin};
    use crate::linalg::Vec4;
    use crate::sphere::{maximize, coarse_sampler};
    use proptest::prelude::*;

    fn ctx(a: f64, b: f64) -> IsotopyContext {
        IsotopyContext::new(skew_block(a, b)).unwrap()
    }

    fn plane() -> [Vec4; 2] {
        [Vec4::new(1.0, 0.0, 0.0, 0.0), Vec4::new(0.0, 1.0, 0.0, 0.0)]
    }

    /// Oracle: `Ψᵀ ω_t Ψ = ω` evaluated from matrices alone.
    fn pullback_defect(c: &IsotopyContext, t: f64) -> f64 {
        let s = psi(c, t).unwrap();
        let wt = c.omega_t(t);
        (s.psi.transpose() * wt.matrix() * s.psi - TwoForm::standard().matrix()).amax()
    }

    #[test]
    fn alpha_examples() {
        let a = alpha(0.5, 1.0).unwrap();
        assert!((a - 0.75f64.powf(-0.5)).abs() < 1e-15);
        assert!(pullback_defect(&ctx(1.0, 0.0), 0.5) < 1e-12);
        let sweep: Vec<f64> = [1.9, 1.99, 1.999].iter().map(|&n| alpha(0.5, n).unwrap()).collect();
        assert!(sweep[0] < sweep[1] && sweep[1] < sweep[2] && sweep[2] > 20.0);
        assert!(alpha(0.5, 2.0).is_err());
    }

    #[test]
    fn psi_examples() {
        let c = ctx(0.6, 0.8);
        let s0 = psi(&c, 0.0).unwrap();
        assert_eq!(s0.psi, Mat4::identity());
        assert_eq!(s0.pulled_j, c.j_b());

        let s = psi(&c, 0.5).unwrap();
        let sd = split(&TwoForm::standard(), &s.pulled_j, plane()).unwrap();
        assert!(skew_norm(&sd).unwrap().n < 1e-15);
        assert!(crate::linear_core::is_invariant(&TwoForm::standard(), &s.pulled_j));

        let q = psi(&ctx(1.0, 0.0), 0.25).unwrap();
        let sd = split(&TwoForm::standard(), &q.pulled_j, plane()).unwrap();
        let n = skew_norm(&sd).unwrap().n;
        assert!((n - 0.5 * (13.0f64 / 16.0).powf(-0.5)).abs() < 1e-12);
        assert!((q.n_of_t - n).abs() < 1e-12);
        assert!(psi(&c, 0.6).is_err());
    }

    #[test]
    fn closed_form_pullback_matches_product() {
        for &(a, b) in &[(0.3, 0.4), (1.2, -0.9), (0.0, 1.95)] {
            let c = ctx(a, b);
            for k in 0..=10 {
                let s = psi(&c, 0.05 * k as f64).unwrap();
                let direct = s.psi_inverse * c.j_b().matrix() * s.psi;
                assert!((direct - s.pulled_j.matrix()).amax() < 1e-12);
                assert!((s.psi * s.psi_inverse - Mat4::identity()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn norm_defect_examples() {
        let c = ctx(1.0, 0.0);
        assert!(psi_norm_defect(&c, 0.0).unwrap().value < 1e-12);
        let d = psi_norm_defect(&c, 0.5).unwrap();
        let a = 2.0 / 3f64.sqrt();
        assert!((d.bound - ((a - 1.0).powi(2) + (a / 2.0).powi(2)).sqrt()).abs() < 1e-12);
        assert!(d.value <= d.bound + 1e-9);
    }

    #[test]
    fn composition_examples() {
        let c = ctx(1.0, 0.0);
        assert!(composition_defect(&c, 0.2, 0.2).unwrap() < 1e-12);
        let bound = lemma_step_bound(1.0, 0.1).unwrap();
        assert!((bound - 0.1 / 2f64.sqrt() * 0.5).abs() < 1e-15);
        assert!((bound - 0.03536).abs() < 1e-5);
        assert!(check_step_lemma(&c, 0.0, 0.03, 0.1).unwrap() < 0.1);
        let z = ctx(0.0, 0.0);
        for &(p, q) in &[(0.0, 0.5), (0.1, 0.3)] {
            assert_eq!(composition_defect(&z, p, q).unwrap(), 0.0);
        }
    }

    #[test]
    fn exact_composition_defect_matches_maximization() {
        for &(n, p, q) in &[(1.0, 0.0, 0.03), (1.9, 0.2, 0.25), (0.5, 0.4, 0.5), (1.5, 0.0, 0.5)] {
            let c = ctx(n, 0.0);
            let sampled = composition_defect(&c, p, q).unwrap();
            let exact = composition_defect_exact(n, p, q).unwrap();
            assert!((sampled - exact).abs() < 1e-9, "{n} {p} {q}: {sampled} {exact}");
        }
    }

    #[test]
    fn partition_examples() {
        let p = time_partition(1.0, 0.1).unwrap();
        assert_eq!(p.steps(), 15);
        assert!((p.step_bound - 0.035355).abs() < 1e-5);
        assert_eq!(time_partition(0.0, 0.1).unwrap().steps(), 1);
        assert_eq!(time_partition(1e-9, 0.1).unwrap().steps(), 1);
        let p = time_partition(1.9, 0.05).unwrap();
        let c = ctx(1.9, 0.0);
        for w in p.times.windows(2) {
            assert!(composition_defect(&c, w[0], w[1]).unwrap() < 0.05);
        }
        assert_eq!(*p.times.last().unwrap(), 0.5);
    }

    #[test]
    fn margin_of_pullback_follows_n_of_t() {
        let c = ctx(0.9, -1.1);
        let g0 = split(&TwoForm::standard(), &c.j_b(), plane()).unwrap().g;
        for k in 0..=20 {
            let t = 0.025 * k as f64;
            let s = psi(&c, t).unwrap();
            let rep = tameness_margin(&TwoForm::standard(), &s.pulled_j, &Mat4::identity()).unwrap();
            assert!((rep.margin - (1.0 - s.n_of_t / 2.0)).abs() < 1e-9);
            let g = split(&TwoForm::standard(), &s.pulled_j, plane()).unwrap().g;
            assert!((g - g0).amax() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn pullback_identity(n in 0.0f64..1.999, phase in 0.0f64..6.3, t in 0.0f64..0.5) {
            let c = ctx(n * phase.cos(), n * phase.sin());
            prop_assert!(pullback_defect(&c, t) < 1e-12 * alpha(t, n).unwrap().powi(2).max(1.0));
            let s = psi(&c, t).unwrap();
            prop_assert!(crate::linear_core::validate_acs(&s.pulled_j) || s.pulled_j.square_defect() < 1e-12);
        }

        #[test]
        fn n_of_t_is_decreasing_and_symmetric(n in 0.01f64..1.999, t in 0.0f64..0.49) {
            let f = |s: f64| (1.0 - 2.0 * s).abs() * alpha(s, n).unwrap() * n;
            prop_assert!(f(t + 0.01) < f(t));
            prop_assert!((f(t) - f(1.0 - t)).abs() < 1e-12);
            prop_assert!(f(t) < 2.0);
        }

        #[test]
        fn defect_bound_holds(n in 0.0f64..1.99, t in 0.0f64..0.5) {
            prop_assert!(psi_norm_defect(&ctx(n, 0.0), t).is_ok());
        }

        #[test]
        fn step_lemma_in_both_orders(n in 0.01f64..1.99, eps in 0.001f64..0.5, tp in 0.0f64..0.5, frac in 0.0f64..1.0) {
            let bound = lemma_step_bound(n, eps).unwrap();
            let t = (tp + frac * bound).min(0.5);
            let (ap, at) = (alpha(tp, n).unwrap(), alpha(t, n).unwrap());
            let fwd = composition_defect_exact(n, tp, t).unwrap();
            let rev = ((at * (t - tp) * n).powi(2) + (at / ap - 1.0).powi(2)).sqrt();
            prop_assert!(fwd < eps);
            prop_assert!(rev < eps);
        }
    }

    #[test]
    fn reverse_order_closed_form_matches_maximization() {
        let (n, tp, t) = (1.7, 0.1, 0.14);
        let c = ctx(n, 0.0);
        let (a, b) = (psi(&c, t).unwrap(), psi(&c, tp).unwrap());
        let m = b.psi_inverse * a.psi - Mat4::identity();
        let sampled = maximize(|x| (m * x).norm_squared(), coarse_sampler()).0.sqrt();
        let (ap, at) = (alpha(tp, n).unwrap(), alpha(t, n).unwrap());
        let exact = ((at * (t - tp) * n).powi(2) + (at / ap - 1.0).powi(2)).sqrt();
        assert!((sampled - exact).abs() < 1e-9);
    }
}
