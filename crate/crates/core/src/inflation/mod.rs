//! Inflated forms `ω_f` on disk-bundle models around a J-holomorphic surface.
//!
//! In the frame adapted to the connection, `ω_f = diag(a·J₀ᵀ, b·J₀ᵀ)` with
//!
//! | case            | a                         | b          |
//! |-----------------|---------------------------|------------|
//! | `Z·Z = 0`       | `1`                       | `f`        |
//! | `Z·Z = −m < 0`  | `1 − m f/(1 + ½ m r²)`    | `1 − f'/r` |
//! | `Z·Z = m > 0`   | `1 + m f/(1 − ½ m r²)`    | `1 − f'/r` |
//!
//! and `J` has blocks `(A, B, C, D)` from [`crate::model::AcsFamily`].

mod closedness;
mod profile;

pub use closedness::{adapted_frame, ambient_form, exterior_derivative_defect};
pub use profile::{
    build_profile_negative, build_profile_positive, build_profile_trivial, positive_case_bound, ProfileSample, ProfileShape,
    RadialProfile, CAP_MARGIN,
};

use crate::linalg::{cholesky2, j0, min_eigen, spectral_norm2, sym, sym2, Mat2, Mat4, Vec4};
use crate::linear_core::{TamenessReport, TwoForm};
use crate::model::{circle_grid, AcsFamily};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Floor for measured epsilons on compatible models.
pub const EPS_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InflationError {
    #[error("J is not tame near Z: ½‖J₀ᵀB‖_g = {eps1:.6} ≥ 1 already at r = {radius:.3e}")]
    NotTameNearZ { eps1: f64, radius: f64 },
    #[error("M' = {m_prime} violates 0 ≤ M' < 1/m = {bound} (the bound −ω(Z)/(Z·Z) for Z·Z = −{m})")]
    NegativeBound { m: u32, m_prime: f64, bound: f64 },
    #[error("M' = {m_prime} violates M' < ((1 − ε₁²)/ε₁²)/m = {bound} for Z·Z = {m}, ε₁ = {eps1}")]
    PositiveBound { m: u32, m_prime: f64, eps1: f64, bound: f64 },
    #[error("profile is for {profile:?} but the model is {model:?}")]
    CaseMismatch { profile: BundleCase, model: BundleCase },
    #[error("positive model radius {r_max} must stay below 1/√m = {limit}")]
    RadiusTooLarge { r_max: f64, limit: f64 },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Self-intersection class of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BundleCase {
    Trivial,
    /// `Z·Z = −m`.
    Negative(u32),
    /// `Z·Z = m`.
    Positive(u32),
}

impl BundleCase {
    pub fn from_self_intersection(k: i32) -> Self {
        match k {
            0 => BundleCase::Trivial,
            k if k < 0 => BundleCase::Negative(k.unsigned_abs()),
            k => BundleCase::Positive(k as u32),
        }
    }

    pub fn self_intersection(&self) -> i32 {
        match *self {
            BundleCase::Trivial => 0,
            BundleCase::Negative(m) => -(m as i32),
            BundleCase::Positive(m) => m as i32,
        }
    }

    /// `(a, b)` at radius `r` for profile values `(f, f')`.
    pub fn coefficients(&self, r: f64, f: f64, f_prime: f64) -> (f64, f64) {
        let b_bundle = if r > 0.0 { 1.0 - f_prime / r } else { 1.0 };
        match *self {
            BundleCase::Trivial => (1.0, f),
            BundleCase::Negative(m) => {
                let m = m as f64;
                (1.0 - m * f / (1.0 + 0.5 * m * r * r), b_bundle)
            }
            BundleCase::Positive(m) => {
                let m = m as f64;
                (1.0 + m * f / (1.0 - 0.5 * m * r * r), b_bundle)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelGrid {
    pub n_r: usize,
    pub n_theta: usize,
    pub n_z: usize,
    /// Innermost radius as a fraction of `r_max`.
    pub r_min_ratio: f64,
}

impl Default for ModelGrid {
    fn default() -> Self {
        Self {
            n_r: 512,
            n_theta: 64,
            n_z: 128,
            r_min_ratio: 1e-10,
        }
    }
}

impl ModelGrid {
    /// Resolutions multiplied by `scale`, each kept at 2 or more.
    pub fn scaled(&self, scale: f64) -> Self {
        let sc = |n: usize| ((n as f64 * scale).round() as usize).max(2);
        Self {
            n_r: sc(self.n_r),
            n_theta: sc(self.n_theta),
            n_z: sc(self.n_z),
            r_min_ratio: self.r_min_ratio,
        }
    }
}

/// Discretized normal-disk model around `Z`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalModel {
    pub case: BundleCase,
    pub r_max: f64,
    pub grid: ModelGrid,
    pub family: AcsFamily,
}

impl NormalModel {
    pub fn new(case: BundleCase, r_max: f64, grid: ModelGrid, family: AcsFamily) -> Result<Self, InflationError> {
        if !(r_max > 0.0) || grid.n_r < 2 || grid.n_theta == 0 || grid.n_z == 0 || !(grid.r_min_ratio > 0.0 && grid.r_min_ratio < 1.0) {
            return Err(InflationError::BadParameter("model needs r_max > 0, n_r ≥ 2, n_theta, n_z ≥ 1 and 0 < r_min_ratio < 1".into()));
        }
        if let BundleCase::Positive(m) = case {
            let limit = 1.0 / (m as f64).sqrt();
            if r_max >= limit {
                return Err(InflationError::RadiusTooLarge { r_max, limit });
            }
        }
        Ok(Self { case, r_max, grid, family })
    }

    /// Log-spaced radii from `r_min_ratio·r_max` to `r_max`.
    pub fn radii(&self) -> Vec<f64> {
        let lo = self.r_max * self.grid.r_min_ratio;
        let n = self.grid.n_r;
        (0..n).map(|k| lo * (self.r_max / lo).powf(k as f64 / (n - 1) as f64)).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        circle_grid(self.grid.n_theta)
    }

    pub fn zs(&self) -> Vec<f64> {
        circle_grid(self.grid.n_z)
    }

    pub fn len(&self) -> usize {
        self.grid.n_r * self.grid.n_theta * self.grid.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Constants of the block estimates and the radius where they hold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPair {
    pub eps1: f64,
    pub eps2: f64,
    pub valid_radius: f64,
}

impl EpsilonPair {
    pub fn new(eps1: f64, eps2: f64, valid_radius: f64) -> Result<Self, InflationError> {
        if !(eps1 > 0.0 && eps1 < 1.0) || !(eps2 > 0.0) || !(valid_radius > 0.0) {
            return Err(InflationError::BadParameter(format!(
                "need 0 < ε₁ < 1, ε₂ > 0, valid_radius > 0; got ({eps1}, {eps2}, {valid_radius})"
            )));
        }
        Ok(Self { eps1, eps2, valid_radius })
    }

    /// The C-block constant rescaled by `1/√a₀`, `a₀ = 1 − mM'`, as the
    /// negative case requires.
    pub fn for_negative_bundle(&self, m: u32, m_prime: f64) -> Self {
        let a0 = 1.0 - m as f64 * m_prime;
        Self {
            eps2: self.eps2 / a0.sqrt(),
            ..*self
        }
    }
}

/// `½‖J₀ᵀB‖` and `½‖J₀ᵀC‖` measured in the `(g_A, g_D)` norms, where
/// `g_A = sym(J₀ᵀA)`, `g_D = sym(J₀ᵀD)`. `None` when either metric is not positive.
pub fn block_norms(a: &Mat2, b: &Mat2, c: &Mat2, d: &Mat2) -> Option<(f64, f64)> {
    let jt = j0().transpose();
    let la = cholesky2(&sym2(&(jt * a)))?;
    let ld = cholesky2(&sym2(&(jt * d)))?;
    let la_inv = la.try_inverse()?;
    let ld_inv = ld.try_inverse()?;
    let nb = spectral_norm2(&(la_inv * jt * b * ld_inv.transpose()));
    let nc = spectral_norm2(&(ld_inv * jt * c * la_inv.transpose()));
    Some((0.5 * nb, 0.5 * nc))
}

/// Per-shell sweep of the block estimates, from the innermost radius outwards.
pub fn estimate_epsilons(model: &NormalModel) -> Result<EpsilonPair, InflationError> {
    let (zs, thetas) = (model.zs(), model.thetas());
    let (mut e1, mut e2) = (EPS_FLOOR, EPS_FLOOR);
    let mut valid = None;
    for r in model.radii() {
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        let mut ok = true;
        for &z in &zs {
            for &th in &thetas {
                let bl = model.family.at_polar(z, r, th);
                match block_norms(&bl.a, &bl.b, &bl.c, &bl.d) {
                    Some((nb, nc)) => {
                        s1 = s1.max(nb);
                        s2 = s2.max(nc / r);
                    }
                    None => ok = false,
                }
            }
        }
        if !ok || s1.max(e1) >= 1.0 {
            if valid.is_none() {
                return Err(InflationError::NotTameNearZ { eps1: s1, radius: r });
            }
            break;
        }
        e1 = e1.max(s1);
        e2 = e2.max(s2);
        valid = Some(r);
    }
    EpsilonPair::new(e1, e2, valid.expect("at least one shell"))
}

/// `(r, f, f', a, b)` on one radial shell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FormCoefficients {
    pub r: f64,
    pub f: f64,
    pub f_prime: f64,
    pub a: f64,
    pub b: f64,
}

/// `ω_f` on the model grid; it depends on the radius only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormField {
    pub case: BundleCase,
    pub shells: Vec<FormCoefficients>,
}

impl FormField {
    pub fn form(&self, shell: usize) -> TwoForm {
        let c = &self.shells[shell];
        TwoForm::diagonal(c.a, c.b)
    }
}

pub fn omega_f(model: &NormalModel, profile: &RadialProfile) -> Result<FormField, InflationError> {
    if model.case != profile.case {
        return Err(InflationError::CaseMismatch { profile: profile.case, model: model.case });
    }
    let shells = model
        .radii()
        .into_iter()
        .map(|r| {
            let (f, f_prime) = profile.eval(r);
            let (a, b) = model.case.coefficients(r, f, f_prime);
            FormCoefficients { r, f, f_prime, a, b }
        })
        .collect();
    Ok(FormField { case: model.case, shells })
}

/// Value of `1 − (sufficient-condition left-hand side)`; positive means the
/// estimate chain certifies tameness.
pub fn sufficient_condition(case: BundleCase, c: &FormCoefficients, eps: &EpsilonPair) -> f64 {
    match case {
        BundleCase::Trivial => 1.0 - (eps.eps1 + eps.eps2 * c.r * c.f.sqrt()),
        _ => 1.0 - (eps.eps1 * c.a.max(0.0).sqrt() + c.r * eps.eps2 * c.b.max(0.0).sqrt()),
    }
}

/// One CSV row per radial shell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InflationRow {
    pub r: f64,
    pub f: f64,
    pub f_prime: f64,
    pub a: f64,
    pub b: f64,
    pub margin: f64,
    pub sufficient_condition: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InflationReport {
    /// Exact eigen-margins; point index is `(k_r·n_z + k_z)·n_theta + k_theta`.
    pub tameness: TamenessReport,
    pub sufficient_min: f64,
    pub sufficient_argmin_radius: f64,
    pub rows: Vec<InflationRow>,
}

impl InflationReport {
    pub fn tame(&self) -> bool {
        self.tameness.all_positive()
    }

    pub fn sufficient_holds(&self) -> bool {
        self.sufficient_min > 0.0
    }
}

/// Exact margin of `ω_f` against `J` at every grid point, measured in the
/// metric `diag(a, a, b, b)`, plus the sufficient condition per shell.
pub fn verify_tameness(field: &FormField, model: &NormalModel, eps: &EpsilonPair) -> InflationReport {
    let (zs, thetas) = (model.zs(), model.thetas());
    let mut rows = Vec::with_capacity(field.shells.len());
    let mut points = Vec::with_capacity(model.len());
    for c in &field.shells {
        let w = field_form_matrix(c);
        let scale = Vec4::new(c.a, c.a, c.b, c.b).map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 });
        let mut shell_min = f64::INFINITY;
        for &z in &zs {
            for &th in &thetas {
                let j = model.family.at_polar(z, c.r, th).matrix();
                let (m, v) = if c.a > 0.0 && c.b > 0.0 {
                    let d = Mat4::from_diagonal(&scale);
                    let (m, x) = min_eigen(&sym(&(d * w * j * d)));
                    (m, d * x)
                } else {
                    // Degenerate form: report a non-positive margin.
                    (c.a.min(c.b), Vec4::new(1.0, 0.0, 0.0, 0.0))
                };
                shell_min = shell_min.min(m);
                points.push((m, v));
            }
        }
        rows.push(InflationRow {
            r: c.r,
            f: c.f,
            f_prime: c.f_prime,
            a: c.a,
            b: c.b,
            margin: shell_min,
            sufficient_condition: sufficient_condition(field.case, c, eps),
        });
    }
    let (sufficient_min, sufficient_argmin_radius) = rows
        .iter()
        .map(|r| (r.sufficient_condition, r.r))
        .fold((f64::INFINITY, 0.0), |acc, x| if x.0 < acc.0 { x } else { acc });
    InflationReport {
        tameness: TamenessReport::collect(points),
        sufficient_min,
        sufficient_argmin_radius,
        rows,
    }
}

fn field_form_matrix(c: &FormCoefficients) -> Mat4 {
    *TwoForm::diagonal(c.a, c.b).matrix()
}

/// Largest trapezoid step in `ln r` used by [`class_shift`].
pub const SHIFT_STEP: f64 = 0.01;

/// Trapezoid rule in `s = ln r` over the model radii, each interval split
/// into steps no longer than [`SHIFT_STEP`].
fn log_trapezoid<F: Fn(f64) -> f64>(g: F, radii: &[f64]) -> f64 {
    radii
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].ln(), w[1].ln());
            let n = ((b - a) / SHIFT_STEP).ceil().max(1.0) as usize;
            let h = (b - a) / n as f64;
            let inner: f64 = (1..n).map(|k| g((a + h * k as f64).exp())).sum();
            h * (0.5 * (g(w[0]) + g(w[1])) + inner)
        })
        .sum()
}

/// Change in cohomology class, as a multiple of `PD(Z)`.
///
/// Trivial case: `2π∫(f − 1) r dr` over the model radii plus the disk inside
/// the innermost radius. Bundle cases: `−∫ f'(r) dr`, which Stokes' theorem
/// turns into `f(0)`.
pub fn class_shift(profile: &RadialProfile, model: &NormalModel) -> f64 {
    let radii = model.radii();
    let r0 = radii[0];
    let r_end = *radii.last().unwrap();
    match profile.case {
        BundleCase::Trivial => {
            let head = (profile.eval(r0).0 - 1.0) * r0 * r0 * 0.5;
            let body = log_trapezoid(|r| (profile.eval(r).0 - 1.0) * r * r, &radii);
            2.0 * PI * (head + body)
        }
        _ => {
            let head = profile.head - profile.eval(r0).0;
            let body = log_trapezoid(|r| -profile.eval(r).1 * r, &radii);
            head + body + profile.eval(r_end).0
        }
    }
}

/// Outcome of [`positive_obstruction`] for one head value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObstructionSweep {
    pub m: u32,
    pub eps1: f64,
    pub m_prime: f64,
    /// `((1 − ε₁²)/ε₁²)/m`.
    pub bound: f64,
    pub sufficient_min: f64,
    pub sufficient_argmin_radius: f64,
    /// Sufficient-condition value on the innermost shell.
    pub sufficient_inner: f64,
    pub inner_radius: f64,
    /// Smallest exact eigen-margin over the grid.
    pub margin: f64,
}

impl ObstructionSweep {
    pub fn sufficient_holds(&self) -> bool {
        self.sufficient_min > 0.0
    }

    pub fn tame(&self) -> bool {
        self.margin > 0.0
    }
}

/// Sufficient-condition and exact sweeps for a log profile with head `M'`,
/// built without the positive-case ceiling, on the worst-case model: constant
/// `B` with `N = 2ε₁` and no `C` block.
pub fn positive_obstruction(m: u32, eps1: f64, m_prime: f64, r_max: f64, grid: ModelGrid) -> Result<ObstructionSweep, InflationError> {
    if !(eps1 > 0.0 && eps1 < 1.0) || !(m_prime >= 0.0) {
        return Err(InflationError::BadParameter(format!("need 0 < ε₁ < 1 and M' ≥ 0; got ({eps1}, {m_prime})")));
    }
    let case = BundleCase::Positive(m);
    let model = NormalModel::new(case, r_max, grid, AcsFamily::constant(2.0 * eps1, 0.0))?;
    let eps = estimate_epsilons(&model)?;
    let profile = RadialProfile::log_profile(case, m_prime, 0.1 * r_max, 0.5 * r_max);
    let rep = verify_tameness(&omega_f(&model, &profile)?, &model, &eps);
    Ok(ObstructionSweep {
        m,
        eps1,
        m_prime,
        bound: positive_case_bound(m, eps1),
        sufficient_min: rep.sufficient_min,
        sufficient_argmin_radius: rep.sufficient_argmin_radius,
        sufficient_inner: rep.rows[0].sufficient_condition,
        inner_radius: rep.rows[0].r,
        margin: rep.tameness.margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SkewProfile;

    fn small_grid() -> ModelGrid {
        ModelGrid {
            n_r: 96,
            n_theta: 16,
            n_z: 4,
            r_min_ratio: 1e-6,
        }
    }

    fn model(case: BundleCase, r_max: f64, fam: AcsFamily) -> NormalModel {
        NormalModel::new(case, r_max, small_grid(), fam).unwrap()
    }

    #[test]
    fn compatible_model_hits_the_floor() {
        let m = model(BundleCase::Trivial, 0.5, AcsFamily::constant(0.0, 0.0));
        let e = estimate_epsilons(&m).unwrap();
        assert_eq!(e.eps1, EPS_FLOOR);
        assert_eq!(e.eps2, EPS_FLOOR);
        assert_eq!(e.valid_radius, 0.5);
    }

    #[test]
    fn constant_skew_gives_half_n() {
        let m = model(BundleCase::Trivial, 0.5, AcsFamily::constant(0.6, 0.8));
        let e = estimate_epsilons(&m).unwrap();
        assert!((e.eps1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_twist_gives_half_slope() {
        let fam = AcsFamily::new(SkewProfile::zero(), [0.3, 0.0]);
        let m = model(BundleCase::Trivial, 0.5, fam);
        let e = estimate_epsilons(&m).unwrap();
        // Oracle: dense angular sweep of ½‖J₀ᵀC‖/r with C computed from the blocks.
        let mut oracle = 0.0f64;
        for k in 0..2000 {
            let th = k as f64 * 2.0 * PI / 2000.0;
            for &r in &[1e-3, 0.1, 0.5] {
                let bl = fam.at_polar(0.0, r, th);
                oracle = oracle.max(0.5 * spectral_norm2(&(j0().transpose() * bl.c)) / r);
            }
        }
        assert!((e.eps2 - 0.15).abs() < 1e-9);
        assert!((oracle - e.eps2).abs() < 1e-6);
    }

    #[test]
    fn untame_model_is_rejected() {
        let m = model(BundleCase::Trivial, 0.5, AcsFamily::constant(2.1, 0.0));
        assert!(matches!(estimate_epsilons(&m), Err(InflationError::NotTameNearZ { .. })));
    }

    #[test]
    fn coefficient_examples() {
        let neg = BundleCase::Negative(1).coefficients(0.0, 0.4, 0.0);
        assert!((neg.0 - 0.6).abs() < 1e-15);
        let pos = BundleCase::Positive(1).coefficients(0.0, 0.5, 0.0);
        assert!((pos.0 - 1.5).abs() < 1e-15);
        assert_eq!(BundleCase::Negative(3).coefficients(0.2, 0.0, 0.0), (1.0, 1.0));
        assert_eq!(BundleCase::from_self_intersection(-2), BundleCase::Negative(2));
        assert_eq!(BundleCase::Positive(2).self_intersection(), 2);
    }

    #[test]
    fn zero_profile_gives_standard_form() {
        for case in [BundleCase::Negative(2), BundleCase::Positive(1)] {
            let m = model(case, 0.4, AcsFamily::constant(0.2, 0.0));
            let f = omega_f(&m, &RadialProfile::constant(case, 0.0)).unwrap();
            assert!(f.shells.iter().all(|c| c.a == 1.0 && c.b == 1.0));
            assert_eq!(f.form(3), TwoForm::standard());
        }
    }

    #[test]
    fn trivial_constant_one_margin() {
        let m = model(BundleCase::Trivial, 0.5, AcsFamily::constant(0.0, 0.0));
        let e = estimate_epsilons(&m).unwrap();
        let field = omega_f(&m, &RadialProfile::constant(BundleCase::Trivial, 1.0)).unwrap();
        let rep = verify_tameness(&field, &m, &e);
        assert!(rep.tameness.margin >= 1.0 - 1e-12);
        assert!((class_shift(&RadialProfile::constant(BundleCase::Trivial, 1.0), &m)).abs() < 1e-15);
    }

    #[test]
    fn negative_class_shift_is_head() {
        let m = model(BundleCase::Negative(1), 0.5, AcsFamily::constant(0.3, 0.0));
        let e = estimate_epsilons(&m).unwrap();
        let p = build_profile_negative(1, 0.4, &e).unwrap();
        assert!((class_shift(&p, &m) - 0.4).abs() < 1e-3);
    }

    #[test]
    fn case_mismatch_is_an_error() {
        let m = model(BundleCase::Negative(1), 0.5, AcsFamily::constant(0.0, 0.0));
        assert!(omega_f(&m, &RadialProfile::constant(BundleCase::Trivial, 1.0)).is_err());
        assert!(NormalModel::new(BundleCase::Positive(4), 0.6, small_grid(), AcsFamily::constant(0.0, 0.0)).is_err());
    }

    #[test]
    fn obstruction_flips_at_the_bound() {
        let grid = ModelGrid { n_r: 64, n_theta: 8, n_z: 2, r_min_ratio: 1e-6 };
        let big = positive_obstruction(1, 0.5, 6.0, 0.4, grid).unwrap();
        assert_eq!(big.bound, 3.0);
        assert!(!big.sufficient_holds());
        assert!(big.sufficient_inner < 0.0 && big.inner_radius < 1e-6);
        assert!(!big.tame());
        let small = positive_obstruction(1, 0.5, 0.1, 0.4, grid).unwrap();
        assert!(small.sufficient_holds() && small.tame());
        // At r → 0 the condition reads 1 − ε₁√(1 + mM'), and a only grows with r.
        let head = 1.0 - 0.5 * 7f64.sqrt();
        assert!(big.sufficient_min <= head + 1e-9 && big.sufficient_min > head - 1e-2);
    }
}
