//! Radial profiles `f(r)` for the inflated forms.

use super::{BundleCase, EpsilonPair, InflationError};
use crate::smooth::{gauss_legendre, integrate, smooth_step};
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Safety margin under the pointwise cap in the trivial case.
pub const CAP_MARGIN: f64 = 0.05;
/// Exponent of the soft minimum joining the plateau to the cap.
const SMIN_POWER: f64 = 4.0;
/// Support radius of the trivial profile as a fraction of `(1 − ε₁)/ε₂`.
const TRIVIAL_SUPPORT: f64 = 0.9;
/// Outer radius of bundle profiles as a fraction of `(1 − ε₁)/ε₂`.
const BUNDLE_SUPPORT: f64 = 0.5;
/// Fraction of the admissible `c` actually used.
const C_FRACTION: f64 = 0.9;
/// Smallest log-ratio `ln(R₂/R₁)` for bundle profiles.
const MIN_LOG_RATIO: f64 = 1.386_294_361_119_890_6; // ln 4

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfileSample {
    pub r: f64,
    pub f: f64,
    pub f_prime: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum ProfileShape {
    Constant { value: f64 },
    /// `f = 1 + χ(r)·smin(K − 1, cap/r² − 1)`, `χ` stepping down on `[R/2, 0.9R]`.
    TrivialCap { plateau: f64, cap: f64, support: f64 },
    /// Log-domain smoothing of `h = M'` on `[0, R₁]`, `c·ln(R₂/r)` on `[R₁, R₂]`, `0` beyond.
    LogSmoothed { m_prime: f64, c: f64, s1: f64, s2: f64, width: f64 },
}

/// A radial profile with its analytic generator and a sample table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialProfile {
    pub case: BundleCase,
    pub shape: ProfileShape,
    pub samples: Vec<ProfileSample>,
    pub support_radius: f64,
    pub head: f64,
    pub non_increasing: bool,
}

fn smin(x: f64, y: f64) -> f64 {
    if y.is_infinite() {
        return x;
    }
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    lo * (1.0 + (lo / hi).powf(SMIN_POWER)).powf(-1.0 / SMIN_POWER)
}

fn cutoff(r: f64, support: f64) -> (f64, f64) {
    let lo = 0.5 * support;
    let width = (TRIVIAL_SUPPORT - 0.5) * support;
    let (s, ds) = smooth_step((r - lo) / width);
    (1.0 - s, -ds / width)
}

fn window_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(32))
}

/// Smooth-step CDF of half-width `w`, centered at 0.
fn phi(x: f64, w: f64) -> f64 {
    smooth_step((x + w) / (2.0 * w)).0
}

/// `∫_{-∞}^x Φ`, exact outside the window.
fn int_phi(x: f64, w: f64) -> f64 {
    if x <= -w {
        0.0
    } else if x >= w {
        x
    } else {
        // ∫_{-w}^{x} Φ, by symmetry Φ(u) + Φ(−u) = 1 the mass to the right of w matches.
        integrate(|u| phi(u, w), -w, x, window_rule())
    }
}

impl ProfileShape {
    /// `(f(r), f'(r))`.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        match *self {
            ProfileShape::Constant { value } => (value, 0.0),
            ProfileShape::TrivialCap { plateau, cap, support } => {
                if r >= TRIVIAL_SUPPORT * support {
                    return (1.0, 0.0);
                }
                let x = plateau - 1.0;
                if r <= 0.0 {
                    return (plateau, 0.0);
                }
                let y = cap / (r * r) - 1.0;
                let g = smin(x, y);
                let dg = (g / y).powf(SMIN_POWER + 1.0) * (-2.0 * cap / (r * r * r));
                let (chi, dchi) = cutoff(r, support);
                (1.0 + chi * g, dchi * g + chi * dg)
            }
            ProfileShape::LogSmoothed { m_prime, c, s1, s2, width } => {
                if r <= 0.0 {
                    return (m_prime, 0.0);
                }
                let s = r.ln();
                if s <= s1 - width {
                    return (m_prime, 0.0);
                }
                if s >= s2 + width {
                    return (0.0, 0.0);
                }
                let f = m_prime - c * (int_phi(s - s1, width) - int_phi(s - s2, width));
                let dfds = -c * (phi(s - s1, width) - phi(s - s2, width));
                (f.max(0.0), dfds / r)
            }
        }
    }

    pub fn support(&self) -> f64 {
        match *self {
            ProfileShape::Constant { .. } => 0.0,
            ProfileShape::TrivialCap { support, .. } => TRIVIAL_SUPPORT * support,
            ProfileShape::LogSmoothed { s2, width, .. } => (s2 + width).exp(),
        }
    }

    fn head(&self) -> f64 {
        self.eval(0.0).0
    }
}

impl RadialProfile {
    fn from_shape(case: BundleCase, shape: ProfileShape) -> Self {
        let support = shape.support();
        let lo = match shape {
            ProfileShape::TrivialCap { plateau, cap, .. } => (cap / plateau).sqrt() * 0.01,
            ProfileShape::LogSmoothed { s1, width, .. } => (s1 - width).exp() * 0.1,
            ProfileShape::Constant { .. } => 1e-6,
        };
        let hi = if support > 0.0 { support * 1.1 } else { 1.0 };
        let n = 512;
        let samples = (0..n)
            .map(|k| {
                let r = lo * (hi / lo).powf(k as f64 / (n - 1) as f64);
                let (f, f_prime) = shape.eval(r);
                ProfileSample { r, f, f_prime }
            })
            .collect::<Vec<_>>();
        let non_increasing = samples.iter().all(|s| s.f_prime <= 0.0);
        Self {
            case,
            head: shape.head(),
            shape,
            samples,
            support_radius: support,
            non_increasing,
        }
    }

    pub fn eval(&self, r: f64) -> (f64, f64) {
        self.shape.eval(r)
    }

    /// Constant profile, e.g. `f ≡ 1` in the trivial case or `f ≡ 0` otherwise.
    pub fn constant(case: BundleCase, value: f64) -> Self {
        Self::from_shape(case, ProfileShape::Constant { value })
    }

    /// Log-smoothed profile with explicit radii, without any admissibility check.
    pub fn log_profile(case: BundleCase, m_prime: f64, r1: f64, r2: f64) -> Self {
        let (s1, s2) = (r1.ln(), r2.ln());
        let l = s2 - s1;
        Self::from_shape(
            case,
            ProfileShape::LogSmoothed {
                m_prime,
                c: m_prime / l,
                s1,
                s2,
                width: 0.05 * l.min(1.0),
            },
        )
    }

    /// `c` of a log profile: the bound on `−r·f'(r)`.
    pub fn log_slope(&self) -> Option<f64> {
        match self.shape {
            ProfileShape::LogSmoothed { c, .. } => Some(c),
            _ => None,
        }
    }
}

/// `2π ∫₀^∞ (f − 1) r dr` of the trivial profile, in `s = ln r`.
fn trivial_shift(shape: &ProfileShape) -> f64 {
    let ProfileShape::TrivialCap { plateau, cap, support } = *shape else {
        return 0.0;
    };
    // Below r_lo the soft minimum equals K − 1 to relative accuracy 1e-13.
    let r_lo = (cap / (1e3 * (plateau - 1.0) + 1.0)).sqrt().min(0.1 * support);
    let head = (shape.eval(r_lo).0 - 1.0) * r_lo * r_lo * 0.5;
    let (a, b) = (r_lo.ln(), (TRIVIAL_SUPPORT * support).ln());
    let panels = ((b - a) / 0.25).ceil().max(1.0) as usize;
    let rule = window_rule();
    let h = (b - a) / panels as f64;
    let body: f64 = (0..panels)
        .map(|k| {
            let lo = a + h * k as f64;
            integrate(
                |s| {
                    let r = s.exp();
                    (shape.eval(r).0 - 1.0) * r * r
                },
                lo,
                lo + h,
                rule,
            )
        })
        .sum();
    2.0 * PI * (head + body)
}

/// Profile for the trivial bundle with `2π∫(f − 1) r dr = t_target`.
///
/// The plateau `K` is found by bisection in `ln K`. Returns the profile and
/// its support radius.
pub fn build_profile_trivial(t_target: f64, eps: &EpsilonPair) -> Result<(RadialProfile, f64), InflationError> {
    if !(t_target >= 0.0 && t_target.is_finite()) {
        return Err(InflationError::BadParameter(format!("t_target = {t_target} must be a finite number ≥ 0")));
    }
    let limit = (1.0 - eps.eps1) / eps.eps2;
    let support = eps.valid_radius.min(TRIVIAL_SUPPORT * limit);
    if t_target == 0.0 {
        let p = RadialProfile::constant(BundleCase::Trivial, 1.0);
        return Ok((p, support));
    }
    let cap = (1.0 - CAP_MARGIN) * limit * limit;
    let shape = |k: f64| ProfileShape::TrivialCap { plateau: k, cap, support };
    let mut hi = 2.0f64;
    while trivial_shift(&shape(hi)) < t_target {
        hi *= 4.0;
        if hi > 1e300 {
            return Err(InflationError::BadParameter(format!("t_target = {t_target} not reachable")));
        }
    }
    let mut lo = 1.0f64;
    for _ in 0..200 {
        let mid = (lo.ln() + 0.5 * (hi.ln() - lo.ln())).exp();
        if trivial_shift(&shape(mid)) < t_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-13 {
            break;
        }
    }
    let p = RadialProfile::from_shape(BundleCase::Trivial, shape(0.5 * (lo + hi)));
    Ok((p, support))
}

fn bundle_profile(case: BundleCase, m_prime: f64, c: f64, outer: f64) -> RadialProfile {
    let l = (m_prime / c).max(MIN_LOG_RATIO);
    let c = m_prime / l;
    let width = 0.05 * l.min(1.0);
    let s2 = (0.95 * outer).ln() - width;
    RadialProfile::from_shape(case, ProfileShape::LogSmoothed { m_prime, c, s1: s2 - l, s2, width })
}

/// Profile for `Z·Z = −m` with `f(0) = M'`, requiring `0 ≤ M' < 1/m`.
pub fn build_profile_negative(m: u32, m_prime: f64, eps: &EpsilonPair) -> Result<RadialProfile, InflationError> {
    let case = BundleCase::Negative(m);
    let bound = 1.0 / m as f64;
    if !(0.0..bound).contains(&m_prime) {
        return Err(InflationError::NegativeBound { m, m_prime, bound });
    }
    if m_prime == 0.0 {
        return Ok(RadialProfile::constant(case, 0.0));
    }
    let limit = (1.0 - eps.eps1) / eps.eps2;
    let outer = eps.valid_radius.min(BUNDLE_SUPPORT * limit);
    let c_max = limit * limit - outer * outer;
    Ok(bundle_profile(case, m_prime, C_FRACTION * c_max, outer))
}

/// `((1 − ε₁²)/ε₁²)/m`, the ceiling on `M'` in the positive case.
pub fn positive_case_bound(m: u32, eps1: f64) -> f64 {
    (1.0 - eps1 * eps1) / (eps1 * eps1) / m as f64
}

/// Profile for `Z·Z = m > 0` with `f(0) = M'` below the positive-case ceiling.
pub fn build_profile_positive(m: u32, m_prime: f64, eps: &EpsilonPair) -> Result<RadialProfile, InflationError> {
    let case = BundleCase::Positive(m);
    let mf = m as f64;
    let ceiling = positive_case_bound(m, eps.eps1);
    if !(0.0..ceiling).contains(&m_prime) {
        return Err(InflationError::PositiveBound { m, m_prime, eps1: eps.eps1, bound: ceiling });
    }
    if m_prime == 0.0 {
        return Ok(RadialProfile::constant(case, 0.0));
    }
    let mut outer = eps.valid_radius.min(BUNDLE_SUPPORT / mf.sqrt());
    let a_max = |r: f64| 1.0 + mf * m_prime / (1.0 - 0.5 * mf * r * r);
    let budget = 1.0 - eps.eps1 * a_max(outer).sqrt();
    if budget <= 0.0 {
        return Err(InflationError::PositiveBound { m, m_prime, eps1: eps.eps1, bound: ceiling * (1.0 - 0.5 * mf * outer * outer) });
    }
    outer = outer.min(BUNDLE_SUPPORT * budget / eps.eps2);
    let limit = budget / eps.eps2;
    let c_max = limit * limit - outer * outer;
    Ok(bundle_profile(case, m_prime, C_FRACTION * c_max, outer))
}
