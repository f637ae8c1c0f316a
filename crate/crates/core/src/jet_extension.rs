//! Extension of jet data along the core circle of the tubular model.
//!
//! The model is `S¹_z × R_y × R²_w` with points `p = (z, y, w1, w2)` and
//! `Z = {w = 0}`. Everything is invariant under translation in `y`, so a field
//! on the model is a field on `(z, w)`. The fiber of the extended section is
//! `R⁴`, identified with the tangent space of the model.
//!
//! Two charts cover a neighbourhood of `Z`. Chart 1 uses the normal
//! coordinate `w`, chart 2 uses `w' = w + ½κ(w1² − w2², 2w1w2)`. Each carries
//! the polynomial local solution `F·w + ½H[w, w]` written in its own
//! coordinate, with the chart-2 Hessian corrected so that both share the
//! prescribed 2-jet. They are glued by `χ₁,₂ = (1 ± cos z)/2` and cut off by
//! `ρ(|w|)`.

use crate::linalg::{spectral_norm, Mat2, Mat4, Vec4};
use crate::smooth::warped_step;
use crate::tolerance::{DERIVED, STRUCTURAL};
use nalgebra::{Matrix4x2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Mat42 = Matrix4x2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("support radius {radius} must be positive and below the model radius {model_radius}")]
    BadRadius { radius: f64, model_radius: f64 },
    #[error("jet data is empty")]
    Empty,
    #[error("jet sizes differ: {first} first-order samples, {second} second-order samples")]
    SizeMismatch { first: usize, second: usize },
    #[error("F does not vanish on TZ (defect {0:.3e})")]
    NotVanishingOnTz(f64),
    #[error("2-jet is not holonomic: {what} defect {defect:.3e} > 1e-9")]
    NotHolonomic { what: &'static str, defect: f64 },
    #[error("Φ is not the identity on TZ (defect {0:.3e})")]
    NotIdentityOnTz(f64),
    #[error("extension is not invertible: Jacobian determinant {det:.3e} at (z, w) = ({z:.4}, {w1:.4}, {w2:.4})")]
    NotInvertible { det: f64, z: f64, w1: f64, w2: f64 },
    #[error("Newton inversion failed to round-trip (error {0:.3e})")]
    RoundTrip(f64),
    #[error("displacement bound {bound:.3e} not reached (best {best:.3e})")]
    Displacement { bound: f64, best: f64 },
}

/// Cut-off `ρ(x) = 1 − S((x/R − 0.05)/0.9)` built on the warped step `S`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BumpProfile {
    pub radius: f64,
    /// `(x, ρ(x), ρ'(x))` on a uniform grid of `[0, R]`.
    pub samples: Vec<(f64, f64, f64)>,
}

const BUMP_FLAT: f64 = 0.05;
const BUMP_WIDTH: f64 = 0.9;
pub const BUMP_SAMPLES: usize = 10_001;

impl BumpProfile {
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let u = (x / self.radius - BUMP_FLAT) / BUMP_WIDTH;
        let (s, ds) = warped_step(u);
        (1.0 - s, -ds / (BUMP_WIDTH * self.radius))
    }

    pub fn max_slope(&self) -> f64 {
        self.samples.iter().map(|s| s.2.abs()).fold(0.0, f64::max)
    }
}

pub fn bump_profile(radius: f64) -> Result<BumpProfile, JetError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(JetError::BadRadius { radius, model_radius: f64::INFINITY });
    }
    let mut b = BumpProfile { radius, samples: Vec::new() };
    b.samples = (0..BUMP_SAMPLES)
        .map(|k| {
            let x = radius * k as f64 / (BUMP_SAMPLES - 1) as f64;
            let (v, d) = b.eval(x);
            (x, v, d)
        })
        .collect();
    Ok(b)
}

/// Trigonometric interpolant of vector samples at `z_k = 2πk/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigInterp {
    n: usize,
    dim: usize,
    /// `(a_k, b_k)` per harmonic, each of length `dim`.
    coef: Vec<(Vec<f64>, Vec<f64>)>,
}

impl TrigInterp {
    pub fn new(samples: &[Vec<f64>]) -> Self {
        let n = samples.len();
        let dim = samples.first().map_or(0, |s| s.len());
        let kmax = n / 2;
        let mut coef = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let mut a = vec![0.0; dim];
            let mut b = vec![0.0; dim];
            for (j, s) in samples.iter().enumerate() {
                let (sn, cs) = (2.0 * PI * (k * j % n) as f64 / n as f64).sin_cos();
                for d in 0..dim {
                    a[d] += s[d] * cs;
                    b[d] += s[d] * sn;
                }
            }
            // Mean and Nyquist terms carry half weight.
            let w = if k == 0 || (n % 2 == 0 && k == kmax) { 1.0 / n as f64 } else { 2.0 / n as f64 };
            a.iter_mut().for_each(|x| *x *= w);
            b.iter_mut().for_each(|x| *x *= w);
            if n % 2 == 0 && k == kmax {
                b.iter_mut().for_each(|x| *x = 0.0);
            }
            coef.push((a, b));
        }
        Self { n, dim, coef }
    }

    /// Values and first derivatives at `z`.
    pub fn eval(&self, z: f64) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; self.dim];
        let mut dv = vec![0.0; self.dim];
        for (k, (a, b)) in self.coef.iter().enumerate() {
            let kf = k as f64;
            let (s, c) = (kf * z).sin_cos();
            for d in 0..self.dim {
                v[d] += a[d] * c + b[d] * s;
                dv[d] += kf * (b[d] * c - a[d] * s);
            }
        }
        (v, dv)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Circle points `2πk/n`.
pub fn jet_points(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// 1-jet `F(z_k)` (fiber × tangent) along `Z`, with an optional 2-jet
/// `f_rs` given per fiber component as a symmetric 4×4 matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct JetData {
    pub first: Vec<Mat4>,
    pub second: Option<Vec<[Mat4; 4]>>,
}

/// Normal-normal Hessians of the four fiber components.
pub type NormalHessian = [Mat2; 4];

impl JetData {
    pub fn from_normal(normal: &[Mat42]) -> Self {
        let first = normal
            .iter()
            .map(|n| {
                let mut f = Mat4::zeros();
                f.fixed_view_mut::<4, 2>(0, 2).copy_from(n);
                f
            })
            .collect();
        Self { first, second: None }
    }

    /// The 1-jet `Φ − Id` of a fiberwise automorphism.
    pub fn from_automorphism(phi: &[Mat4]) -> Result<Self, JetError> {
        let defect = phi
            .iter()
            .map(|p| (p.fixed_view::<4, 2>(0, 0) - Mat4::identity().fixed_view::<4, 2>(0, 0)).amax())
            .fold(0.0, f64::max);
        if defect > STRUCTURAL {
            return Err(JetError::NotIdentityOnTz(defect));
        }
        Ok(Self { first: phi.iter().map(|p| p - Mat4::identity()).collect(), second: None })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn normal(&self, k: usize) -> Mat42 {
        self.first[k].fixed_view::<4, 2>(0, 2).into_owned()
    }

    /// Checks `F|TZ = 0` and, for a 2-jet, symmetry and `f_rs = ∂_r f_s` for
    /// tangential `r`. Returns the largest defect.
    pub fn validate(&self) -> Result<f64, JetError> {
        if self.first.is_empty() {
            return Err(JetError::Empty);
        }
        let tz = self.first.iter().map(|f| f.fixed_view::<4, 2>(0, 0).amax()).fold(0.0, f64::max);
        if tz > STRUCTURAL {
            return Err(JetError::NotVanishingOnTz(tz));
        }
        let Some(second) = &self.second else { return Ok(tz) };
        if second.len() != self.first.len() {
            return Err(JetError::SizeMismatch { first: self.first.len(), second: second.len() });
        }
        let interp = normal_interp(self);
        let zs = jet_points(self.len());
        let (mut sym, mut holo) = (0.0f64, 0.0f64);
        for (k, h) in second.iter().enumerate() {
            let (_, dn) = interp.eval(zs[k]);
            for (q, hq) in h.iter().enumerate() {
                sym = sym.max((hq - hq.transpose()).amax());
                // r = z: f_{z s} = ∂_z f_s; r = y: f_{y s} = 0 (y-invariant model).
                for s in 0..4 {
                    let target = if s < 2 { 0.0 } else { dn[q * 2 + (s - 2)] };
                    holo = holo.max((hq[(0, s)] - target).abs());
                    holo = holo.max(hq[(1, s)].abs());
                }
            }
        }
        if sym > DERIVED {
            return Err(JetError::NotHolonomic { what: "symmetry f_rs = f_sr", defect: sym });
        }
        if holo > DERIVED {
            return Err(JetError::NotHolonomic { what: "tangential f_rs = ∂_r f_s", defect: holo });
        }
        Ok(tz.max(sym).max(holo))
    }

    /// `K = max_z ‖F(z)‖` over the samples.
    pub fn k_norm(&self) -> f64 {
        self.first.iter().map(spectral_norm).fold(0.0, f64::max)
    }
}

fn normal_interp(jet: &JetData) -> TrigInterp {
    let samples: Vec<Vec<f64>> = (0..jet.len())
        .map(|k| {
            let n = jet.normal(k);
            (0..4).flat_map(|q| [n[(q, 0)], n[(q, 1)]]).collect()
        })
        .collect();
    TrigInterp::new(&samples)
}

fn hessian_interp(second: &[[Mat4; 4]]) -> TrigInterp {
    let samples: Vec<Vec<f64>> = second
        .iter()
        .map(|h| h.iter().flat_map(|hq| [hq[(2, 2)], hq[(2, 3)], hq[(3, 3)]]).collect())
        .collect();
    TrigInterp::new(&samples)
}

/// How the local solutions are assembled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChartBlend {
    /// `F·w + ½H[w, w]` in the single normal coordinate.
    Single,
    /// Two charts glued over the circle; `kappa` bends the second normal coordinate.
    TwoChart { kappa: f64 },
}

impl Default for ChartBlend {
    fn default() -> Self {
        ChartBlend::TwoChart { kappa: 0.5 }
    }
}

/// `(K, C, R)` of the cut-off estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExtensionBounds {
    /// `max_z ‖F(z)‖`.
    pub k: f64,
    /// Growth of `‖∇f‖ − K` per unit of normal radius.
    pub c: f64,
    /// Support radius actually used, `< K/C`.
    pub r: f64,
}

/// Uniform grid of `(z, w1, w2)`: `n_z` circle points and `n_w` points per
/// normal axis on `[−radius, radius]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeGrid {
    pub n_z: usize,
    pub n_w: usize,
    pub radius: f64,
}

impl TubeGrid {
    pub fn new(n_z: usize, n_w: usize, radius: f64) -> Self {
        Self { n_z, n_w: n_w.max(3) | 1, radius }
    }

    /// Resolutions multiplied by `scale`; `n_w` stays odd.
    pub fn scaled(&self, scale: f64) -> Self {
        let sc = |n: usize| ((n as f64 * scale).round() as usize).max(3);
        Self::new(sc(self.n_z), sc(self.n_w), self.radius)
    }

    pub fn zs(&self) -> Vec<f64> {
        jet_points(self.n_z)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / (self.n_w - 1) as f64
    }

    pub fn ws(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_w).map(|i| -self.radius + h * i as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.n_z * self.n_w * self.n_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of `(k_z, i1, i2)`.
    pub fn index(&self, k: usize, i1: usize, i2: usize) -> usize {
        (k * self.n_w + i1) * self.n_w + i2
    }

    /// Grid points as `(z, 0, w1, w2)` in flat-index order.
    pub fn points(&self) -> Vec<Vec4> {
        let (zs, ws) = (self.zs(), self.ws());
        let mut out = Vec::with_capacity(self.len());
        for &z in &zs {
            for &w1 in &ws {
                for &w2 in &ws {
                    out.push(Vec4::new(z, 0.0, w1, w2));
                }
            }
        }
        out
    }

    /// Index of the centre `w = 0` along a normal axis.
    pub fn centre(&self) -> usize {
        self.n_w / 2
    }
}

/// `f̃ = ρ(|w|)·f` for the blended local solutions `f`.
#[derive(Clone, Debug)]
pub struct ExtendedSection {
    normal: TrigInterp,
    hessian: Option<TrigInterp>,
    pub blend: ChartBlend,
    pub bump: BumpProfile,
    pub bounds: ExtensionBounds,
}

fn unpack_normal(v: &[f64]) -> Mat42 {
    Mat42::from_fn(|q, b| v[q * 2 + b])
}

fn unpack_hessian(v: &[f64]) -> NormalHessian {
    std::array::from_fn(|q| Mat2::new(v[3 * q], v[3 * q + 1], v[3 * q + 1], v[3 * q + 2]))
}

/// `Σ_a n_a·Q^a` with `Q¹ = diag(1, −1)`, `Q² = [[0, 1], [1, 0]]`.
fn q_tensor(n: &Mat42) -> NormalHessian {
    std::array::from_fn(|q| Mat2::new(n[(q, 0)], n[(q, 1)], n[(q, 1)], -n[(q, 0)]))
}

fn quad(h: &NormalHessian, u: &Vector2<f64>, v: &Vector2<f64>) -> Vec4 {
    Vec4::from_fn(|q, _| u.dot(&(h[q] * v)))
}

/// Value of `N·u + ½H[u, u]`, its `u`-derivative and its `z`-derivative.
fn local_solution(n: &Mat42, dn: &Mat42, h: &NormalHessian, dh: &NormalHessian, u: &Vector2<f64>) -> (Vec4, Mat42, Vec4) {
    let val = n * u + quad(h, u, u) * 0.5;
    let mut du = *n;
    for q in 0..4 {
        let row = h[q] * u;
        du[(q, 0)] += row[0];
        du[(q, 1)] += row[1];
    }
    let dz = dn * u + quad(dh, u, u) * 0.5;
    (val, du, dz)
}

impl ExtendedSection {
    /// Jet coefficients at `z`: `(N, N', H, H')`.
    fn coefficients(&self, z: f64) -> (Mat42, Mat42, NormalHessian, NormalHessian) {
        let (nv, dnv) = self.normal.eval(z);
        let (h, dh) = match &self.hessian {
            Some(hi) => {
                let (hv, dhv) = hi.eval(z);
                (unpack_hessian(&hv), unpack_hessian(&dhv))
            }
            None => ([Mat2::zeros(); 4], [Mat2::zeros(); 4]),
        };
        (unpack_normal(&nv), unpack_normal(&dnv), h, dh)
    }

    /// The blended solution `f` (no cut-off) and its Jacobian in `(z, y, w1, w2)`.
    pub fn base(&self, z: f64, w: [f64; 2]) -> (Vec4, Mat4) {
        let (n, dn, h, dh) = self.coefficients(z);
        let wv = Vector2::new(w[0], w[1]);
        let (v1, du1, dz1) = local_solution(&n, &dn, &h, &dh, &wv);
        let (val, dw, dz) = match self.blend {
            ChartBlend::Single => (v1, du1, dz1),
            ChartBlend::TwoChart { kappa } => {
                let qn = q_tensor(&n);
                let qdn = q_tensor(&dn);
                let h2: NormalHessian = std::array::from_fn(|q| h[q] - qn[q] * kappa);
                let dh2: NormalHessian = std::array::from_fn(|q| dh[q] - qdn[q] * kappa);
                let u = wv + Vector2::new(w[0] * w[0] - w[1] * w[1], 2.0 * w[0] * w[1]) * (0.5 * kappa);
                let du = Mat2::new(1.0 + kappa * w[0], -kappa * w[1], kappa * w[1], 1.0 + kappa * w[0]);
                let (v2, du2, dz2) = local_solution(&n, &dn, &h2, &dh2, &u);
                let (s, c) = z.sin_cos();
                let (c1, c2) = (0.5 * (1.0 + c), 0.5 * (1.0 - c));
                let (dc1, dc2) = (-0.5 * s, 0.5 * s);
                (v1 * c1 + v2 * c2, du1 * c1 + du2 * du * c2, dz1 * c1 + dz2 * c2 + v1 * dc1 + v2 * dc2)
            }
        };
        let mut jac = Mat4::zeros();
        jac.set_column(0, &dz);
        jac.fixed_view_mut::<4, 2>(0, 2).copy_from(&dw);
        (val, jac)
    }

    /// `f̃(p)` and its Jacobian at `p = (z, y, w1, w2)`.
    pub fn eval(&self, p: &Vec4) -> (Vec4, Mat4) {
        let w = [p[2], p[3]];
        let r = w[0].hypot(w[1]);
        if r >= self.bump.radius {
            return (Vec4::zeros(), Mat4::zeros());
        }
        let (rho, drho) = self.bump.eval(r);
        let (f, jac) = self.base(p[0], w);
        let mut out = jac * rho;
        if r > 0.0 && drho != 0.0 {
            let grad_r = Vec4::new(0.0, 0.0, w[0] / r, w[1] / r);
            out += f * grad_r.transpose() * drho;
        }
        (f * rho, out)
    }

    pub fn support_radius(&self) -> f64 {
        self.bump.radius
    }
}

/// Samples for `K`, the growth constant and grid sweeps.
const DENSE_Z_FACTOR: usize = 4;
const PROBE_RADII: usize = 24;
const PROBE_ANGLES: usize = 16;
/// Support radii are kept at this fraction of `K/C`.
pub const RADIUS_SAFETY: f64 = 0.9;

fn polar_probe(n_z: usize, radius: f64) -> impl Iterator<Item = (Vec4, f64)> {
    let zs = jet_points(n_z * DENSE_Z_FACTOR);
    zs.into_iter().flat_map(move |z| {
        (1..=PROBE_RADII).flat_map(move |i| {
            let r = radius * i as f64 / PROBE_RADII as f64;
            (0..PROBE_ANGLES).map(move |j| {
                let (s, c) = (2.0 * PI * j as f64 / PROBE_ANGLES as f64).sin_cos();
                (Vec4::new(z, 0.0, r * c, r * s), r)
            })
        })
    })
}

/// Builds `f̃` with support radius at most `radius`, shrunk below `K/C`.
pub fn extend_section_with(jet: &JetData, radius: f64, grid: &TubeGrid, blend: ChartBlend) -> Result<ExtendedSection, JetError> {
    if !(radius > 0.0 && radius < grid.radius) {
        return Err(JetError::BadRadius { radius, model_radius: grid.radius });
    }
    jet.validate()?;
    let normal = normal_interp(jet);
    let hessian = jet.second.as_ref().map(|s| hessian_interp(s));
    let mut sec = ExtendedSection {
        normal,
        hessian,
        blend,
        bump: bump_profile(radius)?,
        bounds: ExtensionBounds { k: 0.0, c: 0.0, r: radius },
    };
    let k = jet_points(jet.len() * DENSE_Z_FACTOR)
        .into_iter()
        .map(|z| {
            let (n, ..) = sec.coefficients(z);
            n.svd(false, false).singular_values[0]
        })
        .fold(jet.k_norm(), f64::max);
    let c = polar_probe(jet.len(), radius)
        .map(|(p, r)| ((spectral_norm(&sec.base(p[0], [p[2], p[3]]).1) - k) / r).max(0.0))
        .fold(0.0, f64::max);
    let r = if c > 0.0 && k > 0.0 { radius.min(RADIUS_SAFETY * k / c) } else { radius };
    sec.bump = bump_profile(r)?;
    sec.bounds = ExtensionBounds { k, c, r };
    Ok(sec)
}

pub fn extend_section(jet: &JetData, radius: f64, grid: &TubeGrid) -> Result<ExtendedSection, JetError> {
    extend_section_with(jet, radius, grid, ChartBlend::default())
}

/// Grid sweep of the cut-off estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SectionReport {
    pub bounds: ExtensionBounds,
    /// `max ‖f̃(p)‖/r(p)` over grid points off `Z`.
    pub max_value_ratio: f64,
    pub max_gradient: f64,
    /// `max ‖f̃‖` on `Z` (should be exactly zero).
    pub on_z: f64,
    /// `max ‖f̃‖ + ‖∇f̃‖` outside the support tube.
    pub outside_support: f64,
}

impl SectionReport {
    /// `‖f̃‖ ≤ 2K·r` and `‖∇f̃‖ ≤ 6K`, up to `slack`.
    pub fn bounds_hold(&self, slack: f64) -> bool {
        let k = self.bounds.k;
        self.max_value_ratio <= 2.0 * k + slack && self.max_gradient <= 6.0 * k + slack
    }
}

pub fn check_section(sec: &ExtendedSection, grid: &TubeGrid) -> SectionReport {
    let mut rep = SectionReport {
        bounds: sec.bounds,
        max_value_ratio: 0.0,
        max_gradient: 0.0,
        on_z: 0.0,
        outside_support: 0.0,
    };
    for p in grid.points() {
        let r = p[2].hypot(p[3]);
        let (v, jac) = sec.eval(&p);
        let g = spectral_norm(&jac);
        if r == 0.0 {
            rep.on_z = rep.on_z.max(v.norm());
        } else {
            rep.max_value_ratio = rep.max_value_ratio.max(v.norm() / r);
        }
        rep.max_gradient = rep.max_gradient.max(g);
        if r >= sec.support_radius() {
            rep.outside_support = rep.outside_support.max(v.norm() + g);
        }
    }
    rep
}

/// Largest `|central difference of f̃ − F|` over the jet points, with step `h`
/// in every direction (zero expected along `z` and `y`).
pub fn jet_residual(sec: &ExtendedSection, jet: &JetData, h: f64) -> f64 {
    let mut worst = 0.0f64;
    for (k, z) in jet_points(jet.len()).into_iter().enumerate() {
        let p = Vec4::new(z, 0.0, 0.0, 0.0);
        for dir in 0..4 {
            let mut e = Vec4::zeros();
            e[dir] = h;
            let d = (sec.eval(&(p + e)).0 - sec.eval(&(p - e)).0) / (2.0 * h);
            worst = worst.max((d - jet.first[k].column(dir)).amax());
        }
    }
    worst
}

/// Largest `|second central difference of f̃ − f_ab|` in the normal directions.
pub fn second_order_residual(sec: &ExtendedSection, jet: &JetData, h: f64) -> Option<f64> {
    let second = jet.second.as_ref()?;
    let mut worst = 0.0f64;
    for (k, z) in jet_points(jet.len()).into_iter().enumerate() {
        let p = Vec4::new(z, 0.0, 0.0, 0.0);
        let f = |a: f64, b: f64| sec.eval(&(p + Vec4::new(0.0, 0.0, a, b))).0;
        let d11 = (f(h, 0.0) - f(0.0, 0.0) * 2.0 + f(-h, 0.0)) / (h * h);
        let d22 = (f(0.0, h) - f(0.0, 0.0) * 2.0 + f(0.0, -h)) / (h * h);
        let d12 = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
        for q in 0..4 {
            let hq = &second[k][q];
            worst = worst.max((d11[q] - hq[(2, 2)]).abs()).max((d22[q] - hq[(3, 3)]).abs()).max((d12[q] - hq[(2, 3)]).abs());
        }
    }
    Some(worst)
}

/// `ψ(p) = p + f̃(p)`.
#[derive(Clone, Debug)]
pub struct DiffeoExtension {
    pub section: ExtendedSection,
}

pub const NEWTON_TOL: f64 = 1e-13;
pub const ROUNDTRIP_TOL: f64 = 1e-8;

impl DiffeoExtension {
    pub fn identity(grid: &TubeGrid) -> Self {
        let jet = JetData::from_normal(&vec![Mat42::zeros(); grid.n_z.max(1)]);
        let section = extend_section(&jet, 0.5 * grid.radius, grid).expect("zero jet is valid");
        Self { section }
    }

    pub fn apply(&self, p: &Vec4) -> Vec4 {
        p + self.section.eval(p).0
    }

    /// `ψ(p)` and `dψ(p)`.
    pub fn apply_with_jacobian(&self, p: &Vec4) -> (Vec4, Mat4) {
        let (f, j) = self.section.eval(p);
        (p + f, Mat4::identity() + j)
    }

    /// Newton solve of `ψ(x) = q` starting at `q`.
    pub fn invert(&self, q: &Vec4) -> Option<Vec4> {
        let mut x = *q;
        for _ in 0..50 {
            let (y, j) = self.apply_with_jacobian(&x);
            let res = y - q;
            if res.amax() < NEWTON_TOL {
                return Some(x);
            }
            x -= j.lu().solve(&res)?;
        }
        let res = (self.apply(&x) - q).amax();
        (res < 1e3 * NEWTON_TOL).then_some(x)
    }

    pub fn support_radius(&self) -> f64 {
        self.section.support_radius()
    }
}

/// Grid verification of an extended diffeomorphism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiffeoReport {
    pub bounds: ExtensionBounds,
    /// `‖Φ − Id‖` over `Z`.
    pub input_defect: f64,
    /// `max ‖dψ − Id‖` over the grid.
    pub c1_defect: f64,
    /// `c1_defect / input_defect` (1 for the identity).
    pub ratio: f64,
    pub min_det: f64,
    pub max_displacement: f64,
    pub roundtrip_error: f64,
}

pub fn check_diffeo(psi: &DiffeoExtension, grid: &TubeGrid) -> Result<DiffeoReport, JetError> {
    let bounds = psi.section.bounds;
    let mut rep = DiffeoReport {
        bounds,
        input_defect: bounds.k,
        c1_defect: 0.0,
        ratio: 1.0,
        min_det: f64::INFINITY,
        max_displacement: 0.0,
        roundtrip_error: 0.0,
    };
    for p in grid.points() {
        let (q, j) = psi.apply_with_jacobian(&p);
        let det = j.determinant();
        if det <= 0.0 {
            return Err(JetError::NotInvertible { det, z: p[0], w1: p[2], w2: p[3] });
        }
        rep.min_det = rep.min_det.min(det);
        rep.c1_defect = rep.c1_defect.max(spectral_norm(&(j - Mat4::identity())));
        rep.max_displacement = rep.max_displacement.max((q - p).norm());
        let back = psi.invert(&q).ok_or(JetError::RoundTrip(f64::INFINITY))?;
        rep.roundtrip_error = rep.roundtrip_error.max((back - p).amax());
    }
    if rep.roundtrip_error > ROUNDTRIP_TOL {
        return Err(JetError::RoundTrip(rep.roundtrip_error));
    }
    if bounds.k > 0.0 {
        rep.ratio = rep.c1_defect / bounds.k;
    }
    Ok(rep)
}

/// Extends the fiberwise automorphism `Φ(z_k)` to a diffeomorphism supported
/// in the tube of radius `radius`. With `max_displacement` the radius is
/// shrunk until `max_p |ψ(p) − p|` is below it.
pub fn extend_diffeo(
    phi: &[Mat4],
    radius: f64,
    grid: &TubeGrid,
    max_displacement: Option<f64>,
) -> Result<(DiffeoExtension, DiffeoReport), JetError> {
    let jet = JetData::from_automorphism(phi)?;
    let mut r = radius;
    if let Some(bound) = max_displacement {
        let k = jet.k_norm();
        if k > 0.0 {
            r = r.min(0.99 * bound / (2.0 * k));
        }
    }
    for _ in 0..60 {
        let psi = DiffeoExtension { section: extend_section(&jet, r, grid)? };
        let rep = check_diffeo(&psi, grid)?;
        match max_displacement {
            Some(bound) if rep.max_displacement >= bound => r *= 0.5,
            _ => return Ok((psi, rep)),
        }
    }
    Err(JetError::Displacement { bound: max_displacement.unwrap_or(0.0), best: r })
}

/// Empirical `(ε₀, κ)` for a grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WhitneyConstants {
    pub epsilon_0: f64,
    pub kappa: f64,
}

/// Input defects tried by the calibration, doubling from the first.
pub const CALIBRATION_LADDER: [f64; 8] = [0.0125, 0.025, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6];
pub const CALIBRATION_BATTERY: usize = 6;
pub const CALIBRATION_SEED: u64 = 0x6a65_7473;

/// Random smooth automorphism jet `Φ = Id + F`, `F = A₀ + A₁cos z + B₁sin z`
/// on the normal columns, rescaled so that `max_z ‖F‖ = defect`.
pub fn random_automorphism<R: Rng + ?Sized>(rng: &mut R, n_z: usize, defect: f64) -> Vec<Mat4> {
    let mut m = || Mat42::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let (a0, a1, b1) = (m(), m(), m());
    let normals: Vec<Mat42> = jet_points(n_z).into_iter().map(|z| a0 + a1 * z.cos() + b1 * z.sin()).collect();
    let k = normals.iter().map(|n| n.svd(false, false).singular_values[0]).fold(0.0, f64::max);
    normals
        .into_iter()
        .map(|n| {
            let mut phi = Mat4::identity();
            let mut v = phi.fixed_view_mut::<4, 2>(0, 2);
            v += n * (defect / k);
            phi
        })
        .collect()
}

/// Random band-limited normal jet `F = A₀ + A₁cos z + B₁sin z + A₂cos 2z`,
/// rescaled so that `K = scale`.
pub fn random_normal_jet<R: Rng + ?Sized>(rng: &mut R, n_z: usize, scale: f64) -> JetData {
    let mut m = || Mat42::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let (a0, a1, b1, a2) = (m(), m(), m(), m());
    let normal: Vec<Mat42> = jet_points(n_z).into_iter().map(|z| a0 + a1 * z.cos() + b1 * z.sin() + a2 * (2.0 * z).cos()).collect();
    let jet = JetData::from_normal(&normal);
    let k = jet.k_norm();
    JetData::from_normal(&normal.iter().map(|n| n * (scale / k)).collect::<Vec<_>>())
}

/// Ladder over input defects with a seeded battery per rung. `ε₀` is the
/// top of the longest all-invertible prefix; `κ` is the largest measured
/// ratio `‖dψ − Id‖/‖Φ − Id‖` over those rungs, at least 1.
pub fn calibrate_constants_seeded(grid: &TubeGrid, seed: u64, battery: usize) -> WhitneyConstants {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epsilon_0 = 0.0;
    let mut kappa = 1.0f64;
    let radius = 0.5 * grid.radius;
    'ladder: for &s in &CALIBRATION_LADDER {
        let mut rung_kappa = 1.0f64;
        for _ in 0..battery {
            let phi = random_automorphism(&mut rng, grid.n_z, s);
            match extend_diffeo(&phi, radius, grid, None) {
                Ok((_, rep)) => rung_kappa = rung_kappa.max(rep.ratio),
                Err(_) => break 'ladder,
            }
        }
        epsilon_0 = s;
        kappa = kappa.max(rung_kappa);
    }
    WhitneyConstants { epsilon_0, kappa }
}

pub fn calibrate_constants(grid: &TubeGrid) -> WhitneyConstants {
    calibrate_constants_seeded(grid, CALIBRATION_SEED, CALIBRATION_BATTERY)
}
