//! Step-by-step preparation of `J` along the core curve of the tubular model.
//!
//! Each step extends the fiberwise map `Φ_i = Ψ_{t_i}⁻¹Ψ_{t_{i+1}}` to a
//! diffeomorphism `φ_i` supported near `Z` and pulls the current structure
//! back by it. The accumulated diffeomorphism `ψ_i = φ_0 ∘ ⋯ ∘ φ_{i−1}` is
//! stored on the grid as a displacement and a Jacobian, so that
//! `J_i = dψ_i⁻¹·J(ψ_i)·dψ_i` and `dψ_i = Ψ_{t_i}` along `Z`.

use crate::jet_extension::{calibrate_constants, extend_diffeo, DiffeoReport, JetError, TubeGrid, WhitneyConstants};
use crate::linalg::{spectral_norm, Mat4, Vec4};
use crate::linear_core::{
    euclidean_margin, skew_norm, split, unitary_frame, AcsMatrix, LinearError, SkewPart, TwoForm,
};
use crate::linear_isotopy::{psi_matrix, time_partition, IsotopyError, TimePartition};
use crate::model::AcsFamily;
use crate::tolerance::STRUCTURAL;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("J is not tame along Z: N = {n:.6} ≥ 2 at z = {z:.4} (tame iff N < 2)")]
    NotTame { index: usize, z: f64, n: f64 },
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Isotopy(#[from] IsotopyError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("step {step}: retries exhausted, last violation: {violation}")]
    RetriesExhausted { step: usize, violation: String, trace: Box<PipelineTrace> },
}

/// Frame and skew part of `J` at one point of `Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fiber {
    pub z: f64,
    /// Columns are the unitary frame `(f1, f2, f3, f4)`.
    pub frame: Mat4,
    pub skew: SkewPart,
    /// Canonical metric in model coordinates.
    pub metric: Mat4,
}

fn tangent_plane() -> [Vec4; 2] {
    [Vec4::new(1.0, 0.0, 0.0, 0.0), Vec4::new(0.0, 1.0, 0.0, 0.0)]
}

/// Splits `(ω₀, J)` along `TZ = span(∂z, ∂y)`.
pub fn fiber_of(j: &Mat4, z: f64) -> Result<Fiber, LinearError> {
    let sd = split(&TwoForm::standard(), &AcsMatrix::from_matrix(*j), tangent_plane())?;
    let frame = unitary_frame(&sd)?.matrix();
    Ok(Fiber { z, frame, skew: skew_norm(&sd)?, metric: sd.g })
}

/// The curve `Z` with its fiberwise data and the tubular grid around it.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveField {
    pub family: AcsFamily,
    pub grid: TubeGrid,
    pub fibers: Vec<Fiber>,
}

impl CurveField {
    pub fn new(family: AcsFamily, grid: TubeGrid) -> Result<Self, PipelineError> {
        let fibers = grid
            .zs()
            .into_iter()
            .map(|z| fiber_of(&family.matrix(z, [0.0, 0.0]), z))
            .collect::<Result<_, _>>()?;
        Ok(Self { family, grid, fibers })
    }

    /// Ambient structure at `p = (z, y, w1, w2)`.
    pub fn j_at(&self, p: &Vec4) -> Mat4 {
        self.family.matrix(p[0], [p[2], p[3]])
    }

    /// `Ψ_t` in model coordinates at a circle parameter `z`.
    pub fn psi_at(&self, z: f64, t: f64) -> Result<Mat4, PipelineError> {
        let fib = fiber_of(&self.family.matrix(z, [0.0, 0.0]), z)?;
        psi_in_frame(&fib, t)
    }
}

fn psi_in_frame(fib: &Fiber, t: f64) -> Result<Mat4, PipelineError> {
    let (p, _) = psi_matrix(&fib.skew.matrix(), fib.skew.n, t)?;
    let inv = fib.frame.try_inverse().ok_or(LinearError::DegenerateSplit(0.0))?;
    Ok(fib.frame * p * inv)
}

/// Per-point skew parts and `‖N_J‖ = max N`.
pub fn skew_field(curve: &CurveField) -> Result<(Vec<SkewPart>, f64), PipelineError> {
    let mut n_max = 0.0f64;
    let mut out = Vec::with_capacity(curve.fibers.len());
    for (index, f) in curve.fibers.iter().enumerate() {
        if !f.skew.is_tame() {
            return Err(PipelineError::NotTame { index, z: f.z, n: f.skew.n });
        }
        n_max = n_max.max(f.skew.n);
        out.push(f.skew);
    }
    Ok((out, n_max))
}

/// `Υ[J] = min_{|v|=1} ω₀(v, Jv)` in the model metric.
pub fn upsilon(j: &Mat4) -> f64 {
    euclidean_margin(TwoForm::standard().matrix(), j).0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineParams {
    pub n_max: f64,
    pub eta: f64,
    pub c: f64,
    pub delta: f64,
    pub kappa: f64,
    pub epsilon_0: f64,
    pub epsilon: f64,
    pub partition: TimePartition,
    pub theta0: f64,
    pub shrink_factor: f64,
    pub max_retries: usize,
}

/// Fraction of each bound used for `η`, `C` and `ε`.
pub const ETA_FRACTION: f64 = 0.9;
pub const C_FACTOR: f64 = 1.1;
pub const EPSILON_FRACTION: f64 = 0.9;
pub const SHRINK_FACTOR: f64 = 0.5;
pub const MAX_RETRIES: usize = 20;
/// Times sampled in `[0, 1/2]` when measuring `C` and probing `δ`.
const TIME_SAMPLES: usize = 11;
const FD_STEP: f64 = 1e-5;
const PROBE_BATTERY: usize = 24;
const PROBE_SEED: u64 = 0x7072_6f62;

/// `J̃_t = ψ̃_t^* J` for the extension `ψ̃_t(p) = p + (Ψ_t(z) − Id)·(0, 0, w)`
/// whose normal-normal 2-jet vanishes.
fn j_tilde(curve: &CurveField, t: f64, p: &Vec4) -> Result<Mat4, PipelineError> {
    let z = p[0];
    let psi = curve.psi_at(z, t)?;
    let (psi_p, dpsi) = {
        let h = FD_STEP;
        let normal = Vec4::new(0.0, 0.0, p[2], p[3]);
        let disp = |zz: f64| -> Result<Vec4, PipelineError> { Ok((curve.psi_at(zz, t)? - Mat4::identity()) * normal) };
        let dz = (disp(z + h)? - disp(z - h)?) / (2.0 * h);
        let mut jac = psi;
        jac.set_column(0, &(Vec4::new(1.0, 0.0, 0.0, 0.0) + dz));
        (p + (psi - Mat4::identity()) * normal, jac)
    };
    let inv = dpsi.try_inverse().ok_or(LinearError::DegenerateSplit(0.0))?;
    Ok(inv * curve.j_at(&psi_p) * dpsi)
}

/// `(max ‖J_t‖, max ‖dJ_t‖)` along `Z` for `t ∈ [0, 1/2]`.
pub fn measure_c(curve: &CurveField) -> Result<(f64, f64), PipelineError> {
    let (mut nj, mut ndj) = (0.0f64, 0.0f64);
    for k in 0..TIME_SAMPLES {
        let t = 0.5 * k as f64 / (TIME_SAMPLES - 1) as f64;
        for f in &curve.fibers {
            let p = Vec4::new(f.z, 0.0, 0.0, 0.0);
            nj = nj.max(spectral_norm(&j_tilde(curve, t, &p)?));
            for dir in [0, 2, 3] {
                let mut e = Vec4::zeros();
                e[dir] = FD_STEP;
                let d = (j_tilde(curve, t, &(p + e))? - j_tilde(curve, t, &(p - e))?) / (2.0 * FD_STEP);
                ndj = ndj.max(spectral_norm(&d));
            }
        }
    }
    Ok((nj, ndj))
}

/// Largest `δ ≤ 1` such that every probe `A = Id + δE` (`‖E‖ = 1`) moves
/// `Υ[J_t]` by less than `η` along `Z`, found by bisection.
pub fn probe_delta(curve: &CurveField, eta: f64) -> Result<f64, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let mut probes: Vec<Mat4> = (0..PROBE_BATTERY)
        .map(|_| {
            let e = Mat4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            e / spectral_norm(&e)
        })
        .collect();
    let mut structures = Vec::new();
    for k in 0..TIME_SAMPLES {
        let t = 0.5 * k as f64 / (TIME_SAMPLES - 1) as f64;
        for f in &curve.fibers {
            let psi = psi_in_frame(f, t)?;
            let inv = psi.try_inverse().ok_or(LinearError::DegenerateSplit(0.0))?;
            structures.push(inv * curve.j_at(&Vec4::new(f.z, 0.0, 0.0, 0.0)) * psi);
            if k < TIME_SAMPLES - 1 {
                let next = psi_in_frame(f, 0.5 * (k + 1) as f64 / (TIME_SAMPLES - 1) as f64)?;
                let d = inv * next - Mat4::identity();
                let nd = spectral_norm(&d);
                if nd > 0.0 {
                    probes.push(d / nd);
                }
            }
        }
    }
    let base: Vec<f64> = structures.iter().map(upsilon).collect();
    let passes = |delta: f64| {
        probes.iter().all(|e| {
            let a = Mat4::identity() + e * delta;
            let Some(inv) = a.try_inverse() else { return false };
            structures.iter().zip(&base).all(|(j, &u)| (upsilon(&(inv * j * a)) - u).abs() < eta)
        })
    };
    if passes(1.0) {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `η`, `C`, `δ`, `(ε₀, κ)`, `ε` and the time partition for a curve.
pub fn choose_params_with(curve: &CurveField, whitney: WhitneyConstants) -> Result<PipelineParams, PipelineError> {
    let (_, n_max) = skew_field(curve)?;
    let eta = ETA_FRACTION * (1.0 - n_max / 2.0) / 2.0;
    let (nj, ndj) = measure_c(curve)?;
    let c = C_FACTOR * nj.max(ndj);
    let delta = probe_delta(curve, eta)?;
    let epsilon = EPSILON_FRACTION * (delta / whitney.kappa).min(whitney.epsilon_0);
    if !(epsilon > 0.0) {
        return Err(PipelineError::BadParams(format!("ε = {epsilon} from δ = {delta}, κ = {}, ε₀ = {}", whitney.kappa, whitney.epsilon_0)));
    }
    let partition = time_partition(n_max, epsilon)?;
    Ok(PipelineParams {
        n_max,
        eta,
        c,
        delta,
        kappa: whitney.kappa,
        epsilon_0: whitney.epsilon_0,
        epsilon,
        partition,
        theta0: 0.5 * curve.grid.radius,
        shrink_factor: SHRINK_FACTOR,
        max_retries: MAX_RETRIES,
    })
}

pub fn choose_params(curve: &CurveField) -> Result<PipelineParams, PipelineError> {
    choose_params_with(curve, calibrate_constants(&curve.grid))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityCheck {
    pub max_change: f64,
    pub min_after: f64,
    pub passed: bool,
}

/// `max |Υ[J_after] − Υ[J_before]| < η` and `min Υ[J_after] > 0` over the grid.
pub fn stability_check(before: &[Mat4], after: &[Mat4], eta: f64) -> StabilityCheck {
    let mut max_change = 0.0f64;
    let mut min_after = f64::INFINITY;
    for (a, b) in before.iter().zip(after) {
        let ub = upsilon(b);
        max_change = max_change.max((ub - upsilon(a)).abs());
        min_after = min_after.min(ub);
    }
    StabilityCheck { max_change, min_after, passed: max_change < eta && min_after > 0.0 }
}

/// Accumulated diffeomorphism `ψ` on the grid: `ψ(p) − p` and `dψ(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffState {
    pub grid: TubeGrid,
    pub disp: Vec<Vec4>,
    pub jac: Vec<Mat4>,
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

impl DiffState {
    pub fn identity(grid: TubeGrid) -> Self {
        Self { grid, disp: vec![Vec4::zeros(); grid.len()], jac: vec![Mat4::identity(); grid.len()] }
    }

    /// Tricubic interpolation, periodic in `z` and clamped in `w`; the
    /// identity outside the grid box.
    pub fn sample(&self, q: &Vec4) -> (Vec4, Mat4) {
        let g = &self.grid;
        let h = g.spacing();
        let (u1, u2) = ((q[2] + g.radius) / h, (q[3] + g.radius) / h);
        let top = (g.n_w - 1) as f64;
        if !(0.0..=top).contains(&u1) || !(0.0..=top).contains(&u2) {
            return (Vec4::zeros(), Mat4::identity());
        }
        let uz = (q[0] / (2.0 * std::f64::consts::PI) * g.n_z as f64).rem_euclid(g.n_z as f64);
        let split = |u: f64, n: usize| {
            let i = (u.floor() as usize).min(n.saturating_sub(2));
            (i, u - i as f64)
        };
        let (iz, tz) = split(uz, g.n_z + 1);
        let (i1, t1) = split(u1, g.n_w);
        let (i2, t2) = split(u2, g.n_w);
        let (wz, w1, w2) = (catmull_rom(tz), catmull_rom(t1), catmull_rom(t2));
        let clamp = |i: isize| i.clamp(0, g.n_w as isize - 1) as usize;
        let mut disp = Vec4::zeros();
        let mut jac = Mat4::zeros();
        for (a, &wa) in wz.iter().enumerate() {
            let kz = (iz as isize + a as isize - 1).rem_euclid(g.n_z as isize) as usize;
            for (b, &wb) in w1.iter().enumerate() {
                let k1 = clamp(i1 as isize + b as isize - 1);
                for (c, &wc) in w2.iter().enumerate() {
                    let w = wa * wb * wc;
                    if w == 0.0 {
                        continue;
                    }
                    let k2 = clamp(i2 as isize + c as isize - 1);
                    let idx = g.index(kz, k1, k2);
                    disp += self.disp[idx] * w;
                    jac += self.jac[idx] * w;
                }
            }
        }
        (disp, jac)
    }
}

/// `J_i = dψ⁻¹·J(ψ)·dψ` on the grid.
fn pulled_field(curve: &CurveField, points: &[Vec4], state: &DiffState) -> Vec<Mat4> {
    points
        .iter()
        .zip(state.disp.iter().zip(&state.jac))
        .map(|(p, (d, a))| {
            let inv = a.try_inverse().unwrap_or_else(Mat4::zeros);
            inv * curve.j_at(&(p + d)) * a
        })
        .collect()
}

/// One accepted step of the preparation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub t_from: f64,
    pub t_to: f64,
    pub theta: f64,
    pub retries: usize,
    /// `max_z ‖Φ_i − Id‖`.
    pub input_defect: f64,
    /// `max ‖dφ_i − Id‖` over the grid.
    pub c1_defect: f64,
    pub margin_before: f64,
    pub margin_after: f64,
    pub max_margin_change: f64,
    pub n_along_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineTrace {
    pub params: PipelineParams,
    pub initial_n_along_z: f64,
    pub initial_margin: f64,
    pub steps: Vec<StepRecord>,
    pub total_retries: usize,
}

/// Output of a completed preparation.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedField {
    pub state: DiffState,
    pub field: Vec<Mat4>,
    pub summary: PrepareSummary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrepareSummary {
    pub steps: usize,
    pub final_n_along_z: f64,
    pub min_margin: f64,
    /// `max |J_final − Ψ_{1/2}^*J|` at the grid points of `Z`.
    pub z_match_error: f64,
    /// `max |g_final − g_initial|` of the canonical metric along `Z`.
    pub metric_drift: f64,
    /// `max |J_final − J|` at grid points outside the first support tube.
    pub outside_change: f64,
}

fn z_indices(grid: &TubeGrid) -> Vec<usize> {
    (0..grid.n_z).map(|k| grid.index(k, grid.centre(), grid.centre())).collect()
}

fn n_along_z(field: &[Mat4], grid: &TubeGrid) -> Result<f64, PipelineError> {
    let zs = grid.zs();
    let mut n = 0.0f64;
    for (k, idx) in z_indices(grid).into_iter().enumerate() {
        n = n.max(fiber_of(&field[idx], zs[k])?.skew.n);
    }
    Ok(n)
}

/// `max ‖J‖` and `max ‖∂J‖` (central differences along the grid axes) over
/// grid points with `|w| < radius`.
fn field_norms(field: &[Mat4], grid: &TubeGrid, radius: f64) -> (f64, f64) {
    let ws = grid.ws();
    let h = grid.spacing();
    let hz = 2.0 * std::f64::consts::PI / grid.n_z as f64;
    let n = grid.n_w;
    let (mut nj, mut ndj) = (0.0f64, 0.0f64);
    for k in 0..grid.n_z {
        for i1 in 0..n {
            for i2 in 0..n {
                if ws[i1].hypot(ws[i2]) >= radius {
                    continue;
                }
                let idx = grid.index(k, i1, i2);
                nj = nj.max(spectral_norm(&field[idx]));
                let kp = grid.index((k + 1) % grid.n_z, i1, i2);
                let km = grid.index((k + grid.n_z - 1) % grid.n_z, i1, i2);
                ndj = ndj.max(spectral_norm(&((field[kp] - field[km]) / (2.0 * hz))));
                if i1 > 0 && i1 + 1 < n {
                    let d = (field[grid.index(k, i1 + 1, i2)] - field[grid.index(k, i1 - 1, i2)]) / (2.0 * h);
                    ndj = ndj.max(spectral_norm(&d));
                }
                if i2 > 0 && i2 + 1 < n {
                    let d = (field[grid.index(k, i1, i2 + 1)] - field[grid.index(k, i1, i2 - 1)]) / (2.0 * h);
                    ndj = ndj.max(spectral_norm(&d));
                }
            }
        }
    }
    (nj, ndj)
}

fn min_margin_within(field: &[Mat4], points: &[Vec4], radius: f64) -> f64 {
    field
        .iter()
        .zip(points)
        .filter(|(_, p)| p[2].hypot(p[3]) < radius)
        .map(|(j, _)| upsilon(j))
        .fold(f64::INFINITY, f64::min)
}

/// Runs the preparation. Steps that break thinness, invertibility or
/// stability are retried with the support radius multiplied by the shrink factor.
pub fn prepare(curve: &CurveField, params: &PipelineParams) -> Result<(PreparedField, PipelineTrace), PipelineError> {
    let grid = curve.grid;
    let points = grid.points();
    let mut state = DiffState::identity(grid);
    let initial = pulled_field(curve, &points, &state);
    let mut field = initial.clone();
    let n0 = n_along_z(&field, &grid)?;
    let mut trace = PipelineTrace {
        params: params.clone(),
        initial_n_along_z: n0,
        initial_margin: field.iter().map(upsilon).fold(f64::INFINITY, f64::min),
        steps: Vec::new(),
        total_retries: 0,
    };
    let times = &params.partition.times;
    let steps = if n0 <= STRUCTURAL { 0 } else { times.len() - 1 };
    let mut theta = params.theta0;
    for i in 0..steps {
        let (t0, t1) = (times[i], times[i + 1]);
        let phi: Vec<Mat4> = curve
            .fibers
            .iter()
            .map(|f| {
                let a = psi_in_frame(f, t0)?;
                let b = psi_in_frame(f, t1)?;
                Ok(a.try_inverse().ok_or(LinearError::DegenerateSplit(0.0))? * b)
            })
            .collect::<Result<_, PipelineError>>()?;
        let mut violation = String::new();
        let mut accepted = None;
        for retry in 0..=params.max_retries {
            if retry > 0 {
                theta *= params.shrink_factor;
            }
            let margin_w = min_margin_within(&field, &points, 2.0 * theta);
            let (nj, ndj) = field_norms(&field, &grid, 2.0 * theta);
            if margin_w <= params.eta {
                violation = format!("Υ[J_i] = {margin_w:.6} ≤ η = {:.6} on W_i (θ = {theta:.4e})", params.eta);
                continue;
            }
            if nj >= params.c || ndj >= params.c {
                violation = format!("‖J_i‖ = {nj:.4}, ‖dJ_i‖ = {ndj:.4} not below C = {:.4} on W_i (θ = {theta:.4e})", params.c);
                continue;
            }
            let (ext, rep): (_, DiffeoReport) = match extend_diffeo(&phi, theta, &grid, Some(theta)) {
                Ok(x) => x,
                Err(e) => {
                    violation = format!("extension failed: {e}");
                    continue;
                }
            };
            let mut next = DiffState { grid, disp: Vec::with_capacity(points.len()), jac: Vec::with_capacity(points.len()) };
            for (idx, p) in points.iter().enumerate() {
                let (q, dphi) = ext.apply_with_jacobian(p);
                // Points fixed by φ (all of Z and everything outside the support) keep their node values.
                let (d, a) = if q == *p { (state.disp[idx], state.jac[idx]) } else { state.sample(&q) };
                next.disp.push(q + d - p);
                next.jac.push(a * dphi);
            }
            let new_field = pulled_field(curve, &points, &next);
            let check = stability_check(&field, &new_field, params.eta);
            if !check.passed {
                violation = format!(
                    "stability: max |ΔΥ| = {:.6} (η = {:.6}), min Υ = {:.6}",
                    check.max_change, params.eta, check.min_after
                );
                continue;
            }
            accepted = Some((retry, rep, next, new_field, check));
            break;
        }
        let Some((retries, rep, next, new_field, check)) = accepted else {
            return Err(PipelineError::RetriesExhausted { step: i, violation, trace: Box::new(trace) });
        };
        let margin_before = field.iter().map(upsilon).fold(f64::INFINITY, f64::min);
        state = next;
        field = new_field;
        trace.total_retries += retries;
        trace.steps.push(StepRecord {
            step: i,
            t_from: t0,
            t_to: t1,
            theta,
            retries,
            input_defect: rep.input_defect,
            c1_defect: rep.c1_defect,
            margin_before,
            margin_after: check.min_after,
            max_margin_change: check.max_change,
            n_along_z: n_along_z(&field, &grid)?,
        });
    }
    let summary = summarize(curve, &initial, &field, &points, params, steps)?;
    Ok((PreparedField { state, field, summary }, trace))
}

fn summarize(
    curve: &CurveField,
    initial: &[Mat4],
    field: &[Mat4],
    points: &[Vec4],
    params: &PipelineParams,
    steps: usize,
) -> Result<PrepareSummary, PipelineError> {
    let grid = curve.grid;
    let mut z_match_error = 0.0f64;
    let mut metric_drift = 0.0f64;
    for (k, idx) in z_indices(&grid).into_iter().enumerate() {
        let f = &curve.fibers[k];
        let target = if steps == 0 {
            initial[idx]
        } else {
            let psi = psi_in_frame(f, 0.5)?;
            psi.try_inverse().ok_or(LinearError::DegenerateSplit(0.0))? * initial[idx] * psi
        };
        z_match_error = z_match_error.max((field[idx] - target).amax());
        metric_drift = metric_drift.max((fiber_of(&field[idx], f.z)?.metric - f.metric).amax());
    }
    let outside_change = field
        .iter()
        .zip(initial)
        .zip(points)
        .filter(|(_, p)| p[2].hypot(p[3]) >= params.theta0)
        .map(|((a, b), _)| (a - b).amax())
        .fold(0.0, f64::max);
    Ok(PrepareSummary {
        steps,
        final_n_along_z: n_along_z(field, &grid)?,
        min_margin: field.iter().map(upsilon).fold(f64::INFINITY, f64::min),
        z_match_error,
        metric_drift,
        outside_change,
    })
}
