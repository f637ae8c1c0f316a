//! Fiberwise linear algebra of tame and compatible pairs on R⁴.
//!
//! A pair `(ω, J)` is tame when `ω(v, Jv) > 0` for every `v ≠ 0` and
//! compatible when additionally `ω(J·, J·) = ω`. Given a J-invariant plane
//! `V₁`, the ω-orthogonal complement `V₂` splits the space and J takes the
//! upper-triangular block form `[[J1, B], [0, J2]]` in that splitting.

use crate::linalg::{block, blocks, j0, max_abs, min_eigen, skew_block, spectral_norm, sym, Mat2, Mat4, Vec4};
use crate::tolerance::{DERIVED, STRUCTURAL};
use nalgebra::{Matrix4x2, RowVector2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("matrix is not antisymmetric (defect {0:.3e})")]
    NotAntisymmetric(f64),
    #[error("J·J + Id has max entry {0:.3e}, so J is not a complex structure")]
    NotComplexStructure(f64),
    #[error("pair is not tame: min ω(v, Jv) over the unit sphere is {0:.6e} ≤ 0")]
    NotTame(f64),
    #[error("plane is not J-invariant (defect {0:.3e})")]
    NotInvariantPlane(f64),
    #[error("plane is nearly ω-isotropic (|ω(e1, e2)| = {0:.3e}), split rejected")]
    DegenerateSplit(f64),
    #[error("metric is not symmetric positive-definite")]
    MetricNotPositive,
    #[error("skew block is not of the form ((a, b), (b, -a)) in a unitary frame (defect {0:.3e})")]
    SkewShape(f64),
}

/// A bilinear form `ω(v, w) = vᵀ·mat·w`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoForm {
    mat: Mat4,
}

impl TwoForm {
    /// Checked constructor; rejects matrices that are not antisymmetric.
    pub fn new(mat: Mat4) -> Result<Self, LinearError> {
        let defect = max_abs(&(mat + mat.transpose()));
        if defect > STRUCTURAL * mat.amax().max(1.0) {
            return Err(LinearError::NotAntisymmetric(defect));
        }
        Ok(Self { mat })
    }

    /// Antisymmetrizes the input; used where rounding must not accumulate.
    pub fn from_matrix(mat: Mat4) -> Self {
        Self {
            mat: (mat - mat.transpose()) * 0.5,
        }
    }

    /// `ω₀ = diag(J₀ᵀ, J₀ᵀ)`.
    pub fn standard() -> Self {
        let jt = j0().transpose();
        Self {
            mat: block(&jt, &Mat2::zeros(), &Mat2::zeros(), &jt),
        }
    }

    /// `diag(a·J₀ᵀ, b·J₀ᵀ)`.
    pub fn diagonal(a: f64, b: f64) -> Self {
        let jt = j0().transpose();
        Self {
            mat: block(&(jt * a), &Mat2::zeros(), &Mat2::zeros(), &(jt * b)),
        }
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.mat
    }

    pub fn eval(&self, v: &Vec4, w: &Vec4) -> f64 {
        v.dot(&(self.mat * w))
    }

    pub fn is_symplectic(&self) -> bool {
        self.mat.determinant().abs() > STRUCTURAL
    }

    /// `(1 - t)·self + t·other`.
    pub fn lerp(&self, other: &TwoForm, t: f64) -> TwoForm {
        TwoForm::from_matrix(self.mat * (1.0 - t) + other.mat * t)
    }

    /// Pull back by a linear map: `Aᵀ·ω·A`.
    pub fn pullback(&self, a: &Mat4) -> TwoForm {
        TwoForm::from_matrix(a.transpose() * self.mat * a)
    }
}

/// A linear map intended to square to `-Id`. Construction via
/// [`AcsMatrix::from_matrix`] does not check; use [`validate_acs`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcsMatrix {
    mat: Mat4,
}

impl AcsMatrix {
    pub fn new(mat: Mat4) -> Result<Self, LinearError> {
        let j = Self { mat };
        let defect = j.square_defect();
        if defect >= STRUCTURAL {
            return Err(LinearError::NotComplexStructure(defect));
        }
        Ok(j)
    }

    pub fn from_matrix(mat: Mat4) -> Self {
        Self { mat }
    }

    /// `J₀ ⊕ J₀`.
    pub fn standard() -> Self {
        Self {
            mat: block(&j0(), &Mat2::zeros(), &Mat2::zeros(), &j0()),
        }
    }

    /// `J_B = [[J₀, B], [0, J₀]]`; a complex structure whenever `B` anticommutes with `J₀`.
    pub fn block_form(b: &Mat2) -> Self {
        Self {
            mat: block(&j0(), b, &Mat2::zeros(), &j0()),
        }
    }

    /// `J_B` with `B = ((a, b), (b, -a))`.
    pub fn block_skew(a: f64, b: f64) -> Self {
        Self::block_form(&skew_block(a, b))
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.mat
    }

    /// Conjugate: `P·J·P⁻¹`.
    pub fn conjugate(&self, p: &Mat4, p_inv: &Mat4) -> AcsMatrix {
        AcsMatrix::from_matrix(p * self.mat * p_inv)
    }

    /// Max-entry norm of `J·J + Id`.
    pub fn square_defect(&self) -> f64 {
        max_abs(&(self.mat * self.mat + Mat4::identity()))
    }
}

/// True iff `‖J·J + Id‖ < 1e-12` in the max-entry norm.
pub fn validate_acs(j: &AcsMatrix) -> bool {
    j.square_defect() < STRUCTURAL
}

/// True iff `ω(J·, J·) = ω` within the structural tolerance.
pub fn is_invariant(omega: &TwoForm, j: &AcsMatrix) -> bool {
    let d = max_abs(&(j.mat.transpose() * omega.mat * j.mat - omega.mat));
    d < STRUCTURAL * omega.mat.amax().max(1.0)
}

/// Smallest eigenvalue of `sym(ω·J)` in the Euclidean metric, with eigenvector.
pub fn euclidean_margin(omega: &Mat4, j: &Mat4) -> (f64, Vec4) {
    min_eigen(&sym(&(omega * j)))
}

pub fn is_tame(omega: &TwoForm, j: &AcsMatrix) -> bool {
    euclidean_margin(&omega.mat, &j.mat).0 > STRUCTURAL
}

/// `ι(ω) = Jᵀ·ω·J`, defined for ω taming J.
pub fn iota(omega: &TwoForm, j: &AcsMatrix) -> Result<TwoForm, LinearError> {
    let (m, _) = euclidean_margin(&omega.mat, &j.mat);
    if m <= 0.0 {
        return Err(LinearError::NotTame(m));
    }
    Ok(omega.pullback(&j.mat))
}

/// `π(ω) = ½(ω + ι(ω))`, the compatible form in the fiber of ω.
pub fn compat_projection(omega: &TwoForm, j: &AcsMatrix) -> Result<TwoForm, LinearError> {
    let io = iota(omega, j)?;
    Ok(omega.lerp(&io, 0.5))
}

/// Result of splitting along a J-invariant plane.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub v1_basis: [Vec4; 2],
    pub v2_basis: [Vec4; 2],
    pub j1: Mat2,
    pub j2: Mat2,
    pub b: Mat2,
    /// Canonical metric in ambient coordinates.
    pub g: Mat4,
    /// Canonical metric in the split basis; block-diagonal.
    pub g_split: Mat4,
    pub omega: TwoForm,
    pub j: AcsMatrix,
}

fn columns(a: &Vec4, b: &Vec4) -> Matrix4x2<f64> {
    Matrix4x2::from_columns(&[*a, *b])
}

fn inverse2(m: &Mat2) -> Mat2 {
    let det = m.determinant();
    Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
}

/// Normalized size of `ω(e1, e2)`; the split is rejected below this.
const ISOTROPY_FLOOR: f64 = 1e-10;

/// ω-orthogonal projector onto `span(e)` along its ω-complement.
fn omega_projector(omega: &Mat4, e: &Matrix4x2<f64>) -> Result<Mat4, LinearError> {
    let m = e.transpose() * omega * e;
    let scale = e.column(0).norm() * e.column(1).norm() * omega.amax().max(1e-300);
    let w = m[(0, 1)].abs() / scale;
    if w < ISOTROPY_FLOOR {
        return Err(LinearError::DegenerateSplit(w));
    }
    Ok(e * inverse2(&m) * e.transpose() * omega)
}

/// Split `(ω, J)` along the J-invariant plane spanned by `v1_basis`.
pub fn split(omega: &TwoForm, j: &AcsMatrix, v1_basis: [Vec4; 2]) -> Result<SplitData, LinearError> {
    let e = columns(&v1_basis[0], &v1_basis[1]);
    let pi1 = omega_projector(&omega.mat, &e)?;
    let pi2 = Mat4::identity() - pi1;

    let candidates: Vec<Vec4> = (0..4).map(|k| pi2.column(k).into_owned()).collect();
    let mut best = (0, 1, 0.0f64);
    for p in 0..4 {
        for q in (p + 1)..4 {
            let w = omega.eval(&candidates[p], &candidates[q]).abs();
            if w > best.2 {
                best = (p, q, w);
            }
        }
    }
    let v2_basis = [candidates[best.0], candidates[best.1]];
    split_with_bases(omega, j, v1_basis, v2_basis)
}

/// Split with both bases prescribed; `v2_basis` must span the ω-complement of `v1_basis`.
pub fn split_with_bases(
    omega: &TwoForm,
    j: &AcsMatrix,
    v1_basis: [Vec4; 2],
    v2_basis: [Vec4; 2],
) -> Result<SplitData, LinearError> {
    let e = columns(&v1_basis[0], &v1_basis[1]);
    let f = columns(&v2_basis[0], &v2_basis[1]);
    let w = &omega.mat;
    let jm = &j.mat;

    let me = e.transpose() * w * e;
    let mf = f.transpose() * w * f;
    let scale_e = e.column(0).norm() * e.column(1).norm() * w.amax().max(1e-300);
    let scale_f = f.column(0).norm() * f.column(1).norm() * w.amax().max(1e-300);
    if me[(0, 1)].abs() / scale_e < ISOTROPY_FLOOR {
        return Err(LinearError::DegenerateSplit(me[(0, 1)].abs() / scale_e));
    }
    if mf[(0, 1)].abs() / scale_f < ISOTROPY_FLOOR {
        return Err(LinearError::DegenerateSplit(mf[(0, 1)].abs() / scale_f));
    }
    let me_inv = inverse2(&me);
    let mf_inv = inverse2(&mf);

    let je = jm * e;
    let j1 = me_inv * e.transpose() * w * je;
    let invariance = (je - e * j1).amax() / je.amax().max(1.0);
    if invariance > DERIVED {
        return Err(LinearError::NotInvariantPlane(invariance));
    }
    let cross = (e.transpose() * w * f).amax() / (scale_e.max(scale_f));
    if cross > DERIVED {
        return Err(LinearError::NotInvariantPlane(cross));
    }

    let jf = jm * f;
    let j2 = mf_inv * f.transpose() * w * jf;
    let b = me_inv * e.transpose() * w * jf;

    let g1 = me * j1;
    let g2 = mf * j2;
    let g_split = block(&crate::linalg::sym2(&g1), &Mat2::zeros(), &Mat2::zeros(), &crate::linalg::sym2(&g2));
    if crate::linalg::cholesky2(&g_split.fixed_view::<2, 2>(0, 0).into_owned()).is_none()
        || crate::linalg::cholesky2(&g_split.fixed_view::<2, 2>(2, 2).into_owned()).is_none()
    {
        return Err(LinearError::NotTame(f64::NAN));
    }
    let p = Mat4::from_columns(&[v1_basis[0], v1_basis[1], v2_basis[0], v2_basis[1]]);
    let p_inv = p.try_inverse().ok_or(LinearError::DegenerateSplit(0.0))?;
    let g = p_inv.transpose() * g_split * p_inv;

    Ok(SplitData {
        v1_basis,
        v2_basis,
        j1,
        j2,
        b,
        g: sym(&g),
        g_split,
        omega: *omega,
        j: *j,
    })
}

/// Four vectors `(f1, f2, f3, f4)` with `J f1 = f2`, `J₂ f3 = f4` and
/// `ω = ω₀`, `g = Id` in this basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitaryFrame {
    pub vectors: [Vec4; 4],
}

impl UnitaryFrame {
    /// Change-of-basis matrix with the frame vectors as columns.
    pub fn matrix(&self) -> Mat4 {
        Mat4::from_columns(&self.vectors)
    }
}

impl SplitData {
    /// ω-orthogonal projector onto V₂.
    pub fn pi2(&self) -> Mat4 {
        let e = columns(&self.v1_basis[0], &self.v1_basis[1]);
        let me = e.transpose() * self.omega.mat * e;
        Mat4::identity() - e * inverse2(&me) * e.transpose() * self.omega.mat
    }

    /// Re-split in the given frame.
    pub fn in_frame(&self, frame: &UnitaryFrame) -> Result<SplitData, LinearError> {
        let v = frame.vectors;
        split_with_bases(&self.omega, &self.j, [v[0], v[1]], [v[2], v[3]])
    }

    pub fn to_unitary(&self) -> Result<SplitData, LinearError> {
        self.in_frame(&unitary_frame(self)?)
    }
}

/// Unitary frame adapted to the splitting, rotated by `(θ1, θ2)` inside V₁ and V₂.
pub fn unitary_frame_rotated(sd: &SplitData, theta1: f64, theta2: f64) -> Result<UnitaryFrame, LinearError> {
    let jm = sd.j.mat;
    let pi2 = sd.pi2();
    let e = sd.v1_basis[0];
    let n1 = sd.omega.eval(&e, &(jm * e));
    if n1 <= 0.0 {
        return Err(LinearError::NotTame(n1));
    }
    let f1 = e / n1.sqrt();
    let f2 = jm * f1;
    let p = sd.v2_basis[0];
    let n2 = sd.omega.eval(&p, &(pi2 * jm * p));
    if n2 <= 0.0 {
        return Err(LinearError::NotTame(n2));
    }
    let f3 = p / n2.sqrt();
    let f4 = pi2 * jm * f3;
    let (s1, c1) = theta1.sin_cos();
    let (s2, c2) = theta2.sin_cos();
    Ok(UnitaryFrame {
        vectors: [f1 * c1 + f2 * s1, f2 * c1 - f1 * s1, f3 * c2 + f4 * s2, f4 * c2 - f3 * s2],
    })
}

pub fn unitary_frame(sd: &SplitData) -> Result<UnitaryFrame, LinearError> {
    unitary_frame_rotated(sd, 0.0, 0.0)
}

/// `B = ((a, b), (b, -a))` in a unitary frame; `n = √(a² + b²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewPart {
    pub a: f64,
    pub b: f64,
    pub n: f64,
}

impl SkewPart {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b, n: a.hypot(b) }
    }

    pub fn is_tame(&self) -> bool {
        self.n < 2.0
    }

    pub fn matrix(&self) -> Mat2 {
        skew_block(self.a, self.b)
    }
}

/// Skew part of the split, evaluated in a unitary frame.
pub fn skew_norm(sd: &SplitData) -> Result<SkewPart, LinearError> {
    let u = sd.to_unitary()?;
    skew_from_block(&u.b)
}

/// Read `(a, b)` off a block already expressed in a unitary frame.
pub fn skew_from_block(bm: &Mat2) -> Result<SkewPart, LinearError> {
    let a = 0.5 * (bm[(0, 0)] - bm[(1, 1)]);
    let b = 0.5 * (bm[(0, 1)] + bm[(1, 0)]);
    let shape = (bm - skew_block(a, b)).amax();
    if shape > DERIVED * bm.amax().max(1.0) {
        return Err(LinearError::SkewShape(shape));
    }
    Ok(SkewPart::new(a, b))
}

/// Tameness margin at one or many points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TamenessReport {
    pub margin: f64,
    pub argmin_point: usize,
    pub argmin_vector: [f64; 4],
    pub per_point: Vec<(usize, f64)>,
}

impl TamenessReport {
    /// Aggregate per-point `(margin, unit vector)` pairs.
    pub fn collect<I: IntoIterator<Item = (f64, Vec4)>>(points: I) -> Self {
        let mut report = TamenessReport {
            margin: f64::INFINITY,
            argmin_point: 0,
            argmin_vector: [0.0; 4],
            per_point: Vec::new(),
        };
        for (i, (m, v)) in points.into_iter().enumerate() {
            report.per_point.push((i, m));
            if m < report.margin {
                report.margin = m;
                report.argmin_point = i;
                report.argmin_vector = [v[0], v[1], v[2], v[3]];
            }
        }
        report
    }

    pub fn all_positive(&self) -> bool {
        self.margin > 0.0
    }
}

/// `min ω(v, Jv)` over `{vᵀ G v = 1}` with the minimizing vector.
///
/// With `G = L Lᵀ`, substituting `v = L⁻ᵀ x` turns this into the smallest
/// eigenvalue of `L⁻¹ sym(ωJ) L⁻ᵀ`.
pub fn local_margin(omega: &Mat4, j: &Mat4, metric: &Mat4) -> Result<(f64, Vec4), LinearError> {
    let s = sym(&(omega * j));
    if *metric == Mat4::identity() {
        return Ok(min_eigen(&s));
    }
    let chol = metric.cholesky().ok_or(LinearError::MetricNotPositive)?;
    let l_inv = chol.l().try_inverse().ok_or(LinearError::MetricNotPositive)?;
    let (m, x) = min_eigen(&sym(&(l_inv * s * l_inv.transpose())));
    Ok((m, l_inv.transpose() * x))
}

/// Single-point tameness margin in the given reference metric.
pub fn tameness_margin(omega: &TwoForm, j: &AcsMatrix, metric: &Mat4) -> Result<TamenessReport, LinearError> {
    let (m, v) = local_margin(&omega.mat, &j.mat, metric)?;
    Ok(TamenessReport::collect([(m, v)]))
}

/// Operator norm of `J_B` in closed form: `(N + √(N² + 4)) / 2`.
pub fn block_form_norm(n: f64) -> f64 {
    0.5 * (n + (n * n + 4.0).sqrt())
}

/// Checks `‖J_B‖ ≤ √(1 + N + N²) ≤ 1 + N` for a block-form structure.
pub fn acs_norm_bound_check(j_b: &AcsMatrix) -> bool {
    let (_, b, _, _) = blocks(&j_b.mat);
    let n = crate::linalg::spectral_norm2(&b);
    let norm = spectral_norm(&j_b.mat);
    let middle = (1.0 + n + n * n).sqrt();
    norm <= middle + STRUCTURAL && middle <= 1.0 + n + STRUCTURAL
}

/// Uniform sample `(a, b)` from the open disk of the given radius.
pub fn random_skew<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> SkewPart {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random::<f64>() * std::f64::consts::TAU;
    SkewPart::new(r * t.cos(), r * t.sin())
}

/// Permutation between `(x1, y1, x2, y2)` and `(x1, x2, y1, y2)`.
fn interleave() -> Mat4 {
    Mat4::from_row_slice(&[
        1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    ])
}

/// Random linear symplectomorphism of `ω₀`, a product of shears and a
/// block-diagonal `GL(2)` factor, with entries of size about `scale`.
pub fn random_symplectic<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Mat4 {
    let mut sample = |s: f64| (rng.random::<f64>() * 2.0 - 1.0) * s;
    let a = crate::linalg::rotation2(sample(std::f64::consts::PI))
        * Mat2::new(sample(scale).exp(), 0.0, 0.0, sample(scale).exp())
        * crate::linalg::rotation2(sample(std::f64::consts::PI));
    let s1 = {
        let (p, q, r) = (sample(scale), sample(scale), sample(scale));
        Mat2::new(p, q, q, r)
    };
    let s2 = {
        let (p, q, r) = (sample(scale), sample(scale), sample(scale));
        Mat2::new(p, q, q, r)
    };
    let a_inv_t = inverse2(&a).transpose();
    let d = block(&a, &Mat2::zeros(), &Mat2::zeros(), &a_inv_t);
    let upper = block(&Mat2::identity(), &s1, &Mat2::zeros(), &Mat2::identity());
    let lower = block(&Mat2::identity(), &Mat2::zeros(), &s2, &Mat2::identity());
    let q = interleave();
    q * (upper * d * lower) * q
}

/// A randomly placed tame pair `(ω₀, P J_B P⁻¹)` with the J-invariant plane `P·span(e1, e2)`.
#[derive(Clone, Debug)]
pub struct RandomTamePair {
    pub omega: TwoForm,
    pub j: AcsMatrix,
    pub v1_basis: [Vec4; 2],
    pub skew: SkewPart,
    pub p: Mat4,
}

impl RandomTamePair {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n_radius: f64) -> Self {
        let skew = random_skew(rng, n_radius);
        let p = random_symplectic(rng, 0.6);
        let p_inv = p.try_inverse().expect("symplectic matrices are invertible");
        let j = AcsMatrix::block_form(&skew.matrix()).conjugate(&p, &p_inv);
        // Random basis of the invariant plane.
        let mut c = || rng.random::<f64>() * 2.0 - 1.0;
        let mix = Mat2::new(1.0 + c(), c() * 0.5, c() * 0.5, 1.0 + c());
        let mix = if mix.determinant().abs() < 0.1 { Mat2::identity() } else { mix };
        let e1 = p.column(0).into_owned();
        let e2 = p.column(1).into_owned();
        let v1_basis = [e1 * mix[(0, 0)] + e2 * mix[(1, 0)], e1 * mix[(0, 1)] + e2 * mix[(1, 1)]];
        Self {
            omega: TwoForm::standard(),
            j,
            v1_basis,
            skew,
            p,
        }
    }
}

/// Helper: the `2 × 2` Gram matrix `Eᵀ M F` of two vector pairs.
pub fn gram(m: &Mat4, e: &[Vec4; 2], f: &[Vec4; 2]) -> Mat2 {
    let r0 = RowVector2::new(e[0].dot(&(m * f[0])), e[0].dot(&(m * f[1])));
    let r1 = RowVector2::new(e[1].dot(&(m * f[0])), e[1].dot(&(m * f[1])));
    Mat2::from_rows(&[r0, r1])
}
