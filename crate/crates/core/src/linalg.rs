//! Fixed-size helpers shared by every module.
//!
//! Coordinates on the 4-dimensional fiber are ordered `(u, v) = (x1, y1, x2, y2)`
//! where `u` spans the tangent plane of the curve and `v` the normal plane.
//! With `J0 = [[0, -1], [1, 0]]` the standard form is `ω0 = diag(J0ᵀ, J0ᵀ)`
//! and `ω(v, w) = vᵀ·ω·w`.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};

pub type Mat2 = Matrix2<f64>;
pub type Mat4 = Matrix4<f64>;
pub type Vec4 = Vector4<f64>;

/// The standard complex structure on R².
#[inline]
pub fn j0() -> Mat2 {
    Mat2::new(0.0, -1.0, 1.0, 0.0)
}

/// Assemble a 4×4 matrix from its four 2×2 blocks.
pub fn block(a: &Mat2, b: &Mat2, c: &Mat2, d: &Mat2) -> Mat4 {
    let mut m = Mat4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(a);
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(b);
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(c);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(d);
    m
}

pub fn block_diag(a: &Mat2, d: &Mat2) -> Mat4 {
    block(a, &Mat2::zeros(), &Mat2::zeros(), d)
}

/// Split a 4×4 matrix into `(A, B, C, D)` blocks.
pub fn blocks(m: &Mat4) -> (Mat2, Mat2, Mat2, Mat2) {
    (
        m.fixed_view::<2, 2>(0, 0).into_owned(),
        m.fixed_view::<2, 2>(0, 2).into_owned(),
        m.fixed_view::<2, 2>(2, 0).into_owned(),
        m.fixed_view::<2, 2>(2, 2).into_owned(),
    )
}

/// Max-entry norm.
#[inline]
pub fn max_abs(m: &Mat4) -> f64 {
    m.amax()
}

/// Symmetric part `(M + Mᵀ)/2`.
#[inline]
pub fn sym(m: &Mat4) -> Mat4 {
    (m + m.transpose()) * 0.5
}

#[inline]
pub fn sym2(m: &Mat2) -> Mat2 {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric 4×4 matrix and a unit eigenvector.
pub fn min_eigen(s: &Mat4) -> (f64, Vec4) {
    let eig = SymmetricEigen::new(*s);
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    (val, eig.eigenvectors.column(idx).into_owned())
}

/// Spectral norm of a 4×4 matrix through the eigenvalues of `MᵀM`.
pub fn spectral_norm(m: &Mat4) -> f64 {
    let eig = SymmetricEigen::new(m.transpose() * m);
    eig.eigenvalues.max().max(0.0).sqrt()
}

/// Spectral norm of a 2×2 matrix in closed form.
pub fn spectral_norm2(m: &Mat2) -> f64 {
    let g = m.transpose() * m;
    let tr = g.trace();
    let det = g.determinant();
    let disc = (tr * tr * 0.25 - det).max(0.0).sqrt();
    (tr * 0.5 + disc).max(0.0).sqrt()
}

/// Lower Cholesky factor of a symmetric positive-definite 2×2 matrix.
pub fn cholesky2(m: &Mat2) -> Option<Mat2> {
    let l00 = m[(0, 0)];
    if l00 <= 0.0 || !l00.is_finite() {
        return None;
    }
    let l00 = l00.sqrt();
    let l10 = m[(1, 0)] / l00;
    let d = m[(1, 1)] - l10 * l10;
    if d <= 0.0 {
        return None;
    }
    Some(Mat2::new(l00, 0.0, l10, d.sqrt()))
}

/// Planar rotation by `angle`.
#[inline]
pub fn rotation2(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// `B = [[a, b], [b, -a]]`, the shape every skew block takes in a unitary frame.
#[inline]
pub fn skew_block(a: f64, b: f64) -> Mat2 {
    Mat2::new(a, b, b, -a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_squares_to_minus_identity() {
        assert_eq!(j0() * j0(), -Mat2::identity());
    }

    #[test]
    fn block_roundtrip() {
        let a = Mat2::new(1.0, 2.0, 3.0, 4.0);
        let b = Mat2::new(5.0, 6.0, 7.0, 8.0);
        let c = Mat2::new(9.0, 10.0, 11.0, 12.0);
        let d = Mat2::new(13.0, 14.0, 15.0, 16.0);
        let m = block(&a, &b, &c, &d);
        assert_eq!(m[(0, 3)], 6.0);
        assert_eq!(m[(3, 0)], 11.0);
        assert_eq!(blocks(&m), (a, b, c, d));
    }

    #[test]
    fn spectral_norm_matches_closed_form_2x2() {
        let m = Mat2::new(0.3, -1.2, 0.7, 2.0);
        let emb = block_diag(&m, &Mat2::zeros());
        assert!((spectral_norm(&emb) - spectral_norm2(&m)).abs() < 1e-12);
    }

    #[test]
    fn skew_block_anticommutes_with_j0() {
        let b = skew_block(0.3, -0.8);
        assert!((j0() * b + b * j0()).amax() < 1e-15);
        assert!((spectral_norm2(&b) - (0.09f64 + 0.64).sqrt()).abs() < 1e-14);
    }
}
