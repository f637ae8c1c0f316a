//! Smooth transition functions and Gauss–Legendre quadrature.

use std::f64::consts::PI;

/// C∞ step on [0, 1]: `e^{-1/x} / (e^{-1/x} + e^{-1/(1-x)})`.
///
/// Returns `(value, derivative)`. Maximal slope is 2, attained at 1/2.
pub fn smooth_step(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0);
    }
    // s = 1 / (1 + e^{q}), q = 1/x − 1/(1−x)
    let q = 1.0 / x - 1.0 / (1.0 - x);
    if q > 700.0 {
        return (0.0, 0.0);
    }
    if q < -700.0 {
        return (1.0, 0.0);
    }
    let e = q.exp();
    let s = 1.0 / (1.0 + e);
    let dq = -1.0 / (x * x) - 1.0 / ((1.0 - x) * (1.0 - x));
    let ds = -s * s * e * dq;
    (s, ds)
}

const WARP: f64 = 0.3;

/// The smooth step composed with the warp `y + k·sin(2πy)/(2π)`, `k = 0.3`.
///
/// The warp spends more of the unit interval in the steep middle part, which
/// lowers the peak slope to about 1.575.
pub fn warped_step(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0);
    }
    let h = x + WARP * (2.0 * PI * x).sin() / (2.0 * PI);
    let dh = 1.0 + WARP * (2.0 * PI * x).cos();
    let (s, ds) = smooth_step(h);
    (s, ds * dh)
}

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrate `f` over [a, b] with the given rule.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_endpoints_and_symmetry() {
        assert_eq!(smooth_step(0.0).0, 0.0);
        assert_eq!(smooth_step(1.0).0, 1.0);
        for &x in &[0.1, 0.27, 0.5, 0.8] {
            let (a, da) = smooth_step(x);
            let (b, db) = smooth_step(1.0 - x);
            assert!((a + b - 1.0).abs() < 1e-15);
            assert!((da - db).abs() < 1e-12);
        }
        assert!((smooth_step(0.5).1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for &x in &[0.05, 0.2, 0.5, 0.66, 0.93] {
            for f in [smooth_step, warped_step] {
                let fd = (f(x + h).0 - f(x - h).0) / (2.0 * h);
                assert!((fd - f(x).1).abs() < 1e-7, "x={x}");
            }
        }
    }

    #[test]
    fn warped_step_peak_slope() {
        let peak = (0..=100_000)
            .map(|k| warped_step(k as f64 / 100_000.0).1)
            .fold(0.0, f64::max);
        assert!(peak < 1.6 && peak > 1.5, "{peak}");
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(8);
        assert!((rule.1.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let v = integrate(|x| x.powi(14) + 3.0 * x.powi(3), 0.0, 2.0, &rule);
        let exact = 2f64.powi(15) / 15.0 + 3.0 * 16.0 / 4.0;
        assert!((v - exact).abs() / exact < 1e-13);
    }
}
