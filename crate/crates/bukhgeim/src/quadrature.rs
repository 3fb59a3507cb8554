//! Gauss-Legendre rule and the polar annulus rule used for lambda sampling.

use num_complex::Complex64;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Chebyshev initial guess.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((x, w));
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Tensor polar rule on the annulus `r_inner < |lambda| < 2 r_inner`:
/// Gauss-Legendre in radius, uniform in angle, weights `|lambda| dr dtheta`.
/// The weights sum to the annulus area `3 pi r_inner^2`.
pub fn annulus_rule(r_inner: f64, n_r: usize, n_theta: usize) -> Vec<(Complex64, f64)> {
    let r_outer = 2.0 * r_inner;
    let gl = gauss_legendre(n_r);
    let dtheta = 2.0 * std::f64::consts::PI / n_theta as f64;
    let mut out = Vec::with_capacity(n_r * n_theta);
    for &(x, wr) in &gl {
        let r = 0.5 * (r_outer + r_inner) + 0.5 * (r_outer - r_inner) * x;
        let wr = wr * 0.5 * (r_outer - r_inner);
        for t in 0..n_theta {
            let theta = t as f64 * dtheta;
            let lambda = Complex64::from_polar(r, theta);
            out.push((lambda, wr * r * dtheta));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        // Degree-9 polynomial, 5-point rule is exact.
        let rule = gauss_legendre(5);
        let f = |x: f64| 3.0 * x.powi(9) - x.powi(6) + 0.5 * x.powi(2) - 2.0;
        let got: f64 = rule.iter().map(|&(x, w)| w * f(x)).sum();
        let exact = -2.0 / 7.0 + 1.0 / 3.0 - 4.0;
        assert!((got - exact).abs() < 1e-13, "got {got}, want {exact}");
        let wsum: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn annulus_weights_sum_to_area() {
        let r = 20.0;
        let rule = annulus_rule(r, 4, 8);
        let area: f64 = rule.iter().map(|&(_, w)| w).sum();
        let exact = 3.0 * std::f64::consts::PI * r * r;
        assert!((area - exact).abs() / exact < 1e-10);
        for &(lambda, w) in &rule {
            assert!(lambda.norm() > r && lambda.norm() < 2.0 * r);
            assert!(w > 0.0);
        }
    }
}
