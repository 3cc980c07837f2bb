//! Numerical integration: composite Gauss–Legendre panels for smooth
//! oscillatory integrands with a known frequency content, and adaptive
//! Simpson for integrands with isolated kinks.

/// 8-point Gauss–Legendre nodes on [-1, 1] (positive half; symmetric).
const GL8_NODES: [f64; 4] = [
    0.183434642495649805,
    0.525532409916328986,
    0.796666477413626740,
    0.960289856497536232,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362683783378361983,
    0.313706645877887287,
    0.222381034453374471,
    0.101228536290376259,
];

/// Composite 8-point Gauss–Legendre rule with `panels` equal panels on
/// `[a, b]`. Exact for polynomials of degree 15 on each panel; for
/// trigonometric integrands use roughly one panel per wavelength.
pub fn gauss_legendre_panels<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    assert!(panels > 0, "at least one panel required");
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
            acc += w * (f(mid + half * x) + f(mid - half * x));
        }
        total += acc * half;
    }
    total
}

/// Explicit nodes and weights of the composite 8-point Gauss–Legendre rule
/// with `panels` equal panels on `[a, b]`, for integrating many functions
/// on one shared grid. Nodes are ascending.
pub fn panel_nodes(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(panels > 0, "at least one panel required");
    let h = (b - a) / panels as f64;
    let half = 0.5 * h;
    let mut nodes = Vec::with_capacity(8 * panels);
    let mut weights = Vec::with_capacity(8 * panels);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for i in (0..4).rev() {
            nodes.push(mid - half * GL8_NODES[i]);
            weights.push(half * GL8_WEIGHTS[i]);
        }
        for i in 0..4 {
            nodes.push(mid + half * GL8_NODES[i]);
            weights.push(half * GL8_WEIGHTS[i]);
        }
    }
    (nodes, weights)
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
///
/// The recursion uses the standard Richardson acceptance test with a depth
/// cap; integrands with isolated kinks (such as piecewise-smooth coefficient
/// functions) converge because the kink gets isolated into ever smaller
/// subintervals.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: FnMut(f64) -> f64>(
        f: &mut F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_on_degree_15() {
        // f(x) = x^15 + 3 x^8 - x^3 on [0, 2]; exact antiderivative known.
        let f = |x: f64| x.powi(15) + 3.0 * x.powi(8) - x.powi(3);
        let exact = 2f64.powi(16) / 16.0 + 3.0 * 2f64.powi(9) / 9.0 - 2f64.powi(4) / 4.0;
        let got = gauss_legendre_panels(f, 0.0, 2.0, 1);
        assert!((got - exact).abs() < 1e-10 * exact.abs());
    }

    #[test]
    fn gauss_legendre_handles_oscillations() {
        // Integral of sin^2(kx) over [0, pi] is pi/2 for every integer k.
        // Two panels per oscillation period keep the rule at roundoff level.
        for k in [1usize, 8, 32, 64] {
            let f = |x: f64| (k as f64 * x).sin().powi(2);
            let got = gauss_legendre_panels(f, 0.0, std::f64::consts::PI, (2 * k).max(8));
            assert!(
                (got - std::f64::consts::FRAC_PI_2).abs() < 1e-12,
                "k = {k}: {got}"
            );
        }
    }

    #[test]
    fn adaptive_simpson_smooth_and_kinked() {
        let mut f = |x: f64| x.sin();
        let got = adaptive_simpson(&mut f, 0.0, std::f64::consts::PI, 1e-12);
        assert!((got - 2.0).abs() < 1e-11);

        let mut g = |x: f64| x.abs() * (-x * x).exp();
        // Antiderivative of |x| e^{-x^2} on [-1, 2] by symmetry:
        // int_0^1 + int_0^2 of x e^{-x^2} = (1 - e^{-1})/2 + (1 - e^{-4})/2.
        let exact = 0.5 * (1.0 - (-1.0f64).exp()) + 0.5 * (1.0 - (-4.0f64).exp());
        let got = adaptive_simpson(&mut g, -1.0, 2.0, 1e-12);
        assert!((got - exact).abs() < 1e-10, "{got} vs {exact}");
    }

    #[test]
    fn sine_basis_orthogonality() {
        // The Dirichlet sine modes on (0, pi) are L^2-orthonormal with the
        // sqrt(2/pi) normalization; the assembled Galerkin integrals rely on
        // the panel rule resolving products of two modes.
        let norm = (2.0 / std::f64::consts::PI).sqrt();
        for (j, k) in [(1usize, 1usize), (3, 3), (2, 5), (17, 19), (40, 40)] {
            let f = |x: f64| {
                norm * (j as f64 * x).sin() * norm * (k as f64 * x).sin()
            };
            let got = gauss_legendre_panels(f, 0.0, std::f64::consts::PI, (j + k).max(8));
            let expected = if j == k { 1.0 } else { 0.0 };
            assert!((got - expected).abs() < 1e-12, "({j},{k}): {got}");
        }
    }
}
