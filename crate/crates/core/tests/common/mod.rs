//! Shared test oracles: adaptive 1-D radial quadrature, finite differences,
//! dense linear algebra references. Everything here is independent of the
//! implementation paths it checks.

#![allow(dead_code)]

use bubbletower::TowerConfiguration;

/// Adaptive Simpson on [a, b].
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// ∫_0^∞ g(r) dr via the substitution r = t/(1-t).
pub fn radial_integral<F: Fn(f64) -> f64>(g: F, tol: f64) -> f64 {
    simpson(&|t: f64| {
        let r = t / (1.0 - t);
        g(r) / ((1.0 - t) * (1.0 - t))
    }, 0.0, 1.0 - 1e-12, tol)
}

/// Central-difference gradient with step h.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut g = vec![0.0; n];
    let mut yp = y.to_vec();
    for i in 0..n {
        yp[i] = y[i] + h;
        let fp = f(&yp);
        yp[i] = y[i] - h;
        let fm = f(&yp);
        yp[i] = y[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Second-order finite-difference Laplacian (the 2n+1 point stencil).
pub fn fd_laplacian<F: Fn(&[f64]) -> f64>(f: &F, y: &[f64], h: f64) -> f64 {
    let n = y.len();
    let f0 = f(y);
    let mut acc = 0.0;
    let mut yp = y.to_vec();
    for i in 0..n {
        yp[i] = y[i] + h;
        let fp = f(&yp);
        yp[i] = y[i] - h;
        let fm = f(&yp);
        yp[i] = y[i];
        acc += fp - 2.0 * f0 + fm;
    }
    acc / (h * h)
}

/// Deterministic sample points away from the bubble cores.
pub fn far_points(config: &TowerConfiguration, count: usize, seed: u64) -> Vec<Vec<f64>> {
    bubbletower::kernel::sample_points(config, count, seed)
}
