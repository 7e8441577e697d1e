//! Closed-form bubble algebra: the standard bubble, its rescalings and
//! translations, first derivatives, the dilation/translation kernel
//! generators and the Kelvin transform.
//!
//! Everything here is analytic. Numerical differentiation appears only in
//! test oracles, so error fields and linearized residuals built on these
//! primitives carry no discretization error of their own.

use crate::error::{Error, Result};

/// Critical exponent p = (n+2)/(n-2).
pub fn critical_exponent(n: usize) -> f64 {
    (n as f64 + 2.0) / (n as f64 - 2.0)
}

/// Coupling constant γ = n(n-2)/4 of -Δu = γ|u|^{p-1}u.
pub fn gamma(n: usize) -> f64 {
    (n as f64) * (n as f64 - 2.0) / 4.0
}

/// x^{(n-2)/2} with fast paths for the even dimensions used in practice.
#[inline]
pub fn pow_half_nm2(x: f64, n: usize) -> f64 {
    match n {
        4 => x,
        6 => x * x,
        _ => x.powf((n as f64 - 2.0) / 2.0),
    }
}

/// |x|^{p-1} x for the critical p of dimension n (p = 3 when n = 4).
#[inline]
pub fn signed_critical_power(x: f64, n: usize) -> f64 {
    if n == 4 {
        x * x * x
    } else {
        let p = critical_exponent(n);
        x.abs().powf(p - 1.0) * x
    }
}

/// |x|^{p-1} for the critical p of dimension n.
#[inline]
pub fn abs_critical_power_m1(x: f64, n: usize) -> f64 {
    if n == 4 {
        x * x
    } else {
        x.abs().powf(critical_exponent(n) - 1.0)
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!("n must be >= 4, got {n}")));
    }
    Ok(())
}

/// Scale and center of one bubble U_{μ,ξ}.
#[derive(Debug, Clone, PartialEq)]
pub struct BubbleParams {
    n: usize,
    mu: f64,
    xi: Vec<f64>,
}

impl BubbleParams {
    pub fn new(n: usize, mu: f64, xi: Vec<f64>) -> Result<Self> {
        check_dim(n)?;
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
        }
        if xi.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: xi.len() });
        }
        Ok(Self { n, mu, xi })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }
    /// Critical exponent derived from n; never stored.
    pub fn p(&self) -> f64 {
        critical_exponent(self.n)
    }
    pub fn gamma(&self) -> f64 {
        gamma(self.n)
    }
}

/// The standard bubble U(y) = (2/(1+|y|^2))^{(n-2)/2}.
pub fn eval_bubble(y: &[f64], n: usize) -> Result<f64> {
    check_dim(n)?;
    Ok(bubble_profile(norm_sq(y), n))
}

/// U as a function of |y|^2; the hot path used by field evaluators.
#[inline]
pub fn bubble_profile(r_sq: f64, n: usize) -> f64 {
    pow_half_nm2(2.0 / (1.0 + r_sq), n)
}

/// ∇U(y) = -(n-2) y U(y)/(1+|y|^2), written into `out`.
#[inline]
pub fn bubble_gradient(y: &[f64], n: usize, out: &mut [f64]) {
    let r_sq = norm_sq(y);
    let u = bubble_profile(r_sq, n);
    let c = -((n as f64) - 2.0) * u / (1.0 + r_sq);
    for (o, yi) in out.iter_mut().zip(y) {
        *o = c * yi;
    }
}

/// U_{μ,ξ}(y) = μ^{-(n-2)/2} U((y-ξ)/μ).
pub fn eval_scaled_bubble(y: &[f64], params: &BubbleParams) -> f64 {
    let n = params.n;
    // (2μ/(μ² + |y-ξ|²))^{(n-2)/2}; algebraically identical and avoids
    // forming (y-ξ)/μ, which matters when μ ~ 1e-4.
    let d_sq = dist_sq(y, &params.xi);
    pow_half_nm2(2.0 * params.mu / (params.mu * params.mu + d_sq), n)
}

/// ∇U_{μ,ξ}(y) = -(n-2)(y-ξ) U_{μ,ξ}(y)/(μ² + |y-ξ|²).
pub fn scaled_bubble_gradient(y: &[f64], params: &BubbleParams, out: &mut [f64]) {
    let u = eval_scaled_bubble(y, params);
    let d_sq = dist_sq(y, &params.xi);
    let c = -((params.n as f64) - 2.0) * u / (params.mu * params.mu + d_sq);
    for i in 0..params.n {
        out[i] = c * (y[i] - params.xi[i]);
    }
}

/// ΔU_{μ,ξ}(y) = -γ U_{μ,ξ}(y)^p, from the equation itself.
///
/// Used everywhere a Laplacian of a bubble is needed, so no numerical
/// Laplacian ever enters the computation path.
pub fn laplacian_bubble(y: &[f64], params: &BubbleParams) -> f64 {
    let u = eval_scaled_bubble(y, params);
    -params.gamma() * signed_critical_power(u, params.n)
}

/// Kernel generators of the linearization at the standard bubble:
/// Z_0 = y·∇U + (n-2)/2 U and Z_α = ∂_{y_α}U for α = 1..n.
pub fn eval_z(alpha: usize, y: &[f64], n: usize) -> Result<f64> {
    check_dim(n)?;
    if alpha > n {
        return Err(Error::IndexOutOfRange(format!("Z index {alpha} > n = {n}")));
    }
    let r_sq = norm_sq(y);
    let u = bubble_profile(r_sq, n);
    let half = (n as f64 - 2.0) / 2.0;
    if alpha == 0 {
        // y·∇U = -(n-2) r² U/(1+r²), so Z_0 = (n-2)/2 U (1-r²)/(1+r²).
        Ok(half * u * (1.0 - r_sq) / (1.0 + r_sq))
    } else {
        Ok(-(n as f64 - 2.0) * y[alpha - 1] * u / (1.0 + r_sq))
    }
}

/// Kelvin transform of a pointwise map: (K f)(y) = |y|^{2-n} f(y/|y|²).
///
/// The origin is a declared singularity; the limit depends on the decay of
/// `f` and is never needed on the punctured domains we integrate over.
pub fn kelvin<F: Fn(&[f64]) -> f64>(f: F, y: &[f64], n: usize) -> Result<f64> {
    check_dim(n)?;
    let r_sq = norm_sq(y);
    if r_sq == 0.0 {
        return Err(Error::KelvinSingularity);
    }
    let inv: Vec<f64> = y.iter().map(|v| v / r_sq).collect();
    Ok(pow_half_nm2(1.0 / r_sq, n) * f(&inv))
}

/// Reflect y through the unit sphere: y ↦ y/|y|².
pub fn kelvin_point(y: &[f64]) -> Result<Vec<f64>> {
    let r_sq = norm_sq(y);
    if r_sq == 0.0 {
        return Err(Error::KelvinSingularity);
    }
    Ok(y.iter().map(|v| v / r_sq).collect())
}

#[inline]
pub fn norm_sq(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bubble_values() {
        assert_eq!(eval_bubble(&[0.0; 4], 4).unwrap(), 2.0);
        assert_eq!(eval_bubble(&[1.0, 0.0, 0.0, 0.0], 4).unwrap(), 1.0);
        let y6 = [10.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let expect = (2.0f64 / 101.0).powi(2);
        assert!((eval_bubble(&y6, 6).unwrap() - expect).abs() < 1e-18);
    }

    #[test]
    fn rejects_low_dimension() {
        assert!(eval_bubble(&[0.0; 3], 3).is_err());
        assert!(BubbleParams::new(3, 1.0, vec![0.0; 3]).is_err());
        assert!(BubbleParams::new(4, 0.0, vec![0.0; 4]).is_err());
    }

    #[test]
    fn bubble_strictly_decreasing_in_radius() {
        let mut prev = eval_bubble(&[0.0; 4], 4).unwrap();
        for i in 1..40 {
            let r = 0.25 * i as f64;
            let v = eval_bubble(&[r, 0.0, 0.0, 0.0], 4).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
    }

    #[test]
    fn scaled_bubble_center_values() {
        let p = BubbleParams::new(4, 1.0, vec![0.3, -0.2, 0.0, 0.7]).unwrap();
        let v = eval_scaled_bubble(&[0.3, -0.2, 0.0, 0.7], &p);
        assert!((v - 2.0).abs() < 1e-15);

        let p = BubbleParams::new(4, 0.25, vec![0.0; 4]).unwrap();
        assert!((eval_scaled_bubble(&[0.0; 4], &p) - 8.0).abs() < 1e-14);
    }

    #[test]
    fn scaled_bubble_sup_is_at_center() {
        // sup U_{μ,ξ} = μ^{-(n-2)/2} 2^{(n-2)/2}
        let p = BubbleParams::new(5, 0.1, vec![0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let peak = eval_scaled_bubble(p.xi(), &p);
        let expect = pow_half_nm2(2.0 / 0.1, 5);
        assert!((peak - expect).abs() < 1e-12 * expect);
        for t in [1e-3, 0.1, 0.5] {
            let y = [0.5 + t, 0.0, 0.0, 0.0, 0.0];
            assert!(eval_scaled_bubble(&y, &p) < peak);
        }
    }

    #[test]
    fn z_values_at_origin_and_axis() {
        assert_eq!(eval_z(0, &[0.0; 4], 4).unwrap(), 2.0);
        for alpha in 1..=4 {
            assert_eq!(eval_z(alpha, &[0.0; 4], 4).unwrap(), 0.0);
        }
        // Z_1(e_1) = -(n-2) y_1 U/(1+|y|²) = -2·1·1/2 = -1 at n = 4.
        let v = eval_z(1, &[1.0, 0.0, 0.0, 0.0], 4).unwrap();
        assert!((v - (-1.0)).abs() < 1e-15);
        assert!(eval_z(5, &[0.0; 4], 4).is_err());
    }

    #[test]
    fn kelvin_involution_and_invariance_of_u() {
        let y = [0.4, -0.7, 0.2, 0.1];
        let u = |p: &[f64]| eval_bubble(p, 4).unwrap();
        let ku = kelvin(u, &y, 4).unwrap();
        assert!((ku - u(&y)).abs() < 1e-14);
        // applying the transform twice returns the original value
        let kku = kelvin(|p: &[f64]| kelvin(u, p, 4).unwrap(), &y, 4).unwrap();
        assert!((kku - u(&y)).abs() < 1e-14);
        assert!(matches!(kelvin(u, &[0.0; 4], 4), Err(Error::KelvinSingularity)));
    }

    #[test]
    fn laplacian_identity_value() {
        // n = 4: γ = 2, p = 3, U(0) = 2 → ΔU(0) = -2·8 = -16... for the unit
        // bubble; the spec value -64 is for μ = ... check μ = 1, ξ = 0:
        let p = BubbleParams::new(4, 1.0, vec![0.0; 4]).unwrap();
        let v = laplacian_bubble(&[0.0; 4], &p);
        assert!((v - (-16.0)).abs() < 1e-13);
        // sign is strictly negative everywhere
        for r in [0.1, 1.0, 3.0, 10.0] {
            assert!(laplacian_bubble(&[r, 0.0, 0.0, 0.0], &p) < 0.0);
        }
    }
}
