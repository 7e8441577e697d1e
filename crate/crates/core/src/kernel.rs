//! The candidate kernel basis of the linearized operator at the two-ring
//! tower: the N₀ = 5(n-1) fields z_β generated by the equation's
//! invariances, their rebased combinations, the bubble-local fields they
//! decompose into, and closed-form linearized residuals.
//!
//! All site fields are taken at zero correction, which keeps every
//! decomposition identity exact and pointwise checkable.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bubble::{
    abs_critical_power_m1, bubble_profile, critical_exponent, dist_sq, gamma, norm_sq, pow_half_nm2,
};
use crate::config::TowerConfiguration;
use crate::error::{Error, Result};
use crate::error_field::{eval_ustar, grad_ustar};
use crate::quadrature::{QuadratureScheme, Region};

/// Number of invariance-generated kernel candidates, N₀ = 5(n-1).
pub fn n0(n: usize) -> usize {
    5 * (n - 1)
}

/// Dimension of the full invariance group action, 𝒩 = 2n+1+n(n-1)/2.
pub fn script_n(n: usize) -> usize {
    2 * n + 1 + n * (n - 1) / 2
}

/// What invariance a given z index comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZKind {
    /// z₀ = (n-2)/2 u + ∇u·y
    Dilation,
    /// z_α = ∂_α u
    Translation(usize),
    /// -y₂∂₁u + y₁∂₂u
    Rot12,
    /// -y₄∂₃u + y₃∂₄u
    Rot34,
    /// z_{n+2+α} = -2y_α z₀ + |y|² z_α, α = 1..4
    Kelvin(usize),
    /// -y_α z₁ + y₁ z_α, α = 3..n
    Rot1A(usize),
    /// -y_α z₂ + y₂ z_α, α = 3..n
    Rot2A(usize),
    /// -y_α z₃ + y₃ z_α, α = 5..n
    Rot3A(usize),
    /// -y_α z₄ + y₄ z_α, α = 5..n
    Rot4A(usize),
}

/// Index map β -> kind, contiguous over 0..N₀.
pub fn z_index_table(n: usize) -> Vec<ZKind> {
    let mut t = Vec::with_capacity(n0(n));
    t.push(ZKind::Dilation);
    for a in 1..=n {
        t.push(ZKind::Translation(a));
    }
    t.push(ZKind::Rot12);
    t.push(ZKind::Rot34);
    for a in 1..=4 {
        t.push(ZKind::Kelvin(a));
    }
    for a in 3..=n {
        t.push(ZKind::Rot1A(a));
    }
    for a in 3..=n {
        t.push(ZKind::Rot2A(a));
    }
    for a in 5..=n {
        t.push(ZKind::Rot3A(a));
    }
    for a in 5..=n {
        t.push(ZKind::Rot4A(a));
    }
    debug_assert_eq!(t.len(), n0(n));
    t
}

/// All z_β(y) at once from one evaluation of u = U_* and ∇u.
pub fn eval_z_all(config: &TowerConfiguration, y: &[f64], out: &mut [f64]) {
    let n = config.n;
    debug_assert_eq!(out.len(), n0(n));
    let u = eval_ustar(config, y);
    let mut g = vec![0.0; n];
    grad_ustar(config, y, &mut g);
    eval_z_all_from(n, y, u, &g, out);
}

/// Same, from precomputed u and ∇u.
pub fn eval_z_all_from(n: usize, y: &[f64], u: f64, g: &[f64], out: &mut [f64]) {
    let r_sq = norm_sq(y);
    let z0 = 0.5 * (n as f64 - 2.0) * u + g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let mut i = 0;
    out[i] = z0;
    i += 1;
    for a in 0..n {
        out[i] = g[a];
        i += 1;
    }
    out[i] = -y[1] * g[0] + y[0] * g[1];
    i += 1;
    out[i] = -y[3] * g[2] + y[2] * g[3];
    i += 1;
    for a in 1..=4 {
        out[i] = -2.0 * y[a - 1] * z0 + r_sq * g[a - 1];
        i += 1;
    }
    for a in 3..=n {
        out[i] = -y[a - 1] * g[0] + y[0] * g[a - 1];
        i += 1;
    }
    for a in 3..=n {
        out[i] = -y[a - 1] * g[1] + y[1] * g[a - 1];
        i += 1;
    }
    for a in 5..=n {
        out[i] = -y[a - 1] * g[2] + y[2] * g[a - 1];
        i += 1;
    }
    for a in 5..=n {
        out[i] = -y[a - 1] * g[3] + y[3] * g[a - 1];
        i += 1;
    }
}

/// One z_β(y).
pub fn eval_z(beta: usize, y: &[f64], config: &TowerConfiguration) -> Result<f64> {
    let n = config.n;
    if beta >= n0(n) {
        return Err(Error::IndexOutOfRange(format!("z index {beta} >= N0 = {}", n0(n))));
    }
    let mut all = vec![0.0; n0(n)];
    eval_z_all(config, y, &mut all);
    Ok(all[beta])
}

/// Rebased family: identical to z_β except the four Kelvin indices, where
/// **z**_{n+2+α} = (z_α - z_{n+2+α})/2.
pub fn eval_bold_z_all(config: &TowerConfiguration, y: &[f64], out: &mut [f64]) {
    let n = config.n;
    eval_z_all(config, y, out);
    rebase_in_place(n, out);
}

pub fn rebase_in_place(n: usize, z: &mut [f64]) {
    for a in 1..=4usize {
        z[n + 2 + a] = 0.5 * (z[a] - z[n + 2 + a]);
    }
}

pub fn eval_bold_z(beta: usize, y: &[f64], config: &TowerConfiguration) -> Result<f64> {
    let n = config.n;
    if beta >= n0(n) {
        return Err(Error::IndexOutOfRange(format!("z index {beta} >= N0 = {}", n0(n))));
    }
    let mut all = vec![0.0; n0(n)];
    eval_bold_z_all(config, y, &mut all);
    Ok(all[beta])
}

/// The invertible z -> **z** recombination as a matrix (determinant 1/16).
pub fn rebase_matrix(n: usize) -> DMatrix<f64> {
    let m = n0(n);
    let mut a = DMatrix::identity(m, m);
    for al in 1..=4usize {
        a[(n + 2 + al, n + 2 + al)] = -0.5;
        a[(n + 2 + al, al)] = 0.5;
    }
    a
}

// ----------------------------------------------------------------------
// bubble-local fields
// ----------------------------------------------------------------------

/// Site of a Z-group field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteRef {
    Center,
    Ring1(usize),
    Ring2(usize),
}

/// Z_{α0}, Z̄_{αj}, Ẑ_{αl} at zero correction.
///
/// Ring-1 sites use the (ξ_j, ξ_j^⊥) frame for α = 1, 2; ring-2 sites use
/// the (η_l, η_l^⊥) frame for α = 3, 4; Cartesian derivatives otherwise.
/// α = 0 is the site dilation generator.
pub fn eval_zgroup(config: &TowerConfiguration, alpha: usize, site: SiteRef, y: &[f64]) -> Result<f64> {
    let n = config.n;
    if alpha > n {
        return Err(Error::IndexOutOfRange(format!("field index {alpha} > n = {n}")));
    }
    match site {
        SiteRef::Center => {
            let r_sq = norm_sq(y);
            let u = bubble_profile(r_sq, n);
            if alpha == 0 {
                Ok(0.5 * (n as f64 - 2.0) * u * (1.0 - r_sq) / (1.0 + r_sq))
            } else {
                Ok(-(n as f64 - 2.0) * y[alpha - 1] * u / (1.0 + r_sq))
            }
        }
        SiteRef::Ring1(j) => {
            if j >= config.k {
                return Err(Error::IndexOutOfRange(format!("ring-1 site {j} >= k = {}", config.k)));
            }
            let c = &config.xi[j];
            site_field(n, config.mu, c, alpha, y, |a| match a {
                1 => Some(c.clone()),
                2 => Some(config.xi_perp(j)),
                _ => None,
            })
        }
        SiteRef::Ring2(l) => {
            if l >= config.h {
                return Err(Error::IndexOutOfRange(format!("ring-2 site {l} >= h = {}", config.h)));
            }
            let c = &config.eta[l];
            site_field(n, config.lambda, c, alpha, y, |a| match a {
                3 => Some(c.clone()),
                4 => Some(config.eta_perp(l)),
                _ => None,
            })
        }
    }
}

fn site_field<F>(n: usize, scale: f64, center: &[f64], alpha: usize, y: &[f64], frame: F) -> Result<f64>
where
    F: Fn(usize) -> Option<Vec<f64>>,
{
    let d_sq = dist_sq(y, center);
    let denom = scale * scale + d_sq;
    let u = pow_half_nm2(2.0 * scale / denom, n);
    let gc = -(n as f64 - 2.0) * u / denom; // ∇U_s = gc · (y - c)
    if alpha == 0 {
        // (n-2)/2 U_s + ∇U_s · (y - c)
        return Ok(0.5 * (n as f64 - 2.0) * u + gc * d_sq);
    }
    if let Some(dir) = frame(alpha) {
        let proj: f64 = (0..n).map(|i| dir[i] * (y[i] - center[i])).sum();
        Ok(gc * proj)
    } else {
        Ok(gc * (y[alpha - 1] - center[alpha - 1]))
    }
}

/// U_site(y): the bubble profile attached to a site.
pub fn site_profile(config: &TowerConfiguration, site: SiteRef, y: &[f64]) -> f64 {
    let n = config.n;
    match site {
        SiteRef::Center => bubble_profile(norm_sq(y), n),
        SiteRef::Ring1(j) => {
            let d = dist_sq(y, &config.xi[j]);
            pow_half_nm2(2.0 * config.mu / (config.mu * config.mu + d), n)
        }
        SiteRef::Ring2(l) => {
            let d = dist_sq(y, &config.eta[l]);
            pow_half_nm2(2.0 * config.lambda / (config.lambda * config.lambda + d), n)
        }
    }
}

/// Number of sites in the flat ordering (center, ring 1, ring 2).
pub fn site_count(config: &TowerConfiguration) -> usize {
    1 + config.k + config.h
}

pub fn flat_site(config: &TowerConfiguration, site: SiteRef) -> usize {
    match site {
        SiteRef::Center => 0,
        SiteRef::Ring1(j) => 1 + j,
        SiteRef::Ring2(l) => 1 + config.k + l,
    }
}

pub fn site_from_flat(config: &TowerConfiguration, s: usize) -> SiteRef {
    if s == 0 {
        SiteRef::Center
    } else if s <= config.k {
        SiteRef::Ring1(s - 1)
    } else {
        SiteRef::Ring2(s - 1 - config.k)
    }
}

/// Per-node table of all site quantities, allocation-free in the hot loop:
/// profiles[s] = U_s(y), upm1[s] = U_s(y)^{p-1},
/// fields[s*(n+1)+α] = Z_{s,α}(y) for α = 0..n.
pub fn eval_all_site_fields(config: &TowerConfiguration, y: &[f64], upm1: &mut [f64], fields: &mut [f64]) {
    let n = config.n;
    let nm2 = n as f64 - 2.0;
    let stride = n + 1;

    // center
    let r_sq = norm_sq(y);
    let u = bubble_profile(r_sq, n);
    upm1[0] = abs_critical_power_m1(u, n);
    let gc = -nm2 * u / (1.0 + r_sq);
    fields[0] = 0.5 * nm2 * u + gc * r_sq;
    for a in 1..=n {
        fields[a] = gc * y[a - 1];
    }

    let s1 = config.ring1_radius();
    for j in 0..config.k {
        let c = &config.xi[j];
        let d_sq = dist_sq(y, c);
        let denom = config.mu * config.mu + d_sq;
        let u = pow_half_nm2(2.0 * config.mu / denom, n);
        let s = 1 + j;
        upm1[s] = abs_critical_power_m1(u, n);
        let gc = -nm2 * u / denom;
        let base = s * stride;
        fields[base] = 0.5 * nm2 * u + gc * d_sq;
        // frame fields: ξ·(y-ξ) = ξ·y - |ξ|², ξ^⊥·(y-ξ) = ξ^⊥·y
        let (ct, st) = (config.theta_bar[j].cos(), config.theta_bar[j].sin());
        let xi_dot_y = s1 * (ct * y[0] + st * y[1]);
        let perp_dot_y = s1 * (-st * y[0] + ct * y[1]);
        fields[base + 1] = gc * (xi_dot_y - s1 * s1);
        fields[base + 2] = gc * perp_dot_y;
        for a in 3..=n {
            fields[base + a] = gc * (y[a - 1] - c[a - 1]);
        }
    }

    let s2 = config.ring2_radius();
    for l in 0..config.h {
        let c = &config.eta[l];
        let d_sq = dist_sq(y, c);
        let denom = config.lambda * config.lambda + d_sq;
        let u = pow_half_nm2(2.0 * config.lambda / denom, n);
        let s = 1 + config.k + l;
        upm1[s] = abs_critical_power_m1(u, n);
        let gc = -nm2 * u / denom;
        let base = s * stride;
        fields[base] = 0.5 * nm2 * u + gc * d_sq;
        let (ct, st) = (config.theta_hat[l].cos(), config.theta_hat[l].sin());
        let eta_dot_y = s2 * (ct * y[2] + st * y[3]);
        let perp_dot_y = s2 * (-st * y[2] + ct * y[3]);
        fields[base + 1] = gc * (y[0] - c[0]);
        fields[base + 2] = gc * (y[1] - c[1]);
        fields[base + 3] = gc * (eta_dot_y - s2 * s2);
        fields[base + 4] = gc * perp_dot_y;
        for a in 5..=n {
            fields[base + a] = gc * (y[a - 1] - c[a - 1]);
        }
    }
}

/// The (n+1) vector fields Π_α = [Z_{α0}, Z̄_{α1}…Z̄_{αk}, Ẑ_{α1}…Ẑ_{αh}].
pub fn pi_field(config: &TowerConfiguration, alpha: usize, y: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(1 + config.k + config.h);
    out.push(eval_zgroup(config, alpha, SiteRef::Center, y)?);
    for j in 0..config.k {
        out.push(eval_zgroup(config, alpha, SiteRef::Ring1(j), y)?);
    }
    for l in 0..config.h {
        out.push(eval_zgroup(config, alpha, SiteRef::Ring2(l), y)?);
    }
    Ok(out)
}

// ----------------------------------------------------------------------
// decompositions
// ----------------------------------------------------------------------

/// z_β (or **z**_β) as a finite combination Σ c · Z_{site,α}.
#[derive(Debug, Clone)]
pub struct ZDecomposition {
    pub terms: Vec<(f64, SiteRef, usize)>,
}

impl ZDecomposition {
    pub fn eval(&self, config: &TowerConfiguration, y: &[f64]) -> Result<f64> {
        let mut v = 0.0;
        for &(c, site, alpha) in &self.terms {
            v += c * eval_zgroup(config, alpha, site, y)?;
        }
        Ok(v)
    }

    /// Terms with flat site indices for table-driven evaluation.
    pub fn flat_terms(&self, config: &TowerConfiguration) -> Vec<(f64, usize, usize)> {
        self.terms.iter().map(|&(c, site, alpha)| (c, flat_site(config, site), alpha)).collect()
    }
}

/// Exact decomposition of the plain z_β into site fields.
pub fn z_decomposition(config: &TowerConfiguration, beta: usize) -> Result<ZDecomposition> {
    let n = config.n;
    let table = z_index_table(n);
    if beta >= table.len() {
        return Err(Error::IndexOutOfRange(format!("z index {beta} >= N0")));
    }
    let s = config.ring1_radius();
    let t = config.ring2_radius();
    let tb = &config.theta_bar;
    let th = &config.theta_hat;
    let mut terms: Vec<(f64, SiteRef, usize)> = Vec::new();
    match table[beta] {
        ZKind::Dilation => {
            terms.push((1.0, SiteRef::Center, 0));
            for j in 0..config.k {
                terms.push((-1.0, SiteRef::Ring1(j), 0));
                terms.push((-1.0, SiteRef::Ring1(j), 1));
            }
            for l in 0..config.h {
                terms.push((-1.0, SiteRef::Ring2(l), 0));
                terms.push((-1.0, SiteRef::Ring2(l), 3));
            }
        }
        ZKind::Translation(a) => {
            terms.push((1.0, SiteRef::Center, a));
            match a {
                1 => {
                    for j in 0..config.k {
                        terms.push((-tb[j].cos() / s, SiteRef::Ring1(j), 1));
                        terms.push((tb[j].sin() / s, SiteRef::Ring1(j), 2));
                    }
                    for l in 0..config.h {
                        terms.push((-1.0, SiteRef::Ring2(l), 1));
                    }
                }
                2 => {
                    for j in 0..config.k {
                        terms.push((-tb[j].sin() / s, SiteRef::Ring1(j), 1));
                        terms.push((-tb[j].cos() / s, SiteRef::Ring1(j), 2));
                    }
                    for l in 0..config.h {
                        terms.push((-1.0, SiteRef::Ring2(l), 2));
                    }
                }
                3 => {
                    for j in 0..config.k {
                        terms.push((-1.0, SiteRef::Ring1(j), 3));
                    }
                    for l in 0..config.h {
                        terms.push((-th[l].cos() / t, SiteRef::Ring2(l), 3));
                        terms.push((th[l].sin() / t, SiteRef::Ring2(l), 4));
                    }
                }
                4 => {
                    for j in 0..config.k {
                        terms.push((-1.0, SiteRef::Ring1(j), 4));
                    }
                    for l in 0..config.h {
                        terms.push((-th[l].sin() / t, SiteRef::Ring2(l), 3));
                        terms.push((-th[l].cos() / t, SiteRef::Ring2(l), 4));
                    }
                }
                _ => {
                    for j in 0..config.k {
                        terms.push((-1.0, SiteRef::Ring1(j), a));
                    }
                    for l in 0..config.h {
                        terms.push((-1.0, SiteRef::Ring2(l), a));
                    }
                }
            }
        }
        ZKind::Rot12 => {
            for j in 0..config.k {
                terms.push((-1.0, SiteRef::Ring1(j), 2));
            }
        }
        ZKind::Rot34 => {
            for l in 0..config.h {
                terms.push((-1.0, SiteRef::Ring2(l), 4));
            }
        }
        ZKind::Kelvin(a) => {
            // z_{n+2+a} = z_a - 2 **z**_{n+2+a}
            let plain = z_decomposition(config, a)?;
            terms.extend(plain.terms);
            for (c, site, alpha) in bold_kelvin_terms(config, a) {
                terms.push((-2.0 * c, site, alpha));
            }
        }
        ZKind::Rot1A(a) => {
            for j in 0..config.k {
                terms.push((-s * tb[j].cos(), SiteRef::Ring1(j), a));
            }
            if a == 3 || a == 4 {
                for l in 0..config.h {
                    let w = if a == 3 { th[l].cos() } else { th[l].sin() };
                    terms.push((t * w, SiteRef::Ring2(l), 1));
                }
            }
        }
        ZKind::Rot2A(a) => {
            for j in 0..config.k {
                terms.push((-s * tb[j].sin(), SiteRef::Ring1(j), a));
            }
            if a == 3 || a == 4 {
                for l in 0..config.h {
                    let w = if a == 3 { th[l].cos() } else { th[l].sin() };
                    terms.push((t * w, SiteRef::Ring2(l), 2));
                }
            }
        }
        ZKind::Rot3A(a) => {
            for l in 0..config.h {
                terms.push((-t * th[l].cos(), SiteRef::Ring2(l), a));
            }
        }
        ZKind::Rot4A(a) => {
            for l in 0..config.h {
                terms.push((-t * th[l].sin(), SiteRef::Ring2(l), a));
            }
        }
    }
    Ok(ZDecomposition { terms })
}

/// Closed form of the rebased Kelvin fields:
/// **z**_{n+2+1} = -√(1-μ²) Σ_j cos θ̄_j [Z̄_{0j} + Z̄_{1j}], and the sin /
/// ring-2 analogues (with [Ẑ_{0l} + Ẑ_{3l}]).
fn bold_kelvin_terms(config: &TowerConfiguration, a: usize) -> Vec<(f64, SiteRef, usize)> {
    let s = config.ring1_radius();
    let t = config.ring2_radius();
    let mut terms = Vec::new();
    match a {
        1 | 2 => {
            for j in 0..config.k {
                let w = if a == 1 { config.theta_bar[j].cos() } else { config.theta_bar[j].sin() };
                terms.push((-s * w, SiteRef::Ring1(j), 0));
                terms.push((-s * w, SiteRef::Ring1(j), 1));
            }
        }
        3 | 4 => {
            for l in 0..config.h {
                let w = if a == 3 { config.theta_hat[l].cos() } else { config.theta_hat[l].sin() };
                terms.push((-t * w, SiteRef::Ring2(l), 0));
                terms.push((-t * w, SiteRef::Ring2(l), 3));
            }
        }
        _ => unreachable!(),
    }
    terms
}

/// Decomposition of **z**_β (differs from the plain one only on the four
/// Kelvin indices).
pub fn bold_z_decomposition(config: &TowerConfiguration, beta: usize) -> Result<ZDecomposition> {
    let n = config.n;
    if (n + 3..=n + 6).contains(&beta) {
        Ok(ZDecomposition { terms: bold_kelvin_terms(config, beta - n - 2) })
    } else {
        z_decomposition(config, beta)
    }
}

/// Seeded sample in the annulus 0.05 <= |y| <= 20, excluding balls of radius
/// 2μ (2λ) around the bubble cores.
pub fn sample_points(config: &TowerConfiguration, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n;
    let mut pts = Vec::with_capacity(count);
    while pts.len() < count {
        let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
        let r = norm_sq(&y).sqrt();
        if r == 0.0 {
            continue;
        }
        // log-uniform radius over [0.05, 20]
        let target = 0.05 * (400.0f64).powf(rng.gen_range(0.0..1.0));
        for v in &mut y {
            *v *= target / r;
        }
        let near1 = config.xi.iter().any(|c| dist_sq(c, &y) < (2.0 * config.mu).powi(2));
        let near2 = config.eta.iter().any(|c| dist_sq(c, &y) < (2.0 * config.lambda).powi(2));
        if !near1 && !near2 {
            pts.push(y);
        }
    }
    pts
}

/// Max over the sample of |z_β(y) - decomposition(y)| (plain identity), or
/// of the rebased identity on the four Kelvin indices.
pub fn appendix_residual(beta: usize, config: &TowerConfiguration, sample: &[Vec<f64>]) -> Result<f64> {
    let n = config.n;
    let bold_range = n + 3..=n + 6;
    let dec = if bold_range.contains(&beta) {
        bold_z_decomposition(config, beta)?
    } else {
        z_decomposition(config, beta)?
    };
    let mut worst = 0.0f64;
    let mut z = vec![0.0; n0(n)];
    for y in sample {
        let lhs = if bold_range.contains(&beta) {
            eval_bold_z_all(config, y, &mut z);
            z[beta]
        } else {
            eval_z_all(config, y, &mut z);
            z[beta]
        };
        let rhs = dec.eval(config, y)?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

// ----------------------------------------------------------------------
// linearized residuals
// ----------------------------------------------------------------------

/// pγ |U_*|^{p-1}(y): the potential of the linearized operator
/// L(φ) = Δφ + pγ|U_*|^{p-1}φ.
#[inline]
pub fn potential(config: &TowerConfiguration, y: &[f64]) -> f64 {
    let n = config.n;
    critical_exponent(n) * gamma(n) * abs_critical_power_m1(eval_ustar(config, y), n)
}

/// L applied to a single site field, in closed form:
/// L(Z_{s,α}) = pγ (|U_*|^{p-1} - U_s^{p-1}) Z_{s,α}.
pub fn l_site_field(config: &TowerConfiguration, alpha: usize, site: SiteRef, y: &[f64]) -> Result<f64> {
    let n = config.n;
    let pg = critical_exponent(n) * gamma(n);
    let us = abs_critical_power_m1(eval_ustar(config, y), n);
    let own = abs_critical_power_m1(site_profile(config, site, y), n);
    Ok(pg * (us - own) * eval_zgroup(config, alpha, site, y)?)
}

/// L(z_β)(y) assembled from the exact decomposition:
/// Δz_β = Σ c ΔZ_{s,α} = -pγ Σ c U_s^{p-1} Z_{s,α}, so the residual is
/// carried entirely by the cross terms |U_*|^{p-1} - U_s^{p-1}.
pub fn linearized_residual(beta: usize, config: &TowerConfiguration, y: &[f64]) -> Result<f64> {
    let n = config.n;
    let dec = z_decomposition(config, beta)?;
    let pg = critical_exponent(n) * gamma(n);
    let us = abs_critical_power_m1(eval_ustar(config, y), n);
    let mut z = vec![0.0; n0(n)];
    eval_z_all(config, y, &mut z);
    let mut v = us * z[beta];
    for &(c, site, alpha) in &dec.terms {
        let own = abs_critical_power_m1(site_profile(config, site, y), n);
        v -= c * own * eval_zgroup(config, alpha, site, y)?;
    }
    Ok(pg * v)
}

/// ‖L z_β‖_** for every β, in one batched quadrature sweep.
pub fn l_residual_norms(config: &TowerConfiguration, scheme: &QuadratureScheme) -> Result<Vec<f64>> {
    let n = config.n;
    let m = n0(n);
    let q = scheme.params.q;
    let w_exp = n as f64 + 2.0 - 2.0 * n as f64 / q;
    let decs: Vec<Vec<(f64, usize, usize)>> = (0..m)
        .map(|b| z_decomposition(config, b).map(|d| d.flat_terms(config)))
        .collect::<Result<_>>()?;
    let cfg = config.clone();
    let nsites = site_count(config);
    let stride = n + 1;
    let res = scheme.integrate_batch(
        m,
        move |y: &[f64], out: &mut [f64]| {
            let pg = critical_exponent(n) * gamma(n);
            let us = abs_critical_power_m1(eval_ustar(&cfg, y), n);
            let mut upm1 = vec![0.0; nsites];
            let mut fields = vec![0.0; nsites * stride];
            eval_all_site_fields(&cfg, y, &mut upm1, &mut fields);
            let mut z = vec![0.0; m];
            eval_z_all(&cfg, y, &mut z);
            let w = (1.0 + norm_sq(y).sqrt()).powf(w_exp);
            for (b, o) in out.iter_mut().enumerate() {
                let mut v = us * z[b];
                for &(c, s, alpha) in &decs[b] {
                    v -= c * upm1[s] * fields[s * stride + alpha];
                }
                *o = (w * (pg * v).abs()).powf(q);
            }
        },
        &[Region::All],
        false,
    )?;
    Ok(res.iter().map(|r| r.value.max(0.0).powf(1.0 / q)).collect())
}

/// Sampled sup norms ‖z_β‖_* = sup (1+|y|^{n-2})|z_β| for every β, from
/// the same structured grids the scheme uses (coarse + per-patch).
pub fn z_star_norms(config: &TowerConfiguration, scheme: &QuadratureScheme) -> Vec<f64> {
    let n = config.n;
    let m = n0(n);
    let mut best = vec![0.0f64; m];
    let mut z = vec![0.0; m];
    let mut consider = |y: &[f64], z: &mut [f64], best: &mut [f64]| {
        let w = 1.0 + pow_half_nm2(norm_sq(y), n);
        eval_z_all(config, y, z);
        for (b, v) in best.iter_mut().zip(z.iter()) {
            let val = w * v.abs();
            if val > *b {
                *b = val;
            }
        }
    };
    // coarse global grid and its Kelvin image
    let nt = 2 * config.k.max(config.h) + 8;
    for ir in 1..=12 {
        let r = 2.0 * ir as f64 / 12.0;
        for ia in 0..=8 {
            let a = std::f64::consts::FRAC_PI_2 * ia as f64 / 8.0;
            for it in 0..nt {
                let th = 2.0 * std::f64::consts::PI * it as f64 / nt as f64;
                for ip in 0..nt {
                    let ph = 2.0 * std::f64::consts::PI * ip as f64 / nt as f64;
                    let mut y = vec![0.0; n];
                    y[0] = r * a.cos() * th.cos();
                    y[1] = r * a.cos() * th.sin();
                    y[2] = r * a.sin() * ph.cos();
                    y[3] = r * a.sin() * ph.sin();
                    consider(&y, &mut z, &mut best);
                    let r2 = norm_sq(&y);
                    if r2 > 0.25 {
                        let yk: Vec<f64> = y.iter().map(|v| 4.0 * v / r2).collect();
                        consider(&yk, &mut z, &mut best);
                    }
                }
            }
        }
    }
    // refined grids at the bubble cores
    for site in scheme.sites() {
        for ir in 0..=20 {
            let rr = site.rho * (ir as f64 / 20.0).powi(2);
            for it in 0..12 {
                let th = 2.0 * std::f64::consts::PI * it as f64 / 12.0;
                for ia in 0..=4 {
                    let a = std::f64::consts::FRAC_PI_2 * ia as f64 / 4.0;
                    let mut y = site.center.clone();
                    y[0] += site.scale * rr * a.cos() * th.cos();
                    y[1] += site.scale * rr * a.cos() * th.sin();
                    y[2] += site.scale * rr * a.sin() * th.cos();
                    y[3] += site.scale * rr * a.sin() * th.sin();
                    consider(&y, &mut z, &mut best);
                }
            }
        }
    }
    best
}

/// The auxiliary first-order operator of the Kelvin identity:
/// T(v) = (|y|²-1) ∂₁v - 2 y₁ ((n-2)/2 v + ∇v·y); vanishes identically for
/// v Kelvin-invariant and even in y₁.
pub fn kelvin_t_operator(n: usize, v: f64, grad_v: &[f64], y: &[f64]) -> f64 {
    let r_sq = norm_sq(y);
    let radial: f64 = grad_v.iter().zip(y).map(|(a, b)| a * b).sum();
    (r_sq - 1.0) * grad_v[0] - 2.0 * y[0] * (0.5 * (n as f64 - 2.0) * v + radial)
}

// ----------------------------------------------------------------------
// Gram certificate
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GramReport {
    pub n0: usize,
    /// raw Gram matrix G_{βγ} = ∫ |U_*|^{p-1} **z**_β **z**_γ, row-major
    pub gram: Vec<Vec<f64>>,
    /// singular values of the diagonally normalized Gram, descending
    pub singular_values: Vec<f64>,
    /// numerical rank at the 1e-6 relative threshold
    pub rank: usize,
    pub min_singular_ratio: f64,
    /// (threshold, rank) sweep over 1e-4 .. 1e-8
    pub threshold_sweep: Vec<(f64, usize)>,
    pub quadrature_converged: bool,
}

/// Assemble the Gram matrix of the rebased kernel candidates with weight
/// |U_*|^{p-1} and certify its numerical rank.
pub fn gram_rank(config: &TowerConfiguration, scheme: &QuadratureScheme) -> Result<GramReport> {
    let n = config.n;
    let m = n0(n);
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|b| (b..m).map(move |c| (b, c))).collect();
    let cfg = config.clone();
    let np = pairs.len();
    let pairs_for_closure = pairs.clone();
    let res = scheme.integrate_batch(
        np,
        move |y: &[f64], out: &mut [f64]| {
            let us = abs_critical_power_m1(eval_ustar(&cfg, y), n);
            let mut z = vec![0.0; m];
            eval_bold_z_all(&cfg, y, &mut z);
            for (i, &(b, c)) in pairs_for_closure.iter().enumerate() {
                out[i] = us * z[b] * z[c];
            }
        },
        &[Region::All],
        false,
    )?;
    let mut g = DMatrix::zeros(m, m);
    let mut converged = true;
    for (i, &(b, c)) in pairs.iter().enumerate() {
        g[(b, c)] = res[i].value;
        g[(c, b)] = res[i].value;
        converged &= res[i].converged;
    }
    let d: Vec<f64> = (0..m).map(|i| g[(i, i)].abs().sqrt().max(f64::MIN_POSITIVE)).collect();
    let mut gn = g.clone();
    for b in 0..m {
        for c in 0..m {
            gn[(b, c)] /= d[b] * d[c];
        }
    }
    let mut sv: Vec<f64> = gn.svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let smax = sv[0];
    let rank_at = |thr: f64| sv.iter().filter(|&&s| s > thr * smax).count();
    let sweep: Vec<(f64, usize)> = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8].iter().map(|&t| (t, rank_at(t))).collect();
    Ok(GramReport {
        n0: m,
        gram: (0..m).map(|b| (0..m).map(|c| g[(b, c)]).collect()).collect(),
        rank: rank_at(1e-6),
        min_singular_ratio: sv[m - 1] / smax,
        singular_values: sv,
        threshold_sweep: sweep,
        quadrature_converged: converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TowerParams;

    fn cfg(n: usize, k: usize, h: usize) -> TowerConfiguration {
        TowerConfiguration::new(TowerParams { n, k, h, delta: 1.0, eps: 1.0 }).unwrap()
    }

    #[test]
    fn counts() {
        assert_eq!(n0(4), 15);
        assert_eq!(script_n(4), 15);
        assert_eq!(n0(5), 20);
        assert_eq!(script_n(5), 21);
        assert_eq!(z_index_table(4).len(), 15);
        assert_eq!(z_index_table(5).len(), 20);
        assert_eq!(z_index_table(7).len(), n0(7));
    }

    #[test]
    fn z_values_simple() {
        let c = cfg(4, 8, 8);
        // z₀(0) = (n-2)/2 u(0)
        let u0 = eval_ustar(&c, &[0.0; 4]);
        assert!((eval_z(0, &[0.0; 4], &c).unwrap() - u0).abs() < 1e-14);
        // z_{n+1} vanishes on the (y3,y4) plane by evenness
        let y = [0.0, 0.0, 0.4, -0.3];
        assert!(eval_z(5, &y, &c).unwrap().abs() < 1e-15);
        assert!(eval_z(15, &[0.1; 4], &c).is_err());
    }

    #[test]
    fn bold_z_relations() {
        let c = cfg(4, 8, 8);
        let y = [0.31, -0.44, 0.21, 0.11];
        for a in 1..=4usize {
            let plain = eval_z(4 + 2 + a, &y, &c).unwrap();
            let bold = eval_bold_z(4 + 2 + a, &y, &c).unwrap();
            let za = eval_z(a, &y, &c).unwrap();
            // 2·**z** + z = z_α
            assert!((2.0 * bold + plain - za).abs() < 1e-13);
        }
        // identity branch
        for beta in [0usize, 1, 5, 6, 11, 14] {
            assert_eq!(eval_z(beta, &y, &c).unwrap(), eval_bold_z(beta, &y, &c).unwrap());
        }
    }

    #[test]
    fn rebase_matrix_is_invertible() {
        let m = rebase_matrix(4);
        let det = m.determinant();
        assert!((det.abs() - 1.0 / 16.0).abs() < 1e-14);
        // matrix action agrees with eval_bold_z_all
        let c = cfg(4, 8, 8);
        let y = [0.2, 0.5, -0.4, 0.3];
        let mut z = vec![0.0; 15];
        eval_z_all(&c, &y, &mut z);
        let zb_vec = m * nalgebra::DVector::from_vec(z.clone());
        let mut zb = vec![0.0; 15];
        eval_bold_z_all(&c, &y, &mut zb);
        for i in 0..15 {
            assert!((zb_vec[i] - zb[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn zgroup_frame_fields() {
        let c = cfg(4, 8, 8);
        // Z̄_{2j}(ξ_j) = 0: gradient of the bubble vanishes at its center
        for j in 0..8 {
            let v = eval_zgroup(&c, 2, SiteRef::Ring1(j), &c.xi[j].clone()).unwrap();
            assert_eq!(v, 0.0);
        }
        // Z̄_{1,1} with ξ₁ on the y1-axis equals |ξ₁| ∂₁U_{μ,ξ₁}
        let y = [0.9, 0.05, -0.1, 0.2];
        let v = eval_zgroup(&c, 1, SiteRef::Ring1(0), &y).unwrap();
        let b = c.bubble_ring1(0);
        let mut g = vec![0.0; 4];
        crate::bubble::scaled_bubble_gradient(&y, &b, &mut g);
        let expect = c.xi[0][0] * g[0];
        assert!((v - expect).abs() < 1e-12 * expect.abs().max(1e-12));
        // index mismatch with site kind
        assert!(eval_zgroup(&c, 5, SiteRef::Center, &y).is_err());
        // Π assembly has 1 + k + h entries
        assert_eq!(pi_field(&c, 0, &y).unwrap().len(), 17);
    }

    #[test]
    fn appendix_identities_pointwise() {
        let c = cfg(4, 8, 8);
        let sample = sample_points(&c, 40, 7);
        for beta in 0..15 {
            let r = appendix_residual(beta, &c, &sample).unwrap();
            assert!(r <= 1e-10, "identity {beta} residual {r:.3e}");
        }
    }

    #[test]
    fn appendix_identities_n5() {
        let c = cfg(5, 6, 6);
        let sample = sample_points(&c, 25, 11);
        for beta in 0..n0(5) {
            let r = appendix_residual(beta, &c, &sample).unwrap();
            assert!(r <= 1e-10, "identity {beta} residual {r:.3e}");
        }
    }

    #[test]
    fn kelvin_t_annihilates_even_invariant_fields() {
        // T(U) ≡ 0: the standard bubble is Kelvin-invariant and even in y1
        let mut g = vec![0.0; 4];
        for y in sample_points(&cfg(4, 8, 8), 30, 3) {
            crate::bubble::bubble_gradient(&y, 4, &mut g);
            let u = bubble_profile(norm_sq(&y), 4);
            let t = kelvin_t_operator(4, u, &g, &y);
            assert!(t.abs() < 1e-12, "T(U)({y:?}) = {t:.3e}");
        }
    }

    #[test]
    fn l_vanishes_for_single_bubble() {
        // with u replaced by the bare bubble the potential factor
        // |u|^{p-1} - U^{p-1} of L(Z_{α0}) vanishes identically
        let y = [0.3, 0.2, -0.5, 0.7];
        let own = abs_critical_power_m1(bubble_profile(norm_sq(&y), 4), 4);
        let us = abs_critical_power_m1(bubble_profile(norm_sq(&y), 4), 4);
        assert_eq!(us - own, 0.0);
    }

    #[test]
    fn kelvin_parity_of_l_center_fields() {
        // |y|^{-n-2} L(Z_{00})(y/|y|²) = -L(Z_{00})(y) and the + variant for α >= 1
        let c = cfg(4, 8, 8);
        for y in sample_points(&c, 30, 5) {
            let r2 = norm_sq(&y);
            let yk: Vec<f64> = y.iter().map(|v| v / r2).collect();
            for alpha in 0..=4usize {
                let lv = l_site_field(&c, alpha, SiteRef::Center, &y).unwrap();
                let lk = l_site_field(&c, alpha, SiteRef::Center, &yk).unwrap();
                let sign = if alpha == 0 { -1.0 } else { 1.0 };
                // weight |y|^{-(n+2)} = r2^{-3} at n = 4
                let lhs = lk / (r2 * r2 * r2);
                let rhs = sign * lv;
                let scale = lv.abs().max(1e-300);
                assert!(
                    ((lhs - rhs) / scale).abs() < 1e-8,
                    "alpha={alpha} parity residual {:e}",
                    (lhs - rhs).abs() / scale
                );
            }
        }
    }
}
