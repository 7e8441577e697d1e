//! The reduced balancing equations: projections of the error on the ring
//! dilation generators, the ring interaction constant, and the root solve
//! for the balancing parameters (δ, ε).

use serde::Serialize;

use crate::bubble::{abs_critical_power_m1, bubble_profile, critical_exponent, gamma, norm_sq};
use crate::config::{TowerConfiguration, TowerParams, PARAM_BOX};
use crate::error::{Error, Result};
use crate::error_field::{cutoff, eval_error, CutoffOrientation, RingSite};
use crate::fitting::fit_quadratic_3;
use crate::kernel::{eval_zgroup, SiteRef};
use crate::quadrature::{gauss_panel, QuadratureScheme, Region, SchemeParams};

/// ∫_{R^n} U^{p-1} Z₀² dy, the scale-invariant normalizer of the
/// projections (= ∫ U_{μ,ξ}^{p-1} Z̄₀² for every μ, ξ). Radial quadrature.
pub fn normalizer(n: usize) -> f64 {
    // substitute r = t/(1-t); integrand decays like r^{-(2n - ...)}, plenty
    let (ts, ws) = gauss_panel(0.0, 1.0, 60);
    let mut v = 0.0;
    for (&t, &w) in ts.iter().zip(&ws) {
        let r = t / (1.0 - t);
        let jac = 1.0 / ((1.0 - t) * (1.0 - t));
        let u = bubble_profile(r * r, n);
        let z0 = 0.5 * (n as f64 - 2.0) * u * (1.0 - r * r) / (1.0 + r * r);
        v += w * jac * r.powi((n - 1) as i32) * abs_critical_power_m1(u, n) * z0 * z0;
    }
    v * sphere_area(n)
}

/// Surface area of S^{n-1}.
pub fn sphere_area(n: usize) -> f64 {
    // ω_{n-1} = 2 π^{n/2} / Γ(n/2)
    let nf = n as f64;
    2.0 * std::f64::consts::PI.powf(nf / 2.0) / gamma_fn(nf / 2.0)
}

fn gamma_fn(x: f64) -> f64 {
    // integer and half-integer arguments only (n/2 for n >= 4)
    if (x - x.round()).abs() < 1e-12 {
        let mut v = 1.0;
        let mut k = x.round() as i64;
        while k > 1 {
            k -= 1;
            v *= k as f64;
        }
        v
    } else {
        // x = m + 1/2
        let m = (x - 0.5).round() as i64;
        let mut v = std::f64::consts::PI.sqrt();
        for i in 0..m {
            v *= 0.5 + i as f64;
        }
        v
    }
}

/// Which reduced equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ring {
    One,
    Two,
}

/// One projected coefficient with its four-piece numerator split.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectedCoefficient {
    pub value: f64,
    /// ∫ over B(ξ₁, ᾱ/k) (resp. the ring-2 ball)
    pub piece_own_ball: f64,
    pub piece_exterior: f64,
    pub piece_other_ring1: f64,
    pub piece_ring2: f64,
    pub denominator: f64,
    pub err_est: f64,
    pub converged: bool,
}

/// c̄₀ = ∫ ζ̄₁ E Z̄₀ / ∫ U_{μ,ξ₁}^{p-1} Z̄₀² (ring 1), or the ring-2
/// analogue; the numerator is assembled as the four-piece region sum.
pub fn projected_coefficient(config: &TowerConfiguration, ring: Ring, scheme: &QuadratureScheme) -> Result<ProjectedCoefficient> {
    let cfg = config.clone();
    let alpha = match ring {
        Ring::One => scheme.params.alpha_bar,
        Ring::Two => scheme.params.alpha_hat,
    };
    let orientation = CutoffOrientation::OneNearBubble;
    let integrand = move |y: &[f64], out: &mut [f64]| {
        let (site, zsite) = match ring {
            Ring::One => (RingSite::Ring1(0), SiteRef::Ring1(0)),
            Ring::Two => (RingSite::Ring2(0), SiteRef::Ring2(0)),
        };
        let z = cutoff(&cfg, y, site, alpha, orientation);
        if z == 0.0 {
            out[0] = 0.0;
            return;
        }
        let proj = eval_zgroup(&cfg, 0, zsite, y).unwrap();
        out[0] = z * eval_error(&cfg, y) * proj;
    };
    let mut regions = vec![Region::Exterior];
    for j in 0..config.k {
        regions.push(Region::Ring1Patch(j));
    }
    for l in 0..config.h {
        regions.push(Region::Ring2Patch(l));
    }
    let res = scheme.integrate_batch(1, integrand, &regions, false)?;
    let ext = res[0];
    let ring1: Vec<&crate::quadrature::QuadResult> = res[1..1 + config.k].iter().collect();
    let ring2: Vec<&crate::quadrature::QuadResult> = res[1 + config.k..].iter().collect();
    let (own, others, cross): (f64, f64, f64) = match ring {
        Ring::One => (
            ring1[0].value,
            ring1[1..].iter().map(|r| r.value).sum(),
            ring2.iter().map(|r| r.value).sum(),
        ),
        Ring::Two => (
            ring2[0].value,
            ring2[1..].iter().map(|r| r.value).sum(),
            ring1.iter().map(|r| r.value).sum(),
        ),
    };
    let denominator = normalizer(config.n);
    let numerator = own + ext.value + others + cross;
    let err: f64 = res.iter().map(|r| r.err_est).sum();
    Ok(ProjectedCoefficient {
        value: numerator / denominator,
        piece_own_ball: own,
        piece_exterior: ext.value,
        piece_other_ring1: others,
        piece_ring2: cross,
        denominator,
        err_est: err / denominator,
        converged: res.iter().all(|r| r.converged),
    })
}

/// The bare pair integral ∫_{B(0, ᾱ/(μk))} U^{p-1}(z) U(z - d_j) Z₀(z) dz
/// with d_j = (ξ_j - ξ₁)/μ, its ratio against μ^{n-2}/|ξ_j - ξ₁|^{n-2},
/// and the interaction constant c₁ = -γp · ratio (the coefficient with
/// which bubble j enters the reduced balance; positive).
#[derive(Debug, Clone, Serialize)]
pub struct PairInteraction {
    pub j: usize,
    pub integral: f64,
    pub ratio: f64,
    pub c1: f64,
    pub separation: f64,
}

pub fn pair_interaction(config: &TowerConfiguration, j: usize, scheme: &QuadratureScheme) -> Result<PairInteraction> {
    if j == 0 || j >= config.k {
        return Err(Error::IndexOutOfRange(format!("pair index {j} must be in 1..k-1")));
    }
    let n = config.n;
    let mu = config.mu;
    let d: Vec<f64> = (0..n).map(|i| (config.xi[j][i] - config.xi[0][i]) / mu).collect();
    let res = scheme.integrate_patch_rescaled(0, move |z: &[f64]| {
        let u = bubble_profile(norm_sq(z), n);
        let z0 = 0.5 * (n as f64 - 2.0) * u * (1.0 - norm_sq(z)) / (1.0 + norm_sq(z));
        let mut shift = 0.0;
        for i in 0..n {
            let v = z[i] - d[i];
            shift += v * v;
        }
        abs_critical_power_m1(u, n) * bubble_profile(shift, n) * z0
    })?;
    let sep = crate::bubble::dist_sq(&config.xi[j], &config.xi[0]).sqrt();
    let ratio = res.value / (mu.powi((n - 2) as i32) / sep.powi((n - 2) as i32));
    Ok(PairInteraction {
        j,
        integral: res.value,
        ratio,
        c1: -gamma(n) * critical_exponent(n) * ratio,
        separation: sep,
    })
}

/// Options for the root solve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverOpts {
    /// tolerance on |c̄₀| and |ĉ₀|
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 60 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedSolution {
    pub n: usize,
    pub k: usize,
    pub h: usize,
    pub q: f64,
    pub delta_star: f64,
    pub eps_star: f64,
    /// residuals (c̄₀, ĉ₀) at the root
    pub residuals: (f64, f64),
    /// fitted products A_n·a¹, A_n·a², B_n·b¹, B_n·b² of the leading
    /// bracket c̄₀ ≈ -A δ(δa¹ - a²)/k^{n-2} (measured orientation)
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub iterations: usize,
    pub coefficient_evals: usize,
}

/// Evaluate both reduced coefficients at (δ, ε).
fn coefficients(
    n: usize,
    k: usize,
    h: usize,
    delta: f64,
    eps: f64,
    params: SchemeParams,
) -> Result<(f64, f64)> {
    let cfg = TowerConfiguration::new(TowerParams { n, k, h, delta, eps })?;
    let scheme = QuadratureScheme::new(&cfg, params)?;
    let c1 = projected_coefficient(&cfg, Ring::One, &scheme)?;
    let c2 = projected_coefficient(&cfg, Ring::Two, &scheme)?;
    Ok((c1.value, c2.value))
}

/// Damped two-dimensional Newton with a forward-difference Jacobian and a
/// diagonal-bisection fallback for symmetric inputs. Roots are confined to
/// the admissible box [0.1, 10]².
pub fn solve_reduced(
    n: usize,
    k: usize,
    h: usize,
    params: SchemeParams,
    opts: SolverOpts,
) -> Result<ReducedSolution> {
    let mut evals = 0usize;
    let mut eval = |d: f64, e: f64| -> Result<(f64, f64)> {
        evals += 1;
        coefficients(n, k, h, d, e, params)
    };

    // bracket a starting point on the diagonal: the symmetric coefficient
    // c̄₀(δ,δ) changes sign across the root
    let mut table = String::new();
    let mut bracket: Option<(f64, f64, f64, f64)> = None;
    let samples = [0.4, 1.0, 2.0, 3.0, 4.0, 5.0, 6.5];
    let mut prev: Option<(f64, f64)> = None;
    for &d in &samples {
        let (c, _) = eval(d, d)?;
        table.push_str(&format!("  delta=eps={d:<4}: cbar0 = {c:+.6e}\n"));
        if let Some((pd, pc)) = prev {
            if pc * c < 0.0 {
                bracket = Some((pd, d, pc, c));
                break;
            }
        }
        prev = Some((d, c));
    }
    let (mut lo, mut hi, mut flo, _fhi) = bracket.ok_or(Error::NoRoot { table: table.clone() })?;

    // bisection on the diagonal down to a loose tolerance
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (c, _) = eval(mid, mid)?;
        if flo * c <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = c;
        }
        if hi - lo < 1e-3 * hi {
            break;
        }
    }
    let mut x = [0.5 * (lo + hi), 0.5 * (lo + hi)];
    let mut f = eval(x[0], x[1])?;
    let mut iterations = 0usize;

    // damped Newton with forward-difference Jacobian
    while (f.0.abs() > opts.tol || f.1.abs() > opts.tol) && iterations < opts.max_iter {
        iterations += 1;
        let hstep = [1e-4 * x[0].max(1e-2), 1e-4 * x[1].max(1e-2)];
        let fd = eval(x[0] + hstep[0], x[1])?;
        let fe = eval(x[0], x[1] + hstep[1])?;
        let j = [
            [(fd.0 - f.0) / hstep[0], (fe.0 - f.0) / hstep[1]],
            [(fd.1 - f.1) / hstep[0], (fe.1 - f.1) / hstep[1]],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            return Err(Error::NoConvergence { what: "singular reduced Jacobian".into(), iters: iterations });
        }
        let dx = [
            -(j[1][1] * f.0 - j[0][1] * f.1) / det,
            -(-j[1][0] * f.0 + j[0][0] * f.1) / det,
        ];
        let norm0 = f.0.abs().max(f.1.abs());
        let mut t = 1.0;
        loop {
            let cand = [
                (x[0] + t * dx[0]).clamp(PARAM_BOX.0, PARAM_BOX.1),
                (x[1] + t * dx[1]).clamp(PARAM_BOX.0, PARAM_BOX.1),
            ];
            let fc = eval(cand[0], cand[1])?;
            if fc.0.abs().max(fc.1.abs()) < norm0 || t < 1.0 / 64.0 {
                x = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    if f.0.abs() > opts.tol || f.1.abs() > opts.tol {
        return Err(Error::NoConvergence {
            what: format!("reduced system residuals ({:.3e}, {:.3e})", f.0, f.1),
            iters: iterations,
        });
    }

    // leading-coefficient extraction: quadratic fit of c̄₀ in δ at three
    // points around the root (and of ĉ₀ in ε)
    let dpts = [0.5 * x[0], x[0], 1.5 * x[0]];
    let mut cvals = [0.0; 3];
    for (i, &d) in dpts.iter().enumerate() {
        cvals[i] = eval(d.clamp(PARAM_BOX.0, PARAM_BOX.1), x[1])?.0;
    }
    let (aq, bq, _) = fit_quadratic_3(&[(dpts[0], cvals[0]), (dpts[1], cvals[1]), (dpts[2], cvals[2])]);
    let epts = [0.5 * x[1], x[1], 1.5 * x[1]];
    let mut dvals = [0.0; 3];
    for (i, &e) in epts.iter().enumerate() {
        dvals[i] = eval(x[0], e.clamp(PARAM_BOX.0, PARAM_BOX.1))?.1;
    }
    let (ah, bh, _) = fit_quadratic_3(&[(epts[0], dvals[0]), (epts[1], dvals[1]), (epts[2], dvals[2])]);
    let knm2 = (k as f64).powi((n - 2) as i32);
    let hnm2 = (h as f64).powi((n - 2) as i32);

    Ok(ReducedSolution {
        n,
        k,
        h,
        q: params.q,
        delta_star: x[0],
        eps_star: x[1],
        residuals: (f.0, f.1),
        a1: -aq * knm2,
        a2: bq * knm2,
        b1: -ah * hnm2,
        b2: bh * hnm2,
        iterations,
        coefficient_evals: evals,
    })
}
