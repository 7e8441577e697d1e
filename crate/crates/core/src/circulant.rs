//! Circulant and block interaction algebra: DFT-diagonalized ring matrices,
//! deflated solves modulo the cos/sin near-kernel, the coupled two-ring
//! system solved by alternating contraction, and the interaction blocks
//! assembled from quadrature.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::bubble::{abs_critical_power_m1, critical_exponent, gamma};
use crate::config::TowerConfiguration;
use crate::error::{Error, Result};
use crate::error_field::eval_ustar;
use crate::kernel::{eval_all_site_fields, site_count};
use crate::quadrature::{QuadratureScheme, Region};

/// Relative magnitude below which a Fourier mode of a deflation vector is
/// considered absent.
const MODE_EPS: f64 = 1e-8;
/// Relative tolerance for the rhs-orthogonality precondition of deflated
/// solves.
pub const DEFLATION_RTOL: f64 = 1e-7;

/// A circulant matrix stored as its first row: C_{ij} = row[(j-i) mod m].
#[derive(Debug, Clone, Serialize)]
pub struct CirculantMatrix {
    pub first_row: Vec<f64>,
}

impl CirculantMatrix {
    pub fn new(first_row: Vec<f64>) -> Self {
        Self { first_row }
    }

    pub fn len(&self) -> usize {
        self.first_row.len()
    }
    pub fn is_empty(&self) -> bool {
        self.first_row.is_empty()
    }

    fn fft(&self, data: &mut [Complex64], inverse: bool) {
        let mut planner = FftPlanner::new();
        let fft = if inverse { planner.plan_fft_inverse(data.len()) } else { planner.plan_fft_forward(data.len()) };
        fft.process(data);
    }

    /// Eigenvalues: λ_ν = Σ_s row[s] e^{2πiνs/m} (the conjugate DFT of the
    /// first row), paired with the Fourier eigenvectors.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self.first_row.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft(&mut buf, false);
        buf.iter().map(|v| v.conj()).collect()
    }

    /// O(m log m) product with a vector; equals the dense product.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.len();
        if x.len() != m {
            return Err(Error::LengthMismatch { expected: m, got: x.len() });
        }
        let eig = self.eigenvalues();
        let mut xb: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft(&mut xb, false);
        for (v, e) in xb.iter_mut().zip(&eig) {
            *v *= e;
        }
        self.fft(&mut xb, true);
        Ok(xb.iter().map(|v| v.re / m as f64).collect())
    }

    /// Dense representation for the oracle path.
    pub fn dense(&self) -> DMatrix<f64> {
        let m = self.len();
        DMatrix::from_fn(m, m, |i, j| self.first_row[(j + m - i) % m])
    }

    /// Solve C w = rhs with the Fourier modes of the deflation vectors
    /// removed; returns the unique solution orthogonal to all of them.
    ///
    /// The rhs must already be orthogonal to the deflation set; otherwise a
    /// consistency error reports the violating inner products.
    pub fn solve_deflated(&self, rhs: &[f64], deflation: &[Vec<f64>]) -> Result<Vec<f64>> {
        let m = self.len();
        if rhs.len() != m {
            return Err(Error::LengthMismatch { expected: m, got: rhs.len() });
        }
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut dead = vec![false; m];
        for (i, v) in deflation.iter().enumerate() {
            if v.len() != m {
                return Err(Error::LengthMismatch { expected: m, got: v.len() });
            }
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = v.iter().zip(rhs).map(|(a, b)| a * b).sum();
            if dot.abs() > DEFLATION_RTOL * rhs_norm.max(1e-300) * vn.max(1e-300) {
                return Err(Error::DeflationConsistency { index: i, magnitude: dot.abs(), tol: DEFLATION_RTOL });
            }
            // mark the Fourier support of the deflation vector
            let mut vb: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            self.fft(&mut vb, false);
            let vmax = vb.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
            for (nu, c) in vb.iter().enumerate() {
                if c.norm() > MODE_EPS * vmax {
                    dead[nu] = true;
                }
            }
        }
        let eig = self.eigenvalues();
        let mut rb: Vec<Complex64> = rhs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft(&mut rb, false);
        for nu in 0..m {
            if dead[nu] {
                rb[nu] = Complex64::new(0.0, 0.0);
            } else {
                rb[nu] /= eig[nu];
            }
        }
        self.fft(&mut rb, true);
        Ok(rb.iter().map(|v| v.re / m as f64).collect())
    }

    /// Spectral norm of the inverse restricted to the complement of the
    /// deflated modes.
    pub fn inv_norm_deflated(&self, dead_modes: &[usize]) -> f64 {
        let eig = self.eigenvalues();
        let mut smallest = f64::INFINITY;
        for (nu, e) in eig.iter().enumerate() {
            if !dead_modes.contains(&nu) {
                smallest = smallest.min(e.norm());
            }
        }
        1.0 / smallest
    }
}

/// cos/sin deflation vectors of a ring: (cos θ_j)_j and (sin θ_j)_j with
/// θ_j = 2π(j-1)/m — the exact Fourier modes 1 and m-1.
pub fn ring_cos_sin(m: usize) -> (Vec<f64>, Vec<f64>) {
    let cos = (0..m).map(|j| (2.0 * std::f64::consts::PI * j as f64 / m as f64).cos()).collect();
    let sin = (0..m).map(|j| (2.0 * std::f64::consts::PI * j as f64 / m as f64).sin()).collect();
    (cos, sin)
}

// ----------------------------------------------------------------------
// coupled two-ring system
// ----------------------------------------------------------------------

/// The coupled system [H̄, γ𝟙; γ𝟙, Ĥ] on (w̄, ŵ) with all-ones coupling.
#[derive(Debug, Clone)]
pub struct BlockInteractionSystem {
    pub hbar: CirculantMatrix,
    pub hhat: CirculantMatrix,
    /// γ_α = ∫ L(Z̄_{α1}) Ẑ_{α1}
    pub gamma: f64,
    pub rbar: Vec<f64>,
    pub rhat: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionSolution {
    pub wbar: Vec<f64>,
    pub what: Vec<f64>,
    pub iterations: usize,
    /// |γ| · ‖H̄⁻¹‖ · ‖Ĥ⁻¹‖ · k · h on the deflated complement
    pub contraction_factor: f64,
}

impl BlockInteractionSystem {
    pub fn dense(&self) -> DMatrix<f64> {
        let k = self.hbar.len();
        let h = self.hhat.len();
        let mut m = DMatrix::zeros(k + h, k + h);
        m.view_mut((0, 0), (k, k)).copy_from(&self.hbar.dense());
        m.view_mut((k, k), (h, h)).copy_from(&self.hhat.dense());
        for i in 0..k {
            for j in 0..h {
                m[(i, k + j)] = self.gamma;
                m[(k + j, i)] = self.gamma;
            }
        }
        m
    }

    pub fn deflation_vectors(&self) -> Vec<DVector<f64>> {
        let k = self.hbar.len();
        let h = self.hhat.len();
        let (cb, sb) = ring_cos_sin(k);
        let (ch, sh) = ring_cos_sin(h);
        let mut out = Vec::new();
        for (ring1, v) in [(true, cb), (true, sb), (false, ch), (false, sh)] {
            let mut w = DVector::zeros(k + h);
            if ring1 {
                for i in 0..k {
                    w[i] = v[i];
                }
            } else {
                for i in 0..h {
                    w[k + i] = v[i];
                }
            }
            out.push(w);
        }
        out
    }
}

/// Alternating deflated solves
///   w̄ ← H̄⁻¹(r̄ − γ 𝟙 ŵ),  ŵ ← Ĥ⁻¹(r̂ − γ 𝟙 w̄),
/// iterated to `tol` on successive iterates.
pub fn solve_block_contraction(sys: &BlockInteractionSystem, tol: f64, max_iter: usize) -> Result<ContractionSolution> {
    let k = sys.hbar.len();
    let h = sys.hhat.len();
    let (cb, sb) = ring_cos_sin(k);
    let (ch, sh) = ring_cos_sin(h);
    let defl_bar = vec![cb, sb];
    let defl_hat = vec![ch, sh];
    let inv_bar = sys.hbar.inv_norm_deflated(&[1, k - 1]);
    let inv_hat = sys.hhat.inv_norm_deflated(&[1, h - 1]);
    let contraction_factor = sys.gamma.abs() * inv_bar * inv_hat * (k as f64) * (h as f64);

    let mut wbar = vec![0.0; k];
    let mut what = vec![0.0; h];
    let scale = (norm2(&sys.rbar) + norm2(&sys.rhat)).max(f64::MIN_POSITIVE);
    for it in 1..=max_iter {
        let sum_hat: f64 = what.iter().sum();
        let rb: Vec<f64> = sys.rbar.iter().map(|&r| r - sys.gamma * sum_hat).collect();
        wbar = sys.hbar.solve_deflated(&rb, &defl_bar)?;
        let sum_bar: f64 = wbar.iter().sum();
        let rh: Vec<f64> = sys.rhat.iter().map(|&r| r - sys.gamma * sum_bar).collect();
        what = sys.hhat.solve_deflated(&rh, &defl_hat)?;
        // projected residual of the coupled system at the new iterates
        let hb = sys.hbar.matvec(&wbar)?;
        let hh = sys.hhat.matvec(&what)?;
        let sum_hat_new: f64 = what.iter().sum();
        let proj_norm = |res: Vec<f64>, defl: &[Vec<f64>]| {
            let mut r = res;
            for v in defl {
                let vn: f64 = v.iter().map(|x| x * x).sum();
                let d: f64 = v.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / vn;
                for (ri, vi) in r.iter_mut().zip(v) {
                    *ri -= d * vi;
                }
            }
            norm2(&r)
        };
        let rb_res: Vec<f64> = hb.iter().zip(&sys.rbar).map(|(v, r)| v + sys.gamma * sum_hat_new - r).collect();
        let rh_res: Vec<f64> = hh.iter().zip(&sys.rhat).map(|(v, r)| v + sys.gamma * sum_bar - r).collect();
        let res = proj_norm(rb_res, &defl_bar) + proj_norm(rh_res, &defl_hat);
        if res <= tol * scale {
            return Ok(ContractionSolution { wbar, what, iterations: it, contraction_factor });
        }
    }
    Err(Error::NoConvergence {
        what: format!("block contraction (estimated factor {contraction_factor:.3e})"),
        iters: max_iter,
    })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
fn diff2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dense oracle: least squares with the deflation directions projected out
/// of both the right-hand side and the solution.
pub fn dense_deflated_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, deflation: &[DVector<f64>]) -> DVector<f64> {
    let dim = m.nrows();
    // orthonormalize the deflation set
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in deflation {
        let mut w = v.clone();
        for b in &basis {
            let d = b.dot(&w);
            w -= b * d;
        }
        let n = w.norm();
        if n > 1e-12 {
            basis.push(w / n);
        }
    }
    let project = |x: &DVector<f64>| {
        let mut y = x.clone();
        for b in &basis {
            let d = b.dot(&y);
            y -= b * d;
        }
        y
    };
    // (P M P + V Vᵀ) x = P rhs has a unique solution with V-components 0
    let mut a = DMatrix::zeros(dim, dim);
    // build P M P column by column
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        let col = project(&(m * project(&e)));
        a.set_column(j, &col);
    }
    for b in &basis {
        a += b * b.transpose();
    }
    let rhs_p = project(rhs);
    let sol = a.lu().solve(&rhs_p).expect("deflated system is nonsingular");
    project(&sol)
}

// ----------------------------------------------------------------------
// quadrature assembly
// ----------------------------------------------------------------------

/// Assemble the ring blocks H̄_α = (∫ L(Z̄_{αi}) Z̄_{αj}), Ĥ_α and the
/// coupling γ_α = ∫ L(Z̄_{α1}) Ẑ_{α1} from one batched quadrature sweep.
///
/// The γ𝟙 coupling shape is the structure of the α ≥ 5 systems; for n = 4
/// the same blocks exist for α = 3 (the M̄/M̂ circulants) and are coupled
/// through the identical structure here.
pub fn assemble_block_system(
    config: &TowerConfiguration,
    alpha: usize,
    scheme: &QuadratureScheme,
    rbar: Vec<f64>,
    rhat: Vec<f64>,
) -> Result<(BlockInteractionSystem, bool)> {
    if alpha < 3 || alpha > config.n {
        return Err(Error::IndexOutOfRange(format!("block field index {alpha} outside 3..=n")));
    }
    let k = config.k;
    let h = config.h;
    let dbar = k / 2 + 1;
    let dhat = h / 2 + 1;
    let m = dbar + dhat + 1;
    let n = config.n;
    let stride = n + 1;
    let nsites = site_count(config);
    let cfg = config.clone();
    let res = scheme.integrate_batch(
        m,
        move |y: &[f64], out: &mut [f64]| {
            let pg = critical_exponent(n) * gamma(n);
            let us = abs_critical_power_m1(eval_ustar(&cfg, y), n);
            let mut upm1 = vec![0.0; nsites];
            let mut fields = vec![0.0; nsites * stride];
            eval_all_site_fields(&cfg, y, &mut upm1, &mut fields);
            let lbar1 = pg * (us - upm1[1]) * fields[stride + alpha];
            let lhat1 = pg * (us - upm1[1 + k]) * fields[(1 + k) * stride + alpha];
            for d in 0..dbar {
                out[d] = lbar1 * fields[(1 + d) * stride + alpha];
            }
            for d in 0..dhat {
                out[dbar + d] = lhat1 * fields[(1 + k + d) * stride + alpha];
            }
            out[dbar + dhat] = lbar1 * fields[(1 + k) * stride + alpha];
        },
        &[Region::All],
        false,
    )?;
    let converged = res.iter().all(|r| r.converged);
    let mut row_bar = vec![0.0; k];
    for d in 0..dbar {
        row_bar[d] = res[d].value;
        row_bar[(k - d) % k] = res[d].value; // symmetric circulant
    }
    let mut row_hat = vec![0.0; h];
    for d in 0..dhat {
        row_hat[d] = res[dbar + d].value;
        row_hat[(h - d) % h] = res[dbar + d].value;
    }
    let gamma_alpha = res[dbar + dhat].value;
    Ok((
        BlockInteractionSystem { hbar: CirculantMatrix::new(row_bar), hhat: CirculantMatrix::new(row_hat), gamma: gamma_alpha, rbar, rhat },
        converged,
    ))
}

/// β_{α₁α₂} = ∫ L(Z̄_{α₁,1}) Ẑ_{α₂,1} for α₁, α₂ = 0..4, in one light
/// batched sweep (25 components).
pub fn assemble_beta_table(config: &TowerConfiguration, scheme: &QuadratureScheme) -> Result<([[f64; 5]; 5], bool)> {
    let n = config.n;
    let k = config.k;
    let stride = n + 1;
    let nsites = site_count(config);
    let cfg = config.clone();
    let res = scheme.integrate_batch(
        25,
        move |y: &[f64], out: &mut [f64]| {
            let pg = critical_exponent(n) * gamma(n);
            let us = abs_critical_power_m1(eval_ustar(&cfg, y), n);
            let mut upm1 = vec![0.0; nsites];
            let mut fields = vec![0.0; nsites * stride];
            eval_all_site_fields(&cfg, y, &mut upm1, &mut fields);
            let lfac = pg * (us - upm1[1]);
            for a1 in 0..5 {
                let lv = lfac * fields[stride + a1];
                for a2 in 0..5 {
                    out[a1 * 5 + a2] = lv * fields[(1 + k) * stride + a2];
                }
            }
        },
        &[Region::All],
        false,
    )?;
    let mut beta = [[0.0; 5]; 5];
    let mut conv = true;
    for a1 in 0..5 {
        for a2 in 0..5 {
            beta[a1][a2] = res[a1 * 5 + a2].value;
            conv &= res[a1 * 5 + a2].converged;
        }
    }
    Ok((beta, conv))
}

/// Predicted cross-block entry from rotation equivariance:
/// ∫ L(Z̄_{α₁j}) Ẑ_{α₂l} as a trig combination of the β table.
pub fn predicted_cross_entry(config: &TowerConfiguration, beta: &[[f64; 5]; 5], a1: usize, a2: usize, j: usize, _l: usize) -> f64 {
    let th = config.theta_bar[j];
    match a2 {
        1 => th.cos() * beta[a1][1] - th.sin() * beta[a1][2],
        2 => th.sin() * beta[a1][1] + th.cos() * beta[a1][2],
        _ => beta[a1][a2],
    }
}

/// The full (1+k+h)² single-field interaction matrix
/// H̃_α = (∫ L(V) W) over V, W ∈ {Z_{α0}, Z̄_{αj}, Ẑ_{αl}} (α ≥ 5, so n ≥ 5).
#[derive(Debug, Clone, Serialize)]
pub struct HtildeReport {
    pub alpha: usize,
    pub dim: usize,
    #[serde(skip)]
    pub matrix: DMatrix<f64>,
    pub gamma: f64,
    /// ‖H̃ · [1, -1̄, -1̂]‖ / ‖H̃‖_F
    pub row_sum_residual: f64,
    pub converged: bool,
}

pub fn assemble_htilde(config: &TowerConfiguration, alpha: usize, scheme: &QuadratureScheme) -> Result<HtildeReport> {
    if alpha < 5 || alpha > config.n {
        return Err(Error::IndexOutOfRange(format!(
            "H̃ requires a free axis: alpha = {alpha} must be in 5..=n (n = {})",
            config.n
        )));
    }
    let k = config.k;
    let h = config.h;
    let n = config.n;
    let stride = n + 1;
    let nsites = site_count(config);
    // unique entries: e00, (e0,bar j)_j, (e0,hat l)_l, circulant rows, coupling row
    let m = 1 + k + h + (k / 2 + 1) + (h / 2 + 1) + h;
    let cfg = config.clone();
    let res = scheme.integrate_batch(
        m,
        move |y: &[f64], out: &mut [f64]| {
            let pg = critical_exponent(n) * gamma(n);
            let us = abs_critical_power_m1(eval_ustar(&cfg, y), n);
            let mut upm1 = vec![0.0; nsites];
            let mut fields = vec![0.0; nsites * stride];
            eval_all_site_fields(&cfg, y, &mut upm1, &mut fields);
            let f = |s: usize| fields[s * stride + alpha];
            let l0 = pg * (us - upm1[0]) * f(0);
            let lbar1 = pg * (us - upm1[1]) * f(1);
            let lhat1 = pg * (us - upm1[1 + k]) * f(1 + k);
            let mut i = 0;
            out[i] = l0 * f(0);
            i += 1;
            for j in 0..k {
                out[i] = l0 * f(1 + j);
                i += 1;
            }
            for l in 0..h {
                out[i] = l0 * f(1 + k + l);
                i += 1;
            }
            for d in 0..=k / 2 {
                out[i] = lbar1 * f(1 + d);
                i += 1;
            }
            for d in 0..=h / 2 {
                out[i] = lhat1 * f(1 + k + d);
                i += 1;
            }
            for l in 0..h {
                out[i] = lbar1 * f(1 + k + l);
                i += 1;
            }
        },
        &[Region::All],
        false,
    )?;
    let converged = res.iter().all(|r| r.converged);
    let dim = 1 + k + h;
    let mut mt = DMatrix::zeros(dim, dim);
    let mut i = 0;
    mt[(0, 0)] = res[i].value;
    i += 1;
    for j in 0..k {
        mt[(0, 1 + j)] = res[i].value;
        mt[(1 + j, 0)] = res[i].value;
        i += 1;
    }
    for l in 0..h {
        mt[(0, 1 + k + l)] = res[i].value;
        mt[(1 + k + l, 0)] = res[i].value;
        i += 1;
    }
    let mut row_bar = vec![0.0; k];
    for d in 0..=k / 2 {
        row_bar[d] = res[i].value;
        row_bar[(k - d) % k] = res[i].value;
        i += 1;
    }
    let mut row_hat = vec![0.0; h];
    for d in 0..=h / 2 {
        row_hat[d] = res[i].value;
        row_hat[(h - d) % h] = res[i].value;
        i += 1;
    }
    let mut coupling = vec![0.0; h];
    for l in 0..h {
        coupling[l] = res[i].value;
        i += 1;
    }
    for a in 0..k {
        for b in 0..k {
            mt[(1 + a, 1 + b)] = row_bar[(b + k - a) % k];
        }
    }
    for a in 0..h {
        for b in 0..h {
            mt[(1 + k + a, 1 + k + b)] = row_hat[(b + h - a) % h];
        }
    }
    // cross block: both ring rotations fix the opposite ring's α >= 5
    // fields, so every entry equals γ_α; the measured per-l values are kept
    let gamma_alpha = coupling[0];
    for a in 0..k {
        for b in 0..h {
            mt[(1 + a, 1 + k + b)] = coupling[b];
            mt[(1 + k + b, 1 + a)] = coupling[b];
        }
    }
    // row-sum kernel relation: v = [1, -1̄, -1̂]
    let mut v = DVector::zeros(dim);
    v[0] = 1.0;
    for i in 1..dim {
        v[i] = -1.0;
    }
    let frob = mt.iter().map(|x| x * x).sum::<f64>().sqrt();
    let row_sum_residual = (&mt * &v).norm() / frob.max(f64::MIN_POSITIVE);
    Ok(HtildeReport { alpha, dim, matrix: mt, gamma: gamma_alpha, row_sum_residual, converged })
}

// ----------------------------------------------------------------------
// the fifteen-block first system
// ----------------------------------------------------------------------

/// Full symmetric matrix of ∫ L(Z-field) Z-field over the five field
/// indices α = 0..4 and all sites, ordered block-by-α then site
/// (center, ring 1, ring 2), plus the β coupling table.
#[derive(Debug, Clone)]
pub struct M1Blocks {
    pub config: TowerConfiguration,
    /// 5(1+k+h) square
    pub matrix: DMatrix<f64>,
    /// β_{α₁α₂} = ∫ L(Z̄_{α₁1}) Ẑ_{α₂1}
    pub beta: [[f64; 5]; 5],
    pub converged: bool,
}

pub fn assemble_m1_blocks(config: &TowerConfiguration, scheme: &QuadratureScheme) -> Result<M1Blocks> {
    let n = config.n;
    let k = config.k;
    let h = config.h;
    let nsites = site_count(config);
    let stride = n + 1;
    let dim = 5 * nsites;
    let pairs: Vec<(usize, usize)> = (0..dim).flat_map(|r| (r..dim).map(move |c| (r, c))).collect();
    let np = pairs.len();
    let cfg = config.clone();
    let pairs_c = pairs.clone();
    let res = scheme.integrate_batch(
        np,
        move |y: &[f64], out: &mut [f64]| {
            let pg = critical_exponent(n) * gamma(n);
            let us = abs_critical_power_m1(eval_ustar(&cfg, y), n);
            let mut upm1 = vec![0.0; nsites];
            let mut fields = vec![0.0; nsites * stride];
            eval_all_site_fields(&cfg, y, &mut upm1, &mut fields);
            // lvec[idx] = L(Z_{site,a})(y), fvec[idx] = Z_{site,a}(y)
            // with idx = a * nsites + site
            let mut lvec = vec![0.0; dim];
            let mut fvec = vec![0.0; dim];
            for a in 0..5 {
                for s in 0..nsites {
                    let z = fields[s * stride + a];
                    fvec[a * nsites + s] = z;
                    lvec[a * nsites + s] = pg * (us - upm1[s]) * z;
                }
            }
            for (i, &(r, c)) in pairs_c.iter().enumerate() {
                out[i] = lvec[r] * fvec[c];
            }
        },
        &[Region::All],
        false,
    )?;
    let mut matrix = DMatrix::zeros(dim, dim);
    let mut converged = true;
    for (i, &(r, c)) in pairs.iter().enumerate() {
        matrix[(r, c)] = res[i].value;
        matrix[(c, r)] = res[i].value;
        converged &= res[i].converged;
    }
    let mut beta = [[0.0; 5]; 5];
    for (a1, row) in beta.iter_mut().enumerate() {
        for (a2, b) in row.iter_mut().enumerate() {
            // β_{a1 a2} = ∫ L(Z̄_{a1,1}) Ẑ_{a2,1}: ring-1 site 0 is flat 1,
            // ring-2 site 0 is flat 1+k
            *b = matrix[(a1 * nsites + 1, a2 * nsites + 1 + k)];
        }
    }
    let _ = h;
    Ok(M1Blocks { config: config.clone(), matrix, beta, converged })
}

impl M1Blocks {
    fn nsites(&self) -> usize {
        site_count(&self.config)
    }

    /// Sub-block (∫ L of α₁ ring-1 fields against α₂ ring-2 fields): k×h.
    pub fn cross_bar_hat(&self, a1: usize, a2: usize) -> DMatrix<f64> {
        let ns = self.nsites();
        let k = self.config.k;
        let h = self.config.h;
        DMatrix::from_fn(k, h, |j, l| self.matrix[(a1 * ns + 1 + j, a2 * ns + 1 + k + l)])
    }

    /// Sub-block over ring-1 sites only: k×k.
    pub fn bar_bar(&self, a1: usize, a2: usize) -> DMatrix<f64> {
        let ns = self.nsites();
        let k = self.config.k;
        DMatrix::from_fn(k, k, |i, j| self.matrix[(a1 * ns + 1 + i, a2 * ns + 1 + j)])
    }

    /// Sub-block over ring-2 sites only: h×h.
    pub fn hat_hat(&self, a1: usize, a2: usize) -> DMatrix<f64> {
        let ns = self.nsites();
        let k = self.config.k;
        let h = self.config.h;
        DMatrix::from_fn(h, h, |l, m| self.matrix[(a1 * ns + 1 + k + l, a2 * ns + 1 + k + m)])
    }

    /// The kernel candidates of (the α ≤ 4 part of) the first system.
    pub fn kernel_vectors(&self) -> Vec<DVector<f64>> {
        let c = &self.config;
        let ns = self.nsites();
        let k = c.k;
        let h = c.h;
        let s = c.ring1_radius();
        let t = c.ring2_radius();
        let dim = 5 * ns;
        let block = |w: &mut DVector<f64>, a: usize, center: f64, bar: &dyn Fn(usize) -> f64, hat: &dyn Fn(usize) -> f64| {
            w[a * ns] = center;
            for j in 0..k {
                w[a * ns + 1 + j] = bar(j);
            }
            for l in 0..h {
                w[a * ns + 1 + k + l] = hat(l);
            }
        };
        let mut out = Vec::new();
        // w0: dilation
        let mut w = DVector::zeros(dim);
        block(&mut w, 0, 1.0, &|_| -1.0, &|_| -1.0);
        block(&mut w, 1, 0.0, &|_| -1.0, &|_| 0.0);
        block(&mut w, 3, 0.0, &|_| 0.0, &|_| -1.0);
        out.push(w);
        // w1: y1-translation
        let mut w = DVector::zeros(dim);
        block(&mut w, 1, 1.0, &|j| -c.theta_bar[j].cos() / s, &|_| -1.0);
        block(&mut w, 2, 0.0, &|j| c.theta_bar[j].sin() / s, &|_| 0.0);
        out.push(w);
        // w2: y2-translation
        let mut w = DVector::zeros(dim);
        block(&mut w, 1, 0.0, &|j| -c.theta_bar[j].sin() / s, &|_| 0.0);
        block(&mut w, 2, 1.0, &|j| -c.theta_bar[j].cos() / s, &|_| -1.0);
        out.push(w);
        // w3: y3-translation
        let mut w = DVector::zeros(dim);
        block(&mut w, 3, 1.0, &|_| -1.0, &|l| -c.theta_hat[l].cos() / t);
        block(&mut w, 4, 0.0, &|_| 0.0, &|l| c.theta_hat[l].sin() / t);
        out.push(w);
        // w4: y4-translation
        let mut w = DVector::zeros(dim);
        block(&mut w, 3, 0.0, &|_| 0.0, &|l| -c.theta_hat[l].sin() / t);
        block(&mut w, 4, 1.0, &|_| -1.0, &|l| -c.theta_hat[l].cos() / t);
        out.push(w);
        out
    }

    /// ‖M₁ w_i‖ / ‖M₁‖_F for the five kernel candidates.
    pub fn kernel_residuals(&self) -> Vec<f64> {
        let frob = self.matrix.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.kernel_vectors().iter().map(|w| (&self.matrix * w).norm() / frob).collect()
    }
}

/// Magnitudes of the solvability inner products: the GeneralConditions list
/// applied to the cross-coupling action on admissible candidate vectors,
/// i.e. the seven conditions of the first system plus the hat-system
/// analogues.
#[derive(Debug, Clone, Serialize)]
pub struct OrthogonalityReport {
    /// the twelve-plus-two inner products of the bar system conditions
    pub bar_products: Vec<(String, f64)>,
    pub hat_products: Vec<(String, f64)>,
    /// reference scale: ‖M̄̄₁ ĉ‖ per block
    pub scale: f64,
}

/// Evaluate the orthogonality conditions with seeded admissible candidates
/// ĉ₀..ĉ₄ (ĉ₁, ĉ₂ ⊥ {ĉos, ŝin}) and c̄₀..c̄₄ (c̄₃, c̄₄ ⊥ {c̄os, s̄in}).
pub fn check_orthogonality_conditions(blocks: &M1Blocks, seed: u64) -> OrthogonalityReport {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let c = &blocks.config;
    let k = c.k;
    let h = c.h;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rand_vec = |m: usize| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0f64));
    let (cb, sb) = ring_cos_sin(k);
    let (ch, sh) = ring_cos_sin(h);
    let cbar = DVector::from_vec(cb);
    let sbar = DVector::from_vec(sb);
    let chat = DVector::from_vec(ch);
    let shat = DVector::from_vec(sh);
    let ones_k = DVector::from_element(k, 1.0);
    let ones_h = DVector::from_element(h, 1.0);
    let project = |v: &DVector<f64>, dirs: &[&DVector<f64>]| {
        let mut w = v.clone();
        for d in dirs {
            let c = d.dot(&w) / d.dot(d);
            w -= *d * c;
        }
        w
    };
    // hat candidates with the hat-side constraints
    let chat0 = rand_vec(h);
    let chat1 = project(&rand_vec(h), &[&chat, &shat]);
    let chat2 = project(&rand_vec(h), &[&chat, &shat]);
    let chat3 = rand_vec(h);
    let chat4 = rand_vec(h);
    let hat_cands = [chat0, chat1, chat2, chat3, chat4];
    // bar candidates with the bar-side constraints
    let cbar0 = rand_vec(k);
    let cbar1 = rand_vec(k);
    let cbar2 = rand_vec(k);
    let cbar3 = project(&rand_vec(k), &[&cbar, &sbar]);
    let cbar4 = project(&rand_vec(k), &[&cbar, &sbar]);
    let bar_cands = [cbar0, cbar1, cbar2, cbar3, cbar4];

    // bar-system rhs contributions: s̄_{α₁} = Σ_{α₂} cross(α₁,α₂)·ĉ_{α₂}
    let mut sbar_vec: Vec<DVector<f64>> = Vec::with_capacity(5);
    for a1 in 0..5 {
        let mut v = DVector::zeros(k);
        for (a2, cand) in hat_cands.iter().enumerate() {
            v += blocks.cross_bar_hat(a1, a2) * cand;
        }
        sbar_vec.push(v);
    }
    // hat-system rhs contributions: ŝ_{α₂} = Σ_{α₁} cross(α₁,α₂)ᵀ·c̄_{α₁}
    let mut shat_vec: Vec<DVector<f64>> = Vec::with_capacity(5);
    for a2 in 0..5 {
        let mut v = DVector::zeros(h);
        for (a1, cand) in bar_cands.iter().enumerate() {
            v += blocks.cross_bar_hat(a1, a2).transpose() * cand;
        }
        shat_vec.push(v);
    }
    let scale = sbar_vec.iter().chain(&shat_vec).map(|v| v.norm()).fold(0.0f64, f64::max);

    let bar_products = vec![
        ("s2·1".into(), sbar_vec[2].dot(&ones_k)),
        ("(s0+s1)·cos".into(), (sbar_vec[0].clone() + &sbar_vec[1]).dot(&cbar)),
        ("(s0+s1)·sin".into(), (sbar_vec[0].clone() + &sbar_vec[1]).dot(&sbar)),
        ("s3·cos".into(), sbar_vec[3].dot(&cbar)),
        ("s3·sin".into(), sbar_vec[3].dot(&sbar)),
        ("s4·cos".into(), sbar_vec[4].dot(&cbar)),
        ("s4·sin".into(), sbar_vec[4].dot(&sbar)),
    ];
    let hat_products = vec![
        ("s4·1".into(), shat_vec[4].dot(&ones_h)),
        ("(s0+s3)·cos".into(), (shat_vec[0].clone() + &shat_vec[3]).dot(&chat)),
        ("(s0+s3)·sin".into(), (shat_vec[0].clone() + &shat_vec[3]).dot(&shat)),
        ("s1·cos".into(), shat_vec[1].dot(&chat)),
        ("s1·sin".into(), shat_vec[1].dot(&shat)),
        ("s2·cos".into(), shat_vec[2].dot(&chat)),
        ("s2·sin".into(), shat_vec[2].dot(&shat)),
    ];
    OrthogonalityReport { bar_products, hat_products, scale }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_symmetric_three_cycle() {
        // first row [a, b, b]: eigenvalues {a+2b, a-b, a-b}
        let c = CirculantMatrix::new(vec![2.0, 0.5, 0.5]);
        let mut eig: Vec<f64> = c.eigenvalues().iter().map(|e| e.re).collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((eig[0] - 1.5).abs() < 1e-12 && (eig[1] - 1.5).abs() < 1e-12 && (eig[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_circulant_matvec() {
        let mut row = vec![0.0; 7];
        row[0] = 1.0;
        let c = CirculantMatrix::new(row);
        let x = vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0, -1.0];
        let y = c.matvec(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn cos_sin_are_fourier_modes() {
        let (cos, sin) = ring_cos_sin(8);
        let c = CirculantMatrix::new((0..8).map(|i| (i as f64 * 0.37).sin() + 2.0).collect());
        // C cos must be a combination of cos and sin only (modes 1, 7)
        let y = c.matvec(&cos).unwrap();
        // least-squares fit onto span{cos,sin} must be exact
        let a: f64 = y.iter().zip(&cos).map(|(u, v)| u * v).sum::<f64>() / 4.0;
        let b: f64 = y.iter().zip(&sin).map(|(u, v)| u * v).sum::<f64>() / 4.0;
        for i in 0..8 {
            let fit = a * cos[i] + b * sin[i];
            assert!((y[i] - fit).abs() < 1e-12);
        }
    }

    #[test]
    fn deflated_solve_recovers_orthogonal_solution() {
        let m = 8;
        let (cos, sin) = ring_cos_sin(m);
        let c = CirculantMatrix::new((0..m).map(|i| if i == 0 { 3.0 } else { 1.0 / (1.0 + i as f64) }).collect());
        // build v orthogonal to cos/sin, then solve C w = C v
        let mut v: Vec<f64> = (0..m).map(|i| (i as f64).cos() + 0.3).collect();
        for dir in [&cos, &sin] {
            let d: f64 = v.iter().zip(dir.iter()).map(|(a, b)| a * b).sum::<f64>() / (m as f64 / 2.0);
            for (vi, di) in v.iter_mut().zip(dir.iter()) {
                *vi -= d * di;
            }
        }
        let rhs = c.matvec(&v).unwrap();
        let w = c.solve_deflated(&rhs, &[cos.clone(), sin.clone()]).unwrap();
        for (a, b) in w.iter().zip(&v) {
            assert!((a - b).abs() < 1e-11);
        }
        // zero rhs -> zero solution
        let w = c.solve_deflated(&vec![0.0; m], &[cos.clone(), sin.clone()]).unwrap();
        assert!(w.iter().all(|x| x.abs() < 1e-14));
        // non-orthogonal rhs is rejected with the violating product
        let err = c.solve_deflated(&cos.clone(), &[cos, sin]);
        assert!(matches!(err, Err(Error::DeflationConsistency { .. })));
    }

    #[test]
    fn contraction_decouples_at_zero_gamma() {
        let k = 8;
        let (cos, sin) = ring_cos_sin(k);
        let c = CirculantMatrix::new((0..k).map(|i| if i == 0 { 2.0 } else { 0.1 }).collect());
        let mut r: Vec<f64> = (0..k).map(|i| (0.7 * i as f64).sin()).collect();
        for dir in [&cos, &sin] {
            let d: f64 = r.iter().zip(dir.iter()).map(|(a, b)| a * b).sum::<f64>() / (k as f64 / 2.0);
            for (vi, di) in r.iter_mut().zip(dir.iter()) {
                *vi -= d * di;
            }
        }
        let sys = BlockInteractionSystem {
            hbar: c.clone(),
            hhat: c.clone(),
            gamma: 0.0,
            rbar: r.clone(),
            rhat: r.clone(),
        };
        let sol = solve_block_contraction(&sys, 1e-14, 10).unwrap();
        assert_eq!(sol.iterations, 1); // decoupled: one sweep solves exactly
        // symmetric system: wbar = what
        for (a, b) in sol.wbar.iter().zip(&sol.what) {
            assert!((a - b).abs() < 1e-13);
        }
        let direct = c.solve_deflated(&r, &[cos, sin]).unwrap();
        for (a, b) in sol.wbar.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
