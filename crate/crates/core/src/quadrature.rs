//! Integration over R^n adapted to two-ring bubble concentration, plus the
//! two weighted norms used by the error analysis.
//!
//! Region layout:
//!   * one exact ball per bubble ("patch"), integrated in rescaled
//!     coordinates y = ξ_j + μ z over |z| <= ᾱ/(μk) (resp. α̂/(λh));
//!   * the complement, integrated as the unit ball plus its Kelvin-folded
//!     image (each node at radius r also contributes the point at 1/r with
//!     the inversion Jacobian), in torus-adapted spherical coordinates;
//!   * a C³ radial partition of unity inside each patch ball (blend between
//!     half radius and full radius) splits any global integrand into
//!     per-region pieces that are smooth on their rule's domain, so no rule
//!     ever integrates across a sharp mask.
//!
//! Region bookkeeping is exact: patch = (blended ball part) + (annulus
//! rest), exterior = (blended complement) − Σ (annulus rests), so the
//! per-region values add up to the global one by construction.

use rayon::prelude::*;

use crate::bubble::{dist_sq, norm_sq};
use crate::config::TowerConfiguration;
use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Tunable parameters; `SchemeParams::default_for(n)` gives the defaults
/// used by the command-line tools.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeParams {
    /// Weighted-norm exponent, n/2 < q < n.
    pub q: f64,
    /// Ring-1 patch radius factor: patch radius = alpha_bar / k.
    pub alpha_bar: f64,
    /// Ring-2 patch radius factor: patch radius = alpha_hat / h.
    pub alpha_hat: f64,
    /// Target relative error.
    pub rel_tol: f64,
    /// Gauss points per radial/angular panel at the coarsest level.
    pub radial_nodes: usize,
    /// Baseline angular counts at the coarsest level.
    pub angular_degree: usize,
    /// Maximum refinement level (each level doubles every 1-D count).
    pub max_refine: usize,
}

impl Default for SchemeParams {
    fn default() -> Self {
        Self::default_for(4)
    }
}

impl SchemeParams {
    pub fn default_for(n: usize) -> Self {
        Self {
            // midpoint of the admissible interval (n/2, n); 3 when n = 4
            q: 0.75 * n as f64,
            alpha_bar: 1.0,
            alpha_hat: 1.0,
            rel_tol: 1e-6,
            radial_nodes: 4,
            angular_degree: 10,
            max_refine: 2,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.q > n as f64 / 2.0 && self.q < n as f64) {
            return Err(Error::InvalidParameter(format!(
                "q must lie in (n/2, n) = ({}, {}), got {}",
                n as f64 / 2.0,
                n,
                self.q
            )));
        }
        if !(self.alpha_bar > 0.0 && self.alpha_hat > 0.0) {
            return Err(Error::InvalidParameter("patch radius factors must be positive".into()));
        }
        if self.radial_nodes < 2 || self.angular_degree < 4 {
            return Err(Error::InvalidParameter("node counts too small".into()));
        }
        Ok(())
    }
}

/// One bubble site as the quadrature sees it.
#[derive(Debug, Clone)]
pub struct Site {
    pub center: Vec<f64>,
    pub scale: f64,
    /// patch radius in original coordinates
    pub radius: f64,
    /// patch radius in rescaled coordinates, radius/scale
    pub rho: f64,
    pub ring1: bool,
}

/// Disjoint regions used for norm reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    All,
    Exterior,
    Ring1Patch(usize),
    Ring2Patch(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub err_est: f64,
    pub converged: bool,
    pub nodes: u64,
}

/// The site blend is 1 inside BLEND_INNER × (patch radius) and 0 outside
/// BLEND_EXT × (patch radius); the patch rule integrates out to the outer
/// knot so the base rule never sees structure sharper than the patch scale.
const BLEND_INNER: f64 = 0.8;
const BLEND_EXT: f64 = 2.2;

/// C³ step in s = |y-c|/radius: 1 for s <= 0.8, 0 for s >= 2.2
/// (35x⁴-84x⁵+70x⁶-20x⁷ in between).
#[inline]
pub fn blend(s: f64) -> f64 {
    if s <= BLEND_INNER {
        1.0
    } else if s >= BLEND_EXT {
        0.0
    } else {
        let x = (s - BLEND_INNER) / (BLEND_EXT - BLEND_INNER);
        let x2 = x * x;
        1.0 - x2 * x2 * (35.0 - 84.0 * x + 70.0 * x2 - 20.0 * x2 * x)
    }
}

/// Radial–spherical product scheme bound to one configuration.
#[derive(Debug, Clone)]
pub struct QuadratureScheme {
    pub config: TowerConfiguration,
    pub params: SchemeParams,
    sites: Vec<Site>,
}

impl QuadratureScheme {
    pub fn new(config: &TowerConfiguration, params: SchemeParams) -> Result<Self> {
        params.validate(config.n)?;
        let rbar = params.alpha_bar / config.k as f64;
        let rhat = params.alpha_hat / config.h as f64;
        let mut sites = Vec::with_capacity(config.k + config.h);
        for j in 0..config.k {
            sites.push(Site {
                center: config.xi[j].clone(),
                scale: config.mu,
                radius: rbar,
                rho: rbar / config.mu,
                ring1: true,
            });
        }
        for l in 0..config.h {
            sites.push(Site {
                center: config.eta[l].clone(),
                scale: config.lambda,
                radius: rhat,
                rho: rhat / config.lambda,
                ring1: false,
            });
        }
        // patch balls must be pairwise disjoint for the partition of unity
        for i in 0..sites.len() {
            for j in i + 1..sites.len() {
                let d = dist_sq(&sites[i].center, &sites[j].center).sqrt();
                if d <= BLEND_EXT * (sites[i].radius + sites[j].radius) {
                    return Err(Error::InvalidParameter(format!(
                        "patch balls {i} and {j} overlap (separation {d:.3e}); reduce alpha_bar/alpha_hat"
                    )));
                }
            }
        }
        Ok(Self { config: config.clone(), params, sites })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site_index(&self, region: Region) -> Option<usize> {
        match region {
            Region::Ring1Patch(j) => Some(j),
            Region::Ring2Patch(l) => Some(self.config.k + l),
            _ => None,
        }
    }

    /// χ₀(y) = 1 - Σ site blends; exactly 1 outside all patch balls.
    pub fn blend_complement(&self, y: &[f64]) -> f64 {
        let r2 = norm_sq(y);
        let rho12 = (y[0] * y[0] + y[1] * y[1]).sqrt();
        let rho34 = (y[2] * y[2] + y[3] * y[3]).sqrt();
        let s1 = self.config.ring1_radius();
        let s2 = self.config.ring2_radius();
        let rbar = self.sites[0].radius;
        let rhat = self.sites[self.config.k].radius;
        // distance to the full ring circle lower-bounds the site distance
        let e2 = BLEND_EXT * BLEND_EXT;
        let near1 = r2 + s1 * s1 - 2.0 * s1 * rho12 < e2 * rbar * rbar;
        let near2 = r2 + s2 * s2 - 2.0 * s2 * rho34 < e2 * rhat * rhat;
        if !near1 && !near2 {
            return 1.0;
        }
        let range = if near1 { 0..self.config.k } else { self.config.k..self.sites.len() };
        for s in &self.sites[range] {
            let d2 = dist_sq(y, &s.center);
            if d2 < e2 * s.radius * s.radius {
                return 1.0 - blend(d2.sqrt() / s.radius); // supports are disjoint
            }
        }
        1.0
    }

    // ------------------------------------------------------------------
    // node layout
    // ------------------------------------------------------------------

    fn counts(&self, level: usize) -> LevelCounts {
        // gentle ladder: Gauss order +3 per level, angular counts ×1.5
        let ang = |base: usize| -> usize {
            let mut v = base as f64;
            for _ in 0..level {
                v *= 1.5;
            }
            even(v.round() as usize)
        };
        let p = &self.params;
        let k = self.config.k;
        let h = self.config.h;
        LevelCounts {
            gauss: (p.radial_nodes + 3 * level).min(40),
            theta_coarse: ang((2 * k + 12).max(p.angular_degree)),
            phi_coarse: ang((2 * h + 12).max(p.angular_degree)),
            theta_fine: ang(8 * k),
            phi_fine: ang(8 * h),
            patch_ang: ang(p.angular_degree.max(8)),
        }
    }

    fn base_cells(&self, level: usize, symmetric: bool) -> Vec<Cell> {
        let c = self.counts(level);
        let k = self.config.k as f64;
        let h = self.config.h as f64;
        let rbar = self.sites[0].radius;
        let rhat = self.sites[self.config.k].radius;
        let half_pi = std::f64::consts::FRAC_PI_2;
        let two_pi = 2.0 * std::f64::consts::PI;

        // radial panels: coarse inside, fine across the ring shell near r = 1
        let rt = rbar.max(rhat);
        let shell = (1.0 - 3.2 * rt).max(0.5);
        let mut r_breaks = vec![0.0, 0.35, shell];
        for b in [1.0 - 1.8 * rt, 1.0 - 0.8 * rt, 1.0] {
            r_breaks.push(b);
        }
        let r_breaks = clean_breaks(r_breaks);
        let fine_r_from = shell - 1e-12;

        // torus-angle panels: tubes around a = 0 (ring 1) and a = π/2 (ring 2)
        let a1 = (3.0 * rbar).min(half_pi * 0.45);
        let a2 = (3.0 * rhat).min(half_pi * 0.45);
        let mut a_breaks = vec![0.0, 0.9 * rbar, 1.8 * rbar, a1];
        a_breaks.push(0.5 * (a1 + half_pi - a2));
        for b in [half_pi - a2, half_pi - 1.8 * rhat, half_pi - 0.9 * rhat, half_pi] {
            a_breaks.push(b);
        }
        let a_breaks = clean_breaks(a_breaks);

        let (theta_range, theta_mult, tc, tf) = if symmetric {
            let m = ((c.theta_coarse as f64 / k).ceil() as usize).max(6);
            let mf = ((c.theta_fine as f64 / k).ceil() as usize).max(6);
            (two_pi / k, k, m, mf)
        } else {
            (two_pi, 1.0, c.theta_coarse, c.theta_fine)
        };
        let (phi_range, phi_mult, pc, pf) = if symmetric {
            let m = ((c.phi_coarse as f64 / h).ceil() as usize).max(6);
            let mf = ((c.phi_fine as f64 / h).ceil() as usize).max(6);
            (two_pi / h, h, m, mf)
        } else {
            (two_pi, 1.0, c.phi_coarse, c.phi_fine)
        };

        let mut cells = Vec::new();
        for w in r_breaks.windows(2) {
            let in_shell = w[1] > fine_r_from;
            for aw in a_breaks.windows(2) {
                let near_ring1 = aw[0] < a1 - 1e-12;
                let near_ring2 = aw[1] > half_pi - a2 + 1e-12;
                cells.push(Cell {
                    kind: CellKind::BaseTail,
                    r_lo: w[0],
                    r_hi: w[1],
                    a_lo: aw[0],
                    a_hi: aw[1],
                    n_theta: if in_shell && near_ring1 { tf } else { tc },
                    n_phi: if in_shell && near_ring2 { pf } else { pc },
                    gauss: c.gauss,
                    theta_range,
                    phi_range,
                    angular_mult: theta_mult * phi_mult,
                    site: usize::MAX,
                });
            }
        }
        cells
    }

    fn patch_cells(&self, site: usize, level: usize) -> Vec<Cell> {
        let c = self.counts(level);
        let s = &self.sites[site];
        let rho = s.rho;
        // geometric radial panels with exact breaks at the region boundary
        // rho and the blend knots 0.8 rho, 2.2 rho
        let mut breaks = vec![0.0, 0.5, 1.0];
        let mut b = 2.0;
        while b < BLEND_INNER * rho {
            breaks.push(b);
            b *= 2.0;
        }
        breaks.push(BLEND_INNER * rho);
        breaks.push(rho);
        breaks.push(1.5 * rho);
        breaks.push(BLEND_EXT * rho);
        let breaks = clean_breaks(breaks);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut cells = Vec::new();
        for w in breaks.windows(2) {
            for aw in [[0.0, 0.5 * half_pi], [0.5 * half_pi, half_pi]] {
                cells.push(Cell {
                    kind: CellKind::Patch,
                    r_lo: w[0],
                    r_hi: w[1],
                    a_lo: aw[0],
                    a_hi: aw[1],
                    n_theta: c.patch_ang,
                    n_phi: c.patch_ang,
                    gauss: c.gauss,
                    theta_range: two_pi,
                    phi_range: two_pi,
                    angular_mult: 1.0,
                    site,
                });
            }
        }
        cells
    }

    // ------------------------------------------------------------------
    // evaluation
    // ------------------------------------------------------------------

    fn pass(&self, m: usize, f: &(dyn Fn(&[f64], &mut [f64]) + Sync), level: usize, symmetric: bool) -> Pass {
        let base = self.base_cells(level, symmetric);
        let complement = self.eval_cells(&base, m, f, BlendMode::Complement);
        let mut per_site: Vec<SitePieces> = Vec::with_capacity(self.sites.len());
        let nsites = self.sites.len();
        let k = self.config.k;
        let mut nodes = complement.nodes;
        let mut idx = 0;
        while idx < nsites {
            let cells = self.patch_cells(idx, level);
            let pieces = self.eval_patch_tri(&cells, m, f);
            nodes += pieces.nodes;
            if symmetric {
                // ring-invariant integrand: every patch of the ring is equal
                let copies = if idx < k { k } else { nsites - k };
                for _ in 0..copies {
                    per_site.push(pieces.clone());
                }
                idx += copies;
            } else {
                per_site.push(pieces);
                idx += 1;
            }
        }
        Pass { complement: complement.values, per_site, nodes }
    }

    /// One sweep over a patch's cells producing the three pieces
    /// (∫_{|z|<=ρ} f χ̄, ∫_{|z|<=ρ} f (1-χ̄), ∫_{ρ<|z|} f χ̄).
    fn eval_patch_tri(&self, cells: &[Cell], m: usize, f: &(dyn Fn(&[f64], &mut [f64]) + Sync)) -> SitePieces {
        let partials: Vec<(Vec<f64>, u64)> =
            cells.par_iter().map(|cell| self.eval_patch_cell_tri(cell, m, f)).collect();
        let all = pairwise_sum(&partials, 3 * m);
        let nodes = partials.iter().map(|p| p.1).sum();
        SitePieces {
            ball: all[0..m].to_vec(),
            annulus: all[m..2 * m].to_vec(),
            ext: all[2 * m..3 * m].to_vec(),
            nodes,
        }
    }

    fn eval_patch_cell_tri(&self, cell: &Cell, m: usize, f: &(dyn Fn(&[f64], &mut [f64]) + Sync)) -> (Vec<f64>, u64) {
        let n = self.config.n;
        let s = &self.sites[cell.site];
        let (gr, gw) = gauss_panel(cell.r_lo, cell.r_hi, cell.gauss);
        let (ga, gaw) = gauss_panel(cell.a_lo, cell.a_hi, cell.gauss);
        let extra = extra_axis_nodes(n, cell.gauss, 1.0);
        let mut acc = vec![0.0; 3 * m];
        let mut vals = vec![0.0; m];
        let mut point = vec![0.0; n];
        let mut nodes = 0u64;
        let dth = cell.theta_range / cell.n_theta as f64;
        let dph = cell.phi_range / cell.n_phi as f64;
        let nm1 = (n - 1) as i32;
        let scale_pow = s.scale.powi(n as i32);
        for (ri, &r) in gr.iter().enumerate() {
            let chi = blend(r / s.rho);
            let inside = r <= s.rho + 1e-12;
            // pieces present at this radius: ball (χ̄, inside), annulus
            // (1-χ̄, inside), ext shell (χ̄, outside)
            let w_ball = if inside { chi } else { 0.0 };
            let w_ann = if inside { 1.0 - chi } else { 0.0 };
            let w_ext = if inside { 0.0 } else { chi };
            if w_ball == 0.0 && w_ann == 0.0 && w_ext == 0.0 {
                continue;
            }
            for (ai, &a) in ga.iter().enumerate() {
                let (sa, ca) = a.sin_cos();
                let w_ra = gw[ri] * gaw[ai] * ca * sa * r.powi(nm1) * scale_pow * dth * dph;
                for it in 0..cell.n_theta {
                    let th = (it as f64 + 0.5) * dth;
                    let (sth, cth) = th.sin_cos();
                    for ip in 0..cell.n_phi {
                        let ph = (ip as f64 + 0.5) * dph;
                        let (sph, cph) = ph.sin_cos();
                        for (eb, ew) in &extra {
                            let call: f64 = eb.iter().map(|b| b.cos()).product();
                            point[0] = s.center[0] + s.scale * r * call * ca * cth;
                            point[1] = s.center[1] + s.scale * r * call * ca * sth;
                            point[2] = s.center[2] + s.scale * r * call * sa * cph;
                            point[3] = s.center[3] + s.scale * r * call * sa * sph;
                            for (i, &b) in eb.iter().enumerate() {
                                let tail_cos: f64 = eb[i + 1..].iter().map(|t| t.cos()).product();
                                point[4 + i] = s.center[4 + i] + s.scale * r * b.sin() * tail_cos;
                            }
                            let w = w_ra * ew;
                            f(&point, &mut vals);
                            for (c, v) in vals.iter().enumerate() {
                                acc[c] += w * w_ball * v;
                                acc[m + c] += w * w_ann * v;
                                acc[2 * m + c] += w * w_ext * v;
                            }
                            nodes += 1;
                        }
                    }
                }
            }
        }
        (acc, nodes)
    }

    fn eval_cells(&self, cells: &[Cell], m: usize, f: &(dyn Fn(&[f64], &mut [f64]) + Sync), mode: BlendMode) -> CellSum {
        let partials: Vec<(Vec<f64>, u64)> =
            cells.par_iter().map(|cell| self.eval_one_cell(cell, m, f, mode)).collect();
        let mut values = pairwise_sum(&partials, m);
        let nodes = partials.iter().map(|p| p.1).sum();
        if values.iter().any(|v| !v.is_finite()) {
            values.iter_mut().for_each(|v| {
                if !v.is_finite() {
                    *v = f64::NAN;
                }
            });
        }
        CellSum { values, nodes }
    }

    fn eval_one_cell(
        &self,
        cell: &Cell,
        m: usize,
        f: &(dyn Fn(&[f64], &mut [f64]) + Sync),
        mode: BlendMode,
    ) -> (Vec<f64>, u64) {
        let n = self.config.n;
        let (gr, gw) = gauss_panel(cell.r_lo, cell.r_hi, cell.gauss);
        let (ga, gaw) = gauss_panel(cell.a_lo, cell.a_hi, cell.gauss);
        let extra = extra_axis_nodes(n, cell.gauss, self.extra_scale());
        let mut acc = vec![0.0; m];
        let mut vals = vec![0.0; m];
        let mut omega = vec![0.0; n];
        let mut point = vec![0.0; n];
        let mut nodes = 0u64;
        let dth = cell.theta_range / cell.n_theta as f64;
        let dph = cell.phi_range / cell.n_phi as f64;
        let nm1 = (n - 1) as i32;

        for (ri, &r) in gr.iter().enumerate() {
            for (ai, &a) in ga.iter().enumerate() {
                let (sa, ca) = a.sin_cos();
                let w_ra = gw[ri] * gaw[ai] * ca * sa * cell.angular_mult * dth * dph;
                for it in 0..cell.n_theta {
                    let th = (it as f64 + 0.5) * dth;
                    let (sth, cth) = th.sin_cos();
                    for ip in 0..cell.n_phi {
                        let ph = (ip as f64 + 0.5) * dph;
                        let (sph, cph) = ph.sin_cos();
                        for (eb, ew) in &extra {
                            let call: f64 = eb.iter().map(|b| b.cos()).product();
                            omega[0] = call * ca * cth;
                            omega[1] = call * ca * sth;
                            omega[2] = call * sa * cph;
                            omega[3] = call * sa * sph;
                            for (i, &b) in eb.iter().enumerate() {
                                let tail_cos: f64 = eb[i + 1..].iter().map(|t| t.cos()).product();
                                omega[4 + i] = b.sin() * tail_cos;
                            }
                            let w_ang = w_ra * ew;
                            debug_assert!(cell.kind == CellKind::BaseTail && mode == BlendMode::Complement);
                            for i in 0..n {
                                point[i] = r * omega[i];
                            }
                            let chi = self.blend_complement(&point);
                            if chi != 0.0 {
                                let w = w_ang * r.powi(nm1) * chi;
                                f(&point, &mut vals);
                                axpy(&mut acc, w, &vals);
                                nodes += 1;
                            }
                            if r > 1e-300 {
                                for i in 0..n {
                                    point[i] = omega[i] / r;
                                }
                                let chi = self.blend_complement(&point);
                                if chi != 0.0 {
                                    let w = w_ang * r.powi(-(n as i32) - 1) * chi;
                                    f(&point, &mut vals);
                                    axpy(&mut acc, w, &vals);
                                    nodes += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        (acc, nodes)
    }

    fn extra_scale(&self) -> f64 {
        self.sites[0].radius.max(self.sites[self.config.k].radius)
    }

    // ------------------------------------------------------------------
    // public integration API
    // ------------------------------------------------------------------

    /// Integrate a scalar field over a region.
    pub fn integrate(&self, f: &ScalarField, region: Region) -> Result<QuadResult> {
        if region == Region::All && f.decay_exponent() <= self.config.n as f64 {
            return Err(Error::NonIntegrableDecay { decay: f.decay_exponent(), n: self.config.n });
        }
        let g = f.clone();
        let sym = f.ring_invariant();
        let r = self.integrate_many_impl(1, &move |y: &[f64], out: &mut [f64]| out[0] = g.eval(y), &[region], sym)?;
        Ok(r[0])
    }

    /// Integrate a plain closure over a region (caller vouches for decay,
    /// and for ring invariance if `symmetric` is set).
    pub fn integrate_fn<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F, region: Region, symmetric: bool) -> Result<QuadResult> {
        let r = self.integrate_many_impl(1, &move |y: &[f64], out: &mut [f64]| out[0] = f(y), &[region], symmetric)?;
        Ok(r[0])
    }

    /// Batched integration: one node sweep evaluates `m` integrand
    /// components, each reported over every requested region.
    ///
    /// Returned layout: `result[c * regions.len() + r]`.
    pub fn integrate_batch<F>(&self, m: usize, f: F, regions: &[Region], symmetric: bool) -> Result<Vec<QuadResult>>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        self.integrate_many_impl(m, &f, regions, symmetric)
    }

    fn integrate_many_impl(
        &self,
        m: usize,
        f: &(dyn Fn(&[f64], &mut [f64]) + Sync),
        regions: &[Region],
        symmetric: bool,
    ) -> Result<Vec<QuadResult>> {
        let mut prev: Option<Vec<f64>> = None;
        let mut total_nodes = 0u64;
        let mut level = 0usize;
        loop {
            let pass = self.pass(m, f, level, symmetric);
            total_nodes += pass.nodes;
            let cur = assemble_regions(&pass, regions, m, self.config.k);
            if let Some(p) = &prev {
                let scale = cur.iter().fold(0.0f64, |s, v| s.max(v.abs()));
                let mut results = Vec::with_capacity(cur.len());
                let mut all_ok = true;
                for (v, pv) in cur.iter().zip(p.iter()) {
                    let err = (v - pv).abs();
                    let ok = err <= self.params.rel_tol * v.abs().max(1e-10 * scale).max(f64::MIN_POSITIVE);
                    all_ok &= ok;
                    results.push(QuadResult { value: *v, err_est: err, converged: ok, nodes: total_nodes });
                }
                if all_ok || level >= self.params.max_refine {
                    return Ok(results);
                }
            }
            prev = Some(cur);
            level += 1;
        }
    }

    // ------------------------------------------------------------------
    // weighted norms
    // ------------------------------------------------------------------

    /// ‖f‖_* = sup (1+|y|^{n-2}) |f(y)|, a sampled maximum over structured
    /// grids (coarse global + per-patch + Kelvin-mapped far field) whose
    /// density doubles until the value moves by less than 0.1%.
    /// Returns (value, maximizing point).
    pub fn norm_star(&self, f: &ScalarField) -> (f64, Vec<f64>) {
        let n = self.config.n;
        let mut best: (f64, Vec<f64>) = (0.0, vec![0.0; n]);
        for level in 0.. {
            let mut cand: (f64, Vec<f64>) = (0.0, vec![0.0; n]);
            {
                let mut consider = |y: &[f64]| {
                    let w = 1.0 + crate::bubble::pow_half_nm2(norm_sq(y), n);
                    let v = w * f.eval(y).abs();
                    if v > cand.0 {
                        cand = (v, y.to_vec());
                    }
                };
                let extra_tilts: Vec<f64> = if n > 4 { vec![-0.9, -0.45, 0.0, 0.45, 0.9] } else { vec![0.0] };
                let nr = 10 << level;
                let na = 6 << level;
                let nt = (2 * self.config.k.max(self.config.h) + 8) << level;
                for ir in 1..=nr {
                    let r = 2.0 * ir as f64 / nr as f64;
                    for ia in 0..=na {
                        let a = std::f64::consts::FRAC_PI_2 * ia as f64 / na as f64;
                        for it in 0..nt {
                            let th = 2.0 * std::f64::consts::PI * it as f64 / nt as f64;
                            for ip in 0..nt {
                                let ph = 2.0 * std::f64::consts::PI * ip as f64 / nt as f64;
                                for &b in &extra_tilts {
                                    let mut y = vec![0.0; n];
                                    let cb = b.cos();
                                    y[0] = r * cb * a.cos() * th.cos();
                                    y[1] = r * cb * a.cos() * th.sin();
                                    y[2] = r * cb * a.sin() * ph.cos();
                                    y[3] = r * cb * a.sin() * ph.sin();
                                    if n > 4 {
                                        y[4] = r * b.sin();
                                    }
                                    consider(&y);
                                    // Kelvin-mapped sample covering |y| > 2
                                    let r2 = norm_sq(&y);
                                    if r2 > 0.25 {
                                        let yk: Vec<f64> = y.iter().map(|v| 4.0 * v / r2).collect();
                                        consider(&yk);
                                    }
                                }
                            }
                        }
                    }
                }
                // refined grids around each bubble core
                for s in &self.sites {
                    let nr = 16 << level;
                    let nt = 8 << level;
                    for ir in 0..=nr {
                        let rr = s.rho * (ir as f64 / nr as f64).powi(2);
                        for it in 0..nt {
                            let th = 2.0 * std::f64::consts::PI * it as f64 / nt as f64;
                            for iu in 0..nt {
                                let ph = 2.0 * std::f64::consts::PI * iu as f64 / nt as f64;
                                for ia in 0..=4 {
                                    let a = std::f64::consts::FRAC_PI_2 * ia as f64 / 4.0;
                                    let mut y = s.center.clone();
                                    y[0] += s.scale * rr * a.cos() * th.cos();
                                    y[1] += s.scale * rr * a.cos() * th.sin();
                                    y[2] += s.scale * rr * a.sin() * ph.cos();
                                    y[3] += s.scale * rr * a.sin() * ph.sin();
                                    consider(&y);
                                }
                            }
                        }
                    }
                }
            }
            let moved = (cand.0 - best.0).abs() > 1e-3 * cand.0.abs().max(f64::MIN_POSITIVE);
            if cand.0 > best.0 {
                best = cand;
            }
            if !moved || level >= 2 {
                break;
            }
        }
        best
    }

    /// ‖f‖_** = ‖(1+|y|)^{n+2-2n/q} f‖_{L^q(region)}.
    pub fn norm_starstar(&self, f: &ScalarField, q: f64, region: Option<Region>) -> Result<QuadResult> {
        let n = self.config.n;
        if !(q > n as f64 / 2.0 && q < n as f64) {
            return Err(Error::InvalidParameter(format!("q = {q} outside (n/2, n)")));
        }
        let w_exp = n as f64 + 2.0 - 2.0 * n as f64 / q;
        let g = f.clone();
        let sym = f.ring_invariant();
        let region = region.unwrap_or(Region::All);
        let r = self.integrate_fn(
            move |y: &[f64]| {
                let w = (1.0 + norm_sq(y).sqrt()).powf(w_exp);
                (w * g.eval(y).abs()).powf(q)
            },
            region,
            sym,
        )?;
        let value = r.value.max(0.0).powf(1.0 / q);
        let err_est = if r.value > 0.0 { value * r.err_est / (q * r.value) } else { r.err_est };
        Ok(QuadResult { value, err_est, converged: r.converged, nodes: r.nodes })
    }

    /// ∫_{|z| < rho_site} g(z) dz in rescaled patch coordinates; used for the
    /// interior norms of the rescaled error.
    pub fn integrate_patch_rescaled<F: Fn(&[f64]) -> f64 + Sync>(&self, site: usize, g: F) -> Result<QuadResult> {
        let n = self.config.n;
        let mut prev: Option<f64> = None;
        let mut total_nodes = 0u64;
        for level in 0.. {
            let cells: Vec<Cell> = self
                .patch_cells(site, level)
                .into_iter()
                .filter(|c| c.r_hi <= self.sites[site].rho + 1e-9)
                .collect();
            let partials: Vec<(Vec<f64>, u64)> = cells
                .par_iter()
                .map(|cell| self.eval_rescaled_cell(cell, &g, n))
                .collect();
            let v = pairwise_sum(&partials, 1)[0];
            total_nodes += partials.iter().map(|p| p.1).sum::<u64>();
            if let Some(p) = prev {
                let err = (v - p).abs();
                let ok = err <= self.params.rel_tol * v.abs().max(f64::MIN_POSITIVE);
                if ok || level >= self.params.max_refine {
                    return Ok(QuadResult { value: v, err_est: err, converged: ok, nodes: total_nodes });
                }
            }
            prev = Some(v);
        }
        unreachable!()
    }

    fn eval_rescaled_cell<F: Fn(&[f64]) -> f64 + Sync>(&self, cell: &Cell, g: &F, n: usize) -> (Vec<f64>, u64) {
        let (gr, gw) = gauss_panel(cell.r_lo, cell.r_hi, cell.gauss);
        let (ga, gaw) = gauss_panel(cell.a_lo, cell.a_hi, cell.gauss);
        let extra = extra_axis_nodes(n, cell.gauss, 1.0);
        let mut acc = 0.0;
        let mut z = vec![0.0; n];
        let mut nodes = 0u64;
        let dth = cell.theta_range / cell.n_theta as f64;
        let dph = cell.phi_range / cell.n_phi as f64;
        for (ri, &r) in gr.iter().enumerate() {
            for (ai, &a) in ga.iter().enumerate() {
                let (sa, ca) = a.sin_cos();
                let w_ra = gw[ri] * gaw[ai] * ca * sa * r.powi((n - 1) as i32) * dth * dph;
                for it in 0..cell.n_theta {
                    let th = (it as f64 + 0.5) * dth;
                    let (sth, cth) = th.sin_cos();
                    for ip in 0..cell.n_phi {
                        let ph = (ip as f64 + 0.5) * dph;
                        let (sph, cph) = ph.sin_cos();
                        for (eb, ew) in &extra {
                            let call: f64 = eb.iter().map(|b| b.cos()).product();
                            z[0] = r * call * ca * cth;
                            z[1] = r * call * ca * sth;
                            z[2] = r * call * sa * cph;
                            z[3] = r * call * sa * sph;
                            for (i, &b) in eb.iter().enumerate() {
                                let tail_cos: f64 = eb[i + 1..].iter().map(|t| t.cos()).product();
                                z[4 + i] = r * b.sin() * tail_cos;
                            }
                            acc += w_ra * ew * g(&z);
                            nodes += 1;
                        }
                    }
                }
            }
        }
        (vec![acc], nodes)
    }
}

// ----------------------------------------------------------------------
// internals
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CellKind {
    BaseTail,
    Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlendMode {
    Complement,
}

#[derive(Debug, Clone)]
struct Cell {
    kind: CellKind,
    r_lo: f64,
    r_hi: f64,
    a_lo: f64,
    a_hi: f64,
    n_theta: usize,
    n_phi: usize,
    gauss: usize,
    theta_range: f64,
    phi_range: f64,
    angular_mult: f64,
    site: usize,
}

struct LevelCounts {
    gauss: usize,
    theta_coarse: usize,
    phi_coarse: usize,
    theta_fine: usize,
    phi_fine: usize,
    patch_ang: usize,
}

struct CellSum {
    values: Vec<f64>,
    nodes: u64,
}

#[derive(Clone)]
struct SitePieces {
    ball: Vec<f64>,
    annulus: Vec<f64>,
    ext: Vec<f64>,
    nodes: u64,
}

struct Pass {
    complement: Vec<f64>,
    per_site: Vec<SitePieces>,
    nodes: u64,
}

#[inline]
fn axpy(acc: &mut [f64], w: f64, vals: &[f64]) {
    for (a, v) in acc.iter_mut().zip(vals) {
        *a += w * v;
    }
}

/// Deterministic pairwise reduction in slice order.
fn pairwise_sum(partials: &[(Vec<f64>, u64)], m: usize) -> Vec<f64> {
    fn rec(parts: &[(Vec<f64>, u64)], m: usize) -> Vec<f64> {
        match parts.len() {
            0 => vec![0.0; m],
            1 => parts[0].0.clone(),
            len => {
                let (a, b) = parts.split_at(len / 2);
                let mut x = rec(a, m);
                let y = rec(b, m);
                for (xi, yi) in x.iter_mut().zip(y) {
                    *xi += yi;
                }
                x
            }
        }
    }
    rec(partials, m)
}

fn assemble_regions(pass: &Pass, regions: &[Region], m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * regions.len()];
    for c in 0..m {
        for (ri, region) in regions.iter().enumerate() {
            let v = match *region {
                Region::All => {
                    let mut v = pass.complement[c];
                    for p in &pass.per_site {
                        v += p.ball[c] + p.ext[c];
                    }
                    v
                }
                Region::Exterior => {
                    let mut v = pass.complement[c];
                    for p in &pass.per_site {
                        v += p.ext[c] - p.annulus[c];
                    }
                    v
                }
                Region::Ring1Patch(j) => pass.per_site[j].ball[c] + pass.per_site[j].annulus[c],
                Region::Ring2Patch(l) => pass.per_site[k + l].ball[c] + pass.per_site[k + l].annulus[c],
            };
            out[c * regions.len() + ri] = v;
        }
    }
    out
}

fn even(x: usize) -> usize {
    x + x % 2
}

fn clean_breaks(mut b: Vec<f64>) -> Vec<f64> {
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut out: Vec<f64> = Vec::with_capacity(b.len());
    for v in b {
        if out.last().map_or(true, |&l| v - l > 1e-9) {
            out.push(v);
        }
    }
    out
}

/// Gauss–Legendre nodes and weights on [lo, hi]; orders are cached.
pub fn gauss_panel(lo: f64, hi: f64, g: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_unit(g);
    let c = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    (x.iter().map(|&t| mid + c * t).collect(), w.iter().map(|&t| t * c).collect())
}

fn gauss_unit(g: usize) -> (Vec<f64>, Vec<f64>) {
    use std::collections::HashMap;
    use std::sync::Mutex;
    static CACHE: Mutex<Option<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = Mutex::new(None);
    let mut guard = CACHE.lock().unwrap();
    let map = guard.get_or_insert_with(HashMap::new);
    if let Some(v) = map.get(&g) {
        return v.clone();
    }
    let mut xs = vec![0.0; g];
    let mut ws = vec![0.0; g];
    for i in 0..g {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (g as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(g, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(g, x);
        xs[i] = -x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    xs.reverse();
    ws.reverse();
    map.insert(g, (xs.clone(), ws.clone()));
    (xs, ws)
}

fn legendre(g: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=g {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = g as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Node/weight products over the n-4 extra spherical axes. Axis i (building
/// S^{4+i} from S^{3+i}) carries weight cos^{3+i}(b), with graded panels
/// around b = 0 where the rings live.
fn extra_axis_nodes(n: usize, g: usize, fine_scale: f64) -> Vec<(Vec<f64>, f64)> {
    let e = n.saturating_sub(4);
    if e == 0 {
        return vec![(Vec::new(), 1.0)];
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut axes: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(e);
    for i in 0..e {
        let t = (4.0 * fine_scale).min(0.6);
        let breaks = clean_breaks(vec![-half_pi, -t, 0.0, t, half_pi]);
        let mut bs = Vec::new();
        let mut ws = Vec::new();
        let gp = (g / 2).max(3);
        for w in breaks.windows(2) {
            let (x, wt) = gauss_panel(w[0], w[1], gp);
            for (b, wv) in x.iter().zip(wt) {
                bs.push(*b);
                ws.push(wv * b.cos().powi(3 + i as i32));
            }
        }
        axes.push((bs, ws));
    }
    // cartesian product
    let mut prod: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for (bs, ws) in axes {
        let mut next = Vec::with_capacity(prod.len() * bs.len());
        for (pb, pw) in &prod {
            for (b, w) in bs.iter().zip(&ws) {
                let mut v = pb.clone();
                v.push(*b);
                next.push((v, pw * w));
            }
        }
        prod = next;
    }
    prod
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{TowerConfiguration, TowerParams};

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let (x, w) = gauss_panel(0.0, 1.0, 8);
        let v: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(9)).sum();
        assert!((v - 0.1).abs() < 1e-14);
        let v: f64 = w.iter().sum();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn blend_profile() {
        assert_eq!(blend(0.0), 1.0);
        assert_eq!(blend(0.5), 1.0);
        assert_eq!(blend(1.0), 0.0);
        assert!(blend(0.75) > 0.0 && blend(0.75) < 1.0);
        // C¹ at the knots: finite differences of slope vanish
        let d = 1e-6;
        assert!((blend(0.5 + d) - blend(0.5)).abs() < 1e-17 * 10.0 + 1e-12);
        assert!((blend(1.0 - d) - blend(1.0)).abs() < 1e-12);
    }

    #[test]
    fn scheme_rejects_bad_q() {
        let c = TowerConfiguration::new(TowerParams { n: 4, k: 8, h: 8, delta: 1.0, eps: 1.0 }).unwrap();
        let mut p = SchemeParams::default_for(4);
        p.q = 4.5;
        assert!(QuadratureScheme::new(&c, p).is_err());
    }

    #[test]
    fn partition_of_unity_is_exact() {
        let c = TowerConfiguration::new(TowerParams { n: 4, k: 8, h: 8, delta: 1.0, eps: 1.0 }).unwrap();
        let s = QuadratureScheme::new(&c, SchemeParams::default_for(4)).unwrap();
        // far from patches
        assert_eq!(s.blend_complement(&[0.3, 0.1, 0.0, 0.2]), 1.0);
        // at a bubble center
        assert_eq!(s.blend_complement(&c.xi[0].clone()), 0.0);
        // inside the blend transition
        let mut y = c.xi[0].clone();
        y[0] += 1.5 * s.sites()[0].radius;
        let v = s.blend_complement(&y);
        assert!(v > 0.0 && v < 1.0);
        // on the extended shell boundary and beyond: fully complement
        y[0] = c.xi[0][0] + 2.3 * s.sites()[0].radius;
        assert_eq!(s.blend_complement(&y), 1.0);
    }
}
