//! Two-ring geometry: k bubbles on a circle in the (y1,y2)-plane and h
//! bubbles on a circle in the (y3,y4)-plane, with scales tied to the
//! balancing parameters so every bubble is Kelvin-invariant.

use serde::{Deserialize, Serialize};

use crate::bubble::{dist_sq, BubbleParams};
use crate::error::{Error, Result};

/// Admissible box for the balancing parameters (δ, ε).
pub const PARAM_BOX: (f64, f64) = (0.1, 10.0);

/// Ring counts below this get a warning flag in reports; they are allowed
/// for oracle tests only.
pub const SMALL_RING_WARN: usize = 5;

/// The five primary inputs; everything else is derived.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TowerParams {
    pub n: usize,
    pub k: usize,
    pub h: usize,
    pub delta: f64,
    pub eps: f64,
}

/// Immutable two-ring configuration.
///
/// Invariants, exact by construction:
///   μ = δ^{2/(n-2)}/k²,  λ = ε^{2/(n-2)}/h²,
///   ξ_j = √(1-μ²)(cos θ̄_j, sin θ̄_j, 0, …),   θ̄_j = 2π(j-1)/k,
///   η_l = √(1-λ²)(0, 0, cos θ̂_l, sin θ̂_l, 0, …),  θ̂_l = 2π(l-1)/h,
/// so |ξ_j|² + μ² = 1 = |η_l|² + λ².
#[derive(Debug, Clone, Serialize)]
pub struct TowerConfiguration {
    pub n: usize,
    pub k: usize,
    pub h: usize,
    pub delta: f64,
    pub eps: f64,
    pub mu: f64,
    pub lambda: f64,
    pub theta_bar: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    /// k or h below the trusted range; carried into reports.
    pub small_ring_warning: bool,
}

impl TowerConfiguration {
    pub fn new(params: TowerParams) -> Result<Self> {
        let TowerParams { n, k, h, delta, eps } = params;
        if n < 4 {
            return Err(Error::InvalidParameter(format!("n must be >= 4, got {n}")));
        }
        if k < 3 || h < 3 {
            return Err(Error::InvalidParameter(format!(
                "ring counts must be >= 3, got k={k}, h={h}"
            )));
        }
        for (name, v) in [("delta", delta), ("eps", eps)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let exp = 2.0 / (n as f64 - 2.0);
        let mu = delta.powf(exp) / (k * k) as f64;
        let lambda = eps.powf(exp) / (h * h) as f64;
        if mu >= 1.0 || lambda >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "scales must stay below 1 (centers inside the unit sphere): mu={mu}, lambda={lambda}"
            )));
        }
        let s = (1.0 - mu * mu).sqrt();
        let t = (1.0 - lambda * lambda).sqrt();
        let theta_bar: Vec<f64> = (0..k).map(|j| 2.0 * std::f64::consts::PI * j as f64 / k as f64).collect();
        let theta_hat: Vec<f64> = (0..h).map(|l| 2.0 * std::f64::consts::PI * l as f64 / h as f64).collect();
        let xi = theta_bar
            .iter()
            .map(|&a| {
                let mut p = vec![0.0; n];
                p[0] = s * a.cos();
                p[1] = s * a.sin();
                p
            })
            .collect();
        let eta = theta_hat
            .iter()
            .map(|&a| {
                let mut p = vec![0.0; n];
                p[2] = t * a.cos();
                p[3] = t * a.sin();
                p
            })
            .collect();
        Ok(Self {
            n,
            k,
            h,
            delta,
            eps,
            mu,
            lambda,
            theta_bar,
            theta_hat,
            xi,
            eta,
            small_ring_warning: k < SMALL_RING_WARN || h < SMALL_RING_WARN,
        })
    }

    pub fn params(&self) -> TowerParams {
        TowerParams { n: self.n, k: self.k, h: self.h, delta: self.delta, eps: self.eps }
    }

    /// √(1-μ²), the ring-1 radius.
    pub fn ring1_radius(&self) -> f64 {
        (1.0 - self.mu * self.mu).sqrt()
    }
    /// √(1-λ²), the ring-2 radius.
    pub fn ring2_radius(&self) -> f64 {
        (1.0 - self.lambda * self.lambda).sqrt()
    }

    /// Ratio k/h; recorded in reports, never enforced.
    pub fn ring_ratio(&self) -> f64 {
        self.k as f64 / self.h as f64
    }

    pub fn bubble_ring1(&self, j: usize) -> BubbleParams {
        BubbleParams::new(self.n, self.mu, self.xi[j].clone()).expect("valid by construction")
    }
    pub fn bubble_ring2(&self, l: usize) -> BubbleParams {
        BubbleParams::new(self.n, self.lambda, self.eta[l].clone()).expect("valid by construction")
    }

    /// Unit tangent frame of ring 1 at site j: ξ_j^⊥ = √(1-μ²)(-sin θ̄_j, cos θ̄_j, 0, …).
    pub fn xi_perp(&self, j: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n];
        let s = self.ring1_radius();
        p[0] = -s * self.theta_bar[j].sin();
        p[1] = s * self.theta_bar[j].cos();
        p
    }
    /// η_l^⊥ = √(1-λ²)(0, 0, -sin θ̂_l, cos θ̂_l, 0, …).
    pub fn eta_perp(&self, l: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n];
        let t = self.ring2_radius();
        p[2] = -t * self.theta_hat[l].sin();
        p[3] = t * self.theta_hat[l].cos();
        p
    }

    /// Apply a group element: rotation by 2πj/k in (y1,y2), by 2πl/h in
    /// (y3,y4), and sign flips on the coordinates selected by `signs`
    /// (only indices in {1, 3, 4, …, n-1}, i.e. y2, y4, y5, …, yn, are
    /// in the group; others are ignored).
    pub fn symmetry_orbit(&self, y: &[f64], j: i64, l: i64, signs: &[usize]) -> Vec<f64> {
        let mut out = y.to_vec();
        let a = 2.0 * std::f64::consts::PI * j as f64 / self.k as f64;
        let b = 2.0 * std::f64::consts::PI * l as f64 / self.h as f64;
        let (ca, sa) = (a.cos(), a.sin());
        out[0] = ca * y[0] - sa * y[1];
        out[1] = sa * y[0] + ca * y[1];
        let (cb, sb) = (b.cos(), b.sin());
        out[2] = cb * y[2] - sb * y[3];
        out[3] = sb * y[2] + cb * y[3];
        for &i in signs {
            if i == 1 || (3..self.n).contains(&i) {
                out[i] = -out[i];
            }
        }
        out
    }

    /// (min intra-ring-1, min intra-ring-2, min cross-ring) center separations.
    pub fn min_separation(&self) -> (f64, f64, f64) {
        let min_pair = |pts: &[Vec<f64>]| {
            let mut best = f64::INFINITY;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    best = best.min(dist_sq(&pts[i], &pts[j]));
                }
            }
            best.sqrt()
        };
        let mut cross = f64::INFINITY;
        for a in &self.xi {
            for b in &self.eta {
                cross = cross.min(dist_sq(a, b));
            }
        }
        (min_pair(&self.xi), min_pair(&self.eta), cross.sqrt())
    }
}

/// Deserialize from the five primaries only.
impl<'de> Deserialize<'de> for TowerConfiguration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let p = TowerParams::deserialize(d)?;
        TowerConfiguration::new(p).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::norm_sq;

    fn cfg(n: usize, k: usize, h: usize, d: f64, e: f64) -> TowerConfiguration {
        TowerConfiguration::new(TowerParams { n, k, h, delta: d, eps: e }).unwrap()
    }

    #[test]
    fn derived_scales() {
        let c = cfg(4, 8, 8, 1.0, 1.0);
        assert_eq!(c.mu, 1.0 / 64.0);
        let expect = (1.0 - 1.0 / 4096.0_f64).sqrt();
        assert!((norm_sq(&c.xi[0]).sqrt() - expect).abs() < 1e-15);
        // xi_1 lies on the positive y1 axis
        assert!((c.xi[0][0] - expect).abs() < 1e-15 && c.xi[0][1] == 0.0);
    }

    #[test]
    fn construction_is_exact_to_ulps() {
        for &(k, h, d, e) in &[(8usize, 8usize, 1.0, 1.0), (12, 8, 0.3, 2.5), (5, 17, 9.9, 0.11)] {
            let c = cfg(4, k, h, d, e);
            for j in 0..k {
                let r = norm_sq(&c.xi[j]) + c.mu * c.mu - 1.0;
                assert!(r.abs() <= 4.0 * f64::EPSILON, "|xi|²+mu²-1 = {r:e}");
            }
            for l in 0..h {
                let r = norm_sq(&c.eta[l]) + c.lambda * c.lambda - 1.0;
                assert!(r.abs() <= 4.0 * f64::EPSILON);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TowerConfiguration::new(TowerParams { n: 3, k: 8, h: 8, delta: 1.0, eps: 1.0 }).is_err());
        assert!(TowerConfiguration::new(TowerParams { n: 4, k: 2, h: 8, delta: 1.0, eps: 1.0 }).is_err());
        assert!(TowerConfiguration::new(TowerParams { n: 4, k: 8, h: 8, delta: -1.0, eps: 1.0 }).is_err());
        // mu >= 1: k = 3, delta large enough that delta/9 >= 1
        assert!(TowerConfiguration::new(TowerParams { n: 4, k: 3, h: 8, delta: 9.5, eps: 1.0 }).is_err());
    }

    #[test]
    fn clifford_symmetric_case_swaps_planes() {
        let c = cfg(4, 8, 8, 1.0, 1.0);
        assert_eq!(c.mu, c.lambda);
        for j in 0..8 {
            // swapping (y1,y2) <-> (y3,y4) maps xi_j onto eta_j
            let swapped = vec![c.xi[j][2], c.xi[j][3], c.xi[j][0], c.xi[j][1]];
            let diff: f64 = swapped.iter().zip(&c.eta[j]).map(|(a, b)| (a - b).abs()).sum();
            assert!(diff < 1e-15);
        }
    }

    #[test]
    fn orbit_identity_full_turn_and_shift() {
        let c = cfg(4, 8, 6, 1.0, 1.0);
        let y = [0.3, -0.2, 0.5, 0.1];
        let id = c.symmetry_orbit(&y, 0, 0, &[]);
        assert_eq!(id, y.to_vec());
        let full = c.symmetry_orbit(&y, 8, 6, &[]);
        for (a, b) in full.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
        // one ring-1 shift maps xi_m to xi_{m+1 mod k}
        for m in 0..8 {
            let moved = c.symmetry_orbit(&c.xi[m], 1, 0, &[]);
            let target = &c.xi[(m + 1) % 8];
            let diff: f64 = moved.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
            assert!(diff < 1e-14);
        }
    }

    #[test]
    fn orbit_closure_of_ring1() {
        let c = cfg(5, 7, 5, 0.8, 1.3);
        // the set {xi_j} is invariant under a single ring-1 shift
        for m in 0..7 {
            let moved = c.symmetry_orbit(&c.xi[m], 1, 0, &[]);
            let hit = c.xi.iter().any(|p| dist_sq(p, &moved).sqrt() < 1e-12);
            assert!(hit);
        }
    }

    #[test]
    fn separations() {
        let c = cfg(4, 8, 8, 1.0, 1.0);
        let (s1, _s2, cross) = c.min_separation();
        let chord = 2.0 * c.ring1_radius() * (std::f64::consts::PI / 8.0).sin();
        assert!((s1 - chord).abs() < 1e-14);
        // orthogonal rings: cross distance = sqrt(|xi|² + |eta|²) ≈ sqrt(2)
        assert!((cross - (c.ring1_radius().powi(2) + c.ring2_radius().powi(2)).sqrt()).abs() < 1e-14);
        assert!(cross > 1.0);
    }

    #[test]
    fn cross_separation_above_one_in_admissible_box() {
        for &d in &[0.1, 1.0, 10.0] {
            for &e in &[0.1, 1.0, 10.0] {
                for &(k, h) in &[(3usize, 3usize), (8, 8), (16, 5), (40, 40)] {
                    if let Ok(c) = TowerConfiguration::new(TowerParams { n: 4, k, h, delta: d, eps: e }) {
                        assert!(c.min_separation().2 > 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn serialization_round_trip_uses_primaries() {
        let c = cfg(4, 8, 6, 1.5, 0.7);
        let js = serde_json::to_string(&c).unwrap();
        assert!(js.contains("\"mu\""));
        let back: TowerConfiguration = serde_json::from_str(r#"{"n":4,"k":8,"h":6,"delta":1.5,"eps":0.7}"#).unwrap();
        assert_eq!(back.params(), c.params());
        // unknown keys rejected
        assert!(serde_json::from_str::<TowerConfiguration>(r#"{"n":4,"k":8,"h":6,"delta":1.5,"eps":0.7,"mu":0.1}"#).is_err());
    }
}
