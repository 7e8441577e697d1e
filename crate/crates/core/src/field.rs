//! `ScalarField`: a pure evaluable map R^n -> R with declared symmetry tags
//! and an asserted power decay at infinity. Carrier for the error field, the
//! kernel candidates and the interaction-block integrands.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bubble::{kelvin_point, norm_sq, pow_half_nm2};
use crate::config::TowerConfiguration;
use crate::error::{Error, Result};

/// Declared invariances, spot-checked at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SymmetryTag {
    /// f(R_{2π/k} y) = f(y), rotation acting in the (y1,y2)-plane.
    Ring1Invariant,
    /// f(R_{2π/h} y) = f(y), rotation acting in the (y3,y4)-plane.
    Ring2Invariant,
    /// even under each single sign flip of y2, y4, y5, …, yn.
    EvenMask,
    /// solution-type Kelvin parity: f(y) = ± |y|^{2-n} f(y/|y|²).
    KelvinSolution { sign: f64 },
    /// right-hand-side Kelvin parity: f(y) = ± |y|^{-n-2} f(y/|y|²).
    KelvinRhs { sign: f64 },
}

type Evaluator = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct ScalarField {
    eval: Arc<Evaluator>,
    n: usize,
    tags: Vec<SymmetryTag>,
    decay_exponent: f64,
}

const SPOT_CHECK_POINTS: usize = 32;
const SPOT_CHECK_RTOL: f64 = 1e-8;

impl ScalarField {
    /// Wrap an evaluator, spot-checking every declared tag at 32 seeded
    /// points with 1e-8 relative tolerance.
    pub fn new<F>(n: usize, decay_exponent: f64, tags: Vec<SymmetryTag>, config: Option<&TowerConfiguration>, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let field = Self { eval: Arc::new(f), n, tags, decay_exponent };
        field.spot_check(config)?;
        Ok(field)
    }

    /// Wrap without checks; for internal integrands whose symmetry is
    /// established elsewhere.
    pub fn new_unchecked<F>(n: usize, decay_exponent: f64, tags: Vec<SymmetryTag>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { eval: Arc::new(f), n, tags, decay_exponent }
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        (self.eval)(y)
    }
    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn decay_exponent(&self) -> f64 {
        self.decay_exponent
    }
    pub fn tags(&self) -> &[SymmetryTag] {
        &self.tags
    }
    pub fn has_tag(&self, t: SymmetryTag) -> bool {
        self.tags.contains(&t)
    }
    pub fn ring_invariant(&self) -> bool {
        self.has_tag(SymmetryTag::Ring1Invariant) && self.has_tag(SymmetryTag::Ring2Invariant)
    }

    fn spot_check(&self, config: Option<&TowerConfiguration>) -> Result<()> {
        if self.tags.is_empty() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1ab1e);
        let n = self.n;
        for _ in 0..SPOT_CHECK_POINTS {
            // radii in [0.3, 2.5], away from bubble cores if a config is given
            let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = norm_sq(&y).sqrt();
            let target = rng.gen_range(0.3..2.5);
            for v in &mut y {
                *v *= target / r;
            }
            if let Some(c) = config {
                let near = c.xi.iter().any(|p| crate::bubble::dist_sq(p, &y) < (4.0 * c.mu).powi(2))
                    || c.eta.iter().any(|p| crate::bubble::dist_sq(p, &y) < (4.0 * c.lambda).powi(2));
                if near {
                    continue;
                }
            }
            let f0 = self.eval(&y);
            let scale = f0.abs().max(1e-12);
            for tag in &self.tags {
                let f1 = match *tag {
                    SymmetryTag::Ring1Invariant => {
                        let c = config.ok_or_else(|| Error::InvalidParameter("ring tags need a configuration".into()))?;
                        self.eval(&c.symmetry_orbit(&y, 1, 0, &[]))
                    }
                    SymmetryTag::Ring2Invariant => {
                        let c = config.ok_or_else(|| Error::InvalidParameter("ring tags need a configuration".into()))?;
                        self.eval(&c.symmetry_orbit(&y, 0, 1, &[]))
                    }
                    SymmetryTag::EvenMask => {
                        let mut axes: Vec<usize> = vec![1, 3];
                        axes.extend(4..n);
                        let mut flipped = y.clone();
                        let i = axes[rng.gen_range(0..axes.len())];
                        flipped[i] = -flipped[i];
                        self.eval(&flipped)
                    }
                    SymmetryTag::KelvinSolution { sign } => {
                        let inv = kelvin_point(&y)?;
                        sign * pow_half_nm2(1.0 / norm_sq(&y), n) * self.eval(&inv)
                    }
                    SymmetryTag::KelvinRhs { sign } => {
                        let inv = kelvin_point(&y)?;
                        let r2 = norm_sq(&y);
                        sign * pow_half_nm2(1.0 / r2, n) / (r2 * r2) * self.eval(&inv)
                    }
                };
                if (f1 - f0).abs() > SPOT_CHECK_RTOL * scale.max(f1.abs()) {
                    return Err(Error::SymmetryViolation {
                        tag: format!("{tag:?}"),
                        residual: (f1 - f0).abs() / scale,
                        point: y.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("n", &self.n)
            .field("decay_exponent", &self.decay_exponent)
            .field("tags", &self.tags)
            .finish()
    }
}
