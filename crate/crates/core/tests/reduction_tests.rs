//! Reduced-system machinery against oracles: normalizer identity, the
//! four-piece numerator split, Claim-2-type cutoff locality, and pair
//! interactions.

mod common;

use bubbletower::error_field::{cutoff, eval_error, CutoffOrientation, RingSite};
use bubbletower::kernel::{eval_zgroup, SiteRef};
use bubbletower::quadrature::Region;
use bubbletower::reduction::{normalizer, pair_interaction, projected_coefficient, Ring};
use bubbletower::{QuadratureScheme, SchemeParams, TowerConfiguration, TowerParams};

fn cfg(k: usize, h: usize, d: f64, e: f64) -> TowerConfiguration {
    TowerConfiguration::new(TowerParams { n: 4, k, h, delta: d, eps: e }).unwrap()
}

fn fast(c: &TowerConfiguration) -> QuadratureScheme {
    QuadratureScheme::new(c, SchemeParams { max_refine: 1, ..SchemeParams::default_for(4) }).unwrap()
}

#[test]
fn denominator_identity_scaled_vs_unit() {
    // ∫ U_{μ,ξ₁}^{p-1} Z̄₀² computed by the full scheme equals the
    // radial normalizer ∫ U^{p-1} Z₀² (scale invariance)
    let c = cfg(8, 8, 1.0, 1.0);
    let s = fast(&c);
    let cc = c.clone();
    let r = s
        .integrate_fn(
            move |y: &[f64]| {
                let u = bubbletower::bubble::eval_scaled_bubble(y, &cc.bubble_ring1(0));
                let z = eval_zgroup(&cc, 0, SiteRef::Ring1(0), y).unwrap();
                bubbletower::bubble::abs_critical_power_m1(u, 4) * z * z
            },
            Region::All,
            false,
        )
        .unwrap();
    let d = normalizer(4);
    assert!((r.value - d).abs() < 1e-4 * d, "scaled {} vs unit {}", r.value, d);
}

#[test]
fn four_piece_sum_matches_independent_partition() {
    // the numerator pieces sum to the global integral of ζ̄₁ E Z̄₀; as an
    // independent check the global value is recomputed under a different
    // region partition (alpha_bar = 1.25)
    let c = cfg(8, 8, 1.0, 1.0);
    let s = fast(&c);
    let p = projected_coefficient(&c, Ring::One, &s).unwrap();
    let total = p.piece_own_ball + p.piece_exterior + p.piece_other_ring1 + p.piece_ring2;

    let alt = QuadratureScheme::new(
        &c,
        SchemeParams { alpha_bar: 1.25, alpha_hat: 0.8, max_refine: 1, ..SchemeParams::default_for(4) },
    )
    .unwrap();
    let cc = c.clone();
    // the cutoff stays at the reporting radius ᾱ = 1 while the partition moves
    let global = alt
        .integrate_fn(
            move |y: &[f64]| {
                let z = cutoff(&cc, y, RingSite::Ring1(0), 1.0, CutoffOrientation::OneNearBubble);
                if z == 0.0 {
                    return 0.0;
                }
                z * eval_error(&cc, y) * eval_zgroup(&cc, 0, SiteRef::Ring1(0), y).unwrap()
            },
            Region::All,
            false,
        )
        .unwrap();
    assert!(
        (total - global.value).abs() <= 2e-4 * global.value.abs().max(1e-6),
        "pieces {} vs independent partition {}",
        total,
        global.value
    );
}

#[test]
fn symmetric_configuration_has_equal_coefficients() {
    let c = cfg(8, 8, 1.3, 1.3);
    let s = fast(&c);
    let c1 = projected_coefficient(&c, Ring::One, &s).unwrap();
    let c2 = projected_coefficient(&c, Ring::Two, &s).unwrap();
    assert!(
        (c1.value - c2.value).abs() <= 1e-10 * c1.value.abs().max(1e-12),
        "cbar0 {} vs chat0 {}",
        c1.value,
        c2.value
    );
}

#[test]
fn coefficient_sign_structure_below_root() {
    // measured orientation: below the root (δ* ≈ 3.4 at k = h = 8) the
    // coefficient is negative, above it positive
    let s_lo = {
        let c = cfg(8, 8, 1.0, 1.0);
        projected_coefficient(&c, Ring::One, &fast(&c)).unwrap().value
    };
    let s_hi = {
        let c = cfg(8, 8, 4.5, 4.5);
        projected_coefficient(&c, Ring::One, &fast(&c)).unwrap().value
    };
    assert!(s_lo < 0.0 && s_hi > 0.0, "cbar0(1) = {s_lo}, cbar0(4.5) = {s_hi}");
}

#[test]
fn claim2_cutoff_locality_ratio() {
    // |∫(ζ̄₁-1)EZ̄₀| is an order 1/k below |∫EZ̄₀| away from the root:
    // exponent of the ratio over k ∈ {8, 16} within ±0.3 of -1
    let mut ratios = Vec::new();
    for k in [8usize, 16] {
        let c = cfg(k, k, 1.0, 1.0);
        let s = fast(&c);
        let cc = c.clone();
        let res = s
            .integrate_batch(
                2,
                move |y: &[f64], out: &mut [f64]| {
                    let e = eval_error(&cc, y);
                    let z = eval_zgroup(&cc, 0, SiteRef::Ring1(0), y).unwrap();
                    let zeta = cutoff(&cc, y, RingSite::Ring1(0), 1.0, CutoffOrientation::OneNearBubble);
                    out[0] = e * z; // ∫ E Z̄₀
                    out[1] = (zeta - 1.0) * e * z; // Claim-2 piece
                },
                &[Region::All],
                false,
            )
            .unwrap();
        ratios.push((k as f64, (res[1].value / res[0].value).abs()));
    }
    let slope = bubbletower::fitting::fit_loglog_slope(&ratios);
    assert!(
        (slope + 1.0).abs() <= 0.3,
        "claim-2 ratio slope {slope} (ratios {ratios:?})"
    );
}

#[test]
fn pair_interaction_constants() {
    let c = TowerConfiguration::new(TowerParams { n: 4, k: 16, h: 16, delta: 1.0, eps: 1.0 }).unwrap();
    let s = QuadratureScheme::new(&c, SchemeParams::default_for(4)).unwrap();
    let mut c1s = Vec::new();
    for j in [1usize, 2, 3] {
        let p = pair_interaction(&c, j, &s).unwrap();
        // the bare monopole integral is negative; the balance constant positive
        assert!(p.integral < 0.0 && p.c1 > 0.0);
        c1s.push(p.c1);
    }
    let mean: f64 = c1s.iter().sum::<f64>() / 3.0;
    for v in &c1s {
        assert!((v - mean).abs() / mean < 0.05, "c1 spread too wide: {c1s:?}");
    }
    // invalid index rejected
    assert!(pair_interaction(&c, 0, &s).is_err());
}

#[test]
fn root_is_genuine_not_flat() {
    // |cbar0(δ*, ε*)| ≤ 1e-3 |cbar0(δ*/2, ε*)|
    let params = SchemeParams { max_refine: 1, ..SchemeParams::default_for(4) };
    let sol = bubbletower::reduction::solve_reduced(4, 8, 8, params, Default::default()).unwrap();
    let at_root = sol.residuals.0.abs();
    let c = TowerConfiguration::new(TowerParams { n: 4, k: 8, h: 8, delta: sol.delta_star / 2.0, eps: sol.eps_star }).unwrap();
    let s = QuadratureScheme::new(&c, params).unwrap();
    let off = projected_coefficient(&c, Ring::One, &s).unwrap().value.abs();
    assert!(at_root <= 1e-3 * off, "root residual {at_root} vs off-root {off}");
}
