//! Quadrature against independent radial oracles and the norm examples.

mod common;

use bubbletower::bubble::{abs_critical_power_m1, bubble_profile, norm_sq, signed_critical_power};
use bubbletower::quadrature::Region;
use bubbletower::{QuadratureScheme, ScalarField, SchemeParams, SymmetryTag, TowerConfiguration, TowerParams};
use common::radial_integral;

fn cfg(n: usize, k: usize, h: usize, d: f64, e: f64) -> TowerConfiguration {
    TowerConfiguration::new(TowerParams { n, k, h, delta: d, eps: e }).unwrap()
}

fn scheme(c: &TowerConfiguration) -> QuadratureScheme {
    QuadratureScheme::new(c, SchemeParams::default_for(c.n)).unwrap()
}

#[test]
fn bubble_power_integral_matches_radial_oracle() {
    // ∫_{R^4} U^3 dy = ω₃ ∫ r³ U(r)³ dr = 2π²·2 = 4π²  (oracle frozen below)
    let oracle = radial_integral(|r| r.powi(3) * bubble_profile(r * r, 4).powi(3), 1e-12) * 2.0 * std::f64::consts::PI.powi(2);
    assert!((oracle - 4.0 * std::f64::consts::PI.powi(2)).abs() < 1e-8);

    let c = cfg(4, 8, 8, 1.0, 1.0);
    let s = scheme(&c);
    let f = ScalarField::new_unchecked(4, 12.0, vec![SymmetryTag::Ring1Invariant, SymmetryTag::Ring2Invariant], |y: &[f64]| {
        signed_critical_power(bubble_profile(norm_sq(y), 4), 4)
    });
    let r = s.integrate(&f, Region::All).unwrap();
    assert!(
        (r.value - oracle).abs() < 1e-6 * oracle,
        "got {} vs oracle {} (err_est {:.2e}, nodes {})",
        r.value,
        oracle,
        r.err_est,
        r.nodes
    );
    assert!(r.converged);
}

#[test]
fn scaled_normalizer_matches_unit_scale() {
    // ∫ U_{μ,ξ₁}^{p-1} Z̄₀² dy = ∫ U^{p-1} Z₀² dy = 8π²/15 exactly
    let c = cfg(4, 8, 8, 1.0, 1.0);
    let s = scheme(&c);
    let cc = c.clone();
    let r = s
        .integrate_fn(
            move |y: &[f64]| {
                let u = bubbletower::bubble::eval_scaled_bubble(y, &cc.bubble_ring1(0));
                let z = bubbletower::kernel::eval_zgroup(&cc, 0, bubbletower::kernel::SiteRef::Ring1(0), y).unwrap();
                abs_critical_power_m1(u, 4) * z * z
            },
            Region::All,
            false,
        )
        .unwrap();
    let expect = 8.0 * std::f64::consts::PI.powi(2) / 15.0;
    assert!(
        (r.value - expect).abs() < 2e-6 * expect,
        "got {} vs {esc} (err_est {:.2e}, nodes {})",
        r.value,
        r.err_est,
        r.nodes,
        esc = expect
    );
}

#[test]
fn odd_integrands_annihilate() {
    // ∫ U^{p-1} Z₀ Z₁ dy = 0 by oddness in y₁
    let c = cfg(4, 8, 8, 1.0, 1.0);
    let s = scheme(&c);
    let r = s
        .integrate_fn(
            |y: &[f64]| {
                let r_sq = norm_sq(y);
                let u = bubble_profile(r_sq, 4);
                let z0 = u * (1.0 - r_sq) / (1.0 + r_sq);
                let z1 = -2.0 * y[0] * u / (1.0 + r_sq);
                abs_critical_power_m1(u, 4) * z0 * z1
            },
            Region::All,
            false,
        )
        .unwrap();
    // scale of the even counterpart for reference
    let scale = 8.0 * std::f64::consts::PI.powi(2) / 15.0;
    assert!(r.value.abs() < 1e3 * f64::EPSILON * scale, "odd integral {:.3e}", r.value);
}

#[test]
fn region_additivity() {
    let c = cfg(4, 8, 8, 1.0, 1.0);
    let s = QuadratureScheme::new(&c, SchemeParams { max_refine: 1, ..SchemeParams::default_for(4) }).unwrap();
    let cc = c.clone();
    let f = move |y: &[f64]| bubbletower::error_field::eval_error(&cc, y).powi(2) / (1.0 + norm_sq(y)).powi(2);
    let mut regions = vec![Region::All, Region::Exterior];
    for j in 0..8 {
        regions.push(Region::Ring1Patch(j));
    }
    for l in 0..8 {
        regions.push(Region::Ring2Patch(l));
    }
    let res = s.integrate_batch(1, move |y: &[f64], out: &mut [f64]| out[0] = f(y), &regions, false).unwrap();
    let total: f64 = res[1..].iter().map(|r| r.value).sum();
    assert!(
        (res[0].value - total).abs() <= 1e-6 * res[0].value.abs().max(1e-300),
        "all = {}, sum of regions = {}",
        res[0].value,
        total
    );
    // ring symmetry: patch values agree across j
    let p0 = res[2].value;
    for r in &res[3..10] {
        assert!((r.value - p0).abs() < 2e-6 * p0.abs());
    }
}

#[test]
fn node_doubling_stability() {
    // value at the scheme's finest level vs an independently refined
    // scheme: the difference is bounded by 3·err_est (the error-norm
    // integrand is ring-invariant, so this runs on the reduced wedge)
    let c = cfg(4, 8, 8, 1.0, 1.0);
    let sc = scheme(&c);
    let sf = QuadratureScheme::new(
        &c,
        SchemeParams { radial_nodes: 7, angular_degree: 16, ..SchemeParams::default_for(4) },
    )
    .unwrap();
    let cc = c.clone();
    let f = move |y: &[f64]| {
        let e = bubbletower::error_field::eval_error(&cc, y);
        (1.0 + norm_sq(y).sqrt()).powf(10.0 / 3.0).powi(3) * e * e * e.abs()
    };
    let a = sc.integrate_fn(&f, Region::All, true).unwrap();
    let b = sf.integrate_fn(&f, Region::All, true).unwrap();
    assert!(
        (a.value - b.value).abs() <= 3.0 * a.err_est.max(b.err_est),
        "v(N) = {} (err {:.2e}), v(refined) = {} (err {:.2e})",
        a.value,
        a.err_est,
        b.value,
        b.err_est
    );
}

#[test]
fn norm_star_examples() {
    let c = cfg(4, 8, 8, 1.0, 1.0);
    let s = scheme(&c);
    // f = U: sup (1+|y|²)(2/(1+|y|²)) = 2 with exact cancellation
    let f = ScalarField::new_unchecked(4, 2.0, vec![], |y: &[f64]| bubble_profile(norm_sq(y), 4));
    let (v, _at) = s.norm_star(&f);
    assert!((v - 2.0).abs() < 1e-6, "norm_star(U) = {v}");
    // zero field
    let z = ScalarField::new_unchecked(4, 2.0, vec![], |_: &[f64]| 0.0);
    assert_eq!(s.norm_star(&z).0, 0.0);
    // scaled bubble: sup located at the center, value μ^{-1}·2·(1+O(μ))
    let cc = c.clone();
    let g = ScalarField::new_unchecked(4, 2.0, vec![], move |y: &[f64]| {
        bubbletower::bubble::eval_scaled_bubble(y, &cc.bubble_ring1(0))
    });
    let (v, at) = s.norm_star(&g);
    let mu = c.mu;
    let predicted = (1.0 + norm_sq(&c.xi[0]).sqrt().powi(2)) * (2.0 / mu);
    assert!((v - predicted).abs() < 0.05 * predicted, "norm_star = {v}, predicted ≈ {predicted}");
    let d = bubbletower::bubble::dist_sq(&at, &c.xi[0]).sqrt();
    assert!(d < 2.0 * mu, "maximizer at distance {d} from the center");
}

#[test]
fn norm_starstar_examples() {
    let c = cfg(4, 8, 8, 1.0, 1.0);
    let s = scheme(&c);
    // zero field
    let z = ScalarField::new_unchecked(4, 8.0, vec![], |_: &[f64]| 0.0);
    assert_eq!(s.norm_starstar(&z, 3.0, None).unwrap().value, 0.0);
    // f = U^p: ‖(1+|y|)^{10/3} U³‖_{L³} via the radial oracle
    let f = ScalarField::new_unchecked(4, 6.0, vec![SymmetryTag::Ring1Invariant, SymmetryTag::Ring2Invariant], |y: &[f64]| {
        signed_critical_power(bubble_profile(norm_sq(y), 4), 4)
    });
    let oracle = radial_integral(
        |r| {
            let w = (1.0 + r).powf(10.0 / 3.0);
            r.powi(3) * (w * bubble_profile(r * r, 4).powi(3)).powi(3)
        },
        1e-12,
    ) * 2.0
        * std::f64::consts::PI.powi(2);
    let oracle = oracle.powf(1.0 / 3.0);
    let v = s.norm_starstar(&f, 3.0, None).unwrap();
    assert!((v.value - oracle).abs() < 1e-5 * oracle, "got {} vs oracle {}", v.value, oracle);
    // q outside (n/2, n) rejected
    assert!(s.norm_starstar(&f, 5.0, None).is_err());
}

#[test]
fn rescaling_covariance_of_norm_starstar() {
    // ‖h‖_** of h = U_{μ,ξ₁}^p over the patch matches the rescaled
    // convention μ^{(n+2)/2} h(ξ₁ + μ·) over the rescaled ball
    let c = cfg(4, 8, 8, 1.0, 1.0);
    let s = scheme(&c);
    let q = 3.0;
    let w_exp = 4.0 + 2.0 - 2.0 * 4.0 / q;
    let mu = c.mu;
    let cc = c.clone();
    let direct = s
        .integrate_fn(
            move |y: &[f64]| {
                let u = bubbletower::bubble::eval_scaled_bubble(y, &cc.bubble_ring1(0));
                // weight in rescaled coordinates z = (y-ξ₁)/μ
                let z = bubbletower::bubble::dist_sq(y, &cc.xi[0]).sqrt() / mu;
                ((1.0 + z).powf(w_exp) * (mu.powi(3) * signed_critical_power(u, 4)).abs()).powi(3) / mu.powi(4)
            },
            Region::Ring1Patch(0),
            false,
        )
        .unwrap();
    let cc = c.clone();
    let rescaled = s
        .integrate_patch_rescaled(0, move |z: &[f64]| {
            let mut y = cc.xi[0].clone();
            for i in 0..4 {
                y[i] += mu * z[i];
            }
            let u = bubbletower::bubble::eval_scaled_bubble(&y, &cc.bubble_ring1(0));
            ((1.0 + norm_sq(z).sqrt()).powf(w_exp) * (mu.powi(3) * signed_critical_power(u, 4)).abs()).powi(3)
        })
        .unwrap();
    assert!(
        (direct.value - rescaled.value).abs() < 1e-6 * rescaled.value.abs(),
        "direct {} vs rescaled {}",
        direct.value,
        rescaled.value
    );
}
