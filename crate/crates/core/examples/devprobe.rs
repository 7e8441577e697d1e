//! Development probe: timings and values of the heavy pipelines.
use std::time::Instant;

use bubbletower::error_field::error_breakdown;
use bubbletower::kernel::gram_rank;
use bubbletower::reduction::{pair_interaction, projected_coefficient, Ring};
use bubbletower::{QuadratureScheme, SchemeParams, TowerConfiguration, TowerParams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(|s| s.as_str()).unwrap_or("all");

    if what == "all" || what == "breakdown" {
        for k in [8usize, 12, 16, 24] {
            let c = TowerConfiguration::new(TowerParams { n: 4, k, h: k, delta: 1.0, eps: 1.0 }).unwrap();
            let s = QuadratureScheme::new(&c, SchemeParams::default_for(4)).unwrap();
            let t = Instant::now();
            let b = error_breakdown(&c, &s).unwrap();
            println!(
                "k={k:2}: ext={:.6} (est {:.1e}) int1={:.6} int2={:.6} conv={} [{:?}]",
                b.exterior_norm,
                b.exterior_err_est,
                b.interior_ring1_norm[0],
                b.interior_ring2_norm[0],
                b.quadrature_converged,
                t.elapsed()
            );
        }
    }

    if what == "all" || what == "coeff" {
        for delta in [0.5, 1.0, 2.0, 3.0, 3.5, 4.0] {
            let c = TowerConfiguration::new(TowerParams { n: 4, k: 8, h: 8, delta, eps: delta }).unwrap();
            let s = QuadratureScheme::new(&c, SchemeParams { max_refine: 1, ..SchemeParams::default_for(4) }).unwrap();
            let t = Instant::now();
            let p = projected_coefficient(&c, Ring::One, &s).unwrap();
            println!(
                "delta={delta}: cbar0={:+.6e} (est {:.1e}, conv={}) pieces own={:+.3e} ext={:+.3e} ring1={:+.3e} ring2={:+.3e} [{:?}]",
                p.value, p.err_est, p.converged, p.piece_own_ball, p.piece_exterior, p.piece_other_ring1, p.piece_ring2,
                t.elapsed()
            );
        }
    }

    if what == "all" || what == "pair" {
        let c = TowerConfiguration::new(TowerParams { n: 4, k: 32, h: 32, delta: 1.0, eps: 1.0 }).unwrap();
        let s = QuadratureScheme::new(&c, SchemeParams::default_for(4)).unwrap();
        for j in [1usize, 2, 3] {
            let t = Instant::now();
            let p = pair_interaction(&c, j, &s).unwrap();
            println!("pair j={}: integral={:.6e} ratio={:.6} c1={:.4} [{:?}]", p.j, p.integral, p.ratio, p.c1, t.elapsed());
        }
    }

    if what == "m1" {
        let c = TowerConfiguration::new(TowerParams { n: 4, k: 8, h: 8, delta: 3.385, eps: 3.385 }).unwrap();
        let s = QuadratureScheme::new(&c, SchemeParams { rel_tol: 1e-4, max_refine: 1, ..SchemeParams::default_for(4) }).unwrap();
        let t = Instant::now();
        let b = bubbletower::circulant::assemble_m1_blocks(&c, &s).unwrap();
        println!("m1 assembled conv={} [{:?}]", b.converged, t.elapsed());
        println!("beta table:");
        for r in 0..5 { println!("  {:?}", b.beta[r].iter().map(|v| format!("{v:+.3e}")).collect::<Vec<_>>()); }
        let f1 = b.cross_bar_hat(1, 1);
        let j1 = b.cross_bar_hat(2, 2);
        println!("F1[j][0] measured vs cos²θβ11+sin²θβ22:");
        for j in 0..8 {
            let th = c.theta_bar[j];
            let pred = th.cos().powi(2) * b.beta[1][1] + th.sin().powi(2) * b.beta[2][2];
            println!("  j={j}: {:+.4e} vs {:+.4e}", f1[(j, 0)], pred);
        }
        let fhat = b.hat_hat(1, 1);
        let jhat = b.hat_hat(2, 2);
        let d = (&fhat - &jhat).abs().max();
        println!("max|Fhat - Jhat| = {:.3e} (scale {:.3e})", d, fhat.abs().max());
        let mbar = b.bar_bar(3, 3);
        let pbar = b.bar_bar(4, 4);
        println!("max|Mbar - Pbar| = {:.3e} (scale {:.3e})", (&mbar - &pbar).abs().max(), mbar.abs().max());
        println!("kernel residuals = {:?}", b.kernel_residuals().iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>());
        let ortho = bubbletower::circulant::check_orthogonality_conditions(&b, 12345);
        println!("ortho scale {:.3e}", ortho.scale);
        for (nm, v) in ortho.bar_products.iter().chain(&ortho.hat_products) {
            println!("  {nm}: {:+.3e}", v);
        }
    }

    if what == "htilde" {
        let c = TowerConfiguration::new(TowerParams { n: 5, k: 8, h: 8, delta: 1.0, eps: 1.0 }).unwrap();
        let s = QuadratureScheme::new(
            &c,
            SchemeParams { rel_tol: 1e-3, radial_nodes: 3, angular_degree: 6, max_refine: 1, ..SchemeParams::default_for(5) },
        )
        .unwrap();
        let t = Instant::now();
        let ht = bubbletower::circulant::assemble_htilde(&c, 5, &s).unwrap();
        println!("htilde n=5 alpha=5: gamma={:.4e} rowsum_res={:.4e} conv={} [{:?}]", ht.gamma, ht.row_sum_residual, ht.converged, t.elapsed());
        println!("  diag h00={:.4e} hbar11={:.4e}", ht.matrix[(0,0)], ht.matrix[(1,1)]);
    }

    if what == "solve" {
        for k in [8usize, 16] {
            let t = Instant::now();
            let params = SchemeParams { max_refine: 1, ..SchemeParams::default_for(4) };
            let sol = bubbletower::reduction::solve_reduced(4, k, k, params, Default::default()).unwrap();
            println!(
                "k={k}: delta*={:.8} eps*={:.8} res=({:.2e},{:.2e}) a1={:.4} a2={:.4} evals={} iters={} [{:?}]",
                sol.delta_star, sol.eps_star, sol.residuals.0, sol.residuals.1, sol.a1, sol.a2,
                sol.coefficient_evals, sol.iterations, t.elapsed()
            );
            println!("   a2/a1 = {:.6} vs delta* = {:.6}", sol.a2 / sol.a1, sol.delta_star);
        }
    }

    if what == "all" || what == "gram" {
        let c = TowerConfiguration::new(TowerParams { n: 4, k: 8, h: 8, delta: 3.43, eps: 3.43 }).unwrap();
        let s = QuadratureScheme::new(&c, SchemeParams { max_refine: 1, ..SchemeParams::default_for(4) }).unwrap();
        let t = Instant::now();
        let g = gram_rank(&c, &s).unwrap();
        println!(
            "gram: rank={} minratio={:.4e} conv={} sweep={:?} [{:?}]",
            g.rank, g.min_singular_ratio, g.quadrature_converged, g.threshold_sweep, t.elapsed()
        );
        println!("sv: {:?}", g.singular_values.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
    }
}
// appended: reduced-solver probe (invoked with `solve`)
