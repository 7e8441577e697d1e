fn main() {
    use bubbletower::*;
    let c = TowerConfiguration::new(TowerParams { n: 4, k: 8, h: 8, delta: 1.0, eps: 1.0 }).unwrap();
    // debug linearized_residual FD comparison
    let pts = bubbletower::kernel::sample_points(&c, 12, 19);
    for y in pts.iter().filter(|y| bubbletower::bubble::norm_sq(y) < 4.0).take(4) {
        for beta in [0usize, 1, 5, 7, 11] {
            let closed = bubbletower::kernel::linearized_residual(beta, &c, y).unwrap();
            // FD laplacian
            let h = 1e-3;
            let f = |q: &[f64]| bubbletower::kernel::eval_z(beta, q, &c).unwrap();
            let f0 = f(y);
            let mut lap = 0.0;
            let mut yp = y.to_vec();
            for i in 0..4 {
                yp[i] = y[i] + h; let fp = f(&yp);
                yp[i] = y[i] - h; let fm = f(&yp);
                yp[i] = y[i];
                lap += fp - 2.0*f0 + fm;
            }
            lap /= h*h;
            let us = bubbletower::error_field::eval_ustar(&c, y);
            let fd = lap + 6.0*us*us*f0;
            println!("beta={beta} y={:?} closed={closed:+.6e} fd={fd:+.6e} lap={lap:+.3e}", &y[..2]);
        }
    }
    // L-residual norms at k=8 vs 16
    let p = SchemeParams { rel_tol: 1e-4, max_refine: 1, ..SchemeParams::default_for(4) };
    let s8 = QuadratureScheme::new(&c, p).unwrap();
    let n8 = bubbletower::kernel::l_residual_norms(&c, &s8).unwrap();
    let c16 = TowerConfiguration::new(TowerParams { n: 4, k: 16, h: 16, delta: 1.0, eps: 1.0 }).unwrap();
    let s16 = QuadratureScheme::new(&c16, p).unwrap();
    let n16 = bubbletower::kernel::l_residual_norms(&c16, &s16).unwrap();
    for b in 0..15 {
        println!("beta={b:2}: k8={:.6e}  k16={:.6e}  ratio={:.3}", n8[b], n16[b], n16[b]/n8[b]);
    }
}
