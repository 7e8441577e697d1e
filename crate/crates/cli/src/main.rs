//! Command-line front end for the two-ring bubble-tower laboratory.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use bubbletower::circulant::{assemble_beta_table, assemble_block_system, assemble_m1_blocks, ring_cos_sin, solve_block_contraction};
use bubbletower::error_field::{error_scan, scan_rows_to_csv, CutoffOrientation};
use bubbletower::kernel::{appendix_residual, gram_rank, l_residual_norms, n0, sample_points, script_n};
use bubbletower::nondegeneracy::certify;
use bubbletower::reduction::{solve_reduced, SolverOpts};
use bubbletower::{QuadratureScheme, SchemeParams, TowerConfiguration, TowerParams};

#[derive(Parser)]
#[command(
    name = "bubbletower",
    about = "Two-ring bubble-tower laboratory for the critical Yamabe equation",
    long_about = "Constructs two-ring bubble configurations, evaluates the error field and its\n\
                  weighted norms, solves the reduced balancing equations, builds the candidate\n\
                  kernel basis with its Gram certificate, and assembles the circulant\n\
                  interaction blocks.\n\n\
                  CSV columns of `error-scan`: k,h,q,region,norm,predicted_exponent,fitted_exponent.\n\
                  All outputs embed the fully resolved parameter set. The worker count is\n\
                  capped by the BUBBLETOWER_THREADS environment variable."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Parameters shared by every subcommand; may also be loaded from --config.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CommonOpts {
    /// dimension (>= 4)
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// ring-1 bubble count
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// ring-2 bubble count
    #[arg(long, default_value_t = 8)]
    h: usize,
    /// ring-1 balancing parameter
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// ring-2 balancing parameter
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// weighted-norm exponent (default: 3n/4)
    #[arg(long)]
    q: Option<f64>,
    /// ring-1 patch radius factor
    #[arg(long, default_value_t = 1.0)]
    alpha_bar: f64,
    /// ring-2 patch radius factor
    #[arg(long, default_value_t = 1.0)]
    alpha_hat: f64,
    /// quadrature relative tolerance
    #[arg(long)]
    rel_tol: Option<f64>,
    /// base Gauss points per panel
    #[arg(long)]
    radial_nodes: Option<usize>,
    /// base angular counts
    #[arg(long)]
    angular_degree: Option<usize>,
    /// maximum refinement level
    #[arg(long)]
    max_refine: Option<usize>,
    /// deterministic seed for sampled checks
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    /// output directory (default: current directory)
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Default for CommonOpts {
    fn default() -> Self {
        Self {
            n: 4,
            k: 8,
            h: 8,
            delta: 1.0,
            eps: 1.0,
            q: None,
            alpha_bar: 1.0,
            alpha_hat: 1.0,
            rel_tol: None,
            radial_nodes: None,
            angular_degree: None,
            max_refine: None,
            seed: 1234,
            out: None,
        }
    }
}

impl CommonOpts {
    fn scheme_params(&self, certificate_grade: bool) -> SchemeParams {
        let mut p = SchemeParams::default_for(self.n);
        if certificate_grade {
            // accuracy the certificate needs; flags stay honest against it
            p.rel_tol = 1e-4;
            p.max_refine = 1;
        }
        if let Some(q) = self.q {
            p.q = q;
        }
        p.alpha_bar = self.alpha_bar;
        p.alpha_hat = self.alpha_hat;
        if let Some(v) = self.rel_tol {
            p.rel_tol = v;
        }
        if let Some(v) = self.radial_nodes {
            p.radial_nodes = v;
        }
        if let Some(v) = self.angular_degree {
            p.angular_degree = v;
        }
        if let Some(v) = self.max_refine {
            p.max_refine = v;
        }
        p
    }

    fn configuration(&self) -> bubbletower::Result<TowerConfiguration> {
        TowerConfiguration::new(TowerParams { n: self.n, k: self.k, h: self.h, delta: self.delta, eps: self.eps })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build and print a configuration (primaries plus derived geometry).
    Construct {
        #[command(flatten)]
        opts: CommonOpts,
        /// optional JSON file with the same keys as the flags
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Scan the error norms over ring counts and fit log-log exponents.
    ErrorScan {
        #[command(flatten)]
        opts: CommonOpts,
        /// comma-separated ring counts, h = k per point
        #[arg(long, value_delimiter = ',', default_value = "8,12,16,24")]
        ks: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Solve the reduced balancing equations for (delta*, eps*).
    SolveReduced {
        #[command(flatten)]
        opts: CommonOpts,
        /// coefficient tolerance
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Kernel-basis checks: counts, decomposition residuals, Gram rank.
    CheckKernel {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Interaction blocks: β table, block norms, kernel and contraction checks.
    CirculantCheck {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Full nondegeneracy/maximality certificate.
    Certify {
        #[command(flatten)]
        opts: CommonOpts,
        /// solve the reduced system first and certify at the root
        #[arg(long, default_value_t = false)]
        at_root: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn merge_config(opts: &CommonOpts, path: &Option<PathBuf>) -> anyhow::Result<CommonOpts> {
    match path {
        None => Ok(opts.clone()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let parsed: CommonOpts = serde_json::from_str(&text)?;
            Ok(parsed)
        }
    }
}

fn write_output(dir: &Option<PathBuf>, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    let dir = dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// Everything an output file needs to be reproduced.
#[derive(Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    params: CommonOpts,
    scheme: SchemeParams,
    cutoff_orientation: CutoffOrientation,
}

fn provenance(opts: &CommonOpts, scheme: &SchemeParams) -> Provenance {
    Provenance {
        tool: "bubbletower",
        version: env!("CARGO_PKG_VERSION"),
        params: opts.clone(),
        scheme: *scheme,
        cutoff_orientation: CutoffOrientation::OneNearBubble,
    }
}

fn main() {
    if let Ok(threads) = std::env::var("BUBBLETOWER_THREADS") {
        if let Ok(t) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    });
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Construct { opts, config } => {
            let opts = merge_config(&opts, &config)?;
            let cfg = opts.configuration()?;
            let (s1, s2, cross) = cfg.min_separation();
            let report = serde_json::json!({
                "provenance": provenance(&opts, &opts.scheme_params(false)),
                "configuration": cfg,
                "min_separation": { "ring1": s1, "ring2": s2, "cross": cross },
            });
            let path = write_output(&opts.out, "configuration.json", &serde_json::to_string_pretty(&report)?)?;
            println!(
                "construct: n={} k={} h={} mu={:.6e} lambda={:.6e} ring-ratio={:.3} -> {}",
                cfg.n,
                cfg.k,
                cfg.h,
                cfg.mu,
                cfg.lambda,
                cfg.ring_ratio(),
                path.display()
            );
            Ok(0)
        }
        Command::ErrorScan { opts, ks, config } => {
            let opts = merge_config(&opts, &config)?;
            let params = opts.scheme_params(false);
            let (rows, ext_slope, int_slope) = error_scan(&ks, opts.n, opts.delta, opts.eps, params)?;
            let mut csv = String::new();
            csv.push_str(&format!("# {}\n", serde_json::to_string(&provenance(&opts, &params))?));
            csv.push_str(&scan_rows_to_csv(&rows));
            let path = write_output(&opts.out, "error_scan.csv", &csv)?;
            println!(
                "error-scan: exterior slope {ext_slope:.4} (bound exponent {:.4}), interior slope {int_slope:.4} (predicted {:.4}) -> {}",
                1.0 - opts.n as f64 / params.q,
                -(opts.n as f64) / params.q,
                path.display()
            );
            Ok(0)
        }
        Command::SolveReduced { opts, tol, config } => {
            let opts = merge_config(&opts, &config)?;
            let params = SchemeParams { max_refine: 1, ..opts.scheme_params(false) };
            let sol = solve_reduced(opts.n, opts.k, opts.h, params, SolverOpts { tol, ..Default::default() })?;
            let report = serde_json::json!({
                "provenance": provenance(&opts, &params),
                "delta_star": sol.delta_star,
                "eps_star": sol.eps_star,
                "a1": sol.a1,
                "a2": sol.a2,
                "b1": sol.b1,
                "b2": sol.b2,
                "residuals": sol.residuals,
                "k": sol.k, "h": sol.h, "n": sol.n, "q": sol.q,
                "iterations": sol.iterations,
                "coefficient_evals": sol.coefficient_evals,
            });
            let path = write_output(&opts.out, "reduced_solution.json", &serde_json::to_string_pretty(&report)?)?;
            println!(
                "solve-reduced: delta*={:.8} eps*={:.8} residuals=({:.2e},{:.2e}) -> {}",
                sol.delta_star,
                sol.eps_star,
                sol.residuals.0,
                sol.residuals.1,
                path.display()
            );
            Ok(0)
        }
        Command::CheckKernel { opts, config } => {
            let opts = merge_config(&opts, &config)?;
            let cfg = opts.configuration()?;
            let params = opts.scheme_params(true);
            let scheme = QuadratureScheme::new(&cfg, params)?;
            let sample = sample_points(&cfg, 100, opts.seed);
            let count = n0(opts.n);
            let mut residuals = Vec::new();
            for beta in 0..count {
                residuals.push(appendix_residual(beta, &cfg, &sample)?);
            }
            let max_res = residuals.iter().cloned().fold(0.0f64, f64::max);
            let gram = gram_rank(&cfg, &scheme)?;
            let lnorms = l_residual_norms(&cfg, &scheme)?;
            let report = serde_json::json!({
                "provenance": provenance(&opts, &params),
                "N0": count,
                "script_N": script_n(opts.n),
                "rank": gram.rank,
                "min_singular_ratio": gram.min_singular_ratio,
                "singular_values": gram.singular_values,
                "threshold_sweep": gram.threshold_sweep,
                "appendix_max_residuals": residuals,
                "L_residual_norms": lnorms,
            });
            let path = write_output(&opts.out, "kernel_check.json", &serde_json::to_string_pretty(&report)?)?;
            let ok = gram.rank == count && max_res <= 1e-8;
            println!(
                "check-kernel: N0={} script_N={} rank={} min_ratio={:.3e} appendix_max={:.3e} -> {}",
                count,
                script_n(opts.n),
                gram.rank,
                gram.min_singular_ratio,
                max_res,
                path.display()
            );
            Ok(if ok { 0 } else { 1 })
        }
        Command::CirculantCheck { opts, config } => {
            let opts = merge_config(&opts, &config)?;
            let cfg = opts.configuration()?;
            let params = opts.scheme_params(true);
            let scheme = QuadratureScheme::new(&cfg, params)?;
            let (beta, _) = assemble_beta_table(&cfg, &scheme)?;
            let blocks = assemble_m1_blocks(&cfg, &scheme)?;
            let kernel_residuals = blocks.kernel_residuals();
            // a representative assembled two-ring system and its contraction
            let k = cfg.k;
            let h = cfg.h;
            let (cosk, sink) = ring_cos_sin(k);
            let mut rbar: Vec<f64> = (0..k).map(|j| ((j * j) as f64 * 0.37).sin()).collect();
            for dir in [&cosk, &sink] {
                let d: f64 = rbar.iter().zip(dir.iter()).map(|(a, b)| a * b).sum::<f64>() / (k as f64 / 2.0);
                for (r, v) in rbar.iter_mut().zip(dir.iter()) {
                    *r -= d * v;
                }
            }
            let (cosh_, sinh_) = ring_cos_sin(h);
            let mut rhat: Vec<f64> = (0..h).map(|l| ((l * 3) as f64 * 0.53).cos()).collect();
            for dir in [&cosh_, &sinh_] {
                let d: f64 = rhat.iter().zip(dir.iter()).map(|(a, b)| a * b).sum::<f64>() / (h as f64 / 2.0);
                for (r, v) in rhat.iter_mut().zip(dir.iter()) {
                    *r -= d * v;
                }
            }
            let alpha = if opts.n >= 5 { 5 } else { 3 };
            let (sys, _) = assemble_block_system(&cfg, alpha, &scheme, rbar, rhat)?;
            let sol = solve_block_contraction(&sys, 1e-12, 200)?;
            let ortho = bubbletower::circulant::check_orthogonality_conditions(&blocks, opts.seed);
            let report = serde_json::json!({
                "provenance": provenance(&opts, &params),
                "beta_table": beta.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
                "block_frobenius": blocks.matrix.iter().map(|x| x * x).sum::<f64>().sqrt(),
                "kernel_residuals": kernel_residuals,
                "contraction_factor": sol.contraction_factor,
                "contraction_iterations": sol.iterations,
                "gamma_alpha": sys.gamma,
                "orthogonality_bar": ortho.bar_products,
                "orthogonality_hat": ortho.hat_products,
                "orthogonality_scale": ortho.scale,
            });
            let path = write_output(&opts.out, "circulant_check.json", &serde_json::to_string_pretty(&report)?)?;
            println!(
                "circulant-check: |beta02|={:.2e} |beta12|={:.2e} contraction={:.3e} kernel_res={:?} -> {}",
                beta[0][2].abs(),
                beta[1][2].abs(),
                sol.contraction_factor,
                kernel_residuals.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>(),
                path.display()
            );
            Ok(if sol.contraction_factor < 0.5 { 0 } else { 1 })
        }
        Command::Certify { opts, at_root, config } => {
            let mut opts = merge_config(&opts, &config)?;
            let params = opts.scheme_params(true);
            if at_root {
                let sol = solve_reduced(opts.n, opts.k, opts.h, SchemeParams { max_refine: 1, ..params }, Default::default())?;
                opts.delta = sol.delta_star;
                opts.eps = sol.eps_star;
                println!("certify: reduced root delta*={:.6} eps*={:.6}", sol.delta_star, sol.eps_star);
            }
            let cfg = opts.configuration()?;
            let scheme = QuadratureScheme::new(&cfg, params)?;
            let report = certify(&cfg, &scheme, opts.seed)?;
            let full = serde_json::json!({
                "provenance": provenance(&opts, &params),
                "report": report,
            });
            let path = write_output(&opts.out, "report.json", &serde_json::to_string_pretty(&full)?)?;
            println!(
                "certify: N0={} script_N={} maximal={} rank={} min_ratio={:.3e} appendix_max={:.3e} pass={} -> {}",
                report.n0,
                report.script_n,
                report.maximal,
                report.gram_rank,
                report.min_singular_ratio,
                report.appendix_max_residual,
                report.pass,
                path.display()
            );
            Ok(if report.pass { 0 } else { 1 })
        }
    }
}
