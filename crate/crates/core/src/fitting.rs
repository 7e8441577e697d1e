//! Small least-squares helpers for the convergence studies.

/// Slope of ln(v) against ln(x) for samples (x, v), by least squares.
pub fn fit_loglog_slope(samples: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(x, v)| (x.ln(), v.abs().ln())).collect();
    fit_slope(&pts)
}

/// Least-squares slope of (x, y) pairs.
pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Fit y = a x² + b x + c through exactly three points.
pub fn fit_quadratic_3(pts: &[(f64, f64); 3]) -> (f64, f64, f64) {
    let [(x0, y0), (x1, y1), (x2, y2)] = *pts;
    // divided differences
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    let b = d01 - a * (x0 + x1);
    let c = y0 - x0 * (a * x0 + b);
    (a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_law() {
        let pts: Vec<(f64, f64)> = [8.0, 12.0, 16.0, 24.0].iter().map(|&k: &f64| (k, 3.5 * k.powf(-1.25))).collect();
        assert!((fit_loglog_slope(&pts) + 1.25).abs() < 1e-12);
    }

    #[test]
    fn quadratic_through_three_points() {
        let f = |x: f64| 2.0 * x * x - 3.0 * x + 0.5;
        let (a, b, c) = fit_quadratic_3(&[(0.5, f(0.5)), (1.0, f(1.0)), (1.5, f(1.5))]);
        assert!((a - 2.0).abs() < 1e-12 && (b + 3.0).abs() < 1e-12 && (c - 0.5).abs() < 1e-12);
    }
}
