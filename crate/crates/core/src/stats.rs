//! Standard errors, goodness-of-fit helpers and exponential tail fits.
//!
//! Every Monte Carlo assertion in the crate uses the 3-standard-error rule;
//! the helpers here keep that policy in one place.

use serde::Serialize;
use thiserror::Error;

/// Binomial standard error of an empirical probability.
pub fn binomial_se(p_hat: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::INFINITY);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Kolmogorov–Smirnov statistic of a sorted sample against a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len();
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Asymptotic 1% critical value for the KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// One point of a decay series: estimate with its standard error at `x`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FitPoint {
    pub x: f64,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    /// Decay rate `c` in `C e^{-c x}`.
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    /// Standard error of the fitted rate.
    pub rate_se: f64,
    /// Points that actually entered the fit (positive estimates only).
    pub points_used: usize,
}

#[derive(Error, Debug)]
pub enum FitError {
    #[error("need at least 3 positive estimates, got {0}; collect more replicas")]
    NotEnoughPositive(usize),
    #[error("degenerate fit: all abscissae equal")]
    DegenerateAbscissae,
}

/// Weighted least squares of `ln p` on `x` for the model `p = C e^{-c x}`.
///
/// Points with nonpositive estimates are dropped (their logs do not exist);
/// at least three positive points must remain. Weights are `(p/se)^2`, the
/// delta-method inverse variance of `ln p`; if any retained point has a
/// nonpositive or missing SE the fit falls back to uniform weights.
pub fn fit_exponential(points: &[FitPoint]) -> Result<FitResult, FitError> {
    let kept: Vec<&FitPoint> = points.iter().filter(|p| p.estimate > 0.0).collect();
    if kept.len() < 3 {
        return Err(FitError::NotEnoughPositive(kept.len()));
    }
    let uniform = kept.iter().any(|p| !(p.se > 0.0) || !p.se.is_finite());
    let data: Vec<(f64, f64, f64)> = kept
        .iter()
        .map(|p| {
            let w = if uniform { 1.0 } else { (p.estimate / p.se).powi(2) };
            (p.x, p.estimate.ln(), w)
        })
        .collect();
    let sw: f64 = data.iter().map(|d| d.2).sum();
    let xbar = data.iter().map(|d| d.0 * d.2).sum::<f64>() / sw;
    let ybar = data.iter().map(|d| d.1 * d.2).sum::<f64>() / sw;
    let sxx: f64 = data.iter().map(|d| d.2 * (d.0 - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(FitError::DegenerateAbscissae);
    }
    let sxy: f64 = data.iter().map(|d| d.2 * (d.0 - xbar) * (d.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = data
        .iter()
        .map(|d| d.2 * (d.1 - intercept - slope * d.0).powi(2))
        .sum();
    let ss_tot: f64 = data.iter().map(|d| d.2 * (d.1 - ybar).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let rate_se = if uniform {
        let dof = (data.len().max(3) - 2) as f64;
        (ss_res / dof / sxx).sqrt()
    } else {
        // weights are inverse variances of ln p
        (1.0 / sxx).sqrt()
    };
    Ok(FitResult {
        rate: -slope,
        prefactor: intercept.exp(),
        r_squared,
        rate_se,
        points_used: data.len(),
    })
}

/// Unweighted log-linear slope over positive points; `None` when fewer than
/// two positive points exist. Used for tail-slope diagnostics where rare
/// bins carry most of the signal and inverse-variance weighting would drown
/// them out.
pub fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|&(x, p)| (x, p.ln()))
        .collect();
    if data.len() < 2 {
        return None;
    }
    let n = data.len() as f64;
    let xbar = data.iter().map(|d| d.0).sum::<f64>() / n;
    let ybar = data.iter().map(|d| d.1).sum::<f64>() / n;
    let sxx: f64 = data.iter().map(|d| (d.0 - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = data.iter().map(|d| (d.0 - xbar) * (d.1 - ybar)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    #[test]
    fn exact_log_linear_series_is_recovered() {
        let points: Vec<FitPoint> = (1..=6)
            .map(|i| {
                let t = i as f64;
                FitPoint { x: t, estimate: 2.0 * (-0.5 * t).exp(), se: 0.0 }
            })
            .collect();
        let fit = fit_exponential(&points).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-9, "rate {}", fit.rate);
        assert!((fit.prefactor - 2.0).abs() < 1e-9, "prefactor {}", fit.prefactor);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn constant_series_has_zero_rate() {
        let points: Vec<FitPoint> =
            (0..5).map(|i| FitPoint { x: i as f64, estimate: 0.25, se: 0.01 }).collect();
        let fit = fit_exponential(&points).unwrap();
        assert!(fit.rate.abs() < 1e-12);
    }

    #[test]
    fn nonpositive_points_are_dropped_and_counted() {
        let points = vec![
            FitPoint { x: 1.0, estimate: 0.5, se: 0.01 },
            FitPoint { x: 2.0, estimate: 0.0, se: 0.01 },
            FitPoint { x: 3.0, estimate: 0.1, se: 0.01 },
        ];
        match fit_exponential(&points) {
            Err(FitError::NotEnoughPositive(2)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn noisy_binomial_series_recovers_rate_within_three_se() {
        // simulate the fitter on binomial estimates of a known decay
        let c = 0.3;
        let prefactor = 0.8;
        let n = 100_000usize;
        let mut rng = StreamRng::new(2024);
        let points: Vec<FitPoint> = (1..=8)
            .map(|i| {
                let t = i as f64 * 2.0;
                let p = prefactor * (-c * t).exp();
                let mut hits = 0usize;
                for _ in 0..n {
                    if rng.next_bool(p) {
                        hits += 1;
                    }
                }
                let p_hat = hits as f64 / n as f64;
                FitPoint { x: t, estimate: p_hat, se: binomial_se(p_hat, n) }
            })
            .collect();
        let fit = fit_exponential(&points).unwrap();
        assert!(
            (fit.rate - c).abs() <= 3.0 * fit.rate_se,
            "rate {} +- {} vs {}",
            fit.rate,
            fit.rate_se,
            c
        );
    }

    #[test]
    fn ks_accepts_the_true_distribution() {
        let mut rng = StreamRng::new(5);
        let mut xs: Vec<f64> = (0..20_000).map(|_| rng.next_f64()).collect();
        xs.sort_by(f64::total_cmp);
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d < ks_critical_1pct(xs.len()));
    }

    #[test]
    fn log_slope_ignores_zero_bins() {
        let pts = [(0.0, 1.0), (1.0, 0.1), (2.0, 0.0), (3.0, 0.001)];
        let s = log_slope(&pts).unwrap();
        assert!((s - (0.001f64.ln() / 3.0)).abs() < 0.12, "slope {s}");
    }
}
