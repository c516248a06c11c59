//! Small numerical helpers shared by the analysis modules.

use serde::{Deserialize, Serialize};

/// Arithmetic mean. Returns NaN for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean and population standard deviation (divide by N).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mu = mean(values);
    let var = values.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / values.len() as f64;
    (mu, var.sqrt())
}

/// Quantile with linear interpolation between order statistics
/// (position `(n - 1) * p` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Sort a copy of `values` ascending (NaNs last).
pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Sum of squared residuals.
    pub sse: f64,
    pub n: usize,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Least-squares line through `(x, y)`. Needs at least two points with
/// distinct abscissae; returns `None` otherwise.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = mean(&x[..n]);
    let my = mean(&y[..n]);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = (0..n)
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(LineFit {
        slope,
        intercept,
        r2,
        sse,
        n,
    })
}

/// `count` log-spaced integers per decade in `[lo, hi]`, deduplicated and
/// ascending. Both ends are included.
pub fn log_spaced_integers(lo: usize, hi: usize, per_decade: usize) -> Vec<usize> {
    if lo == 0 || hi < lo || per_decade == 0 {
        return Vec::new();
    }
    let l0 = (lo as f64).log10();
    let l1 = (hi as f64).log10();
    let steps = ((l1 - l0) * per_decade as f64).ceil() as usize;
    let mut out: Vec<usize> = (0..=steps)
        .map(|k| {
            let v = 10f64.powf(l0 + k as f64 / per_decade as f64).round() as usize;
            v.clamp(lo, hi)
        })
        .collect();
    out.push(hi);
    out.sort_unstable();
    out.dedup();
    out
}

/// `count` log-spaced reals in `[lo, hi]`, both ends included.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let l0 = lo.ln();
            let step = (hi.ln() - l0) / (count - 1) as f64;
            let mut g: Vec<f64> = (0..count).map(|k| (l0 + step * k as f64).exp()).collect();
            g[0] = lo;
            g[count - 1] = hi;
            g
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_use_linear_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.75), 3.25);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = fit_line(&x, &y).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit_line(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn log_spaced_integers_cover_ends() {
        let s = log_spaced_integers(10, 1000, 20);
        assert_eq!(s.first(), Some(&10));
        assert_eq!(s.last(), Some(&1000));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.len(), 41);
    }
}
