//! Autocorrelation of (absolute) normalized returns and detection of lag
//! ranges with power-law decay.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

/// Lags per decade of the log-spaced lag grid.
pub const LAGS_PER_DECADE: usize = 30;
/// Minimum R² of a log-log segment.
pub const MIN_RANGE_R2: f64 = 0.98;
/// Minimum span of an accepted range, in decades of τ.
pub const MIN_RANGE_DECADES: f64 = 0.5;
/// Base tolerance (natural-log units) for extending a segment by one lag.
const EXTEND_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcfError {
    #[error("max lag {max_lag} too large for {len} points (need len > 10 * max_lag)")]
    MaxLagTooLarge { max_lag: usize, len: usize },
    #[error("series has zero variance")]
    Degenerate,
    #[error("max lag must be at least 1")]
    ZeroLag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfResult {
    /// Lag grid in samples, starting at 0.
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    /// Half-width of the 95% band for an uncorrelated series, 1.96/√N.
    pub noise_level: f64,
    pub len: usize,
}

impl AcfResult {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tau,c")?;
        for (t, c) in self.lags.iter().zip(&self.values) {
            writeln!(out, "{t},{c}")?;
        }
        Ok(())
    }
}

/// Lag 0 followed by 30 log-spaced integer lags per decade up to `max_lag`.
pub fn lag_grid(max_lag: usize) -> Vec<usize> {
    let mut lags = vec![0];
    lags.extend(stats::log_spaced_integers(1, max_lag, LAGS_PER_DECADE));
    lags
}

/// `C(τ)` on the log-spaced lag grid.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<AcfResult, AcfError> {
    if max_lag == 0 {
        return Err(AcfError::ZeroLag);
    }
    if series.len() <= 10 * max_lag {
        return Err(AcfError::MaxLagTooLarge {
            max_lag,
            len: series.len(),
        });
    }
    autocorrelation_at(series, &lag_grid(max_lag))
}

/// `C(τ) = ⟨x(t) x(t−τ)⟩ / ⟨x²⟩` on demeaned data with the biased (1/N)
/// normalization, at the requested lags.
pub fn autocorrelation_at(series: &[f64], lags: &[usize]) -> Result<AcfResult, AcfError> {
    let n = series.len();
    if let Some(&max_lag) = lags.iter().max() {
        if max_lag >= n {
            return Err(AcfError::MaxLagTooLarge { max_lag, len: n });
        }
    }
    let mu = stats::mean(series);
    let x: Vec<f64> = series.iter().map(|v| v - mu).collect();
    let c0: f64 = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return Err(AcfError::Degenerate);
    }
    let values = lags
        .par_iter()
        .map(|&tau| {
            if tau == 0 {
                return 1.0;
            }
            let c: f64 = x[tau..].iter().zip(&x[..n - tau]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            c / c0
        })
        .collect();
    Ok(AcfResult {
        lags: lags.to_vec(),
        values,
        noise_level: 1.96 / (n as f64).sqrt(),
        len: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawRange {
    pub tau_lo: usize,
    pub tau_hi: usize,
    pub slope: f64,
    pub r2: f64,
}

impl PowerLawRange {
    pub fn decades(&self) -> f64 {
        (self.tau_hi as f64 / self.tau_lo as f64).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawScan {
    pub ranges: Vec<PowerLawRange>,
    /// First lag where C(τ) drops inside the noise band.
    pub significance_exit: Option<usize>,
    /// First lag where C(τ) ≤ 0.
    pub zero_crossing: Option<usize>,
}

/// Greedy segmentation of `ln C` against `ln τ` over significant lags.
///
/// A segment starts from three consecutive points and grows one lag at a
/// time while the next point lies within tolerance of the current line and
/// the segment R² stays ≥ 0.98. The tolerance is 0.05 in `ln C` plus three
/// times the sampling error of that point. Segments spanning at least half a
/// decade are accepted; the next segment starts at the last accepted lag.
pub fn detect_power_law_ranges(acf: &AcfResult) -> PowerLawScan {
    let significance_exit = acf
        .lags
        .iter()
        .zip(&acf.values)
        .find(|(t, c)| **t > 0 && **c <= acf.noise_level)
        .map(|(t, _)| *t);
    let zero_crossing = acf
        .lags
        .iter()
        .zip(&acf.values)
        .find(|(t, c)| **t > 0 && **c <= 0.0)
        .map(|(t, _)| *t);

    // Candidate points: τ ≥ 1 and above the noise band, up to the first exit.
    let sigma = acf.noise_level / 1.96;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut tol = Vec::new();
    let mut taus = Vec::new();
    for (&t, &c) in acf.lags.iter().zip(&acf.values) {
        if t == 0 {
            continue;
        }
        if c <= acf.noise_level {
            break;
        }
        taus.push(t);
        x.push((t as f64).ln());
        y.push(c.ln());
        tol.push(EXTEND_TOLERANCE + 3.0 * sigma / c);
    }

    let mut ranges = Vec::new();
    let n = x.len();
    let mut start = 0;
    while start + 3 <= n {
        let mut end = start + 3; // exclusive
        let mut fit = match stats::fit_line(&x[start..end], &y[start..end]) {
            Some(f) if f.r2 >= MIN_RANGE_R2 => f,
            _ => {
                start += 1;
                continue;
            }
        };
        while end < n {
            if (y[end] - fit.predict(x[end])).abs() > tol[end] {
                break;
            }
            match stats::fit_line(&x[start..=end], &y[start..=end]) {
                Some(f) if f.r2 >= MIN_RANGE_R2 => {
                    fit = f;
                    end += 1;
                }
                _ => break,
            }
        }
        let range = PowerLawRange {
            tau_lo: taus[start],
            tau_hi: taus[end - 1],
            slope: fit.slope,
            r2: fit.r2,
        };
        if range.decades() >= MIN_RANGE_DECADES {
            ranges.push(range);
            start = end - 1;
        } else {
            start += 1;
        }
    }
    PowerLawScan {
        ranges,
        significance_exit,
        zero_crossing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact(lags: Vec<usize>, f: impl Fn(f64) -> f64) -> AcfResult {
        let values = lags.iter().map(|&t| if t == 0 { 1.0 } else { f(t as f64) }).collect();
        AcfResult {
            lags,
            values,
            noise_level: 1e-9,
            len: usize::MAX,
        }
    }

    #[test]
    fn lag_zero_is_one() {
        let x: Vec<f64> = (0..500).map(|i| ((i * 7919) % 101) as f64).collect();
        let acf = autocorrelation(&x, 20).unwrap();
        assert_eq!(acf.lags[0], 0);
        assert_eq!(acf.values[0], 1.0);
        assert!(acf.values.iter().all(|c| c.abs() <= 1.0));
    }

    #[test]
    fn first_decade_has_every_integer_lag() {
        let g = lag_grid(100);
        assert_eq!(&g[..11], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        assert_eq!(*g.last().unwrap(), 100);
    }

    #[test]
    fn rejects_large_lags() {
        let x = vec![1.0, 2.0, 3.0];
        assert!(matches!(autocorrelation(&x, 1), Err(AcfError::MaxLagTooLarge { .. })));
        assert!(matches!(autocorrelation(&x, 0), Err(AcfError::ZeroLag)));
        assert!(matches!(autocorrelation(&vec![1.0; 100], 2), Err(AcfError::Degenerate)));
    }

    #[test]
    fn pure_power_law_is_one_range() {
        let acf = exact(lag_grid(10_000), |t| t.powf(-0.3));
        let scan = detect_power_law_ranges(&acf);
        assert_eq!(scan.ranges.len(), 1, "{scan:?}");
        let r = &scan.ranges[0];
        assert_eq!((r.tau_lo, r.tau_hi), (1, 10_000));
        assert!((r.slope + 0.3).abs() < 1e-9);
    }

    #[test]
    fn two_regimes_are_separated() {
        let acf = exact(lag_grid(10_000), |t| {
            if t <= 100.0 {
                t.powf(-0.2)
            } else {
                100f64.powf(-0.2) * (t / 100.0).powf(-0.6)
            }
        });
        let scan = detect_power_law_ranges(&acf);
        assert_eq!(scan.ranges.len(), 2, "{scan:?}");
        assert!((scan.ranges[0].slope + 0.2).abs() < 0.05);
        assert!((scan.ranges[1].slope + 0.6).abs() < 0.05);
        let brk = scan.ranges[1].tau_lo as f64;
        assert!((50.0..=200.0).contains(&brk), "break at {brk}");
    }

    #[test]
    fn exponential_decay_has_no_long_range() {
        let acf = exact(lag_grid(1000), |t| 0.5f64.powf(t));
        let scan = detect_power_law_ranges(&acf);
        assert!(scan.ranges.iter().all(|r| r.decades() < 1.0), "{scan:?}");
    }
}
