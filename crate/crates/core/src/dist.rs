//! Empirical survival functions and tail fits.
//!
//! The survival function is rank based, `S(x) = #{X > x} / N`, evaluated at
//! every distinct sample value. Tail exponents come from the Hill
//! (maximum-likelihood) estimator over a fixed top fraction of the sample;
//! the body of volume distributions is fitted with a stretched exponential
//! `S(x) = exp(−(x/scale)^η)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

/// Hill fits on fewer tail points are refused.
pub const MIN_TAIL_POINTS: usize = 50;
/// Stretched-exponential fits need at least this many points in range.
pub const MIN_STRETCHED_POINTS: usize = 100;
/// Grid size for group-averaged survival functions.
pub const GROUP_GRID_POINTS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("empirical cdf needs at least 2 finite values, got {0}")]
    TooFewValues(usize),
    #[error("negative or non-finite value {0} in a non-negative sample")]
    InvalidValue(f64),
    #[error("tail fraction must lie in (0, 1], got {0}")]
    TailFraction(f64),
    #[error("tail holds {found} points, need at least {need}")]
    InsufficientTail { found: usize, need: usize },
    #[error("cdf carries no sample counts (built from points or averaged)")]
    NoSample,
    #[error("fit range [{lo}, {hi}] holds {found} usable points, need at least {need}")]
    InsufficientRange { lo: f64, hi: f64, found: usize, need: usize },
    #[error("stretched-exponential fit did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("no cdfs to average")]
    Empty,
    #[error("invalid cdf points: {0}")]
    InvalidPoints(String),
}

pub type Result<T> = std::result::Result<T, DistError>;

/// Survival function `P(X > x)` at each distinct value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    /// Distinct abscissae, ascending.
    pub values: Vec<f64>,
    /// `P(X > values[i])`, non-increasing.
    pub survival: Vec<f64>,
    /// Multiplicity of each value when built from a sample.
    counts: Option<Vec<u64>>,
}

impl EmpiricalCdf {
    /// Build from a non-negative sample.
    pub fn from_sample(sample: &[f64]) -> Result<Self> {
        if let Some(bad) = sample.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(DistError::InvalidValue(*bad));
        }
        Self::build(sample)
    }

    /// Build from a sample that may hold negative values, such as a centred
    /// volume series. Survival is still relative to the whole sample; log-log
    /// fits only see the positive part.
    pub fn from_signed_sample(sample: &[f64]) -> Result<Self> {
        if let Some(bad) = sample.iter().find(|v| !v.is_finite()) {
            return Err(DistError::InvalidValue(*bad));
        }
        Self::build(sample)
    }

    fn build(sample: &[f64]) -> Result<Self> {
        if sample.len() < 2 {
            return Err(DistError::TooFewValues(sample.len()));
        }
        let sorted = stats::sorted(sample);
        let n = sorted.len() as f64;
        let mut values = Vec::new();
        let mut counts = Vec::new();
        for &v in &sorted {
            if values.last() == Some(&v) {
                *counts.last_mut().unwrap() += 1;
            } else {
                values.push(v);
                counts.push(1u64);
            }
        }
        let mut above = sorted.len() as u64;
        let survival = counts
            .iter()
            .map(|c| {
                above -= c;
                above as f64 / n
            })
            .collect();
        Ok(Self {
            values,
            survival,
            counts: Some(counts),
        })
    }

    /// Build from explicit `(x, S(x))` points, e.g. an analytic survival
    /// function. `x` must be strictly increasing and `S` non-increasing in
    /// `[0, 1]`.
    pub fn from_points(values: Vec<f64>, survival: Vec<f64>) -> Result<Self> {
        if values.len() != survival.len() {
            return Err(DistError::InvalidPoints("length mismatch".into()));
        }
        if !values.windows(2).all(|w| w[0] < w[1]) {
            return Err(DistError::InvalidPoints("abscissae must be strictly increasing".into()));
        }
        if !survival.windows(2).all(|w| w[1] <= w[0]) || survival.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(DistError::InvalidPoints("survival must be non-increasing within [0, 1]".into()));
        }
        Ok(Self {
            values,
            survival,
            counts: None,
        })
    }

    pub fn sample_size(&self) -> Option<u64> {
        self.counts.as_ref().map(|c| c.iter().sum())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Step-function evaluation of `P(X > x)`.
    pub fn survival_at(&self, x: f64) -> f64 {
        // number of distinct values ≤ x
        let k = self.values.partition_point(|v| *v <= x);
        if k == 0 {
            // below the smallest value: everything with positive mass is above
            match &self.counts {
                Some(_) => 1.0,
                None => self.survival.first().copied().unwrap_or(1.0),
            }
        } else {
            self.survival[k - 1]
        }
    }

    /// Points with `x > 0` and `S(x) > 0`, for log-log work.
    pub fn positive_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.survival)
            .filter(|(x, s)| **x > 0.0 && **s > 0.0)
            .map(|(x, s)| (*x, *s))
    }

    /// Sample values in descending order, multiplicities expanded, up to `k`.
    fn top_values(&self, k: usize) -> Result<Vec<f64>> {
        let counts = self.counts.as_ref().ok_or(DistError::NoSample)?;
        let mut out = Vec::with_capacity(k);
        for (v, c) in self.values.iter().zip(counts).rev() {
            for _ in 0..*c {
                if out.len() == k {
                    return Ok(out);
                }
                out.push(*v);
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,survival")?;
        for (x, s) in self.values.iter().zip(&self.survival) {
            writeln!(out, "{x},{s}")?;
        }
        Ok(())
    }
}

/// Power-law tail `P(X > x) ~ x^−exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub exponent: f64,
    /// Smallest value retained in the tail.
    pub xmin: f64,
    pub n_tail: usize,
    /// Asymptotic standard error `exponent / sqrt(n_tail)`.
    pub stderr: f64,
    /// Exponent below 2: infinite variance.
    pub levy_regime: bool,
    /// Hill estimates at the tail fraction and its halvings, while the tail
    /// still holds enough points.
    pub hill_plot: Vec<(f64, f64)>,
    /// False when the Hill estimates drift across `hill_plot` by more than
    /// three combined standard errors.
    pub power_law_stable: bool,
}

fn hill(top: &[f64], k: usize) -> Result<f64> {
    // top is descending and holds at least k + 1 values
    let threshold = top[k];
    if !(threshold > 0.0) {
        return Err(DistError::InvalidValue(threshold));
    }
    let sum: f64 = top[..k].iter().map(|x| (x / threshold).ln()).sum();
    Ok(k as f64 / sum)
}

/// Hill estimator over the top `tail_fraction` of the sample: with the k
/// largest values x₍₁₎ ≥ … ≥ x₍ₖ₎ and threshold x₍ₖ₊₁₎,
/// `γ = k / Σ ln(x₍ᵢ₎ / x₍ₖ₊₁₎)`.
pub fn fit_tail_exponent(cdf: &EmpiricalCdf, tail_fraction: f64) -> Result<TailFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(DistError::TailFraction(tail_fraction));
    }
    let n = cdf.sample_size().ok_or(DistError::NoSample)? as usize;
    let k = ((tail_fraction * n as f64).floor() as usize).min(n.saturating_sub(1));
    if k < MIN_TAIL_POINTS {
        return Err(DistError::InsufficientTail {
            found: k,
            need: MIN_TAIL_POINTS,
        });
    }
    let top = cdf.top_values(k + 1)?;
    let exponent = hill(&top, k)?;
    let stderr = exponent / (k as f64).sqrt();

    let mut hill_plot = vec![(tail_fraction, exponent)];
    let mut kk = k / 2;
    let mut frac = tail_fraction / 2.0;
    while kk >= MIN_TAIL_POINTS && hill_plot.len() < 3 {
        hill_plot.push((frac, hill(&top, kk)?));
        kk /= 2;
        frac /= 2.0;
    }
    let (f_last, g_last) = *hill_plot.last().unwrap();
    let k_last = ((f_last * n as f64).floor() as usize).max(1);
    let se_last = g_last / (k_last as f64).sqrt();
    let power_law_stable = (g_last - exponent).abs() <= 3.0 * (stderr * stderr + se_last * se_last).sqrt();

    Ok(TailFit {
        exponent,
        xmin: top[k - 1],
        n_tail: k,
        stderr,
        levy_regime: exponent < 2.0,
        hill_plot,
        power_law_stable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchedExpFit {
    pub eta: f64,
    pub scale: f64,
    /// Sum of squared residuals in ln S.
    pub sse: f64,
    pub n_points: usize,
    pub iterations: usize,
}

fn points_in_range(cdf: &EmpiricalCdf, range: (f64, f64), need: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = range;
    let (x, s): (Vec<f64>, Vec<f64>) = cdf
        .positive_points()
        .filter(|(x, s)| *x >= lo && *x <= hi && *s < 1.0)
        .unzip();
    if x.len() < need {
        return Err(DistError::InsufficientRange {
            lo,
            hi,
            found: x.len(),
            need,
        });
    }
    Ok((x, s))
}

const STRETCHED_MAX_ITER: usize = 200;

/// Least-squares fit of `ln S(x) = −(x/scale)^η` over `range`
/// (Levenberg–Marquardt on `(η, ln scale)`, started from the double-log
/// linearization).
pub fn fit_stretched_exponential(cdf: &EmpiricalCdf, range: (f64, f64)) -> Result<StretchedExpFit> {
    let (x, s) = points_in_range(cdf, range, MIN_STRETCHED_POINTS)?;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = s.iter().map(|v| v.ln()).collect();

    // ln(−ln S) = η ln x − η ln scale
    let yy: Vec<f64> = y.iter().map(|v| (-v).ln()).collect();
    let start = stats::fit_line(&lx, &yy).ok_or(DistError::InsufficientRange {
        lo: range.0,
        hi: range.1,
        found: 1,
        need: MIN_STRETCHED_POINTS,
    })?;
    let mut eta = start.slope.max(1e-3);
    let mut log_scale = -start.intercept / eta;

    let residuals = |eta: f64, ls: f64| -> (f64, Vec<f64>, Vec<[f64; 2]>) {
        let mut sse = 0.0;
        let mut r = Vec::with_capacity(lx.len());
        let mut jac = Vec::with_capacity(lx.len());
        for (l, yi) in lx.iter().zip(&y) {
            let u = (eta * (l - ls)).exp(); // (x/scale)^η
            let ri = yi + u;
            sse += ri * ri;
            r.push(ri);
            jac.push([u * (l - ls), -u * eta]);
        }
        (sse, r, jac)
    };

    let (mut sse, mut r, mut jac) = residuals(eta, log_scale);
    let mut lambda = 1e-3;
    for iter in 1..=STRETCHED_MAX_ITER {
        let mut a = [[0.0f64; 2]; 2];
        let mut g = [0.0f64; 2];
        for (ri, ji) in r.iter().zip(&jac) {
            for p in 0..2 {
                g[p] += ji[p] * ri;
                for q in 0..2 {
                    a[p][q] += ji[p] * ji[q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let m00 = a[0][0] * (1.0 + lambda);
            let m11 = a[1][1] * (1.0 + lambda);
            let det = m00 * m11 - a[0][1] * a[1][0];
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let d_eta = -(m11 * g[0] - a[0][1] * g[1]) / det;
            let d_ls = -(m00 * g[1] - a[1][0] * g[0]) / det;
            let cand_eta = eta + d_eta;
            if cand_eta <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            let (cand_sse, cand_r, cand_jac) = residuals(cand_eta, log_scale + d_ls);
            if cand_sse.is_finite() && cand_sse <= sse {
                let converged = (sse - cand_sse) <= 1e-14 * sse.max(1e-300) + 1e-300
                    && d_eta.abs() < 1e-10 * eta.max(1.0);
                eta = cand_eta;
                log_scale += d_ls;
                sse = cand_sse;
                r = cand_r;
                jac = cand_jac;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if converged || sse == 0.0 {
                    return Ok(StretchedExpFit {
                        eta,
                        scale: log_scale.exp(),
                        sse,
                        n_points: x.len(),
                        iterations: iter,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No descent direction left: at a minimum up to rounding.
            return Ok(StretchedExpFit {
                eta,
                scale: log_scale.exp(),
                sse,
                n_points: x.len(),
                iterations: iter,
            });
        }
    }
    Err(DistError::NoConvergence(STRETCHED_MAX_ITER))
}

/// Straight-line fit of `ln S` against `ln x` over `range`, the power-law
/// counterpart used for model comparison with [`fit_stretched_exponential`].
pub fn fit_power_law_survival(cdf: &EmpiricalCdf, range: (f64, f64)) -> Result<stats::LineFit> {
    let (x, s) = points_in_range(cdf, range, 2)?;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    stats::fit_line(&lx, &ly).ok_or(DistError::InsufficientRange {
        lo: range.0,
        hi: range.1,
        found: x.len(),
        need: 2,
    })
}

/// Vertical average: mean survival of all inputs on a shared 200-point
/// log-spaced grid spanning their positive values.
pub fn group_average_cdf(cdfs: &[EmpiricalCdf]) -> Result<EmpiricalCdf> {
    if cdfs.is_empty() {
        return Err(DistError::Empty);
    }
    let lo = cdfs
        .iter()
        .filter_map(|c| c.values.iter().copied().find(|v| *v > 0.0))
        .fold(f64::INFINITY, f64::min);
    let hi = cdfs
        .iter()
        .filter_map(|c| c.values.last().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(DistError::InvalidPoints("inputs have no positive range".into()));
    }
    let grid = stats::log_grid(lo, hi, GROUP_GRID_POINTS);
    let n = cdfs.len() as f64;
    let survival: Vec<f64> = grid
        .iter()
        .map(|x| cdfs.iter().map(|c| c.survival_at(*x)).sum::<f64>() / n)
        .collect();
    EmpiricalCdf::from_points(grid, survival)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survival_by_rank() {
        let cdf = EmpiricalCdf::from_sample(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(cdf.values, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cdf.survival, vec![0.75, 0.5, 0.25, 0.0]);
        assert_eq!(cdf.survival_at(2.0), 0.5);
        assert_eq!(cdf.survival_at(0.5), 1.0);
    }

    #[test]
    fn ties_share_the_lower_value() {
        let cdf = EmpiricalCdf::from_sample(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(cdf.survival, vec![0.75, 0.25, 0.0]);
        let flat = EmpiricalCdf::from_sample(&[5.0; 10]).unwrap();
        assert_eq!(flat.len(), 1);
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(matches!(EmpiricalCdf::from_sample(&[1.0]), Err(DistError::TooFewValues(1))));
        assert!(EmpiricalCdf::from_sample(&[]).is_err());
        assert!(matches!(
            EmpiricalCdf::from_sample(&[1.0, -1.0]),
            Err(DistError::InvalidValue(_))
        ));
    }

    #[test]
    fn hill_refuses_short_tails() {
        let sample: Vec<f64> = (1..=1000).map(f64::from).collect();
        let cdf = EmpiricalCdf::from_sample(&sample).unwrap();
        assert!(matches!(
            fit_tail_exponent(&cdf, 0.01),
            Err(DistError::InsufficientTail { found: 10, .. })
        ));
        assert!(fit_tail_exponent(&cdf, 0.05).is_ok());
        assert!(matches!(fit_tail_exponent(&cdf, 0.0), Err(DistError::TailFraction(_))));
    }

    #[test]
    fn hill_needs_a_sample() {
        let cdf = EmpiricalCdf::from_points(vec![1.0, 2.0], vec![0.5, 0.25]).unwrap();
        assert_eq!(fit_tail_exponent(&cdf, 0.5), Err(DistError::NoSample));
    }

    #[test]
    fn stretched_fit_on_exact_exponential() {
        let x: Vec<f64> = (1..=400).map(|i| i as f64 * 0.02).collect();
        let s: Vec<f64> = x.iter().map(|v| (-v).exp()).collect();
        let cdf = EmpiricalCdf::from_points(x, s).unwrap();
        let fit = fit_stretched_exponential(&cdf, (0.0, 10.0)).unwrap();
        assert!((fit.eta - 1.0).abs() < 0.02, "{fit:?}");
        assert!((fit.scale - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stretched_fit_needs_points() {
        let x: Vec<f64> = (1..=50).map(f64::from).collect();
        let s: Vec<f64> = x.iter().map(|v| (-v / 100.0).exp()).collect();
        let cdf = EmpiricalCdf::from_points(x, s).unwrap();
        assert!(matches!(
            fit_stretched_exponential(&cdf, (0.0, 100.0)),
            Err(DistError::InsufficientRange { .. })
        ));
    }

    #[test]
    fn averaging_identical_cdfs_is_identity_on_grid() {
        let cdf = EmpiricalCdf::from_sample(&[1.0, 2.0, 3.0, 5.0, 8.0]).unwrap();
        let avg = group_average_cdf(&[cdf.clone(), cdf.clone()]).unwrap();
        let single = group_average_cdf(&[cdf.clone()]).unwrap();
        assert_eq!(avg, single);
        for (x, s) in avg.values.iter().zip(&avg.survival) {
            assert_eq!(*s, cdf.survival_at(*x));
        }
        assert_eq!(group_average_cdf(&[]), Err(DistError::Empty));
    }
}
