//! Multifractal detrended fluctuation and cross-correlation analysis.
//!
//! For a scale `s` the series is cut into `2⌊T/s⌋` non-overlapping segments,
//! `⌊T/s⌋` anchored at the start and `⌊T/s⌋` anchored at the end. Within each
//! segment the signal is integrated, a least-squares polynomial of degree `m`
//! is removed, and the detrended (co)variance `f²(s, ν)` is formed. The
//! q-th order fluctuation function is
//!
//! ```text
//! F_q(s) = { 1/M_s Σ_ν sgn(f²) |f²|^{q/2} }^{1/q}
//! ```
//!
//! with the sign factor only mattering for cross-covariances. `q = 0` uses
//! the logarithmic limit `exp(1/M_s Σ_ν ½ ln|f²|)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

/// Largest |q| accepted in a q grid.
pub const MAX_ABS_Q: f64 = 10.0;
/// Minimum number of segments per half (`s ≤ T/4`).
const MIN_SEGMENTS_PER_SIDE: usize = 4;
/// Tolerated |ρ| overshoot above 1 before it is treated as an error.
const RHO_CLIP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfError {
    #[error("invalid detrending config: {0}")]
    Config(String),
    #[error("scale {s} below minimum {min} for polynomial degree {degree}")]
    ScaleTooSmall { s: usize, min: usize, degree: usize },
    #[error("scale {s} exceeds T/4 = {max} for a series of length {len}")]
    ScaleTooLarge { s: usize, max: usize, len: usize },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("a singularity spectrum needs a univariate surface")]
    NotUnivariate,
    #[error("fit range [{lo}, {hi}] holds {found} scales, need at least {need}")]
    TooFewScales { lo: usize, hi: usize, found: usize, need: usize },
    #[error("fluctuation function undefined or non-positive at q = {q}, s = {s}")]
    NonPositive { q: f64, s: usize },
    #[error("|rho| = {value} exceeds 1 beyond tolerance at q = {q}, s = {s}")]
    RhoOvershoot { q: f64, s: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, MfError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetrendConfig {
    pub poly_degree: usize,
    /// Segment lengths, strictly ascending.
    pub scales: Vec<usize>,
    pub q_grid: Vec<f64>,
}

impl DetrendConfig {
    pub fn new(poly_degree: usize, scales: Vec<usize>, q_grid: Vec<f64>) -> Self {
        Self {
            poly_degree,
            scales,
            q_grid,
        }
    }

    /// Degree-2 detrending, 20 log-spaced scales per decade from 10 to T/4
    /// and q from −4 to 4 in steps of 0.25.
    pub fn for_length(len: usize) -> Self {
        Self {
            poly_degree: 2,
            scales: default_scales(len, 2, 20),
            q_grid: default_q_grid(),
        }
    }

    pub fn min_scale(&self) -> usize {
        self.poly_degree + 2
    }

    /// Check the config against a series of length `len`.
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.poly_degree == 0 {
            return Err(MfError::Config("polynomial degree must be at least 1".into()));
        }
        if self.scales.is_empty() {
            return Err(MfError::Config("no scales".into()));
        }
        if self.q_grid.is_empty() {
            return Err(MfError::Config("empty q grid".into()));
        }
        if !self.scales.windows(2).all(|w| w[0] < w[1]) {
            return Err(MfError::Config("scales must be strictly ascending".into()));
        }
        if let Some(q) = self.q_grid.iter().find(|q| !q.is_finite() || q.abs() > MAX_ABS_Q) {
            return Err(MfError::Config(format!("q = {q} outside [-{MAX_ABS_Q}, {MAX_ABS_Q}]")));
        }
        let min = self.min_scale();
        let max = len / MIN_SEGMENTS_PER_SIDE;
        for &s in &self.scales {
            check_scale(s, self.poly_degree, len)?;
            debug_assert!(s >= min && s <= max);
        }
        Ok(())
    }
}

/// 20-per-decade style grid from `10` (or the degree minimum) to `len / 4`.
pub fn default_scales(len: usize, degree: usize, per_decade: usize) -> Vec<usize> {
    let lo = 10.max(degree + 2);
    let hi = len / MIN_SEGMENTS_PER_SIDE;
    if hi < lo {
        return Vec::new();
    }
    stats::log_spaced_integers(lo, hi, per_decade)
}

pub fn default_q_grid() -> Vec<f64> {
    (-16..=16).map(|k| k as f64 * 0.25).collect()
}

fn check_scale(s: usize, degree: usize, len: usize) -> Result<()> {
    let min = degree + 2;
    if s < min {
        return Err(MfError::ScaleTooSmall { s, min, degree });
    }
    let max = len / MIN_SEGMENTS_PER_SIDE;
    if s > max {
        return Err(MfError::ScaleTooLarge { s, max, len });
    }
    Ok(())
}

/// Start offsets of the `2⌊len/s⌋` segments: first the ones anchored at the
/// beginning, then the ones anchored at the end, each group left to right.
pub fn segment_starts(len: usize, s: usize) -> Vec<usize> {
    let per_side = len / s;
    let offset = len % s;
    (0..per_side)
        .map(|v| v * s)
        .chain((0..per_side).map(|v| offset + v * s))
        .collect()
}

/// Orthonormal polynomial basis of degree ≤ m over the points 1..=s.
struct PolyBasis {
    cols: Vec<Vec<f64>>,
}

impl PolyBasis {
    fn new(s: usize, degree: usize) -> Self {
        let centre = (s as f64 + 1.0) / 2.0;
        let half = (s as f64 - 1.0).max(1.0) / 2.0;
        let x: Vec<f64> = (1..=s).map(|j| (j as f64 - centre) / half).collect();
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(degree + 1);
        for k in 0..=degree {
            let mut v: Vec<f64> = x.iter().map(|xi| xi.powi(k as i32)).collect();
            // Two Gram-Schmidt passes keep the basis orthogonal to rounding.
            for _ in 0..2 {
                for c in &cols {
                    let d = dot(c, &v);
                    axpy(-d, c, &mut v);
                }
            }
            let norm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|e| *e /= norm);
            cols.push(v);
        }
        Self { cols }
    }

    fn remove_trend(&self, y: &mut [f64]) {
        for c in &self.cols {
            let d = dot(c, y);
            axpy(-d, c, y);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Integrate `x` over one segment and remove the polynomial trend.
fn detrended_profile(x: &[f64], basis: &PolyBasis, out: &mut [f64]) {
    let mut acc = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        acc += v;
        *o = acc;
    }
    basis.remove_trend(out);
}

/// Residuals of one segment after integration and detrending.
#[derive(Debug, Clone, PartialEq)]
pub struct DetrendedSegment {
    pub start: usize,
    pub residuals: Vec<f64>,
}

/// Segment-wise integrated and detrended profile of `series` at scale `s`.
pub fn profile_and_detrend(series: &[f64], s: usize, degree: usize) -> Result<Vec<DetrendedSegment>> {
    check_scale(s, degree, series.len())?;
    let basis = PolyBasis::new(s, degree);
    Ok(segment_starts(series.len(), s)
        .into_iter()
        .map(|start| {
            let mut residuals = vec![0.0; s];
            detrended_profile(&series[start..start + s], &basis, &mut residuals);
            DetrendedSegment { start, residuals }
        })
        .collect())
}

fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / a.len() as f64
}

/// Per-segment detrended variances of one series at scale `s`.
pub fn segment_variances(x: &[f64], s: usize, degree: usize) -> Vec<f64> {
    let basis = PolyBasis::new(s, degree);
    let mut buf = vec![0.0; s];
    segment_starts(x.len(), s)
        .into_iter()
        .map(|start| {
            detrended_profile(&x[start..start + s], &basis, &mut buf);
            mean_product(&buf, &buf)
        })
        .collect()
}

/// Per-segment detrended variances and covariance of two series at scale `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMoments {
    pub aa: Vec<f64>,
    pub bb: Vec<f64>,
    pub ab: Vec<f64>,
}

pub fn segment_moments(a: &[f64], b: &[f64], s: usize, degree: usize) -> SegmentMoments {
    let basis = PolyBasis::new(s, degree);
    let mut ra = vec![0.0; s];
    let mut rb = vec![0.0; s];
    let starts = segment_starts(a.len(), s);
    let mut out = SegmentMoments {
        aa: Vec::with_capacity(starts.len()),
        bb: Vec::with_capacity(starts.len()),
        ab: Vec::with_capacity(starts.len()),
    };
    for start in starts {
        detrended_profile(&a[start..start + s], &basis, &mut ra);
        detrended_profile(&b[start..start + s], &basis, &mut rb);
        out.aa.push(mean_product(&ra, &ra));
        out.bb.push(mean_product(&rb, &rb));
        out.ab.push(mean_product(&ra, &rb));
    }
    out
}

/// `F_q` from segment variances. Zero-variance segments are dropped for
/// `q ≤ 0` and counted in the second return value. Returns `None` when no
/// segment is usable or the result is not positive.
pub fn univariate_fq(f2: &[f64], q: f64) -> (Option<f64>, usize) {
    if q > 0.0 {
        let total: f64 = if q == 2.0 {
            f2.iter().sum()
        } else {
            f2.iter().map(|v| v.powf(q / 2.0)).sum()
        };
        let value = (total / f2.len() as f64).powf(1.0 / q);
        return (Some(value).filter(|v| *v > 0.0 && v.is_finite()), 0);
    }
    let usable: Vec<f64> = f2.iter().copied().filter(|v| *v > 0.0).collect();
    let excluded = f2.len() - usable.len();
    if usable.is_empty() {
        return (None, excluded);
    }
    let m = usable.len() as f64;
    let value = if q == 0.0 {
        (usable.iter().map(|v| 0.5 * v.ln()).sum::<f64>() / m).exp()
    } else {
        (usable.iter().map(|v| v.powf(q / 2.0)).sum::<f64>() / m).powf(1.0 / q)
    };
    (Some(value).filter(|v| *v > 0.0 && v.is_finite()), excluded)
}

/// Signed `F_q` from segment covariances. The q-th root keeps the sign of the
/// segment average. For `q = 0` the magnitude is the logarithmic limit and
/// the sign follows the majority of segment signs (ties count as positive).
pub fn bivariate_fq(f2: &[f64], q: f64) -> (Option<f64>, usize) {
    let usable: Vec<f64> = if q > 0.0 {
        f2.to_vec()
    } else {
        f2.iter().copied().filter(|v| *v != 0.0).collect()
    };
    let excluded = f2.len() - usable.len();
    if usable.is_empty() {
        return (None, excluded);
    }
    let m = usable.len() as f64;
    let value = if q == 0.0 {
        let magnitude = (usable.iter().map(|v| 0.5 * v.abs().ln()).sum::<f64>() / m).exp();
        let votes: i64 = usable.iter().map(|v| if *v > 0.0 { 1 } else { -1 }).sum();
        if votes >= 0 {
            magnitude
        } else {
            -magnitude
        }
    } else {
        let avg = usable.iter().map(|v| v.signum() * v.abs().powf(q / 2.0)).sum::<f64>() / m;
        avg.signum() * avg.abs().powf(1.0 / q)
    };
    (Some(value).filter(|v| v.is_finite()), excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    /// Detrended variance of one series; entries are positive.
    Univariate,
    /// Detrended covariance of two series; entries carry a sign.
    Bivariate,
}

/// `F_q(s)` over the (q, s) grid. Rows follow `q_grid`, columns `scales`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSurface {
    pub kind: SurfaceKind,
    pub q_grid: Vec<f64>,
    pub scales: Vec<usize>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Number of segments used per scale (always `2⌊T/s⌋`).
    pub segments: Vec<usize>,
    /// Segments left out per (q, s) because their (co)variance was zero.
    pub excluded: Vec<Vec<usize>>,
}

impl FluctuationSurface {
    fn assemble(kind: SurfaceKind, cfg: &DetrendConfig, per_scale: &[Vec<f64>]) -> Self {
        let fq = match kind {
            SurfaceKind::Univariate => univariate_fq,
            SurfaceKind::Bivariate => bivariate_fq,
        };
        let mut values = Vec::with_capacity(cfg.q_grid.len());
        let mut excluded = Vec::with_capacity(cfg.q_grid.len());
        for &q in &cfg.q_grid {
            let (row, ex): (Vec<_>, Vec<_>) = per_scale.iter().map(|f2| fq(f2, q)).unzip();
            values.push(row);
            excluded.push(ex);
        }
        Self {
            kind,
            q_grid: cfg.q_grid.clone(),
            scales: cfg.scales.clone(),
            values,
            segments: per_scale.iter().map(Vec::len).collect(),
            excluded,
        }
    }

    pub fn get(&self, qi: usize, si: usize) -> Option<f64> {
        self.values[qi][si]
    }

    pub fn q_index(&self, q: f64) -> Option<usize> {
        self.q_grid.iter().position(|x| (x - q).abs() < 1e-12)
    }

    /// CSV matrix: header `q` followed by each scale, one row per q.
    /// Undefined entries are left empty.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "q")?;
        for s in &self.scales {
            write!(out, ",{s}")?;
        }
        writeln!(out)?;
        for (q, row) in self.q_grid.iter().zip(&self.values) {
            write!(out, "{q}")?;
            for v in row {
                match v {
                    Some(v) => write!(out, ",{v}")?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Univariate fluctuation surface of one series.
pub fn univariate_surface(x: &[f64], cfg: &DetrendConfig) -> Result<FluctuationSurface> {
    cfg.validate(x.len())?;
    let per_scale: Vec<Vec<f64>> = cfg
        .scales
        .par_iter()
        .map(|&s| segment_variances(x, s, cfg.poly_degree))
        .collect();
    Ok(FluctuationSurface::assemble(SurfaceKind::Univariate, cfg, &per_scale))
}

/// The three surfaces (aa, bb, ab) of a pair from one pass over the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTriple {
    pub aa: FluctuationSurface,
    pub bb: FluctuationSurface,
    pub ab: FluctuationSurface,
}

pub fn surface_triple(a: &[f64], b: &[f64], cfg: &DetrendConfig) -> Result<SurfaceTriple> {
    if a.len() != b.len() {
        return Err(MfError::LengthMismatch(a.len(), b.len()));
    }
    cfg.validate(a.len())?;
    let moments: Vec<SegmentMoments> = cfg
        .scales
        .par_iter()
        .map(|&s| segment_moments(a, b, s, cfg.poly_degree))
        .collect();
    let aa: Vec<Vec<f64>> = moments.iter().map(|m| m.aa.clone()).collect();
    let bb: Vec<Vec<f64>> = moments.iter().map(|m| m.bb.clone()).collect();
    let ab: Vec<Vec<f64>> = moments.into_iter().map(|m| m.ab).collect();
    Ok(SurfaceTriple {
        aa: FluctuationSurface::assemble(SurfaceKind::Univariate, cfg, &aa),
        bb: FluctuationSurface::assemble(SurfaceKind::Univariate, cfg, &bb),
        ab: FluctuationSurface::assemble(SurfaceKind::Bivariate, cfg, &ab),
    })
}

/// Fluctuation surface of `a` against `b`: univariate when both arguments
/// are the same slice, bivariate (signed) otherwise.
pub fn fluctuation_surface(a: &[f64], b: &[f64], cfg: &DetrendConfig) -> Result<FluctuationSurface> {
    if std::ptr::eq(a, b) {
        return univariate_surface(a, cfg);
    }
    if a.len() != b.len() {
        return Err(MfError::LengthMismatch(a.len(), b.len()));
    }
    cfg.validate(a.len())?;
    let per_scale: Vec<Vec<f64>> = cfg
        .scales
        .par_iter()
        .map(|&s| segment_moments(a, b, s, cfg.poly_degree).ab)
        .collect();
    Ok(FluctuationSurface::assemble(SurfaceKind::Bivariate, cfg, &per_scale))
}

/// Generalized Hurst exponents and the singularity spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub q_grid: Vec<f64>,
    pub h_of_q: Vec<f64>,
    pub fit_range: (usize, usize),
    pub fit_r2: Vec<f64>,
    /// Hölder exponents α(q) = h + q dh/dq.
    pub alpha: Vec<f64>,
    /// f(α) = q (α − h) + 1.
    pub f_alpha: Vec<f64>,
    pub width: f64,
    /// α at the maximum of f(α).
    pub alpha_peak: f64,
    /// (α₀ − α_min) − (α_max − α₀); positive means a longer left wing.
    pub asymmetry: f64,
    pub left_wing: f64,
    pub right_wing: f64,
}

impl SpectrumResult {
    pub fn h(&self, q: f64) -> Option<f64> {
        self.q_grid
            .iter()
            .position(|x| (x - q).abs() < 1e-12)
            .map(|i| self.h_of_q[i])
    }

    pub fn f_peak(&self) -> f64 {
        self.f_alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Minimum number of scales inside a fit range.
pub const MIN_FIT_SCALES: usize = 8;

pub fn hurst_spectrum(surface: &FluctuationSurface, fit_range: (usize, usize)) -> Result<SpectrumResult> {
    if surface.kind != SurfaceKind::Univariate {
        return Err(MfError::NotUnivariate);
    }
    let (lo, hi) = fit_range;
    let cols: Vec<usize> = (0..surface.scales.len())
        .filter(|&i| surface.scales[i] >= lo && surface.scales[i] <= hi)
        .collect();
    if cols.len() < MIN_FIT_SCALES {
        return Err(MfError::TooFewScales {
            lo,
            hi,
            found: cols.len(),
            need: MIN_FIT_SCALES,
        });
    }
    let log_s: Vec<f64> = cols.iter().map(|&i| (surface.scales[i] as f64).ln()).collect();
    let mut h = Vec::with_capacity(surface.q_grid.len());
    let mut r2 = Vec::with_capacity(surface.q_grid.len());
    for (qi, &q) in surface.q_grid.iter().enumerate() {
        let mut log_f = Vec::with_capacity(cols.len());
        for &si in &cols {
            match surface.values[qi][si] {
                Some(v) if v > 0.0 => log_f.push(v.ln()),
                _ => {
                    return Err(MfError::NonPositive {
                        q,
                        s: surface.scales[si],
                    })
                }
            }
        }
        let fit = stats::fit_line(&log_s, &log_f).expect("distinct scales");
        h.push(fit.slope);
        r2.push(fit.r2);
    }
    let (alpha, f_alpha) = legendre(&surface.q_grid, &h);
    let alpha_min = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let alpha_max = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let peak = f_alpha
        .iter()
        .enumerate()
        .fold(0, |best, (i, f)| if *f > f_alpha[best] { i } else { best });
    let alpha_peak = alpha[peak];
    let left_wing = alpha_peak - alpha_min;
    let right_wing = alpha_max - alpha_peak;
    Ok(SpectrumResult {
        q_grid: surface.q_grid.clone(),
        h_of_q: h,
        fit_range,
        fit_r2: r2,
        alpha,
        f_alpha,
        width: alpha_max - alpha_min,
        alpha_peak,
        asymmetry: left_wing - right_wing,
        left_wing,
        right_wing,
    })
}

/// α = h + q h'(q), f = q(α − h) + 1, with h' from central differences
/// (one-sided at the ends of the grid).
pub fn legendre(q: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = q.len();
    let dh: Vec<f64> = (0..n)
        .map(|i| {
            if n < 2 {
                0.0
            } else if i == 0 {
                (h[1] - h[0]) / (q[1] - q[0])
            } else if i == n - 1 {
                (h[n - 1] - h[n - 2]) / (q[n - 1] - q[n - 2])
            } else {
                (h[i + 1] - h[i - 1]) / (q[i + 1] - q[i - 1])
            }
        })
        .collect();
    let alpha: Vec<f64> = (0..n).map(|i| h[i] + q[i] * dh[i]).collect();
    let f: Vec<f64> = (0..n).map(|i| q[i] * (alpha[i] - h[i]) + 1.0).collect();
    (alpha, f)
}

/// Longest contiguous run of at least [`MIN_FIT_SCALES`] scales over which the
/// log-log fit reaches `min_r2` for every q.
pub fn auto_fit_range(surface: &FluctuationSurface, min_r2: f64) -> Option<(usize, usize)> {
    let ns = surface.scales.len();
    let log_s: Vec<f64> = surface.scales.iter().map(|s| (*s as f64).ln()).collect();
    let window_ok = |a: usize, b: usize| -> bool {
        surface.values.iter().all(|row| {
            let mut y = Vec::with_capacity(b - a + 1);
            for v in &row[a..=b] {
                match v {
                    Some(v) if *v > 0.0 => y.push(v.ln()),
                    _ => return false,
                }
            }
            stats::fit_line(&log_s[a..=b], &y).is_some_and(|f| f.r2 >= min_r2)
        })
    };
    for len in (MIN_FIT_SCALES..=ns).rev() {
        for a in 0..=(ns - len) {
            let b = a + len - 1;
            if window_ok(a, b) {
                return Some((surface.scales[a], surface.scales[b]));
            }
        }
    }
    None
}

/// q-dependent detrended cross-correlation coefficient over the (q, s) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoQResult {
    pub q_grid: Vec<f64>,
    pub scales: Vec<usize>,
    /// `None` where a univariate fluctuation function vanishes. Entries for
    /// q ≤ 0 are reported unclipped and are advisory only.
    pub rho: Vec<Vec<Option<f64>>>,
    pub surfaces: SurfaceTriple,
}

impl RhoQResult {
    pub fn get(&self, q: f64, s: usize) -> Option<f64> {
        let qi = self.q_grid.iter().position(|x| (x - q).abs() < 1e-12)?;
        let si = self.scales.iter().position(|x| *x == s)?;
        self.rho[qi][si]
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "q")?;
        for s in &self.scales {
            write!(out, ",{s}")?;
        }
        writeln!(out)?;
        for (q, row) in self.q_grid.iter().zip(&self.rho) {
            write!(out, "{q}")?;
            for v in row {
                match v {
                    Some(v) => write!(out, ",{v}")?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// `ρ_q` from the three fluctuation functions at one `(q, s)`.
///
/// The ratio is taken between the q-th order detrended covariance functions,
/// `F^q` with the sign of the bivariate entry restored, so that `ρ_2` is the
/// DCCA coefficient and `ρ_1` equals `F_1^{ab} / sqrt(F_1^{aa} F_1^{bb})`. At
/// q = 0 the ratio of the logarithmic-limit functions is used. For q > 0
/// values beyond ±1 by less than 1e-6 are clipped, larger ones fail.
pub fn rho_from_parts(q: f64, s: usize, ab: Option<f64>, aa: Option<f64>, bb: Option<f64>) -> Result<Option<f64>> {
    let (Some(ab), Some(aa), Some(bb)) = (ab, aa, bb) else {
        return Ok(None);
    };
    if !(aa > 0.0 && bb > 0.0) {
        return Ok(None);
    }
    let ratio = ab / (aa * bb).sqrt();
    let rho = if q == 0.0 {
        ratio
    } else {
        ratio.signum() * ratio.abs().powf(q)
    };
    if q > 0.0 && rho.abs() > 1.0 {
        if rho.abs() - 1.0 > RHO_CLIP_TOLERANCE {
            return Err(MfError::RhoOvershoot { q, s, value: rho });
        }
        return Ok(Some(rho.signum()));
    }
    Ok(Some(rho))
}

pub fn rho_q(a: &[f64], b: &[f64], cfg: &DetrendConfig) -> Result<RhoQResult> {
    let surfaces = surface_triple(a, b, cfg)?;
    let mut rho = Vec::with_capacity(cfg.q_grid.len());
    for (qi, &q) in cfg.q_grid.iter().enumerate() {
        let mut row = Vec::with_capacity(cfg.scales.len());
        for (si, &s) in cfg.scales.iter().enumerate() {
            row.push(rho_from_parts(
                q,
                s,
                surfaces.ab.values[qi][si],
                surfaces.aa.values[qi][si],
                surfaces.bb.values[qi][si],
            )?);
        }
        rho.push(row);
    }
    Ok(RhoQResult {
        q_grid: cfg.q_grid.clone(),
        scales: cfg.scales.clone(),
        rho,
        surfaces,
    })
}
