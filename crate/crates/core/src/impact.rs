//! Conditional price impact `E[|r|^κ | v]`.
//!
//! Normalized volume is binned into log-spaced cells; inside each cell only
//! the fraction `p` of points with the largest |r| is kept. The conditional
//! mean and standard deviation of `|r|^κ` over those points form one curve
//! per κ, and a straight line in log-log coordinates gives its exponent.
//!
//! The linear hypothesis `E[|r|^κ | v] ∝ v` corresponds to `v ∼ |r|^κ`, i.e.
//! `|r| ∼ v^α` with `α = 1/κ`. Curves are ranked by how well that
//! slope-one line explains them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, LineFit};

/// R² below which the linear hypothesis is rejected.
pub const REJECT_R2: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImpactError {
    #[error("returns and volume differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid impact config: {0}")]
    Config(String),
    #[error("no positive volumes to bin")]
    NoPositiveVolume,
    #[error("only {fitted} cell(s) pass the occupancy gate, need at least 2")]
    UnderOccupied { fitted: usize },
    #[error("model selection needs at least two kappa values, got {0}")]
    TooFewKappas(usize),
    #[error("curves share fewer than two fitted cells")]
    NoCommonRange,
}

pub type Result<T> = std::result::Result<T, ImpactError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpactConfig {
    pub kappa_grid: Vec<f64>,
    /// Fraction of largest |r| kept per cell.
    pub p: f64,
    /// Explicit cell edges in σ units; `None` means log-spaced cells from the
    /// 25th percentile of the positive volumes upward.
    pub cells: Option<Vec<f64>>,
    pub cells_per_decade: usize,
    /// Cells with fewer points than this never enter a fit.
    pub min_count: usize,
    /// Cells keeping fewer top-p points than this never enter a fit.
    pub min_selected: usize,
    /// Volume interval for the fit; all gated cells when `None`.
    pub fit_range: Option<(f64, f64)>,
    /// Sampling intervals in minutes, used by batch runs.
    pub dt_list: Vec<u32>,
}

impl Default for ImpactConfig {
    fn default() -> Self {
        Self {
            kappa_grid: vec![0.2, 0.5, 1.0, 2.0],
            p: 0.1,
            cells: None,
            cells_per_decade: 12,
            min_count: 30,
            min_selected: 10,
            fit_range: None,
            dt_list: vec![1, 5, 10, 60],
        }
    }
}

impl ImpactConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(ImpactError::Config(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if self.kappa_grid.is_empty() || self.kappa_grid.iter().any(|k| !(*k > 0.0)) {
            return Err(ImpactError::Config("kappa values must be positive".into()));
        }
        if let Some(c) = &self.cells {
            if c.len() < 2 || !c.windows(2).all(|w| w[0] < w[1]) {
                return Err(ImpactError::Config("cell edges must be strictly increasing".into()));
            }
        }
        if self.cells.is_none() && self.cells_per_decade == 0 {
            return Err(ImpactError::Config("cells_per_decade must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    /// `(volume, return)` pairs.
    pub points: Vec<(f64, f64)>,
    /// 25th, 50th and 75th volume percentiles (linear interpolation).
    pub volume_quartiles: Option<[f64; 3]>,
}

pub fn scatter(returns: &[f64], volume: &[f64]) -> Result<Scatter> {
    if returns.len() != volume.len() {
        return Err(ImpactError::LengthMismatch(returns.len(), volume.len()));
    }
    let sorted = stats::sorted(volume);
    let volume_quartiles = (!sorted.is_empty()).then(|| {
        [
            stats::quantile_sorted(&sorted, 0.25),
            stats::quantile_sorted(&sorted, 0.5),
            stats::quantile_sorted(&sorted, 0.75),
        ]
    });
    Ok(Scatter {
        points: volume.iter().copied().zip(returns.iter().copied()).collect(),
        volume_quartiles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactCurve {
    pub kappa: f64,
    /// Geometric centre of each cell.
    pub v_centers: Vec<f64>,
    pub means: Vec<f64>,
    pub stdevs: Vec<f64>,
    /// Points per cell before the top-p cut.
    pub counts: Vec<usize>,
    /// Points kept per cell after the top-p cut.
    pub selected: Vec<usize>,
    /// Whether each cell entered the fit.
    pub fitted: Vec<bool>,
    pub fit: LineFit,
    pub fit_slope: f64,
    pub fit_range: (f64, f64),
}

impl ImpactCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "v_center,mean,stdev,count,selected,fitted")?;
        for i in 0..self.v_centers.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.v_centers[i], self.means[i], self.stdevs[i], self.counts[i], self.selected[i], self.fitted[i]
            )?;
        }
        Ok(())
    }
}

fn cell_edges(volume: &[f64], cfg: &ImpactConfig) -> Result<Vec<f64>> {
    if let Some(c) = &cfg.cells {
        return Ok(c.clone());
    }
    let positive: Vec<f64> = stats::sorted(&volume.iter().copied().filter(|v| *v > 0.0).collect::<Vec<_>>());
    if positive.is_empty() {
        return Err(ImpactError::NoPositiveVolume);
    }
    let lo = stats::quantile_sorted(&positive, 0.25);
    let hi = *positive.last().unwrap();
    let ratio = 10f64.powf(1.0 / cfg.cells_per_decade as f64);
    let mut edges = vec![lo];
    let mut k = 1;
    while *edges.last().unwrap() <= hi {
        edges.push(lo * ratio.powi(k));
        k += 1;
    }
    Ok(edges)
}

/// One [`ImpactCurve`] per κ in the config, sharing the same cells.
pub fn conditional_impact(returns: &[f64], volume: &[f64], cfg: &ImpactConfig) -> Result<Vec<ImpactCurve>> {
    cfg.validate()?;
    if returns.len() != volume.len() {
        return Err(ImpactError::LengthMismatch(returns.len(), volume.len()));
    }
    let edges = cell_edges(volume, cfg)?;
    let ncells = edges.len() - 1;
    let last = edges[ncells];
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); ncells];
    for (r, v) in returns.iter().zip(volume) {
        if !(*v >= edges[0] && *v <= last) {
            continue;
        }
        // half-open cells, the last one closed on the right
        let i = edges.partition_point(|e| *e <= *v).saturating_sub(1).min(ncells - 1);
        members[i].push(r.abs());
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let tops: Vec<Vec<f64>> = members
        .into_iter()
        .map(|mut m| {
            m.sort_by(|a, b| b.total_cmp(a));
            let keep = (cfg.p * m.len() as f64).ceil() as usize;
            m.truncate(keep);
            m
        })
        .collect();
    let selected: Vec<usize> = tops.iter().map(Vec::len).collect();
    let v_centers: Vec<f64> = edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
    let (range_lo, range_hi) = cfg.fit_range.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));

    let mut curves = Vec::with_capacity(cfg.kappa_grid.len());
    for &kappa in &cfg.kappa_grid {
        let mut means = Vec::with_capacity(ncells);
        let mut stdevs = Vec::with_capacity(ncells);
        for t in &tops {
            if t.is_empty() {
                means.push(f64::NAN);
                stdevs.push(f64::NAN);
            } else {
                let powered: Vec<f64> = t.iter().map(|r| r.powf(kappa)).collect();
                let (m, s) = stats::mean_std(&powered);
                means.push(m);
                stdevs.push(s);
            }
        }
        let fitted: Vec<bool> = (0..ncells)
            .map(|i| {
                counts[i] >= cfg.min_count
                    && selected[i] >= cfg.min_selected
                    && means[i] > 0.0
                    && v_centers[i] >= range_lo
                    && v_centers[i] <= range_hi
            })
            .collect();
        let (lx, ly): (Vec<f64>, Vec<f64>) = (0..ncells)
            .filter(|i| fitted[*i])
            .map(|i| (v_centers[i].ln(), means[i].ln()))
            .unzip();
        let fit = stats::fit_line(&lx, &ly).ok_or(ImpactError::UnderOccupied { fitted: lx.len() })?;
        let fit_range = {
            let idx: Vec<usize> = (0..ncells).filter(|i| fitted[*i]).collect();
            (v_centers[idx[0]], v_centers[*idx.last().unwrap()])
        };
        curves.push(ImpactCurve {
            kappa,
            v_centers: v_centers.clone(),
            means,
            stdevs,
            counts: counts.clone(),
            selected: selected.clone(),
            fitted,
            fit_slope: fit.slope,
            fit,
            fit_range,
        });
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaScore {
    pub kappa: f64,
    /// `α = 1/κ` under the linear hypothesis.
    pub implied_alpha: f64,
    /// R² of `ln E = ln v + c` (slope fixed to one) over the common cells.
    /// Can be negative when the data slope is far from one.
    pub linear_r2: f64,
    /// Free log-log slope over the common cells.
    pub free_slope: f64,
    pub free_r2: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    /// Best first.
    pub ranking: Vec<KappaScore>,
    /// Volume-cell centres shared by every curve's fit.
    pub common_range: (f64, f64),
}

/// Rank κ values by how well `E[|r|^κ | v] ∝ v` holds over the cells every
/// curve fitted. A κ is rejected when that R² falls below 0.9.
pub fn model_selection(curves: &[ImpactCurve]) -> Result<ModelSelection> {
    if curves.len() < 2 {
        return Err(ImpactError::TooFewKappas(curves.len()));
    }
    let ncells = curves[0].v_centers.len();
    let common: Vec<usize> = (0..ncells)
        .filter(|&i| curves.iter().all(|c| c.fitted.get(i).copied().unwrap_or(false)))
        .collect();
    if common.len() < 2 {
        return Err(ImpactError::NoCommonRange);
    }
    let lx: Vec<f64> = common.iter().map(|&i| curves[0].v_centers[i].ln()).collect();
    let mut ranking: Vec<KappaScore> = curves
        .iter()
        .map(|c| {
            let ly: Vec<f64> = common.iter().map(|&i| c.means[i].ln()).collect();
            let offset = stats::mean(&ly) - stats::mean(&lx);
            let my = stats::mean(&ly);
            let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - x - offset).powi(2)).sum();
            let sst: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
            let linear_r2 = if sst > 0.0 { 1.0 - sse / sst } else if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY };
            let free = stats::fit_line(&lx, &ly).expect("distinct cell centres");
            KappaScore {
                kappa: c.kappa,
                implied_alpha: 1.0 / c.kappa,
                linear_r2,
                free_slope: free.slope,
                free_r2: free.r2,
                rejected: !(linear_r2 >= REJECT_R2),
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.linear_r2.total_cmp(&a.linear_r2).then(a.kappa.total_cmp(&b.kappa)));
    Ok(ModelSelection {
        ranking,
        common_range: (curves[0].v_centers[common[0]], curves[0].v_centers[*common.last().unwrap()]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartile_markers() {
        let s = scatter(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.volume_quartiles, Some([1.75, 2.5, 3.25]));
        let e = scatter(&[], &[]).unwrap();
        assert!(e.points.is_empty());
        assert!(e.volume_quartiles.is_none());
        assert!(scatter(&[1.0], &[]).is_err());
    }

    #[test]
    fn config_is_validated() {
        let bad = ImpactConfig {
            p: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ImpactConfig {
            kappa_grid: vec![-1.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ImpactConfig {
            cells: Some(vec![2.0, 1.0]),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn under_occupied_cells_fail() {
        let v: Vec<f64> = (1..=50).map(f64::from).collect();
        let r = v.clone();
        assert!(matches!(
            conditional_impact(&r, &v, &ImpactConfig::default()),
            Err(ImpactError::UnderOccupied { .. })
        ));
    }

    #[test]
    fn single_kappa_is_refused() {
        let v: Vec<f64> = (0..20_000).map(|i| 1.0 + (i % 1000) as f64).collect();
        let cfg = ImpactConfig {
            kappa_grid: vec![1.0],
            ..Default::default()
        };
        let curves = conditional_impact(&v, &v, &cfg).unwrap();
        assert_eq!(model_selection(&curves), Err(ImpactError::TooFewKappas(1)));
    }
}
