use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use marketscale::ingest::{self, AssetStats, BarFormat, BarSeries, ReturnSeries, VolumeSeries};
use rayon::prelude::*;

use crate::config::{AssetSelection, InputFormat, RunConfig};

/// Bar files selected by the config, sorted by asset name.
pub fn resolve_bar_files(cfg: &RunConfig) -> Result<Vec<(String, PathBuf)>> {
    let dir = cfg.resolved_data_dir().context("no data directory")?;
    let mut found = Vec::new();
    for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                found.push((stem.to_string(), path.clone()));
            }
        }
    }
    found.sort();
    let mut wanted: Vec<String> = match &cfg.assets {
        AssetSelection::Pattern(_) => found.iter().map(|(n, _)| n.clone()).collect(),
        AssetSelection::List(list) => list.clone(),
    };
    // intermarket rows and columns are always loaded
    for name in cfg.intermarket.rows.iter().chain(&cfg.intermarket.cols) {
        if cfg.analyses.contains(&crate::config::Analysis::Intermarket) && !wanted.contains(name) {
            wanted.push(name.clone());
        }
    }
    wanted.sort();
    wanted.dedup();
    let mut out = Vec::with_capacity(wanted.len());
    for name in wanted {
        match found.iter().find(|(n, _)| *n == name) {
            Some(hit) => out.push(hit.clone()),
            None => bail!("asset {name} has no file {name}.csv in {}", dir.display()),
        }
    }
    ensure!(!out.is_empty(), "no bar files found in {}", dir.display());
    Ok(out)
}

pub fn bar_format(format: InputFormat) -> BarFormat {
    match format {
        InputFormat::Native => BarFormat::native(),
        InputFormat::Binance => BarFormat::binance_kline(),
    }
}

pub struct Asset {
    pub label: String,
    pub bars: BarSeries,
}

/// Parse every file in parallel. Failures are returned per file, in input order.
pub fn load_assets(files: &[(String, PathBuf)], format: InputFormat) -> Vec<Result<Asset, (PathBuf, String)>> {
    let fmt = bar_format(format);
    files
        .par_iter()
        .map(|(label, path)| {
            ingest::parse_bars(path, &fmt)
                .map(|bars| Asset {
                    label: label.clone(),
                    bars,
                })
                .map_err(|e| (path.clone(), e.to_string()))
        })
        .collect()
}

/// Normalized returns and volumes of one asset at one Δt.
pub struct Prepared {
    pub returns: ReturnSeries,
    pub volume: VolumeSeries,
}

impl Prepared {
    pub fn r(&self) -> &[f64] {
        self.returns.normalized().expect("normalized")
    }

    pub fn abs_r(&self) -> Vec<f64> {
        self.r().iter().map(|v| v.abs()).collect()
    }

    pub fn v(&self) -> &[f64] {
        self.volume.normalized().expect("normalized")
    }
}

pub fn prepare(bars: &BarSeries, dt: u32) -> Result<Prepared> {
    let returns = ingest::normalize(ingest::log_returns(bars, dt)?)
        .with_context(|| format!("{}: normalizing returns at Δt = {dt}", bars.symbol))?;
    let volume = ingest::normalize(ingest::volume_series(bars, dt)?)
        .with_context(|| format!("{}: normalizing volume at Δt = {dt}", bars.symbol))?;
    Ok(Prepared { returns, volume })
}

pub fn stats_for(asset: &Asset, cfg: &RunConfig) -> Result<AssetStats> {
    let returns = ingest::log_returns(&asset.bars, cfg.stats.dt)?;
    let cap = cfg.stats.capitalization.get(&asset.label).copied();
    Ok(ingest::asset_stats(&asset.bars, &returns, cap)?)
}

/// A plain series file: a header row naming the columns, then numbers.
/// Single-column files hold one series; `volume,abs_return` files hold
/// coupled pairs.
pub struct SeriesFile {
    pub label: String,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl SeriesFile {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        ensure!(!names.is_empty(), "{} has no columns", path.display());
        let mut columns: Vec<(String, Vec<f64>)> = names.into_iter().map(|n| (n, Vec::new())).collect();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            ensure!(
                record.len() == columns.len(),
                "{} line {}: expected {} fields",
                path.display(),
                i + 2,
                columns.len()
            );
            for (field, (_, col)) in record.iter().zip(columns.iter_mut()) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .with_context(|| format!("{} line {}: bad number {field:?}", path.display(), i + 2))?;
                col.push(v);
            }
        }
        let label = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("series")
            .to_string();
        Ok(Self { label, columns })
    }

    pub fn first(&self) -> &[f64] {
        &self.columns[0].1
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }

    pub fn pair(&self) -> Result<(&[f64], &[f64])> {
        ensure!(self.columns.len() >= 2, "{} needs two columns", self.label);
        Ok((&self.columns[0].1, &self.columns[1].1))
    }
}

/// Write one or more equally long columns as CSV.
pub fn write_columns<W: std::io::Write>(mut out: W, names: &[&str], columns: &[&[f64]]) -> std::io::Result<()> {
    writeln!(out, "{}", names.join(","))?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        let row: Vec<String> = columns.iter().map(|c| c[i].to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
