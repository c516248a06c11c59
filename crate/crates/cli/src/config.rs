use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use marketscale::impact::ImpactConfig;
use marketscale::mfractal::MAX_ABS_Q;
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "MARKETSCALE_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Stats,
    Cdf,
    Acf,
    Mf,
    Rho,
    Impact,
    Mst,
    Intermarket,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::Stats => "stats",
            Analysis::Cdf => "cdf",
            Analysis::Acf => "acf",
            Analysis::Mf => "mf",
            Analysis::Rho => "rho",
            Analysis::Impact => "impact",
            Analysis::Mst => "mst",
            Analysis::Intermarket => "intermarket",
        }
    }

    /// Analyses that need OHLCV bars rather than a plain series file.
    pub fn needs_bars(self) -> bool {
        matches!(self, Analysis::Stats | Analysis::Mst | Analysis::Intermarket)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Native,
    Binance,
}

/// `"*"` or an explicit list of asset names (file stems in the data dir).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AssetSelection {
    Pattern(String),
    List(Vec<String>),
}

impl Default for AssetSelection {
    fn default() -> Self {
        AssetSelection::Pattern("*".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsParams {
    pub dt: u32,
    /// Optional market capitalization per asset, passed through to the table.
    pub capitalization: BTreeMap<String, f64>,
}

impl Default for StatsParams {
    fn default() -> Self {
        Self {
            dt: 1,
            capitalization: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdfParams {
    pub dt_list: Vec<u32>,
    pub tail_fraction: f64,
    /// Range (σ units) for the stretched-exponential fit of the volume CDF.
    pub stretched_range: Option<(f64, f64)>,
    /// Range (σ units) for the power-law slope of the group-average CDFs.
    pub group_tail_range: (f64, f64),
}

impl Default for CdfParams {
    fn default() -> Self {
        Self {
            dt_list: vec![1],
            tail_fraction: 0.01,
            stretched_range: None,
            group_tail_range: (2.0, 20.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcfParams {
    pub dt: u32,
    pub max_lag: usize,
    /// Correlate |r| (volatility) instead of r.
    pub absolute: bool,
    /// Also compute the ACF of a seeded shuffle of the series.
    pub shuffle_surrogate: bool,
}

impl Default for AcfParams {
    fn default() -> Self {
        Self {
            dt: 1,
            max_lag: 1000,
            absolute: true,
            shuffle_surrogate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfParams {
    pub dt: u32,
    pub poly_degree: usize,
    pub scales_per_decade: usize,
    pub min_scale: usize,
    /// Defaults to a quarter of the series length.
    pub max_scale: Option<usize>,
    /// Defaults to −4..4 in steps of 0.25.
    pub q_grid: Option<Vec<f64>>,
    /// Fixed fit range; the longest window with R² ≥ `min_r2` otherwise.
    pub fit_range: Option<(usize, usize)>,
    pub min_r2: f64,
}

impl Default for MfParams {
    fn default() -> Self {
        Self {
            dt: 1,
            poly_degree: 2,
            scales_per_decade: 20,
            min_scale: 10,
            max_scale: None,
            q_grid: None,
            fit_range: None,
            min_r2: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RhoParams {
    pub dt: u32,
    pub poly_degree: usize,
    pub q_grid: Vec<f64>,
    pub scales_per_decade: usize,
    pub min_scale: usize,
    pub max_scale: Option<usize>,
}

impl Default for RhoParams {
    fn default() -> Self {
        Self {
            dt: 1,
            poly_degree: 2,
            q_grid: vec![1.0, 2.0, 4.0],
            scales_per_decade: 10,
            min_scale: 10,
            max_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MstParams {
    pub dt: u32,
    pub q: Vec<f64>,
    pub s: Vec<usize>,
    pub poly_degree: usize,
}

impl Default for MstParams {
    fn default() -> Self {
        Self {
            dt: 1,
            q: vec![1.0, 4.0],
            s: vec![10],
            poly_degree: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntermarketParams {
    /// Row assets (e.g. cryptocurrencies); sorted by δt in the output.
    pub rows: Vec<String>,
    /// Column assets (e.g. traditional instruments).
    pub cols: Vec<String>,
    pub dt: u32,
    pub q: f64,
    pub s: Vec<usize>,
    pub poly_degree: usize,
    pub coverage_floor: f64,
}

impl Default for IntermarketParams {
    fn default() -> Self {
        Self {
            rows: Vec::new(),
            cols: Vec::new(),
            dt: 1,
            q: 1.0,
            s: vec![10],
            poly_degree: 2,
            coverage_floor: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub assets: AssetSelection,
    #[serde(default)]
    pub format: InputFormat,
    /// Plain series CSV analysed instead of bar files.
    #[serde(default)]
    pub series: Option<PathBuf>,
    /// Trading-session file for calendar alignment; all week when absent.
    #[serde(default)]
    pub session: Option<PathBuf>,
    pub analyses: Vec<Analysis>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stats: StatsParams,
    #[serde(default)]
    pub cdf: CdfParams,
    #[serde(default)]
    pub acf: AcfParams,
    #[serde(default)]
    pub mf: MfParams,
    #[serde(default)]
    pub rho: RhoParams,
    #[serde(default)]
    pub impact: ImpactConfig,
    #[serde(default)]
    pub mst: MstParams,
    #[serde(default)]
    pub intermarket: IntermarketParams,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("marketscale-out")
}

impl RunConfig {
    pub fn empty() -> Self {
        toml::from_str("analyses = []").expect("defaults parse")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.series, &mut cfg.session].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Data directory from the config, falling back to the environment.
    pub fn resolved_data_dir(&self) -> Option<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }

    /// The parameters that determine results, echoed into the manifest.
    /// Worker count and output location are left out.
    pub fn parameter_echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("workers");
            obj.remove("output_dir");
            if let Some(d) = self.resolved_data_dir() {
                obj.insert("data_dir".into(), serde_json::Value::String(d.display().to_string()));
            }
        }
        v
    }

    /// Checks that run before any computation: paths, analysis list and
    /// parameter blocks.
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.analyses.is_empty(), "no analyses requested");
        if let Some(w) = self.workers {
            ensure!(w >= 1, "workers must be at least 1");
        }
        match &self.series {
            Some(path) => {
                ensure!(path.is_file(), "series file {} does not exist", path.display());
                if let Some(a) = self.analyses.iter().find(|a| a.needs_bars()) {
                    bail!("analysis `{}` needs bar files, not a series file", a.name());
                }
            }
            None => {
                let dir = self
                    .resolved_data_dir()
                    .with_context(|| format!("no data_dir given and {DATA_DIR_ENV} is not set"))?;
                ensure!(dir.is_dir(), "data directory {} does not exist", dir.display());
            }
        }
        if let Some(s) = &self.session {
            ensure!(s.is_file(), "session file {} does not exist", s.display());
            marketscale::ingest::SessionSpec::from_file(s)?;
        }
        if let AssetSelection::Pattern(p) = &self.assets {
            ensure!(p == "*", "assets must be \"*\" or a list of names, got {p:?}");
        }

        let dts = [self.stats.dt, self.acf.dt, self.mf.dt, self.rho.dt, self.mst.dt, self.intermarket.dt];
        ensure!(
            dts.iter().chain(&self.cdf.dt_list).chain(&self.impact.dt_list).all(|d| *d > 0),
            "every Δt must be a positive number of minutes"
        );
        ensure!(!self.cdf.dt_list.is_empty() && !self.impact.dt_list.is_empty(), "Δt lists must not be empty");
        ensure!(
            self.cdf.tail_fraction > 0.0 && self.cdf.tail_fraction <= 1.0,
            "cdf.tail_fraction must lie in (0, 1]"
        );
        check_range("cdf.group_tail_range", self.cdf.group_tail_range)?;
        if let Some(r) = self.cdf.stretched_range {
            check_range("cdf.stretched_range", r)?;
        }
        ensure!(self.acf.max_lag >= 1, "acf.max_lag must be at least 1");
        for (name, degree) in [
            ("mf", self.mf.poly_degree),
            ("rho", self.rho.poly_degree),
            ("mst", self.mst.poly_degree),
            ("intermarket", self.intermarket.poly_degree),
        ] {
            ensure!(degree >= 1, "{name}.poly_degree must be at least 1");
        }
        ensure!(self.mf.scales_per_decade >= 1 && self.rho.scales_per_decade >= 1, "scales_per_decade must be positive");
        check_q("mf.q_grid", self.mf.q_grid.as_deref().unwrap_or(&[]))?;
        check_q("rho.q_grid", &self.rho.q_grid)?;
        check_q("mst.q", &self.mst.q)?;
        check_q("intermarket.q", &[self.intermarket.q])?;
        ensure!(!self.rho.q_grid.is_empty(), "rho.q_grid must not be empty");
        ensure!(!self.mst.q.is_empty() && !self.mst.s.is_empty(), "mst.q and mst.s must not be empty");
        if let Some((lo, hi)) = self.mf.fit_range {
            ensure!(lo < hi, "mf.fit_range must be increasing");
        }
        self.impact.validate()?;
        if self.analyses.contains(&Analysis::Intermarket) {
            let im = &self.intermarket;
            ensure!(
                !im.rows.is_empty() && !im.cols.is_empty(),
                "intermarket.rows and intermarket.cols must both be set"
            );
            ensure!(!im.s.is_empty(), "intermarket.s must not be empty");
            ensure!((0.0..=1.0).contains(&im.coverage_floor), "intermarket.coverage_floor must lie in [0, 1]");
        }
        Ok(())
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    ensure!(lo > 0.0 && hi > lo, "{name} must satisfy 0 < lo < hi");
    Ok(())
}

fn check_q(name: &str, q: &[f64]) -> Result<()> {
    if let Some(bad) = q.iter().find(|q| !q.is_finite() || q.abs() > MAX_ABS_Q) {
        bail!("{name} contains q = {bad} outside [-{MAX_ABS_Q}, {MAX_ABS_Q}]");
    }
    Ok(())
}
