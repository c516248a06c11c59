use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use marketscale::acf::{self, AcfResult, PowerLawScan};
use marketscale::dist::{self, EmpiricalCdf, StretchedExpFit, TailFit};
use marketscale::impact::{self, ModelSelection};
use marketscale::ingest::{self, AssetStats, BarSeries, Group, SessionSpec};
use marketscale::mfractal::{self, DetrendConfig, SpectrumResult};
use marketscale::network::{self, AssetSeries};
use marketscale::stats;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Analysis, AssetSelection, RunConfig};
use crate::data::{self, Asset, SeriesFile};
use crate::manifest::{AnalysisRecord, FileEntry, InputError, Manifest, Outputs};

enum Source {
    Bars {
        assets: Vec<Asset>,
        /// Indices into `assets` picked by the asset selection.
        selected: Vec<usize>,
        stats: Vec<std::result::Result<AssetStats, String>>,
    },
    Series(SeriesFile),
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    source: Source,
}

/// Validate, load inputs and run every requested analysis inside a pool of
/// `cfg.workers` threads.
pub fn run(cfg: &RunConfig, config_file: Option<&Path>) -> Result<Manifest> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build()?;
    pool.install(|| execute(cfg, config_file))
}

fn execute(cfg: &RunConfig, config_file: Option<&Path>) -> Result<Manifest> {
    let mut inputs = Vec::new();
    let mut input_errors = Vec::new();
    let source = match &cfg.series {
        Some(path) => {
            inputs.push(FileEntry::of(path, path.display().to_string())?);
            Source::Series(SeriesFile::read(path)?)
        }
        None => {
            let files = data::resolve_bar_files(cfg)?;
            for (_, path) in &files {
                inputs.push(FileEntry::of(path, path.display().to_string())?);
            }
            let mut assets = Vec::new();
            for loaded in data::load_assets(&files, cfg.format) {
                match loaded {
                    Ok(a) => assets.push(a),
                    Err((path, error)) => input_errors.push(InputError {
                        path: path.display().to_string(),
                        error,
                    }),
                }
            }
            let selected = assets
                .iter()
                .enumerate()
                .filter(|(_, a)| match &cfg.assets {
                    AssetSelection::Pattern(_) => true,
                    AssetSelection::List(list) => list.contains(&a.label),
                })
                .map(|(i, _)| i)
                .collect();
            let stats = assets
                .par_iter()
                .map(|a| data::stats_for(a, cfg).map_err(|e| format!("{}: {e:#}", a.label)))
                .collect();
            Source::Bars {
                assets,
                selected,
                stats,
            }
        }
    };
    if let Some(s) = &cfg.session {
        inputs.push(FileEntry::of(s, s.display().to_string())?);
    }
    if let Some(c) = config_file {
        inputs.push(FileEntry::of(c, c.display().to_string())?);
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;

    let ctx = Ctx { cfg, source };
    let mut analyses = cfg.analyses.clone();
    let mut seen = std::collections::BTreeSet::new();
    analyses.retain(|a| seen.insert(*a));
    let analyses: Vec<AnalysisRecord> = analyses
        .par_iter()
        .map(|&a| {
            let out = Outputs::new(&cfg.output_dir);
            let result = run_analysis(a, &ctx, &out);
            let outputs = out.entries();
            let error = match (&result, &outputs) {
                (Err(e), _) => Some(format!("{e:#}")),
                (Ok(()), Err(e)) => Some(format!("{e:#}")),
                _ => None,
            };
            AnalysisRecord {
                name: a.name().to_string(),
                status: if error.is_none() { "ok" } else { "error" },
                error,
                outputs: outputs.unwrap_or_default(),
            }
        })
        .collect();

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        generated_at: crate::manifest::timestamp(),
        parameters: cfg.parameter_echo(),
        inputs,
        input_errors,
        analyses,
    };
    manifest.write(&cfg.output_dir)?;
    Ok(manifest)
}

fn run_analysis(a: Analysis, ctx: &Ctx, out: &Outputs) -> Result<()> {
    match a {
        Analysis::Stats => stats_analysis(ctx, out),
        Analysis::Cdf => cdf_analysis(ctx, out),
        Analysis::Acf => acf_analysis(ctx, out),
        Analysis::Mf => mf_analysis(ctx, out),
        Analysis::Rho => rho_analysis(ctx, out),
        Analysis::Impact => impact_analysis(ctx, out),
        Analysis::Mst => mst_analysis(ctx, out),
        Analysis::Intermarket => intermarket_analysis(ctx, out),
    }
}

impl Ctx<'_> {
    /// Selected assets with their statistics.
    fn selected(&self) -> Result<Vec<(&Asset, &AssetStats)>> {
        match &self.source {
            Source::Bars {
                assets,
                selected,
                stats,
            } => {
                ensure!(!selected.is_empty(), "no asset could be loaded");
                selected
                    .iter()
                    .map(|&i| {
                        let s = stats[i].as_ref().map_err(|e| anyhow!("{e}"))?;
                        Ok((&assets[i], s))
                    })
                    .collect()
            }
            Source::Series(_) => bail!("this analysis needs bar files"),
        }
    }

    fn by_label(&self, label: &str) -> Result<(&Asset, &AssetStats)> {
        match &self.source {
            Source::Bars { assets, stats, .. } => {
                let i = assets
                    .iter()
                    .position(|a| a.label == label)
                    .with_context(|| format!("asset {label} was not loaded"))?;
                let s = stats[i].as_ref().map_err(|e| anyhow!("{e}"))?;
                Ok((&assets[i], s))
            }
            Source::Series(_) => bail!("this analysis needs bar files"),
        }
    }

    fn series(&self) -> Option<&SeriesFile> {
        match &self.source {
            Source::Series(s) => Some(s),
            Source::Bars { .. } => None,
        }
    }
}

/// Run `f` for every selected asset in parallel; the first error wins.
fn per_asset<T: Send>(items: &[(&Asset, &AssetStats)], f: impl Fn(usize, &Asset, &AssetStats) -> Result<T> + Sync) -> Result<Vec<T>> {
    items
        .par_iter()
        .enumerate()
        .map(|(i, (a, s))| f(i, a, s).with_context(|| a.label.clone()))
        .collect()
}

fn stats_analysis(ctx: &Ctx, out: &Outputs) -> Result<()> {
    let items = ctx.selected()?;
    let rows: Vec<AssetStats> = items.iter().map(|(_, s)| (*s).clone()).collect();
    out.file("stats/table.csv", |w| ingest::write_stats_csv(w, &rows))?;
    let dt = ctx.cfg.stats.dt;
    per_asset(&items, |_, a, _| {
        let returns = ingest::log_returns(&a.bars, dt)?;
        let cum = ingest::cumulative_returns(&returns);
        out.file(&format!("stats/cumulative_{}_dt{dt}.csv", a.label), |w| {
            writeln!(w, "timestamp,cumulative_return")?;
            for (t, c) in returns.timestamps.iter().zip(&cum) {
                writeln!(w, "{t},{c}")?;
            }
            Ok(())
        })
    })?;
    Ok(())
}

#[derive(Serialize)]
struct CdfFits {
    label: String,
    column: String,
    group: Option<Group>,
    tail: TailFit,
    stretched: Option<StretchedExpFit>,
}

#[derive(Serialize)]
struct GroupCdf {
    group: Group,
    members: Vec<String>,
    returns_slope: f64,
    returns_r2: f64,
    volume_slope: f64,
    volume_r2: f64,
}

fn cdf_analysis(ctx: &Ctx, out: &Outputs) -> Result<()> {
    let p = &ctx.cfg.cdf;
    if let Some(series) = ctx.series() {
        let mut fits = Vec::new();
        for (name, col) in &series.columns {
            let abs: Vec<f64> = col.iter().map(|v| v.abs()).collect();
            let cdf = EmpiricalCdf::from_sample(&abs)?;
            out.file(&format!("cdf/{}_{name}.csv", series.label), |w| cdf.write_csv(w))?;
            let stretched = p.stretched_range.map(|r| dist::fit_stretched_exponential(&cdf, r)).transpose()?;
            fits.push(CdfFits {
                label: series.label.clone(),
                column: name.clone(),
                group: None,
                tail: dist::fit_tail_exponent(&cdf, p.tail_fraction)?,
                stretched,
            });
        }
        return out.json("cdf/fits.json", &fits);
    }

    let items = ctx.selected()?;
    for &dt in &p.dt_list {
        let per: Vec<(EmpiricalCdf, EmpiricalCdf, Vec<CdfFits>)> = per_asset(&items, |_, a, s| {
            let prep = data::prepare(&a.bars, dt)?;
            let rc = EmpiricalCdf::from_sample(&prep.abs_r())?;
            let vc = EmpiricalCdf::from_signed_sample(prep.v())?;
            out.file(&format!("cdf/{}_dt{dt}_returns.csv", a.label), |w| rc.write_csv(w))?;
            out.file(&format!("cdf/{}_dt{dt}_volume.csv", a.label), |w| vc.write_csv(w))?;
            let stretched = p.stretched_range.map(|r| dist::fit_stretched_exponential(&vc, r)).transpose()?;
            let fits = vec![
                CdfFits {
                    label: a.label.clone(),
                    column: "returns".into(),
                    group: Some(s.group),
                    tail: dist::fit_tail_exponent(&rc, p.tail_fraction)?,
                    stretched: None,
                },
                CdfFits {
                    label: a.label.clone(),
                    column: "volume".into(),
                    group: Some(s.group),
                    tail: dist::fit_tail_exponent(&vc, p.tail_fraction)?,
                    stretched,
                },
            ];
            Ok((rc, vc, fits))
        })?;

        let mut groups: BTreeMap<Group, Vec<usize>> = BTreeMap::new();
        for (i, (_, s)) in items.iter().enumerate() {
            groups.entry(s.group).or_default().push(i);
        }
        let mut group_rows = Vec::new();
        for (group, members) in groups {
            let rcs: Vec<EmpiricalCdf> = members.iter().map(|&i| per[i].0.clone()).collect();
            let vcs: Vec<EmpiricalCdf> = members.iter().map(|&i| per[i].1.clone()).collect();
            let ra = dist::group_average_cdf(&rcs)?;
            let va = dist::group_average_cdf(&vcs)?;
            out.file(&format!("cdf/group_{group}_dt{dt}_returns.csv"), |w| ra.write_csv(w))?;
            out.file(&format!("cdf/group_{group}_dt{dt}_volume.csv"), |w| va.write_csv(w))?;
            let rf = dist::fit_power_law_survival(&ra, p.group_tail_range).with_context(|| format!("group {group} returns"))?;
            let vf = dist::fit_power_law_survival(&va, p.group_tail_range).with_context(|| format!("group {group} volume"))?;
            group_rows.push(GroupCdf {
                group,
                members: members.iter().map(|&i| items[i].0.label.clone()).collect(),
                returns_slope: rf.slope,
                returns_r2: rf.r2,
                volume_slope: vf.slope,
                volume_r2: vf.r2,
            });
        }
        let fits: Vec<CdfFits> = per.into_iter().flat_map(|(_, _, f)| f).collect();
        out.json(&format!("cdf/fits_dt{dt}.json"), &fits)?;
        out.json(&format!("cdf/groups_dt{dt}.json"), &group_rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AcfSummary {
    label: String,
    len: usize,
    noise_level: f64,
    scan: PowerLawScan,
    shuffled_scan: Option<PowerLawScan>,
}

fn acf_one(ctx: &Ctx, out: &Outputs, label: &str, stem: &str, series: &[f64], seed: u64) -> Result<AcfSummary> {
    let p = &ctx.cfg.acf;
    let x: Vec<f64> = if p.absolute {
        series.iter().map(|v| v.abs()).collect()
    } else {
        series.to_vec()
    };
    let result: AcfResult = acf::autocorrelation(&x, p.max_lag)?;
    out.file(&format!("acf/{stem}.csv"), |w| result.write_csv(w))?;
    let shuffled_scan = if p.shuffle_surrogate {
        let mut y = x.clone();
        y.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        let sr = acf::autocorrelation(&y, p.max_lag)?;
        out.file(&format!("acf/{stem}_shuffled.csv"), |w| sr.write_csv(w))?;
        Some(acf::detect_power_law_ranges(&sr))
    } else {
        None
    };
    Ok(AcfSummary {
        label: label.to_string(),
        len: result.len,
        noise_level: result.noise_level,
        scan: acf::detect_power_law_ranges(&result),
        shuffled_scan,
    })
}

fn acf_analysis(ctx: &Ctx, out: &Outputs) -> Result<()> {
    let seed = ctx.cfg.seed;
    if let Some(series) = ctx.series() {
        let summary = acf_one(ctx, out, &series.label, &series.label, series.first(), seed)?;
        return out.json("acf/ranges.json", &[summary]);
    }
    let dt = ctx.cfg.acf.dt;
    let items = ctx.selected()?;
    let summaries = per_asset(&items, |i, a, _| {
        let prep = data::prepare(&a.bars, dt)?;
        acf_one(ctx, out, &a.label, &format!("{}_dt{dt}", a.label), prep.r(), seed.wrapping_add(i as u64))
    })?;
    out.json(&format!("acf/ranges_dt{dt}.json"), &summaries)
}

fn scale_grid(len: usize, degree: usize, min_scale: usize, max_scale: Option<usize>, per_decade: usize) -> Result<Vec<usize>> {
    let lo = min_scale.max(degree + 2);
    let hi = max_scale.unwrap_or(len / 4).min(len / 4);
    ensure!(hi >= lo, "series of length {len} is too short for scales starting at {lo}");
    Ok(stats::log_spaced_integers(lo, hi, per_decade))
}

#[derive(Serialize)]
struct SpectrumReport<'a> {
    label: String,
    fit_range: (usize, usize),
    spectrum: &'a SpectrumResult,
}

fn mf_one(ctx: &Ctx, out: &Outputs, label: &str, stem: &str, x: &[f64]) -> Result<()> {
    let p = &ctx.cfg.mf;
    let scales = scale_grid(x.len(), p.poly_degree, p.min_scale, p.max_scale, p.scales_per_decade)?;
    let q_grid = p.q_grid.clone().unwrap_or_else(mfractal::default_q_grid);
    let cfg = DetrendConfig::new(p.poly_degree, scales, q_grid);
    let surface = mfractal::univariate_surface(x, &cfg)?;
    out.file(&format!("mf/{stem}_surface.csv"), |w| surface.write_csv(w))?;
    let range = match p.fit_range {
        Some(r) => r,
        None => mfractal::auto_fit_range(&surface, p.min_r2)
            .with_context(|| format!("no window of scales with R² ≥ {} for every q", p.min_r2))?,
    };
    let spectrum = mfractal::hurst_spectrum(&surface, range)?;
    out.file(&format!("mf/{stem}_spectrum.csv"), |w| {
        writeln!(w, "q,h,fit_r2,alpha,f_alpha")?;
        for i in 0..spectrum.q_grid.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                spectrum.q_grid[i], spectrum.h_of_q[i], spectrum.fit_r2[i], spectrum.alpha[i], spectrum.f_alpha[i]
            )?;
        }
        Ok(())
    })?;
    out.json(
        &format!("mf/{stem}_spectrum.json"),
        &SpectrumReport {
            label: label.to_string(),
            fit_range: range,
            spectrum: &spectrum,
        },
    )
}

fn mf_analysis(ctx: &Ctx, out: &Outputs) -> Result<()> {
    if let Some(series) = ctx.series() {
        return mf_one(ctx, out, &series.label, &series.label, series.first());
    }
    let dt = ctx.cfg.mf.dt;
    let items = ctx.selected()?;
    per_asset(&items, |_, a, _| {
        let prep = data::prepare(&a.bars, dt)?;
        mf_one(ctx, out, &a.label, &format!("{}_dt{dt}", a.label), prep.r())
    })?;
    Ok(())
}

fn rho_one(ctx: &Ctx, out: &Outputs, stem: &str, a: &[f64], b: &[f64]) -> Result<()> {
    let p = &ctx.cfg.rho;
    let scales = scale_grid(a.len(), p.poly_degree, p.min_scale, p.max_scale, p.scales_per_decade)?;
    let cfg = DetrendConfig::new(p.poly_degree, scales, p.q_grid.clone());
    let result = mfractal::rho_q(a, b, &cfg)?;
    out.file(&format!("rho/{stem}.csv"), |w| result.write_csv(w))
}

fn rho_analysis(ctx: &Ctx, out: &Outputs) -> Result<()> {
    if let Some(series) = ctx.series() {
        let (a, b) = series.pair()?;
        return rho_one(ctx, out, &series.label, a, b);
    }
    let dt = ctx.cfg.rho.dt;
    let items = ctx.selected()?;
    per_asset(&items, |_, a, _| {
        let prep = data::prepare(&a.bars, dt)?;
        rho_one(ctx, out, &format!("{}_dt{dt}_abs_return_volume", a.label), &prep.abs_r(), prep.v())
    })?;
    Ok(())
}

#[derive(Serialize)]
struct ImpactReport {
    label: String,
    dt: Option<u32>,
    volume_quartiles: Option<[f64; 3]>,
    slopes: Vec<(f64, f64)>,
    selection: ModelSelection,
}

fn impact_one(ctx: &Ctx, out: &Outputs, label: &str, dt: Option<u32>, returns: &[f64], volume: &[f64]) -> Result<ImpactReport> {
    let stem = match dt {
        Some(dt) => format!("{label}_dt{dt}"),
        None => label.to_string(),
    };
    let curves = impact::conditional_impact(returns, volume, &ctx.cfg.impact)?;
    for c in &curves {
        out.file(&format!("impact/{stem}_kappa{}.csv", c.kappa), |w| c.write_csv(w))?;
    }
    let selection = impact::model_selection(&curves)?;
    Ok(ImpactReport {
        label: label.to_string(),
        dt,
        volume_quartiles: impact::scatter(returns, volume)?.volume_quartiles,
        slopes: curves.iter().map(|c| (c.kappa, c.fit_slope)).collect(),
        selection,
    })
}

fn impact_analysis(ctx: &Ctx, out: &Outputs) -> Result<()> {
    if let Some(series) = ctx.series() {
        let r = series.column("abs_return").context("impact needs an abs_return column")?;
        let v = series.column("volume").context("impact needs a volume column")?;
        let report = impact_one(ctx, out, &series.label, None, r, v)?;
        return out.json("impact/selection.json", &[report]);
    }
    let items = ctx.selected()?;
    for &dt in &ctx.cfg.impact.dt_list {
        let reports = per_asset(&items, |_, a, _| {
            let prep = data::prepare(&a.bars, dt)?;
            impact_one(ctx, out, &a.label, Some(dt), prep.r(), prep.v())
        })?;
        out.json(&format!("impact/selection_dt{dt}.json"), &reports)?;
    }
    Ok(())
}

fn session(ctx: &Ctx) -> Result<SessionSpec> {
    Ok(match &ctx.cfg.session {
        Some(p) => SessionSpec::from_file(p)?,
        None => SessionSpec::always(),
    })
}

/// Align bar series on common in-session timestamps and turn them into
/// normalized return series ready for ρ matrices.
fn aligned_assets(ctx: &Ctx, items: &[(&Asset, &AssetStats)], dt: u32) -> Result<Vec<AssetSeries>> {
    let bars: Vec<BarSeries> = items.iter().map(|(a, _)| a.bars.clone()).collect();
    let aligned = ingest::align_all(&bars, &session(ctx)?)?;
    aligned
        .series
        .par_iter()
        .zip(&aligned.coverage)
        .zip(items)
        .map(|((b, cov), (a, s))| {
            let prep = data::prepare(b, dt).with_context(|| a.label.clone())?;
            Ok(AssetSeries {
                label: a.label.clone(),
                values: prep.r().to_vec(),
                mean_intertrade_s: Some(s.mean_intertrade_time_s),
                coverage: *cov,
            })
        })
        .collect()
}

fn mst_analysis(ctx: &Ctx, out: &Outputs) -> Result<()> {
    let p = &ctx.cfg.mst;
    let items = ctx.selected()?;
    let series = aligned_assets(ctx, &items, p.dt)?;
    let meta: BTreeMap<String, (Option<Group>, Option<f64>)> = items
        .iter()
        .map(|(a, s)| (a.label.clone(), (Some(s.group), Some(s.mean_volume_per_min))))
        .collect();
    let jobs: Vec<(f64, usize)> = p.q.iter().flat_map(|&q| p.s.iter().map(move |&s| (q, s))).collect();
    jobs.par_iter()
        .map(|&(q, s)| {
            let stem = format!("q{q}_s{s}");
            let m = network::correlation_matrix(&series, q, s, p.poly_degree)?;
            out.file(&format!("mst/rho_{stem}.csv"), |w| m.write_csv(w))?;
            let missing = m.missing_pairs();
            ensure!(missing.is_empty(), "undefined ρ for pairs {missing:?}");
            let mut tree = network::minimal_spanning_tree(&network::to_distances(&m)?)?;
            tree.annotate(&meta);
            let json = tree.to_json()?;
            out.file(&format!("mst/tree_{stem}.json"), |w| writeln!(w, "{json}"))?;
            out.file(&format!("mst/tree_{stem}.dot"), |w| w.write_all(tree.to_dot().as_bytes()))?;
            out.file(&format!("mst/hubs_{stem}.csv"), |w| {
                writeln!(w, "label,degree")?;
                for h in network::hub_report(&tree) {
                    writeln!(w, "{},{}", h.label, h.degree)?;
                }
                Ok(())
            })
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

fn intermarket_analysis(ctx: &Ctx, out: &Outputs) -> Result<()> {
    let p = &ctx.cfg.intermarket;
    let labels: Vec<&String> = p.rows.iter().chain(&p.cols).collect();
    let items: Vec<(&Asset, &AssetStats)> = labels.iter().map(|l| ctx.by_label(l)).collect::<Result<_>>()?;
    let series = aligned_assets(ctx, &items, p.dt)?;
    let (rows, cols) = series.split_at(p.rows.len());
    out.file("intermarket/coverage.csv", |w| {
        writeln!(w, "label,coverage")?;
        for a in &series {
            writeln!(w, "{},{}", a.label, a.coverage)?;
        }
        Ok(())
    })?;
    for &s in &p.s {
        let block = network::intermarket_matrix(rows, cols, p.q, s, p.poly_degree, p.coverage_floor)?;
        out.file(&format!("intermarket/rho_q{}_s{s}.csv", p.q), |w| block.write_csv(w))?;
    }
    Ok(())
}
