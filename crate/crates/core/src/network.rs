//! q-dependent detrended correlation matrices, metric distances
//! `d = sqrt(2(1 − ρ))` and minimal spanning trees.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Group;
use crate::mfractal::{self, MfError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error(transparent)]
    Fluctuation(#[from] MfError),
    #[error("need at least {need} series, got {found}")]
    TooFewNodes { found: usize, need: usize },
    #[error("series {label} has length {len}, expected {expected}")]
    LengthMismatch { label: String, len: usize, expected: usize },
    #[error("rho[{i}][{j}] = {value} outside [-1, 1]")]
    OutOfRange { i: usize, j: usize, value: f64 },
    #[error("undefined entries for pairs {0:?}")]
    Missing(Vec<(String, String)>),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("alignment coverage below floor {floor}: {report:?}")]
    Coverage { floor: f64, report: Vec<(String, f64)> },
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// A normalized series on a grid shared with the other assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSeries {
    pub label: String,
    pub values: Vec<f64>,
    /// δt in seconds, used for ordering.
    pub mean_intertrade_s: Option<f64>,
    /// Fraction of the asset's own bars kept by calendar alignment.
    pub coverage: f64,
}

impl AssetSeries {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            values,
            mean_intertrade_s: None,
            coverage: 1.0,
        }
    }
}

/// Symmetric matrix of ρ_q^{ij}(s) at one (q, s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrixQ {
    pub labels: Vec<String>,
    pub q: f64,
    pub s: usize,
    /// Row-major, `None` where ρ is undefined.
    pub rho: Vec<Option<f64>>,
    /// Display order of the assets (ascending δt when known).
    pub ordering: Vec<usize>,
}

impl CorrelationMatrixQ {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rho[i * self.n() + j]
    }

    pub fn missing_pairs(&self) -> Vec<(String, String)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.get(i, j).is_none() {
                    out.push((self.labels[i].clone(), self.labels[j].clone()));
                }
            }
        }
        out
    }

    /// CSV with a label header row and label first column, in `ordering`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "label")?;
        for &i in &self.ordering {
            write!(out, ",{}", self.labels[i])?;
        }
        writeln!(out)?;
        for &i in &self.ordering {
            write!(out, "{}", self.labels[i])?;
            for &j in &self.ordering {
                match self.get(i, j) {
                    Some(v) => write!(out, ",{v}")?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn ascending_intertrade(series: &[&AssetSeries]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by(|&a, &b| {
        let ka = series[a].mean_intertrade_s.unwrap_or(f64::INFINITY);
        let kb = series[b].mean_intertrade_s.unwrap_or(f64::INFINITY);
        ka.total_cmp(&kb).then_with(|| series[a].label.cmp(&series[b].label))
    });
    order
}

fn check_lengths(series: &[&AssetSeries]) -> Result<usize> {
    let expected = series[0].values.len();
    if let Some(bad) = series.iter().find(|s| s.values.len() != expected) {
        return Err(NetworkError::LengthMismatch {
            label: bad.label.clone(),
            len: bad.values.len(),
            expected,
        });
    }
    Ok(expected)
}

/// Univariate F_q(s) of one series: computed once per asset and reused for
/// every pair it belongs to.
fn univariate_at(x: &[f64], q: f64, s: usize, degree: usize) -> Option<f64> {
    mfractal::univariate_fq(&mfractal::segment_variances(x, s, degree), q).0
}

fn pair_rho(a: &[f64], b: &[f64], q: f64, s: usize, degree: usize, fa: Option<f64>, fb: Option<f64>) -> Result<Option<f64>> {
    let moments = mfractal::segment_moments(a, b, s, degree);
    let fab = mfractal::bivariate_fq(&moments.ab, q).0;
    Ok(mfractal::rho_from_parts(q, s, fab, fa, fb)?)
}

/// ρ_q^{ij}(s) for all pairs of aligned series.
pub fn correlation_matrix(series: &[AssetSeries], q: f64, s: usize, degree: usize) -> Result<CorrelationMatrixQ> {
    if series.is_empty() {
        return Err(NetworkError::TooFewNodes { found: 0, need: 1 });
    }
    let refs: Vec<&AssetSeries> = series.iter().collect();
    let len = check_lengths(&refs)?;
    mfractal::DetrendConfig::new(degree, vec![s], vec![q]).validate(len)?;
    let n = series.len();
    let univariate: Vec<Option<f64>> = series.par_iter().map(|a| univariate_at(&a.values, q, s, degree)).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let entries: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| pair_rho(&series[i].values, &series[j].values, q, s, degree, univariate[i], univariate[j]))
        .collect::<Result<_>>()?;
    let mut rho = vec![None; n * n];
    for i in 0..n {
        rho[i * n + i] = univariate[i].map(|_| 1.0);
    }
    for (&(i, j), v) in pairs.iter().zip(entries) {
        rho[i * n + j] = v;
        rho[j * n + i] = v;
    }
    Ok(CorrelationMatrixQ {
        labels: series.iter().map(|a| a.label.clone()).collect(),
        q,
        s,
        rho,
        ordering: ascending_intertrade(&refs),
    })
}

/// Symmetric distance matrix with zero diagonal and entries in [0, 2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrixQ {
    pub labels: Vec<String>,
    /// Row-major; `None` where the underlying ρ is undefined.
    pub d: Vec<Option<f64>>,
}

impl DistanceMatrixQ {
    /// Build from explicit rows, checking the metric-matrix invariants.
    pub fn new(labels: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = labels.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(NetworkError::InvalidMatrix(format!("expected {n}x{n} entries")));
        }
        for i in 0..n {
            if rows[i][i] != 0.0 {
                return Err(NetworkError::InvalidMatrix(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..n {
                let v = rows[i][j];
                if !(0.0..=2.0).contains(&v) {
                    return Err(NetworkError::InvalidMatrix(format!("d[{i}][{j}] = {v} outside [0, 2]")));
                }
                if v != rows[j][i] {
                    return Err(NetworkError::InvalidMatrix(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            labels,
            d: rows.iter().flatten().map(|v| Some(*v)).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.d[i * self.n() + j]
    }
}

/// Elementwise `d = sqrt(2(1 − ρ))`.
pub fn to_distances(m: &CorrelationMatrixQ) -> Result<DistanceMatrixQ> {
    let n = m.n();
    let mut d = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            d.push(match m.get(i, j) {
                None => None,
                Some(r) if !(-1.0..=1.0).contains(&r) => return Err(NetworkError::OutOfRange { i, j, value: r }),
                Some(_) if i == j => Some(0.0),
                Some(r) => Some((2.0 * (1.0 - r)).sqrt()),
            });
        }
    }
    Ok(DistanceMatrixQ {
        labels: m.labels.clone(),
        d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstNode {
    pub label: String,
    pub group: Option<Group>,
    /// Mean traded value per minute (W); sets the vertex size.
    pub mean_volume: Option<f64>,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstEdge {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    /// `1 − d`; sets the drawn edge width.
    pub weight_display: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstGraph {
    pub nodes: Vec<MstNode>,
    /// In insertion order of Prim's algorithm; `i < j` within each edge.
    pub edges: Vec<MstEdge>,
}

impl MstGraph {
    pub fn total_distance(&self) -> f64 {
        self.edges.iter().map(|e| e.distance).sum()
    }

    /// Edges as unordered label pairs, sorted.
    pub fn label_edges(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (&self.nodes[e.i].label, &self.nodes[e.j].label);
                if a <= b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                }
            })
            .collect();
        out.sort();
        out
    }

    /// Attach liquidity group and mean volume to nodes by label.
    pub fn annotate(&mut self, meta: &BTreeMap<String, (Option<Group>, Option<f64>)>) {
        for node in &mut self.nodes {
            if let Some((group, volume)) = meta.get(&node.label) {
                node.group = *group;
                node.mean_volume = *volume;
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Graphviz text: node `size` = mean volume, edge `penwidth` = 1 − d.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph mst {\n");
        for node in &self.nodes {
            let _ = write!(out, "  \"{}\" [degree={}", node.label, node.degree);
            if let Some(g) = node.group {
                let _ = write!(out, ", group=\"{g}\"");
            }
            if let Some(w) = node.mean_volume {
                let _ = write!(out, ", size={w}");
            }
            out.push_str("];\n");
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  \"{}\" -- \"{}\" [distance={}, penwidth={}];",
                self.nodes[e.i].label, self.nodes[e.j].label, e.distance, e.weight_display
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Prim's algorithm on the dense distance matrix, starting from the
/// lexicographically smallest label. Equal distances are resolved by the
/// smaller `(min(i, j), max(i, j))` edge.
pub fn minimal_spanning_tree(d: &DistanceMatrixQ) -> Result<MstGraph> {
    let n = d.n();
    if n < 2 {
        return Err(NetworkError::TooFewNodes { found: n, need: 2 });
    }
    let mut missing = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            match d.get(i, j) {
                Some(v) if v.is_finite() => {}
                _ => missing.push((d.labels[i].clone(), d.labels[j].clone())),
            }
        }
    }
    if !missing.is_empty() {
        return Err(NetworkError::Missing(missing));
    }
    let dist = |i: usize, j: usize| d.get(i, j).unwrap();
    let key = |from: usize, to: usize| (from.min(to), from.max(to));

    let start = (0..n).min_by(|&a, &b| d.labels[a].cmp(&d.labels[b]).then(a.cmp(&b))).unwrap();
    let mut in_tree = vec![false; n];
    in_tree[start] = true;
    let mut best: Vec<(f64, usize)> = (0..n).map(|v| (dist(start, v), start)).collect();
    let mut edges = Vec::with_capacity(n - 1);
    let mut degree = vec![0usize; n];

    for _ in 1..n {
        let mut pick: Option<usize> = None;
        for v in (0..n).filter(|v| !in_tree[*v]) {
            pick = match pick {
                None => Some(v),
                Some(u) => {
                    let (du, fu) = best[u];
                    let (dv, fv) = best[v];
                    if dv < du || (dv == du && key(fv, v) < key(fu, u)) {
                        Some(v)
                    } else {
                        Some(u)
                    }
                }
            };
        }
        let v = pick.expect("a vertex remains outside the tree");
        let (dv, from) = best[v];
        in_tree[v] = true;
        let (i, j) = key(from, v);
        degree[i] += 1;
        degree[j] += 1;
        edges.push(MstEdge {
            i,
            j,
            distance: dv,
            weight_display: 1.0 - dv,
        });
        for w in (0..n).filter(|w| !in_tree[*w]) {
            let dw = dist(v, w);
            let (cur, cur_from) = best[w];
            if dw < cur || (dw == cur && key(v, w) < key(cur_from, w)) {
                best[w] = (dw, v);
            }
        }
    }
    Ok(MstGraph {
        nodes: d
            .labels
            .iter()
            .zip(degree)
            .map(|(label, degree)| MstNode {
                label: label.clone(),
                group: None,
                mean_volume: None,
                degree,
            })
            .collect(),
        edges,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubEntry {
    pub label: String,
    pub degree: usize,
}

/// Nodes by descending degree, ties by label.
pub fn hub_report(g: &MstGraph) -> Vec<HubEntry> {
    let mut out: Vec<HubEntry> = g
        .nodes
        .iter()
        .map(|n| HubEntry {
            label: n.label.clone(),
            degree: n.degree,
        })
        .collect();
    out.sort_by(|a, b| b.degree.cmp(&a.degree).then_with(|| a.label.cmp(&b.label)));
    out
}

/// Rectangular ρ block between two groups of aligned series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermarketBlock {
    pub q: f64,
    pub s: usize,
    /// Rows in ascending δt.
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub rho: Vec<Vec<Option<f64>>>,
}

impl IntermarketBlock {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "label")?;
        for c in &self.col_labels {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for (label, row) in self.row_labels.iter().zip(&self.rho) {
            write!(out, "{label}")?;
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

    pub fn max_abs(&self) -> Option<f64> {
        self.rho.iter().flatten().flatten().map(|v| v.abs()).reduce(f64::max)
    }
}

/// ρ between every row series (e.g. cryptocurrencies) and every column
/// series (e.g. traditional assets). Refuses when any series kept less than
/// `coverage_floor` of its bars during calendar alignment.
pub fn intermarket_matrix(
    rows: &[AssetSeries],
    cols: &[AssetSeries],
    q: f64,
    s: usize,
    degree: usize,
    coverage_floor: f64,
) -> Result<IntermarketBlock> {
    if rows.is_empty() || cols.is_empty() {
        return Err(NetworkError::TooFewNodes {
            found: rows.len().min(cols.len()),
            need: 1,
        });
    }
    let all: Vec<&AssetSeries> = rows.iter().chain(cols).collect();
    let low: Vec<(String, f64)> = all
        .iter()
        .filter(|a| a.coverage < coverage_floor)
        .map(|a| (a.label.clone(), a.coverage))
        .collect();
    if !low.is_empty() {
        return Err(NetworkError::Coverage {
            floor: coverage_floor,
            report: all.iter().map(|a| (a.label.clone(), a.coverage)).collect(),
        });
    }
    let len = check_lengths(&all)?;
    mfractal::DetrendConfig::new(degree, vec![s], vec![q]).validate(len)?;

    let row_refs: Vec<&AssetSeries> = rows.iter().collect();
    let order = ascending_intertrade(&row_refs);
    let fr: Vec<Option<f64>> = rows.par_iter().map(|a| univariate_at(&a.values, q, s, degree)).collect();
    let fc: Vec<Option<f64>> = cols.par_iter().map(|a| univariate_at(&a.values, q, s, degree)).collect();
    let rho: Vec<Vec<Option<f64>>> = order
        .par_iter()
        .map(|&i| {
            cols.iter()
                .enumerate()
                .map(|(j, c)| pair_rho(&rows[i].values, &c.values, q, s, degree, fr[i], fc[j]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(IntermarketBlock {
        q,
        s,
        row_labels: order.iter().map(|&i| rows[i].label.clone()).collect(),
        col_labels: cols.iter().map(|c| c.label.clone()).collect(),
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("A{i}")).collect()
    }

    #[test]
    fn distance_examples() {
        let m = CorrelationMatrixQ {
            labels: labels(2),
            q: 1.0,
            s: 10,
            rho: vec![Some(1.0), Some(0.0), Some(0.0), Some(1.0)],
            ordering: vec![0, 1],
        };
        let d = to_distances(&m).unwrap();
        assert_eq!(d.get(0, 0), Some(0.0));
        assert!((d.get(0, 1).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let m = CorrelationMatrixQ {
            rho: vec![Some(1.0), Some(-1.0), Some(-1.0), Some(1.0)],
            ..m
        };
        assert_eq!(to_distances(&m).unwrap().get(1, 0), Some(2.0));
        let m = CorrelationMatrixQ {
            rho: vec![Some(1.0), Some(1.5), Some(1.5), Some(1.0)],
            ..m
        };
        assert!(matches!(to_distances(&m), Err(NetworkError::OutOfRange { .. })));
    }

    #[test]
    fn star_structure_gives_star_tree() {
        // node 2 is close to everyone, the others are far apart
        let n = 5;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match (i, j) {
                        _ if i == j => 0.0,
                        (2, _) | (_, 2) => 0.1 + 0.01 * (i + j) as f64,
                        _ => 1.5,
                    })
                    .collect()
            })
            .collect();
        let d = DistanceMatrixQ::new(labels(n), &rows).unwrap();
        let g = minimal_spanning_tree(&d).unwrap();
        assert_eq!(g.edges.len(), n - 1);
        assert!(g.edges.iter().all(|e| e.i == 2 || e.j == 2));
        let hubs = hub_report(&g);
        assert_eq!(hubs[0], HubEntry { label: "A2".into(), degree: n - 1 });
    }

    #[test]
    fn path_graph_hub_report() {
        // points on a line: MST is the path
        let n = 6;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (i as f64 - j as f64).abs() * 0.3).collect())
            .collect();
        let g = minimal_spanning_tree(&DistanceMatrixQ::new(labels(n), &rows).unwrap()).unwrap();
        let hubs = hub_report(&g);
        assert!(hubs[..n - 2].iter().all(|h| h.degree == 2));
        assert!(hubs[n - 2..].iter().all(|h| h.degree == 1));
        assert_eq!(hubs.iter().map(|h| h.degree).sum::<usize>(), 2 * (n - 1));
    }

    #[test]
    fn missing_entries_are_listed() {
        let d = DistanceMatrixQ {
            labels: labels(3),
            d: vec![Some(0.0), None, Some(1.0), None, Some(0.0), Some(1.0), Some(1.0), Some(1.0), Some(0.0)],
        };
        match minimal_spanning_tree(&d) {
            Err(NetworkError::Missing(p)) => assert_eq!(p, vec![("A0".to_string(), "A1".to_string())]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equal_distances_break_ties_by_index() {
        let rows = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        let g = minimal_spanning_tree(&DistanceMatrixQ::new(labels(3), &rows).unwrap()).unwrap();
        let pairs: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn dot_export_carries_attributes() {
        let rows = vec![vec![0.0, 0.4], vec![0.4, 0.0]];
        let mut g = minimal_spanning_tree(&DistanceMatrixQ::new(vec!["BTC".into(), "ETH".into()], &rows).unwrap()).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("BTC".to_string(), (Some(Group::I), Some(1.5e6)));
        g.annotate(&meta);
        let dot = g.to_dot();
        assert!(dot.contains("\"BTC\" [degree=1, group=\"I\", size=1500000]"));
        assert!(dot.contains("\"BTC\" -- \"ETH\" [distance=0.4, penwidth=0.6]"));
        assert!(g.to_json().unwrap().contains("\"weight_display\": 0.6"));
    }
}
