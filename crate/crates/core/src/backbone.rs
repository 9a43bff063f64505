//! Baseline backbone extraction: global threshold (GT), high salience
//! skeleton (HSS), primary linkage analysis (PLA) and k-means cluster
//! filtering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{dijkstra_indexed, weighted_degree, CooccurrenceNetwork, LengthMode};
use crate::ingest::{Category, CategoryMap};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gt,
    Hss,
    Pla,
    Cluster,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Gt => "gt",
            Method::Hss => "hss",
            Method::Pla => "pla",
            Method::Cluster => "cluster",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Ok(Method::Gt),
            "hss" => Ok(Method::Hss),
            "pla" => Ok(Method::Pla),
            "cluster" => Ok(Method::Cluster),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

/// Parameters of one backbone run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum BackboneParams {
    Gt {
        threshold: f64,
        #[serde(default)]
        strict: bool,
    },
    Hss {
        salience_threshold: f64,
        #[serde(default)]
        length_mode: LengthMode,
    },
    Pla,
    Cluster {
        k: Option<usize>,
        sigma_mult: f64,
        seed: u64,
    },
}

impl BackboneParams {
    pub fn method(&self) -> Method {
        match self {
            BackboneParams::Gt { .. } => Method::Gt,
            BackboneParams::Hss { .. } => Method::Hss,
            BackboneParams::Pla => Method::Pla,
            BackboneParams::Cluster { .. } => Method::Cluster,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneResult {
    pub sub: CooccurrenceNetwork,
    pub params: BackboneParams,
    pub removed_nodes: BTreeSet<String>,
}

impl BackboneResult {
    pub fn method(&self) -> Method {
        self.params.method()
    }
}

/// Serializable summary written next to the edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneManifest {
    pub params: BackboneParams,
    pub nodes: usize,
    pub edges: usize,
    pub removed_nodes: BTreeSet<String>,
}

impl From<&BackboneResult> for BackboneManifest {
    fn from(r: &BackboneResult) -> Self {
        BackboneManifest {
            params: r.params.clone(),
            nodes: r.sub.node_count(),
            edges: r.sub.edge_count(),
            removed_nodes: r.removed_nodes.clone(),
        }
    }
}

fn edge_filter_result(
    g: &CooccurrenceNetwork,
    params: BackboneParams,
    keep: impl FnMut(&str, &str, f64) -> bool,
) -> BackboneResult {
    let mut sub = g.filter_edges(keep);
    let removed_nodes = sub.drop_isolated();
    BackboneResult {
        sub,
        params,
        removed_nodes,
    }
}

/// Keeps edges with `w >= threshold` (`w > threshold` when `strict`); nodes
/// left without edges are removed.
pub fn global_threshold(g: &CooccurrenceNetwork, threshold: f64, strict: bool) -> BackboneResult {
    edge_filter_result(g, BackboneParams::Gt { threshold, strict }, |_, _, w| {
        if strict {
            w > threshold
        } else {
            w >= threshold
        }
    })
}

/// Number of per-source shortest-path trees containing each edge, keyed by
/// `(u, v)` with `u < v`. Edges in no tree are absent.
pub fn salience_counts(
    g: &CooccurrenceNetwork,
    mode: LengthMode,
) -> BTreeMap<(String, String), usize> {
    let ig = g.indexed();
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for s in 0..ig.len() {
        let (parent, _) = dijkstra_indexed(&ig, s, mode);
        for (child, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                *counts.entry((child.min(p), child.max(p))).or_insert(0) += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|((a, b), c)| ((ig.ids[a].to_string(), ig.ids[b].to_string()), c))
        .collect()
}

/// Edge salience: fraction of shortest-path trees (one per node) containing the edge.
pub fn edge_salience(g: &CooccurrenceNetwork, mode: LengthMode) -> BTreeMap<(String, String), f64> {
    let n = g.node_count() as f64;
    salience_counts(g, mode)
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n))
        .collect()
}

pub fn high_salience_skeleton(
    g: &CooccurrenceNetwork,
    salience_threshold: f64,
    mode: LengthMode,
) -> BackboneResult {
    let counts = salience_counts(g, mode);
    let n = g.node_count();
    edge_filter_result(
        g,
        BackboneParams::Hss {
            salience_threshold,
            length_mode: mode,
        },
        |u, v, _| {
            let c = counts
                .get(&(u.to_string(), v.to_string()))
                .copied()
                .unwrap_or(0);
            c as f64 / n as f64 >= salience_threshold
        },
    )
}

/// Each node's strongest incident edge; ties go to the smaller neighbour id.
pub fn strongest_neighbors(g: &CooccurrenceNetwork) -> BTreeMap<&str, &str> {
    g.nodes()
        .filter_map(|u| {
            // neighbours iterate in ascending id order, so strict > keeps the first maximum
            let mut best: Option<(&str, f64)> = None;
            for (v, w) in g.neighbors(u) {
                if best.is_none_or(|(_, bw)| w > bw) {
                    best = Some((v, w));
                }
            }
            best.map(|(v, _)| (u, v))
        })
        .collect()
}

/// Keeps edge `(i, j)` iff it is the strongest edge of both `i` and `j`.
/// All nodes are retained.
pub fn primary_linkage(g: &CooccurrenceNetwork) -> BackboneResult {
    let best = strongest_neighbors(g);
    let sub = g.filter_edges(|u, v, _| best.get(u) == Some(&v) && best.get(v) == Some(&u));
    BackboneResult {
        sub,
        params: BackboneParams::Pla,
        removed_nodes: BTreeSet::new(),
    }
}

/// Result of Lloyd's k-means.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Seeded k-means: `k` distinct rows as initial centers, then Lloyd
/// iterations until the relative center shift drops below [`KMEANS_TOL`].
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must be in 1..={n}"
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::ShapeMismatch("feature rows differ in length".into()));
    }
    let mut rng = rng_for(seed, &["kmeans"]);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    let mut centers: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
    let mut assignment = vec![0; n];
    let mut iterations = 0;
    for it in 0..KMEANS_MAX_ITERS {
        iterations = it + 1;
        for (i, p) in points.iter().enumerate() {
            assignment[i] = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .expect("k >= 1");
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift = 0.0;
        let mut scale = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue; // empty cluster keeps its center
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift += sq_dist(&new, &centers[c]);
            scale += centers[c].iter().map(|x| x * x).sum::<f64>();
            centers[c] = new;
        }
        if shift.sqrt() <= KMEANS_TOL * scale.sqrt().max(1.0) {
            break;
        }
    }
    Ok(KMeans {
        centers,
        assignment,
        iterations,
    })
}

/// Cosine similarity; two zero vectors count as identical (1), one zero
/// vector against a nonzero one as 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (true, true) => (dot / (na * nb)).clamp(-1.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

pub fn default_k(n: usize) -> usize {
    ((n as f64 / 2.0).sqrt().round() as usize).clamp(1, n.max(1))
}

/// Node features for cluster filtering: weighted degree, call count and the
/// category one-hot, each column z-scored (constant columns become 0).
pub fn node_features(
    g: &CooccurrenceNetwork,
    calls: &BTreeMap<String, f64>,
    categories: &CategoryMap,
) -> BTreeMap<String, Vec<f64>> {
    let raw: Vec<(String, Vec<f64>)> = g
        .nodes()
        .map(|id| {
            let mut f = vec![
                weighted_degree(g, id).unwrap_or(0.0),
                calls.get(id).copied().unwrap_or(0.0),
            ];
            let cat = categories.get(id);
            f.extend(
                Category::ALL
                    .iter()
                    .map(|c| f64::from(u8::from(cat == Some(*c)))),
            );
            (id.to_string(), f)
        })
        .collect();
    if raw.is_empty() {
        return BTreeMap::new();
    }
    let dim = raw[0].1.len();
    let n = raw.len() as f64;
    let mut out: BTreeMap<String, Vec<f64>> = raw.iter().cloned().collect();
    for d in 0..dim {
        let mean = raw.iter().map(|(_, f)| f[d]).sum::<f64>() / n;
        let var = raw.iter().map(|(_, f)| (f[d] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for f in out.values_mut() {
            f[d] = if sd > 0.0 { (f[d] - mean) / sd } else { 0.0 };
        }
    }
    out
}

/// Cosine similarity of every node to its k-means center, in node order.
pub fn center_similarities(points: &[Vec<f64>], km: &KMeans) -> Vec<f64> {
    points
        .iter()
        .zip(&km.assignment)
        .map(|(p, &a)| cosine(p, &km.centers[a]))
        .collect()
}

/// k-means over node features, then removes nodes whose similarity to their
/// center is below `mean - sigma_mult * sd`. Returns the induced subgraph.
pub fn cluster_filter(
    g: &CooccurrenceNetwork,
    features: &BTreeMap<String, Vec<f64>>,
    k: Option<usize>,
    sigma_mult: f64,
    seed: u64,
) -> Result<BackboneResult> {
    let ids: Vec<&str> = g.nodes().collect();
    let params = BackboneParams::Cluster {
        k,
        sigma_mult,
        seed,
    };
    if ids.is_empty() {
        return Ok(BackboneResult {
            sub: CooccurrenceNetwork::new(),
            params,
            removed_nodes: BTreeSet::new(),
        });
    }
    let points: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| {
            features
                .get(*id)
                .cloned()
                .ok_or_else(|| Error::InvalidParameter(format!("no features for node `{id}`")))
        })
        .collect::<Result<_>>()?;
    let k = k.unwrap_or_else(|| default_k(ids.len()));
    let km = kmeans(&points, k, seed)?;
    let sims = center_similarities(&points, &km);
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    let sd = (sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cutoff = mean - sigma_mult * sd;
    let (keep, removed): (Vec<_>, Vec<_>) = ids
        .iter()
        .zip(&sims)
        .partition(|(_, &s)| s >= cutoff - 1e-12);
    Ok(BackboneResult {
        sub: g.induced_subgraph(keep.into_iter().map(|(id, _)| *id)),
        params,
        removed_nodes: removed.into_iter().map(|(id, _)| id.to_string()).collect(),
    })
}
