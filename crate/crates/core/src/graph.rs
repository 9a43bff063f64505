//! Weighted undirected co-occurrence graph and the structural metrics used in
//! the scenario vector (NF, WF, WE, LCC_S, Reachability).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighted undirected graph keyed by string node ids.
///
/// Adjacency is stored symmetrically in ordered maps so every traversal is
/// deterministic and node order equals lexicographic id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooccurrenceNetwork {
    adj: BTreeMap<String, BTreeMap<String, f64>>,
}

/// A single undirected edge with `u < v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: String,
    pub v: String,
    pub w: f64,
}

impl CooccurrenceNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>) {
        self.adj.entry(id.into()).or_default();
    }

    /// Adds `w` to the weight of edge `(a, b)`, creating both nodes as needed.
    /// Self-loops and non-positive weights are ignored.
    pub fn add_weight(&mut self, a: &str, b: &str, w: f64) {
        if a == b || !(w > 0.0) {
            self.add_node(a);
            self.add_node(b);
            return;
        }
        *self
            .adj
            .entry(a.to_string())
            .or_default()
            .entry(b.to_string())
            .or_insert(0.0) += w;
        *self
            .adj
            .entry(b.to_string())
            .or_default()
            .entry(a.to_string())
            .or_insert(0.0) += w;
    }

    /// Sets the weight of edge `(a, b)`, replacing any previous value.
    pub fn set_edge(&mut self, a: &str, b: &str, w: f64) -> Result<()> {
        if a == b {
            return Err(Error::InvalidParameter(format!("self-loop on `{a}`")));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "edge ({a},{b}) weight must be positive, got {w}"
            )));
        }
        self.adj
            .entry(a.to_string())
            .or_default()
            .insert(b.to_string(), w);
        self.adj
            .entry(b.to_string())
            .or_default()
            .insert(a.to_string(), w);
        Ok(())
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.adj.contains_key(id)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeMap::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> + '_ {
        self.adj.keys().map(String::as_str)
    }

    /// Edges in canonical order, each reported once with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.adj.iter().flat_map(|(u, nbrs)| {
            nbrs.iter()
                .filter(move |(v, _)| u.as_str() < v.as_str())
                .map(move |(v, &w)| (u.as_str(), v.as_str(), w))
        })
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<f64> {
        self.adj.get(a).and_then(|n| n.get(b)).copied()
    }

    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.adj
            .get(id)
            .into_iter()
            .flat_map(|n| n.iter().map(|(v, &w)| (v.as_str(), w)))
    }

    pub fn degree(&self, id: &str) -> usize {
        self.adj.get(id).map_or(0, BTreeMap::len)
    }

    pub fn total_weight(&self) -> f64 {
        self.edges().map(|(_, _, w)| w).sum()
    }

    /// Subgraph induced by `keep` (nodes not in the graph are ignored).
    pub fn induced_subgraph<'a>(&self, keep: impl IntoIterator<Item = &'a str>) -> Self {
        let keep: BTreeSet<&str> = keep.into_iter().collect();
        let mut out = Self::new();
        for (u, nbrs) in &self.adj {
            if !keep.contains(u.as_str()) {
                continue;
            }
            let row = nbrs
                .iter()
                .filter(|(v, _)| keep.contains(v.as_str()))
                .map(|(v, &w)| (v.clone(), w))
                .collect();
            out.adj.insert(u.clone(), row);
        }
        out
    }

    /// Keeps every node and only the edges for which `keep` returns true.
    pub fn filter_edges(&self, mut keep: impl FnMut(&str, &str, f64) -> bool) -> Self {
        let mut out = Self::new();
        for n in self.nodes() {
            out.add_node(n);
        }
        for (u, v, w) in self.edges() {
            if keep(u, v, w) {
                out.add_weight(u, v, w);
            }
        }
        out
    }

    /// Removes nodes with no incident edge and returns their ids.
    pub fn drop_isolated(&mut self) -> BTreeSet<String> {
        let isolated: BTreeSet<String> = self
            .adj
            .iter()
            .filter(|(_, n)| n.is_empty())
            .map(|(k, _)| k.clone())
            .collect();
        for k in &isolated {
            self.adj.remove(k);
        }
        isolated
    }

    /// True when every node and edge of `self` is in `other` with equal weight.
    pub fn is_subgraph_of(&self, other: &Self) -> bool {
        self.nodes().all(|n| other.contains_node(n))
            && self.edges().all(|(u, v, w)| other.weight(u, v) == Some(w))
    }

    pub fn indexed(&self) -> IndexedGraph<'_> {
        let ids: Vec<&str> = self.nodes().collect();
        let pos: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let adj = self
            .adj
            .values()
            .map(|nbrs| nbrs.iter().map(|(v, &w)| (pos[v.as_str()], w)).collect())
            .collect();
        IndexedGraph { ids, adj }
    }

    /// Edge-list text: one `u v weight` line per edge, then one line per
    /// isolated node carrying only its id.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (u, v, w) in self.edges() {
            let _ = writeln!(out, "{u} {v} {w}");
        }
        for (n, nbrs) in &self.adj {
            if nbrs.is_empty() {
                let _ = writeln!(out, "{n}");
            }
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut g = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = |message: String| Error::Parse {
                file: "edge list".into(),
                line: i as u64 + 1,
                message,
            };
            match parts.as_slice() {
                [n] => g.add_node(*n),
                [u, v, w] => {
                    let w: f64 = w.parse().map_err(|e| bad(format!("weight: {e}")))?;
                    g.set_edge(u, v, w).map_err(|e| bad(e.to_string()))?;
                }
                _ => return Err(bad(format!("expected `u v weight`, got {line:?}"))),
            }
        }
        Ok(g)
    }

    /// JSON document with node attributes (e.g. category, entity kind, component id).
    pub fn to_json(&self, attrs: &BTreeMap<String, BTreeMap<String, String>>) -> NetworkJson {
        NetworkJson {
            nodes: self
                .nodes()
                .map(|id| NodeJson {
                    id: id.to_string(),
                    attrs: attrs.get(id).cloned().unwrap_or_default(),
                })
                .collect(),
            edges: self
                .edges()
                .map(|(u, v, w)| Edge {
                    u: u.to_string(),
                    v: v.to_string(),
                    w,
                })
                .collect(),
        }
    }

    pub fn from_json(doc: &NetworkJson) -> Result<Self> {
        let mut g = Self::new();
        for n in &doc.nodes {
            g.add_node(n.id.clone());
        }
        for e in &doc.edges {
            g.set_edge(&e.u, &e.v, e.w)?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkJson {
    pub nodes: Vec<NodeJson>,
    pub edges: Vec<Edge>,
}

/// Dense index view of a network. `ids` is sorted, so comparing indices is
/// the same as comparing ids.
#[derive(Debug, Clone)]
pub struct IndexedGraph<'a> {
    pub ids: Vec<&'a str>,
    pub adj: Vec<Vec<(usize, f64)>>,
}

impl IndexedGraph<'_> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Component label per node, labels numbered in order of first node.
    pub fn component_labels(&self) -> Vec<usize> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn component_sizes(&self) -> Vec<usize> {
        let labels = self.component_labels();
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0; k];
        for l in labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Edge length used by shortest-path trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    /// length = 1 / weight, so strong ties are short
    #[default]
    InverseWeight,
    Unit,
}

impl LengthMode {
    #[inline]
    pub fn length(self, w: f64) -> f64 {
        match self {
            LengthMode::InverseWeight => 1.0 / w,
            LengthMode::Unit => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPathTree {
    pub source: String,
    /// child -> parent for every reachable node except the source
    pub parent: BTreeMap<String, String>,
    pub dist: BTreeMap<String, f64>,
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then on index
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra over an indexed graph.
///
/// Among equal-distance predecessors the smallest index (= smallest id) is
/// chosen as parent. Returns `(parent, dist)`, unreachable nodes have
/// `dist = inf` and no parent.
pub fn dijkstra_indexed(
    g: &IndexedGraph<'_>,
    source: usize,
    mode: LengthMode,
) -> (Vec<Option<usize>>, Vec<f64>) {
    let n = g.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if done[u] || d > dist[u] {
            continue;
        }
        done[u] = true;
        for &(v, w) in &g.adj[u] {
            if done[v] {
                continue;
            }
            let nd = d + mode.length(w);
            if nd < dist[v] {
                dist[v] = nd;
                parent[v] = Some(u);
                heap.push(HeapItem(nd, v));
            } else if nd == dist[v] && parent[v].is_some_and(|p| u < p) {
                parent[v] = Some(u);
            }
        }
    }
    (parent, dist)
}

pub fn shortest_path_tree(
    g: &CooccurrenceNetwork,
    source: &str,
    mode: LengthMode,
) -> Result<ShortestPathTree> {
    let ig = g.indexed();
    let src = ig
        .ids
        .binary_search(&source)
        .map_err(|_| Error::UnknownNode(source.to_string()))?;
    let (parent, dist) = dijkstra_indexed(&ig, src, mode);
    let mut tree = ShortestPathTree {
        source: source.to_string(),
        parent: BTreeMap::new(),
        dist: BTreeMap::new(),
    };
    for (i, d) in dist.iter().enumerate() {
        if d.is_finite() {
            tree.dist.insert(ig.ids[i].to_string(), *d);
        }
        if let Some(p) = parent[i] {
            tree.parent
                .insert(ig.ids[i].to_string(), ig.ids[p].to_string());
        }
    }
    Ok(tree)
}

pub fn node_fraction(sub: &CooccurrenceNetwork, orig: &CooccurrenceNetwork) -> Result<f64> {
    if orig.is_empty() {
        return Err(Error::EmptyNetwork("original network has no nodes"));
    }
    Ok(sub.node_count() as f64 / orig.node_count() as f64)
}

pub fn weight_fraction(sub: &CooccurrenceNetwork, orig: &CooccurrenceNetwork) -> Result<f64> {
    let total = orig.total_weight();
    if !(total > 0.0) {
        return Err(Error::EmptyNetwork(
            "original network has zero total weight",
        ));
    }
    Ok(sub.total_weight() / total)
}

/// Shannon entropy (bits) of the edge-weight distribution. Zero for graphs
/// with fewer than two edges.
pub fn weight_entropy(g: &CooccurrenceNetwork) -> f64 {
    let total = g.total_weight();
    if !(total > 0.0) {
        return 0.0;
    }
    let h: f64 = g
        .edges()
        .map(|(_, _, w)| {
            let p = w / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

pub fn weight_entropy_ratio(sub: &CooccurrenceNetwork, orig: &CooccurrenceNetwork) -> Result<f64> {
    let h_orig = weight_entropy(orig);
    if !(h_orig > 0.0) {
        return Err(Error::Degenerate(
            "original network weight entropy is zero".into(),
        ));
    }
    Ok(weight_entropy(sub) / h_orig)
}

/// Node count of the largest connected component (isolated nodes count as 1).
pub fn largest_component_size(g: &CooccurrenceNetwork) -> usize {
    g.indexed().component_sizes().into_iter().max().unwrap_or(0)
}

pub fn lcc_size_ratio(sub: &CooccurrenceNetwork, orig: &CooccurrenceNetwork) -> Result<f64> {
    let lcc_orig = largest_component_size(orig);
    if lcc_orig == 0 {
        return Err(Error::EmptyNetwork("original network has no nodes"));
    }
    Ok(largest_component_size(sub) as f64 / lcc_orig as f64)
}

/// Fraction of unordered node pairs joined by at least one path.
pub fn reachability(g: &CooccurrenceNetwork) -> Result<f64> {
    let n = g.node_count();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "reachability needs at least 2 nodes, got {n}"
        )));
    }
    let pairs = |k: usize| (k * k.saturating_sub(1) / 2) as f64;
    let connected: f64 = g.indexed().component_sizes().into_iter().map(pairs).sum();
    Ok(connected / pairs(n))
}

pub fn weighted_degree(g: &CooccurrenceNetwork, node: &str) -> Result<f64> {
    if !g.contains_node(node) {
        return Err(Error::UnknownNode(node.to_string()));
    }
    Ok(g.neighbors(node).map(|(_, w)| w).sum())
}

/// The five structural components of the scenario vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralQuintuple {
    pub nf: f64,
    pub wf: f64,
    pub we: f64,
    pub lcc_s: f64,
    pub reachability: f64,
}

/// Raw (un-normalised) structural values of a single network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawStructure {
    pub nodes: usize,
    pub edges: usize,
    pub total_weight: f64,
    pub weight_entropy: f64,
    pub lcc_size: usize,
}

impl RawStructure {
    pub fn of(g: &CooccurrenceNetwork) -> Self {
        RawStructure {
            nodes: g.node_count(),
            edges: g.edge_count(),
            total_weight: g.total_weight(),
            weight_entropy: weight_entropy(g),
            lcc_size: largest_component_size(g),
        }
    }
}

impl StructuralQuintuple {
    /// Computes `(NF, WF, WE, LCC_S, Reachability)` of `sub` against `orig`.
    /// WE and LCC_S are ratios to the original. A sub-network with fewer
    /// than two nodes has reachability 0.
    pub fn compute(sub: &CooccurrenceNetwork, orig: &CooccurrenceNetwork) -> Result<Self> {
        Ok(StructuralQuintuple {
            nf: node_fraction(sub, orig)?,
            wf: weight_fraction(sub, orig)?,
            we: weight_entropy_ratio(sub, orig)?,
            lcc_s: lcc_size_ratio(sub, orig)?,
            reachability: if sub.node_count() < 2 {
                0.0
            } else {
                reachability(sub)?
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(edges: &[(&str, &str, f64)]) -> CooccurrenceNetwork {
        let mut g = CooccurrenceNetwork::new();
        for &(u, v, w) in edges {
            g.set_edge(u, v, w).unwrap();
        }
        g
    }

    #[test]
    fn node_fraction_cases() {
        let orig = graph(&[("a", "b", 1.0), ("c", "d", 1.0)]);
        let mut orig5 = orig.clone();
        orig5.add_node("e");
        assert_eq!(node_fraction(&orig5, &orig5).unwrap(), 1.0);
        let sub = orig5.induced_subgraph(["a", "b", "c", "d"]);
        assert!((node_fraction(&sub, &orig5).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(
            node_fraction(&CooccurrenceNetwork::new(), &orig5).unwrap(),
            0.0
        );
        assert!(node_fraction(&sub, &CooccurrenceNetwork::new()).is_err());
    }

    #[test]
    fn weight_fraction_cases() {
        let tri = graph(&[("a", "b", 1.0), ("b", "c", 2.0), ("a", "c", 3.0)]);
        assert_eq!(weight_fraction(&tri, &tri).unwrap(), 1.0);
        let keep = tri.filter_edges(|_, _, w| w >= 2.0);
        assert!((weight_fraction(&keep, &tri).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        let none = tri.filter_edges(|_, _, _| false);
        assert_eq!(weight_fraction(&none, &tri).unwrap(), 0.0);
        assert!(weight_fraction(&none, &none).is_err());
    }

    #[test]
    fn weight_entropy_cases() {
        let four = graph(&[
            ("a", "b", 1.0),
            ("b", "c", 1.0),
            ("c", "d", 1.0),
            ("d", "a", 1.0),
        ]);
        assert!((weight_entropy(&four) - 2.0).abs() < 1e-15);
        assert_eq!(weight_entropy_ratio(&four, &four).unwrap(), 1.0);
        let two = four.filter_edges(|u, _, _| u == "a");
        assert_eq!(two.edge_count(), 2);
        assert!((weight_entropy_ratio(&two, &four).unwrap() - 0.5).abs() < 1e-15);
        let one = graph(&[("a", "b", 1.0)]);
        assert_eq!(weight_entropy_ratio(&one, &four).unwrap(), 0.0);
        assert!(weight_entropy_ratio(&four, &one).is_err());
    }

    #[test]
    fn lcc_ratio_cases() {
        let path = graph(&[("a", "b", 1.0), ("b", "c", 1.0)]);
        assert_eq!(lcc_size_ratio(&path, &path).unwrap(), 1.0);
        let ab = path.filter_edges(|u, v, _| (u, v) == ("a", "b"));
        assert!((lcc_size_ratio(&ab, &path).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let bare = path.filter_edges(|_, _, _| false);
        assert!((lcc_size_ratio(&bare, &path).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn reachability_cases() {
        let connected = graph(&[("a", "b", 1.0), ("b", "c", 1.0)]);
        assert_eq!(reachability(&connected).unwrap(), 1.0);
        let split = graph(&[("a", "b", 1.0), ("c", "d", 1.0)]);
        assert!((reachability(&split).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let isolated = connected.filter_edges(|_, _, _| false);
        assert_eq!(reachability(&isolated).unwrap(), 0.0);
        let mut single = CooccurrenceNetwork::new();
        single.add_node("x");
        assert!(reachability(&single).is_err());
    }

    #[test]
    fn weighted_degree_cases() {
        let mut g = graph(&[("a", "b", 2.0), ("a", "c", 3.0)]);
        g.add_node("z");
        assert_eq!(weighted_degree(&g, "z").unwrap(), 0.0);
        assert_eq!(weighted_degree(&g, "a").unwrap(), 5.0);
        let tri = graph(&[("a", "b", 1.0), ("b", "c", 1.0), ("a", "c", 1.0)]);
        for n in ["a", "b", "c"] {
            assert_eq!(weighted_degree(&tri, n).unwrap(), 2.0);
        }
        assert!(matches!(
            weighted_degree(&g, "q"),
            Err(Error::UnknownNode(_))
        ));
    }

    #[test]
    fn spt_star_and_modes() {
        let star = graph(&[("c", "l1", 1.0), ("c", "l2", 4.0), ("c", "l3", 0.5)]);
        let t = shortest_path_tree(&star, "c", LengthMode::InverseWeight).unwrap();
        assert!(t.parent.values().all(|p| p == "c"));
        assert_eq!(t.parent.len(), 3);

        let g = graph(&[("A", "B", 1.0), ("B", "C", 1.0), ("A", "C", 0.4)]);
        let inv = shortest_path_tree(&g, "A", LengthMode::InverseWeight).unwrap();
        assert_eq!(inv.parent["B"], "A");
        assert_eq!(inv.parent["C"], "B");
        assert_eq!(inv.dist["C"], 2.0);
        let unit = shortest_path_tree(&g, "A", LengthMode::Unit).unwrap();
        assert_eq!(unit.parent["C"], "A");
        assert!(shortest_path_tree(&g, "Q", LengthMode::Unit).is_err());
    }

    #[test]
    fn spt_tie_break_prefers_smaller_parent() {
        // a-b-d and a-c-d both length 2 in unit mode
        let g = graph(&[
            ("a", "c", 1.0),
            ("c", "d", 1.0),
            ("a", "b", 1.0),
            ("b", "d", 1.0),
        ]);
        let t = shortest_path_tree(&g, "a", LengthMode::Unit).unwrap();
        assert_eq!(t.parent["d"], "b");
    }

    #[test]
    fn identity_quintuple_is_all_ones() {
        let g = graph(&[("a", "b", 2.0), ("b", "c", 1.0), ("d", "e", 5.0)]);
        let q = StructuralQuintuple::compute(&g, &g).unwrap();
        assert_eq!((q.nf, q.wf, q.we, q.lcc_s), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(q.reachability, reachability(&g).unwrap());
    }

    #[test]
    fn edge_list_round_trip_keeps_isolated_nodes() {
        let mut g = graph(&[("a", "b", 2.5), ("b", "c", 1.0)]);
        g.add_node("z");
        let back = CooccurrenceNetwork::from_edge_list(&g.to_edge_list()).unwrap();
        assert_eq!(back, g);
        let js = g.to_json(&BTreeMap::new());
        assert_eq!(CooccurrenceNetwork::from_json(&js).unwrap(), g);
        assert!(CooccurrenceNetwork::from_edge_list("a b c d").is_err());
    }
}
