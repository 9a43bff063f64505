//! Social agent: partitions entities into individuals and groups, embeds
//! them, scores pairwise relationship strength and admits edges per class
//! threshold to form the relationship backbone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backbone::cosine;
use crate::error::{Error, Result};
use crate::graph::CooccurrenceNetwork;
use crate::ingest::{ApiRecord, Category, CategoryMap};
use crate::llm::{extract_features, TextModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Individual,
    Group,
}

/// Raw record before partitioning. `tags` may contain `individual` or
/// `group`; otherwise `size` (members) decides: more than one means group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialRecord {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialEntity {
    pub id: String,
    pub kind: EntityKind,
    pub description: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipEdge {
    pub a: String,
    pub b: String,
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "lowercase")]
pub enum Threshold {
    Fixed(f64),
    /// Quantile of the class's positive strengths.
    Quantile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub ii: Threshold,
    pub ig: Threshold,
    pub gg: Threshold,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::uniform(Threshold::Quantile(0.9))
    }
}

impl ThresholdPolicy {
    pub fn uniform(t: Threshold) -> Self {
        ThresholdPolicy {
            ii: t,
            ig: t,
            gg: t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.ii, self.ig, self.gg] {
            match t {
                Threshold::Quantile(q) if !(q > 0.0 && q < 1.0) => {
                    return Err(Error::InvalidParameter(format!(
                        "quantile {q} outside (0,1)"
                    )))
                }
                Threshold::Fixed(x) if !x.is_finite() => {
                    return Err(Error::InvalidParameter(format!(
                        "threshold {x} is not finite"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Interaction counts keyed by the ordered id pair `(min, max)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interactions(pub BTreeMap<(String, String), f64>);

impl Interactions {
    fn key(a: &str, b: &str) -> (String, String) {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }

    pub fn add(&mut self, a: &str, b: &str, x: f64) {
        *self.0.entry(Self::key(a, b)).or_insert(0.0) += x;
    }

    pub fn get(&self, a: &str, b: &str) -> f64 {
        self.0.get(&Self::key(a, b)).copied().unwrap_or(0.0)
    }
}

/// Splits records into (individuals, groups).
pub fn partition_entities(
    records: &[SocialRecord],
) -> Result<(Vec<SocialRecord>, Vec<SocialRecord>)> {
    let mut ind = Vec::new();
    let mut grp = Vec::new();
    let mut bad = Vec::new();
    for r in records {
        let has = |t: &str| r.tags.iter().any(|x| x.eq_ignore_ascii_case(t));
        let kind = match (has("individual"), has("group")) {
            (true, true) => None,
            (true, false) => Some(EntityKind::Individual),
            (false, true) => Some(EntityKind::Group),
            (false, false) => r.size.map(|s| {
                if s > 1 {
                    EntityKind::Group
                } else {
                    EntityKind::Individual
                }
            }),
        };
        match kind {
            Some(EntityKind::Individual) => ind.push(r.clone()),
            Some(EntityKind::Group) => grp.push(r.clone()),
            None => bad.push(r.id.clone()),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Partition(bad));
    }
    Ok((ind, grp))
}

pub fn featurize(
    records: &[SocialRecord],
    kind: EntityKind,
    model: &dyn TextModel,
    dim: usize,
) -> Result<Vec<SocialEntity>> {
    records
        .iter()
        .map(|r| {
            Ok(SocialEntity {
                id: r.id.clone(),
                kind,
                description: r.description.clone(),
                features: extract_features(model, &r.description, dim)?,
            })
        })
        .collect()
}

/// `max(cos, 0) * g(x)` with `g(x) = x / (x + 1)`, or `g = 1` without data.
pub fn relationship_strength(
    a: &SocialEntity,
    b: &SocialEntity,
    interactions: Option<f64>,
) -> Result<f64> {
    let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
    if zero(&a.features) || zero(&b.features) {
        return Err(Error::Degenerate(format!(
            "zero feature vector in pair ({}, {})",
            a.id, b.id
        )));
    }
    let g = interactions.map_or(1.0, |x| {
        let x = x.max(0.0);
        x / (x + 1.0)
    });
    Ok(cosine(&a.features, &b.features).max(0.0) * g)
}

/// Linear-interpolated quantile of the strictly positive values; `None`
/// when there are none.
pub fn positive_quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| *x > 0.0).collect();
    v.sort_by(f64::total_cmp);
    sorted_quantile(&v, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairClass {
    Ii,
    Ig,
    Gg,
}

/// All candidate pairs with their strengths, independent of thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairs {
    pub kinds: BTreeMap<String, EntityKind>,
    pub pairs: Vec<(PairClass, RelationshipEdge)>,
    /// Sorted positive strengths per class, for quantile resolution.
    positive: [Vec<f64>; 3],
}

fn class_index(c: PairClass) -> usize {
    match c {
        PairClass::Ii => 0,
        PairClass::Ig => 1,
        PairClass::Gg => 2,
    }
}

/// Scores every unordered I-I pair, every I-G pair and every unordered G-G pair.
pub fn score_pairs(
    individuals: &[SocialEntity],
    groups: &[SocialEntity],
    interactions: Option<&Interactions>,
) -> Result<ScoredPairs> {
    let mut pairs = Vec::new();
    let mut add = |class, a: &SocialEntity, b: &SocialEntity| -> Result<()> {
        let x = interactions.map(|i| i.get(&a.id, &b.id));
        let strength = relationship_strength(a, b, x)?;
        pairs.push((
            class,
            RelationshipEdge {
                a: a.id.clone(),
                b: b.id.clone(),
                strength,
            },
        ));
        Ok(())
    };
    for (i, a) in individuals.iter().enumerate() {
        for b in &individuals[i + 1..] {
            add(PairClass::Ii, a, b)?;
        }
        for g in groups {
            add(PairClass::Ig, a, g)?;
        }
    }
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            add(PairClass::Gg, a, b)?;
        }
    }
    let mut positive: [Vec<f64>; 3] = Default::default();
    for (c, e) in &pairs {
        if e.strength > 0.0 {
            positive[class_index(*c)].push(e.strength);
        }
    }
    for v in &mut positive {
        v.sort_by(f64::total_cmp);
    }
    let kinds = individuals
        .iter()
        .chain(groups)
        .map(|e| (e.id.clone(), e.kind))
        .collect();
    Ok(ScoredPairs {
        kinds,
        pairs,
        positive,
    })
}

fn sorted_quantile(v: &[f64], q: f64) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

impl ScoredPairs {
    pub fn resolve(&self, policy: &ThresholdPolicy) -> [f64; 3] {
        let r = |i: usize, t: Threshold| match t {
            Threshold::Fixed(x) => x,
            Threshold::Quantile(q) => {
                sorted_quantile(&self.positive[i], q).unwrap_or(f64::INFINITY)
            }
        };
        [r(0, policy.ii), r(1, policy.ig), r(2, policy.gg)]
    }

    /// Admits the pairs whose strength meets the resolved class threshold.
    pub fn admit(&self, policy: &ThresholdPolicy) -> Result<SocialBackbone> {
        policy.validate()?;
        let thresholds = self.resolve(policy);
        let edges = self
            .pairs
            .iter()
            .filter(|(c, e)| e.strength >= thresholds[class_index(*c)])
            .map(|(_, e)| e.clone())
            .collect();
        Ok(SocialBackbone {
            kinds: self.kinds.clone(),
            edges,
            thresholds,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocialBackbone {
    pub kinds: BTreeMap<String, EntityKind>,
    pub edges: Vec<RelationshipEdge>,
    /// Resolved (ii, ig, gg) thresholds.
    pub thresholds: [f64; 3],
}

impl SocialBackbone {
    /// Network over all entities with the positive-strength edges.
    pub fn network(&self) -> CooccurrenceNetwork {
        let mut g = CooccurrenceNetwork::new();
        for id in self.kinds.keys() {
            g.add_node(id.clone());
        }
        for e in &self.edges {
            g.add_weight(&e.a, &e.b, e.strength);
        }
        g
    }

    /// Node attributes for JSON export.
    pub fn attrs(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        self.kinds
            .iter()
            .map(|(id, k)| {
                let kind = match k {
                    EntityKind::Individual => "individual",
                    EntityKind::Group => "group",
                };
                (
                    id.clone(),
                    BTreeMap::from([("kind".to_string(), kind.to_string())]),
                )
            })
            .collect()
    }
}

/// Evaluates every I-I, I-G and G-G pair and admits those meeting their
/// class threshold.
pub fn build_backbone(
    individuals: &[SocialEntity],
    groups: &[SocialEntity],
    policy: &ThresholdPolicy,
    interactions: Option<&Interactions>,
) -> Result<SocialBackbone> {
    policy.validate()?;
    score_pairs(individuals, groups, interactions)?.admit(policy)
}

/// Social records for the API ecosystem: APIs are individuals, the four
/// categories are groups.
pub fn ecosystem_records(
    apis: &[ApiRecord],
    categories: &CategoryMap,
    active_in: &BTreeSet<String>,
) -> Vec<SocialRecord> {
    let mut out: Vec<SocialRecord> = apis
        .iter()
        .filter(|a| active_in.contains(&a.api_id))
        .map(|a| SocialRecord {
            id: a.api_id.clone(),
            description: format!("api {} ({}) in {}", a.name, a.api_id, a.category_raw),
            tags: vec!["individual".into()],
            size: Some(1),
        })
        .collect();
    for c in Category::ALL {
        let members = categories.map.values().filter(|x| **x == c).count();
        out.push(SocialRecord {
            id: group_id(c),
            description: format!("api category {c} with {members} member apis"),
            tags: vec!["group".into()],
            size: Some(members),
        });
    }
    out
}

pub fn group_id(c: Category) -> String {
    format!("category:{}", c.key())
}

/// Co-mashup interaction counts: API pairs from the network weights,
/// API-category and category-category by summing member weights.
pub fn ecosystem_interactions(net: &CooccurrenceNetwork, categories: &CategoryMap) -> Interactions {
    let mut out = Interactions::default();
    for (u, v, w) in net.edges() {
        out.add(u, v, w);
        let (cu, cv) = (categories.get(u), categories.get(v));
        if let Some(cv) = cv {
            out.add(u, &group_id(cv), w);
        }
        if let Some(cu) = cu {
            out.add(v, &group_id(cu), w);
        }
        if let (Some(cu), Some(cv)) = (cu, cv) {
            if cu != cv {
                out.add(&group_id(cu), &group_id(cv), w);
            }
        }
    }
    out
}

/// Restricts the original network to the API-API pairs admitted by the
/// social backbone, keeping original weights. Nodes are the APIs of those
/// pairs.
pub fn admitted_subnetwork(orig: &CooccurrenceNetwork, bb: &SocialBackbone) -> CooccurrenceNetwork {
    let mut g = CooccurrenceNetwork::new();
    for e in &bb.edges {
        if let Some(w) = orig.weight(&e.a, &e.b) {
            // weights come from a valid network, so they are positive
            g.add_weight(&e.a, &e.b, w);
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialAgentConfig {
    pub feature_dim: usize,
    pub policy: ThresholdPolicy,
}

impl Default for SocialAgentConfig {
    fn default() -> Self {
        SocialAgentConfig {
            feature_dim: 8,
            policy: ThresholdPolicy::default(),
        }
    }
}

/// Featurized API and category entities of one network, reusable across
/// threshold settings.
#[derive(Debug, Clone)]
pub struct EcosystemEntities {
    pub individuals: Vec<SocialEntity>,
    pub groups: Vec<SocialEntity>,
    pub interactions: Interactions,
}

pub fn ecosystem_entities(
    apis: &[ApiRecord],
    categories: &CategoryMap,
    net: &CooccurrenceNetwork,
    model: &dyn TextModel,
    dim: usize,
) -> Result<EcosystemEntities> {
    let active: BTreeSet<String> = net.nodes().map(str::to_string).collect();
    let records = ecosystem_records(apis, categories, &active);
    let (ind, grp) = partition_entities(&records)?;
    Ok(EcosystemEntities {
        individuals: featurize(&ind, EntityKind::Individual, model, dim)?,
        groups: featurize(&grp, EntityKind::Group, model, dim)?,
        interactions: ecosystem_interactions(net, categories),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::StubModel;

    fn rec(id: &str, tags: &[&str], size: Option<usize>) -> SocialRecord {
        SocialRecord {
            id: id.into(),
            description: format!("entity {id}"),
            tags: tags.iter().map(|s| s.to_string()).collect(),
            size,
        }
    }

    fn ent(id: &str, kind: EntityKind, f: &[f64]) -> SocialEntity {
        SocialEntity {
            id: id.into(),
            kind,
            description: String::new(),
            features: f.to_vec(),
        }
    }

    #[test]
    fn partition_cases() {
        let recs = vec![
            rec("a", &["individual"], None),
            rec("b", &[], Some(1)),
            rec("c", &["Individual"], None),
            rec("g1", &["group"], None),
            rec("g2", &[], Some(5)),
        ];
        let (i, g) = partition_entities(&recs).unwrap();
        assert_eq!((i.len(), g.len()), (3, 2));
        let (i, g) = partition_entities(&[]).unwrap();
        assert!(i.is_empty() && g.is_empty());
        let err = partition_entities(&[
            rec("x", &["individual", "group"], None),
            rec("y", &[], None),
        ]);
        match err {
            Err(Error::Partition(ids)) => assert_eq!(ids, vec!["x".to_string(), "y".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn featurize_cases() {
        let m = StubModel::new(2);
        let recs: Vec<_> = (0..5)
            .map(|i| rec(&format!("e{i}"), &["individual"], None))
            .collect();
        let a = featurize(&recs, EntityKind::Individual, &m, 6).unwrap();
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|e| e.features.len() == 6));
        assert_eq!(a, featurize(&recs, EntityKind::Individual, &m, 6).unwrap());
    }

    #[test]
    fn strength_cases() {
        let a = ent("a", EntityKind::Individual, &[1.0, 0.0]);
        let b = ent("b", EntityKind::Individual, &[0.0, 1.0]);
        let n = ent("n", EntityKind::Individual, &[-1.0, 0.0]);
        assert!((relationship_strength(&a, &a, None).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(relationship_strength(&a, &b, None).unwrap(), 0.0);
        assert_eq!(relationship_strength(&a, &n, None).unwrap(), 0.0);
        assert!((relationship_strength(&a, &a, Some(1.0)).unwrap() - 0.5).abs() < 1e-15);
        let z = ent("z", EntityKind::Individual, &[0.0, 0.0]);
        assert!(relationship_strength(&a, &z, None).is_err());
    }

    #[test]
    fn complete_graph_at_zero_threshold() {
        let ind: Vec<_> = (0..4)
            .map(|i| ent(&format!("i{i}"), EntityKind::Individual, &[1.0, i as f64]))
            .collect();
        let grp: Vec<_> = (0..3)
            .map(|i| ent(&format!("g{i}"), EntityKind::Group, &[i as f64, 1.0]))
            .collect();
        let bb = build_backbone(
            &ind,
            &grp,
            &ThresholdPolicy::uniform(Threshold::Fixed(0.0)),
            None,
        )
        .unwrap();
        assert_eq!(bb.edges.len(), 6 + 12 + 3);
        let none = build_backbone(
            &ind,
            &grp,
            &ThresholdPolicy::uniform(Threshold::Fixed(1.01)),
            None,
        )
        .unwrap();
        assert!(none.edges.is_empty());
    }

    #[test]
    fn single_identical_pair() {
        let ind = vec![
            ent("a", EntityKind::Individual, &[1.0, 2.0, 0.0]),
            ent("b", EntityKind::Individual, &[1.0, 2.0, 0.0]),
            ent("c", EntityKind::Individual, &[0.0, 1.0, 3.0]),
        ];
        let policy = ThresholdPolicy {
            ii: Threshold::Fixed(0.99),
            ..ThresholdPolicy::uniform(Threshold::Fixed(0.0))
        };
        let bb = build_backbone(&ind, &[], &policy, None).unwrap();
        assert_eq!(bb.edges.len(), 1);
        assert_eq!((bb.edges[0].a.as_str(), bb.edges[0].b.as_str()), ("a", "b"));
    }

    #[test]
    fn quantile_cases() {
        assert_eq!(positive_quantile(&[0.0, 0.0], 0.9), None);
        assert_eq!(positive_quantile(&[0.0, 1.0, 2.0, 3.0], 0.5), Some(2.0));
        assert!((positive_quantile(&[1.0, 2.0], 0.9).unwrap() - 1.9).abs() < 1e-12);
    }

    #[test]
    fn ecosystem_interaction_sums() {
        let mut net = CooccurrenceNetwork::new();
        net.set_edge("a", "b", 2.0).unwrap();
        net.set_edge("b", "c", 1.0).unwrap();
        let mut cm = CategoryMap::default();
        cm.map.insert("a".into(), Category::Infrastructure);
        cm.map.insert("b".into(), Category::Infrastructure);
        cm.map.insert("c".into(), Category::SocialEntertainment);
        let i = ecosystem_interactions(&net, &cm);
        assert_eq!(i.get("b", "a"), 2.0);
        assert_eq!(i.get("a", &group_id(Category::Infrastructure)), 2.0);
        assert_eq!(i.get("b", &group_id(Category::Infrastructure)), 2.0);
        assert_eq!(i.get("b", &group_id(Category::SocialEntertainment)), 1.0);
        assert_eq!(
            i.get(
                &group_id(Category::SocialEntertainment),
                &group_id(Category::Infrastructure)
            ),
            1.0
        );
    }
}
