use std::collections::BTreeSet;

use ecoscen::backbone::{edge_salience, global_threshold, high_salience_skeleton, primary_linkage};
use ecoscen::bench::{summarize, TimingRecord};
use ecoscen::env_agent::{gate_and_bound, CandidateScenario, EnvironmentBoundary};
use ecoscen::graph::{node_fraction, weight_fraction, LengthMode};
use ecoscen::ingest::DemandSeries;
use ecoscen::metrics::{bin_niches, deviation_vectors, value_entropy};
use ecoscen::planner_agent::{parse_rule, render, CmpOp, RuleExpr, Var};
use ecoscen::scenario::{
    reduce_scenarios, sample_scenarios, DimensionSpace, SampleSpace, ScenarioVector,
    ValueDistribution, MASS_TOL,
};
use ecoscen::social_agent::{score_pairs, EntityKind, SocialEntity, Threshold, ThresholdPolicy};
use ecoscen::{Category, CooccurrenceNetwork};
use proptest::prelude::*;

fn graph() -> impl Strategy<Value = CooccurrenceNetwork> {
    (2usize..16)
        .prop_flat_map(|n| prop::collection::vec((0..n, 0..n, 1u32..8), 1..40))
        .prop_map(|edges| {
            let mut g = CooccurrenceNetwork::new();
            for (a, b, w) in edges {
                if a != b {
                    g.add_weight(&format!("n{a:02}"), &format!("n{b:02}"), w as f64);
                }
            }
            g
        })
        .prop_filter("needs an edge", |g| g.edge_count() > 0)
}

fn var() -> impl Strategy<Value = Var> {
    prop_oneof![
        Just(Var::Sa),
        Just(Var::Similarity),
        Just(Var::Nf),
        Just(Var::Wf),
        Just(Var::We),
        Just(Var::LccS),
        Just(Var::Reachability),
        Just(Var::Ve),
        prop::sample::select(Category::ALL.to_vec()).prop_map(Var::Demand),
    ]
}

fn leaf() -> impl Strategy<Value = RuleExpr> {
    let cmp = (
        var(),
        prop::sample::select(vec![CmpOp::Ge, CmpOp::Le, CmpOp::Eq]),
        -1000.0..1000.0f64,
    )
        .prop_map(|(var, op, value)| RuleExpr::Cmp { var, op, value });
    let within = (var(), 0.0..10.0f64, 0.0..10.0f64).prop_map(|(var, a, b)| RuleExpr::Within {
        var,
        lo: a.min(b),
        hi: a.max(b),
    });
    prop_oneof![cmp, within]
}

fn rule() -> impl Strategy<Value = RuleExpr> {
    leaf().prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| RuleExpr::And(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| RuleExpr::Or(Box::new(a), Box::new(b))),
        ]
    })
}

fn entities(prefix: &str, kind: EntityKind, n: usize) -> impl Strategy<Value = Vec<SocialEntity>> {
    let prefix = prefix.to_string();
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), n).prop_map(move |fs| {
        fs.into_iter()
            .enumerate()
            .map(|(i, mut features)| {
                if features.iter().all(|x| *x == 0.0) {
                    features[0] = 1.0;
                }
                SocialEntity {
                    id: format!("{prefix}{i}"),
                    kind,
                    description: String::new(),
                    features,
                }
            })
            .collect()
    })
}

fn cos_plus(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).max(0.0)
}

fn candidates() -> impl Strategy<Value = Vec<CandidateScenario>> {
    let one = (
        prop::collection::vec(0.0..200.0f64, 8),
        0.0..1.0f64,
        0.0..5.0f64,
    )
        .prop_map(|(v, credibility, risk)| CandidateScenario {
            trajectory: std::array::from_fn(|c| v[2 * c..2 * c + 2].to_vec()),
            feature_id: "f".into(),
            rule_id: "r".into(),
            prompt_id: "p".into(),
            credibility,
            risk,
        });
    prop::collection::vec(one, 0..100)
}

fn history() -> DemandSeries {
    DemandSeries {
        years: vec![2020, 2021],
        calls: [
            vec![50.0, 60.0],
            vec![80.0, 70.0],
            vec![10.0, 20.0],
            vec![100.0, 90.0],
        ],
    }
}

proptest! {
    #[test]
    fn gate_matches_filter_then_minmax(cands in candidates(), th in 0.0..1.0f64, tr in 0.0..5.0f64) {
        let h = history();
        let out = gate_and_bound(&cands, &h, th, tr);
        let mut want = EnvironmentBoundary::historical(&h);
        let mut kept = Vec::new();
        for (i, c) in cands.iter().enumerate() {
            if c.credibility >= th && c.risk >= tr {
                kept.push(i);
                for k in 0..4 {
                    for t in 0..2 {
                        want.v_min[k][t] = want.v_min[k][t].min(c.trajectory[k][t]);
                        want.v_max[k][t] = want.v_max[k][t].max(c.trajectory[k][t]);
                    }
                }
            }
        }
        prop_assert_eq!(&out.high_risk, &kept);
        prop_assert_eq!(out.fallback, kept.is_empty());
        prop_assert_eq!(&out.boundary.v_min, &want.v_min);
        prop_assert_eq!(&out.boundary.v_max, &want.v_max);
        prop_assert!(out.boundary.contains(&h));
        let tighter = gate_and_bound(&cands, &h, th + 0.1, tr + 0.5).boundary;
        for k in 0..4 {
            for t in 0..2 {
                prop_assert!(tighter.v_min[k][t] >= out.boundary.v_min[k][t]);
                prop_assert!(tighter.v_max[k][t] <= out.boundary.v_max[k][t]);
            }
        }
    }

    #[test]
    fn gt_fractions_shrink_as_threshold_rises(g in graph(), a in 0.0..9.0f64, b in 0.0..9.0f64) {
        let (lo, hi) = (a.min(b), a.max(b));
        let s_lo = global_threshold(&g, lo, false).sub;
        let s_hi = global_threshold(&g, hi, false).sub;
        prop_assert!(s_hi.is_subgraph_of(&s_lo));
        prop_assert!(node_fraction(&s_hi, &g).unwrap() <= node_fraction(&s_lo, &g).unwrap());
        prop_assert!(weight_fraction(&s_hi, &g).unwrap() <= weight_fraction(&s_lo, &g).unwrap());
        prop_assert!(s_hi.edges().all(|(_, _, w)| w >= hi));
    }

    #[test]
    fn pla_keeps_at_most_one_edge_per_node(g in graph()) {
        let p = primary_linkage(&g).sub;
        prop_assert!(p.is_subgraph_of(&g));
        prop_assert_eq!(p.node_count(), g.node_count());
        for n in p.nodes() {
            prop_assert!(p.degree(n) <= 1);
        }
    }

    #[test]
    fn hss_salience_is_a_fraction_and_nested(g in graph(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        for s in edge_salience(&g, LengthMode::InverseWeight).values() {
            prop_assert!(*s > 0.0 && *s <= 1.0);
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let s_lo = high_salience_skeleton(&g, lo, LengthMode::InverseWeight).sub;
        let s_hi = high_salience_skeleton(&g, hi, LengthMode::InverseWeight).sub;
        prop_assert!(s_hi.is_subgraph_of(&s_lo));
        prop_assert!(s_lo.is_subgraph_of(&g));
    }

    #[test]
    fn rules_round_trip_through_text(r in rule()) {
        let text = render(&r);
        prop_assert_eq!(parse_rule(&text).unwrap(), r, "{}", text);
    }

    #[test]
    fn social_admission_matches_brute_force(
        ind in entities("api:", EntityKind::Individual, 6),
        groups in entities("category:", EntityKind::Group, 3),
        t in 0.0..1.0f64,
    ) {
        let scored = score_pairs(&ind, &groups, None).unwrap();
        let bb = scored.admit(&ThresholdPolicy::uniform(Threshold::Fixed(t))).unwrap();
        let got: BTreeSet<(String, String)> = bb.edges.iter().map(|e| (e.a.clone(), e.b.clone())).collect();
        let all: Vec<&SocialEntity> = ind.iter().chain(&groups).collect();
        let mut want = BTreeSet::new();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if cos_plus(&all[i].features, &all[j].features) >= t {
                    let (a, b) = (all[i].id.clone(), all[j].id.clone());
                    want.insert(if a < b { (a, b) } else { (b, a) });
                }
            }
        }
        prop_assert_eq!(got, want);
    }

    #[test]
    fn higher_quantile_never_admits_more(
        ind in entities("api:", EntityKind::Individual, 8),
        groups in entities("category:", EntityKind::Group, 3),
        a in 0.01..0.99f64,
        b in 0.01..0.99f64,
    ) {
        let scored = score_pairs(&ind, &groups, None).unwrap();
        let edges = |q: f64| -> BTreeSet<(String, String)> {
            scored
                .admit(&ThresholdPolicy::uniform(Threshold::Quantile(q)))
                .unwrap()
                .edges
                .into_iter()
                .map(|e| (e.a, e.b))
                .collect()
        };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(edges(hi).is_subset(&edges(lo)));
    }

    #[test]
    fn sampled_mass_is_one_and_reduction_keeps_it(
        seed in any::<u64>(),
        n in 1usize..30,
        horizon in 1usize..5,
        frac in 0.0..1.0f64,
    ) {
        let space = SampleSpace {
            dims: vec![
                DimensionSpace { name: "a".into(), per_time: vec![ValueDistribution::Uniform { lo: 0.0, hi: 1.0 }] },
                DimensionSpace {
                    name: "b".into(),
                    per_time: vec![ValueDistribution::Empirical { values: vec![1.0, 2.0, 3.0], weights: vec![1.0, 1.0, 2.0] }],
                },
            ],
        };
        let set = sample_scenarios(&space, &space.dim_names(), n, horizon, seed).unwrap();
        prop_assert!((set.total_probability() - 1.0).abs() <= MASS_TOL);
        let c = ((n as f64 * frac) as usize).clamp(1, n);
        let r = reduce_scenarios(&set, c).unwrap();
        prop_assert_eq!(r.len(), c);
        prop_assert!((r.total_probability() - 1.0).abs() <= MASS_TOL);
    }

    #[test]
    fn value_entropy_is_normalized(us in prop::collection::vec(0.0..1.0f64, 2..60)) {
        let ve = value_entropy(&bin_niches(&us, None).unwrap(), true).unwrap();
        prop_assert!(ve > 0.0 && ve <= 1.0 + 1e-12);
    }

    #[test]
    fn deviation_is_scale_free(
        pairs in prop::collection::vec((0.1..10.0f64, 0.1..10.0f64), 1..8),
        c in 0.1..100.0f64,
    ) {
        let tau = vec![ScenarioVector(pairs.iter().map(|p| p.0).collect())];
        let es = vec![ScenarioVector(pairs.iter().map(|p| p.1).collect())];
        let scale = |v: &[ScenarioVector]| vec![ScenarioVector(v[0].0.iter().map(|x| x * c).collect())];
        let d = deviation_vectors(&tau, &es).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((deviation_vectors(&scale(&tau), &scale(&es)).unwrap() - d).abs() <= 1e-9);
        prop_assert_eq!(deviation_vectors(&es, &es).unwrap(), 0.0);
    }

    #[test]
    fn efficiency_summary_is_consistent(
        times in prop::collection::vec(0.0..5.0f64, 1..20),
        nodes in 0usize..500,
        edges in 0usize..500,
    ) {
        let records: Vec<TimingRecord> = times
            .iter()
            .enumerate()
            .map(|(i, &s)| TimingRecord { method: "m".into(), run: i, seconds: s, nodes, edges, failure: None })
            .collect();
        let rep = summarize(&records).unwrap();
        let m = &rep.methods[0];
        prop_assert_eq!(m.runs, times.len());
        prop_assert!((m.mean * m.runs as f64 - m.sum).abs() <= 1e-9);
        prop_assert!(m.peak >= m.mean - 1e-12);
        prop_assert_eq!(m.per_1k_nodes.is_none(), nodes == 0);
        prop_assert_eq!(m.per_1k_edges.is_none(), edges == 0);
    }
}
