//! End-to-end experiment pipeline: per-year networks and demand, the five
//! comparison methods and the agent-coordinated generator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::{
    cluster_filter, global_threshold, high_salience_skeleton, node_features, primary_linkage,
    BackboneResult, Method,
};
use crate::env_agent::{
    run_environment_agent, AdversarialPrompt, EnvAgentConfig, EnvironmentBoundary,
    EnvironmentOutput, KnowledgeDoc,
};
use crate::error::{Error, Result};
use crate::graph::{CooccurrenceNetwork, LengthMode};
use crate::ingest::{
    api_calls, build_demand_series, build_demand_series_filtered, CategoryMap, Dataset,
    DemandSeries,
};
use crate::llm::TextModel;
use crate::metrics::{
    deviation_vectors, scenario_vector, EffectivenessWeights, IndexRow, VectorInputs, DIM_NAMES,
};
use crate::planner_agent::{
    calibrate, compile_rule, extract_constraints, optimize_scheme, CalibrationConfig,
    CalibrationReport, ConstraintText, Evaluation, ExperimentScheme, OptimizeOutcome, RuleExpr,
    SchemeBounds, StructureMethod,
};
use crate::rng::{derive_seed, rng_for};
use crate::scenario::{
    reduce_scenarios, sample_scenarios, DimensionSpace, SampleSpace, ScenarioSet, ScenarioVector,
    ValueDistribution,
};
use crate::social_agent::{
    admitted_subnetwork, ecosystem_entities, score_pairs, ScoredPairs, Threshold, ThresholdPolicy,
};

use rand::Rng;

pub const METHODS: [&str; 6] = ["original", "cluster", "gt", "hss", "pla", "ours"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub weights: EffectivenessWeights,
    pub niches: Option<usize>,
    pub normalized_ve: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            weights: EffectivenessWeights::default(),
            niches: None,
            normalized_ve: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub metrics: MetricConfig,
    /// `None`: mean edge weight of each year's network.
    pub gt_threshold: Option<f64>,
    pub gt_strict: bool,
    pub hss_threshold: f64,
    pub length_mode: LengthMode,
    pub cluster_k: Option<usize>,
    pub cluster_sigma: f64,
    pub env: EnvAgentConfig,
    pub feature_dim: usize,
    pub social_quantile: f64,
    pub social_policy: ThresholdPolicy,
    pub calibration: CalibrationConfig,
    pub threshold_step: f64,
    pub optimize_rounds: usize,
    pub delta_tol: f64,
    pub draws_per_time: usize,
    pub spread: f64,
    pub n_scenarios: usize,
    pub reduce_to: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            metrics: MetricConfig::default(),
            gt_threshold: None,
            gt_strict: false,
            hss_threshold: 0.5,
            length_mode: LengthMode::InverseWeight,
            cluster_k: None,
            cluster_sigma: 1.0,
            env: EnvAgentConfig::default(),
            feature_dim: 8,
            social_quantile: 0.9,
            social_policy: ThresholdPolicy::default(),
            calibration: CalibrationConfig::default(),
            threshold_step: 0.01,
            optimize_rounds: 20,
            delta_tol: 1e-6,
            draws_per_time: 20,
            spread: 0.1,
            n_scenarios: 50,
            reduce_to: 10,
        }
    }
}

/// Text inputs of the agent pipeline.
#[derive(Debug, Clone, Default)]
pub struct AgentAssets {
    pub knowledge: Vec<KnowledgeDoc>,
    pub prompts: Vec<AdversarialPrompt>,
    pub constraint_docs: Vec<KnowledgeDoc>,
}

/// Per-year networks, calls and demand of a dataset, plus the expected
/// scenario (identity backbone over the raw data).
#[derive(Debug, Clone)]
pub struct Context<'a> {
    pub dataset: &'a Dataset,
    pub categories: &'a CategoryMap,
    pub years: Vec<i32>,
    pub networks: Vec<CooccurrenceNetwork>,
    pub calls: Vec<BTreeMap<String, f64>>,
    pub demand: DemandSeries,
    pub metrics: MetricConfig,
    pub expected: Vec<ScenarioVector>,
}

impl<'a> Context<'a> {
    pub fn new(
        dataset: &'a Dataset,
        categories: &'a CategoryMap,
        metrics: MetricConfig,
    ) -> Result<Self> {
        let years = dataset.years();
        if years.is_empty() {
            return Err(Error::Degenerate("dataset has no mashups".into()));
        }
        let networks: Vec<_> = years
            .iter()
            .map(|&y| crate::ingest::build_network(&dataset.mashups, y))
            .collect();
        let calls = years
            .iter()
            .map(|&y| api_calls(&dataset.mashups, y))
            .collect();
        let demand = build_demand_series(&dataset.mashups, categories, &years);
        let mut ctx = Context {
            dataset,
            categories,
            years,
            networks,
            calls,
            demand,
            metrics,
            expected: Vec::new(),
        };
        let rows = ctx.rows(&ctx.networks, &ctx.demand, &ctx.calls)?;
        ctx.expected = rows.iter().map(IndexRow::to_vector).collect();
        Ok(ctx)
    }

    pub fn horizon(&self) -> usize {
        self.years.len()
    }

    /// Index rows of one generated configuration, one per year.
    pub fn rows(
        &self,
        subs: &[CooccurrenceNetwork],
        demand: &DemandSeries,
        calls: &[BTreeMap<String, f64>],
    ) -> Result<Vec<IndexRow>> {
        self.years
            .iter()
            .enumerate()
            .map(|(t, &year)| {
                scenario_vector(&VectorInputs {
                    demand_gen: demand,
                    demand_ref: &self.demand,
                    sub: &subs[t],
                    orig: &self.networks[t],
                    calls: &calls[t],
                    weights: self.metrics.weights,
                    year,
                    niches: self.metrics.niches,
                    normalized_ve: self.metrics.normalized_ve,
                })
            })
            .collect()
    }

    pub fn delta(&self, rows: &[IndexRow]) -> Result<f64> {
        let v: Vec<ScenarioVector> = rows.iter().map(IndexRow::to_vector).collect();
        deviation_vectors(&v, &self.expected)
    }

    pub fn total_nodes(&self) -> usize {
        self.networks
            .iter()
            .map(CooccurrenceNetwork::node_count)
            .sum()
    }

    pub fn total_edges(&self) -> usize {
        self.networks
            .iter()
            .map(CooccurrenceNetwork::edge_count)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: String,
    pub rows: Vec<IndexRow>,
    pub delta: f64,
    pub subs: Vec<CooccurrenceNetwork>,
}

impl MethodOutcome {
    /// Per-dimension means over the horizon followed by δ.
    pub fn cells(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        let n = self.rows.len().max(1) as f64;
        for r in &self.rows {
            for (o, v) in out.iter_mut().zip(r.to_array()) {
                *o += v / n;
            }
        }
        out[8] = self.delta;
        out
    }
}

pub const REPORT_COLUMNS: [&str; 9] = [
    DIM_NAMES[0],
    DIM_NAMES[1],
    DIM_NAMES[2],
    DIM_NAMES[3],
    DIM_NAMES[4],
    DIM_NAMES[5],
    DIM_NAMES[6],
    DIM_NAMES[7],
    "δ",
];

pub fn run_original(ctx: &Context<'_>) -> Result<MethodOutcome> {
    let rows = ctx.rows(&ctx.networks, &ctx.demand, &ctx.calls)?;
    Ok(MethodOutcome {
        method: "original".into(),
        delta: ctx.delta(&rows)?,
        rows,
        subs: ctx.networks.clone(),
    })
}

fn mean_weight(g: &CooccurrenceNetwork) -> f64 {
    let m = g.edge_count();
    if m == 0 {
        0.0
    } else {
        g.total_weight() / m as f64
    }
}

/// Backbone per year, demand restricted to the retained APIs.
/// One baseline backbone for the network at time index `t`.
pub fn extract_backbone(
    ctx: &Context<'_>,
    t: usize,
    method: Method,
    cfg: &PipelineConfig,
) -> Result<BackboneResult> {
    let g = &ctx.networks[t];
    Ok(match method {
        Method::Gt => global_threshold(
            g,
            cfg.gt_threshold.unwrap_or_else(|| mean_weight(g)),
            cfg.gt_strict,
        ),
        Method::Hss => high_salience_skeleton(g, cfg.hss_threshold, cfg.length_mode),
        Method::Pla => primary_linkage(g),
        Method::Cluster => {
            let feats = node_features(g, &ctx.calls[t], ctx.categories);
            let seed = derive_seed(cfg.seed, &["cluster", &ctx.years[t].to_string()]);
            cluster_filter(g, &feats, cfg.cluster_k, cfg.cluster_sigma, seed)?
        }
    })
}

pub fn run_backbone_method(
    ctx: &Context<'_>,
    method: Method,
    cfg: &PipelineConfig,
) -> Result<MethodOutcome> {
    let subs = (0..ctx.horizon())
        .map(|t| extract_backbone(ctx, t, method, cfg).map(|r| r.sub))
        .collect::<Result<Vec<_>>>()?;
    let years = ctx.years.clone();
    let demand =
        build_demand_series_filtered(&ctx.dataset.mashups, ctx.categories, &years, |api, y| {
            years
                .iter()
                .position(|&x| x == y)
                .is_some_and(|t| subs[t].contains_node(api))
        });
    let rows = ctx.rows(&subs, &demand, &ctx.calls)?;
    Ok(MethodOutcome {
        method: method.to_string(),
        delta: ctx.delta(&rows)?,
        rows,
        subs,
    })
}

/// Social-agent pair scores for every year, computed once per run.
pub fn social_scores(
    ctx: &Context<'_>,
    model: &dyn TextModel,
    dim: usize,
) -> Result<Vec<ScoredPairs>> {
    ctx.networks
        .iter()
        .map(|g| {
            let e = ecosystem_entities(&ctx.dataset.apis, ctx.categories, g, model, dim)?;
            score_pairs(&e.individuals, &e.groups, Some(&e.interactions))
        })
        .collect()
}

/// Generated configuration of a scheme: social backbone at the scheme's
/// quantile, demand and calls scaled by Ev.
pub struct SchemeRun {
    pub subs: Vec<CooccurrenceNetwork>,
    pub demand: DemandSeries,
    pub calls: Vec<BTreeMap<String, f64>>,
}

fn scale_calls(ctx: &Context<'_>, ev: &[f64; 4]) -> Vec<BTreeMap<String, f64>> {
    ctx.calls
        .iter()
        .map(|m| {
            m.iter()
                .map(|(api, c)| {
                    let k = ctx.categories.get(api).map_or(1.0, |cat| ev[cat.index()]);
                    (api.clone(), c * k)
                })
                .collect()
        })
        .collect()
}

pub fn scheme_run(
    ctx: &Context<'_>,
    scores: &[ScoredPairs],
    scheme: &ExperimentScheme,
    policy: &ThresholdPolicy,
) -> Result<SchemeRun> {
    let policy = ThresholdPolicy {
        ii: Threshold::Quantile(scheme.threshold),
        ..*policy
    };
    let subs = scores
        .iter()
        .zip(&ctx.networks)
        .map(|(s, g)| Ok(admitted_subnetwork(g, &s.admit(&policy)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SchemeRun {
        subs,
        demand: ctx.demand.scaled(&scheme.ev),
        calls: scale_calls(ctx, &scheme.ev),
    })
}

pub fn evaluate_scheme(
    ctx: &Context<'_>,
    scores: &[ScoredPairs],
    scheme: &ExperimentScheme,
    policy: &ThresholdPolicy,
) -> Result<Evaluation> {
    let run = scheme_run(ctx, scores, scheme, policy)?;
    let rows = ctx.rows(&run.subs, &run.demand, &run.calls)?;
    let demand = (0..ctx.horizon())
        .map(|t| std::array::from_fn(|c| run.demand.calls[c][t]))
        .collect();
    Ok(Evaluation {
        delta: ctx.delta(&rows)?,
        rows,
        demand,
    })
}

/// Multiplier bounds of the scheme: the boundary envelope relative to the
/// raw demand, and the quantile range of the social threshold.
pub fn scheme_bounds(boundary: &EnvironmentBoundary, base: &DemandSeries) -> SchemeBounds {
    let m = boundary.multiplier_bounds(base);
    SchemeBounds {
        ev: m.map(|(lo, hi)| (lo.max(1e-3), hi.max(lo.max(1e-3)))),
        threshold: (0.5, 0.99),
    }
}

#[derive(Debug, Clone)]
pub struct OursOutcome {
    pub outcome: MethodOutcome,
    pub env: EnvironmentOutput,
    pub constraints: Vec<ConstraintText>,
    pub rules: Vec<RuleExpr>,
    pub initial: ExperimentScheme,
    pub calibration: CalibrationReport,
    pub optimize: OptimizeOutcome,
    pub full: ScenarioSet,
    pub reduced: ScenarioSet,
    pub reported: usize,
}

/// Per-time empirical distributions of the eight dimensions, from demand
/// draws around `Ev * base` clipped into the boundary.
pub fn sample_space(
    ctx: &Context<'_>,
    run: &SchemeRun,
    scheme: &ExperimentScheme,
    boundary: &EnvironmentBoundary,
    cfg: &PipelineConfig,
) -> Result<SampleSpace> {
    let t_len = ctx.horizon();
    let mut per_dim: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); t_len]; 8];
    for k in 0..cfg.draws_per_time.max(1) {
        let mut rng = rng_for(scheme.seed, &["demand-draw", &k.to_string()]);
        let jitter: [f64; 4] =
            std::array::from_fn(|_| 1.0 + cfg.spread * rng.gen_range(-1.0..=1.0));
        let ev: [f64; 4] = std::array::from_fn(|c| scheme.ev[c] * jitter[c]);
        let mut demand = ctx.demand.scaled(&ev);
        for c in 0..4 {
            for t in 0..t_len {
                demand.calls[c][t] =
                    demand.calls[c][t].clamp(boundary.v_min[c][t], boundary.v_max[c][t]);
            }
        }
        let calls = scale_calls(ctx, &ev);
        let rows = ctx.rows(&run.subs, &demand, &calls)?;
        for (t, r) in rows.iter().enumerate() {
            for (d, v) in r.to_array().into_iter().enumerate() {
                per_dim[d][t].push(v);
            }
        }
    }
    Ok(SampleSpace {
        dims: DIM_NAMES
            .iter()
            .zip(per_dim)
            .map(|(name, per_time)| DimensionSpace {
                name: name.to_string(),
                per_time: per_time
                    .into_iter()
                    .map(ValueDistribution::empirical)
                    .collect(),
            })
            .collect(),
    })
}

/// EA boundaries, SA backbone, PA calibration and rule feedback, then
/// scenario sampling and reduction; the most probable reduced scenario is
/// the reported one.
pub fn run_ours(
    ctx: &Context<'_>,
    assets: &AgentAssets,
    model: &dyn TextModel,
    cfg: &PipelineConfig,
) -> Result<OursOutcome> {
    let env = run_environment_agent(
        &ctx.demand,
        &ctx.dataset.apis,
        ctx.categories,
        &assets.knowledge,
        &assets.prompts,
        model,
        &cfg.env,
        derive_seed(cfg.seed, &["env"]),
    )?;
    let boundary = &env.gate.boundary;
    let scores = social_scores(ctx, model, cfg.feature_dim)?;

    let constraints = extract_constraints(&assets.constraint_docs, model)?;
    let mut rules = Vec::new();
    for c in &constraints {
        match compile_rule(c, model) {
            Ok(r) => rules.push(r),
            Err(e) => log::warn!("constraint {} skipped: {e}", c.id),
        }
    }

    let bounds = scheme_bounds(boundary, &ctx.demand);
    let initial = bounds.project(&ExperimentScheme {
        ev: bounds.ev.map(|(lo, hi)| 0.5 * (lo + hi)),
        method: StructureMethod::Social,
        threshold: cfg.social_quantile,
        rules: rules.clone(),
        seed: derive_seed(cfg.seed, &["scheme"]),
    });
    let policy = cfg.social_policy;
    let mut objective = |s: &ExperimentScheme| Ok(evaluate_scheme(ctx, &scores, s, &policy)?.delta);
    let (calibrated, calibration) = calibrate(
        &initial,
        &bounds,
        cfg.threshold_step,
        &mut objective,
        &cfg.calibration,
    )?;
    let mut pipeline = |s: &ExperimentScheme| evaluate_scheme(ctx, &scores, s, &policy);
    let optimize = optimize_scheme(
        &calibrated,
        &bounds,
        &mut pipeline,
        cfg.optimize_rounds,
        cfg.delta_tol,
    )?;
    if !optimize.converged {
        log::warn!(
            "scheme optimization did not converge ({} violations)",
            optimize.violations
        );
    }
    let scheme = &optimize.scheme;

    let run = scheme_run(ctx, &scores, scheme, &policy)?;
    let space = sample_space(ctx, &run, scheme, boundary, cfg)?;
    let dims: Vec<String> = DIM_NAMES.iter().map(|s| s.to_string()).collect();
    let full = sample_scenarios(
        &space,
        &dims,
        cfg.n_scenarios,
        ctx.horizon(),
        derive_seed(cfg.seed, &["sample"]),
    )?;
    let reduced = reduce_scenarios(&full, cfg.reduce_to.min(full.len()))?;
    let reported = reduced
        .most_probable()
        .ok_or_else(|| Error::Degenerate("empty reduced scenario set".into()))?;
    let rows = reduced.scenarios[reported]
        .vectors
        .iter()
        .map(|v| IndexRow::from_slice(&v.0))
        .collect::<Result<Vec<_>>>()?;
    let outcome = MethodOutcome {
        method: "ours".into(),
        delta: ctx.delta(&rows)?,
        rows,
        subs: run.subs,
    };
    Ok(OursOutcome {
        outcome,
        env,
        constraints,
        rules,
        initial,
        calibration,
        optimize,
        full,
        reduced,
        reported,
    })
}

pub fn run_method(
    ctx: &Context<'_>,
    name: &str,
    assets: &AgentAssets,
    model: &dyn TextModel,
    cfg: &PipelineConfig,
) -> Result<MethodOutcome> {
    match name {
        "original" => run_original(ctx),
        "ours" => Ok(run_ours(ctx, assets, model, cfg)?.outcome),
        other => run_backbone_method(ctx, other.parse()?, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_agent::AdversarialPrompt;
    use crate::ingest::{classify_categories, KeywordClassifier};
    use crate::llm::StubModel;
    use crate::synth::{
        adversarial_prompts, constraint_docs, knowledge_docs, synth_dataset, SynthConfig,
    };

    fn small() -> Dataset {
        synth_dataset(&SynthConfig {
            n_apis: 40,
            n_mashups: 90,
            n_years: 3,
            ..Default::default()
        })
    }

    #[test]
    fn original_row_is_identity() {
        let ds = small();
        let cm = classify_categories(&ds.apis, &KeywordClassifier).unwrap();
        let ctx = Context::new(&ds, &cm, MetricConfig::default()).unwrap();
        let o = run_original(&ctx).unwrap();
        for r in &o.rows {
            assert_eq!((r.nf, r.wf, r.we, r.lcc_s), (1.0, 1.0, 1.0, 1.0));
            assert!((r.similarity - 1.0).abs() < 1e-12);
        }
        assert_eq!(o.delta, 0.0);
    }

    #[test]
    fn baselines_are_subgraphs() {
        let ds = small();
        let cm = classify_categories(&ds.apis, &KeywordClassifier).unwrap();
        let ctx = Context::new(&ds, &cm, MetricConfig::default()).unwrap();
        let cfg = PipelineConfig::default();
        for m in [Method::Gt, Method::Hss, Method::Pla, Method::Cluster] {
            let o = run_backbone_method(&ctx, m, &cfg).unwrap();
            for (s, g) in o.subs.iter().zip(&ctx.networks) {
                assert!(s.is_subgraph_of(g), "{m}");
            }
            assert!(o.rows.iter().all(|r| r.nf <= 1.0 && r.wf <= 1.0));
            assert!(o.delta >= 0.0);
        }
    }

    #[test]
    fn ours_runs_and_is_deterministic() {
        let ds = small();
        let cm = classify_categories(&ds.apis, &KeywordClassifier).unwrap();
        let ctx = Context::new(&ds, &cm, MetricConfig::default()).unwrap();
        let assets = AgentAssets {
            knowledge: knowledge_docs(),
            prompts: AdversarialPrompt::parse_list(adversarial_prompts()),
            constraint_docs: constraint_docs(),
        };
        let cfg = PipelineConfig {
            calibration: CalibrationConfig {
                max_iters: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = StubModel::new(1);
        let a = run_ours(&ctx, &assets, &m, &cfg).unwrap();
        let b = run_ours(&ctx, &assets, &m, &cfg).unwrap();
        assert_eq!(a.outcome, b.outcome);
        assert_eq!(a.reduced, b.reduced);
        assert_eq!(a.rules.len(), 3);
        assert!((a.full.total_probability() - 1.0).abs() < 1e-9);
        assert!((a.reduced.total_probability() - 1.0).abs() < 1e-9);
        assert!(a.calibration.best_j.windows(2).all(|w| w[1] <= w[0]));
        for (s, g) in a.outcome.subs.iter().zip(&ctx.networks) {
            assert!(s.is_subgraph_of(g));
        }
    }
}
