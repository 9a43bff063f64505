//! Browser bindings for the demo page in `www/`. Every entry point takes
//! plain values and returns a JSON string.

use ecoscen::backbone::{global_threshold, high_salience_skeleton, primary_linkage, Method};
use ecoscen::env_agent::{run_environment_agent, AdversarialPrompt, EnvAgentConfig};
use ecoscen::graph::{node_fraction, weight_fraction, CooccurrenceNetwork, LengthMode};
use ecoscen::ingest::{build_demand_series, classify_categories, KeywordClassifier};
use ecoscen::llm::StubModel;
use ecoscen::metrics::{value_entropy_detail, NicheHistogram};
use ecoscen::rng::derive_seed;
use ecoscen::synth::{adversarial_prompts, knowledge_docs, synth_dataset, SynthConfig};
use ecoscen::Category;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js)
}

/// Niche counts (comma or space separated) to current/optimal entropy and
/// the raw and normalized value entropy.
#[wasm_bindgen]
pub fn value_entropy(counts: &str) -> Result<String, JsError> {
    let counts = counts
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| js(format!("not a count: {s}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let v = value_entropy_detail(&NicheHistogram::from_counts(counts)).map_err(js)?;
    to_json(&json!({
        "current": v.current,
        "optimal": v.optimal,
        "raw": v.raw,
        "normalized": v.normalized,
    }))
}

/// Runs one backbone method over an edge list (`a b weight` per line).
/// `param` is the weight threshold for gt and the salience threshold for hss.
#[wasm_bindgen]
pub fn backbone(edges: &str, method: &str, param: f64) -> Result<String, JsError> {
    let g = CooccurrenceNetwork::from_edge_list(edges).map_err(js)?;
    let method: Method = method.parse().map_err(js)?;
    let r = match method {
        Method::Gt => global_threshold(&g, param, false),
        Method::Hss => high_salience_skeleton(&g, param, LengthMode::InverseWeight),
        Method::Pla => primary_linkage(&g),
        Method::Cluster => return Err(js("cluster needs API features; try gt, hss or pla")),
    };
    let kept: Vec<(&str, &str, f64)> = r.sub.edges().collect();
    let all: Vec<(&str, &str, f64)> = g.edges().collect();
    to_json(&json!({
        "nodes": g.nodes().collect::<Vec<_>>(),
        "edges": all,
        "kept": kept,
        "nf": node_fraction(&r.sub, &g).map_err(js)?,
        "wf": weight_fraction(&r.sub, &g).map_err(js)?,
    }))
}

/// Environment-agent boundary on a small synthetic ecosystem.
#[wasm_bindgen]
pub fn environment_boundary(
    seed: u32,
    theta_high: f64,
    theta_risk: f64,
) -> Result<String, JsError> {
    let seed = u64::from(seed);
    let ds = synth_dataset(&SynthConfig {
        n_apis: 80,
        n_mashups: 200,
        seed,
        ..Default::default()
    });
    let cm = classify_categories(&ds.apis, &KeywordClassifier).map_err(js)?;
    let years = ds.years();
    let history = build_demand_series(&ds.mashups, &cm, &years);
    let model = StubModel::new(derive_seed(seed, &["llm"]));
    let cfg = EnvAgentConfig {
        theta_high,
        theta_risk,
        ..Default::default()
    };
    let prompts = AdversarialPrompt::parse_list(adversarial_prompts());
    let out = run_environment_agent(
        &history,
        &ds.apis,
        &cm,
        &knowledge_docs(),
        &prompts,
        &model,
        &cfg,
        seed,
    )
    .map_err(js)?;
    let b = &out.gate.boundary;
    let series: Vec<_> = Category::ALL
        .iter()
        .map(|c| {
            let i = c.index();
            json!({
                "category": c.label(),
                "history": history.calls[i],
                "v_min": b.v_min[i],
                "v_max": b.v_max[i],
            })
        })
        .collect();
    to_json(&json!({
        "years": years,
        "candidates": out.candidates.len(),
        "survivors": out.gate.high_risk.len(),
        "fallback": out.gate.fallback,
        "series": series,
    }))
}
