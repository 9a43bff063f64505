use std::path::{Path, PathBuf};

use ecoscen::backbone::{BackboneManifest, Method};
use ecoscen::bench::{
    summarize, time_run, EfficiencyReport, TimeUnit, TimingRecord, EFFICIENCY_COLUMNS,
};
use ecoscen::env_agent::{AdversarialPrompt, KnowledgeDoc};
use ecoscen::ingest::{
    classify_categories, load_dataset, write_dataset, CategoryMap, Dataset, KeywordClassifier,
    ModelClassifier,
};
use ecoscen::llm::{StubModel, TextModel};
use ecoscen::metrics::IndexRow;
use ecoscen::pipeline::{
    extract_backbone, run_backbone_method, run_original, run_ours, AgentAssets, Context,
    MethodOutcome, METHODS, REPORT_COLUMNS,
};
use ecoscen::rng::derive_seed;
use ecoscen::synth::{
    adversarial_prompts, constraint_docs, knowledge_docs, synth_dataset, SynthConfig,
};
use ecoscen::Category;
use serde::{Deserialize, Serialize};

use crate::config::{ClassifierKind, LlmMode, RunConfig};
use crate::error::{io_err, CliError};
use crate::output::{
    cell, csv_table, markdown_table, read_json, write_json, write_manifest, write_text,
};

pub fn make_model(cfg: &RunConfig) -> Result<Box<dyn TextModel>, CliError> {
    match cfg.llm_mode {
        LlmMode::Stub => Ok(Box::new(StubModel::new(derive_seed(cfg.seed()?, &["llm"])))),
        LlmMode::Remote => remote_model(cfg),
    }
}

#[cfg(feature = "remote")]
fn remote_model(cfg: &RunConfig) -> Result<Box<dyn TextModel>, CliError> {
    use ecoscen::llm::{RemoteConfig, RemoteModel};
    let rc = RemoteConfig::from_env(&cfg.llm_endpoint, &cfg.llm_model, &cfg.llm_api_key_env)
        .map_err(|e| CliError::Config {
            field: "llm_api_key_env".into(),
            message: e.to_string(),
        })?;
    Ok(Box::new(RemoteModel::new(rc)))
}

#[cfg(not(feature = "remote"))]
fn remote_model(_: &RunConfig) -> Result<Box<dyn TextModel>, CliError> {
    Err(CliError::Config {
        field: "llm_mode".into(),
        message: "built without remote model support".into(),
    })
}

pub struct Loaded {
    pub dataset: Dataset,
    pub categories: CategoryMap,
}

pub fn load(cfg: &RunConfig, model: &dyn TextModel) -> Result<Loaded, CliError> {
    let mut dataset = load_dataset(cfg.data_dir()?, cfg.data_format()?)?;
    if let Some(years) = &cfg.years {
        dataset.mashups.retain(|m| years.contains(&m.year));
    }
    let categories = match cfg.classifier {
        ClassifierKind::Keyword => classify_categories(&dataset.apis, &KeywordClassifier)?,
        ClassifierKind::Model => {
            classify_categories(&dataset.apis, &ModelClassifier { model: Some(model) })?
        }
    };
    Ok(Loaded {
        dataset,
        categories,
    })
}

fn read_docs(dir: &Path) -> Result<Vec<KnowledgeDoc>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
            Ok(KnowledgeDoc {
                id: p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                text,
            })
        })
        .collect()
}

pub fn load_assets(cfg: &RunConfig) -> Result<AgentAssets, CliError> {
    let prompts_path = cfg.prompts_file()?;
    let prompts = std::fs::read_to_string(&prompts_path).map_err(io_err(&prompts_path))?;
    Ok(AgentAssets {
        knowledge: read_docs(&cfg.knowledge_dir()?)?,
        prompts: AdversarialPrompt::parse_list(&prompts),
        constraint_docs: read_docs(&cfg.constraints_dir()?)?,
    })
}

fn category_attrs(
    g: &ecoscen::CooccurrenceNetwork,
    cm: &CategoryMap,
) -> std::collections::BTreeMap<String, std::collections::BTreeMap<String, String>> {
    g.nodes()
        .filter_map(|id| {
            cm.get(id).map(|c| {
                (
                    id.to_string(),
                    std::collections::BTreeMap::from([(
                        "category".to_string(),
                        c.key().to_string(),
                    )]),
                )
            })
        })
        .collect()
}

pub fn cmd_synth(out: &Path, sc: &SynthConfig) -> Result<(), CliError> {
    let ds = synth_dataset(sc);
    write_dataset(&ds, out, ecoscen::ingest::DataFormat::Csv)?;
    for d in knowledge_docs() {
        write_text(&out.join("knowledge").join(&d.id), &format!("{}\n", d.text))?;
    }
    for d in constraint_docs() {
        write_text(
            &out.join("constraints").join(&d.id),
            &format!("{}\n", d.text),
        )?;
    }
    write_text(&out.join("prompts.txt"), adversarial_prompts())?;
    write_json(&out.join("synth.json"), sc)?;
    write_text(
        &out.join("ecoscen.toml"),
        &format!("data_dir = \".\"\nseed = {}\nout = \"out\"\n", sc.seed),
    )
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let model = make_model(cfg)?;
    let l = load(cfg, model.as_ref())?;
    let dir = cfg.out().join("ingest");
    let years = l.dataset.years();
    let demand = ecoscen::ingest::build_demand_series(&l.dataset.mashups, &l.categories, &years);
    write_json(&dir.join("categories.json"), &l.categories)?;
    write_json(&dir.join("demand.json"), &demand)?;
    let mut rows = Vec::new();
    for c in Category::ALL {
        for (t, y) in years.iter().enumerate() {
            rows.push(vec![
                c.key().to_string(),
                y.to_string(),
                demand.calls[c.index()][t].to_string(),
            ]);
        }
    }
    write_text(
        &dir.join("demand.csv"),
        &csv_table(&["category", "year", "calls"], &rows),
    )?;
    write_manifest(&dir, "ingest", cfg)
}

pub fn cmd_network(cfg: &RunConfig) -> Result<(), CliError> {
    let model = make_model(cfg)?;
    let l = load(cfg, model.as_ref())?;
    let dir = cfg.out().join("network");
    for y in l.dataset.years() {
        let g = ecoscen::ingest::build_network(&l.dataset.mashups, y);
        write_text(&dir.join(format!("{y}.edges")), &g.to_edge_list())?;
        write_json(
            &dir.join(format!("{y}.json")),
            &g.to_json(&category_attrs(&g, &l.categories)),
        )?;
    }
    write_manifest(&dir, "network", cfg)
}

pub fn cmd_backbone(cfg: &RunConfig, methods: &[Method]) -> Result<(), CliError> {
    let model = make_model(cfg)?;
    let l = load(cfg, model.as_ref())?;
    let p = cfg.pipeline()?;
    let ctx = Context::new(&l.dataset, &l.categories, p.metrics)?;
    let dir = cfg.out().join("backbone");
    for &m in methods {
        let mut runs = Vec::new();
        for (t, y) in ctx.years.iter().enumerate() {
            let r = extract_backbone(&ctx, t, m, &p)?;
            write_text(
                &dir.join(m.to_string()).join(format!("{y}.edges")),
                &r.sub.to_edge_list(),
            )?;
            runs.push((*y, BackboneManifest::from(&r)));
        }
        write_json(&dir.join(m.to_string()).join("runs.json"), &runs)?;
    }
    write_manifest(&dir, "backbone", cfg)
}

/// Per-method metric record written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub years: Vec<i32>,
    pub rows: Vec<IndexRow>,
    pub delta: f64,
    pub cells: Vec<f64>,
}

impl MethodMetrics {
    fn from_outcome(o: &MethodOutcome, years: &[i32]) -> Self {
        MethodMetrics {
            method: o.method.clone(),
            years: years.to_vec(),
            rows: o.rows.clone(),
            delta: o.delta,
            cells: o.cells().to_vec(),
        }
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<(), CliError> {
    let model = make_model(cfg)?;
    let l = load(cfg, model.as_ref())?;
    let assets = load_assets(cfg)?;
    let p = cfg.pipeline()?;
    let ctx = Context::new(&l.dataset, &l.categories, p.metrics)?;
    let ours = run_ours(&ctx, &assets, model.as_ref(), &p)?;
    let dir = cfg.out().join("generate");

    let b = &ours.env.gate.boundary;
    write_json(&dir.join("boundary.json"), &b.to_json())?;
    let mut rows = Vec::new();
    for c in Category::ALL {
        for (t, y) in ctx.years.iter().enumerate() {
            rows.push(vec![
                c.key().to_string(),
                y.to_string(),
                ctx.demand.calls[c.index()][t].to_string(),
                b.v_min[c.index()][t].to_string(),
                b.v_max[c.index()][t].to_string(),
            ]);
        }
    }
    write_text(
        &dir.join("boundary.csv"),
        &csv_table(&["category", "year", "history", "v_min", "v_max"], &rows),
    )?;
    let candidates: Vec<serde_json::Value> = ours
        .env
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            serde_json::json!({
                "feature": c.feature_id,
                "rule": c.rule_id,
                "prompt": c.prompt_id,
                "credibility": c.credibility,
                "risk": c.risk,
                "high_risk": ours.env.gate.high_risk.contains(&i),
            })
        })
        .collect();
    write_json(&dir.join("candidates.json"), &candidates)?;
    write_json(&dir.join("event_rules.json"), &ours.env.rules)?;
    write_json(&dir.join("constraints.json"), &ours.constraints)?;
    let rules: String = ours.rules.iter().map(|r| format!("{r}\n")).collect();
    write_text(&dir.join("rules.txt"), &rules)?;
    write_json(&dir.join("scheme_initial.json"), &ours.initial)?;
    write_json(&dir.join("calibration.json"), &ours.calibration)?;
    write_json(&dir.join("scheme.json"), &ours.optimize)?;
    write_json(&dir.join("scenarios_full.json"), &ours.full.to_json())?;
    write_json(&dir.join("scenarios_reduced.json"), &ours.reduced.to_json())?;
    write_json(
        &dir.join("ours.json"),
        &serde_json::json!({
            "reported_scenario": ours.reported,
            "metrics": MethodMetrics::from_outcome(&ours.outcome, &ctx.years),
        }),
    )?;
    for (t, y) in ctx.years.iter().enumerate() {
        let g = &ours.outcome.subs[t];
        write_json(
            &dir.join("networks").join(format!("ours_{y}.json")),
            &g.to_json(&category_attrs(g, &l.categories)),
        )?;
    }
    write_manifest(&dir, "generate", cfg)
}

#[derive(Deserialize)]
struct OursFile {
    metrics: MethodMetrics,
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let ours_path = cfg.out().join("generate").join("ours.json");
    if !ours_path.is_file() {
        log::info!("no generate output; running generate first");
        cmd_generate(cfg)?;
    }
    let ours: OursFile = read_json(&ours_path)?;
    let model = make_model(cfg)?;
    let l = load(cfg, model.as_ref())?;
    let p = cfg.pipeline()?;
    let ctx = Context::new(&l.dataset, &l.categories, p.metrics)?;
    let mut all = Vec::new();
    for name in METHODS {
        let m = match name {
            "ours" => ours.metrics.clone(),
            "original" => MethodMetrics::from_outcome(&run_original(&ctx)?, &ctx.years),
            other => {
                let method: Method = other.parse()?;
                MethodMetrics::from_outcome(&run_backbone_method(&ctx, method, &p)?, &ctx.years)
            }
        };
        all.push(m);
    }
    let dir = cfg.out().join("evaluate");
    write_json(&dir.join("metrics.json"), &all)?;
    write_manifest(&dir, "evaluate", cfg)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BenchFile {
    pub records: Vec<TimingRecord>,
    pub report: EfficiencyReport,
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<(), CliError> {
    let model = make_model(cfg)?;
    let l = load(cfg, model.as_ref())?;
    let assets = load_assets(cfg)?;
    let p = cfg.pipeline()?;
    let ctx = Context::new(&l.dataset, &l.categories, p.metrics)?;
    let sizes = (ctx.total_nodes(), ctx.total_edges());
    let mut records = Vec::new();
    for name in METHODS {
        for run in 0..cfg.bench_runs {
            records.push(time_run(name, run, sizes, || match name {
                "original" => run_original(&ctx).map(drop),
                "ours" => run_ours(&ctx, &assets, model.as_ref(), &p).map(drop),
                other => run_backbone_method(&ctx, other.parse()?, &p).map(drop),
            }));
        }
    }
    let report = summarize(&records)?;
    let dir = cfg.out().join("bench");
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.run.to_string(),
                format!("{:.6}", r.seconds),
                r.nodes.to_string(),
                r.edges.to_string(),
                r.failure.clone().unwrap_or_default().replace(',', ";"),
            ]
        })
        .collect();
    write_text(
        &dir.join("timings.csv"),
        &csv_table(
            &["method", "run", "seconds", "nodes", "edges", "failure"],
            &rows,
        ),
    )?;
    write_json(&dir.join("bench.json"), &BenchFile { records, report })?;
    write_manifest(&dir, "bench", cfg)
}

pub fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let metrics_path = cfg.out().join("evaluate").join("metrics.json");
    if !metrics_path.is_file() {
        cmd_evaluate(cfg)?;
    }
    let metrics: Vec<MethodMetrics> = read_json(&metrics_path)?;
    let dir = cfg.out().join("report");
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            std::iter::once(m.method.clone())
                .chain(m.cells.iter().map(|x| cell(Some(*x))))
                .collect()
        })
        .collect();
    let mut header = vec!["method"];
    header.extend(REPORT_COLUMNS);
    write_text(&dir.join("table1.md"), &markdown_table(&header, &rows))?;
    header[9] = "delta";
    write_text(&dir.join("table1.csv"), &csv_table(&header, &rows))?;

    let bench_path = cfg.out().join("bench").join("bench.json");
    if bench_path.is_file() {
        let bench: BenchFile = read_json(&bench_path)?;
        let unit = if cfg.time_unit == "ks" {
            TimeUnit::Kiloseconds
        } else {
            TimeUnit::Seconds
        };
        let rows: Vec<Vec<String>> = bench
            .report
            .rows(unit)
            .into_iter()
            .map(|(m, cells)| {
                std::iter::once(m)
                    .chain(cells.iter().map(|c| cell(*c)))
                    .collect()
            })
            .collect();
        let mut header = vec!["method"];
        header.extend(EFFICIENCY_COLUMNS);
        write_text(&dir.join("table2.md"), &markdown_table(&header, &rows))?;
        write_text(&dir.join("table2.csv"), &csv_table(&header, &rows))?;
    }
    write_manifest(&dir, "report", cfg)
}
