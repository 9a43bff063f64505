//! Environment agent: semantic features of the demand history, event rules
//! distilled from a knowledge base, adversarial candidate scenarios,
//! credibility/risk gating and the resulting demand envelope
//! (`V_min`/`V_max` per category and year).

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ApiRecord, Category, CategoryMap, DemandSeries};
use crate::llm::{extract_features, request_rule_text, request_score, TextModel};
use crate::rng::rng_for;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticFeature {
    pub id: String,
    pub category: Category,
    pub year: i32,
    pub vector: Vec<f64>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockRange {
    pub lo: f64,
    pub hi: f64,
}

/// Multiplicative demand shock attached to one or more categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRule {
    pub id: String,
    pub description: String,
    pub effect: BTreeMap<Category, ShockRange>,
}

/// Adversarial prompt. Text may start with `[onset=N persist=M|full]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPrompt {
    pub id: String,
    pub text: String,
    pub onset: Option<usize>,
    pub persistence: Option<usize>,
}

impl AdversarialPrompt {
    pub fn parse(id: impl Into<String>, line: &str) -> Self {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| Regex::new(r"^\s*\[([^\]]*)\]\s*(.*)$").expect("regex"));
        let mut p = AdversarialPrompt {
            id: id.into(),
            text: line.trim().to_string(),
            onset: None,
            persistence: None,
        };
        if let Some(caps) = re.captures(line) {
            for kv in caps[1].split_whitespace() {
                match kv.split_once('=') {
                    Some(("onset", v)) => p.onset = v.parse().ok(),
                    Some(("persist", v)) => p.persistence = v.parse().ok(),
                    _ => {}
                }
            }
            p.text = caps[2].trim().to_string();
        }
        p
    }

    /// One prompt per nonempty, non-comment line.
    pub fn parse_list(text: &str) -> Vec<Self> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .enumerate()
            .map(|(i, l)| Self::parse(format!("p{i}"), l))
            .collect()
    }
}

/// Demand trajectory per category over the horizon.
pub type Trajectory = [Vec<f64>; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScenario {
    pub trajectory: Trajectory,
    pub feature_id: String,
    pub rule_id: String,
    pub prompt_id: String,
    pub credibility: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentBoundary {
    pub years: Vec<i32>,
    pub v_min: Trajectory,
    pub v_max: Trajectory,
}

impl EnvironmentBoundary {
    /// Envelope of the historical series itself.
    pub fn historical(history: &DemandSeries) -> Self {
        EnvironmentBoundary {
            years: history.years.clone(),
            v_min: history.calls.clone(),
            v_max: history.calls.clone(),
        }
    }

    pub fn contains(&self, series: &DemandSeries) -> bool {
        (0..4).all(|c| {
            series.calls[c]
                .iter()
                .enumerate()
                .all(|(t, &v)| self.v_min[c][t] <= v && v <= self.v_max[c][t])
        })
    }

    /// `{category label: [[V_min_t, V_max_t], ...]}`
    pub fn to_json(&self) -> BTreeMap<String, Vec<[f64; 2]>> {
        Category::ALL
            .iter()
            .map(|c| {
                let i = c.index();
                (
                    c.label().to_string(),
                    self.v_min[i]
                        .iter()
                        .zip(&self.v_max[i])
                        .map(|(&a, &b)| [a, b])
                        .collect(),
                )
            })
            .collect()
    }

    pub fn from_json(doc: &BTreeMap<String, Vec<[f64; 2]>>, years: &[i32]) -> Result<Self> {
        let mut b = EnvironmentBoundary {
            years: years.to_vec(),
            v_min: std::array::from_fn(|_| vec![0.0; years.len()]),
            v_max: std::array::from_fn(|_| vec![0.0; years.len()]),
        };
        for c in Category::ALL {
            let pairs = doc
                .get(c.label())
                .ok_or_else(|| Error::InvalidRecord(format!("boundary missing {c}")))?;
            if pairs.len() != years.len() {
                return Err(Error::ShapeMismatch(format!(
                    "boundary for {c} has wrong length"
                )));
            }
            for (t, [lo, hi]) in pairs.iter().enumerate() {
                if lo > hi {
                    return Err(Error::InvalidRecord(format!("V_min > V_max for {c}")));
                }
                b.v_min[c.index()][t] = *lo;
                b.v_max[c.index()][t] = *hi;
            }
        }
        Ok(b)
    }

    /// Per-category multiplier bounds `[min_t V_min/base, max_t V_max/base]`
    /// over years with positive base demand.
    pub fn multiplier_bounds(&self, base: &DemandSeries) -> [(f64, f64); 4] {
        std::array::from_fn(|c| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for t in 0..self.years.len() {
                let b = base.calls[c][t];
                if b > 0.0 {
                    lo = lo.min(self.v_min[c][t] / b);
                    hi = hi.max(self.v_max[c][t] / b);
                }
            }
            if lo.is_finite() && hi.is_finite() {
                (lo, hi)
            } else {
                (1.0, 1.0)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvAgentConfig {
    pub feature_dim: usize,
    pub z_cap: f64,
    pub theta_high: f64,
    pub theta_risk: f64,
    pub max_candidates: usize,
    pub credibility: CredibilityMode,
}

impl Default for EnvAgentConfig {
    fn default() -> Self {
        EnvAgentConfig {
            feature_dim: 8,
            z_cap: 3.0,
            theta_high: 0.6,
            theta_risk: 2.0,
            max_candidates: 10_000,
            credibility: CredibilityMode::StubStatistical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CredibilityMode {
    StubStatistical,
    RemoteJudge,
}

/// One semantic feature per (category, year) of the history.
pub fn extract_semantics(
    history: &DemandSeries,
    apis: &[ApiRecord],
    categories: &CategoryMap,
    model: &dyn TextModel,
    dim: usize,
) -> Result<Vec<SemanticFeature>> {
    if history.is_empty() {
        return Err(Error::Degenerate("empty demand history".into()));
    }
    let mut out = Vec::with_capacity(history.len() * 4);
    for c in Category::ALL {
        let series = &history.calls[c.index()];
        let peak = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (t, &year) in history.years.iter().enumerate() {
            let active = apis
                .iter()
                .filter(|a| {
                    categories.get(&a.api_id) == Some(c)
                        && a.year_active_from <= year
                        && year <= a.year_active_to
                })
                .count();
            let calls = series[t];
            let trend = match t.checked_sub(1).map(|p| series[p]) {
                Some(prev) if calls > prev => "rising",
                Some(prev) if calls < prev => "falling",
                Some(_) => "flat",
                None => "first",
            };
            let text = format!(
                "category: {c}\nyear: {year}\ninvocations: {calls}\nactive apis: {active}\ntrend: {trend}"
            );
            let mut tags = vec![c.key().to_string(), year.to_string(), trend.to_string()];
            if calls == peak && calls > 0.0 {
                tags.push("peak".into());
            }
            out.push(SemanticFeature {
                id: format!("{}@{year}", c.key()),
                category: c,
                year,
                vector: extract_features(model, &text, dim)?,
                tags,
            });
        }
    }
    Ok(out)
}

fn rule_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?m)^\s*(?:[-*]\s*)?(?P<desc>[^:\n]+?)\s*:\s*(?P<cat>[A-Za-z][A-Za-z ]*?)\s*[×xX*]\s*\[\s*(?P<lo>[0-9]*\.?[0-9]+)\s*,\s*(?P<hi>[0-9]*\.?[0-9]+)\s*\]",
        )
        .expect("regex")
    })
}

/// Parses `description: Category ×[lo, hi]` lines.
pub fn parse_rule_blocks(doc_id: &str, text: &str) -> Vec<EventRule> {
    let mut out = Vec::new();
    for caps in rule_line_re().captures_iter(text) {
        let Ok(cat) = caps["cat"].trim().parse::<Category>() else {
            log::warn!("{doc_id}: unknown category {:?} in rule", &caps["cat"]);
            continue;
        };
        let (Ok(lo), Ok(hi)) = (caps["lo"].parse::<f64>(), caps["hi"].parse::<f64>()) else {
            continue;
        };
        if !(lo > 0.0 && lo <= hi) {
            log::warn!("{doc_id}: shock range [{lo}, {hi}] rejected");
            continue;
        }
        out.push(EventRule {
            id: format!("{doc_id}#{}", out.len()),
            description: caps["desc"].trim().to_string(),
            effect: BTreeMap::from([(cat, ShockRange { lo, hi })]),
        });
    }
    out
}

/// Distils event rules from each knowledge document through the model.
pub fn distill_rules(docs: &[KnowledgeDoc], model: &dyn TextModel) -> Result<Vec<EventRule>> {
    let mut out = Vec::new();
    for d in docs {
        let text = request_rule_text(
            model,
            "Extract demand shock rules from the document. Emit one rule per line as \
             `<description>: <category> ×[<low multiplier>, <high multiplier>]` using the \
             categories Infrastructure, Lifestyle Services, Business Management, Social Entertainment.",
            &d.text,
        )?;
        let rules = parse_rule_blocks(&d.id, &text);
        if rules.is_empty() {
            log::warn!("knowledge document {} yielded no rules", d.id);
        }
        out.extend(rules);
    }
    Ok(out)
}

/// Applies every (feature, rule, prompt) combination to the base trajectory.
///
/// The shock factor is drawn uniformly from `[lo, hi]` with an RNG derived
/// from `seed` and the triple ids. Onset is the prompt's `onset` directive,
/// otherwise the model scores the prompt against the feature and the score
/// picks a year. Persistence is the prompt's `persist` or the rest of the
/// horizon.
pub fn generate_candidates(
    features: &[SemanticFeature],
    rules: &[EventRule],
    prompts: &[AdversarialPrompt],
    base: &DemandSeries,
    model: &dyn TextModel,
    seed: u64,
    max_candidates: usize,
) -> Result<Vec<CandidateScenario>> {
    if features.is_empty() || rules.is_empty() || prompts.is_empty() || base.is_empty() {
        return Err(Error::Degenerate(
            "candidate generation needs features, rules, prompts and a base series".into(),
        ));
    }
    let total = features.len() * rules.len() * prompts.len();
    if total > max_candidates {
        log::warn!("{total} candidate combinations truncated to {max_candidates}");
    }
    let horizon = base.len();
    let mut out = Vec::with_capacity(total.min(max_candidates));
    'outer: for p in prompts {
        for f in features {
            for r in rules {
                if out.len() >= max_candidates {
                    break 'outer;
                }
                let onset = match p.onset {
                    Some(t) => t.min(horizon),
                    None => {
                        let s = request_score(
                            model,
                            "Rate from 0 to 1 how late in the horizon the prompt's shock begins.",
                            &format!("prompt: {}\nfeature: {} tags={:?}", p.text, f.id, f.tags),
                        )?;
                        ((s * horizon as f64) as usize).min(horizon - 1)
                    }
                };
                let end = p.persistence.map_or(horizon, |d| (onset + d).min(horizon));
                let mut trajectory = base.calls.clone();
                for (cat, range) in &r.effect {
                    let mut rng = rng_for(seed, &[&f.id, &r.id, &p.id, cat.key()]);
                    let factor = if range.lo == range.hi {
                        range.lo
                    } else {
                        rng.gen_range(range.lo..=range.hi)
                    };
                    for v in &mut trajectory[cat.index()][onset..end] {
                        *v = (*v * factor).max(0.0);
                    }
                }
                out.push(CandidateScenario {
                    trajectory,
                    feature_id: f.id.clone(),
                    rule_id: r.id.clone(),
                    prompt_id: p.id.clone(),
                    credibility: 0.0,
                    risk: 0.0,
                });
            }
        }
    }
    Ok(out)
}

/// Per-category mean and population standard deviation of the history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStats {
    pub mean: [f64; 4],
    pub sd: [f64; 4],
}

pub const SD_FLOOR: f64 = 1e-9;

impl HistoryStats {
    pub fn of(history: &DemandSeries) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::Degenerate("empty demand history".into()));
        }
        let n = history.len() as f64;
        let mean = std::array::from_fn(|c| history.calls[c].iter().sum::<f64>() / n);
        let sd = std::array::from_fn(|c| {
            (history.calls[c]
                .iter()
                .map(|x| (x - mean[c]).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        });
        Ok(HistoryStats { mean, sd })
    }

    /// Largest absolute per-point z-score of a trajectory.
    pub fn max_z(&self, traj: &Trajectory) -> f64 {
        (0..4)
            .flat_map(|c| {
                traj[c]
                    .iter()
                    .map(move |x| (x - self.mean[c]).abs() / self.sd[c].max(SD_FLOOR))
            })
            .fold(0.0, f64::max)
    }
}

/// `exp(-max(0, z* - z_cap))`.
pub fn statistical_credibility(max_z: f64, z_cap: f64) -> f64 {
    (-(max_z - z_cap).max(0.0)).exp()
}

pub fn score_credibility(
    c: &CandidateScenario,
    stats: &HistoryStats,
    mode: CredibilityMode,
    z_cap: f64,
    model: &dyn TextModel,
) -> Result<f64> {
    match mode {
        CredibilityMode::StubStatistical => {
            Ok(statistical_credibility(stats.max_z(&c.trajectory), z_cap))
        }
        CredibilityMode::RemoteJudge => {
            let summary: Vec<String> = Category::ALL
                .iter()
                .map(|cat| format!("{cat}: {:?}", c.trajectory[cat.index()]))
                .collect();
            request_score(
                model,
                "You are a verifier. Rate from 0 to 1 how plausible this demand trajectory is \
                 given the historical statistics. Answer with one number.",
                &format!(
                    "history mean: {:?}\nhistory sd: {:?}\ncandidate:\n{}",
                    stats.mean,
                    stats.sd,
                    summary.join("\n")
                ),
            )
        }
    }
}

/// Fills credibility and risk (max z-score) of every candidate.
pub fn score_all(
    cands: &mut [CandidateScenario],
    history: &DemandSeries,
    mode: CredibilityMode,
    z_cap: f64,
    model: &dyn TextModel,
) -> Result<()> {
    let stats = HistoryStats::of(history)?;
    for c in cands.iter_mut() {
        c.credibility = score_credibility(c, &stats, mode, z_cap, model)?;
        c.risk = stats.max_z(&c.trajectory);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    /// Indices into the candidate list.
    pub high_risk: Vec<usize>,
    pub boundary: EnvironmentBoundary,
    /// True when no candidate survived and the historical envelope was returned.
    pub fallback: bool,
}

/// Keeps candidates with `credibility >= theta_high` and `risk >= theta_risk`
/// and bounds the survivors together with the history.
pub fn gate_and_bound(
    cands: &[CandidateScenario],
    history: &DemandSeries,
    theta_high: f64,
    theta_risk: f64,
) -> GateOutcome {
    let high_risk: Vec<usize> = cands
        .iter()
        .enumerate()
        .filter(|(_, c)| c.credibility >= theta_high && c.risk >= theta_risk)
        .map(|(i, _)| i)
        .collect();
    let mut boundary = EnvironmentBoundary::historical(history);
    for &i in &high_risk {
        for c in 0..4 {
            for (t, &v) in cands[i].trajectory[c].iter().enumerate() {
                boundary.v_min[c][t] = boundary.v_min[c][t].min(v);
                boundary.v_max[c][t] = boundary.v_max[c][t].max(v);
            }
        }
    }
    let fallback = high_risk.is_empty();
    if fallback {
        log::warn!("no candidate passed the credibility/risk gate; using the historical envelope");
    }
    GateOutcome {
        high_risk,
        boundary,
        fallback,
    }
}

#[derive(Debug, Clone)]
pub struct EnvironmentOutput {
    pub features: Vec<SemanticFeature>,
    pub rules: Vec<EventRule>,
    pub candidates: Vec<CandidateScenario>,
    pub gate: GateOutcome,
}

/// Full environment-agent run.
pub fn run_environment_agent(
    history: &DemandSeries,
    apis: &[ApiRecord],
    categories: &CategoryMap,
    knowledge: &[KnowledgeDoc],
    prompts: &[AdversarialPrompt],
    model: &dyn TextModel,
    cfg: &EnvAgentConfig,
    seed: u64,
) -> Result<EnvironmentOutput> {
    let features = extract_semantics(history, apis, categories, model, cfg.feature_dim)?;
    let rules = distill_rules(knowledge, model)?;
    let mut candidates = if rules.is_empty() || prompts.is_empty() {
        log::warn!("no rules or prompts; environment boundary falls back to history");
        Vec::new()
    } else {
        generate_candidates(
            &features,
            &rules,
            prompts,
            history,
            model,
            seed,
            cfg.max_candidates,
        )?
    };
    score_all(&mut candidates, history, cfg.credibility, cfg.z_cap, model)?;
    let gate = gate_and_bound(&candidates, history, cfg.theta_high, cfg.theta_risk);
    Ok(EnvironmentOutput {
        features,
        rules,
        candidates,
        gate,
    })
}
