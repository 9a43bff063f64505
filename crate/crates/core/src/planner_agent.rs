//! Planner agent: pulls constraint sentences out of documents, compiles them
//! into predicate trees over scenario-vector variables, calibrates the
//! experiment scheme by finite-difference gradient descent and runs the
//! execute/analyze/adjust loop.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::env_agent::KnowledgeDoc;
use crate::error::{Error, Result};
use crate::ingest::Category;
use crate::llm::{request_rule_text, TextModel};
use crate::metrics::IndexRow;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintText {
    pub id: String,
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Sa,
    Similarity,
    Nf,
    Wf,
    We,
    LccS,
    Reachability,
    Ve,
    Demand(Category),
}

impl Var {
    pub const DIMS: [Var; 8] = [
        Var::Sa,
        Var::Similarity,
        Var::Nf,
        Var::Wf,
        Var::We,
        Var::LccS,
        Var::Reachability,
        Var::Ve,
    ];

    pub fn name(self) -> String {
        match self {
            Var::Sa => "SA".into(),
            Var::Similarity => "Similarity".into(),
            Var::Nf => "NF".into(),
            Var::Wf => "WF".into(),
            Var::We => "WE".into(),
            Var::LccS => "LCC_S".into(),
            Var::Reachability => "Reachability".into(),
            Var::Ve => "VE".into(),
            Var::Demand(c) => format!("demand[{}]", c.key()),
        }
    }

    fn lookup(word: &str) -> Option<Var> {
        if let Some(inner) = word
            .strip_prefix("demand[")
            .or_else(|| word.strip_prefix("Demand["))
            .and_then(|w| w.strip_suffix(']'))
        {
            let inner = inner.trim();
            return Category::ALL
                .into_iter()
                .find(|c| {
                    c.key().eq_ignore_ascii_case(inner) || c.label().eq_ignore_ascii_case(inner)
                })
                .map(Var::Demand);
        }
        Var::DIMS
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(word))
    }

    /// Structural indicators that shrink as the backbone threshold rises.
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            Var::Nf | Var::Wf | Var::We | Var::LccS | Var::Reachability
        )
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Ge,
    Le,
    Eq,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
        }
    }
}

pub const EQ_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum RuleExpr {
    Cmp {
        var: Var,
        op: CmpOp,
        value: f64,
    },
    /// Inclusive interval.
    Within {
        var: Var,
        lo: f64,
        hi: f64,
    },
    And(Box<RuleExpr>, Box<RuleExpr>),
    Or(Box<RuleExpr>, Box<RuleExpr>),
}

impl RuleExpr {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            RuleExpr::Cmp { var, .. } | RuleExpr::Within { var, .. } => out.push(*var),
            RuleExpr::And(a, b) | RuleExpr::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Leaf predicates of the tree, left to right.
    pub fn leaves(&self) -> Vec<&RuleExpr> {
        match self {
            RuleExpr::And(a, b) | RuleExpr::Or(a, b) => {
                let mut v = a.leaves();
                v.extend(b.leaves());
                v
            }
            leaf => vec![leaf],
        }
    }
}

/// Renders grammar text that parses back to the same tree.
pub fn render(r: &RuleExpr) -> String {
    match r {
        RuleExpr::Cmp { var, op, value } => format!("{var} {} {value:?}", op.symbol()),
        RuleExpr::Within { var, lo, hi } => format!("{var} in [{lo:?}, {hi:?}]"),
        RuleExpr::And(a, b) => {
            let l = match **a {
                RuleExpr::Or(..) => format!("({})", render(a)),
                _ => render(a),
            };
            let r = match **b {
                RuleExpr::And(..) | RuleExpr::Or(..) => format!("({})", render(b)),
                _ => render(b),
            };
            format!("{l} AND {r}")
        }
        RuleExpr::Or(a, b) => {
            let r = match **b {
                RuleExpr::Or(..) => format!("({})", render(b)),
                _ => render(b),
            };
            format!("{} OR {r}", render(a))
        }
    }
}

impl fmt::Display for RuleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

impl Serialize for RuleExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&render(self))
    }
}

impl<'de> Deserialize<'de> for RuleExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_rule(&s).map_err(serde::de::Error::custom)
    }
}

/// Variable values for rule evaluation, keyed by canonical name.
pub type RuleEnv = BTreeMap<String, f64>;

pub fn rule_env(row: &IndexRow, demand: Option<&[f64; 4]>) -> RuleEnv {
    let mut env: RuleEnv = Var::DIMS
        .iter()
        .zip(row.to_array())
        .map(|(v, x)| (v.name(), x))
        .collect();
    if let Some(d) = demand {
        for c in Category::ALL {
            env.insert(Var::Demand(c).name(), d[c.index()]);
        }
    }
    env
}

pub fn evaluate_rule(r: &RuleExpr, env: &RuleEnv) -> Result<bool> {
    let get = |v: &Var| {
        env.get(&v.name())
            .copied()
            .ok_or_else(|| Error::UnresolvedVariable(v.name()))
    };
    Ok(match r {
        RuleExpr::Cmp { var, op, value } => {
            let x = get(var)?;
            match op {
                CmpOp::Ge => x >= *value,
                CmpOp::Le => x <= *value,
                CmpOp::Eq => (x - value).abs() <= EQ_TOL * value.abs().max(1.0),
            }
        }
        RuleExpr::Within { var, lo, hi } => {
            let x = get(var)?;
            *lo <= x && x <= *hi
        }
        RuleExpr::And(a, b) => evaluate_rule(a, env)? && evaluate_rule(b, env)?,
        RuleExpr::Or(a, b) => evaluate_rule(a, env)? || evaluate_rule(b, env)?,
    })
}

const CATEGORY_ALT: &str = "infrastructure|lifestyle services|lifestyle|business management|business|social entertainment|social";

fn category_from_phrase(s: &str) -> Option<Category> {
    let s = s.to_ascii_lowercase();
    Category::ALL
        .into_iter()
        .find(|c| s == c.key() || s == c.label().to_ascii_lowercase())
}

/// Rewrites comparator phrases into grammar symbols.
pub fn normalize_phrases(text: &str) -> String {
    static RULES: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    static DEMAND: OnceLock<[Regex; 2]> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        let num = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)";
        [
            (format!(r"(?i)\bbetween\s+{num}\s+and\s+{num}"), " in [$1, $2] "),
            (
                r"(?i)\b(?:no less than|not less than|greater than or equal to|at least|not below)\b".to_string(),
                " >= ",
            ),
            (
                r"(?i)\b(?:no more than|not more than|less than or equal to|at most|not exceed(?:s|ing)?|up to)\b"
                    .to_string(),
                " <= ",
            ),
            (r"(?i)\b(?:exactly|equal to|equals)\b".to_string(), " = "),
            ("≥".to_string(), " >= "),
            ("≤".to_string(), " <= "),
        ]
        .into_iter()
        .map(|(p, r)| (Regex::new(&p).expect("regex"), r))
        .collect()
    });
    let demand = DEMAND.get_or_init(|| {
        [
            Regex::new(&format!(
                r"(?i)\bdemand\s+(?:for|of|in)\s+(?:the\s+)?({CATEGORY_ALT})\b"
            ))
            .expect("regex"),
            Regex::new(&format!(r"(?i)\b({CATEGORY_ALT})\s+demand\b")).expect("regex"),
        ]
    });
    let mut s = text.trim().trim_end_matches(['.', '!']).to_string();
    for (re, rep) in rules {
        s = re.replace_all(&s, *rep).into_owned();
    }
    for re in demand {
        s = re
            .replace_all(&s, |c: &regex::Captures<'_>| {
                category_from_phrase(&c[1])
                    .map_or(c[0].to_string(), |cat| format!("demand[{}]", cat.key()))
            })
            .into_owned();
    }
    s
}

const FILLER: &[&str] = &[
    "must", "should", "shall", "stay", "stays", "remain", "remains", "be", "is", "are", "kept",
    "keep", "always", "the", "value", "needs", "need", "to", "all", "times", "every", "each",
    "year", "within",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Var(Var),
    Num(f64),
    Op(CmpOp),
    In,
    And,
    Or,
    LBrack,
    RBrack,
    Comma,
    LParen,
    RParen,
}

fn lex(s: &str) -> Result<Vec<Tok>> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(
            r"(?x)
            (?P<ws>\s+)
            |(?P<op>>=|<=|==|=)
            |(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
            |(?P<word>[A-Za-z_][A-Za-z0-9_]*(?:\[[A-Za-z_ ]+\])?)
            |(?P<punct>[\[\],()])
            ",
        )
        .expect("regex")
    });
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < s.len() {
        let Some(c) = re
            .captures_at(s, pos)
            .filter(|c| c.get(0).unwrap().start() == pos)
        else {
            let frag: String = s[pos..].chars().take(16).collect();
            return Err(compile_err(&frag, "unexpected character"));
        };
        let m = c.get(0).unwrap();
        pos = m.end();
        if c.name("ws").is_some() {
            continue;
        }
        if let Some(op) = c.name("op") {
            out.push(Tok::Op(match op.as_str() {
                ">=" => CmpOp::Ge,
                "<=" => CmpOp::Le,
                _ => CmpOp::Eq,
            }));
        } else if let Some(n) = c.name("num") {
            let v: f64 = n
                .as_str()
                .parse()
                .map_err(|_| compile_err(n.as_str(), "bad number"))?;
            out.push(Tok::Num(v));
        } else if let Some(p) = c.name("punct") {
            out.push(match p.as_str() {
                "[" => Tok::LBrack,
                "]" => Tok::RBrack,
                "," => Tok::Comma,
                "(" => Tok::LParen,
                _ => Tok::RParen,
            });
        } else {
            let w = m.as_str();
            let lower = w.to_ascii_lowercase();
            match lower.as_str() {
                "and" => out.push(Tok::And),
                "or" => out.push(Tok::Or),
                "in" => out.push(Tok::In),
                _ => match Var::lookup(w) {
                    Some(v) => out.push(Tok::Var(v)),
                    None if FILLER.contains(&lower.as_str()) => {}
                    None => return Err(compile_err(w, "unknown word")),
                },
            }
        }
    }
    Ok(out)
}

fn compile_err(fragment: &str, message: &str) -> Error {
    Error::RuleCompile {
        fragment: fragment.to_string(),
        message: message.to_string(),
    }
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(compile_err(
                &format!("{other:?}"),
                &format!("expected {what}"),
            )),
        }
    }

    fn num(&mut self) -> Result<f64> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(v),
            other => Err(compile_err(&format!("{other:?}"), "expected a number")),
        }
    }

    fn expr(&mut self) -> Result<RuleExpr> {
        let mut l = self.term()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            let r = self.term()?;
            l = RuleExpr::Or(Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn term(&mut self) -> Result<RuleExpr> {
        let mut l = self.factor()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            let r = self.factor()?;
            l = RuleExpr::And(Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn factor(&mut self) -> Result<RuleExpr> {
        match self.next() {
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Var(var)) => match self.next() {
                Some(Tok::Op(op)) => Ok(RuleExpr::Cmp {
                    var,
                    op,
                    value: self.num()?,
                }),
                Some(Tok::In) => {
                    self.expect(Tok::LBrack, "`[`")?;
                    let lo = self.num()?;
                    self.expect(Tok::Comma, "`,`")?;
                    let hi = self.num()?;
                    self.expect(Tok::RBrack, "`]`")?;
                    if lo > hi {
                        return Err(compile_err(&format!("[{lo}, {hi}]"), "empty interval"));
                    }
                    Ok(RuleExpr::Within { var, lo, hi })
                }
                other => Err(compile_err(
                    &format!("{var} {other:?}"),
                    "expected a comparator after the variable",
                )),
            },
            other => Err(compile_err(
                &format!("{other:?}"),
                "expected a variable or `(`",
            )),
        }
    }
}

/// Parses grammar text (after phrase normalization).
pub fn parse_rule(text: &str) -> Result<RuleExpr> {
    let norm = normalize_phrases(text);
    let toks = lex(&norm)?;
    if toks.is_empty() {
        return Err(compile_err(text, "no predicate found"));
    }
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return Err(compile_err(
            &format!("{:?}", &p.toks[p.pos..]),
            "trailing input",
        ));
    }
    Ok(e)
}

/// Compiles a constraint through the model (which must answer in grammar
/// text) and the shared parser.
pub fn compile_rule(c: &ConstraintText, model: &dyn TextModel) -> Result<RuleExpr> {
    if c.text.trim().is_empty() {
        return Err(compile_err("", "empty constraint"));
    }
    let text = request_rule_text(
        model,
        "Rewrite the constraint in the grammar `<var> (>=|<=|=) <number>` or \
         `<var> in [a, b]`, joined by AND/OR. Variables: SA, Similarity, NF, WF, WE, LCC_S, \
         Reachability, VE, demand[infrastructure|lifestyle|business|social]. Output the expression only.",
        &c.text,
    )?;
    parse_rule(&text)
}

fn looks_like_constraint(sentence: &str) -> bool {
    static NUM: OnceLock<Regex> = OnceLock::new();
    let num = NUM.get_or_init(|| Regex::new(r"\d").expect("regex"));
    let norm = normalize_phrases(sentence);
    let has_cmp =
        norm.contains(">=") || norm.contains("<=") || norm.contains('=') || norm.contains(" in [");
    let has_var = norm
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '[' || c == ']'))
        .any(|w| Var::lookup(w).is_some());
    has_cmp && has_var && num.is_match(&norm)
}

/// Sentences of `text`; periods inside numbers do not split.
pub fn sentences(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?:[.!?](?:\s+|$))|\n|;").expect("regex"));
    re.split(text)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Keeps the sentences that fit the constraint template.
pub fn extract_constraints(
    docs: &[KnowledgeDoc],
    model: &dyn TextModel,
) -> Result<Vec<ConstraintText>> {
    let mut out = Vec::new();
    for d in docs {
        let text = request_rule_text(
            model,
            "Quote every sentence of the document that states a quantitative requirement on the \
             ecosystem indicators or category demand. One per line.",
            &d.text,
        )?;
        let before = out.len();
        for s in sentences(&text) {
            if looks_like_constraint(&s) {
                out.push(ConstraintText {
                    id: format!("{}#{}", d.id, out.len() - before),
                    doc_id: d.id.clone(),
                    text: s,
                });
            }
        }
        if out.len() == before {
            log::warn!("no constraints found in {}", d.id);
        }
    }
    Ok(out)
}

/// Which structural parameter the scheme's backbone threshold drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureMethod {
    /// Individual-individual quantile of the social agent.
    Social,
    Gt,
    Hss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentScheme {
    pub ev: [f64; 4],
    pub method: StructureMethod,
    pub threshold: f64,
    pub rules: Vec<RuleExpr>,
    pub seed: u64,
}

impl ExperimentScheme {
    pub fn validate(&self) -> Result<()> {
        if self.ev.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "multipliers must be > 0, got {:?}",
                self.ev
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.ev.to_vec();
        p.push(self.threshold);
        p
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        let mut s = self.clone();
        s.ev.copy_from_slice(&p[..4]);
        s.threshold = p[4];
        s
    }
}

/// Box constraints on (Ev, threshold).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeBounds {
    pub ev: [(f64, f64); 4],
    pub threshold: (f64, f64),
}

impl SchemeBounds {
    pub fn lower(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.ev.iter().map(|b| b.0).collect();
        v.push(self.threshold.0);
        v
    }

    pub fn upper(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.ev.iter().map(|b| b.1).collect();
        v.push(self.threshold.1);
        v
    }

    pub fn project(&self, s: &ExperimentScheme) -> ExperimentScheme {
        let p: Vec<f64> = s
            .params()
            .iter()
            .zip(self.lower().iter().zip(self.upper()))
            .map(|(x, (lo, hi))| x.clamp(*lo, hi))
            .collect();
        s.with_params(&p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub eta: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Relative finite-difference step, scaled by `max(|x|, 1)`.
    pub rel_step: f64,
    /// Consecutive J increases treated as divergence.
    pub divergence_patience: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            eta: 0.05,
            epsilon: 1e-3,
            max_iters: 100,
            rel_step: 1e-3,
            divergence_patience: 5,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !(self.epsilon > 0.0) || !(self.rel_step > 0.0) {
            return Err(Error::InvalidParameter(
                "eta, epsilon and step must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub iterations: usize,
    /// J at each visited iterate, starting with the input.
    pub j_trajectory: Vec<f64>,
    /// Running minimum of `j_trajectory`.
    pub best_j: Vec<f64>,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

/// Central differences with probes clipped to the box; `steps[i] > 0`
/// overrides the relative step for parameter `i`.
pub fn fd_gradient(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    rel_step: f64,
    steps: &[f64],
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = match steps.get(i) {
            Some(s) if *s > 0.0 => *s,
            _ => rel_step * x[i].abs().max(1.0),
        };
        let hi = (x[i] + h).min(upper[i]);
        let lo = (x[i] - h).max(lower[i]);
        if hi <= lo {
            continue;
        }
        let mut p = x.to_vec();
        p[i] = hi;
        let fp = f(&p)?;
        p[i] = lo;
        let fm = f(&p)?;
        g[i] = (fp - fm) / (hi - lo);
    }
    Ok(g)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected gradient descent `x <- clip(x - eta * grad)`; returns the best
/// iterate seen.
pub fn gradient_descent(
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    steps: &[f64],
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    cfg: &CalibrationConfig,
) -> Result<(Vec<f64>, CalibrationReport)> {
    cfg.validate()?;
    let clip = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(lower.iter().zip(upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    };
    let mut x = clip(x0);
    let j0 = f(&x)?;
    let mut report = CalibrationReport {
        iterations: 0,
        j_trajectory: vec![j0],
        best_j: vec![j0],
        final_grad_norm: f64::NAN,
        converged: false,
        diverged: false,
        aborted: None,
    };
    let mut best = (j0, x.clone());
    let mut rising = 0;
    let mut prev = j0;
    loop {
        let g = match fd_gradient(f, &x, lower, upper, cfg.rel_step, steps) {
            Ok(g) => g,
            Err(e) => {
                report.aborted = Some(e.to_string());
                break;
            }
        };
        report.final_grad_norm = norm(&g);
        if report.final_grad_norm < cfg.epsilon {
            report.converged = true;
            break;
        }
        if report.iterations >= cfg.max_iters {
            break;
        }
        let next: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - cfg.eta * gi).collect();
        x = clip(&next);
        report.iterations += 1;
        let j = match f(&x) {
            Ok(j) => j,
            Err(e) => {
                report.aborted = Some(e.to_string());
                break;
            }
        };
        report.j_trajectory.push(j);
        if j < best.0 {
            best = (j, x.clone());
        }
        report.best_j.push(best.0);
        if !j.is_finite() {
            report.diverged = true;
            break;
        }
        rising = if j > prev { rising + 1 } else { 0 };
        prev = j;
        if rising >= cfg.divergence_patience {
            report.diverged = true;
            log::warn!(
                "calibration diverged after {} iterations",
                report.iterations
            );
            break;
        }
    }
    Ok((best.1, report))
}

/// Calibrates Ev and the backbone threshold against `objective` (the
/// deviation of the scheme's generated scenario from the target).
pub fn calibrate(
    scheme0: &ExperimentScheme,
    bounds: &SchemeBounds,
    threshold_step: f64,
    objective: &mut dyn FnMut(&ExperimentScheme) -> Result<f64>,
    cfg: &CalibrationConfig,
) -> Result<(ExperimentScheme, CalibrationReport)> {
    scheme0.validate()?;
    let x0 = scheme0.params();
    let steps = [0.0, 0.0, 0.0, 0.0, threshold_step];
    let mut f = |p: &[f64]| objective(&scheme0.with_params(p));
    let (best, report) =
        gradient_descent(&x0, &bounds.lower(), &bounds.upper(), &steps, &mut f, cfg)?;
    Ok((scheme0.with_params(&best), report))
}

/// One pipeline execution under a scheme: per-year vectors, demand and δ.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<IndexRow>,
    pub demand: Vec<[f64; 4]>,
    pub delta: f64,
}

impl Evaluation {
    /// Rules violated in at least one year.
    pub fn violations<'a>(&self, rules: &'a [RuleExpr]) -> Result<Vec<&'a RuleExpr>> {
        let mut out = Vec::new();
        for r in rules {
            let mut ok = true;
            for (row, d) in self.rows.iter().zip(&self.demand) {
                if !evaluate_rule(r, &rule_env(row, Some(d)))? {
                    ok = false;
                    break;
                }
            }
            if !ok {
                out.push(r);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub scheme: ExperimentScheme,
    pub converged: bool,
    pub rounds: usize,
    pub violations: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Push {
    Lower,
    Raise,
}

/// Direction the threshold should move to satisfy a violated structural leaf.
fn structural_push(leaf: &RuleExpr, rows: &[IndexRow]) -> Option<Push> {
    let (var, want_min, want_max) = match leaf {
        RuleExpr::Cmp { var, op, value } => match op {
            CmpOp::Ge => (*var, Some(*value), None),
            CmpOp::Le => (*var, None, Some(*value)),
            CmpOp::Eq => (*var, Some(*value), Some(*value)),
        },
        RuleExpr::Within { var, lo, hi } => (*var, Some(*lo), Some(*hi)),
        _ => return None,
    };
    if !var.is_structural() {
        return None;
    }
    let idx = Var::DIMS.iter().position(|v| *v == var)?;
    let values: Vec<f64> = rows.iter().map(|r| r.to_array()[idx]).collect();
    if want_min.is_some_and(|m| values.iter().any(|x| *x < m)) {
        Some(Push::Lower)
    } else if want_max.is_some_and(|m| values.iter().any(|x| *x > m)) {
        Some(Push::Raise)
    } else {
        None
    }
}

fn leaf_holds(leaf: &RuleExpr, eval: &Evaluation) -> Result<bool> {
    for (row, d) in eval.rows.iter().zip(&eval.demand) {
        if !evaluate_rule(leaf, &rule_env(row, Some(d)))? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Execute, analyze (rule violations and δ), adjust (project Ev into the
/// envelope, rescale violated demand leaves, bisect the threshold toward
/// violated structural leaves) until there are no violations and δ has
/// settled, or `max_rounds`.
pub fn optimize_scheme(
    scheme: &ExperimentScheme,
    bounds: &SchemeBounds,
    pipeline: &mut dyn FnMut(&ExperimentScheme) -> Result<Evaluation>,
    max_rounds: usize,
    delta_tol: f64,
) -> Result<OptimizeOutcome> {
    let mut cur = scheme.clone();
    let mut bracket = bounds.threshold;
    let mut prev_delta: Option<f64> = None;
    let mut best: Option<OptimizeOutcome> = None;
    for round in 1..=max_rounds {
        let eval = pipeline(&cur)?;
        let violated = eval.violations(&cur.rules)?;
        let outcome = OptimizeOutcome {
            scheme: cur.clone(),
            converged: false,
            rounds: round,
            violations: violated.len(),
            delta: eval.delta,
        };
        let better = best
            .as_ref()
            .is_none_or(|b| (outcome.violations, outcome.delta) < (b.violations, b.delta));
        if better {
            best = Some(outcome.clone());
        }

        let mut next = bounds.project(&cur);
        let mut pushes = Vec::new();
        for r in &violated {
            for leaf in r.leaves() {
                if leaf_holds(leaf, &eval)? {
                    continue;
                }
                if let Some(p) = structural_push(leaf, &eval.rows) {
                    pushes.push(p);
                }
                if let RuleExpr::Cmp {
                    var: Var::Demand(c),
                    op,
                    value,
                } = leaf
                {
                    let i = c.index();
                    let worst = match op {
                        CmpOp::Ge => eval
                            .demand
                            .iter()
                            .map(|d| d[i])
                            .fold(f64::INFINITY, f64::min),
                        _ => eval.demand.iter().map(|d| d[i]).fold(0.0, f64::max),
                    };
                    if worst > 0.0 {
                        next.ev[i] *= value / worst;
                    }
                }
            }
        }
        if pushes.contains(&Push::Lower) && pushes.contains(&Push::Raise) {
            log::warn!("structural rules pull the threshold in opposite directions");
            break;
        }
        match pushes.first() {
            Some(Push::Lower) => {
                bracket.1 = cur.threshold;
                next.threshold = 0.5 * (bracket.0 + bracket.1);
            }
            Some(Push::Raise) => {
                bracket.0 = cur.threshold;
                next.threshold = 0.5 * (bracket.0 + bracket.1);
            }
            None => {}
        }
        next = bounds.project(&next);

        let unchanged = next == cur;
        let settled = prev_delta.is_some_and(|p| (p - eval.delta).abs() < delta_tol);
        if violated.is_empty() && (unchanged || settled) {
            return Ok(OptimizeOutcome {
                converged: true,
                ..outcome
            });
        }
        if unchanged || (bracket.1 - bracket.0).abs() < 1e-9 {
            break;
        }
        prev_delta = Some(eval.delta);
        cur = next;
    }
    let mut b = best.ok_or_else(|| Error::InvalidParameter("max_rounds must be >= 1".into()))?;
    b.converged = false;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::StubModel;

    fn row(vals: [f64; 8]) -> IndexRow {
        IndexRow::from_slice(&vals).unwrap()
    }

    #[test]
    fn extract_cases() {
        let m = StubModel::new(0);
        let docs = vec![KnowledgeDoc {
            id: "d".into(),
            text: "Reachability must stay at least 0.9".into(),
        }];
        let c = extract_constraints(&docs, &m).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, "Reachability must stay at least 0.9");
        assert!(extract_constraints(&[], &m).unwrap().is_empty());
        let two = vec![KnowledgeDoc {
            id: "t".into(),
            text: "The platform grew quickly. NF should remain at least 0.8. \
                   Demand for Social Entertainment must not exceed 500. Nothing else matters."
                .into(),
        }];
        let c = extract_constraints(&two, &m).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(
            c[1].text,
            "Demand for Social Entertainment must not exceed 500"
        );
    }

    #[test]
    fn compile_cases() {
        let m = StubModel::new(0);
        let ct = |t: &str| ConstraintText {
            id: "c".into(),
            doc_id: "d".into(),
            text: t.into(),
        };
        assert_eq!(
            compile_rule(&ct("Reachability >= 0.9"), &m).unwrap(),
            RuleExpr::Cmp {
                var: Var::Reachability,
                op: CmpOp::Ge,
                value: 0.9
            }
        );
        assert_eq!(
            compile_rule(&ct("SA in [100, 500] AND NF >= 0.8"), &m).unwrap(),
            RuleExpr::And(
                Box::new(RuleExpr::Within {
                    var: Var::Sa,
                    lo: 100.0,
                    hi: 500.0
                }),
                Box::new(RuleExpr::Cmp {
                    var: Var::Nf,
                    op: CmpOp::Ge,
                    value: 0.8
                })
            )
        );
        match compile_rule(&ct("be excellent"), &m) {
            Err(Error::RuleCompile { fragment, .. }) => assert_eq!(fragment, "excellent"),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            parse_rule("Reachability must stay at least 0.9").unwrap(),
            parse_rule("Reachability >= 0.9").unwrap()
        );
        assert_eq!(
            parse_rule("VE between 0.2 and 0.7").unwrap(),
            RuleExpr::Within {
                var: Var::Ve,
                lo: 0.2,
                hi: 0.7
            }
        );
        assert_eq!(
            parse_rule("Social Entertainment demand at most 40").unwrap(),
            RuleExpr::Cmp {
                var: Var::Demand(Category::SocialEntertainment),
                op: CmpOp::Le,
                value: 40.0
            }
        );
        assert!(parse_rule("NF in [0.9, 0.1]").is_err());
        assert!(parse_rule("NF >=").is_err());
        assert!(parse_rule("").is_err());
    }

    #[test]
    fn precedence_and_render() {
        let r = parse_rule("NF >= 0.5 OR WF <= 0.2 AND VE = 1").unwrap();
        assert!(matches!(r, RuleExpr::Or(_, ref b) if matches!(**b, RuleExpr::And(..))));
        assert_eq!(parse_rule(&render(&r)).unwrap(), r);
        let nested = parse_rule("(NF >= 0.5 OR WF <= 0.2) AND (SA >= 1 AND VE <= 2)").unwrap();
        assert_eq!(parse_rule(&render(&nested)).unwrap(), nested);
    }

    #[test]
    fn evaluate_cases() {
        let env = rule_env(&row([1.0, 1.0, 0.9, 0.8, 0.7, 0.6, 0.95, 0.5]), None);
        let t = |s: &str| evaluate_rule(&parse_rule(s).unwrap(), &env).unwrap();
        assert!(t("Reachability >= 0.9"));
        assert!(!t("Reachability >= 0.9 AND NF >= 0.95"));
        assert!(t("VE in [0.5, 0.6]"));
        assert!(t("NF = 0.9"));
        assert!(matches!(
            evaluate_rule(&parse_rule("demand[social] >= 1").unwrap(), &env),
            Err(Error::UnresolvedVariable(_))
        ));
    }

    #[test]
    fn quadratic_descent_converges() {
        let cfg = CalibrationConfig {
            eta: 0.1,
            ..Default::default()
        };
        let mut f = |x: &[f64]| Ok(x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>());
        let lo = [0.0; 4];
        let hi = [10.0; 4];
        let (x, rep) =
            gradient_descent(&[2.0, 3.0, 0.5, 1.5], &lo, &hi, &[], &mut f, &cfg).unwrap();
        assert!(rep.converged);
        assert!(norm(&x.iter().map(|v| v - 1.0).collect::<Vec<_>>()) < 1e-3);
        assert!(rep.iterations <= 200);
    }

    #[test]
    fn quadratic_closed_form_trajectory() {
        let cfg = CalibrationConfig {
            eta: 0.1,
            ..Default::default()
        };
        let mut f = |x: &[f64]| Ok((x[0] - 1.0).powi(2));
        let (_, rep) = gradient_descent(&[3.0], &[-100.0], &[100.0], &[], &mut f, &cfg).unwrap();
        for (k, j) in rep.j_trajectory.iter().enumerate().take(10) {
            let oracle = (2.0 * 0.8f64.powi(k as i32)).powi(2);
            assert!(
                (j - oracle).abs() < 1e-9 * oracle.max(1.0),
                "k={k} {j} {oracle}"
            );
        }
    }

    #[test]
    fn large_eta_diverges_keeps_best() {
        let cfg = CalibrationConfig {
            eta: 1.5,
            ..Default::default()
        };
        let mut f = |x: &[f64]| Ok((x[0] - 1.0).powi(2));
        let (x, rep) = gradient_descent(&[1.5], &[-1e9], &[1e9], &[], &mut f, &cfg).unwrap();
        assert!(rep.diverged);
        assert_eq!(x, vec![1.5]);
        assert!(rep.best_j.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_objective_stops_immediately() {
        let mut f = |_: &[f64]| Ok(0.0);
        let (x, rep) = gradient_descent(
            &[2.0],
            &[0.0],
            &[5.0],
            &[],
            &mut f,
            &CalibrationConfig::default(),
        )
        .unwrap();
        assert_eq!((rep.iterations, rep.converged), (0, true));
        assert_eq!(x, vec![2.0]);
    }

    #[test]
    fn fd_matches_analytic() {
        let mut f = |x: &[f64]| Ok(x[0].powi(3) + 2.0 * x[0] * x[1] + x[1].sin());
        let x = [1.3, -0.7];
        let g = fd_gradient(&mut f, &x, &[-10.0; 2], &[10.0; 2], 1e-5, &[]).unwrap();
        let a = [3.0 * x[0] * x[0] + 2.0 * x[1], 2.0 * x[0] + x[1].cos()];
        for i in 0..2 {
            assert!(((g[i] - a[i]) / a[i]).abs() < 1e-4);
        }
    }

    fn scheme(threshold: f64, rules: &[&str]) -> ExperimentScheme {
        ExperimentScheme {
            ev: [1.0; 4],
            method: StructureMethod::Gt,
            threshold,
            rules: rules.iter().map(|r| parse_rule(r).unwrap()).collect(),
            seed: 0,
        }
    }

    fn bounds() -> SchemeBounds {
        SchemeBounds {
            ev: [(0.5, 2.0); 4],
            threshold: (0.0, 10.0),
        }
    }

    /// NF = WF = 1 - t/10, nonincreasing in t.
    fn linear_pipeline(s: &ExperimentScheme) -> Result<Evaluation> {
        let x = 1.0 - s.threshold / 10.0;
        Ok(Evaluation {
            rows: vec![row([1.0, 1.0, x, x, x, x, x, 1.0])],
            demand: vec![[1.0; 4]],
            delta: s.threshold / 10.0,
        })
    }

    #[test]
    fn optimize_no_rules_returns_input() {
        let s = scheme(3.0, &[]);
        let out = optimize_scheme(&s, &bounds(), &mut linear_pipeline, 10, 1e-6).unwrap();
        assert!(out.converged);
        assert_eq!(out.scheme, s);
    }

    #[test]
    fn optimize_bisects_threshold_down() {
        let s = scheme(8.0, &["NF >= 0.8"]);
        let out = optimize_scheme(&s, &bounds(), &mut linear_pipeline, 50, 1e-6).unwrap();
        assert!(out.converged);
        assert!(out.scheme.threshold <= 2.0 + 1e-12);
        assert_eq!(out.violations, 0);
    }

    #[test]
    fn optimize_contradiction_flags() {
        let s = scheme(5.0, &["NF >= 0.9 AND WF <= 0.1"]);
        let out = optimize_scheme(&s, &bounds(), &mut linear_pipeline, 50, 1e-6).unwrap();
        assert!(!out.converged);
        assert_eq!(out.violations, 1);
    }
}
