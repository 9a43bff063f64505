//! Dataset loading, category classification, demand series and per-year
//! co-occurrence networks.
//!
//! On-disk layout: a directory holding `apis.csv` + `mashups.csv` (CSV) or
//! `apis.jsonl` + `mashups.jsonl` (JSON lines).
//!
//! ```text
//! apis.csv:     api_id,name,category_raw,from,to
//! mashups.csv:  mashup_id,year,member_apis      (member_apis is `;`-separated)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CooccurrenceNetwork;
use crate::llm::{CompletionRequest, Parsed, SchemaHint, TextModel};

/// The four canonical demand categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Infrastructure,
    #[serde(rename = "Lifestyle Services")]
    LifestyleServices,
    #[serde(rename = "Business Management")]
    BusinessManagement,
    #[serde(rename = "Social Entertainment")]
    SocialEntertainment,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Infrastructure,
        Category::LifestyleServices,
        Category::BusinessManagement,
        Category::SocialEntertainment,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Infrastructure => "Infrastructure",
            Category::LifestyleServices => "Lifestyle Services",
            Category::BusinessManagement => "Business Management",
            Category::SocialEntertainment => "Social Entertainment",
        }
    }

    /// Short identifier usable in rule text (`demand[business]`).
    pub fn key(self) -> &'static str {
        match self {
            Category::Infrastructure => "infrastructure",
            Category::LifestyleServices => "lifestyle",
            Category::BusinessManagement => "business",
            Category::SocialEntertainment => "social",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Category::ALL
            .into_iter()
            .find(|c| {
                norm == c.key()
                    || norm
                        == c.label()
                            .chars()
                            .filter(|c| c.is_alphanumeric())
                            .flat_map(char::to_lowercase)
                            .collect::<String>()
            })
            .ok_or_else(|| Error::InvalidParameter(format!("unknown category `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiRecord {
    pub api_id: String,
    pub name: String,
    pub category_raw: String,
    #[serde(rename = "from")]
    pub year_active_from: i32,
    #[serde(rename = "to")]
    pub year_active_to: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MashupRecord {
    pub mashup_id: String,
    pub year: i32,
    pub member_apis: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub apis: Vec<ApiRecord>,
    pub mashups: Vec<MashupRecord>,
}

impl Dataset {
    /// Distinct mashup years in ascending order.
    pub fn years(&self) -> Vec<i32> {
        self.mashups
            .iter()
            .map(|m| m.year)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for a in &self.apis {
            if a.year_active_from > a.year_active_to {
                return Err(Error::InvalidRecord(format!(
                    "api {} active from {} after {}",
                    a.api_id, a.year_active_from, a.year_active_to
                )));
            }
            if !ids.insert(a.api_id.as_str()) {
                return Err(Error::InvalidRecord(format!(
                    "duplicate api_id {}",
                    a.api_id
                )));
            }
        }
        for m in &self.mashups {
            if m.member_apis.is_empty() {
                return Err(Error::InvalidRecord(format!(
                    "mashup {} has no member apis",
                    m.mashup_id
                )));
            }
            if let Some(api) = m.member_apis.iter().find(|a| !ids.contains(a.as_str())) {
                return Err(Error::DanglingReference {
                    mashup: m.mashup_id.clone(),
                    api: api.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn api(&self, id: &str) -> Option<&ApiRecord> {
        self.apis.iter().find(|a| a.api_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Csv,
    JsonLines,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "json-lines" | "jsonl" => Ok(DataFormat::JsonLines),
            other => Err(Error::InvalidParameter(format!("unknown format `{other}`"))),
        }
    }
}

impl DataFormat {
    fn extension(self) -> &'static str {
        match self {
            DataFormat::Csv => "csv",
            DataFormat::JsonLines => "jsonl",
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct MashupRow {
    mashup_id: String,
    year: i32,
    member_apis: String,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let rec: T = rec.map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path, format: DataFormat) -> Result<Dataset> {
    let ext = format.extension();
    let apis_path = dir.join(format!("apis.{ext}"));
    let mashups_path = dir.join(format!("mashups.{ext}"));
    let (apis, mashups) = match format {
        DataFormat::Csv => {
            let apis: Vec<ApiRecord> = read_csv(&apis_path)?;
            let rows: Vec<MashupRow> = read_csv(&mashups_path)?;
            let mashups = rows
                .into_iter()
                .map(|r| MashupRecord {
                    mashup_id: r.mashup_id,
                    year: r.year,
                    member_apis: r
                        .member_apis
                        .split(';')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect(),
                })
                .collect();
            (apis, mashups)
        }
        DataFormat::JsonLines => (read_jsonl(&apis_path)?, read_jsonl(&mashups_path)?),
    };
    let ds = Dataset { apis, mashups };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset in the same layout [`load_dataset`] reads.
pub fn write_dataset(ds: &Dataset, dir: &Path, format: DataFormat) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = format.extension();
    let apis_path = dir.join(format!("apis.{ext}"));
    let mashups_path = dir.join(format!("mashups.{ext}"));
    match format {
        DataFormat::Csv => {
            let csv_err =
                |p: &Path, e: csv::Error| Error::InvalidRecord(format!("{}: {e}", p.display()));
            let mut w = csv::Writer::from_path(&apis_path).map_err(|e| csv_err(&apis_path, e))?;
            for a in &ds.apis {
                w.serialize(a).map_err(|e| csv_err(&apis_path, e))?;
            }
            w.flush().map_err(|e| Error::io(&apis_path, e))?;
            let mut w =
                csv::Writer::from_path(&mashups_path).map_err(|e| csv_err(&mashups_path, e))?;
            for m in &ds.mashups {
                w.serialize(MashupRow {
                    mashup_id: m.mashup_id.clone(),
                    year: m.year,
                    member_apis: m.member_apis.iter().cloned().collect::<Vec<_>>().join(";"),
                })
                .map_err(|e| csv_err(&mashups_path, e))?;
            }
            w.flush().map_err(|e| Error::io(&mashups_path, e))?;
        }
        DataFormat::JsonLines => {
            let write_lines = |path: &Path, lines: Vec<String>| -> Result<()> {
                let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
                for l in lines {
                    writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
                }
                Ok(())
            };
            write_lines(
                &apis_path,
                ds.apis
                    .iter()
                    .map(serde_json::to_string)
                    .collect::<Result<_, _>>()?,
            )?;
            write_lines(
                &mashups_path,
                ds.mashups
                    .iter()
                    .map(serde_json::to_string)
                    .collect::<Result<_, _>>()?,
            )?;
        }
    }
    Ok(())
}

/// Maps raw API metadata onto one of the four categories.
pub trait EmbeddingClassifier {
    /// `Ok(None)` means "no confident label"; the caller falls back.
    fn classify(&self, api: &ApiRecord) -> Result<Option<Category>>;
}

/// Offline keyword table over `category_raw`.
#[derive(Debug, Clone, Default)]
pub struct KeywordClassifier;

const KEYWORDS: &[(Category, &[&str])] = &[
    (
        Category::BusinessManagement,
        &[
            "commerce",
            "payment",
            "enterprise",
            "business",
            "financ",
            "bank",
            "marketing",
            "advertis",
            "crm",
            "sales",
            "shopping",
            "accounting",
            "office",
            "project",
            "retail",
            "invoice",
        ],
    ),
    (
        Category::SocialEntertainment,
        &[
            "social",
            "music",
            "video",
            "game",
            "entertain",
            "photo",
            "media",
            "messag",
            "chat",
            "sport",
            "humor",
            "dating",
            "blog",
            "movie",
        ],
    ),
    (
        Category::LifestyleServices,
        &[
            "travel",
            "food",
            "health",
            "weather",
            "map",
            "education",
            "reference",
            "event",
            "realestate",
            "fitness",
            "medical",
            "transport",
            "news",
            "lifestyle",
            "recipe",
        ],
    ),
    (
        Category::Infrastructure,
        &[
            "tool",
            "storage",
            "cloud",
            "database",
            "search",
            "security",
            "telephon",
            "email",
            "internet",
            "hosting",
            "platform",
            "data",
            "backend",
            "sms",
            "auth",
            "monitor",
            "infrastructure",
            "api",
        ],
    ),
];

impl EmbeddingClassifier for KeywordClassifier {
    fn classify(&self, api: &ApiRecord) -> Result<Option<Category>> {
        let norm: String = api
            .category_raw
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Ok(KEYWORDS
            .iter()
            .find(|(_, kws)| kws.iter().any(|k| norm.contains(k)))
            .map(|(c, _)| *c))
    }
}

/// Classification through a text model returning a category label.
pub struct ModelClassifier<'a> {
    pub model: Option<&'a dyn TextModel>,
}

impl EmbeddingClassifier for ModelClassifier<'_> {
    fn classify(&self, api: &ApiRecord) -> Result<Option<Category>> {
        let model = self
            .model
            .ok_or_else(|| Error::ClassifierUnavailable("no text model configured".into()))?;
        let req = CompletionRequest::new(
            "Classify the web API into exactly one of: Infrastructure, Lifestyle Services, \
             Business Management, Social Entertainment. Answer with the label only.",
            format!("name: {}\ncategory: {}", api.name, api.category_raw),
        )
        .with_schema(SchemaHint::CategoryLabel);
        let resp = model.complete(&req)?;
        Ok(match resp.parsed {
            Some(Parsed::Category(c)) => Some(c),
            _ => None,
        })
    }
}

/// Total map from api id to category, with the ids that needed the fallback.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub map: BTreeMap<String, Category>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallbacks: Vec<String>,
}

impl CategoryMap {
    pub fn get(&self, api: &str) -> Option<Category> {
        self.map.get(api).copied()
    }
}

/// Assigns every API a category; unknown labels fall back to Infrastructure.
pub fn classify_categories(
    apis: &[ApiRecord],
    classifier: &dyn EmbeddingClassifier,
) -> Result<CategoryMap> {
    let mut out = CategoryMap::default();
    for a in apis {
        let c = match classifier.classify(a)? {
            Some(c) => c,
            None => {
                log::warn!(
                    "api {} has unrecognised category {:?}; using Infrastructure",
                    a.api_id,
                    a.category_raw
                );
                out.fallbacks.push(a.api_id.clone());
                Category::Infrastructure
            }
        };
        out.map.insert(a.api_id.clone(), c);
    }
    Ok(out)
}

/// Per-category, per-year invocation counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    pub years: Vec<i32>,
    /// `calls[category.index()][year_index]`
    pub calls: [Vec<f64>; 4],
}

impl DemandSeries {
    pub fn zeros(years: &[i32]) -> Self {
        DemandSeries {
            years: years.to_vec(),
            calls: std::array::from_fn(|_| vec![0.0; years.len()]),
        }
    }

    pub fn year_index(&self, year: i32) -> Result<usize> {
        self.years
            .iter()
            .position(|&y| y == year)
            .ok_or(Error::UnknownYear(year))
    }

    pub fn get(&self, c: Category, year: i32) -> Result<f64> {
        Ok(self.calls[c.index()][self.year_index(year)?])
    }

    /// The four category counts of one year.
    pub fn year_vector(&self, year: i32) -> Result<[f64; 4]> {
        let t = self.year_index(year)?;
        Ok(std::array::from_fn(|c| self.calls[c][t]))
    }

    /// Multiplies every category series by its multiplier.
    pub fn scaled(&self, multipliers: &[f64; 4]) -> Self {
        let mut out = self.clone();
        for (c, m) in multipliers.iter().enumerate() {
            for v in &mut out.calls[c] {
                *v *= m;
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }
}

/// Counts (mashup, member API) pairs per category and year. Members whose
/// category is unknown or for which `keep(api, year)` is false are skipped.
pub fn build_demand_series_filtered(
    mashups: &[MashupRecord],
    categories: &CategoryMap,
    years: &[i32],
    keep: impl Fn(&str, i32) -> bool,
) -> DemandSeries {
    let mut out = DemandSeries::zeros(years);
    for m in mashups {
        let Ok(t) = out.year_index(m.year) else {
            continue;
        };
        for api in &m.member_apis {
            if !keep(api, m.year) {
                continue;
            }
            if let Some(c) = categories.get(api) {
                out.calls[c.index()][t] += 1.0;
            }
        }
    }
    out
}

pub fn build_demand_series(
    mashups: &[MashupRecord],
    categories: &CategoryMap,
    years: &[i32],
) -> DemandSeries {
    build_demand_series_filtered(mashups, categories, years, |_, _| true)
}

/// Number of mashups of `year` that call each API.
pub fn api_calls(mashups: &[MashupRecord], year: i32) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for m in mashups.iter().filter(|m| m.year == year) {
        for a in &m.member_apis {
            *out.entry(a.clone()).or_insert(0.0) += 1.0;
        }
    }
    out
}

/// API co-occurrence network of one year: nodes are APIs in at least one
/// mashup of that year, edge weight = number of mashups containing both.
pub fn build_network(mashups: &[MashupRecord], year: i32) -> CooccurrenceNetwork {
    let mut g = CooccurrenceNetwork::new();
    for m in mashups.iter().filter(|m| m.year == year) {
        let members: Vec<&str> = m.member_apis.iter().map(String::as_str).collect();
        for (i, a) in members.iter().enumerate() {
            g.add_node(*a);
            for b in &members[i + 1..] {
                g.add_weight(a, b, 1.0);
            }
        }
    }
    g
}
