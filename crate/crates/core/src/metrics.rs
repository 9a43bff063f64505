//! Scenario-vector scoring: environment indices, individual effectiveness,
//! niche binning, value entropy and the deviation functional.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::cosine;
use crate::error::{Error, Result};
use crate::graph::{CooccurrenceNetwork, StructuralQuintuple};
use crate::ingest::DemandSeries;
use crate::scenario::{Scenario, ScenarioVector};

/// Column names of the 8-dimensional scenario vector, in storage order.
pub const DIM_NAMES: [&str; 8] = [
    "SA",
    "Similarity",
    "NF",
    "WF",
    "WE",
    "LCC_S",
    "Reachability",
    "VE",
];

/// One time step of the scenario vector with named components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub sa: f64,
    pub similarity: f64,
    pub nf: f64,
    pub wf: f64,
    pub we: f64,
    pub lcc_s: f64,
    pub reachability: f64,
    pub ve: f64,
}

impl IndexRow {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.sa,
            self.similarity,
            self.nf,
            self.wf,
            self.we,
            self.lcc_s,
            self.reachability,
            self.ve,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match *v {
            [sa, similarity, nf, wf, we, lcc_s, reachability, ve] => Ok(IndexRow {
                sa,
                similarity,
                nf,
                wf,
                we,
                lcc_s,
                reachability,
                ve,
            }),
            _ => Err(Error::ShapeMismatch(format!(
                "scenario vector has {} dims, expected 8",
                v.len()
            ))),
        }
    }

    pub fn to_vector(&self) -> ScenarioVector {
        ScenarioVector(self.to_array().to_vec())
    }

    /// Name/value pairs, e.g. for rule evaluation.
    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> {
        DIM_NAMES.into_iter().zip(self.to_array())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentPair {
    pub sum_activity_index: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EffectivenessWeights {
    fn default() -> Self {
        EffectivenessWeights {
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

impl EffectivenessWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || !(self.alpha + self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "effectiveness weights must be >= 0 with positive sum, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Total invocations of a year across the four categories.
pub fn sum_activity(demand: &DemandSeries, year: i32) -> Result<f64> {
    Ok(demand.year_vector(year)?.iter().sum())
}

/// Least-squares linear trend of yearly sum activity, clamped at zero.
pub fn sa_trend(demand: &DemandSeries) -> Vec<f64> {
    let sa: Vec<f64> = (0..demand.len())
        .map(|t| demand.calls.iter().map(|s| s[t]).sum())
        .collect();
    let n = sa.len() as f64;
    if sa.len() < 2 {
        return sa;
    }
    let xs: Vec<f64> = demand.years.iter().map(|&y| f64::from(y)).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = sa.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&sa).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    xs.iter()
        .map(|x| (my + slope * (x - mx)).max(0.0))
        .collect()
}

/// `min(a, b) / max(a, b)`, 1 when both are zero.
pub fn sa_index(sa_generated: f64, sa_reference: f64) -> f64 {
    let hi = sa_generated.max(sa_reference);
    if hi <= 0.0 {
        1.0
    } else {
        sa_generated.min(sa_reference).max(0.0) / hi
    }
}

/// Cosine similarity of the two years' category-share vectors.
pub fn demand_similarity(
    generated: &DemandSeries,
    reference: &DemandSeries,
    year: i32,
) -> Result<f64> {
    let a = generated.year_vector(year)?;
    let b = reference.year_vector(year)?;
    let shares = |v: [f64; 4], which: &str| -> Result<Vec<f64>> {
        let total: f64 = v.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate(format!(
                "{which} demand for {year} is all zero"
            )));
        }
        Ok(v.iter().map(|x| x / total).collect())
    };
    Ok(cosine(&shares(a, "generated")?, &shares(b, "reference")?))
}

/// `alpha * ln(C/Cmax + 1) + beta * ln(D/Dmax + 1)`.
pub fn individual_effectiveness(
    calls: f64,
    calls_max: f64,
    degree: f64,
    degree_max: f64,
    w: EffectivenessWeights,
) -> Result<f64> {
    if !(calls_max > 0.0) || !(degree_max > 0.0) {
        return Err(Error::Degenerate(
            "effectiveness maxima must be positive".into(),
        ));
    }
    Ok(w.alpha * (calls / calls_max).ln_1p() + w.beta * (degree / degree_max).ln_1p())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NicheHistogram {
    pub counts: Vec<usize>,
    pub total: usize,
}

impl NicheHistogram {
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let total = counts.iter().sum();
        NicheHistogram { counts, total }
    }

    pub fn m(&self) -> usize {
        self.counts.len()
    }
}

pub fn default_niche_count(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(1)
}

/// Equal-width binning of utilities over `[min, max]` into `m` niches
/// (default `round(sqrt(N))`). Constant utilities land in a single niche.
pub fn bin_niches(utilities: &[f64], m: Option<usize>) -> Result<NicheHistogram> {
    if utilities.is_empty() {
        return Err(Error::Degenerate("no utilities to bin".into()));
    }
    if utilities.iter().any(|u| !u.is_finite()) {
        return Err(Error::InvalidParameter("utilities must be finite".into()));
    }
    let m = m
        .unwrap_or_else(|| default_niche_count(utilities.len()))
        .max(1);
    let lo = utilities.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; m];
    let width = (hi - lo) / m as f64;
    for &u in utilities {
        let j = if width > 0.0 {
            (((u - lo) / width).floor() as usize).min(m - 1)
        } else {
            0
        };
        counts[j] += 1;
    }
    Ok(NicheHistogram::from_counts(counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEntropy {
    /// `-sum p_j log2 p_j`
    pub current: f64,
    /// `log2 sqrt(N_total)`
    pub optimal: f64,
    /// `e^(1 - |current - optimal| / optimal)`
    pub raw: f64,
    /// `raw / e`
    pub normalized: f64,
}

pub fn value_entropy_detail(h: &NicheHistogram) -> Result<ValueEntropy> {
    if h.total < 2 {
        return Err(Error::Degenerate(format!(
            "value entropy needs at least 2 individuals, got {}",
            h.total
        )));
    }
    let n = h.total as f64;
    let current: f64 = h
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    let optimal = n.sqrt().log2();
    let raw = (1.0 - (current - optimal).abs() / optimal).exp();
    Ok(ValueEntropy {
        current,
        optimal,
        raw,
        normalized: raw / std::f64::consts::E,
    })
}

pub fn value_entropy(h: &NicheHistogram, normalized: bool) -> Result<f64> {
    let v = value_entropy_detail(h)?;
    Ok(if normalized { v.normalized } else { v.raw })
}

/// Normalised L1 distance between a generated trajectory and the expected
/// one: `sum |tau - Es| / sum |Es|` as a fraction.
pub fn deviation_vectors(generated: &[ScenarioVector], expected: &[ScenarioVector]) -> Result<f64> {
    if generated.len() != expected.len() {
        return Err(Error::ShapeMismatch(format!(
            "horizon {} vs {}",
            generated.len(),
            expected.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (g, e) in generated.iter().zip(expected) {
        if g.0.len() != e.0.len() {
            return Err(Error::ShapeMismatch(format!(
                "dimension {} vs {}",
                g.0.len(),
                e.0.len()
            )));
        }
        num +=
            g.0.iter()
                .zip(&e.0)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        den += e.0.iter().map(|b| b.abs()).sum::<f64>();
    }
    if !(den > 0.0) {
        return Err(Error::Degenerate(
            "expected scenario is identically zero".into(),
        ));
    }
    Ok(num / den)
}

pub fn deviation(generated: &Scenario, expected: &[ScenarioVector]) -> Result<f64> {
    deviation_vectors(&generated.vectors, expected)
}

/// Inputs for assembling one year's scenario vector.
#[derive(Debug, Clone, Copy)]
pub struct VectorInputs<'a> {
    pub demand_gen: &'a DemandSeries,
    pub demand_ref: &'a DemandSeries,
    pub sub: &'a CooccurrenceNetwork,
    pub orig: &'a CooccurrenceNetwork,
    /// Per-API call counts of the generated scenario for this year.
    pub calls: &'a BTreeMap<String, f64>,
    pub weights: EffectivenessWeights,
    pub year: i32,
    pub niches: Option<usize>,
    pub normalized_ve: bool,
}

/// Individual effectiveness of every node of `sub`. A zero maximum removes
/// that term (the ratio is taken as 0).
pub fn node_utilities(
    sub: &CooccurrenceNetwork,
    calls: &BTreeMap<String, f64>,
    w: EffectivenessWeights,
) -> Vec<f64> {
    let rows: Vec<(f64, f64)> = sub
        .nodes()
        .map(|id| {
            (
                calls.get(id).copied().unwrap_or(0.0),
                sub.neighbors(id).map(|(_, w)| w).sum(),
            )
        })
        .collect();
    let c_max = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let d_max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let ratio = |x: f64, m: f64| if m > 0.0 { x / m } else { 0.0 };
    rows.into_iter()
        .map(|(c, d)| w.alpha * ratio(c, c_max).ln_1p() + w.beta * ratio(d, d_max).ln_1p())
        .collect()
}

pub fn environment_pair(
    demand_gen: &DemandSeries,
    demand_ref: &DemandSeries,
    year: i32,
) -> Result<EnvironmentPair> {
    let t = demand_ref.year_index(year)?;
    let trend = sa_trend(demand_ref);
    Ok(EnvironmentPair {
        sum_activity_index: sa_index(sum_activity(demand_gen, year)?, trend[t]),
        similarity: demand_similarity(demand_gen, demand_ref, year)?,
    })
}

/// Assembles `(SA, Similarity, NF, WF, WE, LCC_S, Reachability, VE)` for a year.
pub fn scenario_vector(inp: &VectorInputs<'_>) -> Result<IndexRow> {
    inp.weights.validate()?;
    let env = environment_pair(inp.demand_gen, inp.demand_ref, inp.year)?;
    let q = StructuralQuintuple::compute(inp.sub, inp.orig)?;
    let utilities = node_utilities(inp.sub, inp.calls, inp.weights);
    // fewer than two individuals: no population to spread over niches
    let ve = if utilities.len() < 2 {
        0.0
    } else {
        value_entropy(&bin_niches(&utilities, inp.niches)?, inp.normalized_ve)?
    };
    Ok(IndexRow {
        sa: env.sum_activity_index,
        similarity: env.similarity,
        nf: q.nf,
        wf: q.wf,
        we: q.we,
        lcc_s: q.lcc_s,
        reachability: q.reachability,
        ve,
    })
}
