//! Scenarios, scenario sets, sampling from a sample space, reduction and the
//! expected (historical mean) scenario.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const MASS_TOL: f64 = 1e-9;

/// State of one time step, `L` real components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScenarioVector(pub Vec<f64>);

impl ScenarioVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub vectors: Vec<ScenarioVector>,
    pub probability: f64,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, ScenarioVector::dim)
    }

    fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.vectors.iter().flat_map(|v| v.0.iter().copied())
    }

    pub fn l1_distance(&self, other: &Scenario) -> f64 {
        self.flat()
            .zip(other.flat())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Full,
    Reduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub dims: Vec<String>,
    pub scenarios: Vec<Scenario>,
    pub kind: SetKind,
}

impl ScenarioSet {
    pub fn total_probability(&self) -> f64 {
        self.scenarios.iter().map(|s| s.probability).sum()
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.scenarios.first().map_or(0, Scenario::horizon);
        for s in &self.scenarios {
            if s.horizon() != t || s.horizon() == 0 {
                return Err(Error::ShapeMismatch(
                    "scenario horizons differ or are empty".into(),
                ));
            }
            if s.vectors.iter().any(|v| v.dim() != self.dims.len()) {
                return Err(Error::ShapeMismatch(format!(
                    "scenario vectors must have {} dims",
                    self.dims.len()
                )));
            }
            if !(s.probability > 0.0 && s.probability <= 1.0 + MASS_TOL) {
                return Err(Error::InvalidParameter(format!(
                    "scenario probability {} outside (0, 1]",
                    s.probability
                )));
            }
        }
        let mass = self.total_probability();
        let ok = match self.kind {
            SetKind::Full => (mass - 1.0).abs() <= MASS_TOL,
            SetKind::Reduced => mass <= 1.0 + MASS_TOL,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "{:?} scenario set has total probability {mass}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Index of the most probable scenario (first on ties).
    pub fn most_probable(&self) -> Option<usize> {
        self.scenarios
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
                Some((_, p)) if p >= s.probability => best,
                _ => Some((i, s.probability)),
            })
            .map(|(i, _)| i)
    }

    pub fn to_json(&self) -> ScenarioSetJson {
        ScenarioSetJson {
            t: self.scenarios.first().map_or(0, Scenario::horizon),
            l: self.dims.len(),
            dims: self.dims.clone(),
            kind: self.kind,
            scenarios: self
                .scenarios
                .iter()
                .map(|s| ScenarioJson {
                    p: s.probability,
                    matrix: s.vectors.iter().map(|v| v.0.clone()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(doc: &ScenarioSetJson) -> Result<Self> {
        let set = ScenarioSet {
            dims: doc.dims.clone(),
            kind: doc.kind,
            scenarios: doc
                .scenarios
                .iter()
                .map(|s| Scenario {
                    probability: s.p,
                    vectors: s.matrix.iter().cloned().map(ScenarioVector).collect(),
                })
                .collect(),
        };
        if doc.l != doc.dims.len() || set.scenarios.iter().any(|s| s.horizon() != doc.t) {
            return Err(Error::ShapeMismatch(
                "T/L header disagrees with matrices".into(),
            ));
        }
        set.validate()?;
        Ok(set)
    }
}

/// Wire form: `{T, L, dims, kind, scenarios: [{p, matrix}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSetJson {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub dims: Vec<String>,
    pub kind: SetKind,
    pub scenarios: Vec<ScenarioJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioJson {
    pub p: f64,
    pub matrix: Vec<Vec<f64>>,
}

/// Finite-support value distribution of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDistribution {
    PointMass {
        value: f64,
    },
    /// Discrete values with nonnegative weights.
    Empirical {
        values: Vec<f64>,
        weights: Vec<f64>,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl ValueDistribution {
    pub fn empirical(values: Vec<f64>) -> Self {
        let weights = vec![1.0; values.len()];
        ValueDistribution::Empirical { values, weights }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ValueDistribution::PointMass { value } if value.is_finite() => Ok(()),
            ValueDistribution::Empirical { values, weights }
                if !values.is_empty()
                    && values.len() == weights.len()
                    && weights.iter().all(|w| *w >= 0.0)
                    && weights.iter().sum::<f64>() > 0.0 =>
            {
                Ok(())
            }
            ValueDistribution::Uniform { lo, hi }
                if lo <= hi && lo.is_finite() && hi.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::InvalidParameter(format!(
                "invalid distribution {other:?}"
            ))),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ValueDistribution::PointMass { value } => *value,
            ValueDistribution::Empirical { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut x = rng.gen::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if x < *w {
                        return *v;
                    }
                    x -= w;
                }
                *values.last().expect("nonempty")
            }
            ValueDistribution::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.gen_range(*lo..=*hi)
                }
            }
        }
    }

    /// Clips the support to `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        match self {
            ValueDistribution::PointMass { value } => ValueDistribution::PointMass {
                value: value.clamp(lo, hi),
            },
            ValueDistribution::Empirical { values, weights } => ValueDistribution::Empirical {
                values: values.iter().map(|v| v.clamp(lo, hi)).collect(),
                weights: weights.clone(),
            },
            ValueDistribution::Uniform { lo: a, hi: b } => ValueDistribution::Uniform {
                lo: a.clamp(lo, hi),
                hi: b.clamp(lo, hi),
            },
        }
    }
}

/// Distributions of one named dimension: either one stationary distribution
/// or one per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSpace {
    pub name: String,
    pub per_time: Vec<ValueDistribution>,
}

impl DimensionSpace {
    fn at(&self, t: usize) -> &ValueDistribution {
        if self.per_time.len() == 1 {
            &self.per_time[0]
        } else {
            &self.per_time[t]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpace {
    pub dims: Vec<DimensionSpace>,
}

impl SampleSpace {
    pub fn dim_names(&self) -> Vec<String> {
        self.dims.iter().map(|d| d.name.clone()).collect()
    }
}

/// Draws `n` scenarios of horizon `t`, each component independently from its
/// distribution. Scenario `k` uses its own derived RNG stream, so results do
/// not depend on generation order.
pub fn sample_scenarios(
    space: &SampleSpace,
    expected_dims: &[String],
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    if n == 0 || horizon == 0 {
        return Err(Error::InvalidParameter("n and T must be >= 1".into()));
    }
    for name in expected_dims {
        if !space.dims.iter().any(|d| &d.name == name) {
            return Err(Error::InvalidParameter(format!(
                "sample space has no distribution for dimension `{name}`"
            )));
        }
    }
    let ordered: Vec<&DimensionSpace> = expected_dims
        .iter()
        .map(|name| {
            space
                .dims
                .iter()
                .find(|d| &d.name == name)
                .expect("checked")
        })
        .collect();
    for d in &ordered {
        if d.per_time.len() != 1 && d.per_time.len() != horizon {
            return Err(Error::ShapeMismatch(format!(
                "dimension `{}` has {} per-time distributions for T = {horizon}",
                d.name,
                d.per_time.len()
            )));
        }
        for dist in &d.per_time {
            dist.validate()?;
        }
    }
    let p = 1.0 / n as f64;
    let scenarios = (0..n)
        .map(|k| {
            let mut rng = rng_for(seed, &["scenario", &k.to_string()]);
            let vectors = (0..horizon)
                .map(|t| ScenarioVector(ordered.iter().map(|d| d.at(t).sample(&mut rng)).collect()))
                .collect();
            Scenario {
                vectors,
                probability: p,
            }
        })
        .collect();
    Ok(ScenarioSet {
        dims: expected_dims.to_vec(),
        scenarios,
        kind: SetKind::Full,
    })
}

/// Greedy nearest-pair reduction under L1 distance.
///
/// While more than `target` scenarios remain, the closest pair (lowest
/// indices on ties) is merged: the less probable member (the later one on
/// equal probability) is absorbed by the other, which gains its probability.
pub fn reduce_scenarios(set: &ScenarioSet, target: usize) -> Result<ScenarioSet> {
    if target == 0 || target > set.len() {
        return Err(Error::InvalidParameter(format!(
            "target count {target} outside 1..={}",
            set.len()
        )));
    }
    let mut pool: Vec<Scenario> = set.scenarios.clone();
    while pool.len() > target {
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..pool.len() {
            for j in i + 1..pool.len() {
                let d = pool[i].l1_distance(&pool[j]);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (_, i, j) = best;
        let (keep, drop) = if pool[j].probability > pool[i].probability {
            (j, i)
        } else {
            (i, j)
        };
        let p = pool[drop].probability;
        pool[keep].probability += p;
        pool.remove(drop);
    }
    Ok(ScenarioSet {
        dims: set.dims.clone(),
        scenarios: pool,
        kind: SetKind::Reduced,
    })
}

/// Drops scenarios with probability below `min_probability`. The remaining
/// mass is not renormalised.
pub fn truncate_scenarios(set: &ScenarioSet, min_probability: f64) -> ScenarioSet {
    ScenarioSet {
        dims: set.dims.clone(),
        scenarios: set
            .scenarios
            .iter()
            .filter(|s| s.probability >= min_probability)
            .cloned()
            .collect(),
        kind: SetKind::Reduced,
    }
}

/// Per-time, per-dimension arithmetic mean of historical scenarios.
pub fn expected_scenario(history: &[Scenario]) -> Result<Vec<ScenarioVector>> {
    let first = history
        .first()
        .ok_or_else(|| Error::Degenerate("empty scenario history".into()))?;
    let (t, l) = (first.horizon(), first.dim());
    if history
        .iter()
        .any(|s| s.horizon() != t || s.vectors.iter().any(|v| v.dim() != l))
    {
        return Err(Error::ShapeMismatch(
            "history scenarios differ in T or L".into(),
        ));
    }
    let n = history.len() as f64;
    Ok((0..t)
        .map(|ti| {
            ScenarioVector(
                (0..l)
                    .map(|li| history.iter().map(|s| s.vectors[ti].0[li]).sum::<f64>() / n)
                    .collect(),
            )
        })
        .collect())
}
