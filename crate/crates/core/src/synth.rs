//! Seeded synthetic API ecosystem plus the text assets (knowledge docs,
//! adversarial prompts, constraint docs) used by the bundled fixture.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env_agent::KnowledgeDoc;
use crate::ingest::{ApiRecord, Category, Dataset, MashupRecord};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_apis: usize,
    pub n_mashups: usize,
    pub first_year: i32,
    pub n_years: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_apis: 200,
            n_mashups: 500,
            first_year: 2010,
            n_years: 5,
            seed: 20_240_601,
        }
    }
}

const RAW_LABELS: [(Category, &[&str]); 4] = [
    (
        Category::Infrastructure,
        &[
            "Cloud Storage",
            "Database",
            "Search",
            "Security",
            "Email",
            "Telephony",
        ],
    ),
    (
        Category::LifestyleServices,
        &[
            "Travel",
            "Food",
            "Weather",
            "Mapping",
            "Health",
            "Education",
        ],
    ),
    (
        Category::BusinessManagement,
        &[
            "Payments",
            "eCommerce",
            "Enterprise",
            "Marketing",
            "Financial",
        ],
    ),
    (
        Category::SocialEntertainment,
        &["Social", "Music", "Video", "Games", "Photos", "Messaging"],
    ),
];

/// Yearly popularity drift per category (growth factor per year).
const DRIFT: [f64; 4] = [1.0, 1.05, 0.95, 1.2];

/// Zipf-like popularity, mashup sizes 2..=5, category drift over years.
pub fn synth_dataset(cfg: &SynthConfig) -> Dataset {
    let mut rng = rng_for(cfg.seed, &["synth", "apis"]);
    let last_year = cfg.first_year + cfg.n_years as i32 - 1;
    let mut apis = Vec::with_capacity(cfg.n_apis);
    let mut meta = Vec::with_capacity(cfg.n_apis);
    for i in 0..cfg.n_apis {
        let (cat, labels) = RAW_LABELS[i % 4];
        let label = labels.choose(&mut rng).expect("nonempty");
        let from = if rng.gen_bool(0.7) {
            cfg.first_year
        } else {
            rng.gen_range(cfg.first_year..=last_year)
        };
        let to = if rng.gen_bool(0.85) {
            last_year
        } else {
            rng.gen_range(from..=last_year)
        };
        apis.push(ApiRecord {
            api_id: format!("api{i:04}"),
            name: format!("{label} API {i}"),
            category_raw: label.to_string(),
            year_active_from: from,
            year_active_to: to,
        });
        let rank = (i / 4 + 1) as f64;
        meta.push((cat, rank.powf(-1.1)));
    }

    let mut rng = rng_for(cfg.seed, &["synth", "mashups"]);
    let per_year = cfg.n_mashups / cfg.n_years.max(1);
    let mut mashups = Vec::with_capacity(cfg.n_mashups);
    for k in 0..cfg.n_mashups {
        let t = (k / per_year.max(1)).min(cfg.n_years - 1);
        let year = cfg.first_year + t as i32;
        let pool: Vec<(usize, f64)> = apis
            .iter()
            .enumerate()
            .filter(|(_, a)| a.year_active_from <= year && year <= a.year_active_to)
            .map(|(i, _)| {
                let (cat, pop) = meta[i];
                (i, pop * DRIFT[cat.index()].powi(t as i32))
            })
            .collect();
        let size = *[2usize, 2, 3, 3, 4, 5].choose(&mut rng).expect("nonempty");
        let mut members = BTreeSet::new();
        while members.len() < size.min(pool.len()) {
            let &(i, _) = pool
                .choose_weighted(&mut rng, |p| p.1)
                .expect("positive weights");
            members.insert(apis[i].api_id.clone());
        }
        mashups.push(MashupRecord {
            mashup_id: format!("m{k:04}"),
            year,
            member_apis: members,
        });
    }
    Dataset { apis, mashups }
}

pub fn knowledge_docs() -> Vec<KnowledgeDoc> {
    [
        (
            "payments-regulation.txt",
            "A new cross-border payments directive raised compliance costs for small merchants.\n\
             payment regulation tightening: Business Management ×[0.5,0.8]\n\
             Analysts expect integrations to pause until certification completes.",
        ),
        (
            "cloud-outage.txt",
            "A multi-region storage provider reported a prolonged outage.\n\
             cloud outage: Infrastructure ×[0.3,0.6]\n\
             Dependent services saw cascading failures for several weeks.",
        ),
        (
            "short-video-boom.txt",
            "Short-form video apps drew a wave of new developers.\n\
             short video boom: Social Entertainment ×[1.5,2.5]\n\
             Media and messaging APIs were the main beneficiaries.",
        ),
    ]
    .into_iter()
    .map(|(id, text)| KnowledgeDoc {
        id: id.into(),
        text: text.into(),
    })
    .collect()
}

pub fn adversarial_prompts() -> &'static str {
    "# one prompt per line; optional [onset=N persist=M|full] prefix\n\
     [onset=1 persist=full] Assume the shock lands early and never recovers.\n\
     [onset=3 persist=1] Assume a one-year spike late in the horizon.\n\
     Let the shock begin whenever it is most damaging.\n"
}

pub fn constraint_docs() -> Vec<KnowledgeDoc> {
    [
        (
            "platform-policy.txt",
            "The platform operator reviews ecosystem health every year. \
             Reachability must stay at least 0.05. \
             NF should remain at least 0.05.",
        ),
        (
            "demand-guardrails.txt",
            "Capacity planning assumes bounded growth. \
             Demand for Social Entertainment must not exceed 100000.",
        ),
    ]
    .into_iter()
    .map(|(id, text)| KnowledgeDoc {
        id: id.into(),
        text: text.into(),
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{classify_categories, KeywordClassifier};

    #[test]
    fn deterministic_and_valid() {
        let cfg = SynthConfig::default();
        let a = synth_dataset(&cfg);
        assert_eq!(a, synth_dataset(&cfg));
        a.validate().unwrap();
        assert_eq!(a.apis.len(), 200);
        assert_eq!(a.mashups.len(), 500);
        assert_eq!(a.years(), vec![2010, 2011, 2012, 2013, 2014]);
        for m in &a.mashups {
            for id in &m.member_apis {
                let api = a.api(id).unwrap();
                assert!(api.year_active_from <= m.year && m.year <= api.year_active_to);
            }
        }
    }

    #[test]
    fn raw_labels_classify_without_fallback() {
        let ds = synth_dataset(&SynthConfig::default());
        let cm = classify_categories(&ds.apis, &KeywordClassifier).unwrap();
        assert!(cm.fallbacks.is_empty());
        for (i, a) in ds.apis.iter().enumerate() {
            assert_eq!(
                cm.get(&a.api_id),
                Some(RAW_LABELS[i % 4].0),
                "{}",
                a.category_raw
            );
        }
    }
}
