use std::path::{Path, PathBuf};

use ecoscen::env_agent::CredibilityMode;
use ecoscen::ingest::DataFormat;
use ecoscen::pipeline::PipelineConfig;
use ecoscen::planner_agent::CalibrationConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Stub,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Keyword,
    Model,
}

/// Flat run configuration. Relative paths in a config file resolve
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub format: String,
    pub knowledge_dir: Option<PathBuf>,
    pub prompts_file: Option<PathBuf>,
    pub constraints_dir: Option<PathBuf>,
    pub years: Option<Vec<i32>>,
    pub seed: Option<u64>,
    pub llm_mode: LlmMode,
    pub llm_endpoint: String,
    pub llm_model: String,
    pub llm_api_key_env: String,
    pub classifier: ClassifierKind,
    pub alpha: f64,
    pub beta: f64,
    pub niches: Option<usize>,
    pub normalized_ve: bool,
    pub gt_threshold: Option<f64>,
    pub gt_strict: bool,
    pub hss_threshold: f64,
    pub cluster_k: Option<usize>,
    pub cluster_sigma: f64,
    pub feature_dim: usize,
    pub z_cap: f64,
    pub theta_high: f64,
    pub theta_risk: f64,
    pub max_candidates: usize,
    pub social_quantile: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub threshold_step: f64,
    pub optimize_rounds: usize,
    pub draws_per_time: usize,
    pub spread: f64,
    pub n_scenarios: usize,
    pub reduce_to: usize,
    pub bench_runs: usize,
    pub time_unit: String,
    /// Output root; not part of the config hash.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            data_dir: None,
            format: "csv".into(),
            knowledge_dir: None,
            prompts_file: None,
            constraints_dir: None,
            years: None,
            seed: None,
            llm_mode: LlmMode::Stub,
            llm_endpoint: "https://api.openai.com/v1/chat/completions".into(),
            llm_model: "gpt-4o-mini".into(),
            llm_api_key_env: "ECOSCEN_API_KEY".into(),
            classifier: ClassifierKind::Keyword,
            alpha: p.metrics.weights.alpha,
            beta: p.metrics.weights.beta,
            niches: p.metrics.niches,
            normalized_ve: p.metrics.normalized_ve,
            gt_threshold: p.gt_threshold,
            gt_strict: p.gt_strict,
            hss_threshold: p.hss_threshold,
            cluster_k: p.cluster_k,
            cluster_sigma: p.cluster_sigma,
            feature_dim: p.feature_dim,
            z_cap: p.env.z_cap,
            theta_high: p.env.theta_high,
            theta_risk: p.env.theta_risk,
            max_candidates: p.env.max_candidates,
            social_quantile: p.social_quantile,
            eta: p.calibration.eta,
            epsilon: p.calibration.epsilon,
            max_iters: p.calibration.max_iters,
            threshold_step: p.threshold_step,
            optimize_rounds: p.optimize_rounds,
            draws_per_time: p.draws_per_time,
            spread: p.spread,
            n_scenarios: p.n_scenarios,
            reduce_to: p.reduce_to,
            bench_runs: 15,
            time_unit: "s".into(),
            out: None,
        }
    }
}

fn cfg_err(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err("--config", format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| cfg_err("--config", e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data_dir,
            &mut cfg.knowledge_dir,
            &mut cfg.prompts_file,
            &mut cfg.constraints_dir,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn data_dir(&self) -> Result<&Path, CliError> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| cfg_err("data_dir", "missing"))
    }

    pub fn knowledge_dir(&self) -> Result<PathBuf, CliError> {
        Ok(match &self.knowledge_dir {
            Some(p) => p.clone(),
            None => self.data_dir()?.join("knowledge"),
        })
    }

    pub fn prompts_file(&self) -> Result<PathBuf, CliError> {
        Ok(match &self.prompts_file {
            Some(p) => p.clone(),
            None => self.data_dir()?.join("prompts.txt"),
        })
    }

    pub fn constraints_dir(&self) -> Result<PathBuf, CliError> {
        Ok(match &self.constraints_dir {
            Some(p) => p.clone(),
            None => self.data_dir()?.join("constraints"),
        })
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| cfg_err("seed", "missing (pass --seed or set `seed` in the config)"))
    }

    pub fn data_format(&self) -> Result<DataFormat, CliError> {
        self.format
            .parse()
            .map_err(|e: ecoscen::Error| cfg_err("format", e.to_string()))
    }

    /// Checks values and that referenced inputs exist.
    pub fn validate(&self, needs_agents: bool) -> Result<(), CliError> {
        self.seed()?;
        self.data_format()?;
        let dir = self.data_dir()?;
        if !dir.is_dir() {
            return Err(cfg_err(
                "data_dir",
                format!("{} does not exist", dir.display()),
            ));
        }
        if needs_agents {
            for (field, p) in [
                ("knowledge_dir", self.knowledge_dir()?),
                ("constraints_dir", self.constraints_dir()?),
            ] {
                if !p.is_dir() {
                    return Err(cfg_err(field, format!("{} does not exist", p.display())));
                }
            }
            let p = self.prompts_file()?;
            if !p.is_file() {
                return Err(cfg_err(
                    "prompts_file",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let checks: [(&str, bool); 10] = [
            ("alpha", self.alpha >= 0.0),
            ("beta", self.beta >= 0.0 && self.alpha + self.beta > 0.0),
            ("hss_threshold", unit(self.hss_threshold)),
            ("theta_high", self.theta_high >= 0.0),
            ("theta_risk", self.theta_risk >= 0.0),
            (
                "social_quantile",
                self.social_quantile > 0.0 && self.social_quantile < 1.0,
            ),
            ("eta", self.eta > 0.0),
            ("epsilon", self.epsilon > 0.0),
            ("n_scenarios", self.n_scenarios >= 1 && self.reduce_to >= 1),
            ("reduce_to", self.reduce_to <= self.n_scenarios),
        ];
        if let Some((field, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(cfg_err(field, "value out of range"));
        }
        if self.bench_runs == 0 {
            return Err(cfg_err("bench_runs", "must be >= 1"));
        }
        if !matches!(self.time_unit.as_str(), "s" | "ks") {
            return Err(cfg_err("time_unit", "expected `s` or `ks`"));
        }
        if self.feature_dim == 0 {
            return Err(cfg_err("feature_dim", "must be >= 1"));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        let mut p = PipelineConfig {
            seed: self.seed()?,
            ..Default::default()
        };
        p.metrics.weights.alpha = self.alpha;
        p.metrics.weights.beta = self.beta;
        p.metrics.niches = self.niches;
        p.metrics.normalized_ve = self.normalized_ve;
        p.gt_threshold = self.gt_threshold;
        p.gt_strict = self.gt_strict;
        p.hss_threshold = self.hss_threshold;
        p.cluster_k = self.cluster_k;
        p.cluster_sigma = self.cluster_sigma;
        p.feature_dim = self.feature_dim;
        p.env.feature_dim = self.feature_dim;
        p.env.z_cap = self.z_cap;
        p.env.theta_high = self.theta_high;
        p.env.theta_risk = self.theta_risk;
        p.env.max_candidates = self.max_candidates;
        p.env.credibility = match self.llm_mode {
            LlmMode::Stub => CredibilityMode::StubStatistical,
            LlmMode::Remote => CredibilityMode::RemoteJudge,
        };
        p.social_quantile = self.social_quantile;
        p.calibration = CalibrationConfig {
            eta: self.eta,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            ..Default::default()
        };
        p.threshold_step = self.threshold_step;
        p.optimize_rounds = self.optimize_rounds;
        p.draws_per_time = self.draws_per_time;
        p.spread = self.spread;
        p.n_scenarios = self.n_scenarios;
        p.reduce_to = self.reduce_to;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected() {
        let err = toml::from_str::<RunConfig>("sede = 3").unwrap_err();
        assert!(err.to_string().contains("sede"));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "data_dir = \"data\"\nseed = 7\n").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.data_dir.unwrap(), dir.path().join("data"));
        assert_eq!(cfg.seed, Some(7));
    }

    #[test]
    fn missing_seed_names_the_field() {
        let cfg = RunConfig::default();
        match cfg.validate(false) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "seed"),
            other => panic!("{other:?}"),
        }
    }
}
