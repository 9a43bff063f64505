//! Pluggable text-model interface shared by the three agents.
//!
//! Two backends: [`StubModel`], a pure function of `(seed, request)` used for
//! offline and reproducible runs, and `RemoteModel` (feature `remote`), a
//! chat-completion client with bounded retries and an in-flight limit.

use std::sync::{Condvar, Mutex};

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{Category, EmbeddingClassifier, KeywordClassifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaHint {
    FeatureVector { dim: usize },
    RuleText,
    Score,
    CategoryLabel,
}

impl SchemaHint {
    fn tag(self) -> String {
        match self {
            SchemaHint::FeatureVector { dim } => format!("feature-vector:{dim}"),
            SchemaHint::RuleText => "rule-text".into(),
            SchemaHint::Score => "score".into(),
            SchemaHint::CategoryLabel => "category-label".into(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            SchemaHint::FeatureVector { .. } => "feature vector",
            SchemaHint::RuleText => "rule text",
            SchemaHint::Score => "score",
            SchemaHint::CategoryLabel => "category label",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub schema_hint: Option<SchemaHint>,
}

impl CompletionRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        CompletionRequest {
            system_prompt: system.into(),
            user_prompt: user.into(),
            temperature: 0.0,
            max_tokens: 512,
            schema_hint: None,
        }
    }

    pub fn with_schema(mut self, hint: SchemaHint) -> Self {
        self.schema_hint = Some(hint);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(Error::InvalidParameter("prompts must be nonempty".into()));
        }
        if !(self.temperature >= 0.0) || self.max_tokens == 0 {
            return Err(Error::InvalidParameter(
                "temperature must be >= 0 and max_tokens positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Features(Vec<f64>),
    Rule(String),
    Score(f64),
    Category(Category),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Remote,
    Stub,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    /// Present iff the text parsed under the request's schema hint.
    pub parsed: Option<Parsed>,
    pub provenance: Provenance,
    pub latency_ms: u64,
}

pub trait TextModel: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse>;
    fn provenance(&self) -> Provenance;
}

fn number_re() -> &'static Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("regex"))
}

/// Parses model text under a schema hint. Shared by every backend.
pub fn parse_payload(hint: SchemaHint, text: &str) -> Option<Parsed> {
    match hint {
        SchemaHint::Score => number_re()
            .find(text)
            .and_then(|m| m.as_str().parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .map(|v| Parsed::Score(v.clamp(0.0, 1.0))),
        SchemaHint::FeatureVector { dim } => {
            let vals: Vec<f64> = number_re()
                .find_iter(text)
                .filter_map(|m| m.as_str().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .take(dim)
                .map(|v| v.clamp(0.0, 1.0))
                .collect();
            (dim > 0 && vals.len() == dim).then_some(Parsed::Features(vals))
        }
        SchemaHint::RuleText => {
            let t = text.trim();
            (!t.is_empty()).then(|| Parsed::Rule(t.to_string()))
        }
        SchemaHint::CategoryLabel => {
            let t = text.trim();
            t.parse::<Category>()
                .ok()
                .or_else(|| Category::ALL.into_iter().find(|c| t.contains(c.label())))
                .map(Parsed::Category)
        }
    }
}

/// Deterministic offline model.
///
/// Output is derived from a SHA-256 of `(seed, system, user, schema)`, so the
/// same request always yields the same schema-valid answer. Rule-text
/// requests are answered by transcribing the user prompt.
#[derive(Debug, Clone)]
pub struct StubModel {
    pub seed: u64,
}

impl StubModel {
    pub fn new(seed: u64) -> Self {
        StubModel { seed }
    }

    fn digest(&self, req: &CompletionRequest) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for part in [
            req.system_prompt.as_str(),
            req.user_prompt.as_str(),
            &req.schema_hint.map(SchemaHint::tag).unwrap_or_default(),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.finalize().into()
    }
}

impl TextModel for StubModel {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        req.validate()?;
        let digest = self.digest(req);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::from_seed(digest);
        let text = match req.schema_hint {
            None => format!(
                "stub:{}",
                digest[..8]
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect::<String>()
            ),
            Some(SchemaHint::Score) => format!("{:.6}", rng.gen::<f64>()),
            Some(SchemaHint::FeatureVector { dim }) => (0..dim)
                .map(|_| format!("{:.6}", rng.gen::<f64>()))
                .collect::<Vec<_>>()
                .join(", "),
            Some(SchemaHint::RuleText) => req.user_prompt.trim().to_string(),
            Some(SchemaHint::CategoryLabel) => {
                let probe = crate::ingest::ApiRecord {
                    api_id: String::new(),
                    name: String::new(),
                    category_raw: req.user_prompt.clone(),
                    year_active_from: 0,
                    year_active_to: 0,
                };
                let c = KeywordClassifier
                    .classify(&probe)?
                    .unwrap_or(Category::ALL[digest[0] as usize % 4]);
                c.label().to_string()
            }
        };
        let parsed = req.schema_hint.and_then(|h| parse_payload(h, &text));
        Ok(CompletionResponse {
            text,
            parsed,
            provenance: Provenance::Stub,
            latency_ms: 0,
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance::Stub
    }
}

/// Counting semaphore bounding concurrent remote requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    count: Mutex<usize>,
    cv: Condvar,
}

pub struct InFlightGuard<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        InFlightLimiter {
            max: max.max(1),
            count: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.count.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.cv.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        InFlightGuard(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.count.lock().expect("limiter poisoned")
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().expect("limiter poisoned");
        *n -= 1;
        self.0.cv.notify_one();
    }
}

#[cfg(feature = "remote")]
pub use remote::{RemoteConfig, RemoteModel};

#[cfg(feature = "remote")]
mod remote {
    use std::time::{Duration, Instant};

    use serde_json::json;

    use super::*;

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct RemoteConfig {
        pub endpoint: String,
        pub model: String,
        #[serde(skip_serializing)]
        pub api_key: String,
        pub timeout_secs: f64,
        pub max_in_flight: usize,
        pub attempts: u32,
        pub backoff_base_secs: f64,
    }

    impl RemoteConfig {
        /// Reads the key from `key_env`.
        pub fn from_env(endpoint: &str, model: &str, key_env: &str) -> Result<Self> {
            let api_key = std::env::var(key_env)
                .map_err(|_| Error::Model(format!("environment variable {key_env} not set")))?;
            Ok(RemoteConfig {
                endpoint: endpoint.into(),
                model: model.into(),
                api_key,
                ..Default::default()
            })
        }
    }

    impl Default for RemoteConfig {
        fn default() -> Self {
            RemoteConfig {
                endpoint: "https://api.openai.com/v1/chat/completions".into(),
                model: "gpt-4o-mini".into(),
                api_key: String::new(),
                timeout_secs: 60.0,
                max_in_flight: 4,
                attempts: 3,
                backoff_base_secs: 0.5,
            }
        }
    }

    /// Chat-completion client.
    pub struct RemoteModel {
        cfg: RemoteConfig,
        agent: ureq::Agent,
        limiter: InFlightLimiter,
    }

    impl RemoteModel {
        pub fn new(cfg: RemoteConfig) -> Self {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
                .http_status_as_error(false)
                .build()
                .into();
            let limiter = InFlightLimiter::new(cfg.max_in_flight);
            RemoteModel {
                cfg,
                agent,
                limiter,
            }
        }

        fn round_trip(&self, body: &str) -> std::result::Result<String, (bool, Error)> {
            let mut resp = self
                .agent
                .post(&self.cfg.endpoint)
                .header("Authorization", &format!("Bearer {}", self.cfg.api_key))
                .header("Content-Type", "application/json")
                .send(body)
                .map_err(|e| (true, Error::Model(e.to_string())))?;
            let status = resp.status().as_u16();
            if status == 401 || status == 403 {
                return Err((false, Error::ModelAuth(status)));
            }
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| (true, Error::Model(e.to_string())))?;
            if !(200..300).contains(&status) {
                return Err((
                    status >= 500 || status == 429,
                    Error::Model(format!("status {status}: {text}")),
                ));
            }
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| (false, Error::Model(e.to_string())))?;
            v["choices"][0]["message"]["content"]
                .as_str()
                .map(String::from)
                .ok_or_else(|| (false, Error::Model(format!("no message content in {text}"))))
        }
    }

    impl TextModel for RemoteModel {
        fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
            req.validate()?;
            let body = json!({
                "model": self.cfg.model,
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
                "messages": [
                    {"role": "system", "content": req.system_prompt},
                    {"role": "user", "content": req.user_prompt},
                ],
            })
            .to_string();
            let _slot = self.limiter.acquire();
            let start = Instant::now();
            let mut last = Error::Model("no attempt made".into());
            for attempt in 0..self.cfg.attempts.max(1) {
                if attempt > 0 {
                    let wait = self.cfg.backoff_base_secs * 2f64.powi(attempt as i32 - 1);
                    std::thread::sleep(Duration::from_secs_f64(wait));
                }
                match self.round_trip(&body) {
                    Ok(text) => {
                        let parsed = req.schema_hint.and_then(|h| parse_payload(h, &text));
                        return Ok(CompletionResponse {
                            text,
                            parsed,
                            provenance: Provenance::Remote,
                            latency_ms: start.elapsed().as_millis() as u64,
                        });
                    }
                    Err((retryable, e)) => {
                        log::warn!("model request attempt {} failed: {e}", attempt + 1);
                        if !retryable {
                            return Err(e);
                        }
                        last = e;
                    }
                }
            }
            Err(last)
        }

        fn provenance(&self) -> Provenance {
            Provenance::Remote
        }
    }
}

/// Requests a `dim`-length unit-interval feature vector describing `text`.
/// One retry on unparseable output.
pub fn extract_features(model: &dyn TextModel, text: &str, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::InvalidParameter(
            "feature dimension must be >= 1".into(),
        ));
    }
    let req = CompletionRequest::new(
        format!(
            "Describe the entity below as exactly {dim} comma-separated numbers in [0,1], \
             one per latent semantic trait. Output numbers only."
        ),
        text,
    )
    .with_schema(SchemaHint::FeatureVector { dim });
    let mut last_text = String::new();
    for _ in 0..2 {
        let resp = model.complete(&req)?;
        if let Some(Parsed::Features(v)) = resp.parsed {
            return Ok(v);
        }
        last_text = resp.text;
    }
    Err(Error::SchemaParse {
        expected: SchemaHint::FeatureVector { dim }.name(),
        text: last_text,
    })
}

/// Requests a score in [0,1].
pub fn request_score(model: &dyn TextModel, system: &str, user: &str) -> Result<f64> {
    let req = CompletionRequest::new(system, user).with_schema(SchemaHint::Score);
    match model.complete(&req)? {
        CompletionResponse {
            parsed: Some(Parsed::Score(s)),
            ..
        } => Ok(s),
        r => Err(Error::SchemaParse {
            expected: SchemaHint::Score.name(),
            text: r.text,
        }),
    }
}

/// Requests rule/grammar text.
pub fn request_rule_text(model: &dyn TextModel, system: &str, user: &str) -> Result<String> {
    let req = CompletionRequest::new(system, user).with_schema(SchemaHint::RuleText);
    match model.complete(&req)? {
        CompletionResponse {
            parsed: Some(Parsed::Rule(s)),
            ..
        } => Ok(s),
        r => Err(Error::SchemaParse {
            expected: SchemaHint::RuleText.name(),
            text: r.text,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_score_is_deterministic() {
        let m = StubModel::new(42);
        let a = request_score(&m, "judge", "scenario 1").unwrap();
        let b = request_score(&m, "judge", "scenario 1").unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
        let other = request_score(&StubModel::new(43), "judge", "scenario 1").unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn stub_feature_vector_contract() {
        let m = StubModel::new(1);
        let v = extract_features(&m, "api: Maps", 8).unwrap();
        assert_eq!(v.len(), 8);
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(v, extract_features(&m, "api: Maps", 8).unwrap());
        assert_eq!(extract_features(&m, "x", 1).unwrap().len(), 1);
        assert!(extract_features(&m, "x", 0).is_err());
    }

    #[test]
    fn stub_features_differ_across_texts() {
        let m = StubModel::new(9);
        let corpus: Vec<Vec<f64>> = (0..200)
            .map(|i| extract_features(&m, &format!("entity {i}"), 4).unwrap())
            .collect();
        for i in 0..corpus.len() {
            for j in i + 1..corpus.len() {
                assert_ne!(corpus[i], corpus[j], "collision between {i} and {j}");
            }
        }
    }

    #[test]
    fn stub_category_label_uses_keywords() {
        let m = StubModel::new(3);
        let req = CompletionRequest::new("classify", "category: eCommerce")
            .with_schema(SchemaHint::CategoryLabel);
        let r = m.complete(&req).unwrap();
        assert_eq!(
            r.parsed,
            Some(Parsed::Category(Category::BusinessManagement))
        );
        assert_eq!(r.provenance, Provenance::Stub);
    }

    #[test]
    fn empty_prompt_is_rejected() {
        assert!(StubModel::new(0)
            .complete(&CompletionRequest::new("", "x"))
            .is_err());
    }

    #[test]
    fn payload_parsing() {
        assert_eq!(
            parse_payload(SchemaHint::Score, "score: 0.75"),
            Some(Parsed::Score(0.75))
        );
        assert_eq!(
            parse_payload(SchemaHint::Score, "7"),
            Some(Parsed::Score(1.0))
        );
        assert_eq!(parse_payload(SchemaHint::Score, "none"), None);
        assert_eq!(
            parse_payload(SchemaHint::FeatureVector { dim: 2 }, "[0.1; 0.2; 0.3]"),
            Some(Parsed::Features(vec![0.1, 0.2]))
        );
        assert_eq!(
            parse_payload(SchemaHint::FeatureVector { dim: 3 }, "0.1 0.2"),
            None
        );
        assert_eq!(parse_payload(SchemaHint::RuleText, "  "), None);
    }

    #[test]
    fn limiter_bounds_in_flight() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let lim = Arc::new(InFlightLimiter::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let lim = lim.clone();
                let peak = peak.clone();
                std::thread::spawn(move || {
                    let _g = lim.acquire();
                    peak.fetch_max(lim.in_flight(), Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(lim.in_flight(), 0);
    }

    #[cfg(feature = "remote")]
    #[test]
    fn remote_bad_key_is_auth_error() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = s.read(&mut buf);
            let body = "{\"error\":\"invalid api key\"}";
            let _ = write!(
                s,
                "HTTP/1.1 401 Unauthorized\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
        });
        let m = RemoteModel::new(RemoteConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            api_key: "bad".into(),
            timeout_secs: 5.0,
            ..Default::default()
        });
        let err = m
            .complete(&CompletionRequest::new("sys", "user"))
            .unwrap_err();
        assert!(matches!(err, Error::ModelAuth(401)), "{err:?}");
        server.join().unwrap();
    }

    #[cfg(feature = "remote")]
    #[test]
    fn remote_parses_chat_completion() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = [0u8; 8192];
            let _ = s.read(&mut buf);
            let body = r#"{"choices":[{"message":{"role":"assistant","content":"0.25, 0.5"}}]}"#;
            let _ = write!(
                s,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
        });
        let m = RemoteModel::new(RemoteConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            api_key: "k".into(),
            timeout_secs: 5.0,
            ..Default::default()
        });
        let v = extract_features(&m, "text", 2).unwrap();
        assert_eq!(v, vec![0.25, 0.5]);
        server.join().unwrap();
    }
}
