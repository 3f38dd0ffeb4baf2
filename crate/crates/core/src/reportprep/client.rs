use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{CleaningPrompt, ReportError};

/// Environment variable holding the bearer token for the live service.
pub const AUTH_TOKEN_ENV: &str = "RASA_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningRecord {
    pub case_id: String,
    pub raw: String,
    pub cleaned: String,
    /// `"live"` or `"mock"`.
    pub provider: String,
    pub digest: String,
    #[serde(skip)]
    pub from_cache: bool,
}

/// Something that turns a raw report into a cleaned description.
pub trait Provider {
    fn tag(&self) -> &'static str;
    fn clean(&self, raw: &str, prompt: &CleaningPrompt) -> Result<String, ReportError>;
    /// Requests issued so far (network calls for the live provider).
    fn requests(&self) -> usize;
}

/// Offline stand-in: drops every sentence mentioning an excluded topic.
#[derive(Debug, Default)]
pub struct MockProvider {
    requests: AtomicUsize,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        let boundary = matches!(c, '.' | '!' | '?')
            && chars.get(k + 1).is_none_or(|&(_, next)| next.is_whitespace());
        if boundary {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

impl Provider for MockProvider {
    fn tag(&self) -> &'static str {
        "mock"
    }

    fn clean(&self, raw: &str, prompt: &CleaningPrompt) -> Result<String, ReportError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let excluded: Vec<String> = prompt
            .exclusions
            .iter()
            .map(|e| e.trim().to_lowercase())
            .filter(|e| !e.is_empty())
            .collect();
        let all = sentences(raw);
        let kept: Vec<&str> = all
            .iter()
            .copied()
            .filter(|s| {
                let lower = s.to_lowercase();
                !excluded.iter().any(|e| lower.contains(e.as_str()))
            })
            .collect();
        if kept.len() == all.len() {
            return Ok(raw.to_string());
        }
        Ok(kept.join(" "))
    }

    fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }
}

/// Where and how to reach a chat-completion service.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub base_url: String,
    pub model: String,
    pub token: String,
    pub temperature: f64,
    pub timeout: Duration,
}

impl Endpoint {
    /// Reads the token from [`AUTH_TOKEN_ENV`].
    pub fn from_env(base_url: &str, model: &str) -> Result<Self, ReportError> {
        let token = std::env::var(AUTH_TOKEN_ENV)
            .ok()
            .filter(|t| !t.trim().is_empty())
            .ok_or(ReportError::MissingToken(AUTH_TOKEN_ENV))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            token,
            temperature: 0.0,
            timeout: Duration::from_secs(120),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `k` (1-based): `base * 2^(k-1)`.
    pub fn delay(&self, k: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(k.saturating_sub(1))
    }
}

enum Attempt {
    Retryable(String),
    Fatal(ReportError),
}

pub struct LiveProvider {
    endpoint: Endpoint,
    retry: RetryPolicy,
    agent: ureq::Agent,
    requests: AtomicUsize,
}

impl LiveProvider {
    pub fn new(endpoint: Endpoint, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint,
            retry,
            agent,
            requests: AtomicUsize::new(0),
        }
    }

    pub fn request_body(&self, raw: &str, prompt: &CleaningPrompt) -> serde_json::Value {
        json!({
            "model": self.endpoint.model,
            "temperature": self.endpoint.temperature,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user_message(raw)},
            ],
        })
    }

    fn attempt(&self, body: &str) -> Result<String, Attempt> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let url = format!("{}/chat/completions", self.endpoint.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.endpoint.token))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(ReportError::Transport {
                attempts: 1,
                last: format!("HTTP {status}: {text}"),
            }));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(ReportError::Content(e.to_string())))?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::trim)
            .unwrap_or_default();
        if content.is_empty() {
            return Err(Attempt::Fatal(ReportError::Content("empty completion".into())));
        }
        Ok(content.to_string())
    }
}

impl Provider for LiveProvider {
    fn tag(&self) -> &'static str {
        "live"
    }

    fn clean(&self, raw: &str, prompt: &CleaningPrompt) -> Result<String, ReportError> {
        let body = self.request_body(raw, prompt).to_string();
        let mut last = String::new();
        for k in 1..=self.retry.attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) => {
                    log::warn!("chat completion attempt {k}/{} failed: {msg}", self.retry.attempts);
                    last = msg;
                    if k < self.retry.attempts {
                        std::thread::sleep(self.retry.delay(k));
                    }
                }
            }
        }
        Err(ReportError::Transport {
            attempts: self.retry.attempts,
            last,
        })
    }

    fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }
}

/// On-disk cache of [`CleaningRecord`]s keyed by content digest.
#[derive(Debug, Clone)]
pub struct DigestCache {
    dir: PathBuf,
}

impl DigestCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, ReportError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| ReportError::Cache {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        Ok(Self { dir })
    }

    fn path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Option<CleaningRecord> {
        let text = fs::read_to_string(self.path(digest)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Writes through a temporary file so readers never see partial records.
    pub fn put(&self, record: &CleaningRecord) -> Result<(), ReportError> {
        let path = self.path(&record.digest);
        let tmp = path.with_extension("json.tmp");
        let cache_err = |e: std::io::Error| ReportError::Cache {
            path: path.clone(),
            message: e.to_string(),
        };
        let text = serde_json::to_string_pretty(record).expect("record serializes");
        fs::write(&tmp, text).map_err(cache_err)?;
        fs::rename(&tmp, &path).map_err(cache_err)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Digest of the prompt and raw text; the cache key.
pub fn digest(raw: &str, prompt: &CleaningPrompt) -> String {
    let mut h = Sha256::new();
    h.update(prompt.system.as_bytes());
    h.update([0u8]);
    h.update(prompt.user_message(raw).as_bytes());
    hex::encode(h.finalize())
}

pub struct ReportCleaner<P: Provider> {
    provider: P,
    prompt: CleaningPrompt,
    cache: DigestCache,
}

impl<P: Provider> ReportCleaner<P> {
    pub fn new(provider: P, prompt: CleaningPrompt, cache: DigestCache) -> Result<Self, ReportError> {
        prompt.validate()?;
        Ok(Self { provider, prompt, cache })
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    /// Cleans one report, serving repeated inputs from the cache.
    pub fn clean_report(&self, case_id: &str, raw: &str) -> Result<CleaningRecord, ReportError> {
        if raw.trim().is_empty() {
            return Err(ReportError::EmptyReport);
        }
        let digest = digest(raw, &self.prompt);
        if let Some(mut hit) = self.cache.get(&digest) {
            if hit.raw == raw && hit.provider == self.provider.tag() {
                hit.from_cache = true;
                hit.case_id = case_id.to_string();
                return Ok(hit);
            }
        }
        let cleaned = self.provider.clean(raw, &self.prompt)?;
        if cleaned.trim().is_empty() {
            return Err(ReportError::Content("cleaning removed every sentence".into()));
        }
        let record = CleaningRecord {
            case_id: case_id.to_string(),
            raw: raw.to_string(),
            cleaned,
            provider: self.provider.tag().to_string(),
            digest,
            from_cache: false,
        };
        self.cache.put(&record)?;
        Ok(record)
    }
}
