use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::cache::{name_key, read_records, Record};
use super::Gender;
use crate::error::{Error, Result};

/// Maps an ISBN to an author string. `Ok(None)` is a definitive miss; `Err`
/// is a failure, after which the next provider is tried.
pub trait AuthorProvider: Send + Sync {
    fn id(&self) -> &str;
    fn lookup_author(&self, isbn: &str) -> Result<Option<String>>;
    /// Lookups issued so far.
    fn calls(&self) -> usize;
}

/// Maps a first name to a gender and the provider's confidence in it.
pub trait GenderProvider: Send + Sync {
    fn id(&self) -> &str;
    fn lookup_gender(&self, first_name: &str) -> Result<Option<(Gender, f64)>>;
    fn calls(&self) -> usize;
}

/// Answers from record files in the cache format. Anything not listed is a
/// miss.
#[derive(Debug, Default)]
pub struct FixtureProvider {
    authors: HashMap<String, Option<String>>,
    genders: HashMap<String, (Gender, f64)>,
    calls: AtomicUsize,
}

impl FixtureProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let mut p = Self::new();
        for path in paths {
            for record in read_records(path)? {
                p.add(record);
            }
        }
        Ok(p)
    }

    pub fn add(&mut self, record: Record) {
        match record {
            Record::Author(a) => {
                self.authors
                    .entry(a.isbn)
                    .or_insert(Some(a.author_full_name));
            }
            Record::AuthorMiss { isbn } => {
                self.authors.entry(isbn).or_insert(None);
            }
            Record::Gender(g) => {
                self.genders
                    .entry(name_key(&g.name))
                    .or_insert((g.gender, g.confidence));
            }
        }
    }

    pub fn with_author(mut self, isbn: &str, author: &str) -> Self {
        self.authors.insert(isbn.into(), Some(author.into()));
        self
    }

    pub fn with_gender(mut self, name: &str, gender: Gender, confidence: f64) -> Self {
        self.genders.insert(name_key(name), (gender, confidence));
        self
    }
}

impl AuthorProvider for FixtureProvider {
    fn id(&self) -> &str {
        "fixture"
    }

    fn lookup_author(&self, isbn: &str) -> Result<Option<String>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.authors.get(isbn).cloned().flatten())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl GenderProvider for FixtureProvider {
    fn id(&self) -> &str {
        "fixture"
    }

    fn lookup_gender(&self, first_name: &str) -> Result<Option<(Gender, f64)>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.genders.get(&name_key(first_name)).copied())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Endpoint, credentials and request budget of one HTTP provider.
///
/// `url` is a template: `{isbn}`, `{name}` and `{key}` are replaced with
/// percent-encoded values. The API key is read from the environment variable
/// `api_key_env` and sent in `api_key_header` when that is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub id: String,
    pub url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub api_key_header: Option<String>,
    #[serde(default = "default_rps")]
    pub requests_per_second: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_rps() -> f64 {
    1.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_timeout() -> u64 {
    10
}

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthorHttpConfig {
    #[serde(flatten)]
    pub http: HttpSettings,
    /// JSON pointer to the author string, or to an array whose first element
    /// is one.
    pub author_pointer: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenderHttpConfig {
    #[serde(flatten)]
    pub http: HttpSettings,
    pub gender_pointer: String,
    pub confidence_pointer: String,
}

struct HttpClient {
    settings: HttpSettings,
    agent: ureq::Agent,
    key: Option<String>,
    next_slot: Mutex<Instant>,
    calls: AtomicUsize,
}

impl HttpClient {
    fn new(settings: HttpSettings) -> Result<Self> {
        if !(settings.requests_per_second > 0.0) {
            return Err(Error::Config(format!(
                "provider {}: requests_per_second must be positive",
                settings.id
            )));
        }
        let key = match &settings.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!(
                    "provider {} needs environment variable {var}",
                    settings.id
                ))
            })?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            settings,
            agent,
            key,
            next_slot: Mutex::new(Instant::now()),
            calls: AtomicUsize::new(0),
        })
    }

    fn url(&self, placeholder: &str, value: &str) -> String {
        let enc = |s: &str| utf8_percent_encode(s, NON_ALPHANUMERIC).to_string();
        let mut url = self.settings.url.replace(placeholder, &enc(value));
        if let Some(key) = &self.key {
            url = url.replace("{key}", &enc(key));
        }
        url
    }

    /// Waits for this provider's next request slot.
    fn throttle(&self) {
        let interval = Duration::from_secs_f64(1.0 / self.settings.requests_per_second);
        let slot = {
            let mut next = self.next_slot.lock().unwrap();
            let slot = (*next).max(Instant::now());
            *next = slot + interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }

    fn fail(&self, message: String) -> Error {
        Error::Provider {
            provider: self.settings.id.clone(),
            message,
        }
    }

    /// `Ok(None)` on 404. Transport errors, 429 and 5xx are retried with
    /// doubling backoff.
    fn get_json(&self, placeholder: &str, value: &str) -> Result<Option<Value>> {
        let url = self.url(placeholder, value);
        let mut backoff = Duration::from_millis(self.settings.backoff_ms);
        let mut attempt = 0;
        loop {
            self.throttle();
            self.calls.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.get(&url);
            if let (Some(h), Some(k)) = (&self.settings.api_key_header, &self.key) {
                req = req.header(h.as_str(), k.as_str());
            }
            let retryable = match req.call() {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    match status {
                        200..=299 => {
                            let body = resp
                                .body_mut()
                                .read_to_string()
                                .map_err(|e| self.fail(e.to_string()))?;
                            let json = serde_json::from_str(&body)
                                .map_err(|e| self.fail(format!("invalid JSON: {e}")))?;
                            return Ok(Some(json));
                        }
                        404 => return Ok(None),
                        429 | 500..=599 => format!("HTTP {status}"),
                        _ => return Err(self.fail(format!("HTTP {status}"))),
                    }
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.settings.max_retries {
                return Err(self.fail(format!("{retryable} after {} attempts", attempt + 1)));
            }
            log::debug!("{}: {retryable}, retrying in {backoff:?}", self.settings.id);
            std::thread::sleep(backoff);
            backoff = (backoff * 2).min(MAX_BACKOFF);
            attempt += 1;
        }
    }
}

pub struct HttpAuthorProvider {
    client: HttpClient,
    pointer: String,
}

impl HttpAuthorProvider {
    pub fn new(config: &AuthorHttpConfig) -> Result<Self> {
        Ok(Self {
            client: HttpClient::new(config.http.clone())?,
            pointer: config.author_pointer.clone(),
        })
    }
}

/// A string at `pointer`, or the first element of an array there.
fn author_at(json: &Value, pointer: &str) -> Option<String> {
    let v = json.pointer(pointer)?;
    let s = match v {
        Value::Array(a) => a.first()?.as_str()?,
        other => other.as_str()?,
    };
    let s = s.trim();
    (!s.is_empty()).then(|| s.to_string())
}

impl AuthorProvider for HttpAuthorProvider {
    fn id(&self) -> &str {
        &self.client.settings.id
    }

    fn lookup_author(&self, isbn: &str) -> Result<Option<String>> {
        Ok(self
            .client
            .get_json("{isbn}", isbn)?
            .and_then(|json| author_at(&json, &self.pointer)))
    }

    fn calls(&self) -> usize {
        self.client.calls.load(Ordering::Relaxed)
    }
}

pub struct HttpGenderProvider {
    client: HttpClient,
    gender_pointer: String,
    confidence_pointer: String,
}

impl HttpGenderProvider {
    pub fn new(config: &GenderHttpConfig) -> Result<Self> {
        Ok(Self {
            client: HttpClient::new(config.http.clone())?,
            gender_pointer: config.gender_pointer.clone(),
            confidence_pointer: config.confidence_pointer.clone(),
        })
    }
}

fn gender_at(
    json: &Value,
    gender_pointer: &str,
    confidence_pointer: &str,
) -> Option<(Gender, f64)> {
    let gender = Gender::parse(json.pointer(gender_pointer)?.as_str()?)?;
    let confidence = json
        .pointer(confidence_pointer)
        .and_then(Value::as_f64)
        .unwrap_or(0.0)
        .clamp(0.0, 1.0);
    Some((gender, confidence))
}

impl GenderProvider for HttpGenderProvider {
    fn id(&self) -> &str {
        &self.client.settings.id
    }

    fn lookup_gender(&self, first_name: &str) -> Result<Option<(Gender, f64)>> {
        Ok(self
            .client
            .get_json("{name}", first_name)?
            .and_then(|json| gender_at(&json, &self.gender_pointer, &self.confidence_pointer)))
    }

    fn calls(&self) -> usize {
        self.client.calls.load(Ordering::Relaxed)
    }
}
