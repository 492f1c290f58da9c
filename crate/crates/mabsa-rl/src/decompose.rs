//! Text decomposition into an ordered sequence event set.
//!
//! An LLM receives a fixed system prompt and the sample text, and must
//! answer with a JSON object keyed `"Event 1"`, `"Event 2"`, ... Parsing is
//! lenient about the envelope (code fences, surrounding prose) and strict
//! about the schema. Results are cached in an append-only JSONL file keyed
//! by (model, prompt, text); a deterministic sentence-split fallback keeps
//! every pipeline runnable offline.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, LlmError, ParseFailure, Result};

/// Instruction sent as the system message for every decomposition request.
pub const SYSTEM_PROMPT: &str = "You will receive some text, and you need to break it down into several sub-events, with each sub-event containing only one or two entities. Each event description must be complete. Please output strictly in the following JSON format: {'Event 1': Event 1, 'Event 2': Event 2,...}";

/// Where an event set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Llm,
    Fallback,
    Cache,
}

/// Ordered sub-events of one text, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEventSet {
    pub events: Vec<String>,
    pub source_text_hash: String,
    pub provenance: Provenance,
    pub model: String,
    pub prompt_hash: String,
}

impl SequenceEventSet {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The empty event set (used when event augmentation is disabled).
    pub fn none(text: &str) -> SequenceEventSet {
        SequenceEventSet {
            events: Vec::new(),
            source_text_hash: sha256_hex(text.as_bytes()),
            provenance: Provenance::Fallback,
            model: "none".into(),
            prompt_hash: String::new(),
        }
    }
}

/// One rendered decomposition request.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeRequest {
    pub system_prompt: String,
    pub context_prompt: String,
    pub temperature: f64,
    pub max_retries: u32,
}

impl DecomposeRequest {
    pub fn prompt_hash(&self) -> String {
        sha256_hex(self.system_prompt.as_bytes())
    }
}

/// Retry/temperature knobs for decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub temperature: f64,
    /// Total attempts before giving up on the client.
    pub max_retries: u32,
    /// Fall back to deterministic sentence splitting after exhausted
    /// retries instead of propagating the error.
    pub fallback_enabled: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            temperature: 0.0,
            max_retries: 3,
            fallback_enabled: true,
        }
    }
}

/// Render the fixed system prompt and the `Text:`-prefixed context prompt.
/// The text is embedded verbatim, with no escaping.
pub fn build_prompt(text: &str) -> Result<DecomposeRequest> {
    build_prompt_with(text, &DecomposeOptions::default())
}

pub fn build_prompt_with(text: &str, opts: &DecomposeOptions) -> Result<DecomposeRequest> {
    if text.is_empty() {
        return Err(Error::Config("cannot decompose empty text".into()));
    }
    Ok(DecomposeRequest {
        system_prompt: SYSTEM_PROMPT.to_string(),
        context_prompt: format!("Text:{text}"),
        temperature: opts.temperature,
        max_retries: opts.max_retries,
    })
}

/// Extract the ordered event list from an LLM completion.
///
/// The first balanced JSON object found in `raw` is used (code fences and
/// surrounding prose are tolerated). Keys must match `Event N`; events are
/// ordered by `N` regardless of key order in the object; duplicate numbers
/// fail. Non-string values are coerced to strings; events that trim to
/// empty are dropped with a warning.
pub fn parse_events(raw: &str) -> std::result::Result<Vec<String>, ParseFailure> {
    let pairs = first_json_object(raw).ok_or(ParseFailure::NoJsonObject)?;
    let mut numbered: Vec<(u64, String)> = Vec::with_capacity(pairs.len());
    for (key, value) in pairs {
        let n = event_number(&key).ok_or_else(|| ParseFailure::BadKey(key.clone()))?;
        if numbered.iter().any(|(m, _)| *m == n) {
            return Err(ParseFailure::DuplicateEvent(n));
        }
        let text = match value {
            serde_json::Value::String(s) => s,
            serde_json::Value::Null => String::new(),
            other => other.to_string(),
        };
        numbered.push((n, text));
    }
    numbered.sort_by_key(|(n, _)| *n);
    let mut events = Vec::with_capacity(numbered.len());
    for (n, text) in numbered {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            log::warn!("dropping empty event {n}");
        } else {
            events.push(trimmed.to_string());
        }
    }
    Ok(events)
}

/// Render events back to the `{"Event 1": ...}` wire form.
pub fn serialize_events(events: &[String]) -> String {
    let mut map = serde_json::Map::new();
    for (i, e) in events.iter().enumerate() {
        map.insert(
            format!("Event {}", i + 1),
            serde_json::Value::String(e.clone()),
        );
    }
    serde_json::Value::Object(map).to_string()
}

fn event_number(key: &str) -> Option<u64> {
    let rest = key.trim().strip_prefix("Event")?;
    let digits = rest.trim_start();
    if digits.is_empty() || rest == digits {
        // Require whitespace between the word and the number.
        return None;
    }
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Scan `raw` for the first balanced `{...}` region that parses as a JSON
/// object, and return its entries in document order (duplicates preserved).
fn first_json_object(raw: &str) -> Option<Vec<(String, serde_json::Value)>> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(open) = raw[start..].find('{') {
        let open = start + open;
        if let Some(end) = matching_brace(bytes, open) {
            let candidate = &raw[open..=end];
            if let Some(pairs) = parse_object_pairs(candidate) {
                return Some(pairs);
            }
        }
        start = open + 1;
    }
    None
}

/// Index of the brace closing the object opened at `open`, string-aware.
fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Deserialize a JSON object into its (key, value) entries without collapsing
/// duplicate keys.
fn parse_object_pairs(text: &str) -> Option<Vec<(String, serde_json::Value)>> {
    struct PairsVisitor;
    impl<'de> serde::de::Visitor<'de> for PairsVisitor {
        type Value = Vec<(String, serde_json::Value)>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a JSON object")
        }

        fn visit_map<A: serde::de::MapAccess<'de>>(
            self,
            mut map: A,
        ) -> std::result::Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                out.push((k, v));
            }
            Ok(out)
        }
    }
    let mut de = serde_json::Deserializer::from_str(text);
    serde::de::Deserializer::deserialize_map(&mut de, PairsVisitor).ok()
}

/// Deterministic offline decomposition: split on sentence-final punctuation,
/// falling back to the whole text as a single event.
pub fn fallback_decompose(text: &str) -> Result<SequenceEventSet> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::Config("cannot decompose empty text".into()));
    }
    let mut events = Vec::new();
    let chars: Vec<char> = trimmed.chars().collect();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        current.push(c);
        let is_terminal = matches!(c, '.' | '!' | '?');
        let at_boundary = i + 1 == chars.len() || chars[i + 1].is_whitespace();
        let next_continues_run = i + 1 < chars.len() && matches!(chars[i + 1], '.' | '!' | '?');
        if is_terminal && at_boundary && !next_continues_run {
            let piece = current.trim();
            if !piece.is_empty() {
                events.push(piece.to_string());
            }
            current.clear();
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        events.push(tail.to_string());
    }
    if events.is_empty() {
        events.push(trimmed.to_string());
    }
    Ok(SequenceEventSet {
        events,
        source_text_hash: sha256_hex(trimmed.as_bytes()),
        provenance: Provenance::Fallback,
        model: "fallback".into(),
        prompt_hash: String::new(),
    })
}

/// A chat-completion backend.
pub trait LlmClient: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &DecomposeRequest) -> std::result::Result<String, LlmError>;
}

/// Cache key: SHA-256 over (model id, prompt hash, text).
pub fn cache_key(model: &str, prompt_hash: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update([0x1f]);
    hasher.update(prompt_hash.as_bytes());
    hasher.update([0x1f]);
    hasher.update(text.as_bytes());
    hex(&hasher.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of the cache file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub text: String,
    pub events: Vec<String>,
    pub model: String,
    pub prompt_hash: String,
    pub timestamp: u64,
    pub provenance: Provenance,
}

/// Append-only JSONL cache of decompositions. Writes are serialized; on
/// duplicate keys the last record wins (values are deterministic at
/// temperature 0, so either is correct).
pub struct DecomposeCache {
    path: PathBuf,
    inner: Mutex<CacheInner>,
}

struct CacheInner {
    entries: HashMap<String, CacheRecord>,
    file: File,
}

impl DecomposeCache {
    /// Open or create a cache file, loading any existing records.
    pub fn open(path: &Path) -> Result<DecomposeCache> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
            for line in reader.lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line)?;
                entries.insert(record.key.clone(), record);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(DecomposeCache {
            path: path.to_path_buf(),
            inner: Mutex::new(CacheInner { entries, file }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &str) -> bool {
        self.inner.lock().unwrap().entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<SequenceEventSet> {
        let inner = self.inner.lock().unwrap();
        inner.entries.get(key).map(|r| SequenceEventSet {
            events: r.events.clone(),
            source_text_hash: sha256_hex(r.text.as_bytes()),
            provenance: Provenance::Cache,
            model: r.model.clone(),
            prompt_hash: r.prompt_hash.clone(),
        })
    }

    pub fn put(&self, record: CacheRecord) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        let line = serde_json::to_string(&record)?;
        inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))?;
        inner.entries.insert(record.key.clone(), record);
        Ok(())
    }

    /// SHA-256 of the cache file contents (recorded in run manifests).
    pub fn content_hash(&self) -> Result<String> {
        let bytes = std::fs::read(&self.path).map_err(|e| Error::io(&self.path, e))?;
        Ok(sha256_hex(&bytes))
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Decompose one text: serve from cache when possible, otherwise call the
/// client with retries, store the parsed result, and fall back to sentence
/// splitting when enabled.
pub fn decompose(
    text: &str,
    client: &dyn LlmClient,
    cache: &DecomposeCache,
    opts: &DecomposeOptions,
) -> Result<SequenceEventSet> {
    let request = build_prompt_with(text, opts)?;
    let prompt_hash = request.prompt_hash();
    let key = cache_key(client.model_id(), &prompt_hash, text);
    if let Some(hit) = cache.get(&key) {
        return Ok(hit);
    }
    let mut last_error: Option<Error> = None;
    for attempt in 1..=opts.max_retries.max(1) {
        match client.complete(&request) {
            Ok(raw) => match parse_events(&raw) {
                Ok(events) => {
                    cache.put(CacheRecord {
                        key: key.clone(),
                        text: text.to_string(),
                        events: events.clone(),
                        model: client.model_id().to_string(),
                        prompt_hash: prompt_hash.clone(),
                        timestamp: unix_now(),
                        provenance: Provenance::Llm,
                    })?;
                    return Ok(SequenceEventSet {
                        events,
                        source_text_hash: sha256_hex(text.as_bytes()),
                        provenance: Provenance::Llm,
                        model: client.model_id().to_string(),
                        prompt_hash,
                    });
                }
                Err(pf) => {
                    log::warn!("attempt {attempt}: completion did not parse: {pf}");
                    last_error = Some(pf.into());
                }
            },
            Err(le) => {
                log::warn!("attempt {attempt}: client error: {le}");
                last_error = Some(le.into());
            }
        }
    }
    if opts.fallback_enabled {
        fallback_decompose(text)
    } else {
        Err(last_error.unwrap_or_else(|| Error::Config("no attempts made".into())))
    }
}

/// Work summary of a batch decomposition run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BatchReport {
    pub total: usize,
    pub from_cache: usize,
    pub via_llm: usize,
    pub via_fallback: usize,
}

/// Decompose many texts with bounded concurrency and an optional rate limit,
/// skipping texts already cached. Entries land in the shared cache file.
pub fn decompose_batch(
    texts: &[(String, String)],
    client: &dyn LlmClient,
    cache: &DecomposeCache,
    opts: &DecomposeOptions,
    concurrency: usize,
    min_request_interval: Option<Duration>,
) -> Result<BatchReport> {
    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..texts.len()).collect());
    let report = Mutex::new(BatchReport {
        total: texts.len(),
        ..Default::default()
    });
    let limiter: Mutex<Instant> = Mutex::new(Instant::now() - Duration::from_secs(3600));
    let errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());
    let workers = concurrency.max(1).min(texts.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = match queue.lock().unwrap().pop_front() {
                    Some(i) => i,
                    None => break,
                };
                let (id, text) = &texts[idx];
                let request = match build_prompt_with(text, opts) {
                    Ok(r) => r,
                    Err(e) => {
                        log::warn!("{id}: {e}");
                        errors.lock().unwrap().push(e);
                        continue;
                    }
                };
                let key = cache_key(client.model_id(), &request.prompt_hash(), text);
                if cache.contains(&key) {
                    report.lock().unwrap().from_cache += 1;
                    continue;
                }
                if let Some(interval) = min_request_interval {
                    let mut last = limiter.lock().unwrap();
                    let wait = interval.saturating_sub(last.elapsed());
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                    *last = Instant::now();
                }
                match decompose(text, client, cache, opts) {
                    Ok(set) => {
                        let mut r = report.lock().unwrap();
                        match set.provenance {
                            Provenance::Fallback => {
                                // Record fallback results so resumed runs skip them.
                                let _ = cache.put(CacheRecord {
                                    key: cache_key("fallback", "", text),
                                    text: text.clone(),
                                    events: set.events.clone(),
                                    model: "fallback".into(),
                                    prompt_hash: String::new(),
                                    timestamp: unix_now(),
                                    provenance: Provenance::Fallback,
                                });
                                r.via_fallback += 1;
                            }
                            _ => r.via_llm += 1,
                        }
                    }
                    Err(e) => {
                        log::warn!("{id}: decomposition failed: {e}");
                        errors.lock().unwrap().push(e);
                    }
                }
            });
        }
    });
    let errs = errors.into_inner().unwrap();
    if let Some(first) = errs.into_iter().next() {
        return Err(first);
    }
    Ok(report.into_inner().unwrap())
}

/// Env vars used by the HTTP client.
pub const ENV_API_KEY: &str = "MABSA_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "MABSA_LLM_BASE_URL";
pub const ENV_MODEL: &str = "MABSA_LLM_MODEL";

/// OpenAI-compatible chat-completion client over HTTP.
pub struct HttpLlmClient {
    base_url: String,
    model: String,
    api_key: String,
    debug_log: bool,
    http: reqwest::blocking::Client,
}

impl HttpLlmClient {
    pub fn new(base_url: String, model: String, api_key: String) -> Result<HttpLlmClient> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Llm(LlmError::Request(e.to_string())))?;
        Ok(HttpLlmClient {
            base_url,
            model,
            api_key,
            debug_log: false,
            http,
        })
    }

    /// Configure from `MABSA_LLM_API_KEY`, `MABSA_LLM_BASE_URL`, and
    /// `MABSA_LLM_MODEL`.
    pub fn from_env() -> Result<HttpLlmClient> {
        let key = std::env::var(ENV_API_KEY)
            .map_err(|_| Error::Llm(LlmError::MissingCredentials(ENV_API_KEY.into())))?;
        let base = std::env::var(ENV_BASE_URL)
            .map_err(|_| Error::Llm(LlmError::MissingCredentials(ENV_BASE_URL.into())))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "qwen-max".into());
        Self::new(base, model, key)
    }

    pub fn with_debug_logging(mut self, enabled: bool) -> Self {
        self.debug_log = enabled;
        self
    }
}

impl LlmClient for HttpLlmClient {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &DecomposeRequest) -> std::result::Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.context_prompt},
            ],
            "temperature": request.temperature,
        });
        if self.debug_log {
            log::debug!("POST {url} (authorization: Bearer <redacted>): {body}");
        }
        let response = self
            .http
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Request(e.to_string()))?;
        let status = response.status();
        let payload: serde_json::Value = response
            .json()
            .map_err(|e| LlmError::BadResponse(e.to_string()))?;
        if self.debug_log {
            log::debug!("response ({status}): {payload}");
        }
        if !status.is_success() {
            return Err(LlmError::Request(format!("status {status}: {payload}")));
        }
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
    }
}

/// Scripted test double replaying canned responses and counting calls.
pub struct ScriptedClient {
    model: String,
    script: Mutex<VecDeque<std::result::Result<String, String>>>,
    default: Option<String>,
    calls: AtomicUsize,
}

impl ScriptedClient {
    pub fn new(
        model: &str,
        responses: Vec<std::result::Result<String, String>>,
    ) -> ScriptedClient {
        ScriptedClient {
            model: model.into(),
            script: Mutex::new(responses.into()),
            default: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Response returned once the script is exhausted.
    pub fn with_default(mut self, response: &str) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for ScriptedClient {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, _request: &DecomposeRequest) -> std::result::Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.script.lock().unwrap().pop_front() {
            Some(Ok(s)) => Ok(s),
            Some(Err(msg)) => Err(LlmError::Request(msg)),
            None => match &self.default {
                Some(s) => Ok(s.clone()),
                None => Err(LlmError::Request("script exhausted".into())),
            },
        }
    }
}
