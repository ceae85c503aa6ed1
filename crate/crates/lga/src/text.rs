//! Per-phase text descriptions: prompt construction, response parsing, and a
//! retrying chat-completion client.
//!
//! An action label is expanded into a scene description plus an ordered list
//! of sub-action descriptions, one per temporal phase. This module owns the
//! prompt sent to the language model, the tolerant parser for its reply, the
//! HTTP client (bearer-authenticated, OpenAI-compatible chat completions),
//! and the on-disk description cache. It never computes embeddings — text
//! embeddings arrive precomputed through the feature store as
//! [`TextAnatomy`] rows.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Environment variable naming the chat-completions endpoint.
pub const ENV_ENDPOINT: &str = "LGA_LLM_ENDPOINT";
/// Environment variable holding the bearer token.
pub const ENV_API_KEY: &str = "LGA_LLM_API_KEY";
/// Environment variable selecting the model; defaults to `gpt-4o`.
pub const ENV_MODEL: &str = "LGA_LLM_MODEL";

/// Errors from prompt building, response parsing, and the fetch client.
#[derive(Debug, Error)]
pub enum TextError {
    #[error("action label must be non-empty")]
    EmptyLabel,
    #[error("phase count must be at least 1")]
    BadPhaseCount,
    #[error("no JSON object found in model response")]
    NoJsonObject { raw: String },
    #[error("model response JSON lacks key {key:?}")]
    MissingKey { key: &'static str, raw: String },
    #[error("malformed {field} in model response: {reason}")]
    MalformedField { field: &'static str, reason: String, raw: String },
    #[error("expected {expected} sub-action descriptions, got {got}")]
    WrongArity { expected: usize, got: usize, raw: String },
    #[error("invalid text embedding: {reason}")]
    BadEmbedding { reason: String },
    #[error("environment variable {name} is not set")]
    MissingEnv { name: &'static str },
    #[error("endpoint returned HTTP {status}: {detail}")]
    Http { status: u16, detail: String },
    #[error("authentication rejected with HTTP {status}: {detail}")]
    Auth { status: u16, detail: String },
    #[error("transport failure talking to endpoint: {0}")]
    Transport(String),
    #[error("malformed chat-completion response: {reason}")]
    BadCompletion { reason: String },
    #[error("request failed after {attempts} attempts: {source}")]
    Exhausted {
        attempts: u32,
        #[source]
        source: Box<TextError>,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("description cache {path} is not valid JSON: {source}")]
    BadCache {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// An action label decomposed into a scene description and temporally
/// ordered sub-action descriptions.
///
/// Serialization mirrors the JSON shape the model is prompted to emit
/// (`"Action Label"`, `"sub-action description"`, optional
/// `"scene description"`), so a serialized value parses back through
/// [`parse_llm_response`] unchanged and the description cache stores entries
/// in the model's own format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicDescriptions {
    #[serde(rename = "Action Label")]
    pub label: String,
    #[serde(rename = "scene description", skip_serializing_if = "Option::is_none", default)]
    pub scene: Option<String>,
    #[serde(rename = "sub-action description")]
    pub descriptions: Vec<String>,
}

impl AtomicDescriptions {
    /// Number of sub-action descriptions (the phase count they describe).
    pub fn phases(&self) -> usize {
        self.descriptions.len()
    }
}

/// Precomputed text embeddings for one class: an `L x C` matrix with one row
/// per phase, plus an optional whole-label embedding.
#[derive(Debug, Clone)]
pub struct TextAnatomy {
    class_id: i64,
    label: String,
    phase_embeddings: Array2<f64>,
    label_embedding: Option<Array1<f64>>,
}

impl TextAnatomy {
    pub fn new(
        class_id: i64,
        label: impl Into<String>,
        phase_embeddings: Array2<f64>,
        label_embedding: Option<Array1<f64>>,
    ) -> Result<Self, TextError> {
        if phase_embeddings.nrows() == 0 || phase_embeddings.ncols() == 0 {
            return Err(TextError::BadEmbedding {
                reason: format!(
                    "phase embedding matrix must be non-empty, got {} x {}",
                    phase_embeddings.nrows(),
                    phase_embeddings.ncols()
                ),
            });
        }
        if phase_embeddings.iter().any(|v| !v.is_finite()) {
            return Err(TextError::BadEmbedding { reason: "non-finite phase embedding entry".into() });
        }
        if let Some(ref label_emb) = label_embedding {
            if label_emb.len() != phase_embeddings.ncols() {
                return Err(TextError::BadEmbedding {
                    reason: format!(
                        "label embedding has dim {}, phases have dim {}",
                        label_emb.len(),
                        phase_embeddings.ncols()
                    ),
                });
            }
            if label_emb.iter().any(|v| !v.is_finite()) {
                return Err(TextError::BadEmbedding { reason: "non-finite label embedding entry".into() });
            }
        }
        Ok(Self { class_id, label: label.into(), phase_embeddings, label_embedding })
    }

    /// An all-zero text anatomy: fusing with it leaves queries purely
    /// visual. Used when a class has no usable text for the configured
    /// phase count.
    pub fn zeros(class_id: i64, label: impl Into<String>, phases: usize, dim: usize) -> Self {
        Self {
            class_id,
            label: label.into(),
            phase_embeddings: Array2::zeros((phases.max(1), dim.max(1))),
            label_embedding: None,
        }
    }

    pub fn class_id(&self) -> i64 {
        self.class_id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Phase count `L`.
    pub fn phases(&self) -> usize {
        self.phase_embeddings.nrows()
    }

    /// Embedding dimension `C`.
    pub fn dim(&self) -> usize {
        self.phase_embeddings.ncols()
    }

    pub fn phase_embeddings(&self) -> &Array2<f64> {
        &self.phase_embeddings
    }

    /// Embedding row for phase `k`.
    pub fn phase(&self, k: usize) -> ArrayView1<'_, f64> {
        self.phase_embeddings.row(k)
    }

    pub fn label_embedding(&self) -> Option<&Array1<f64>> {
        self.label_embedding.as_ref()
    }
}

/// Opening of the instruction block; `{count}` is the spelled-out number of
/// sub-action descriptions requested.
const PROMPT_INSTRUCTIONS: &str = "Deduce the scene description and {count} sub-action descriptions from an action label. The scene description should include possible scene elements, such as humans, objects, and background. The scene description must consist of visible elements, not abstract descriptions like atmosphere, mood or social setting. The sub-action descriptions must follow strict temporal order, focusing on the posture of the people involved, relevant elements in the scene, and potential interactive objects. Ignore object textures and dismiss any unlikely or invalid sub-actions, as well as unnecessary emotional descriptions. Keep the sub-action descriptions brief and clear and avoid the abstract descriptions such as enjoying the performance. Provide a concise answer for both the scene description and the {count} sub-action descriptions, following the example below:";

/// Worked example plus closing instructions. The example output is fixed
/// (its label typo included) so that replies stay format-compatible with the
/// template responses the parser was tuned on.
const PROMPT_EXAMPLE: &str = r#"Example:
Input: jumping into pool.
Output: {"Action Label": "Jumping into poo", "sub-action description": ["A photo of a person stands at the edge of a pool, preparing to jump in.", "A photo of a person leaps off the edge, mid-air over the pool.", "A photo of a person enters the water, creating a splash as they dive in."]}
Your analysis should be thorough and accurate, considering all relevant aspects of the action to support your deductions effectively. Once I provide the action label, please deduce the scene description and {count} sub-action descriptions accordingly."#;

fn spelled_count(n: usize) -> String {
    match n {
        1 => "one".into(),
        2 => "two".into(),
        3 => "three".into(),
        4 => "four".into(),
        5 => "five".into(),
        6 => "six".into(),
        7 => "seven".into(),
        8 => "eight".into(),
        9 => "nine".into(),
        10 => "ten".into(),
        11 => "eleven".into(),
        12 => "twelve".into(),
        _ => n.to_string(),
    }
}

/// Builds the single user message requesting `phases` sub-action
/// descriptions for `label`.
///
/// For three phases the instruction and example text is the canonical
/// template; for other counts the spelled-out count is substituted and a
/// note after the example (which always shows three descriptions) states the
/// required arity. The label is appended as a final `Input:` line mirroring
/// the example's shape.
pub fn build_prompt(label: &str, phases: usize) -> Result<String, TextError> {
    let label = label.trim();
    if label.is_empty() {
        return Err(TextError::EmptyLabel);
    }
    if phases == 0 {
        return Err(TextError::BadPhaseCount);
    }
    let count = spelled_count(phases);
    let mut prompt = String::new();
    prompt.push_str(&PROMPT_INSTRUCTIONS.replace("{count}", &count));
    prompt.push_str("\n\n");
    prompt.push_str(&PROMPT_EXAMPLE.replace("{count}", &count));
    if phases != 3 {
        prompt.push_str(&format!(
            "\n\n(The example above shows three sub-action descriptions for illustration only; your output must contain exactly {count} sub-action descriptions.)"
        ));
    }
    prompt.push_str(&format!("\n\nInput: {label}.\nOutput:"));
    Ok(prompt)
}

/// Lowercases a JSON key and collapses separators so that variants like
/// `"Sub-Action_Description"` all compare equal.
fn normalize_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    let mut last_space = true;
    for ch in key.chars() {
        let mapped = if ch == '-' || ch == '_' { ' ' } else { ch.to_ascii_lowercase() };
        if mapped == ' ' {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.push(mapped);
            last_space = false;
        }
    }
    out.trim_end().to_string()
}

fn lookup<'a>(map: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    map.iter().find(|(k, _)| names.contains(&normalize_key(k).as_str())).map(|(_, v)| v)
}

/// Attempts to read an [`AtomicDescriptions`] out of one JSON object.
/// `None` means "not the object we want, keep scanning"; `Some(Err(..))`
/// means the object carried a sub-action list but its content is invalid.
fn extract_descriptions(
    map: &serde_json::Map<String, Value>,
    raw: &str,
) -> Option<Result<AtomicDescriptions, TextError>> {
    let list = lookup(map, &["sub action description", "sub action descriptions"])?;
    let items = match list.as_array() {
        Some(items) => items,
        None => {
            return Some(Err(TextError::MalformedField {
                field: "sub-action description",
                reason: "expected a JSON array".into(),
                raw: raw.to_string(),
            }))
        }
    };
    let mut descriptions = Vec::with_capacity(items.len());
    for item in items {
        match item.as_str().map(str::trim) {
            Some(s) if !s.is_empty() => descriptions.push(s.to_string()),
            _ => {
                return Some(Err(TextError::MalformedField {
                    field: "sub-action description",
                    reason: "entries must be non-empty strings".into(),
                    raw: raw.to_string(),
                }))
            }
        }
    }
    if descriptions.is_empty() {
        return Some(Err(TextError::MalformedField {
            field: "sub-action description",
            reason: "list is empty".into(),
            raw: raw.to_string(),
        }));
    }
    let label = match lookup(map, &["action label", "label"]).and_then(Value::as_str) {
        Some(s) if !s.trim().is_empty() => s.trim().to_string(),
        _ => return Some(Err(TextError::MissingKey { key: "Action Label", raw: raw.to_string() })),
    };
    let scene = lookup(map, &["scene description", "scene"])
        .and_then(Value::as_str)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    Some(Ok(AtomicDescriptions { label, scene, descriptions }))
}

/// Extracts the first JSON object carrying a sub-action description list
/// from a model reply, tolerating surrounding prose and code fences.
pub fn parse_llm_response(raw: &str) -> Result<AtomicDescriptions, TextError> {
    let mut saw_object = false;
    for (pos, ch) in raw.char_indices() {
        if ch != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            saw_object = true;
            if let Some(result) = extract_descriptions(&map, raw) {
                return result;
            }
        }
    }
    if saw_object {
        Err(TextError::MissingKey { key: "sub-action description", raw: raw.to_string() })
    } else {
        Err(TextError::NoJsonObject { raw: raw.to_string() })
    }
}

/// [`parse_llm_response`] plus an arity check against the requested phase
/// count.
pub fn parse_llm_response_expecting(raw: &str, phases: usize) -> Result<AtomicDescriptions, TextError> {
    let parsed = parse_llm_response(raw)?;
    if parsed.descriptions.len() != phases {
        return Err(TextError::WrongArity {
            expected: phases,
            got: parsed.descriptions.len(),
            raw: raw.to_string(),
        });
    }
    Ok(parsed)
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
///
/// `Debug` redacts the API key; request logging never prints it either.
#[derive(Clone)]
pub struct LlmConfig {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    /// Per-request timeout (connect plus read).
    pub timeout: Duration,
    /// Retries after the first attempt, for transient failures only.
    pub max_retries: u32,
    /// First retry delay; doubles with each further retry.
    pub backoff: Duration,
}

impl fmt::Debug for LlmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmConfig")
            .field("endpoint", &self.endpoint)
            .field("api_key", &"***")
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("backoff", &self.backoff)
            .finish()
    }
}

impl LlmConfig {
    /// Reads endpoint, key, and model from `LGA_LLM_ENDPOINT`,
    /// `LGA_LLM_API_KEY`, and `LGA_LLM_MODEL` (model defaults to `gpt-4o`),
    /// with 30 s timeout, 3 retries, and 500 ms initial backoff.
    pub fn from_env() -> Result<Self, TextError> {
        let endpoint =
            std::env::var(ENV_ENDPOINT).map_err(|_| TextError::MissingEnv { name: ENV_ENDPOINT })?;
        let api_key =
            std::env::var(ENV_API_KEY).map_err(|_| TextError::MissingEnv { name: ENV_API_KEY })?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        Ok(Self {
            endpoint,
            api_key,
            model,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        })
    }

    /// Full chat-completions URL: the endpoint as-is when it already names
    /// the route, otherwise with `/v1/chat/completions` appended.
    fn completions_url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/v1/chat/completions")
        }
    }
}

/// A successful fetch: the parsed descriptions plus how many retries the
/// request needed.
#[derive(Debug, Clone)]
pub struct FetchOutcome {
    pub descriptions: AtomicDescriptions,
    pub retries: u32,
}

enum AttemptError {
    /// Timeouts, connection failures, HTTP 429 and 5xx: worth retrying.
    Transient(TextError),
    /// Everything else fails fast.
    Fatal(TextError),
}

fn attempt_fetch(config: &LlmConfig, url: &str, prompt: &str, phases: usize) -> Result<AtomicDescriptions, AttemptError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(config.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let body = serde_json::json!({
        "model": config.model,
        "messages": [{"role": "user", "content": prompt}],
    });
    log::debug!("POST {url} (authorization redacted) body={body}");
    let mut response = agent
        .post(url)
        .header("Authorization", &format!("Bearer {}", config.api_key))
        .send_json(&body)
        .map_err(|e| AttemptError::Transient(TextError::Transport(e.to_string())))?;
    let status = response.status().as_u16();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| AttemptError::Transient(TextError::Transport(e.to_string())))?;
    log::debug!("response status={status} body={text}");

    match status {
        200..=299 => {}
        401 | 403 => {
            return Err(AttemptError::Fatal(TextError::Auth { status, detail: snippet(&text) }))
        }
        429 | 500..=599 => {
            return Err(AttemptError::Transient(TextError::Http { status, detail: snippet(&text) }))
        }
        _ => return Err(AttemptError::Fatal(TextError::Http { status, detail: snippet(&text) })),
    }

    let completion: Value = serde_json::from_str(&text).map_err(|e| {
        AttemptError::Fatal(TextError::BadCompletion { reason: format!("response is not JSON: {e}") })
    })?;
    let content = completion["choices"][0]["message"]["content"].as_str().ok_or_else(|| {
        AttemptError::Fatal(TextError::BadCompletion {
            reason: "missing choices[0].message.content".into(),
        })
    })?;
    parse_llm_response_expecting(content, phases).map_err(AttemptError::Fatal)
}

fn snippet(text: &str) -> String {
    const LIMIT: usize = 400;
    if text.len() <= LIMIT {
        text.to_string()
    } else {
        let mut end = LIMIT;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &text[..end])
    }
}

/// Requests `phases` sub-action descriptions for `label` from the
/// configured endpoint, retrying transient failures (timeouts, transport
/// errors, HTTP 429/5xx) with exponential backoff and failing fast on
/// everything else. Total blocking time is bounded by
/// `(max_retries + 1) * timeout` plus the backoff sleeps.
pub fn fetch_descriptions(
    config: &LlmConfig,
    label: &str,
    phases: usize,
) -> Result<FetchOutcome, TextError> {
    let prompt = build_prompt(label, phases)?;
    let url = config.completions_url();
    let mut last_transient: Option<TextError> = None;
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            let delay = config.backoff * 2u32.saturating_pow(attempt - 1);
            log::debug!("retry {attempt}/{} for {label:?} after {delay:?}", config.max_retries);
            std::thread::sleep(delay);
        }
        match attempt_fetch(config, &url, &prompt, phases) {
            Ok(descriptions) => return Ok(FetchOutcome { descriptions, retries: attempt }),
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(AttemptError::Transient(e)) => last_transient = Some(e),
        }
    }
    Err(TextError::Exhausted {
        attempts: config.max_retries + 1,
        source: Box::new(last_transient.expect("at least one attempt ran")),
    })
}

/// Loads a description cache: a JSON array of [`AtomicDescriptions`] in the
/// model-output key shape. A missing file is an empty cache.
pub fn load_description_cache(path: &Path) -> Result<Vec<AtomicDescriptions>, TextError> {
    let data = match std::fs::read_to_string(path) {
        Ok(data) => data,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(TextError::Io { path: path.to_path_buf(), source: e }),
    };
    serde_json::from_str(&data).map_err(|e| TextError::BadCache { path: path.to_path_buf(), source: e })
}

/// Writes the cache back as pretty-printed JSON.
pub fn save_description_cache(path: &Path, entries: &[AtomicDescriptions]) -> Result<(), TextError> {
    let json = serde_json::to_string_pretty(entries).expect("serializable");
    std::fs::write(path, json).map_err(|e| TextError::Io { path: path.to_path_buf(), source: e })
}

/// Finds a cache entry by label (case-sensitive) and phase count.
pub fn find_cached<'a>(
    cache: &'a [AtomicDescriptions],
    label: &str,
    phases: usize,
) -> Option<&'a AtomicDescriptions> {
    cache.iter().find(|d| d.label == label && d.descriptions.len() == phases)
}
