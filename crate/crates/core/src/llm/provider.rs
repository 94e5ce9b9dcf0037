use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::warn;

use super::{LlmError, Provider, Request};

/// Answers from a directory holding one file per request fingerprint.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    dir: PathBuf,
    model: String,
}

impl ReplayProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            model: "replay".into(),
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Provider for ReplayProvider {
    fn tag(&self) -> &str {
        "replay"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &Request) -> Result<String, LlmError> {
        match fs::read_to_string(self.dir.join(&request.fingerprint)) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == ErrorKind::NotFound => {
                Err(LlmError::ReplayMiss(request.fingerprint.clone()))
            }
            Err(e) => Err(LlmError::Io(e.to_string())),
        }
    }
}

/// Forwards to another provider and stores each response under its
/// fingerprint, producing a cache a [`ReplayProvider`] can serve.
pub struct RecordingProvider {
    inner: Arc<dyn Provider>,
    dir: PathBuf,
    write: Mutex<()>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn Provider>, dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| LlmError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            inner,
            dir,
            write: Mutex::new(()),
        })
    }
}

impl Provider for RecordingProvider {
    fn tag(&self) -> &str {
        self.inner.tag()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, request: &Request) -> Result<String, LlmError> {
        let response = self.inner.complete(request)?;
        let _guard = self.write.lock().expect("recorder poisoned");
        let path = self.dir.join(&request.fingerprint);
        let tmp = self.dir.join(format!(".{}.tmp", request.fingerprint));
        fs::write(&tmp, &response)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        Ok(response)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_s: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            retries: 3,
            backoff_ms: 1000,
            timeout_s: 120,
        }
    }
}

/// Minimal chat-completion client: `{model, messages, temperature}` in,
/// `choices[0].message.content` out.
pub struct HttpProvider {
    settings: HttpSettings,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpProvider {
    pub fn new(settings: HttpSettings) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(settings.timeout_s))
            .build();
        let token = settings
            .api_key_env
            .as_deref()
            .and_then(|k| std::env::var(k).ok());
        Self {
            settings,
            agent,
            token,
        }
    }

    fn attempt(&self, request: &Request) -> Result<String, (bool, String)> {
        let mut body = json!({
            "model": self.settings.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
        });
        if let Some(m) = request.params.max_tokens {
            body["max_tokens"] = json!(m);
        }
        let mut req = self.agent.post(&self.settings.endpoint);
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let transient = code == 429 || code >= 500;
                let text = r.into_string().unwrap_or_default();
                return Err((transient, format!("status {code}: {text}")));
            }
            Err(e) => return Err((true, e.to_string())),
        };
        let value: serde_json::Value = resp.into_json().map_err(|e| (true, e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, format!("malformed response: {value}")))
    }
}

impl Provider for HttpProvider {
    fn tag(&self) -> &str {
        "http"
    }

    fn model(&self) -> &str {
        &self.settings.model
    }

    fn complete(&self, request: &Request) -> Result<String, LlmError> {
        let mut delay = self.settings.backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.settings.retries {
            match self.attempt(request) {
                Ok(s) => return Ok(s),
                Err((transient, msg)) => {
                    warn!(attempt, "completion failed: {msg}");
                    last = msg;
                    if !transient {
                        break;
                    }
                    if attempt < self.settings.retries {
                        thread::sleep(Duration::from_millis(delay));
                        delay = delay.saturating_mul(2);
                    }
                }
            }
        }
        Err(LlmError::ProviderUnavailable(last))
    }
}
