//! Chat-completion gateway: prompt rendering, providers, replay, extraction.

mod extract;
mod provider;
mod templates;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use extract::{extract_blocks, longest, parse_answer, Block, BlockKind};
pub use provider::{HttpProvider, HttpSettings, RecordingProvider, ReplayProvider};
pub use templates::{render, TemplateId};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("unbound: {0}")]
    Unbound(String),
    #[error("replay-miss: {0}")]
    ReplayMiss(String),
    #[error("provider-unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no-code-block")]
    NoCodeBlock,
    #[error("unparseable-verdict")]
    UnparseableVerdict,
    #[error("llm io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Distinguishes repeated draws of the same prompt; 0 for the first.
    pub sample: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: None,
            sample: 0,
        }
    }
}

impl DecodeParams {
    pub fn sample(mut self, index: u32) -> Self {
        self.sample = index;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Request {
    pub template_id: TemplateId,
    pub prompt: String,
    pub params: DecodeParams,
    pub fingerprint: String,
}

pub trait Provider: Send + Sync {
    fn tag(&self) -> &str;
    fn model(&self) -> &str;
    fn complete(&self, request: &Request) -> Result<String, LlmError>;
}

/// Stable hash of the template id and rendered prompt. Repeated draws
/// (`sample > 0`) get their own fingerprint so each can be replayed.
pub fn fingerprint(template_id: TemplateId, prompt: &str, sample: u32) -> String {
    let mut h = Sha256::new();
    h.update(template_id.as_str().as_bytes());
    h.update(b"\n");
    h.update(prompt.as_bytes());
    if sample > 0 {
        h.update(format!("\n#sample={sample}").as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub template_id: TemplateId,
    pub prompt: String,
    pub provider: String,
    pub model: String,
    pub response: String,
    pub blocks: Vec<Block>,
    pub fingerprint: String,
}

impl LlmExchange {
    pub fn code(&self) -> Result<&str, LlmError> {
        longest(&self.blocks, BlockKind::Code).ok_or(LlmError::NoCodeBlock)
    }

    pub fn shell(&self) -> Option<&str> {
        longest(&self.blocks, BlockKind::Shell)
    }

    pub fn answer(&self, vocabulary: &[&str]) -> Result<String, LlmError> {
        parse_answer(&self.response, vocabulary)
    }
}

struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.free.lock().expect("limiter poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter poisoned");
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Shareable client: bounds concurrent requests and optionally appends
/// every exchange to a JSONL log.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    limiter: Arc<Limiter>,
    log: Option<Arc<Mutex<File>>>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, max_concurrent: usize) -> Self {
        Self {
            provider,
            limiter: Arc::new(Limiter {
                free: Mutex::new(max_concurrent.max(1)),
                cv: Condvar::new(),
            }),
            log: None,
        }
    }

    pub fn with_log(mut self, path: &Path) -> Result<Self, LlmError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        self.log = Some(Arc::new(Mutex::new(file)));
        Ok(self)
    }

    pub fn provider_tag(&self) -> &str {
        self.provider.tag()
    }

    pub fn model(&self) -> &str {
        self.provider.model()
    }

    pub fn complete(
        &self,
        template_id: TemplateId,
        prompt: String,
        params: &DecodeParams,
    ) -> Result<LlmExchange, LlmError> {
        let fingerprint = fingerprint(template_id, &prompt, params.sample);
        let request = Request {
            template_id,
            prompt,
            params: params.clone(),
            fingerprint,
        };
        let response = {
            let _slot = self.limiter.acquire();
            self.provider.complete(&request)?
        };
        let exchange = LlmExchange {
            template_id,
            blocks: extract_blocks(&response),
            prompt: request.prompt,
            provider: self.provider.tag().to_string(),
            model: self.provider.model().to_string(),
            response,
            fingerprint: request.fingerprint,
        };
        if let Some(log) = &self.log {
            let line = serde_json::to_string(&exchange).map_err(|e| LlmError::Io(e.to_string()))?;
            let mut f = log.lock().expect("log poisoned");
            writeln!(f, "{line}").map_err(|e| LlmError::Io(e.to_string()))?;
        }
        Ok(exchange)
    }

    /// Renders and completes in one step.
    pub fn ask(
        &self,
        template_id: TemplateId,
        bindings: &[(&str, &str)],
        params: &DecodeParams,
    ) -> Result<LlmExchange, LlmError> {
        let prompt = render(template_id, bindings)?;
        self.complete(template_id, prompt, params)
    }
}
