//! Pipeline configuration: one TOML file with standard defaults, validated
//! before any work starts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec_env::{CoverageSettings, DebugSettings, ExecSettings, Executor, Runtime};
use crate::ingest::CurationPolicy;
use crate::llm::{DecodeParams, Gateway, HttpProvider, HttpSettings, Provider, RecordingProvider, ReplayProvider};
use crate::sandboxer::{SandboxSettings, SanityLimits};
use crate::test_builder::TestSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub sandbox_regenerations: usize,
    pub test_regenerations: usize,
    pub debug_iterations: usize,
    pub coverage_iterations: usize,
    pub max_installs: usize,
    pub repair_cap: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            sandbox_regenerations: 3,
            test_regenerations: 3,
            debug_iterations: 3,
            coverage_iterations: 3,
            max_installs: 5,
            repair_cap: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub target_delta: usize,
    pub script_delta: usize,
    pub min_asserts: usize,
    pub coverage_train: f64,
    pub coverage_eval: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            target_delta: 20,
            script_delta: 50,
            min_asserts: 3,
            coverage_train: 0.80,
            coverage_eval: 1.00,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// Serve responses from the cache directory only.
    Replay,
    /// Call the endpoint and store every response in the cache directory.
    Record,
    /// Call the endpoint without caching.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model: String,
    pub cache: Option<PathBuf>,
    pub endpoint: String,
    pub api_key_env: Option<String>,
    pub retries: u32,
    pub backoff_ms: u64,
    pub request_timeout_s: u64,
    pub max_concurrent: usize,
    pub temperature: f64,
    /// Temperature for candidate sampling in evaluation and harvesting.
    pub sample_temperature: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        let http = HttpSettings::default();
        Self {
            kind: ProviderKind::Replay,
            model: http.model,
            cache: None,
            endpoint: http.endpoint,
            api_key_env: http.api_key_env,
            retries: http.retries,
            backoff_ms: http.backoff_ms,
            request_timeout_s: http.timeout_s,
            max_concurrent: 4,
            temperature: 0.0,
            sample_temperature: 0.8,
        }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Gateway> {
        let http = || {
            Arc::new(HttpProvider::new(HttpSettings {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                api_key_env: self.api_key_env.clone(),
                retries: self.retries,
                backoff_ms: self.backoff_ms,
                timeout_s: self.request_timeout_s,
            }))
        };
        let cache = || {
            self.cache
                .clone()
                .ok_or_else(|| Error::Config(format!("provider {:?} needs a cache directory", self.kind)))
        };
        let provider: Arc<dyn Provider> = match self.kind {
            ProviderKind::Replay => Arc::new(ReplayProvider::new(cache()?).with_model(&self.model)),
            ProviderKind::Record => Arc::new(RecordingProvider::new(http(), cache()?)?),
            ProviderKind::Http => http(),
        };
        Ok(Gateway::new(provider, self.max_concurrent.max(1)))
    }

    pub fn decode(&self) -> DecodeParams {
        DecodeParams {
            temperature: self.temperature,
            ..DecodeParams::default()
        }
    }

    pub fn sample_decode(&self) -> DecodeParams {
        DecodeParams {
            temperature: self.sample_temperature,
            ..DecodeParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    pub runtime: Runtime,
    pub python: String,
    pub timeout_s: u64,
    pub tail_bytes: usize,
    pub installer: String,
    pub shim: Option<String>,
    pub envs_root: Option<PathBuf>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        let d = ExecSettings::default();
        Self {
            runtime: d.runtime,
            python: d.python,
            timeout_s: d.timeout_s,
            tail_bytes: d.tail_bytes,
            installer: d.installer,
            shim: d.shim,
            envs_root: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub workdir: PathBuf,
    /// Repository list, one JSON object per line.
    pub repos: Option<PathBuf>,
    /// Directory of checkouts, one per subdirectory.
    pub repo_dir: Option<PathBuf>,
    pub workers: usize,
    /// Permits an eval coverage threshold other than 1.0.
    pub allow_nonpaper: bool,
    pub curation: CurationPolicy,
    pub budgets: Budgets,
    pub thresholds: Thresholds,
    pub provider: ProviderConfig,
    pub exec: ExecConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("work"),
            repos: None,
            repo_dir: None,
            workers: 4,
            allow_nonpaper: false,
            curation: CurationPolicy::default(),
            budgets: Budgets::default(),
            thresholds: Thresholds::default(),
            provider: ProviderConfig::default(),
            exec: ExecConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a config file. Relative paths are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workdir);
        for p in [&mut self.repos, &mut self.repo_dir, &mut self.provider.cache, &mut self.exec.envs_root]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        if !(0.0 < t.coverage_train && t.coverage_train <= t.coverage_eval && t.coverage_eval <= 1.0) {
            return Err(Error::Config(format!(
                "coverage thresholds must satisfy 0 < train ({}) <= eval ({}) <= 1",
                t.coverage_train, t.coverage_eval
            )));
        }
        if t.coverage_eval != 1.0 && !self.allow_nonpaper {
            return Err(Error::Config("eval threshold must be 1.0 unless --allow-nonpaper".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.repos.is_some() == self.repo_dir.is_some() {
            return Err(Error::Config("exactly one of repos and repo_dir must be set".into()));
        }
        if self.curation.train_window.overlaps(&self.curation.eval_window) {
            return Err(Error::Config("train and eval windows overlap".into()));
        }
        Ok(())
    }

    /// Digest of every setting that can change outputs. Paths are left out
    /// so relocating a checkout keeps the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workdir = PathBuf::new();
        c.repos = None;
        c.repo_dir = None;
        c.provider.cache = None;
        c.exec.envs_root = None;
        c.workers = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn limits(&self) -> SanityLimits {
        SanityLimits {
            target_delta: self.thresholds.target_delta,
            script_delta: self.thresholds.script_delta,
        }
    }

    pub fn coverage_threshold(&self) -> f64 {
        match self.curation.split {
            crate::ingest::Split::Train => self.thresholds.coverage_train,
            crate::ingest::Split::Eval => self.thresholds.coverage_eval,
        }
    }

    pub fn sandbox_settings(&self) -> SandboxSettings {
        SandboxSettings {
            regenerations: self.budgets.sandbox_regenerations,
            limits: self.limits(),
            decode: self.provider.decode(),
        }
    }

    pub fn test_settings(&self) -> TestSettings {
        TestSettings {
            regenerations: self.budgets.test_regenerations,
            limits: self.limits(),
            min_asserts: self.thresholds.min_asserts,
            decode: self.provider.decode(),
        }
    }

    pub fn debug_settings(&self) -> DebugSettings {
        DebugSettings {
            iterations: self.budgets.debug_iterations,
            limits: self.limits(),
            min_asserts: self.thresholds.min_asserts,
            decode: self.provider.decode(),
        }
    }

    pub fn coverage_settings(&self) -> CoverageSettings {
        CoverageSettings {
            iterations: self.budgets.coverage_iterations,
            limits: self.limits(),
            min_asserts: self.thresholds.min_asserts,
            decode: self.provider.decode(),
        }
    }

    pub fn exec_settings(&self) -> ExecSettings {
        let e = &self.exec;
        ExecSettings {
            runtime: e.runtime.clone(),
            python: e.python.clone(),
            timeout_s: e.timeout_s,
            tail_bytes: e.tail_bytes,
            installer: e.installer.clone(),
            max_installs: self.budgets.max_installs,
            shim: e.shim.clone(),
            envs_root: e.envs_root.clone().unwrap_or_else(|| self.workdir.join("envs")),
        }
    }

    pub fn executor(&self) -> Executor {
        Executor::new(self.exec_settings())
    }
}
