//! Script execution: runtime, failure classification, and the repair loops.

mod classify;
mod inject;
mod loops;

use std::collections::HashMap;
use std::fs::{self, File};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};
use wait_timeout::ChildExt;

pub use classify::{classify, classify_exception, missing_module_name, terminal_exception, ErrorClass};
pub use inject::{extract_function, inject_candidate, outside_function, remove_function, replace_function};
pub use loops::{coverage_loop, debug_loop, format_missing, CoverageSettings, DebugSettings};

/// Directory a script sees as its cache dir inside the container.
pub const CACHE_ROOT: &str = "/forge_cache";
/// Per-example package directory inside the container.
pub const ENV_MOUNT: &str = "/forge_env";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub branch_rate: f64,
    pub missing_lines: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit_code: i32,
    pub duration: f64,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub error_class: ErrorClass,
    pub coverage: Option<CoverageReport>,
}

impl ExecutionResult {
    pub fn ok(&self) -> bool {
        self.error_class == ErrorClass::None
    }

    /// A candidate that could not be placed into the script at all.
    pub fn rejected(message: impl Into<String>) -> Self {
        Self {
            exit_code: 1,
            error_class: ErrorClass::RuntimeError,
            ..Self::harness(message)
        }
    }

    fn harness(message: impl Into<String>) -> Self {
        Self {
            exit_code: -1,
            duration: 0.0,
            stdout_tail: String::new(),
            stderr_tail: message.into(),
            error_class: ErrorClass::HarnessError,
            coverage: None,
        }
    }
}

/// Coverage block of the shim's report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimCoverage {
    pub branch_rate: f64,
    pub missing: Vec<(usize, String)>,
}

/// The single JSON line the in-container shim prints on stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShimReport {
    pub exit_code: i32,
    pub error_type: Option<String>,
    pub missing_module: Option<String>,
    pub traceback_tail: String,
    pub coverage: Option<ShimCoverage>,
}

impl ShimReport {
    /// Parses shim stdout, which must be exactly one JSON object line.
    pub fn parse(stdout: &str) -> Result<Self, String> {
        let mut lines = stdout.lines().filter(|l| !l.trim().is_empty());
        let line = lines.next().ok_or("shim printed nothing")?;
        if lines.next().is_some() {
            return Err("shim printed more than one line".into());
        }
        serde_json::from_str(line).map_err(|e| format!("bad shim report: {e}"))
    }

    pub fn error_class(&self) -> ErrorClass {
        if self.exit_code == 0 {
            return ErrorClass::None;
        }
        match self.error_type.as_deref() {
            Some("harness") => ErrorClass::HarnessError,
            Some("timeout") => ErrorClass::Timeout,
            Some(ty) => match (&self.missing_module, classify_exception(ty, &self.traceback_tail)) {
                (Some(m), _) if !m.is_empty() => ErrorClass::MissingModule(m.clone()),
                (_, class) => class,
            },
            None => ErrorClass::RuntimeError,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Runtime {
    /// Runs the interpreter on the host inside a per-run scratch directory.
    Local,
    /// Runs every command through `<engine> run` in the given image.
    Container { engine: String, image: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecSettings {
    pub runtime: Runtime,
    pub python: String,
    pub timeout_s: u64,
    pub tail_bytes: usize,
    /// Shell template with `{python}`, `{env}` and `{package}` placeholders.
    pub installer: String,
    pub max_installs: usize,
    /// Shim command; coverage runs need it.
    pub shim: Option<String>,
    /// Root for per-example package directories.
    pub envs_root: PathBuf,
}

impl Default for ExecSettings {
    fn default() -> Self {
        Self {
            runtime: Runtime::Local,
            python: "python3".into(),
            timeout_s: 120,
            tail_bytes: 8192,
            installer: "{python} -m pip install --quiet --target {env} {package}".into(),
            max_installs: 5,
            shim: None,
            envs_root: std::env::temp_dir().join("forge-envs"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub coverage: bool,
    pub target_name: String,
}

/// Import names whose distribution is published under another name.
pub fn package_for_module(module: &str) -> &str {
    let top = module.split('.').next().unwrap_or(module);
    match top {
        "bs4" => "beautifulsoup4",
        "cv2" => "opencv-python",
        "PIL" => "Pillow",
        "sklearn" => "scikit-learn",
        "yaml" => "pyyaml",
        "dateutil" => "python-dateutil",
        "dotenv" => "python-dotenv",
        "jwt" => "PyJWT",
        "serial" => "pyserial",
        "Crypto" => "pycryptodome",
        "attr" => "attrs",
        "skimage" => "scikit-image",
        _ => top,
    }
}

fn package_name_ok(p: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z0-9][A-Za-z0-9._\-]*$").expect("regex"))
        .is_match(p)
}

struct Prepared {
    scratch: tempfile::TempDir,
    env_dir: PathBuf,
}

pub struct Executor {
    settings: ExecSettings,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Executor {
    pub fn new(settings: ExecSettings) -> Self {
        Self {
            settings,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn settings(&self) -> &ExecSettings {
        &self.settings
    }

    pub fn coverage_enabled(&self) -> bool {
        self.settings.shim.is_some()
    }

    pub fn env_dir(&self, example_id: &str) -> PathBuf {
        self.settings.envs_root.join(example_id)
    }

    fn env_lock(&self, example_id: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table poisoned")
            .entry(example_id.to_string())
            .or_default()
            .clone()
    }

    fn prepare(&self, example_id: &str) -> std::io::Result<Prepared> {
        let scratch = tempfile::Builder::new().prefix("forge-run-").tempdir()?;
        let env_dir = self.env_dir(example_id);
        fs::create_dir_all(&env_dir)?;
        Ok(Prepared { scratch, env_dir })
    }

    fn logical_cache(example_id: &str) -> String {
        format!("{CACHE_ROOT}/{example_id}")
    }

    /// Runs a shell command for an example; returns (exit, timed_out, stdout, stderr, secs).
    fn shell(&self, example_id: &str, prep: &Prepared, command: &str) -> std::io::Result<(i32, bool, String, String, f64)> {
        let scratch = prep.scratch.path();
        let mut cmd = match &self.settings.runtime {
            Runtime::Local => {
                let mut c = Command::new("sh");
                c.arg("-c").arg(command).current_dir(scratch);
                c.env("PYTHONPATH", &prep.env_dir)
                    .env("PIP_TARGET", &prep.env_dir)
                    .env("FORGE_CACHE_DIR", scratch);
                c
            }
            Runtime::Container { engine, image } => {
                let logical = Self::logical_cache(example_id);
                let mut c = Command::new(engine);
                c.arg("run")
                    .arg("--rm")
                    .arg("-v")
                    .arg(format!("{}:{logical}", scratch.display()))
                    .arg("-v")
                    .arg(format!("{}:{ENV_MOUNT}", prep.env_dir.display()))
                    .arg("-e")
                    .arg(format!("PYTHONPATH={ENV_MOUNT}"))
                    .arg("-e")
                    .arg(format!("PIP_TARGET={ENV_MOUNT}"))
                    .arg("-e")
                    .arg(format!("FORGE_CACHE_DIR={logical}"))
                    .arg("-w")
                    .arg(&logical)
                    .arg(image)
                    .arg("sh")
                    .arg("-c")
                    .arg(command);
                c
            }
        };
        cmd.env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::null());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let out_path = scratch.join("proc.out");
        let err_path = scratch.join("proc.err");
        cmd.stdout(File::create(&out_path)?).stderr(File::create(&err_path)?);
        let started = Instant::now();
        let mut child = cmd.spawn()?;
        let limit = Duration::from_secs(self.settings.timeout_s);
        let (code, timed_out) = match child.wait_timeout(limit)? {
            Some(status) => (status.code().unwrap_or(-1), false),
            None => {
                kill_group(child.id());
                let _ = child.kill();
                let _ = child.wait();
                (-9, true)
            }
        };
        let secs = started.elapsed().as_secs_f64();
        let stdout = fs::read_to_string(&out_path).unwrap_or_default();
        let stderr = fs::read_to_string(&err_path).unwrap_or_default();
        Ok((code, timed_out, stdout, stderr, secs))
    }

    /// Rewrites host paths in output back to their logical names.
    fn scrub(&self, example_id: &str, prep: &Prepared, text: &str) -> String {
        text.replace(
            &prep.scratch.path().display().to_string(),
            &Self::logical_cache(example_id),
        )
        .replace(&prep.env_dir.display().to_string(), ENV_MOUNT)
    }

    fn tail(&self, text: &str) -> String {
        tail(text, self.settings.tail_bytes)
    }

    /// Executes a script and classifies the outcome.
    pub fn run(&self, example_id: &str, script_text: &str, opts: &RunOptions) -> ExecutionResult {
        let prep = match self.prepare(example_id) {
            Ok(p) => p,
            Err(e) => return ExecutionResult::harness(format!("scratch setup failed: {e}")),
        };
        let logical = Self::logical_cache(example_id);
        let (text, script_path) = match &self.settings.runtime {
            Runtime::Local => (
                script_text.replace(&logical, &prep.scratch.path().display().to_string()),
                prep.scratch.path().join("script.py").display().to_string(),
            ),
            Runtime::Container { .. } => (script_text.to_string(), format!("{logical}/script.py")),
        };
        if let Err(e) = fs::write(prep.scratch.path().join("script.py"), text) {
            return ExecutionResult::harness(format!("cannot write script: {e}"));
        }
        let command = if opts.coverage {
            let Some(shim) = &self.settings.shim else {
                return ExecutionResult::harness("coverage requested without a shim");
            };
            format!(
                "exec {shim} --script {} --target {} --coverage",
                shell_quote(&script_path),
                shell_quote(&opts.target_name)
            )
        } else {
            format!("exec {} {}", self.settings.python, shell_quote(&script_path))
        };
        let (code, timed_out, stdout, stderr, secs) = match self.shell(example_id, &prep, &command) {
            Ok(r) => r,
            Err(e) => return ExecutionResult::harness(format!("runtime unavailable: {e}")),
        };
        if !opts.coverage {
            let stderr = self.scrub(example_id, &prep, &stderr);
            return ExecutionResult {
                exit_code: code,
                duration: secs,
                stdout_tail: self.tail(&self.scrub(example_id, &prep, &stdout)),
                error_class: classify(code, timed_out, &stderr),
                stderr_tail: self.tail(&stderr),
                coverage: None,
            };
        }
        if timed_out {
            return ExecutionResult {
                exit_code: code,
                duration: secs,
                stdout_tail: String::new(),
                stderr_tail: String::new(),
                error_class: ErrorClass::Timeout,
                coverage: None,
            };
        }
        let report = match ShimReport::parse(&stdout) {
            Ok(r) => r,
            Err(e) => {
                warn!(%example_id, "{e}");
                let mut r = ExecutionResult::harness(format!("{e}\n{}", self.tail(&stderr)));
                r.duration = secs;
                return r;
            }
        };
        let script_err = fs::read_to_string(prep.scratch.path().join("err.log")).unwrap_or_default();
        let script_out = fs::read_to_string(prep.scratch.path().join("out.log")).unwrap_or_default();
        let stderr_text = if script_err.is_empty() { report.traceback_tail.clone() } else { script_err };
        ExecutionResult {
            exit_code: report.exit_code,
            duration: secs,
            stdout_tail: self.tail(&self.scrub(example_id, &prep, &script_out)),
            stderr_tail: self.tail(&self.scrub(example_id, &prep, &stderr_text)),
            error_class: report.error_class(),
            coverage: report.coverage.as_ref().map(|c| CoverageReport {
                branch_rate: c.branch_rate,
                missing_lines: c.missing.clone(),
            }),
        }
    }

    /// Installs one package into the example's environment.
    pub fn install(&self, example_id: &str, package: &str) -> Result<(), String> {
        if !package_name_ok(package) {
            return Err(format!("refusing package name {package:?}"));
        }
        let env = match &self.settings.runtime {
            Runtime::Local => self.env_dir(example_id).display().to_string(),
            Runtime::Container { .. } => ENV_MOUNT.to_string(),
        };
        let command = self
            .settings
            .installer
            .replace("{python}", &self.settings.python)
            .replace("{env}", &shell_quote(&env))
            .replace("{package}", package);
        let (code, stderr) = self.shell_in_env(example_id, &command)?;
        if code == 0 {
            Ok(())
        } else {
            Err(stderr)
        }
    }

    /// Runs a declared shell command (e.g. from a debugging answer) with
    /// the example's package directory as the install target.
    pub fn run_declared(&self, example_id: &str, command: &str) -> Result<(), String> {
        let (code, stderr) = self.shell_in_env(example_id, command)?;
        if code == 0 {
            Ok(())
        } else {
            Err(stderr)
        }
    }

    fn shell_in_env(&self, example_id: &str, command: &str) -> Result<(i32, String), String> {
        let lock = self.env_lock(example_id);
        let _guard = lock.lock().expect("env lock poisoned");
        let prep = self.prepare(example_id).map_err(|e| e.to_string())?;
        let (code, timed_out, _, stderr, _) = self
            .shell(example_id, &prep, command)
            .map_err(|e| format!("runtime unavailable: {e}"))?;
        debug!(%example_id, code, "ran {command}");
        if timed_out {
            return Err("timed out".into());
        }
        Ok((code, self.tail(&self.scrub(example_id, &prep, &stderr))))
    }

    /// Installs missing modules and re-runs until the script stops failing
    /// on imports. Installed packages are appended to `installs` as commands.
    pub fn install_and_retry(
        &self,
        example_id: &str,
        script_text: &str,
        opts: &RunOptions,
        mut result: ExecutionResult,
        installs: &mut Vec<String>,
    ) -> ExecutionResult {
        let mut seen: Vec<String> = Vec::new();
        while let ErrorClass::MissingModule(module) = &result.error_class {
            let package = package_for_module(module).to_string();
            if seen.contains(&package) || seen.len() >= self.settings.max_installs {
                result.error_class = ErrorClass::InstallFailure;
                return result;
            }
            seen.push(package.clone());
            if let Err(e) = self.install(example_id, &package) {
                warn!(%example_id, %package, "install failed");
                result.error_class = ErrorClass::InstallFailure;
                result.stderr_tail = self.tail(&format!("{}\n{e}", result.stderr_tail));
                return result;
            }
            let command = format!("pip install {package}");
            if !installs.contains(&command) {
                installs.push(command);
            }
            result = self.run(example_id, script_text, opts);
        }
        result
    }

    /// Runs a script, then installs missing modules as needed.
    pub fn run_with_installs(
        &self,
        example_id: &str,
        script_text: &str,
        opts: &RunOptions,
        installs: &mut Vec<String>,
    ) -> ExecutionResult {
        let first = self.run(example_id, script_text, opts);
        self.install_and_retry(example_id, script_text, opts, first, installs)
    }

    /// Replays recorded install commands into a fresh environment.
    pub fn restore_installs(&self, example_id: &str, installs: &[String]) -> Result<(), String> {
        for cmd in installs {
            match cmd.strip_prefix("pip install ") {
                Some(pkg) if package_name_ok(pkg.trim()) => self.install(example_id, pkg.trim())?,
                _ => self.run_declared(example_id, cmd)?,
            }
        }
        Ok(())
    }
}

fn kill_group(pid: u32) {
    #[cfg(unix)]
    {
        let _ = Command::new("kill")
            .args(["-s", "KILL", "--"])
            .arg(format!("-{pid}"))
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
    }
}

pub fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "/._-=:".contains(c)) {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', "'\\''"))
    }
}

/// Last `max` bytes of `text`, cut at a character boundary.
pub fn tail(text: &str, max: usize) -> String {
    if text.len() <= max {
        return text.to_string();
    }
    let mut start = text.len() - max;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn executor(dir: &Path) -> Executor {
        Executor::new(ExecSettings {
            envs_root: dir.join("envs"),
            timeout_s: 5,
            ..ExecSettings::default()
        })
    }

    #[test]
    fn plain_runs_classify() {
        let dir = tempfile::tempdir().unwrap();
        let ex = executor(dir.path());
        let ok = ex.run("e1", "print('hi')\n", &RunOptions::default());
        assert_eq!(ok.error_class, ErrorClass::None);
        assert_eq!(ok.stdout_tail, "hi\n");
        let bad = ex.run("e1", "assert 1 == 2\n", &RunOptions::default());
        assert_eq!(bad.error_class, ErrorClass::AssertionFailure);
        assert!(bad.stderr_tail.contains("/forge_cache/e1/script.py"), "{}", bad.stderr_tail);
        let missing = ex.run("e1", "import surely_not_installed_mod\n", &RunOptions::default());
        assert_eq!(
            missing.error_class,
            ErrorClass::MissingModule("surely_not_installed_mod".into())
        );
    }

    #[test]
    fn cache_dir_is_private_scratch() {
        let dir = tempfile::tempdir().unwrap();
        let ex = executor(dir.path());
        let script = "import os\np = os.path.join('/forge_cache/e2', 'x.txt')\nopen(p, 'w').write('1')\nassert os.path.exists(p)\n";
        assert!(ex.run("e2", script, &RunOptions::default()).ok());
        assert!(!Path::new("/forge_cache/e2/x.txt").exists());
    }

    #[test]
    fn timeouts_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let mut ex = executor(dir.path());
        ex.settings.timeout_s = 1;
        let started = Instant::now();
        let r = ex.run("e3", "import time\ntime.sleep(30)\n", &RunOptions::default());
        assert_eq!(r.error_class, ErrorClass::Timeout);
        assert!(started.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn missing_container_engine_is_a_harness_error() {
        let dir = tempfile::tempdir().unwrap();
        let ex = Executor::new(ExecSettings {
            runtime: Runtime::Container {
                engine: "forge-no-such-engine".into(),
                image: "img".into(),
            },
            envs_root: dir.path().join("envs"),
            ..ExecSettings::default()
        });
        let r = ex.run("e4", "print(1)\n", &RunOptions::default());
        assert_eq!(r.error_class, ErrorClass::HarnessError);
    }

    #[test]
    fn coverage_needs_a_shim() {
        let dir = tempfile::tempdir().unwrap();
        let r = executor(dir.path()).run(
            "e5",
            "print(1)\n",
            &RunOptions {
                coverage: true,
                target_name: "f".into(),
            },
        );
        assert_eq!(r.error_class, ErrorClass::HarnessError);
    }

    #[test]
    fn shim_report_schema() {
        let line = r#"{"exit_code":1,"error_type":"ModuleNotFoundError","missing_module":"bs4","traceback_tail":"...","coverage":null}"#;
        let r = ShimReport::parse(line).unwrap();
        assert_eq!(r.error_class(), ErrorClass::MissingModule("bs4".into()));
        let line = r#"{"exit_code":0,"error_type":null,"missing_module":null,"traceback_tail":"","coverage":{"branch_rate":0.5,"missing":[[4,"    return -x"]]}}"#;
        let r = ShimReport::parse(line).unwrap();
        assert_eq!(r.error_class(), ErrorClass::None);
        assert_eq!(r.coverage.unwrap().missing, vec![(4, "    return -x".to_string())]);
        assert!(ShimReport::parse("").is_err());
        assert!(ShimReport::parse(&format!("{line}\n{line}")).is_err());
        assert!(ShimReport::parse(r#"{"exit_code":0}"#).is_err());
        let harness = r#"{"exit_code":3,"error_type":"harness","missing_module":null,"traceback_tail":"boom","coverage":null}"#;
        assert_eq!(ShimReport::parse(harness).unwrap().error_class(), ErrorClass::HarnessError);
    }

    #[test]
    fn package_aliases() {
        assert_eq!(package_for_module("bs4"), "beautifulsoup4");
        assert_eq!(package_for_module("yaml"), "pyyaml");
        assert_eq!(package_for_module("sklearn.linear_model"), "scikit-learn");
        assert_eq!(package_for_module("requests"), "requests");
    }

    #[test]
    fn tails_respect_char_boundaries() {
        assert_eq!(tail("abcdef", 3), "def");
        assert_eq!(tail("aé", 1), "");
        assert_eq!(tail("short", 100), "short");
    }

    #[test]
    fn quoting() {
        assert_eq!(shell_quote("/a/b.py"), "/a/b.py");
        assert_eq!(shell_quote("it's"), "'it'\\''s'");
    }
}
