use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "module", rename_all = "snake_case")]
pub enum ErrorClass {
    None,
    MissingModule(String),
    AssertionFailure,
    RuntimeError,
    Timeout,
    InstallFailure,
    HarnessError,
}

impl ErrorClass {
    pub fn tag(&self) -> &'static str {
        match self {
            ErrorClass::None => "none",
            ErrorClass::MissingModule(_) => "missing_module",
            ErrorClass::AssertionFailure => "assertion_failure",
            ErrorClass::RuntimeError => "runtime_error",
            ErrorClass::Timeout => "timeout",
            ErrorClass::InstallFailure => "install_failure",
            ErrorClass::HarnessError => "harness_error",
        }
    }
}

/// The terminal exception of the last traceback in `stderr`, as
/// `(type, message)`.
pub fn terminal_exception(stderr: &str) -> Option<(String, String)> {
    let lines: Vec<&str> = stderr.lines().collect();
    let start = lines
        .iter()
        .rposition(|l| l.starts_with("Traceback (most recent call last)"))
        .map(|i| i + 1)
        .unwrap_or(0);
    lines[start..].iter().rev().find_map(|l| exception_line(l))
}

fn exception_line(line: &str) -> Option<(String, String)> {
    if line.is_empty() || line.starts_with(char::is_whitespace) {
        return None;
    }
    let (head, msg) = match line.split_once(':') {
        Some((h, m)) => (h, m.trim().to_string()),
        None => (line.trim_end(), String::new()),
    };
    let valid = !head.is_empty()
        && head.split('.').all(|part| {
            let mut chars = part.chars();
            chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        });
    let simple = head.rsplit('.').next().unwrap_or(head);
    let looks_like_exception = simple.ends_with("Error")
        || simple.ends_with("Exception")
        || simple.ends_with("Exit")
        || simple.ends_with("Interrupt")
        || simple.ends_with("Warning")
        || simple == "StopIteration";
    (valid && looks_like_exception).then(|| (head.to_string(), msg))
}

/// Module name from `No module named 'x.y'` (quotes optional).
pub fn missing_module_name(message: &str) -> Option<String> {
    let rest = message.split("No module named").nth(1)?.trim();
    let name = rest
        .trim_matches(|c: char| c == '\'' || c == '"')
        .split(|c: char| c == '\'' || c == '"' || c.is_whitespace() || c == ';')
        .next()?
        .trim();
    (!name.is_empty()).then(|| name.to_string())
}

/// Classifies a finished process from its exit status and stderr.
pub fn classify(exit_code: i32, timed_out: bool, stderr: &str) -> ErrorClass {
    if timed_out {
        return ErrorClass::Timeout;
    }
    if exit_code == 0 {
        return ErrorClass::None;
    }
    match terminal_exception(stderr) {
        Some((ty, msg)) => classify_exception(&ty, &msg),
        None => ErrorClass::RuntimeError,
    }
}

/// Classifies an exception type name and message.
pub fn classify_exception(ty: &str, msg: &str) -> ErrorClass {
    let simple = ty.rsplit('.').next().unwrap_or(ty);
    match simple {
        "ModuleNotFoundError" | "ImportError" => match missing_module_name(msg) {
            Some(m) => ErrorClass::MissingModule(m),
            None => ErrorClass::RuntimeError,
        },
        "AssertionError" => ErrorClass::AssertionFailure,
        "TimeoutExpired" => ErrorClass::Timeout,
        _ => ErrorClass::RuntimeError,
    }
}
