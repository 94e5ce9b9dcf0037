use crate::error::{Error, Result};
use crate::python::syntax::{indent, site_text};
use crate::python::PySource;
use crate::script::{find_target, new_implementation_name};

/// Places `impl_source`'s function into the script as
/// `<target>_new_implementation`, right after the target definition.
/// Any previous new implementation is replaced; nothing else changes.
pub fn inject_candidate(
    script_text: &str,
    impl_source: &str,
    target_name: &str,
    target_class: Option<&str>,
) -> Result<String> {
    let impl_src = PySource::parse(impl_source.to_string())
        .map_err(|e| Error::BadCandidate(e.to_string()))?;
    let candidates = impl_src.top_level_functions();
    let site = candidates
        .iter()
        .find(|f| f.name == target_name)
        .or_else(|| candidates.first())
        .ok_or_else(|| Error::BadCandidate("no function definition".into()))?;
    let def_text = site_text(&impl_src, site, true);
    let new_name = new_implementation_name(target_name);
    let renamed = rename_def(&def_text, &site.name, &new_name);

    let cleaned = remove_function(script_text, &new_name, target_class);
    let src = PySource::parse(cleaned.clone()).map_err(|e| Error::BadCandidate(format!("script: {e}")))?;
    let target = find_target(&src, target_name, target_class)
        .ok_or_else(|| Error::BadCandidate(format!("script has no {target_name}")))?;
    let pad = " ".repeat(target.column);
    let block = indent(renamed.trim_end(), &pad);
    let at = target.full_range.end;
    let mut out = String::with_capacity(cleaned.len() + block.len() + 4);
    out.push_str(&cleaned[..at]);
    out.push_str("\n\n");
    out.push_str(&block);
    out.push_str(&cleaned[at..]);
    Ok(out)
}

fn rename_def(def_text: &str, old: &str, new: &str) -> String {
    let needle = format!("def {old}");
    match def_text.find(&needle) {
        Some(i) => format!("{}def {new}{}", &def_text[..i], &def_text[i + needle.len()..]),
        None => def_text.to_string(),
    }
}

/// Removes every definition of `name` (at top level, or inside `class`),
/// together with the blank lines that precede it.
pub fn remove_function(script_text: &str, name: &str, class: Option<&str>) -> String {
    let Ok(src) = PySource::parse(script_text.to_string()) else {
        return script_text.to_string();
    };
    let mut ranges: Vec<(usize, usize)> = src
        .all_functions()
        .into_iter()
        .filter(|f| f.name == name && (f.class_name.is_none() || f.class_name.as_deref() == class))
        .map(|f| (line_start(script_text, f.full_range.start), f.full_range.end))
        .collect();
    if ranges.is_empty() {
        return script_text.to_string();
    }
    ranges.sort();
    let mut out = String::new();
    let mut last = 0;
    for (start, end) in ranges {
        let keep = script_text[last..start].trim_end_matches(['\n', ' ', '\t']);
        out.push_str(keep);
        last = end;
    }
    out.push_str(&script_text[last..]);
    out
}

fn line_start(text: &str, at: usize) -> usize {
    text[..at].rfind('\n').map(|i| i + 1).unwrap_or(0)
}

/// Replaces the top-level function `name` with `new_def` (column 0).
pub fn replace_function(script_text: &str, name: &str, new_def: &str) -> Option<String> {
    let src = PySource::parse(script_text.to_string()).ok()?;
    let site = src.find_function(name, None)?;
    Some(format!(
        "{}{}{}",
        &script_text[..site.full_range.start],
        new_def.trim_end(),
        &script_text[site.full_range.end..]
    ))
}

/// The top-level function `name` from a response that may hold either the
/// function alone or a whole script.
pub fn extract_function(code: &str, name: &str) -> Option<String> {
    let src = PySource::parse(code.to_string()).ok()?;
    let site = src.find_function(name, None)?;
    Some(site_text(&src, &site, true))
}

/// Text outside the named top-level function, used to confirm an edit
/// touched nothing else.
pub fn outside_function(script_text: &str, name: &str) -> Option<String> {
    let src = PySource::parse(script_text.to_string()).ok()?;
    let site = src.find_function(name, None)?;
    Some(format!(
        "{}{}",
        &script_text[..site.full_range.start],
        &script_text[site.full_range.end..]
    ))
}
