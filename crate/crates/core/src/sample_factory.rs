//! Rejection sampling: keep candidates that pass an example's tests and
//! emit them as supervised (context, code) pairs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::dataset::{write_atomic, DatasetExample};
use crate::error::Result;
use crate::eval_harness::{build_context, generate_candidates, run_candidate, self_repair};
use crate::exec_env::Executor;
use crate::llm::{DecodeParams, Gateway};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Sampled(String),
    Debugged(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub example_id: String,
    #[serde(rename = "input")]
    pub input_context: String,
    #[serde(rename = "output")]
    pub target_code: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub pairs: Vec<TrainingPair>,
    /// Examples whose sampling failed, with the error; their ground-truth
    /// pair is still emitted.
    pub skipped: Vec<(String, String)>,
}

/// Per example: the ground-truth pair, then every passing sample, then (with
/// `debug`) every failing sample fixed by a single repair round. The
/// optional `debugger` stands in for the producer on that round.
pub fn harvest(
    examples: &[DatasetExample],
    producer: &Gateway,
    debugger: Option<&Gateway>,
    exec: &Executor,
    n: usize,
    debug: bool,
    decode: &DecodeParams,
) -> HarvestReport {
    let results: Vec<(Vec<TrainingPair>, Option<String>)> = examples
        .par_iter()
        .map(|ex| harvest_one(ex, producer, debugger.unwrap_or(producer), exec, n, debug, decode))
        .collect();
    let mut report = HarvestReport {
        pairs: Vec::new(),
        skipped: Vec::new(),
    };
    for (ex, (pairs, err)) in examples.iter().zip(results) {
        report.pairs.extend(pairs);
        if let Some(e) = err {
            report.skipped.push((ex.example_id.clone(), e));
        }
    }
    report
}

fn harvest_one(
    ex: &DatasetExample,
    producer: &Gateway,
    debugger: &Gateway,
    exec: &Executor,
    n: usize,
    debug: bool,
    decode: &DecodeParams,
) -> (Vec<TrainingPair>, Option<String>) {
    let context = build_context(ex);
    let mut pairs = vec![TrainingPair {
        example_id: ex.example_id.clone(),
        input_context: context.clone(),
        target_code: ex.ground_truth_body.clone(),
        provenance: Provenance::GroundTruth,
    }];
    if n == 0 {
        return (pairs, None);
    }
    if let Err(e) = exec.restore_installs(&ex.example_id, ex.install_commands()) {
        warn!(example = %ex.example_id, "restoring installs failed: {e}");
    }
    let candidates = match generate_candidates(ex, producer, n, decode) {
        Ok(c) => c,
        Err(e) => {
            warn!(example = %ex.example_id, "sampling failed: {e}");
            return (pairs, Some(e.to_string()));
        }
    };
    let mut seen: HashSet<String> = HashSet::from([ex.ground_truth_body.clone()]);
    let mut push = |pairs: &mut Vec<TrainingPair>, code: String, provenance: Provenance| {
        if seen.insert(code.clone()) {
            pairs.push(TrainingPair {
                example_id: ex.example_id.clone(),
                input_context: context.clone(),
                target_code: code,
                provenance,
            });
        }
    };
    for mut c in candidates {
        if c.code_text.is_empty() {
            continue;
        }
        c.outcome = Some(run_candidate(ex, &c.code_text, exec));
        if c.passed() {
            push(&mut pairs, c.code_text, Provenance::Sampled(producer.model().to_string()));
        } else if debug {
            let fixed = self_repair(ex, c, debugger, exec, 1, decode);
            if fixed.passed() {
                push(&mut pairs, fixed.code_text, Provenance::Debugged(debugger.model().to_string()));
            }
        }
    }
    (pairs, None)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerCount {
    pub pairs: usize,
    pub solved_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub pairs: Vec<TrainingPair>,
    pub per_producer: BTreeMap<String, ProducerCount>,
    /// Examples with at least one non-ground-truth pair from any producer.
    pub solved_examples: usize,
}

fn producer_of(p: &Provenance) -> Option<&str> {
    match p {
        Provenance::GroundTruth => None,
        Provenance::Sampled(m) | Provenance::Debugged(m) => Some(m),
    }
}

/// Union of pair sets, deduplicated on (example, code); the first
/// occurrence wins.
pub fn merge_producers(sets: &[Vec<TrainingPair>]) -> MergeReport {
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut pairs = Vec::new();
    let mut per_producer: BTreeMap<String, ProducerCount> = BTreeMap::new();
    let mut solved_by: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    let mut solved: BTreeSet<&str> = BTreeSet::new();
    for p in sets.iter().flatten() {
        if let Some(model) = producer_of(&p.provenance) {
            solved_by.entry(model.to_string()).or_default().insert(&p.example_id);
            solved.insert(&p.example_id);
        }
        if seen.insert((&p.example_id, &p.target_code)) {
            if let Some(model) = producer_of(&p.provenance) {
                per_producer.entry(model.to_string()).or_default().pairs += 1;
            }
            pairs.push(p.clone());
        }
    }
    for (model, ids) in solved_by {
        per_producer.entry(model).or_default().solved_examples = ids.len();
    }
    MergeReport {
        pairs,
        per_producer,
        solved_examples: solved.len(),
    }
}

/// Line-delimited pairs, one JSON object per line.
pub fn write_pairs(path: &Path, pairs: &[TrainingPair]) -> Result<()> {
    let mut out = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_pairs(path: &Path) -> Result<Vec<TrainingPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, code: &str, prov: Provenance) -> TrainingPair {
        TrainingPair {
            example_id: id.into(),
            input_context: String::new(),
            target_code: code.into(),
            provenance: prov,
        }
    }

    #[test]
    fn merge_dedups_and_counts_union() {
        let a = vec![
            pair("1", "x", Provenance::Sampled("A".into())),
            pair("2", "y", Provenance::Sampled("A".into())),
        ];
        let b = vec![
            pair("2", "y", Provenance::Sampled("B".into())),
            pair("3", "z", Provenance::Debugged("B".into())),
        ];
        let m = merge_producers(&[a.clone(), b]);
        assert_eq!(m.pairs.len(), 3);
        assert_eq!(m.solved_examples, 3);
        assert_eq!(m.per_producer["A"], ProducerCount { pairs: 2, solved_examples: 2 });
        assert_eq!(m.per_producer["B"], ProducerCount { pairs: 1, solved_examples: 2 });
        let disjoint = merge_producers(&[a, vec![pair("4", "q", Provenance::GroundTruth); 1]]);
        assert_eq!(disjoint.pairs.len(), 3);
    }

    #[test]
    fn provenance_serializes_with_model() {
        let p = pair("1", "x", Provenance::Debugged("m".into()));
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains(r#""provenance":{"kind":"debugged","model":"m"}"#), "{s}");
        assert!(s.contains(r#""input":"#) && s.contains(r#""output":"x""#));
        let g = serde_json::to_string(&Provenance::GroundTruth).unwrap();
        assert_eq!(g, r#"{"kind":"ground_truth"}"#);
    }
}
