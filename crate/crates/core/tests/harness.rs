//! Evaluation harness and rejection sampling replayed against the golden
//! dataset.

mod support;

use std::collections::BTreeMap;

use forge_core::dataset::{self, DatasetExample};
use forge_core::eval_harness::{build_context, evaluate, ground_truth_candidate, run_candidate, EvalSettings};
use forge_core::exec_env::Executor;
use forge_core::ingest::Split;
use forge_core::llm::Gateway;
use forge_core::sample_factory::{harvest, merge_producers, read_pairs, write_pairs, Provenance};
use forge_core::Exact;
use support::{eval_settings, fixture_config, golden_dataset, golden_example, HARVEST_N};

fn setup(tmp: &std::path::Path) -> (Vec<DatasetExample>, Gateway, Executor, forge_core::config::PipelineConfig) {
    let cfg = fixture_config(tmp, Split::Train);
    let examples = dataset::load(&golden_dataset(Split::Train)).unwrap();
    (examples, cfg.provider.build().unwrap(), cfg.executor(), cfg)
}

#[test]
fn replayed_evaluation_scores_match_the_scripted_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let (examples, gw, exec, cfg) = setup(tmp.path());
    let (candidates, report) = evaluate::<Exact>(&examples, &gw, &exec, &eval_settings(&cfg)).unwrap();
    assert_eq!(candidates.len(), examples.len() * 2);

    // five examples end fully solved: slugify and percent straight away,
    // truncate after repairing one draw, classify and Rect.area after
    // repairing both
    let solved: BTreeMap<&str, usize> = report.tallies.iter().filter(|t| t.c > 0).map(|t| (t.example_id.as_str(), t.c)).collect();
    let expected: BTreeMap<&str, usize> = [
        "geomlib__geomlib_shapes_Rect_area",
        "mathx__mathx_fmt_percent",
        "textkit__textkit_normalize_slugify",
        "textkit__textkit_wrap_truncate",
        "weatherapi__weatherapi_units_classify",
    ]
    .into_iter()
    .map(|id| (id, 2))
    .collect();
    assert_eq!(solved, expected);
    assert_eq!(report.pass_at_k[&1], Exact::new(5, 19));
    assert_eq!(report.pass_at_k[&2], Exact::new(5, 19));
    assert_eq!(report.per_round_pass1, vec![Exact::new(5, 38), Exact::new(5, 19), Exact::new(5, 19)]);

    let repaired: Vec<_> = candidates.iter().filter(|c| c.passed() && c.repair_round > 0).collect();
    assert_eq!(repaired.len(), 5);
    assert!(repaired.iter().all(|c| c.fingerprints.len() == 1 + c.repair_round));
}

#[test]
fn floating_point_report_agrees_with_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let (examples, gw, exec, cfg) = setup(tmp.path());
    let settings = EvalSettings {
        repair_rounds: 0,
        ..eval_settings(&cfg)
    };
    let (_, exact) = evaluate::<Exact>(&examples, &gw, &exec, &settings).unwrap();
    let (_, float) = evaluate::<f64>(&examples, &gw, &exec, &settings).unwrap();
    assert_eq!(exact.pass_at_k[&1], Exact::new(5, 38));
    assert!(exact.per_round_pass1.is_empty());
    for (k, v) in &exact.pass_at_k {
        let e = *v.numer() as f64 / *v.denom() as f64;
        assert!((float.pass_at_k[k] - e).abs() < 1e-12);
    }
}

#[test]
fn evaluation_rejects_k_above_n() {
    let tmp = tempfile::tempdir().unwrap();
    let (examples, gw, exec, cfg) = setup(tmp.path());
    let settings = EvalSettings {
        n: 1,
        ks: vec![2],
        repair_rounds: 0,
        decode: cfg.provider.sample_decode(),
    };
    let err = evaluate::<f64>(&examples[..1], &gw, &exec, &settings).unwrap_err();
    assert!(err.to_string().contains("insufficient-samples"), "{err}");
}

#[test]
fn ground_truth_candidates_pass_and_broken_ones_do_not() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, _, exec, _) = setup(tmp.path());
    let ex = golden_example(Split::Train, "geomlib__geomlib_shapes_Rect_contains");
    let gt = ground_truth_candidate(&ex);
    assert!(run_candidate(&ex, &gt.code_text, &exec).ok());
    let r = run_candidate(&ex, "def contains(self, p):\n    return True\n", &exec);
    assert_eq!(r.error_class.tag(), "assertion_failure");
    let r = run_candidate(&ex, "not python at all (", &exec);
    assert_eq!(r.exit_code, 1);
}

#[test]
fn context_names_the_file_and_the_enclosing_class() {
    let ex = golden_example(Split::Train, "geomlib__geomlib_shapes_Rect_area");
    let ctx = build_context(&ex);
    assert!(ctx.contains("# file: geomlib/shapes.py"), "{ctx}");
    assert!(ctx.contains("# method of class Rect"), "{ctx}");
    assert!(ctx.trim_end().ends_with("def area(self):"), "{ctx}");
    assert!(!ctx.contains("max(0.0"), "the target body must not leak: {ctx}");
}

#[test]
fn harvest_keeps_ground_truth_plus_passing_and_repaired_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let (examples, gw, exec, cfg) = setup(tmp.path());
    let decode = cfg.provider.sample_decode();
    let report = harvest(&examples, &gw, None, &exec, HARVEST_N, true, &decode);
    assert!(report.skipped.is_empty());
    let count = |f: &dyn Fn(&Provenance) -> bool| report.pairs.iter().filter(|p| f(&p.provenance)).count();
    assert_eq!(count(&|p| *p == Provenance::GroundTruth), 19);
    assert_eq!(count(&|p| matches!(p, Provenance::Sampled(_))), 2);
    assert_eq!(count(&|p| matches!(p, Provenance::Debugged(_))), 3);

    let plain = harvest(&examples, &gw, None, &exec, HARVEST_N, false, &decode);
    assert_eq!(plain.pairs.len(), 21);

    let path = tmp.path().join("pairs.jsonl");
    write_pairs(&path, &report.pairs).unwrap();
    assert_eq!(read_pairs(&path).unwrap(), report.pairs);
}

#[test]
fn merging_producers_dedups_and_counts_solved_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let (examples, gw, exec, cfg) = setup(tmp.path());
    let a = harvest(&examples, &gw, None, &exec, HARVEST_N, true, &cfg.provider.sample_decode()).pairs;
    let b: Vec<_> = a
        .iter()
        .cloned()
        .map(|mut p| {
            if let Provenance::Sampled(_) = p.provenance {
                p.provenance = Provenance::Sampled("other".into());
            }
            p
        })
        .collect();
    let merged = merge_producers(&[a.clone(), b]);
    assert_eq!(merged.pairs, a);
    assert_eq!(merged.solved_examples, 4);
    assert_eq!(merged.per_producer["scripted"].pairs, 5);
    assert_eq!(merged.per_producer["scripted"].solved_examples, 4);
    assert_eq!(merged.per_producer["other"].pairs, 0);
    assert_eq!(merged.per_producer["other"].solved_examples, 2);
}
