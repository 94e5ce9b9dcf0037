//! Regenerates the frozen replay cache and golden funnels from the scripted
//! model. Run with
//! `cargo test -p forge-core --test record_fixtures -- --ignored --nocapture`.

mod support;

use std::sync::Arc;

use forge_core::dataset;
use forge_core::eval_harness::evaluate;
use forge_core::ingest::Split;
use forge_core::llm::{Gateway, RecordingProvider};
use forge_core::pipeline::{all_drops, dataset_path, run_with_gateway, PipelineStage};
use forge_core::sample_factory::harvest;
use support::{eval_settings, fixture_config, golden_dataset, golden_funnel, replay_dir, ScriptedProvider, HARVEST_N};

fn recorder() -> Gateway {
    let inner = Arc::new(ScriptedProvider::new("scripted"));
    Gateway::new(Arc::new(RecordingProvider::new(inner, replay_dir()).unwrap()), 4)
}

#[test]
#[ignore]
fn record_replay_cache() {
    let _ = std::fs::remove_dir_all(replay_dir());
    std::fs::create_dir_all(support::fixtures().join("golden")).unwrap();
    for split in [Split::Train, Split::Eval] {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = fixture_config(tmp.path(), split);
        let gw = recorder();
        let summary = run_with_gateway(&cfg, Some(gw.clone()), PipelineStage::Ingest, PipelineStage::Emit).unwrap();
        let mut funnel = serde_json::to_string_pretty(&summary.funnel).unwrap();
        funnel.push('\n');
        std::fs::write(golden_funnel(split), &funnel).unwrap();
        println!("{funnel}");
        for d in all_drops(&cfg.workdir).unwrap() {
            println!("drop {} {} {}", d.example_id, d.stage, d.reason);
        }
        std::fs::copy(dataset_path(&cfg.workdir), golden_dataset(split)).unwrap();
        let examples = dataset::load(&dataset_path(&cfg.workdir)).unwrap();
        let exec = cfg.executor();
        let (cands, report) = evaluate::<f64>(&examples, &gw, &exec, &eval_settings(&cfg)).unwrap();
        println!("pass@k {:?} per-round {:?}", report.pass_at_k, report.per_round_pass1);
        for c in cands.iter().filter(|c| c.passed()) {
            println!("solved {} attempt {} round {}", c.example_id, c.attempt_index, c.repair_round);
        }
        let h = harvest(&examples, &gw, None, &exec, HARVEST_N, true, &cfg.provider.sample_decode());
        println!("harvest pairs {} skipped {}", h.pairs.len(), h.skipped.len());
    }
}
