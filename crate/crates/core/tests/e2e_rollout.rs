mod common;

use agentmem::rollout::{self, Endpoints};
use agentmem::WhitespaceTokenizer;
use approx::assert_abs_diff_eq;
use common::*;

fn run_toy() -> agentmem::rollout::GroupResult {
    let instance = toy_instance();
    let (policy, generator, judge) = (toy_policy(&instance), echo_generator(), rule_judge());
    let endpoints = Endpoints {
        policy: &policy,
        generator: &generator,
        judge: &judge,
    };
    rollout::run_group(&instance, endpoints, &toy_config(), &WhitespaceTokenizer).unwrap()
}

fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn toy_group_matches_ledger() {
    let group = run_toy();
    let ledger = toy_ledger();
    assert_eq!(group.traces.len(), 2);
    for (trace, expected) in group.traces.iter().zip(ledger["rollouts"].as_array().unwrap()) {
        let r = &trace.rewards;
        assert_eq!(r.l_m as u64, expected["l_m"].as_u64().unwrap());
        assert_eq!(r.l_c as u64, expected["l_c"].as_u64().unwrap());
        assert_abs_diff_eq!(r.r1, expected["r1"].as_f64().unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.r3, expected["r3"].as_f64().unwrap(), epsilon = 1e-12);
        for (key, got) in [("r2", &r.r2), ("r4", &r.r4), ("r_t", &r.r_combined)] {
            let want = floats(&expected[key]);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(want) {
                assert_abs_diff_eq!(*g, w, epsilon = 1e-12);
            }
        }
        let adv = &group.advantages()[trace.rollout_index];
        for (g, w) in adv.iter().zip(floats(&expected["advantages"])) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-9);
        }
    }
    assert_abs_diff_eq!(group.advantage.mu, ledger["mu"].as_f64().unwrap(), epsilon = 1e-12);
    assert_abs_diff_eq!(group.advantage.sigma, ledger["sigma"].as_f64().unwrap(), epsilon = 1e-12);
    // the better rollout gets positive advantages everywhere
    assert!(group.advantages()[0].iter().all(|a| *a > 0.0));
    assert!(group.advantages()[1].iter().all(|a| *a < 0.0));
}

#[test]
fn trace_files_are_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    rollout::save_group(&a, &run_toy()).unwrap();
    rollout::save_group(&b, &run_toy()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let loaded = rollout::load_group(&a).unwrap();
    assert_eq!(loaded, run_toy());
}

#[test]
fn replay_reproduces_memory_and_rewards() {
    let group = run_toy();
    let instance = toy_instance();
    let (generator, judge) = (echo_generator(), rule_judge());
    let report = rollout::replay_check(&group, Some((&instance, &generator, &judge)), &WhitespaceTokenizer).unwrap();
    assert!(report.mismatches.is_empty(), "{:?}", report.mismatches);
    assert_eq!((report.traces_checked, report.rewards_checked), (2, 2));

    let mut tampered = group.clone();
    tampered.traces[1].steps[0].raw_response.clear();
    let report = rollout::replay_check(&tampered, None, &WhitespaceTokenizer).unwrap();
    assert!(!report.mismatches.is_empty());
}

#[test]
fn export_has_one_record_per_step() {
    let group = run_toy();
    let mut buf = Vec::new();
    assert_eq!(rollout::export_records(&group, &mut buf).unwrap(), 6);
    let records = rollout::read_records(buf.as_slice()).unwrap();
    let (count, sum) = rollout::records_checksum(&records);
    assert_eq!(count, 6);
    let expected: f64 = group.advantages().iter().flatten().sum();
    assert_eq!(sum, expected);
    assert!(sum.abs() < 1e-6 * 6.0);

    let first: serde_json::Value = serde_json::from_slice(buf.split(|b| *b == b'\n').next().unwrap()).unwrap();
    let mut keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    let golden = std::fs::read_to_string(fixture("record_keys.txt")).unwrap();
    assert_eq!(keys.join("\n"), golden.trim_end());
}

#[test]
fn inaction_rollout_keeps_memory_empty() {
    let instance = toy_instance();
    let policy = agentmem::llm::ChatEndpoint::mock(
        agentmem::llm::Role::Policy,
        "silent",
        std::sync::Arc::new(agentmem::llm::mock::builtin("silent").unwrap()),
    );
    let (generator, judge) = (echo_generator(), rule_judge());
    let endpoints = Endpoints {
        policy: &policy,
        generator: &generator,
        judge: &judge,
    };
    let trace = rollout::run_rollout(&instance, endpoints, &toy_config().hyper, 0, &WhitespaceTokenizer).unwrap();
    assert!(trace.final_snapshot.is_empty());
    assert_eq!(trace.rewards.r2, vec![0.0; 3]);
    assert_eq!(trace.rewards.r4, vec![0.0; 3]);
    assert_eq!(trace.rewards.r3, 1.0);
    assert_eq!(trace.rewards.r1, 0.0);
    assert_eq!(judge.backend_calls(), 0);
}

#[test]
fn identical_policies_give_a_degenerate_group() {
    let instance = toy_instance();
    let policy = agentmem::llm::ChatEndpoint::mock(
        agentmem::llm::Role::Policy,
        "copy",
        std::sync::Arc::new(agentmem::llm::mock::builtin("copy-chunk").unwrap()),
    );
    let (generator, judge) = (echo_generator(), rule_judge());
    let endpoints = Endpoints {
        policy: &policy,
        generator: &generator,
        judge: &judge,
    };
    let mut config = toy_config();
    config.hyper.group_size = 8;
    let group = rollout::run_group(&instance, endpoints, &config, &WhitespaceTokenizer).unwrap();
    assert!(group.advantage.degenerate);
    assert_eq!(group.advantages().len(), 8);
    assert!(group.advantages().iter().all(|a| a.len() == 3 && a.iter().all(|x| *x == 0.0)));
}

#[test]
fn oversized_chunk_is_rejected() {
    let instance = toy_instance();
    let (policy, generator, judge) = (toy_policy(&instance), echo_generator(), rule_judge());
    let endpoints = Endpoints {
        policy: &policy,
        generator: &generator,
        judge: &judge,
    };
    let mut hyper = toy_config().hyper;
    hyper.max_chunk_tokens = Some(10);
    let err = rollout::run_rollout(&instance, endpoints, &hyper, 0, &WhitespaceTokenizer).unwrap_err();
    assert!(matches!(err, rollout::RolloutError::ChunkTooLarge { t: 0, .. }), "{err}");
    assert_eq!(policy.backend_calls(), 0);
}
