use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use agentmem::dataset::{self, synthetic, Family, Instance};
use agentmem::memory::{MemoryOp, MemorySnapshot};

fn agentmem(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentmem"))
        .args(args)
        .current_dir(dir)
        .env_remove("AGENTMEM_SEED")
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_raw(path: &Path, family: Family, n: usize, bad_line: bool) {
    let mut lines: Vec<String> = synthetic::raw_items(family, n, 2, 2, 7)
        .iter()
        .map(|i| serde_json::to_string(i).unwrap())
        .collect();
    if bad_line {
        lines.insert(1, "{\"id\": \"broken\"".into());
    }
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

const MOCK_CONFIG: &str = r#"
[paths]
instances = "instances.jsonl"
traces = "out/traces"
reports = "out/reports"
records = "out/records.jsonl"

[hyper]
seed = 3
workers = 2

[endpoints.policy]
mode = "mock"
mock = "copy-chunk"

[endpoints.generator]
mode = "mock"
mock = "echo"

[endpoints.judge]
mode = "mock"
mock = "accept"
"#;

fn mock_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut instances = synthetic::instances(Family::DocQa, 2, 3, 2, 1);
    instances.extend(synthetic::instances(Family::Ttl, 1, 2, 2, 2));
    dataset::save_instances(&dir.path().join("instances.jsonl"), &instances).unwrap();
    std::fs::write(dir.path().join("run.toml"), MOCK_CONFIG).unwrap();
    dir
}

#[test]
fn ingest_counts_and_modes() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    write_raw(&raw, Family::Ttl, 3, false);
    let out = agentmem(&["ingest", "--input", "raw.jsonl", "--family", "ttl", "--output", "ttl.jsonl"], dir.path());
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("ingested 3"));
    assert_eq!(dataset::load_instances(&dir.path().join("ttl.jsonl"), false).unwrap().instances.len(), 3);

    write_raw(&raw, Family::Ttl, 3, true);
    let lenient = agentmem(
        &["ingest", "--input", "raw.jsonl", "--family", "ttl", "--output", "ttl.jsonl", "--lenient"],
        dir.path(),
    );
    assert!(lenient.status.success());
    assert!(stdout(&lenient).contains("ingested 3"));
    assert!(String::from_utf8_lossy(&lenient.stderr).contains("warning"));

    let strict = agentmem(&["ingest", "--input", "raw.jsonl", "--family", "ttl", "--output", "ttl.jsonl"], dir.path());
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn stats_table_and_twin() {
    let dir = mock_workspace();
    let out = agentmem(&["stats", "--input", "instances.jsonl", "--json", "stats.json"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("doc_qa") || l.starts_with("ttl")).collect();
    assert_eq!(rows.len(), 2);
    let total = text.lines().find(|l| l.starts_with("Total")).unwrap();
    assert_eq!(total.split_whitespace().nth(3), Some("3"));

    let instances = dataset::load_instances(&dir.path().join("instances.jsonl"), false).unwrap().instances;
    let twin: dataset::DatasetStats =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(twin, dataset::dataset_stats(&instances, &agentmem::WhitespaceTokenizer));
}

#[test]
fn sample_is_seeded() {
    let dir = mock_workspace();
    let run = |seed: &str, out: &str| {
        let o = agentmem(
            &["sample", "--input", "instances.jsonl", "--output", out, "--cap", "doc_qa=1", "--seed", seed],
            dir.path(),
        );
        assert!(o.status.success());
        std::fs::read(dir.path().join(out)).unwrap()
    };
    assert_eq!(run("5", "a.jsonl"), run("5", "b.jsonl"));
    let sampled = dataset::load_instances(&dir.path().join("a.jsonl"), false).unwrap().instances;
    assert_eq!(sampled.len(), 2);
}

fn traces(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir.join("out/traces"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
}

#[test]
fn mock_rollout_is_reproducible() {
    let dir = mock_workspace();
    let first = agentmem(&["rollout", "--config", "run.toml"], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let text = stdout(&first);
    assert!(text.contains("doc_qa") && text.contains("ttl"));
    assert!(text.contains("exported 64 records"), "{text}");
    assert!(text.contains("wrote out/records.jsonl"));
    let files = traces(dir.path());
    assert_eq!(files.len(), 3);
    let snapshot: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    let records = std::fs::read(dir.path().join("out/records.jsonl")).unwrap();

    let second = agentmem(&["rollout", "--config", "run.toml"], dir.path());
    assert!(second.status.success());
    assert_eq!(stdout(&first), stdout(&second));
    let again: Vec<Vec<u8>> = traces(dir.path()).iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(snapshot, again);
    assert_eq!(records, std::fs::read(dir.path().join("out/records.jsonl")).unwrap());

    // group size defaults to 8
    let group = agentmem::rollout::load_group(&files[0]).unwrap();
    assert_eq!(group.traces.len(), 8);
    assert_eq!(group.config.hyper.group_size, 8);

    let exported = agentmem(&["export-records", "--traces", files[0].to_str().unwrap(), "--output", "one.jsonl"], dir.path());
    assert!(exported.status.success());
    let n = group.traces.iter().map(|t| t.steps.len()).sum::<usize>();
    assert!(stdout(&exported).contains(&format!("exported {n} records")));

    let mut args = vec!["replay-check", "--config", "run.toml", "--rescore", "--traces"];
    args.extend(files.iter().map(|f| f.to_str().unwrap()));
    let check = agentmem(&args, dir.path());
    assert!(check.status.success(), "{}", stdout(&check));
    assert_eq!(stdout(&check).matches(": ok").count(), 3);
}

#[test]
fn replay_without_cache_fails_with_endpoint_code() {
    let dir = mock_workspace();
    let config = MOCK_CONFIG.replace("mode = \"mock\"\nmock = \"copy-chunk\"", "mode = \"replay\"");
    std::fs::write(dir.path().join("replay.toml"), config).unwrap();
    let out = agentmem(&["rollout", "--config", "replay.toml", "--group-size", "2"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no cached response") || err.contains("cache"), "{err}");
    assert_eq!(err.matches("failed ").count(), 3);
}

#[test]
fn bad_config_has_its_own_code() {
    let dir = mock_workspace();
    std::fs::write(dir.path().join("bad.toml"), "[hyper]\ngroup_size = 1\n").unwrap();
    let out = agentmem(&["rollout", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "[hyper\n").unwrap();
    assert_eq!(agentmem(&["rollout", "--config", "bad.toml"], dir.path()).status.code(), Some(2));
}

fn first_instance(dir: &Path) -> Instance {
    dataset::load_instances(&dir.join("instances.jsonl"), false).unwrap().instances.remove(0)
}

#[test]
fn evaluate_scores_a_snapshot() {
    let dir = mock_workspace();
    let inst = first_instance(dir.path());
    let id = inst.id.clone();

    std::fs::write(dir.path().join("empty.json"), MemorySnapshot::default().encode()).unwrap();
    let out = agentmem(
        &["evaluate", "--config", "run.toml", "--snapshot", "empty.json", "--instance-id", &id, "--report", "empty.jsonl"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("r1=0.0000"));
    let report = std::fs::read_to_string(dir.path().join("empty.jsonl")).unwrap();
    assert_eq!(report.lines().filter(|l| l.contains("\"kind\":\"question\"")).count(), inst.questions.len());

    // a memory holding every gold answer verbatim, read back by an echoing generator
    let snapshot = inst.questions.iter().fold(MemorySnapshot::default(), |s, q| {
        s.apply(&MemoryOp::semantic(format!("{} {}", q.text, q.gold.display()))).unwrap().snapshot
    });
    std::fs::write(dir.path().join("full.json"), snapshot.encode()).unwrap();
    let out = agentmem(
        &["evaluate", "--config", "run.toml", "--snapshot", "full.json", "--instance-id", &id, "--report", "full.jsonl"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("r1=1.0000"), "{}", stdout(&out));
    assert!(stdout(&out).contains("wrote full.jsonl"));

    std::fs::write(dir.path().join("junk.json"), "{}").unwrap();
    let out = agentmem(&["evaluate", "--config", "run.toml", "--snapshot", "junk.json"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}
