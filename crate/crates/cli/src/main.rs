use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agentmem::config::RunConfig;
use agentmem::dataset::{self, DatasetError, Family, Instance, RawItem};
use agentmem::llm::Role;
use agentmem::memory::MemorySnapshot;
use agentmem::qa;
use agentmem::rollout::{self, Endpoints, GroupResult, RolloutError};
use agentmem::WhitespaceTokenizer;
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

/// Exit codes, one per failure class.
const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SCHEMA: u8 = 3;
const EXIT_ENDPOINT: u8 = 4;
const EXIT_GROUP: u8 = 5;

struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "agentmem", version, about = "Memory-agent rollout and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration. Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides hyper.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides hyper.group_size.
    #[arg(long)]
    group_size: Option<usize>,
    /// Overrides hyper.workers.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw corpus (one item per line) into validated instances.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// doc_qa, perlt, dialogue, ttl or booksum.
        #[arg(long)]
        family: Family,
        #[arg(long)]
        output: PathBuf,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Draw a per-tag capped sample of instances.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Per-tag cap, e.g. `squad=100`. Repeatable.
        #[arg(long = "cap", value_parser = parse_cap)]
        caps: Vec<(String, usize)>,
        /// Cap for tags without an explicit one.
        #[arg(long)]
        default_cap: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print per-tag dataset statistics.
    Stats {
        #[arg(long)]
        input: PathBuf,
        /// Also write the statistics as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run rollout groups for every instance and export trainer records.
    Rollout {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides paths.instances.
        #[arg(long)]
        instances: Option<PathBuf>,
    },
    /// Score a memory snapshot against instances' questions.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Only evaluate this instance.
        #[arg(long)]
        instance_id: Option<String>,
        /// Report file; defaults to `<paths.reports>/evaluate.jsonl`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-export trainer records from stored trace files.
    ExportRecords {
        #[arg(long = "traces", required = true, num_args = 1..)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Re-execute stored traces and compare against what was recorded.
    ReplayCheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long = "traces", required = true, num_args = 1..)]
        traces: Vec<PathBuf>,
        /// Also recompute rewards through the configured generator and judge.
        #[arg(long)]
        rescore: bool,
    },
}

fn parse_cap(s: &str) -> Result<(String, usize), String> {
    let (tag, n) = s.split_once('=').ok_or("expected TAG=N")?;
    Ok((tag.to_string(), n.parse().map_err(|_| format!("bad cap {n:?}"))?))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path).code(EXIT_CONFIG)?,
        None => RunConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok()).code(EXIT_CONFIG)?;
    if let Some(seed) = args.seed {
        config.hyper.seed = seed;
    }
    if let Some(g) = args.group_size {
        config.hyper.group_size = g;
    }
    if let Some(w) = args.workers {
        config.hyper.workers = w;
    }
    config.validate().code(EXIT_CONFIG)?;
    Ok(config)
}

fn dataset_code(e: &DatasetError) -> u8 {
    match e {
        DatasetError::Io { .. } => EXIT_FAILURE,
        _ => EXIT_SCHEMA,
    }
}

fn load_instances(path: &Path) -> Result<Vec<Instance>, Failure> {
    dataset::load_instances(path, false)
        .map(|l| l.instances)
        .map_err(|e| Failure {
            code: dataset_code(&e),
            error: e.into(),
        })
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .code(EXIT_FAILURE)?;
    }
    Ok(())
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn cmd_ingest(input: &Path, family: Family, output: &Path, lenient: bool) -> Outcome {
    let file = File::open(input)
        .with_context(|| format!("opening {}", input.display()))
        .code(EXIT_FAILURE)?;
    let mut instances = Vec::new();
    let mut skipped = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.code(EXIT_FAILURE)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawItem>(&line)
            .map_err(|e| anyhow!(e))
            .and_then(|item| dataset::ingest_item(&item, family).map_err(|e| anyhow!(e)));
        match parsed {
            Ok(inst) => instances.push(inst),
            Err(e) if lenient => {
                log::warn!("{}:{}: skipped: {e}", input.display(), idx + 1);
                eprintln!("warning: line {} skipped: {e}", idx + 1);
                skipped += 1;
            }
            Err(e) => return Err(e.context(format!("{}:{}", input.display(), idx + 1))).code(EXIT_SCHEMA),
        }
    }
    create_parent(output)?;
    dataset::save_instances(output, &instances).code(EXIT_FAILURE)?;
    println!("ingested {}", instances.len());
    println!("  {}: {}", family.as_str(), instances.len());
    if skipped > 0 {
        println!("skipped {skipped}");
    }
    wrote(output);
    Ok(())
}

fn cmd_sample(
    input: &Path,
    output: &Path,
    caps: Vec<(String, usize)>,
    default_cap: Option<usize>,
    seed: u64,
) -> Outcome {
    let instances = load_instances(input)?;
    let caps: BTreeMap<String, usize> = caps.into_iter().collect();
    let sample = dataset::stratified_sample(&instances, &caps, default_cap, seed);
    create_parent(output)?;
    dataset::save_instances(output, &sample).code(EXIT_FAILURE)?;
    println!("sampled {} of {}", sample.len(), instances.len());
    wrote(output);
    Ok(())
}

fn cmd_stats(input: &Path, json: Option<&Path>) -> Outcome {
    let instances = load_instances(input)?;
    let stats = dataset::dataset_stats(&instances, &WhitespaceTokenizer);
    print!("{}", stats.render_table());
    if let Some(path) = json {
        create_parent(path)?;
        let text = serde_json::to_string_pretty(&stats).code(EXIT_FAILURE)?;
        fs::write(path, text + "\n").code(EXIT_FAILURE)?;
        wrote(path);
    }
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn is_endpoint_failure(e: &RolloutError) -> bool {
    match e {
        RolloutError::Policy { .. } | RolloutError::Judge { .. } => true,
        RolloutError::Qa(qa::QaError::Endpoint { .. }) => true,
        RolloutError::Member { source, .. } => is_endpoint_failure(source),
        _ => false,
    }
}

#[derive(Default)]
struct TagMeans {
    rollouts: usize,
    r1: f64,
    r2: f64,
    r3: f64,
    r4: f64,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().code(EXIT_FAILURE)
}

fn cmd_rollout(args: &ConfigArgs, instances_path: Option<PathBuf>) -> Outcome {
    let mut config = load_config(args)?;
    if let Some(p) = instances_path {
        config.paths.instances = p;
    }
    let instances = load_instances(&config.paths.instances)?;
    let policy = config.endpoint(Role::Policy).code(EXIT_CONFIG)?;
    let generator = config.endpoint(Role::Generator).code(EXIT_CONFIG)?;
    let judge = config.endpoint(Role::Judge).code(EXIT_CONFIG)?;
    let endpoints = Endpoints {
        policy: &policy,
        generator: &generator,
        judge: &judge,
    };
    let tok = WhitespaceTokenizer;
    let pool = build_pool(config.hyper.workers)?;
    let results: Vec<Result<GroupResult, RolloutError>> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| rollout::run_group(inst, endpoints, &config, &tok))
            .collect()
    });

    fs::create_dir_all(&config.paths.traces).code(EXIT_FAILURE)?;
    create_parent(&config.paths.records)?;
    let mut records = BufWriter::new(File::create(&config.paths.records).code(EXIT_FAILURE)?);
    let mut record_count = 0;
    let mut trace_files = Vec::new();
    let mut failures = Vec::new();
    let mut means: BTreeMap<String, TagMeans> = BTreeMap::new();
    for (inst, result) in instances.iter().zip(results) {
        match result {
            Ok(group) => {
                let path = config.paths.traces.join(format!("{}.jsonl", file_stem(&inst.id)));
                rollout::save_group(&path, &group).code(EXIT_FAILURE)?;
                trace_files.push(path);
                record_count += rollout::export_records(&group, &mut records).code(EXIT_FAILURE)?;
                let m = means.entry(inst.dataset_tag.clone()).or_default();
                for t in &group.traces {
                    m.rollouts += 1;
                    m.r1 += t.rewards.r1;
                    m.r2 += mean(&t.rewards.r2);
                    m.r3 += t.rewards.r3;
                    m.r4 += mean(&t.rewards.r4);
                }
            }
            Err(e) => failures.push((inst.id.clone(), e)),
        }
    }
    records.flush().code(EXIT_FAILURE)?;
    drop(records);

    println!("{:<16}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}", "dataset", "rollouts", "r1", "r2", "r3", "r4");
    let mut summary = serde_json::Map::new();
    for (tag, m) in &means {
        let n = m.rollouts as f64;
        let row = [m.r1 / n, m.r2 / n, m.r3 / n, m.r4 / n];
        println!(
            "{:<16}  {:>8}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}",
            tag, m.rollouts, row[0], row[1], row[2], row[3]
        );
        summary.insert(
            tag.clone(),
            serde_json::json!({"rollouts": m.rollouts, "r1": row[0], "r2": row[1], "r3": row[2], "r4": row[3]}),
        );
    }
    let failed: Vec<_> = failures
        .iter()
        .map(|(id, e)| serde_json::json!({"instance_id": id, "error": e.to_string()}))
        .collect();
    for (id, e) in &failures {
        eprintln!("failed {id}: {e}");
    }
    fs::create_dir_all(&config.paths.reports).code(EXIT_FAILURE)?;
    let summary_path = config.paths.reports.join("rollout_summary.json");
    let doc = serde_json::json!({"means": summary, "failures": failed, "groups": trace_files.len(), "records": record_count, "config": config});
    fs::write(&summary_path, serde_json::to_string_pretty(&doc).code(EXIT_FAILURE)? + "\n").code(EXIT_FAILURE)?;

    for path in &trace_files {
        wrote(path);
    }
    println!("exported {record_count} records");
    wrote(&config.paths.records);
    wrote(&summary_path);
    if !failures.is_empty() {
        let code = if failures.iter().all(|(_, e)| is_endpoint_failure(e)) {
            EXIT_ENDPOINT
        } else {
            EXIT_GROUP
        };
        return Err(Failure {
            code,
            error: anyhow!("{} of {} groups failed", failures.len(), instances.len()),
        });
    }
    Ok(())
}

fn cmd_evaluate(
    args: &ConfigArgs,
    snapshot_path: &Path,
    instances_path: Option<PathBuf>,
    instance_id: Option<String>,
    report: Option<PathBuf>,
) -> Outcome {
    let config = load_config(args)?;
    let bytes = fs::read(snapshot_path)
        .with_context(|| format!("reading {}", snapshot_path.display()))
        .code(EXIT_FAILURE)?;
    let snapshot = MemorySnapshot::decode(&bytes)
        .with_context(|| format!("decoding {}", snapshot_path.display()))
        .code(EXIT_SCHEMA)?;
    let mut instances = load_instances(instances_path.as_deref().unwrap_or(&config.paths.instances))?;
    if let Some(id) = &instance_id {
        instances.retain(|i| &i.id == id);
        if instances.is_empty() {
            return Err(anyhow!("no instance with id {id:?}")).code(EXIT_SCHEMA);
        }
    }
    let generator = config.endpoint(Role::Generator).code(EXIT_CONFIG)?;
    let judge = config.endpoint(Role::Judge).code(EXIT_CONFIG)?;
    let report_path = report.unwrap_or_else(|| config.paths.reports.join("evaluate.jsonl"));
    create_parent(&report_path)?;
    let mut sink = BufWriter::new(File::create(&report_path).code(EXIT_FAILURE)?);
    for inst in &instances {
        let c = qa::correctness_reward(inst, &snapshot, &generator, Some(&judge), config.hyper.top_k).map_err(|e| {
            let code = if matches!(e, qa::QaError::Endpoint { .. }) {
                EXIT_ENDPOINT
            } else {
                EXIT_SCHEMA
            };
            Failure {
                code,
                error: anyhow!("{}: {e}", inst.id),
            }
        })?;
        qa::write_report(&mut sink, &inst.id, &c).code(EXIT_FAILURE)?;
        println!("{}  r1={:.4}  questions={}", inst.id, c.r1, c.results.len());
    }
    sink.flush().code(EXIT_FAILURE)?;
    wrote(&report_path);
    Ok(())
}

fn cmd_export(traces: &[PathBuf], output: &Path) -> Outcome {
    create_parent(output)?;
    let mut sink = BufWriter::new(File::create(output).code(EXIT_FAILURE)?);
    let mut count = 0;
    for path in traces {
        let group = rollout::load_group(path)
            .with_context(|| format!("reading {}", path.display()))
            .code(EXIT_SCHEMA)?;
        count += rollout::export_records(&group, &mut sink).code(EXIT_FAILURE)?;
    }
    sink.flush().code(EXIT_FAILURE)?;
    println!("exported {count} records");
    wrote(output);
    Ok(())
}

fn cmd_replay_check(args: &ConfigArgs, traces: &[PathBuf], rescore: bool) -> Outcome {
    let config = load_config(args)?;
    let tok = WhitespaceTokenizer;
    let rescore_with = if rescore {
        let instances = load_instances(&config.paths.instances)?;
        let generator = config.endpoint(Role::Generator).code(EXIT_CONFIG)?;
        let judge = config.endpoint(Role::Judge).code(EXIT_CONFIG)?;
        Some((instances, generator, judge))
    } else {
        None
    };
    let mut mismatches = 0;
    for path in traces {
        let group = rollout::load_group(path)
            .with_context(|| format!("reading {}", path.display()))
            .code(EXIT_SCHEMA)?;
        let rescore = match &rescore_with {
            Some((instances, generator, judge)) => {
                let inst = instances
                    .iter()
                    .find(|i| i.id == group.instance_id)
                    .ok_or_else(|| anyhow!("instance {:?} not in {}", group.instance_id, config.paths.instances.display()))
                    .code(EXIT_SCHEMA)?;
                Some((inst, generator, judge))
            }
            None => None,
        };
        let report = rollout::replay_check(&group, rescore, &tok).map_err(|e| Failure {
            code: if is_endpoint_failure(&e) { EXIT_ENDPOINT } else { EXIT_GROUP },
            error: e.into(),
        })?;
        for m in &report.mismatches {
            println!("{}: MISMATCH {m}", path.display());
        }
        if report.mismatches.is_empty() {
            println!(
                "{}: ok ({} traces, {} rescored)",
                path.display(),
                report.traces_checked,
                report.rewards_checked
            );
        }
        mismatches += report.mismatches.len();
    }
    if mismatches > 0 {
        return Err(anyhow!("{mismatches} replay mismatches")).code(EXIT_GROUP);
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Ingest {
            input,
            family,
            output,
            lenient,
        } => cmd_ingest(&input, family, &output, lenient),
        Command::Sample {
            input,
            output,
            caps,
            default_cap,
            seed,
        } => cmd_sample(&input, &output, caps, default_cap, seed),
        Command::Stats { input, json } => cmd_stats(&input, json.as_deref()),
        Command::Rollout { config, instances } => cmd_rollout(&config, instances),
        Command::Evaluate {
            config,
            snapshot,
            instances,
            instance_id,
            report,
        } => cmd_evaluate(&config, &snapshot, instances, instance_id, report),
        Command::ExportRecords { traces, output } => cmd_export(&traces, &output),
        Command::ReplayCheck {
            config,
            traces,
            rescore,
        } => cmd_replay_check(&config, &traces, rescore),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
