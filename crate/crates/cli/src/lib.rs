//! Command-line front end for the toolforge pipeline.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use toolforge_core::backend::{build_backend, Backend, BackendKind, ScriptedBackend};
use toolforge_core::config::PipelineConfig;
use toolforge_core::consensus::{vote, TiePolicy};
use toolforge_core::dataset_io::{emit_adaption_samples, load_cases, load_queries, load_toolpool, write_jsonl};
use toolforge_core::eval_harness::{greedy_params, run_eval, CaseOutcome, ScoreReport, ScoreTable};
use toolforge_core::evolution::{run_round, write_round};
use toolforge_core::prompting::{build_adaption_prompt, build_generation_prompt, build_invocation_prompt};
use toolforge_core::synth::{eval_suite, scenarios, Scenario};
use toolforge_core::tool_schema::{validate_tool_doc, CandidateToolSet, Violation};
use toolforge_core::validation::ToolCall;

#[derive(Debug, Parser)]
#[command(name = "toolforge", version, about = "Self-evolving tool-learning data pipeline")]
pub struct Cli {
    /// Log filter, e.g. `info` or `toolforge_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a JSONL tool pool; violations go to stderr, one JSON line each.
    ValidateTools { path: PathBuf },
    /// Run one self-evolution round and write its round directory.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        round: u32,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Query file, overriding the config's.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Output directory, overriding the config's.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing round directory.
        #[arg(long)]
        force: bool,
    },
    /// Score a backend on evaluation cases.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Majority-vote over sampled answers grouped by query id.
    Vote {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyArg::RejectTie)]
        policy: PolicyArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one of the three task prompts.
    Prompt {
        #[arg(value_enum)]
        kind: PromptArg,
        #[arg(long)]
        query: Option<String>,
        #[arg(long)]
        description: Option<String>,
        /// JSONL tool definitions for invocation prompts.
        #[arg(long)]
        tools: Option<PathBuf>,
        /// Print the message list as JSON instead of a transcript.
        #[arg(long)]
        json: bool,
    },
    /// Write adaption training records for a tool pool.
    EmitAdaption {
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic inputs for offline runs.
    Synth {
        #[arg(value_enum)]
        kind: SynthArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    RejectTie,
    FirstSeen,
}

impl From<PolicyArg> for TiePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::RejectTie => TiePolicy::RejectTie,
            PolicyArg::FirstSeen => TiePolicy::FirstSeen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PromptArg {
    Invocation,
    Adaption,
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthArg {
    /// One query per line.
    Queries,
    /// Scenarios (query, tools, answer) as JSONL.
    Scenarios,
    /// Evaluation cases, `n` per subset and category.
    Cases,
    /// Tool definitions, one per line.
    Toolpool,
}

/// Parse `args` and run. Returns the process exit code: 0 on success, 1 on a
/// domain failure, 2 on a usage error.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli, out, err),
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            code
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::ValidateTools { path } => cmd_validate_tools(&path, out, err),
        Command::Evolve {
            config,
            round,
            seed,
            workers,
            queries,
            out: out_dir,
            force,
        } => {
            let opts = EvolveOptions {
                round,
                seed,
                workers,
                queries,
                out_dir,
                force,
            };
            let path = cmd_evolve(&config, &opts)?;
            writeln!(out, "{}", path.display())?;
            Ok(0)
        }
        Command::Eval {
            config,
            cases,
            out: report,
            seed,
            workers,
        } => {
            let summary = cmd_eval(&config, cases.as_deref(), &report, seed, workers)?;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.2}"));
            writeln!(
                out,
                "cases {}  non-live {}  live {}  overall {}",
                summary.cases,
                fmt(summary.nonlive),
                fmt(summary.live),
                fmt(summary.overall)
            )?;
            Ok(0)
        }
        Command::Vote { path, policy, out: dest } => {
            let lines = cmd_vote(&path, policy.into())?;
            match dest {
                Some(p) => write_text(&p, &lines)?,
                None => out.write_all(lines.as_bytes())?,
            }
            Ok(0)
        }
        Command::Prompt {
            kind,
            query,
            description,
            tools,
            json,
        } => {
            out.write_all(cmd_prompt(kind, query, description, tools.as_deref(), json)?.as_bytes())?;
            Ok(0)
        }
        Command::EmitAdaption { pool, out: dest } => {
            let n = cmd_emit_adaption(&pool, &dest, err)?;
            writeln!(out, "{n} records")?;
            Ok(0)
        }
        Command::Synth { kind, n, seed, out: dest } => {
            cmd_synth(kind, n, seed, &dest)?;
            Ok(0)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct LineReport<'a> {
    line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<&'a str>,
    violations: Vec<Violation>,
}

/// Exit 0 iff every line parses and every tool is violation-free.
pub fn cmd_validate_tools(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let pool = load_toolpool(path).with_context(|| format!("reading {}", path.display()))?;
    let mut reports = Vec::new();
    for e in &pool.errors {
        reports.push(LineReport {
            line: e.line,
            name: None,
            violations: vec![e.error.to_violation("")],
        });
    }
    for (doc, line) in pool.docs.iter().zip(&pool.lines) {
        let violations = validate_tool_doc(doc);
        if !violations.is_empty() {
            reports.push(LineReport {
                line: *line,
                name: Some(&doc.name),
                violations,
            });
        }
    }
    reports.sort_by_key(|r| r.line);
    for r in &reports {
        writeln!(err, "{}", serde_json::to_string(r)?)?;
    }
    let total = pool.docs.len() + pool.errors.len();
    writeln!(out, "{total} tools, {} with violations", reports.len())?;
    Ok(if reports.is_empty() { 0 } else { 1 })
}

#[derive(Debug, Clone, Default)]
pub struct EvolveOptions {
    pub round: u32,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub queries: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub force: bool,
}

/// Run one round from a config file and return the round directory.
pub fn cmd_evolve(config: &Path, opts: &EvolveOptions) -> Result<PathBuf> {
    let mut cfg = PipelineConfig::load(config)?;
    if opts.round == 0 {
        bail!("rounds are numbered from 1");
    }
    if opts.round > cfg.evolution.max_rounds {
        bail!("round {} exceeds max_rounds = {}", opts.round, cfg.evolution.max_rounds);
    }
    if let Some(seed) = opts.seed {
        cfg.evolution.seed = seed;
        cfg.backend.defects.seed = seed;
    }
    if opts.workers.is_some() {
        cfg.evolution.workers = opts.workers;
    }
    let queries_path = opts
        .queries
        .clone()
        .or_else(|| cfg.queries_path(opts.round))
        .ok_or_else(|| anyhow!("no query file: set paths.queries or pass --queries"))?;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .ok_or_else(|| anyhow!("no output directory: set paths.out_dir or pass --out"))?;
    let queries = load_queries(&queries_path).with_context(|| format!("reading {}", queries_path.display()))?;
    let backend = build_backend(&cfg.backend, opts.round)?;
    let output = run_round(&queries, backend.as_ref(), &cfg.evolution, opts.round)?;
    log::info!(
        "round {}: {} of {} queries accepted",
        opts.round,
        output.report.queries_accepted,
        output.report.queries_in
    );
    Ok(write_round(&out_dir, &output, opts.force)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: ScoreReport,
    pub table: ScoreTable,
    pub outcomes: Vec<CaseOutcome>,
}

pub fn cmd_eval(
    config: &Path,
    cases: Option<&Path>,
    report: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
) -> Result<ScoreReport> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(s) = seed {
        cfg.evolution.seed = s;
        cfg.backend.defects.seed = s;
    }
    let cases_path = cases
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.cases.clone())
        .ok_or_else(|| anyhow!("no case file: set paths.cases or pass --cases"))?;
    let cases = load_cases(&cases_path).with_context(|| format!("reading {}", cases_path.display()))?;
    if cases.is_empty() {
        bail!("{} holds no cases", cases_path.display());
    }
    let backend: Box<dyn Backend> = if cfg.backend.kind == BackendKind::Scripted && cfg.backend.scenario_file.is_none() {
        // Without a scenario file the scripted model answers from the cases.
        let profile = cfg.backend.defects.decayed(cfg.backend.decay_per_round, 1);
        profile.check()?;
        Box::new(
            ScriptedBackend::new(profile)
                .with_max_in_flight(cfg.backend.max_in_flight)
                .with_scenarios(cases.iter().map(Scenario::from_case)),
        )
    } else {
        build_backend(&cfg.backend, 1)?
    };
    let params = greedy_params(cfg.evolution.max_tokens, Some(cfg.evolution.seed));
    let workers = workers.or(cfg.evolution.workers).unwrap_or_else(|| backend.max_in_flight());
    let run = run_eval(&cases, backend.as_ref(), &params, &cfg.live_weights, workers);
    let scores = run.table.report();
    let doc = EvalReport {
        scores: scores.clone(),
        table: run.table,
        outcomes: run.outcomes,
    };
    write_text(report, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok(scores)
}

#[derive(Debug, Deserialize)]
struct VoteLine {
    query_id: String,
    calls: Vec<ToolCall>,
}

/// Group answers by query id (first-seen order) and vote within each group.
pub fn cmd_vote(path: &Path, policy: TiePolicy) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<_>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: VoteLine = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        if !groups.contains_key(&v.query_id) {
            order.push(v.query_id.clone());
        }
        groups
            .entry(v.query_id)
            .or_default()
            .push(toolforge_core::validation::InvocationAnswer::new(v.calls));
    }
    let mut lines = String::new();
    for id in order {
        let outcome = vote(&groups[&id], policy)?;
        lines.push_str(&serde_json::to_string(&json!({ "query_id": id, "outcome": outcome }))?);
        lines.push('\n');
    }
    Ok(lines)
}

fn read_tool_set(path: &Path) -> Result<CandidateToolSet> {
    let pool = load_toolpool(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(e) = pool.errors.first() {
        bail!("{}:{}: {}", path.display(), e.line, e.error);
    }
    Ok(CandidateToolSet::new(pool.docs)?)
}

pub fn cmd_prompt(
    kind: PromptArg,
    query: Option<String>,
    description: Option<String>,
    tools: Option<&Path>,
    as_json: bool,
) -> Result<String> {
    let prompt = match kind {
        PromptArg::Invocation => {
            let query = query.ok_or_else(|| anyhow!("--query is required"))?;
            let tools = match tools {
                Some(p) => read_tool_set(p)?,
                None => CandidateToolSet::empty(),
            };
            build_invocation_prompt(&query, &tools)
        }
        PromptArg::Adaption => build_adaption_prompt(&description.ok_or_else(|| anyhow!("--description is required"))?)?,
        PromptArg::Generation => build_generation_prompt(&query.ok_or_else(|| anyhow!("--query is required"))?)?,
    };
    Ok(if as_json {
        serde_json::to_string_pretty(&prompt.messages)? + "\n"
    } else {
        prompt.transcript()
    })
}

/// Refuses pools with unparsable or rule-violating lines.
pub fn cmd_emit_adaption(pool: &Path, out: &Path, err: &mut dyn Write) -> Result<usize> {
    let tools = load_toolpool(pool).with_context(|| format!("reading {}", pool.display()))?;
    let mut bad = 0;
    for e in &tools.errors {
        writeln!(err, "line {}: {}", e.line, e.error)?;
        bad += 1;
    }
    for (doc, line) in tools.docs.iter().zip(&tools.lines) {
        for v in validate_tool_doc(doc) {
            writeln!(err, "line {line}: {v}")?;
            bad += 1;
        }
    }
    if bad > 0 {
        bail!("{} has {bad} problem(s); nothing written", pool.display());
    }
    let mut buf = Vec::new();
    let n = emit_adaption_samples(&tools.docs, &mut buf)?;
    write_text(out, std::str::from_utf8(&buf)?)?;
    Ok(n)
}

pub fn cmd_synth(kind: SynthArg, n: usize, seed: u64, out: &Path) -> Result<()> {
    let mut buf = BufWriter::new(Vec::new());
    match kind {
        SynthArg::Queries => {
            for sc in scenarios(seed, n) {
                writeln!(buf, "{}", sc.query)?;
            }
        }
        SynthArg::Scenarios => write_jsonl(&scenarios(seed, n), &mut buf)?,
        SynthArg::Cases => write_jsonl(&eval_suite(seed, n), &mut buf)?,
        SynthArg::Toolpool => {
            let docs = toolforge_core::synth::catalog();
            for doc in docs.iter().take(n) {
                writeln!(buf, "{}", toolforge_core::tool_schema::canonical_json(doc))?;
            }
        }
    }
    let bytes = buf.into_inner()?;
    write_text(out, std::str::from_utf8(&bytes)?)
}
