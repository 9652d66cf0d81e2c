//! Self-evolution rounds: generate tools for each query, sample and vote on
//! invocations, keep what survives, and assemble training samples.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, DecodeParams};
use crate::consensus::{vote, TiePolicy, VoteOutcome};
use crate::dataset_io::{emit_generation_samples, emit_invocation_samples, DatasetError};
use crate::extraction::{extract_tool_calls, extract_tool_docs};
use crate::pool::run_ordered;
use crate::prompting::{build_generation_prompt, build_invocation_prompt};
use crate::seeding::derive_seed;
use crate::tool_schema::{validate_tool_doc, CandidateToolSet, ToolDoc, ViolationKind};
use crate::validation::{validate_invocation, InvocationAnswer};

fn d_samples() -> u32 {
    5
}
fn d_temperature() -> f64 {
    1.0
}
fn d_rounds() -> u32 {
    3
}
fn d_queries() -> usize {
    10_000
}
fn d_max_tools() -> usize {
    8
}
fn d_min_tools() -> usize {
    1
}
fn d_min_votes() -> u32 {
    2
}
fn d_max_tokens() -> u32 {
    2048
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    #[serde(default = "d_samples")]
    pub n_samples: u32,
    #[serde(default = "d_temperature")]
    pub temperature_toolgen: f64,
    #[serde(default = "d_temperature")]
    pub temperature_invoke: f64,
    #[serde(default)]
    pub top_k: Option<u32>,
    #[serde(default = "d_rounds")]
    pub max_rounds: u32,
    /// Queries beyond this many in a round's input are ignored.
    #[serde(default = "d_queries")]
    pub queries_per_round: usize,
    #[serde(default = "d_max_tools")]
    pub max_tools_per_query: usize,
    #[serde(default = "d_min_tools")]
    pub min_tools_per_query: usize,
    #[serde(default)]
    pub tie_policy: TiePolicy,
    #[serde(default = "d_min_votes")]
    pub min_winner_votes: u32,
    #[serde(default = "d_max_tokens")]
    pub max_tokens: u32,
    /// Pool size; the backend's in-flight cap when unset.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            n_samples: d_samples(),
            temperature_toolgen: d_temperature(),
            temperature_invoke: d_temperature(),
            top_k: None,
            max_rounds: d_rounds(),
            queries_per_round: d_queries(),
            max_tools_per_query: d_max_tools(),
            min_tools_per_query: d_min_tools(),
            tie_policy: TiePolicy::default(),
            min_winner_votes: d_min_votes(),
            max_tokens: d_max_tokens(),
            workers: None,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: &str| Err(EvolutionError::Config(m.to_owned()));
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if self.max_rounds == 0 || self.queries_per_round == 0 {
            return bad("max_rounds and queries_per_round must be at least 1");
        }
        if self.min_tools_per_query == 0 || self.min_tools_per_query > self.max_tools_per_query {
            return bad("need 1 <= min_tools_per_query <= max_tools_per_query");
        }
        if self.min_winner_votes > self.n_samples {
            return bad("min_winner_votes exceeds n_samples");
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1");
        }
        for t in [self.temperature_toolgen, self.temperature_invoke] {
            if !t.is_finite() || t < 0.0 {
                return bad("temperatures must be finite and nonnegative");
            }
        }
        Ok(())
    }

    fn params(&self, temperature: f64, n: u32, seed: u64) -> DecodeParams {
        DecodeParams {
            temperature,
            top_k: self.top_k,
            n_samples: n,
            max_tokens: self.max_tokens,
            seed: Some(seed),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("tool set is empty")]
    EmptyToolSet,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("round directory {0} already exists")]
    RoundExists(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EvolutionError + '_ {
    move |source| EvolutionError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Adaption,
    Generation,
    Invocation,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Adaption => "adaption",
            Objective::Generation => "generation",
            Objective::Invocation => "invocation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub objective: Objective,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub tools: CandidateToolSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<InvocationAnswer>,
    pub round: u32,
}

impl TrainingSample {
    pub fn invocation(query_id: String, query: String, tools: CandidateToolSet, answer: InvocationAnswer, round: u32) -> Self {
        Self {
            objective: Objective::Invocation,
            query_id,
            query: Some(query),
            tools,
            answer: Some(answer),
            round,
        }
    }

    pub fn generation(query_id: String, query: String, tools: CandidateToolSet, round: u32) -> Self {
        Self {
            objective: Objective::Generation,
            query_id,
            query: Some(query),
            tools,
            answer: None,
            round,
        }
    }

    pub fn adaption(query_id: String, doc: ToolDoc) -> Self {
        Self {
            objective: Objective::Adaption,
            query_id,
            query: None,
            tools: CandidateToolSet::new(vec![doc]).expect("one tool has no duplicates"),
            answer: None,
            round: 0,
        }
    }
}

/// How the tool objects of one generation completion were disposed of.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolGenStats {
    pub extracted: usize,
    pub kept: usize,
    /// One entry per rejected tool, keyed by its first violation.
    pub tally: BTreeMap<ViolationKind, usize>,
    pub duplicates_dropped: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolGenOutcome {
    Kept { tools: CandidateToolSet, stats: ToolGenStats },
    Rejected { stats: ToolGenStats },
}

impl ToolGenOutcome {
    pub fn stats(&self) -> &ToolGenStats {
        match self {
            ToolGenOutcome::Kept { stats, .. } | ToolGenOutcome::Rejected { stats } => stats,
        }
    }
}

/// Keep the violation-free, first-named tools of a completion, up to the cap.
pub fn filter_tools(completion: &str, config: &EvolutionConfig) -> ToolGenOutcome {
    let extracted = extract_tool_docs(completion);
    let mut stats = ToolGenStats {
        extracted: extracted.units(),
        ..ToolGenStats::default()
    };
    for f in &extracted.failures {
        *stats.tally.entry(f.reason.kind).or_default() += 1;
    }
    let mut kept: Vec<ToolDoc> = Vec::new();
    for doc in extracted.items {
        if let Some(v) = validate_tool_doc(&doc).first() {
            *stats.tally.entry(v.kind).or_default() += 1;
        } else if kept.iter().any(|k| k.name == doc.name) {
            stats.duplicates_dropped += 1;
        } else if kept.len() >= config.max_tools_per_query {
            stats.truncated += 1;
        } else {
            kept.push(doc);
        }
    }
    stats.kept = kept.len();
    if kept.len() < config.min_tools_per_query {
        return ToolGenOutcome::Rejected { stats };
    }
    let tools = CandidateToolSet::new(kept).expect("names deduplicated above");
    ToolGenOutcome::Kept { tools, stats }
}

pub fn gen_tools_for_query(
    query: &str,
    backend: &dyn Backend,
    config: &EvolutionConfig,
    seed: u64,
) -> Result<ToolGenOutcome, EvolutionError> {
    let prompt = build_generation_prompt(query).map_err(|_| EvolutionError::EmptyQuery)?;
    let texts = backend.complete(&prompt, &config.params(config.temperature_toolgen, 1, seed))?;
    let text = texts.first().map(String::as_str).unwrap_or("");
    Ok(filter_tools(text, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    AllRuleDirty,
    Tie,
    BelowMinVotes,
}

/// Per-completion bookkeeping of one invocation ballot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallotStats {
    pub sampled: usize,
    pub unparsable: usize,
    pub rule_dirty: usize,
    pub empty: usize,
    pub counted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InvocationOutcome {
    Accepted {
        answer: InvocationAnswer,
        vote: VoteOutcome,
        stats: BallotStats,
    },
    Rejected {
        reason: RejectionReason,
        vote: Option<VoteOutcome>,
        stats: BallotStats,
    },
}

impl InvocationOutcome {
    pub fn stats(&self) -> &BallotStats {
        match self {
            InvocationOutcome::Accepted { stats, .. } | InvocationOutcome::Rejected { stats, .. } => stats,
        }
    }
}

/// Filter sampled completions by the rule checker, then vote.
pub fn decide_invocation(completions: &[String], tools: &CandidateToolSet, config: &EvolutionConfig) -> InvocationOutcome {
    let mut stats = BallotStats {
        sampled: completions.len(),
        ..BallotStats::default()
    };
    let mut ballot = Vec::new();
    for text in completions {
        let extracted = extract_tool_calls(text);
        if !extracted.is_clean() {
            stats.unparsable += 1;
            continue;
        }
        let answer = extracted.into_answer();
        if answer.is_empty() {
            stats.empty += 1;
        } else if !validate_invocation(&answer, tools).is_empty() {
            stats.rule_dirty += 1;
        } else {
            ballot.push(answer);
        }
    }
    stats.counted = ballot.len();
    let Ok(outcome) = vote(&ballot, config.tie_policy) else {
        return InvocationOutcome::Rejected {
            reason: RejectionReason::AllRuleDirty,
            vote: None,
            stats,
        };
    };
    let reason = match &outcome.winner {
        None => Some(RejectionReason::Tie),
        Some(_) if (outcome.winner_votes as u64) < config.min_winner_votes as u64 => Some(RejectionReason::BelowMinVotes),
        Some(_) => None,
    };
    match reason {
        Some(reason) => InvocationOutcome::Rejected {
            reason,
            vote: Some(outcome),
            stats,
        },
        None => InvocationOutcome::Accepted {
            answer: outcome.winner.clone().expect("checked above"),
            vote: outcome,
            stats,
        },
    }
}

pub fn gen_invocation(
    query: &str,
    tools: &CandidateToolSet,
    backend: &dyn Backend,
    config: &EvolutionConfig,
    seed: u64,
) -> Result<InvocationOutcome, EvolutionError> {
    if query.is_empty() {
        return Err(EvolutionError::EmptyQuery);
    }
    if tools.is_empty() {
        return Err(EvolutionError::EmptyToolSet);
    }
    let prompt = build_invocation_prompt(query, tools);
    let texts = backend.complete(&prompt, &config.params(config.temperature_invoke, config.n_samples, seed))?;
    Ok(decide_invocation(&texts, tools, config))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: u32,
    pub queries_in: usize,
    pub tool_completions: usize,
    pub tool_objects_extracted: usize,
    pub tools_kept: usize,
    pub tool_violation_tally: BTreeMap<ViolationKind, usize>,
    pub duplicates_dropped: usize,
    pub truncated: usize,
    pub queries_rejected_tools: usize,
    pub ballots_cast: usize,
    pub ballots_tied: usize,
    pub ballots_rejected_rule: usize,
    pub ballots_below_min_votes: usize,
    pub invocation_completions: usize,
    pub completions_unparsable: usize,
    pub completions_rule_dirty: usize,
    pub completions_empty: usize,
    pub queries_accepted: usize,
    pub backend_failures: usize,
    pub backend_errors: BTreeMap<String, usize>,
    pub samples_emitted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    /// Per accepted query, its invocation sample followed by its generation sample.
    pub samples: Vec<TrainingSample>,
    pub report: RoundReport,
}

impl RoundOutput {
    pub fn of(&self, objective: Objective) -> Vec<TrainingSample> {
        self.samples.iter().filter(|s| s.objective == objective).cloned().collect()
    }
}

enum QueryResult {
    Failed(BackendError),
    NoTools(ToolGenStats),
    Voted(ToolGenStats, CandidateToolSet, InvocationOutcome),
}

pub fn query_id(round: u32, index: usize) -> String {
    format!("r{round}-q{index:06}")
}

fn process_query(query: &str, index: usize, backend: &dyn Backend, config: &EvolutionConfig, round: u32) -> QueryResult {
    let label = format!("round-{round}");
    let tool_seed = derive_seed(config.seed, &format!("{label}-tools"), index as u64);
    let call_seed = derive_seed(config.seed, &format!("{label}-calls"), index as u64);
    let gen = match gen_tools_for_query(query, backend, config, tool_seed) {
        Ok(g) => g,
        Err(EvolutionError::Backend(e)) => return QueryResult::Failed(e),
        Err(e) => return QueryResult::Failed(BackendError::Config(e.to_string())),
    };
    let (tools, stats) = match gen {
        ToolGenOutcome::Rejected { stats } => return QueryResult::NoTools(stats),
        ToolGenOutcome::Kept { tools, stats } => (tools, stats),
    };
    match gen_invocation(query, &tools, backend, config, call_seed) {
        Ok(outcome) => QueryResult::Voted(stats, tools, outcome),
        Err(EvolutionError::Backend(e)) => QueryResult::Failed(e),
        Err(e) => QueryResult::Failed(BackendError::Config(e.to_string())),
    }
}

/// Run one round over `queries`. Results come back in query order whatever
/// the worker count.
pub fn run_round(
    queries: &[String],
    backend: &dyn Backend,
    config: &EvolutionConfig,
    round: u32,
) -> Result<RoundOutput, EvolutionError> {
    config.validate()?;
    if queries.is_empty() {
        return Err(EvolutionError::Config("no queries for this round".into()));
    }
    if let Some(i) = queries.iter().position(|q| q.is_empty()) {
        return Err(EvolutionError::Config(format!("query {i} is empty")));
    }
    let queries = &queries[..queries.len().min(config.queries_per_round)];
    let workers = config.workers.unwrap_or_else(|| backend.max_in_flight());
    info!("round {round}: {} queries on {workers} workers", queries.len());
    let results = run_ordered(queries.len(), workers, |i| process_query(&queries[i], i, backend, config, round));

    let mut report = RoundReport {
        round_index: round,
        queries_in: queries.len(),
        ..RoundReport::default()
    };
    let mut samples = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        let stats = match &result {
            QueryResult::Failed(e) => {
                debug!("query {i}: backend failure: {e}");
                report.backend_failures += 1;
                *report.backend_errors.entry(e.to_string()).or_default() += 1;
                None
            }
            QueryResult::NoTools(stats) => {
                report.queries_rejected_tools += 1;
                Some(stats)
            }
            QueryResult::Voted(stats, ..) => Some(stats),
        };
        if let Some(stats) = stats {
            report.tool_completions += 1;
            report.tool_objects_extracted += stats.extracted;
            report.tools_kept += stats.kept;
            report.duplicates_dropped += stats.duplicates_dropped;
            report.truncated += stats.truncated;
            for (k, n) in &stats.tally {
                *report.tool_violation_tally.entry(*k).or_default() += n;
            }
        }
        let QueryResult::Voted(_, tools, outcome) = result else { continue };
        report.ballots_cast += 1;
        let b = outcome.stats();
        report.invocation_completions += b.sampled;
        report.completions_unparsable += b.unparsable;
        report.completions_rule_dirty += b.rule_dirty;
        report.completions_empty += b.empty;
        match outcome {
            InvocationOutcome::Rejected { reason, .. } => match reason {
                RejectionReason::AllRuleDirty => report.ballots_rejected_rule += 1,
                RejectionReason::Tie => report.ballots_tied += 1,
                RejectionReason::BelowMinVotes => report.ballots_below_min_votes += 1,
            },
            InvocationOutcome::Accepted { answer, .. } => {
                report.queries_accepted += 1;
                let id = query_id(round, i);
                let query = queries[i].clone();
                samples.push(TrainingSample::invocation(id.clone(), query.clone(), tools.clone(), answer, round));
                samples.push(TrainingSample::generation(id, query, tools, round));
            }
        }
    }
    report.samples_emitted = samples.len();
    Ok(RoundOutput { samples, report })
}

pub fn round_dir(out_dir: &Path, round: u32) -> PathBuf {
    out_dir.join(format!("round-{round}"))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<(), EvolutionError>) -> Result<(), EvolutionError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(io_err(path))?;
    w.get_ref().sync_all().map_err(io_err(path))
}

/// Write `invocation.jsonl`, `generation.jsonl` and `report.json` for a round.
/// Files go to a scratch directory that is renamed into place at the end, so
/// the final directory either holds all three files or does not exist.
pub fn write_round(out_dir: &Path, output: &RoundOutput, force: bool) -> Result<PathBuf, EvolutionError> {
    let round = output.report.round_index;
    let target = round_dir(out_dir, round);
    if target.exists() && !force {
        return Err(EvolutionError::RoundExists(target));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let scratch = out_dir.join(format!(".round-{round}.partial-{}", std::process::id()));
    if scratch.exists() {
        fs::remove_dir_all(&scratch).map_err(io_err(&scratch))?;
    }
    fs::create_dir(&scratch).map_err(io_err(&scratch))?;

    let inv = output.of(Objective::Invocation);
    let gen = output.of(Objective::Generation);
    write_file(&scratch.join("invocation.jsonl"), |w| {
        emit_invocation_samples(&inv, w)?;
        Ok(())
    })?;
    write_file(&scratch.join("generation.jsonl"), |w| {
        emit_generation_samples(&gen, w)?;
        Ok(())
    })?;
    let report_path = scratch.join("report.json");
    write_file(&report_path, |w| {
        serde_json::to_writer_pretty(&mut *w, &output.report).map_err(|e| io_err(&report_path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(&report_path))
    })?;

    if target.exists() {
        fs::remove_dir_all(&target).map_err(io_err(&target))?;
    }
    fs::rename(&scratch, &target).map_err(io_err(&target))?;
    Ok(target)
}
