//! JSONL chat datasets for the three training objectives, and the line-based
//! input files (queries, tool pools, evaluation cases).

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval_harness::EvalCase;
use crate::evolution::{Objective, TrainingSample};
use crate::extraction::{extract_tool_calls, extract_tool_docs};
use crate::prompting::{
    build_adaption_prompt, build_generation_prompt, build_invocation_prompt, generation_user_prefix,
    invocation_system_parts, render_tool_calls, render_tools_block, ChatMessage, ChatPrompt, Role,
};
use crate::tool_schema::{parse_tool_doc, CandidateToolSet, SchemaError, ToolDoc, Violation};
use crate::validation::validate_invocation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub objective: Objective,
    pub round: u32,
    pub query_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRecord {
    pub messages: Vec<ChatMessage>,
    pub meta: RecordMeta,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample {query_id} fails re-validation: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    DirtySample { query_id: String, violations: Vec<Violation> },
    #[error("sample {query_id} is not shaped like a {expected} sample")]
    Malformed { query_id: String, expected: &'static str },
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn record(prompt: ChatPrompt, answer: String, objective: Objective, round: u32, query_id: &str) -> ChatRecord {
    let mut messages = prompt.messages;
    messages.push(ChatMessage::new(Role::Assistant, answer));
    ChatRecord {
        messages,
        meta: RecordMeta {
            objective,
            round,
            query_id: query_id.to_owned(),
        },
    }
}

fn write_line<W: Write>(sink: &mut W, rec: &ChatRecord) -> Result<(), DatasetError> {
    serde_json::to_writer(&mut *sink, rec).map_err(io::Error::from)?;
    sink.write_all(b"\n")?;
    Ok(())
}

fn malformed(s: &TrainingSample, expected: &'static str) -> DatasetError {
    DatasetError::Malformed {
        query_id: s.query_id.clone(),
        expected,
    }
}

pub fn adaption_record(doc: &ToolDoc, query_id: &str) -> Result<ChatRecord, DatasetError> {
    let prompt = build_adaption_prompt(&doc.description).map_err(|_| DatasetError::Malformed {
        query_id: query_id.to_owned(),
        expected: "adaption",
    })?;
    let tools = CandidateToolSet::new(vec![doc.clone()]).expect("single tool");
    Ok(record(prompt, render_tools_block(&tools), Objective::Adaption, 0, query_id))
}

pub fn invocation_record(s: &TrainingSample) -> Result<ChatRecord, DatasetError> {
    let (Objective::Invocation, Some(query), Some(answer)) = (s.objective, &s.query, &s.answer) else {
        return Err(malformed(s, "invocation"));
    };
    if answer.is_empty() || query.is_empty() {
        return Err(malformed(s, "invocation"));
    }
    let violations = validate_invocation(answer, &s.tools);
    if !violations.is_empty() {
        return Err(DatasetError::DirtySample {
            query_id: s.query_id.clone(),
            violations,
        });
    }
    let prompt = build_invocation_prompt(query, &s.tools);
    Ok(record(prompt, render_tool_calls(answer), Objective::Invocation, s.round, &s.query_id))
}

pub fn generation_record(s: &TrainingSample) -> Result<ChatRecord, DatasetError> {
    let (Objective::Generation, Some(query)) = (s.objective, &s.query) else {
        return Err(malformed(s, "generation"));
    };
    if s.tools.is_empty() {
        return Err(malformed(s, "generation"));
    }
    let prompt = build_generation_prompt(query).map_err(|_| malformed(s, "generation"))?;
    Ok(record(prompt, render_tools_block(&s.tools), Objective::Generation, s.round, &s.query_id))
}

/// One record per tool, with query ids `tool-{index}`.
pub fn emit_adaption_samples<W: Write>(tools: &[ToolDoc], sink: &mut W) -> Result<usize, DatasetError> {
    for (i, doc) in tools.iter().enumerate() {
        write_line(sink, &adaption_record(doc, &format!("tool-{i}"))?)?;
    }
    Ok(tools.len())
}

/// Every sample is re-validated against its tools before anything is written.
pub fn emit_invocation_samples<W: Write>(samples: &[TrainingSample], sink: &mut W) -> Result<usize, DatasetError> {
    let records = samples.iter().map(invocation_record).collect::<Result<Vec<_>, _>>()?;
    for r in &records {
        write_line(sink, r)?;
    }
    Ok(records.len())
}

pub fn emit_generation_samples<W: Write>(samples: &[TrainingSample], sink: &mut W) -> Result<usize, DatasetError> {
    let records = samples.iter().map(generation_record).collect::<Result<Vec<_>, _>>()?;
    for r in &records {
        write_line(sink, r)?;
    }
    Ok(records.len())
}

fn bad(line: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::BadLine {
        line,
        reason: reason.into(),
    }
}

fn tools_from_block(text: &str, line: usize) -> Result<CandidateToolSet, DatasetError> {
    let ex = extract_tool_docs(text);
    if let Some(f) = ex.failures.first() {
        return Err(bad(line, f.reason.to_string()));
    }
    CandidateToolSet::new(ex.items).map_err(|e| bad(line, e.to_string()))
}

/// Rebuild the training sample a record was emitted from. `line` is only used
/// in error messages.
pub fn decode_record(rec: &ChatRecord, line: usize) -> Result<TrainingSample, DatasetError> {
    let [system, user, assistant] = rec.messages.as_slice() else {
        return Err(bad(line, "expected system, user and assistant messages"));
    };
    if (system.role, user.role, assistant.role) != (Role::System, Role::User, Role::Assistant) {
        return Err(bad(line, "roles must be system, user, assistant"));
    }
    let m = &rec.meta;
    match m.objective {
        Objective::Adaption => {
            let tools = tools_from_block(&assistant.content, line)?;
            let mut docs = tools.into_tools();
            if docs.len() != 1 {
                return Err(bad(line, "adaption target must hold exactly one tool"));
            }
            Ok(TrainingSample::adaption(m.query_id.clone(), docs.remove(0)))
        }
        Objective::Generation => {
            let query = user
                .content
                .strip_prefix(generation_user_prefix())
                .ok_or_else(|| bad(line, "user turn is not a generation instruction"))?;
            let tools = tools_from_block(&assistant.content, line)?;
            Ok(TrainingSample::generation(m.query_id.clone(), query.to_owned(), tools, m.round))
        }
        Objective::Invocation => {
            let (head, tail) = invocation_system_parts();
            let block = system
                .content
                .strip_prefix(head)
                .and_then(|s| s.strip_suffix(tail))
                .ok_or_else(|| bad(line, "system turn is not an invocation prompt"))?;
            let mut docs = Vec::new();
            for l in block.lines().filter(|l| !l.trim().is_empty()) {
                docs.push(parse_tool_doc(l).map_err(|e| bad(line, e.to_string()))?);
            }
            let tools = CandidateToolSet::new(docs).map_err(|e| bad(line, e.to_string()))?;
            let calls = extract_tool_calls(&assistant.content);
            if let Some(f) = calls.failures.first() {
                return Err(bad(line, f.reason.to_string()));
            }
            Ok(TrainingSample::invocation(
                m.query_id.clone(),
                user.content.clone(),
                tools,
                calls.into_answer(),
                m.round,
            ))
        }
    }
}

fn nonblank_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn read_records(path: &Path) -> Result<Vec<ChatRecord>, DatasetError> {
    let text = fs::read_to_string(path)?;
    nonblank_lines(&text)
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| bad(n, e.to_string())))
        .collect()
}

/// One query per line; blank lines are skipped.
pub fn load_queries(path: &Path) -> io::Result<Vec<String>> {
    Ok(nonblank_lines(&fs::read_to_string(path)?).map(|(_, l)| l.to_owned()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub error: SchemaError,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToolPool {
    pub docs: Vec<ToolDoc>,
    /// Lines that did not parse, with 1-based line numbers.
    pub errors: Vec<LineError>,
    /// Line number of each entry in `docs`.
    pub lines: Vec<usize>,
}

/// One tool definition per line. Unparsable lines are collected, not fatal.
pub fn load_toolpool(path: &Path) -> io::Result<ToolPool> {
    Ok(parse_toolpool(&fs::read_to_string(path)?))
}

pub fn parse_toolpool(text: &str) -> ToolPool {
    let mut pool = ToolPool::default();
    for (n, l) in nonblank_lines(text) {
        match parse_tool_doc(l) {
            Ok(doc) => {
                pool.docs.push(doc);
                pool.lines.push(n);
            }
            Err(error) => pool.errors.push(LineError { line: n, error }),
        }
    }
    pool
}

/// Evaluation cases, one JSON object per line, each checked for well-formedness.
pub fn load_cases(path: &Path) -> Result<Vec<EvalCase>, DatasetError> {
    let text = fs::read_to_string(path)?;
    nonblank_lines(&text)
        .map(|(n, l)| {
            let case: EvalCase = serde_json::from_str(l).map_err(|e| bad(n, e.to_string()))?;
            case.check().map_err(|e| bad(n, e.to_string()))?;
            Ok(case)
        })
        .collect()
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], sink: &mut W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *sink, item)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{catalog, scenario};

    #[test]
    fn adaption_round_trip() {
        let docs = catalog();
        let mut buf = Vec::new();
        assert_eq!(emit_adaption_samples(&docs, &mut buf).unwrap(), docs.len());
        let text = String::from_utf8(buf).unwrap();
        for (i, line) in text.lines().enumerate() {
            let rec: ChatRecord = serde_json::from_str(line).unwrap();
            assert_eq!(rec.meta.query_id, format!("tool-{i}"));
            let s = decode_record(&rec, i + 1).unwrap();
            assert_eq!(s.tools.tools(), &docs[i..=i]);
        }
        let mut empty = Vec::new();
        assert_eq!(emit_adaption_samples(&[], &mut empty).unwrap(), 0);
        assert!(empty.is_empty());
    }

    #[test]
    fn invocation_and_generation_round_trip() {
        for i in 0..20 {
            let sc = scenario(5, i);
            let inv = TrainingSample::invocation(format!("q{i}"), sc.query.clone(), sc.tools.clone(), sc.answer.clone(), 2);
            let gen = TrainingSample::generation(format!("q{i}"), sc.query.clone(), sc.tools.clone(), 2);
            assert_eq!(decode_record(&invocation_record(&inv).unwrap(), 1).unwrap(), inv);
            assert_eq!(decode_record(&generation_record(&gen).unwrap(), 1).unwrap(), gen);
        }
    }

    #[test]
    fn dirty_samples_are_refused() {
        let sc = scenario(5, 0);
        let mut answer = sc.answer.clone();
        answer.calls[0].arguments.insert("bogus".into(), serde_json::json!(1));
        let s = TrainingSample::invocation("x".into(), sc.query, sc.tools, answer, 1);
        let mut buf = Vec::new();
        assert!(matches!(emit_invocation_samples(&[s], &mut buf), Err(DatasetError::DirtySample { .. })));
        assert!(buf.is_empty());
    }

    #[test]
    fn toolpool_reports_bad_lines() {
        let good: Vec<String> = catalog().iter().take(9).map(crate::tool_schema::canonical_json).collect();
        let mut lines = good.clone();
        lines.insert(4, "{\"name\": \"broken\",".into());
        lines.insert(2, String::new());
        let pool = parse_toolpool(&lines.join("\n"));
        assert_eq!(pool.docs.len(), 9);
        assert_eq!(pool.errors.len(), 1);
        assert_eq!(pool.errors[0].line, 6);
    }
}
