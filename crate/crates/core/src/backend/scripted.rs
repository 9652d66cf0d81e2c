//! A deterministic stand-in for a model.
//!
//! The scripted backend knows the right answer for every query (from a
//! scenario book or the synthetic generator) and corrupts its output at
//! configured rates, so pipelines can be exercised offline with known error
//! statistics.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, DecodeParams};
use crate::prompting::{classify_prompt, render_tool_call_json, ChatPrompt, PromptKind};
use crate::seeding::{rng, stable_hash};
use crate::synth::{catalog, scenario_for_query, Scenario};
use crate::tool_schema::{canonical_json, CandidateToolSet, JsonType, ParamBlock, ParamSpec, ToolDoc};
use crate::validation::InvocationAnswer;

fn default_variants() -> u32 {
    4
}

/// Per-sample corruption rates.
///
/// Invocation defects are mutually exclusive: one uniform draw per completion
/// selects at most one of them, so their rates must sum to at most 1. Tool
/// definition defects are drawn per tool, with the same rule for
/// `p_unparsable + p_missing_desc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefectProfile {
    pub p_unparsable: f64,
    pub p_missing_desc: f64,
    pub p_hallucinated_tool: f64,
    pub p_hallucinated_arg: f64,
    pub p_wrong_type: f64,
    pub p_wrong_answer: f64,
    /// Number of distinct wrong answers a wrong sample picks from.
    #[serde(default = "default_variants")]
    pub n_wrong_variants: u32,
    pub seed: u64,
}

impl Default for DefectProfile {
    fn default() -> Self {
        Self {
            p_unparsable: 0.0,
            p_missing_desc: 0.0,
            p_hallucinated_tool: 0.0,
            p_hallucinated_arg: 0.0,
            p_wrong_type: 0.0,
            p_wrong_answer: 0.0,
            n_wrong_variants: default_variants(),
            seed: 0,
        }
    }
}

impl DefectProfile {
    pub fn clean() -> Self {
        Self::default()
    }

    fn rates(&self) -> [(&'static str, f64); 6] {
        [
            ("p_unparsable", self.p_unparsable),
            ("p_missing_desc", self.p_missing_desc),
            ("p_hallucinated_tool", self.p_hallucinated_tool),
            ("p_hallucinated_arg", self.p_hallucinated_arg),
            ("p_wrong_type", self.p_wrong_type),
            ("p_wrong_answer", self.p_wrong_answer),
        ]
    }

    fn invocation_total(&self) -> f64 {
        self.p_unparsable + self.p_hallucinated_tool + self.p_hallucinated_arg + self.p_wrong_type + self.p_wrong_answer
    }

    pub fn check(&self) -> Result<(), BackendError> {
        for (name, p) in self.rates() {
            if !(0.0..=1.0).contains(&p) {
                return Err(BackendError::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.invocation_total() > 1.0 + 1e-9 {
            return Err(BackendError::Config("invocation defect rates sum above 1".into()));
        }
        if self.p_unparsable + self.p_missing_desc > 1.0 + 1e-9 {
            return Err(BackendError::Config("p_unparsable + p_missing_desc exceeds 1".into()));
        }
        if self.n_wrong_variants == 0 {
            return Err(BackendError::Config("n_wrong_variants must be at least 1".into()));
        }
        Ok(())
    }

    /// Rates scaled by `decay^(round - 1)`; round 1 is unchanged.
    pub fn decayed(&self, decay: f64, round: u32) -> Self {
        let f = decay.powi(round.saturating_sub(1) as i32);
        Self {
            p_unparsable: self.p_unparsable * f,
            p_missing_desc: self.p_missing_desc * f,
            p_hallucinated_tool: self.p_hallucinated_tool * f,
            p_hallucinated_arg: self.p_hallucinated_arg * f,
            p_wrong_type: self.p_wrong_type * f,
            p_wrong_answer: self.p_wrong_answer * f,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CallDefect {
    Clean,
    Unparsable,
    HallucinatedTool,
    HallucinatedArg,
    WrongType,
    WrongAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DocDefect {
    Clean,
    Unparsable,
    MissingDesc,
}

pub struct ScriptedBackend {
    profile: DefectProfile,
    book: HashMap<String, Scenario>,
    descriptions: HashMap<String, ToolDoc>,
    max_in_flight: usize,
    requests: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(profile: DefectProfile) -> Self {
        let descriptions = catalog().into_iter().map(|d| (d.description.clone(), d)).collect();
        Self {
            profile,
            book: HashMap::new(),
            descriptions,
            max_in_flight: 4,
            requests: AtomicU64::new(0),
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    /// Answer these queries from the given scenarios instead of synthesizing.
    pub fn with_scenarios(mut self, scenarios: impl IntoIterator<Item = Scenario>) -> Self {
        for sc in scenarios {
            for doc in sc.tools.iter() {
                self.descriptions.entry(doc.description.clone()).or_insert_with(|| doc.clone());
            }
            self.book.insert(sc.query.clone(), sc);
        }
        self
    }

    /// Add tool definitions that adaption prompts can be answered from.
    pub fn with_tools(mut self, docs: impl IntoIterator<Item = ToolDoc>) -> Self {
        for doc in docs {
            self.descriptions.insert(doc.description.clone(), doc);
        }
        self
    }

    pub fn profile(&self) -> &DefectProfile {
        &self.profile
    }

    /// Number of `complete` calls served so far.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn scenario(&self, query: &str) -> Scenario {
        self.book.get(query).cloned().unwrap_or_else(|| scenario_for_query(query))
    }

    fn doc_for_description(&self, description: &str) -> ToolDoc {
        if let Some(doc) = self.descriptions.get(description) {
            return doc.clone();
        }
        let h = stable_hash(&[b"adaption", description.as_bytes()]);
        let input = ParamSpec::new("input", JsonType::String, "Free-text input for the tool.");
        ToolDoc::new(
            format!("tool_{:08x}", h as u32),
            description,
            ParamBlock::new(vec![input], vec!["input".into()]),
        )
    }

    fn doc_defect(&self, r: &mut ChaCha8Rng) -> DocDefect {
        let u: f64 = r.gen();
        let p = &self.profile;
        if u < p.p_unparsable {
            DocDefect::Unparsable
        } else if u < p.p_unparsable + p.p_missing_desc {
            DocDefect::MissingDesc
        } else {
            DocDefect::Clean
        }
    }

    fn call_defect(&self, r: &mut ChaCha8Rng) -> CallDefect {
        let u: f64 = r.gen();
        let p = &self.profile;
        let mut edge = 0.0;
        for (rate, d) in [
            (p.p_unparsable, CallDefect::Unparsable),
            (p.p_hallucinated_tool, CallDefect::HallucinatedTool),
            (p.p_hallucinated_arg, CallDefect::HallucinatedArg),
            (p.p_wrong_type, CallDefect::WrongType),
            (p.p_wrong_answer, CallDefect::WrongAnswer),
        ] {
            edge += rate;
            if u < edge {
                return d;
            }
        }
        CallDefect::Clean
    }

    fn render_docs<'a>(&self, docs: impl Iterator<Item = &'a ToolDoc>, r: &mut ChaCha8Rng) -> String {
        let body: Vec<String> = docs
            .map(|doc| match self.doc_defect(r) {
                DocDefect::Clean => canonical_json(doc),
                DocDefect::Unparsable => canonical_json(doc).replacen(':', " ", 1),
                DocDefect::MissingDesc => canonical_json(&strip_description(doc)),
            })
            .collect();
        format!("<tools>\n{}\n</tools>", body.join("\n"))
    }

    fn render_answer(&self, sc: &Scenario, r: &mut ChaCha8Rng) -> String {
        let defect = self.call_defect(r);
        let mut answer = sc.answer.clone();
        let mut unparsable = false;
        match defect {
            CallDefect::Clean => {}
            CallDefect::Unparsable => unparsable = true,
            CallDefect::HallucinatedTool => hallucinate_tool(&mut answer),
            CallDefect::HallucinatedArg => {
                if let Some(c) = answer.calls.first_mut() {
                    c.arguments.insert("extra_option".into(), json!("auto"));
                }
            }
            CallDefect::WrongType => {
                if !swap_type(&mut answer) {
                    hallucinate_tool(&mut answer);
                }
            }
            CallDefect::WrongAnswer => {
                let k = r.gen_range(1..=self.profile.n_wrong_variants);
                perturb(&mut answer, &sc.tools, k);
            }
        }
        let blocks: Vec<String> = answer
            .calls
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut json = render_tool_call_json(c);
                if unparsable && i == 0 {
                    json.pop();
                }
                format!("<tool_call>\n{json}\n</tool_call>")
            })
            .collect();
        blocks.join("\n")
    }

    fn sample(&self, kind: &PromptKind<'_>, r: &mut ChaCha8Rng) -> String {
        match kind {
            PromptKind::Generation { query } => {
                let sc = self.scenario(query);
                self.render_docs(sc.tools.iter(), r)
            }
            PromptKind::Adaption { description } => {
                let doc = self.doc_for_description(description);
                self.render_docs(std::iter::once(&doc), r)
            }
            PromptKind::Invocation { query } => {
                let sc = self.scenario(query);
                self.render_answer(&sc, r)
            }
        }
    }
}

fn strip_description(doc: &ToolDoc) -> ToolDoc {
    let mut doc = doc.clone();
    match doc.arguments.params.first_mut() {
        Some(p) => p.description = None,
        None => doc.description.clear(),
    }
    doc
}

fn hallucinate_tool(answer: &mut InvocationAnswer) {
    if let Some(c) = answer.calls.first_mut() {
        c.tool_name.push_str("_v2");
    }
}

/// Change the first argument's value to a different JSON type.
fn swap_type(answer: &mut InvocationAnswer) -> bool {
    for call in &mut answer.calls {
        if let Some((_, v)) = call.arguments.iter_mut().next() {
            *v = match &*v {
                Value::String(s) => json!(s.len()),
                Value::Number(n) => json!(n.to_string()),
                other => json!(other.to_string()),
            };
            return true;
        }
    }
    false
}

/// Produce wrong variant `k`: a rule-clean answer that differs from the right one.
fn perturb(answer: &mut InvocationAnswer, tools: &CandidateToolSet, k: u32) {
    for call in &mut answer.calls {
        let tool = tools.get(&call.tool_name);
        for (name, v) in call.arguments.iter_mut() {
            let enumerated = tool
                .and_then(|t| t.param(name))
                .is_some_and(|p| p.enum_values.is_some());
            if enumerated {
                continue;
            }
            let changed = match v {
                Value::String(s) => Some(json!(format!("{s} v{k}"))),
                Value::Number(n) if n.is_i64() => Some(json!(n.as_i64().unwrap() + k as i64)),
                Value::Number(n) => n.as_f64().map(|f| json!(f + k as f64)),
                _ => None,
            };
            if let Some(nv) = changed {
                *v = nv;
                return;
            }
        }
    }
    if let Some(last) = answer.calls.last().cloned() {
        answer.calls.extend(std::iter::repeat_n(last, k as usize));
    }
}

fn truncate_to_budget(mut text: String, max_tokens: u32) -> String {
    // Roughly four characters per token.
    let budget = (max_tokens as usize).saturating_mul(4);
    if text.len() > budget {
        let mut cut = budget;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        text.truncate(cut);
    }
    text
}

impl Backend for ScriptedBackend {
    fn complete(&self, prompt: &ChatPrompt, params: &DecodeParams) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        self.requests.fetch_add(1, Ordering::Relaxed);
        let kind = classify_prompt(prompt)
            .ok_or_else(|| BackendError::InvalidResponse("scripted backend does not recognize this prompt".into()))?;
        let seed = params.seed.unwrap_or(self.profile.seed);
        let prompt_hash = stable_hash(&[prompt.transcript().as_bytes()]);
        Ok((0..params.n_samples as u64)
            .map(|i| {
                let mut r = rng(stable_hash(&[&seed.to_le_bytes(), &prompt_hash.to_le_bytes(), &i.to_le_bytes()]));
                truncate_to_budget(self.sample(&kind, &mut r), params.max_tokens)
            })
            .collect())
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

/// Read scenarios from a JSONL file, one per line; blank lines are skipped.
pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>, BackendError> {
    let text = fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BackendError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
