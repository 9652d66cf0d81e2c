//! Single-turn AST evaluation in the style of the Berkeley function-calling
//! leaderboard: per-case structural matching, per-category accuracy and the
//! subset/overall aggregation used to report results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{Backend, DecodeParams};
use crate::consensus::canonical_value;
use crate::extraction::extract_tool_calls;
use crate::pool::run_ordered;
use crate::prompting::build_invocation_prompt;
use crate::tool_schema::CandidateToolSet;
use crate::validation::{InvocationAnswer, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Nonlive,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Simple,
    Multiple,
    Parallel,
    ParallelMultiple,
}

impl Subset {
    pub const ALL: [Subset; 2] = [Subset::Nonlive, Subset::Live];
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Simple,
        Category::Multiple,
        Category::Parallel,
        Category::ParallelMultiple,
    ];

    pub fn is_parallel(self) -> bool {
        matches!(self, Category::Parallel | Category::ParallelMultiple)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Nonlive => "nonlive",
            Subset::Live => "live",
        })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Simple => "simple",
            Category::Multiple => "multiple",
            Category::Parallel => "parallel",
            Category::ParallelMultiple => "parallel_multiple",
        })
    }
}

/// Acceptable forms of one expected call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCall {
    #[serde(rename = "name")]
    pub tool_name: String,
    /// Argument name to the list of acceptable values.
    pub allowed: BTreeMap<String, Vec<Value>>,
    /// Arguments that may be omitted.
    #[serde(default, rename = "optional", skip_serializing_if = "BTreeSet::is_empty")]
    pub optional_args: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub id: String,
    pub subset: Subset,
    pub category: Category,
    pub query: String,
    pub tools: CandidateToolSet,
    pub expected: Vec<ExpectedCall>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("case {id}: {reason}")]
    MalformedCase { id: String, reason: String },
    #[error("no score for {subset}/{category}")]
    MissingCategory { subset: Subset, category: Category },
}

impl EvalCase {
    pub fn check(&self) -> Result<(), EvalError> {
        let bad = |reason: String| EvalError::MalformedCase {
            id: self.id.clone(),
            reason,
        };
        let n = self.expected.len();
        match self.category {
            Category::Simple | Category::Multiple if n != 1 => {
                return Err(bad(format!("{} case expects exactly one call, has {n}", self.category)));
            }
            Category::Parallel | Category::ParallelMultiple if n < 2 => {
                return Err(bad(format!("{} case expects at least two calls, has {n}", self.category)));
            }
            _ => {}
        }
        if self.category == Category::Multiple && !(2..=4).contains(&self.tools.len()) {
            return Err(bad(format!("multiple case offers {} tools, needs 2 to 4", self.tools.len())));
        }
        for e in &self.expected {
            let tool = self
                .tools
                .get(&e.tool_name)
                .ok_or_else(|| bad(format!("expected call to unknown tool `{}`", e.tool_name)))?;
            for k in e.allowed.keys() {
                if tool.param(k).is_none() {
                    return Err(bad(format!("`{}` has no parameter `{k}`", e.tool_name)));
                }
            }
        }
        Ok(())
    }
}

/// True iff the names agree, every non-optional expected argument is present
/// with an allowed value, and no argument falls outside the allowed keys.
pub fn match_call(call: &ToolCall, expected: &ExpectedCall) -> bool {
    if call.tool_name != expected.tool_name {
        return false;
    }
    for (arg, value) in &call.arguments {
        let Some(allowed) = expected.allowed.get(arg) else {
            return false;
        };
        let v = canonical_value(value);
        if !allowed.iter().any(|a| canonical_value(a) == v) {
            return false;
        }
    }
    expected
        .allowed
        .keys()
        .filter(|k| !expected.optional_args.contains(*k))
        .all(|k| call.arguments.contains_key(k))
}

/// Order-insensitive: the answer scores iff its calls can be paired one-to-one
/// with the expected calls.
pub fn score_case(answer: &InvocationAnswer, case: &EvalCase) -> bool {
    let calls = &answer.calls;
    if calls.len() != case.expected.len() {
        return false;
    }
    let compatible: Vec<Vec<bool>> = calls
        .iter()
        .map(|c| case.expected.iter().map(|e| match_call(c, e)).collect())
        .collect();
    perfect_matching_exists(&compatible)
}

/// Kuhn's augmenting-path bipartite matching on a square compatibility matrix.
fn perfect_matching_exists(compatible: &[Vec<bool>]) -> bool {
    let n = compatible.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];

    fn augment(row: usize, compatible: &[Vec<bool>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for col in 0..compatible[row].len() {
            if compatible[row][col] && !seen[col] {
                seen[col] = true;
                if owner[col].is_none_or(|r| augment(r, compatible, seen, owner)) {
                    owner[col] = Some(row);
                    return true;
                }
            }
        }
        false
    }

    (0..n).all(|row| {
        let mut seen = vec![false; n];
        augment(row, compatible, &mut seen, &mut owner)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    /// Fraction in [0, 1].
    pub accuracy: f64,
    pub cases: usize,
}

impl CategoryScore {
    pub fn from_counts(correct: usize, cases: usize) -> Self {
        let accuracy = if cases == 0 { 0.0 } else { correct as f64 / cases as f64 };
        Self { accuracy, cases }
    }
}

/// Relative weight of each live category in the live subset score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiveWeights {
    pub simple: f64,
    pub multiple: f64,
    pub parallel: f64,
    pub parallel_multiple: f64,
}

impl Default for LiveWeights {
    fn default() -> Self {
        Self {
            simple: 258.0,
            multiple: 1053.0,
            parallel: 16.0,
            parallel_multiple: 24.0,
        }
    }
}

impl LiveWeights {
    pub fn weight(&self, c: Category) -> f64 {
        match c {
            Category::Simple => self.simple,
            Category::Multiple => self.multiple,
            Category::Parallel => self.parallel,
            Category::ParallelMultiple => self.parallel_multiple,
        }
    }
}

pub type ScoreInputs = BTreeMap<(Subset, Category), CategoryScore>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub subset: Subset,
    pub category: Category,
    pub accuracy: f64,
    pub cases: usize,
}

/// Scores at full precision. Subset and overall scores are present only when
/// every category of the subset (or of both subsets) has a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub categories: Vec<CategoryRow>,
    pub nonlive: Option<f64>,
    pub live: Option<f64>,
    pub overall: Option<f64>,
    pub live_weights: LiveWeights,
}

impl ScoreTable {
    pub fn category(&self, subset: Subset, category: Category) -> Option<&CategoryRow> {
        self.categories
            .iter()
            .find(|r| r.subset == subset && r.category == category)
    }
}

/// Non-live is the plain mean of its four categories, live is weighted by
/// `weights`, overall is the mean of the two.
pub fn aggregate(scores: &ScoreInputs, weights: &LiveWeights) -> Result<ScoreTable, EvalError> {
    for subset in Subset::ALL {
        for category in Category::ALL {
            if !scores.contains_key(&(subset, category)) {
                return Err(EvalError::MissingCategory { subset, category });
            }
        }
    }
    Ok(tabulate(scores, weights))
}

/// Like [`aggregate`] but tolerates missing categories, leaving the affected
/// subset and overall scores empty.
pub fn tabulate(scores: &ScoreInputs, weights: &LiveWeights) -> ScoreTable {
    let complete = |s: Subset| Category::ALL.iter().all(|c| scores.contains_key(&(s, *c)));
    let nonlive = complete(Subset::Nonlive).then(|| {
        Category::ALL
            .iter()
            .map(|c| scores[&(Subset::Nonlive, *c)].accuracy)
            .sum::<f64>()
            / 4.0
    });
    let live = complete(Subset::Live).then(|| {
        let total: f64 = Category::ALL.iter().map(|c| weights.weight(*c)).sum();
        Category::ALL
            .iter()
            .map(|c| scores[&(Subset::Live, *c)].accuracy * weights.weight(*c))
            .sum::<f64>()
            / total
    });
    let overall = match (nonlive, live) {
        (Some(n), Some(l)) => Some(overall_score(n, l)),
        _ => None,
    };
    ScoreTable {
        categories: scores
            .iter()
            .map(|((subset, category), s)| CategoryRow {
                subset: *subset,
                category: *category,
                accuracy: s.accuracy,
                cases: s.cases,
            })
            .collect(),
        nonlive,
        live,
        overall,
        live_weights: *weights,
    }
}

pub fn overall_score(nonlive: f64, live: f64) -> f64 {
    (nonlive + live) / 2.0
}

/// Round half-up to two decimals.
///
/// Values such as 82.435 have no exact binary form and sit a hair below the
/// midpoint; a 1e-7 slack on the scaled value resolves such midpoints upward.
pub fn round_half_up_2(x: f64) -> f64 {
    ((x * 100.0 + 0.5 + 1e-7).floor()) / 100.0
}

/// Report form: percentages rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub categories: Vec<ReportRow>,
    pub nonlive: Option<f64>,
    pub live: Option<f64>,
    pub overall: Option<f64>,
    pub live_weights: LiveWeights,
    pub cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub subset: Subset,
    pub category: Category,
    pub accuracy: f64,
    pub correct: usize,
    pub cases: usize,
}

impl ScoreTable {
    pub fn report(&self) -> ScoreReport {
        let pct = |x: f64| round_half_up_2(x * 100.0);
        ScoreReport {
            categories: self
                .categories
                .iter()
                .map(|r| ReportRow {
                    subset: r.subset,
                    category: r.category,
                    accuracy: pct(r.accuracy),
                    correct: (r.accuracy * r.cases as f64).round() as usize,
                    cases: r.cases,
                })
                .collect(),
            nonlive: self.nonlive.map(pct),
            live: self.live.map(pct),
            overall: self.overall.map(pct),
            live_weights: self.live_weights,
            cases: self.categories.iter().map(|r| r.cases).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub id: String,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub table: ScoreTable,
    pub outcomes: Vec<CaseOutcome>,
}

/// Greedy decoding parameters used for evaluation.
pub fn greedy_params(max_tokens: u32, seed: Option<u64>) -> DecodeParams {
    DecodeParams {
        temperature: 0.0,
        top_k: None,
        n_samples: 1,
        max_tokens,
        seed,
    }
}

/// One completion per case, scored by AST matching. Backend failures and
/// unparsable completions score as wrong.
pub fn run_eval(
    cases: &[EvalCase],
    backend: &dyn Backend,
    params: &DecodeParams,
    weights: &LiveWeights,
    workers: usize,
) -> EvalRun {
    let outcomes = run_ordered(cases.len(), workers, |i| evaluate_one(&cases[i], backend, params));
    let mut counts: BTreeMap<(Subset, Category), (usize, usize)> = BTreeMap::new();
    for (case, outcome) in cases.iter().zip(&outcomes) {
        let e = counts.entry((case.subset, case.category)).or_default();
        e.1 += 1;
        if outcome.correct {
            e.0 += 1;
        }
    }
    let inputs: ScoreInputs = counts
        .into_iter()
        .map(|(k, (correct, total))| (k, CategoryScore::from_counts(correct, total)))
        .collect();
    EvalRun {
        table: tabulate(&inputs, weights),
        outcomes,
    }
}

fn evaluate_one(case: &EvalCase, backend: &dyn Backend, params: &DecodeParams) -> CaseOutcome {
    let prompt = build_invocation_prompt(&case.query, &case.tools);
    let outcome = |correct, error| CaseOutcome {
        id: case.id.clone(),
        correct,
        error,
    };
    match backend.complete(&prompt, params) {
        Err(e) => outcome(false, Some(e.to_string())),
        Ok(texts) => {
            let Some(text) = texts.first() else {
                return outcome(false, Some("backend returned no completion".into()));
            };
            let extracted = extract_tool_calls(text);
            if !extracted.is_clean() {
                return outcome(false, Some(extracted.failures[0].reason.to_string()));
            }
            outcome(score_case(&extracted.into_answer(), case), None)
        }
    }
}
