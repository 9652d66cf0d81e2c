use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use proptest::sample::select;
use serde_json::{json, Map, Value};

use toolforge_core::consensus::{canonical_key, vote, TiePolicy};
use toolforge_core::eval_harness::{match_call, score_case, Category, EvalCase, ExpectedCall, Subset};
use toolforge_core::extraction::{extract_tool_calls, extract_tool_docs};
use toolforge_core::prompting::{render_tool_calls, render_tools_block};
use toolforge_core::tool_schema::{
    canonical_json, parse_tool_doc, validate_tool_doc, CandidateToolSet, DeclaredType, JsonType, ParamBlock, ParamSpec,
    ToolDoc, ViolationKind,
};
use toolforge_core::validation::{validate_invocation, InvocationAnswer, ToolCall};

fn value_of(t: JsonType) -> BoxedStrategy<Value> {
    match t {
        JsonType::String => "[a-zA-Z0-9 /_-]{0,12}".prop_map(Value::from).boxed(),
        JsonType::Int => (-1000i64..1000).prop_map(Value::from).boxed(),
        JsonType::Float => (-1000i64..1000).prop_map(|c| json!(c as f64 + 0.5)).boxed(),
        JsonType::Boolean => any::<bool>().prop_map(Value::from).boxed(),
        JsonType::Dict => prop::collection::btree_map("[a-z]{1,4}", 0i64..9, 0..3)
            .prop_map(|m| json!(m))
            .boxed(),
        JsonType::List => prop::collection::vec(0i64..9, 0..4).prop_map(|v| json!(v)).boxed(),
    }
}

fn param(name: String) -> impl Strategy<Value = ParamSpec> {
    (select(JsonType::ALL.to_vec()), "[A-Za-z][A-Za-z ,.]{0,30}", any::<bool>()).prop_flat_map(move |(t, d, with_default)| {
        let name = name.clone();
        value_of(t).prop_map(move |v| {
            let p = ParamSpec::new(name.clone(), t, d.clone());
            if with_default {
                p.with_default(v)
            } else {
                p
            }
        })
    })
}

/// A violation-free tool with 1 to 5 parameters.
fn tool() -> impl Strategy<Value = ToolDoc> {
    (
        "[a-z][a-z_]{2,10}",
        "[A-Z][a-z ]{3,30}\\.",
        prop::collection::btree_set("[a-z][a-z_]{1,8}", 1..6),
    )
        .prop_flat_map(|(name, desc, names)| {
            let names: Vec<String> = names.into_iter().collect();
            let n = names.len();
            let params: Vec<_> = names.into_iter().map(param).collect();
            (Just(name), Just(desc), params, prop::collection::vec(any::<bool>(), n))
        })
        .prop_map(|(name, desc, params, req)| {
            let required = params
                .iter()
                .zip(&req)
                .filter(|(_, r)| **r)
                .map(|(p, _)| p.name.clone())
                .collect();
            ToolDoc::new(name, desc, ParamBlock::new(params, required))
        })
}

fn tool_set() -> impl Strategy<Value = CandidateToolSet> {
    prop::collection::vec(tool(), 1..4).prop_map(|docs| {
        let mut seen = std::collections::HashSet::new();
        CandidateToolSet::new(docs.into_iter().filter(|d| seen.insert(d.name.clone())).collect()).unwrap()
    })
}

/// A clean call for `doc`: every required argument plus a random subset of
/// the optional ones.
fn call_for(doc: &ToolDoc) -> impl Strategy<Value = ToolCall> {
    let name = doc.name.clone();
    let required: Vec<String> = doc.required().to_vec();
    let args: Vec<_> = doc
        .params()
        .iter()
        .map(|p| {
            let keep = if required.contains(&p.name) {
                Just(true).boxed()
            } else {
                any::<bool>().boxed()
            };
            (Just(p.name.clone()), keep, value_of(p.json_type.known().unwrap()))
        })
        .collect();
    args.prop_map(move |args| {
        let map: Map<String, Value> = args.into_iter().filter(|(_, k, _)| *k).map(|(n, _, v)| (n, v)).collect();
        ToolCall::new(name.clone(), map)
    })
}

fn scenario() -> impl Strategy<Value = (CandidateToolSet, InvocationAnswer)> {
    tool_set().prop_flat_map(|tools| {
        let docs = tools.tools().to_vec();
        let calls = prop::collection::vec(select(docs).prop_flat_map(|d| call_for(&d)), 1..5);
        (Just(tools), calls.prop_map(InvocationAnswer::new))
    })
}

#[derive(Debug, Clone, Copy)]
enum ToolMutation {
    DropParamDescription,
    DropType,
    UnknownType,
    UndeclaredRequired,
    DuplicateParam,
    BadDefault,
    EmptyDescription,
}

fn mutate_tool(doc: &ToolDoc, m: ToolMutation, pick: usize) -> (ToolDoc, ViolationKind) {
    let mut d = doc.clone();
    let i = pick % d.arguments.params.len();
    let kind = match m {
        ToolMutation::DropParamDescription => {
            d.arguments.params[i].description = None;
            ViolationKind::MissingArgDescription
        }
        ToolMutation::DropType => {
            d.arguments.params[i].json_type = DeclaredType::Absent;
            d.arguments.params[i].default = None;
            ViolationKind::MissingType
        }
        ToolMutation::UnknownType => {
            d.arguments.params[i].json_type = DeclaredType::Unrecognized(json!("datetime"));
            d.arguments.params[i].default = None;
            ViolationKind::MissingType
        }
        ToolMutation::UndeclaredRequired => {
            d.arguments.required.get_or_insert_with(Vec::new).push("zz_not_declared".into());
            ViolationKind::RequiredNotDeclared
        }
        ToolMutation::DuplicateParam => {
            let copy = d.arguments.params[i].clone();
            d.arguments.params.push(copy);
            ViolationKind::DuplicateName
        }
        ToolMutation::BadDefault => {
            let p = &mut d.arguments.params[i];
            let wrong = match p.json_type.known().unwrap() {
                JsonType::String => json!(7),
                _ => json!("seven"),
            };
            p.default = Some(wrong);
            ViolationKind::WrongArgumentType
        }
        ToolMutation::EmptyDescription => {
            d.description = String::new();
            ViolationKind::MissingArgDescription
        }
    };
    (d, kind)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn canonical_round_trip(doc in tool()) {
        let text = canonical_json(&doc);
        let back = parse_tool_doc(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(canonical_json(&back), text);
        prop_assert!(validate_tool_doc(&doc).is_empty());
    }

    #[test]
    fn tools_block_round_trip(tools in tool_set()) {
        let ex = extract_tool_docs(&render_tools_block(&tools));
        prop_assert!(ex.is_clean());
        prop_assert_eq!(ex.items, tools.tools().to_vec());
    }

    #[test]
    fn tool_call_round_trip((tools, answer) in scenario()) {
        prop_assert!(validate_invocation(&answer, &tools).is_empty());
        let ex = extract_tool_calls(&render_tool_calls(&answer));
        prop_assert!(ex.is_clean());
        let back = ex.into_answer();
        prop_assert_eq!(canonical_key(&back), canonical_key(&answer));
        prop_assert_eq!(back, answer);
    }

    #[test]
    fn single_tool_mutation_is_reported_exactly(
        doc in tool(),
        m in select(vec![
            ToolMutation::DropParamDescription, ToolMutation::DropType, ToolMutation::UnknownType,
            ToolMutation::UndeclaredRequired, ToolMutation::DuplicateParam, ToolMutation::BadDefault,
            ToolMutation::EmptyDescription,
        ]),
        pick in 0usize..8,
    ) {
        let (bad, kind) = mutate_tool(&doc, m, pick);
        let found: Vec<ViolationKind> = validate_tool_doc(&bad).into_iter().map(|v| v.kind).collect();
        prop_assert_eq!(found, vec![kind]);
    }

    #[test]
    fn truncated_tool_text_is_unparsable(doc in tool(), cut in 1usize..40) {
        let text = canonical_json(&doc);
        let truncated = &text[..text.len() - cut.min(text.len() - 1)];
        let err = parse_tool_doc(truncated).unwrap_err();
        prop_assert_eq!(err.kind(), ViolationKind::Unparsable);
    }

    #[test]
    fn single_call_mutation_is_reported_exactly((tools, answer) in scenario(), which in 0usize..4, pick in 0usize..8) {
        let mut bad = answer.clone();
        let i = pick % bad.calls.len();
        let doc = tools.get(&bad.calls[i].tool_name).unwrap().clone();
        let kind = match which {
            0 => {
                bad.calls[i].tool_name.push_str("_x");
                ViolationKind::HallucinatedTool
            }
            1 => {
                bad.calls[i].arguments.insert("zz_extra".into(), json!(1));
                ViolationKind::HallucinatedArgument
            }
            2 => {
                let Some(r) = doc.required().first().cloned() else { return Ok(()) };
                bad.calls[i].arguments.remove(&r);
                ViolationKind::MissingRequiredArgument
            }
            _ => {
                let Some((name, v)) = bad.calls[i].arguments.iter_mut().next() else { return Ok(()) };
                let t = doc.param(name).unwrap().json_type.known().unwrap();
                *v = if t == JsonType::String { json!(3) } else { json!("three") };
                ViolationKind::WrongArgumentType
            }
        };
        let found: Vec<ViolationKind> = validate_invocation(&bad, &tools).into_iter().map(|v| v.kind).collect();
        prop_assert_eq!(found, vec![kind]);
    }

    #[test]
    fn call_order_never_changes_the_key((_, answer) in scenario(), seed in any::<u64>()) {
        let mut shuffled = answer.calls.clone();
        let n = shuffled.len();
        for k in 0..n {
            shuffled.swap(k, (seed as usize).wrapping_add(k * 7) % n);
        }
        prop_assert_eq!(canonical_key(&InvocationAnswer::new(shuffled)), canonical_key(&answer));
    }
}

/// Reference grouping: count by key, find the top count, detect ties.
fn brute_vote(ballot: &[InvocationAnswer]) -> (Option<String>, usize, bool) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for a in ballot {
        *counts.entry(canonical_key(a)).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap();
    let leaders: Vec<&String> = counts.iter().filter(|(_, c)| **c == top).map(|(k, _)| k).collect();
    if leaders.len() == 1 {
        (Some(leaders[0].clone()), top, false)
    } else {
        (None, top, true)
    }
}

fn tiny_answer(code: u8) -> InvocationAnswer {
    // Eight distinct answers, some differing only in call order or key order.
    let c = |n: &str, v: Value| ToolCall::new(n, v.as_object().unwrap().clone());
    let calls = match code % 8 {
        0 => vec![c("a", json!({"x": 1}))],
        1 => vec![c("a", json!({"x": 2}))],
        2 => vec![c("b", json!({"x": 1, "y": [1, 2]}))],
        3 => vec![c("a", json!({"x": 1})), c("b", json!({"x": 1, "y": [1, 2]}))],
        4 => vec![c("a", json!({"x": 1.5}))],
        5 => vec![c("a", json!({"x": 1})), c("a", json!({"x": 1}))],
        6 => vec![c("b", json!({"y": [2, 1], "x": 1}))],
        _ => vec![c("c", json!({}))],
    };
    InvocationAnswer::new(calls)
}

fn equivalent(code: u8, variant: u8) -> InvocationAnswer {
    let mut a = tiny_answer(code);
    if variant % 2 == 1 {
        a.calls.reverse();
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn vote_matches_brute_force(ballot in prop::collection::vec((0u8..8, 0u8..2), 1..8)) {
        let ballot: Vec<InvocationAnswer> = ballot.into_iter().map(|(c, v)| equivalent(c, v)).collect();
        let (key, top, tied) = brute_vote(&ballot);
        let out = vote(&ballot, TiePolicy::RejectTie).unwrap();
        prop_assert_eq!(out.tied, tied);
        prop_assert_eq!(out.winner_votes, top);
        prop_assert_eq!(out.total, ballot.len());
        prop_assert_eq!(out.winner.as_ref().map(canonical_key), key);
        let first = vote(&ballot, TiePolicy::FirstSeen).unwrap();
        prop_assert!(first.winner.is_some());
        prop_assert_eq!(first.winner_votes, top);
    }
}

fn brute_match(answer: &InvocationAnswer, expected: &[ExpectedCall]) -> bool {
    fn go(calls: &[ToolCall], expected: &[ExpectedCall], used: &mut Vec<bool>) -> bool {
        let Some((first, rest)) = calls.split_first() else { return true };
        for j in 0..expected.len() {
            if !used[j] && match_call(first, &expected[j]) {
                used[j] = true;
                if go(rest, expected, used) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    answer.calls.len() == expected.len() && go(&answer.calls, expected, &mut vec![false; expected.len()])
}

fn small_call() -> impl Strategy<Value = ToolCall> {
    (select(vec!["f", "g"]), 0i64..3, prop::option::of(0i64..2)).prop_map(|(n, x, y)| {
        let mut m = Map::new();
        m.insert("x".into(), json!(x));
        if let Some(y) = y {
            m.insert("y".into(), json!(y));
        }
        ToolCall::new(n, m)
    })
}

fn small_expected() -> impl Strategy<Value = ExpectedCall> {
    (
        select(vec!["f", "g"]),
        prop::collection::btree_set(0i64..3, 1..3),
        any::<bool>(),
    )
        .prop_map(|(n, xs, y_optional)| {
            let mut allowed = BTreeMap::new();
            allowed.insert("x".to_owned(), xs.into_iter().map(|x| json!(x)).collect());
            allowed.insert("y".to_owned(), vec![json!(0), json!(1)]);
            ExpectedCall {
                tool_name: n.into(),
                allowed,
                optional_args: if y_optional { ["y".to_owned()].into() } else { Default::default() },
            }
        })
}

fn case_with(expected: Vec<ExpectedCall>) -> EvalCase {
    let p = |n: &str| ParamSpec::new(n, JsonType::Int, "v");
    let doc = |n: &str| ToolDoc::new(n, "t", ParamBlock::new(vec![p("x"), p("y")], vec!["x".into()]));
    EvalCase {
        id: "p".into(),
        subset: Subset::Nonlive,
        category: Category::ParallelMultiple,
        query: "q".into(),
        tools: CandidateToolSet::new(vec![doc("f"), doc("g")]).unwrap(),
        expected,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matching_equals_bijection_search(
        calls in prop::collection::vec(small_call(), 0..7),
        expected in prop::collection::vec(small_expected(), 1..7),
        rot in 0usize..7,
    ) {
        let answer = InvocationAnswer::new(calls);
        let case = case_with(expected.clone());
        let got = score_case(&answer, &case);
        prop_assert_eq!(got, brute_match(&answer, &expected));
        let mut rotated = answer.calls.clone();
        if !rotated.is_empty() {
            let k = rot % rotated.len();
            rotated.rotate_left(k);
        }
        prop_assert_eq!(score_case(&InvocationAnswer::new(rotated), &case), got);
    }
}
