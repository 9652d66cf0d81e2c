//! Self-consistency voting over sampled invocation answers.
//!
//! Answers are compared structurally: calls form a multiset, arguments a map,
//! and numbers compare by value (`2.0` and `2` are the same vote).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::validation::InvocationAnswer;

/// Largest magnitude at which every integer is exactly representable in f64.
const EXACT_INT_LIMIT: f64 = 9_007_199_254_740_992.0;

/// Normal form of a JSON value: object keys sorted recursively, integral
/// floats turned into integers. Array order is kept.
pub fn canonical_value(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonical_value(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonical_value).collect()),
        Value::Number(n) => Value::Number(canonical_number(n)),
        other => other.clone(),
    }
}

fn canonical_number(n: &Number) -> Number {
    if n.is_i64() || n.is_u64() {
        return n.clone();
    }
    match n.as_f64() {
        Some(f) if f.fract() == 0.0 && f.abs() < EXACT_INT_LIMIT => Number::from(f as i64),
        _ => n.clone(),
    }
}

/// Equivalence-class key of an answer.
pub fn canonical_key(answer: &InvocationAnswer) -> String {
    let mut calls: Vec<(String, String)> = answer
        .calls
        .iter()
        .map(|c| {
            let args = canonical_value(&Value::Object(c.arguments.clone()));
            (c.tool_name.clone(), args.to_string())
        })
        .collect();
    calls.sort();
    let mut out = String::from("[");
    for (i, (name, args)) in calls.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"name\":");
        out.push_str(&Value::String(name.clone()).to_string());
        out.push_str(",\"arguments\":");
        out.push_str(args);
        out.push('}');
    }
    out.push(']');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// A tie for the top count produces no winner.
    #[default]
    RejectTie,
    /// The tied class sampled earliest wins.
    FirstSeen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteClass {
    pub canonical_key: String,
    pub votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub winner: Option<InvocationAnswer>,
    pub winner_votes: usize,
    pub total: usize,
    /// Classes in first-seen order.
    pub classes: Vec<VoteClass>,
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("cannot vote on an empty ballot")]
    EmptyBallot,
}

pub fn vote(answers: &[InvocationAnswer], policy: TiePolicy) -> Result<VoteOutcome, ConsensusError> {
    if answers.is_empty() {
        return Err(ConsensusError::EmptyBallot);
    }
    // (key, votes, index of first member)
    let mut classes: Vec<(String, usize, usize)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, a) in answers.iter().enumerate() {
        let key = canonical_key(a);
        match index.get(&key) {
            Some(&c) => classes[c].1 += 1,
            None => {
                index.insert(key.clone(), classes.len());
                classes.push((key, 1, i));
            }
        }
    }
    let top = classes.iter().map(|c| c.1).max().unwrap_or(0);
    let leaders: Vec<&(String, usize, usize)> = classes.iter().filter(|c| c.1 == top).collect();
    let tied = leaders.len() > 1;
    let winner = match (tied, policy) {
        (true, TiePolicy::RejectTie) => None,
        _ => Some(answers[leaders[0].2].clone()),
    };
    Ok(VoteOutcome {
        winner,
        winner_votes: top,
        total: answers.len(),
        classes: classes
            .into_iter()
            .map(|(canonical_key, votes, _)| VoteClass { canonical_key, votes })
            .collect(),
        tied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::ToolCall;
    use serde_json::json;

    fn call(name: &str, args: Value) -> ToolCall {
        ToolCall::new(name, args.as_object().unwrap().clone())
    }

    fn ans(calls: Vec<ToolCall>) -> InvocationAnswer {
        InvocationAnswer::new(calls)
    }

    #[test]
    fn call_order_and_key_order_do_not_matter() {
        let a = ans(vec![call("f", json!({"x": 1})), call("g", json!({"a": 1, "b": 2}))]);
        let b = ans(vec![call("g", json!({"b": 2, "a": 1})), call("f", json!({"x": 1}))]);
        assert_eq!(canonical_key(&a), canonical_key(&b));
    }

    #[test]
    fn integral_floats_normalize() {
        let a = ans(vec![call("f", json!({"x": 2.0, "n": {"z": [1.0, 2.5]}}))]);
        let b = ans(vec![call("f", json!({"x": 2, "n": {"z": [1, 2.5]}}))]);
        assert_eq!(canonical_key(&a), canonical_key(&b));
        let c = ans(vec![call("f", json!({"x": 2.5}))]);
        assert_ne!(canonical_key(&a), canonical_key(&c));
    }

    #[test]
    fn strings_compare_exactly() {
        let a = ans(vec![call("f", json!({"x": "AAPL"}))]);
        let b = ans(vec![call("f", json!({"x": "AAPL "}))]);
        assert_ne!(canonical_key(&a), canonical_key(&b));
    }

    fn letters(pattern: &str) -> Vec<InvocationAnswer> {
        pattern
            .chars()
            .map(|c| ans(vec![call("f", json!({ "v": c.to_string() }))]))
            .collect()
    }

    #[test]
    fn majority_wins() {
        let out = vote(&letters("AABAC"), TiePolicy::RejectTie).unwrap();
        assert_eq!(out.winner_votes, 3);
        assert_eq!(out.total, 5);
        assert!(!out.tied);
        assert_eq!(out.winner.unwrap().calls[0].arguments["v"], "A");
        assert_eq!(out.classes.iter().map(|c| c.votes).collect::<Vec<_>>(), [3, 1, 1]);
    }

    #[test]
    fn single_answer() {
        let out = vote(&letters("A"), TiePolicy::RejectTie).unwrap();
        assert_eq!((out.winner_votes, out.total), (1, 1));
        assert!(out.winner.is_some());
    }

    #[test]
    fn ties() {
        let out = vote(&letters("AABBC"), TiePolicy::RejectTie).unwrap();
        assert!(out.tied);
        assert!(out.winner.is_none());
        assert_eq!(out.winner_votes, 2);

        let out = vote(&letters("BBAAC"), TiePolicy::FirstSeen).unwrap();
        assert!(out.tied);
        assert_eq!(out.winner.unwrap().calls[0].arguments["v"], "B");
    }

    #[test]
    fn representative_is_first_sampled_member() {
        // Same class, different surface forms: the first one is returned verbatim.
        let a = ans(vec![call("f", json!({"x": 2.0}))]);
        let b = ans(vec![call("f", json!({"x": 2}))]);
        let out = vote(&[a.clone(), b], TiePolicy::RejectTie).unwrap();
        assert_eq!(out.winner, Some(a));
    }

    #[test]
    fn empty_ballot() {
        assert_eq!(vote(&[], TiePolicy::RejectTie), Err(ConsensusError::EmptyBallot));
    }
}
