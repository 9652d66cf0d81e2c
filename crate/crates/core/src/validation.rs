//! Invocation-side rule checker.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::consensus::canonical_value;
use crate::tool_schema::{CandidateToolSet, ParamSpec, Violation, ViolationKind};

/// One `(tool, arguments)` pair of an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(rename = "name")]
    pub tool_name: String,
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    pub fn new(tool_name: impl Into<String>, arguments: Map<String, Value>) -> Self {
        Self {
            tool_name: tool_name.into(),
            arguments,
        }
    }
}

/// The ordered list of calls answering one query. May be empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InvocationAnswer {
    pub calls: Vec<ToolCall>,
}

impl InvocationAnswer {
    pub fn new(calls: Vec<ToolCall>) -> Self {
        Self { calls }
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }
}

/// Type plus enum membership. A parameter without a recognised type accepts nothing.
pub fn type_matches(value: &Value, spec: &ParamSpec) -> bool {
    let Some(t) = spec.json_type.known() else {
        return false;
    };
    if !t.accepts(value) {
        return false;
    }
    match &spec.enum_values {
        Some(allowed) => {
            let v = canonical_value(value);
            allowed.iter().any(|a| canonical_value(a) == v)
        }
        None => true,
    }
}

pub fn validate_invocation(answer: &InvocationAnswer, tools: &CandidateToolSet) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, call) in answer.calls.iter().enumerate() {
        let Some(tool) = tools.get(&call.tool_name) else {
            out.push(Violation::new(
                ViolationKind::HallucinatedTool,
                format!("calls[{i}]"),
                format!("no candidate tool named `{}`", call.tool_name),
            ));
            continue;
        };
        for (arg, value) in &call.arguments {
            let path = format!("calls[{i}].arguments.{arg}");
            match tool.param(arg) {
                None => out.push(Violation::new(
                    ViolationKind::HallucinatedArgument,
                    path,
                    format!("`{}` declares no argument `{arg}`", tool.name),
                )),
                Some(spec) if !type_matches(value, spec) => out.push(Violation::new(
                    ViolationKind::WrongArgumentType,
                    path,
                    match spec.json_type.known() {
                        Some(t) if t.accepts(value) => format!("{value} is not one of the enum values"),
                        Some(t) => format!("{value} is not {t}"),
                        None => "parameter has no usable type".to_owned(),
                    },
                )),
                Some(_) => {}
            }
        }
        for r in tool.required() {
            if !call.arguments.contains_key(r) {
                out.push(Violation::new(
                    ViolationKind::MissingRequiredArgument,
                    format!("calls[{i}].arguments.{r}"),
                    format!("required argument `{r}` is missing"),
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tool_schema::{JsonType, ParamBlock, ToolDoc};
    use serde_json::json;

    fn args(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    fn division_tools() -> CandidateToolSet {
        let doc = ToolDoc::new(
            "Division API",
            "Divide two time series and return the result.",
            ParamBlock::new(
                vec![
                    ParamSpec::new("interval", JsonType::String, "Interval"),
                    ParamSpec::new("symbol", JsonType::String, "Symbol"),
                    ParamSpec::new("series_type_1", JsonType::String, "First series"),
                    ParamSpec::new("series_type_2", JsonType::String, "Second series"),
                    ParamSpec::new("format", JsonType::String, "Output format"),
                ],
                vec!["interval".into(), "symbol".into()],
            ),
        );
        CandidateToolSet::new(vec![doc]).unwrap()
    }

    fn fig_call(interval: &str) -> ToolCall {
        ToolCall::new(
            "Division API",
            args(json!({"interval": interval, "symbol": "AAPL", "series_type_1": "high",
                        "series_type_2": "close", "format": "json"})),
        )
    }

    #[test]
    fn type_matches_examples() {
        let interval = ParamSpec::new("interval", JsonType::String, "i")
            .with_enum(vec![json!("1min"), json!("5min"), json!("1h")]);
        assert!(type_matches(&json!("1min"), &interval));
        assert!(!type_matches(&json!("2min"), &interval));
        let f = ParamSpec::new("x", JsonType::Float, "x");
        assert!(type_matches(&json!(3), &f));
        let i = ParamSpec::new("x", JsonType::Int, "x");
        assert!(!type_matches(&json!(3.5), &i));
        let float_enum = ParamSpec::new("x", JsonType::Float, "x").with_enum(vec![json!(2.0)]);
        assert!(type_matches(&json!(2), &float_enum));
    }

    #[test]
    fn figure_answer_is_clean() {
        let answer = InvocationAnswer::new(vec![fig_call("1min"), fig_call("15min"), fig_call("1h")]);
        assert!(validate_invocation(&answer, &division_tools()).is_empty());
        assert!(validate_invocation(&InvocationAnswer::default(), &division_tools()).is_empty());
    }

    #[test]
    fn each_defect_class() {
        let tools = division_tools();
        let mut c = fig_call("1min");
        c.tool_name = "Division APIv2".into();
        let v = validate_invocation(&InvocationAnswer::new(vec![c]), &tools);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::HallucinatedTool);

        let mut c = fig_call("1min");
        c.arguments.insert("precision".into(), json!(2));
        let v = validate_invocation(&InvocationAnswer::new(vec![c]), &tools);
        assert_eq!(v[0].kind, ViolationKind::HallucinatedArgument);
        assert_eq!(v[0].path, "calls[0].arguments.precision");

        let mut c = fig_call("1min");
        c.arguments.shift_remove("symbol");
        let v = validate_invocation(&InvocationAnswer::new(vec![fig_call("1h"), c]), &tools);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::MissingRequiredArgument);
        assert_eq!(v[0].path, "calls[1].arguments.symbol");

        let mut c = fig_call("1min");
        c.arguments.insert("interval".into(), json!(1));
        let v = validate_invocation(&InvocationAnswer::new(vec![c]), &tools);
        assert_eq!(v[0].kind, ViolationKind::WrongArgumentType);
    }

    #[test]
    fn optional_argument_may_be_omitted() {
        let mut c = fig_call("1min");
        c.arguments.shift_remove("format");
        assert!(validate_invocation(&InvocationAnswer::new(vec![c]), &division_tools()).is_empty());
    }

    #[test]
    fn serde_shape() {
        let a = InvocationAnswer::new(vec![fig_call("1min")]);
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["calls"][0]["name"], "Division API");
        assert_eq!(v["calls"][0]["arguments"]["interval"], "1min");
    }
}
