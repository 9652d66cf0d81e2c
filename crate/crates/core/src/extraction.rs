//! Pull tools and tool calls out of raw model completions.
//!
//! Extraction is total: any input text yields a result, with unusable pieces
//! reported as failures instead of errors.

use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::tool_schema::{parse_tool_doc, SchemaError, ToolDoc, Violation, ViolationKind};
use crate::validation::{InvocationAnswer, ToolCall};

pub const TOOLS_TAG: &str = "tools";
pub const TOOL_CALL_TAG: &str = "tool_call";

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionFailure {
    pub raw_block: String,
    pub reason: Violation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult<T> {
    pub items: Vec<T>,
    pub failures: Vec<ExtractionFailure>,
}

impl<T> Default for ExtractionResult<T> {
    fn default() -> Self {
        Self {
            items: Vec::new(),
            failures: Vec::new(),
        }
    }
}

impl<T> ExtractionResult<T> {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn units(&self) -> usize {
        self.items.len() + self.failures.len()
    }
}

impl ExtractionResult<ToolCall> {
    pub fn into_answer(self) -> InvocationAnswer {
        InvocationAnswer::new(self.items)
    }
}

/// Inner text of every `<tag>...</tag>` pair, left to right.
///
/// Each block starts at the leftmost remaining opening tag and ends at the
/// first closing tag after it. An opening tag with no closing tag yields
/// nothing.
pub fn extract_tagged_blocks<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let body = &rest[start + open.len()..];
        let Some(end) = body.find(&close) else {
            break;
        };
        out.push(&body[..end]);
        rest = &body[end + close.len()..];
    }
    out
}

/// Split text into top-level `{...}` spans by brace matching that skips
/// string literals. Returns complete spans plus an unterminated tail, if any.
pub fn split_json_objects(text: &str) -> (Vec<&str>, Option<&str>) {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    let tail = (depth > 0).then(|| &text[start..]);
    (spans, tail)
}

fn failure(raw: &str, err: &SchemaError, path: String) -> ExtractionFailure {
    ExtractionFailure {
        raw_block: raw.to_owned(),
        reason: err.to_violation(path),
    }
}

/// Parse every tool document found inside `<tools>` blocks.
pub fn extract_tool_docs(completion: &str) -> ExtractionResult<ToolDoc> {
    let mut result = ExtractionResult::default();
    for (b, block) in extract_tagged_blocks(completion, TOOLS_TAG).into_iter().enumerate() {
        let (objects, tail) = split_json_objects(block);
        for (o, obj) in objects.iter().enumerate() {
            match parse_tool_doc(obj) {
                Ok(doc) => result.items.push(doc),
                Err(e) => result.failures.push(failure(obj, &e, format!("tools[{b}][{o}]"))),
            }
        }
        if let Some(tail) = tail {
            let err = SchemaError::Unparsable("unterminated JSON object".into());
            result.failures.push(failure(tail, &err, format!("tools[{b}][{}]", objects.len())));
        } else if objects.is_empty() && !block.trim().is_empty() {
            let err = SchemaError::Unparsable("no JSON object in <tools> block".into());
            result.failures.push(failure(block, &err, format!("tools[{b}]")));
        }
    }
    result
}

/// Parse every `<tool_call>` block as one `{"name": ..., "arguments": {...}}` object.
pub fn extract_tool_calls(completion: &str) -> ExtractionResult<ToolCall> {
    let mut result = ExtractionResult::default();
    for (b, block) in extract_tagged_blocks(completion, TOOL_CALL_TAG).into_iter().enumerate() {
        match parse_tool_call(block) {
            Ok(call) => result.items.push(call),
            Err(e) => result.failures.push(failure(block, &e, format!("tool_call[{b}]"))),
        }
    }
    result
}

pub fn parse_tool_call(text: &str) -> Result<ToolCall, SchemaError> {
    let raw: RawCall = serde_json::from_str(text.trim()).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => SchemaError::Structural(e.to_string()),
            _ => SchemaError::Unparsable(e.to_string()),
        }
    })?;
    let name = match raw.name {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(_) => return Err(SchemaError::Structural("`name` must be a nonempty string".into())),
        None => return Err(SchemaError::Structural("missing key `name`".into())),
    };
    let arguments = raw
        .arguments
        .ok_or_else(|| SchemaError::Structural("missing key `arguments`".into()))?;
    Ok(ToolCall::new(name, arguments.0))
}

/// Total function from completion text to the answer it contains plus any
/// extraction failures, tagged as [`ViolationKind::Unparsable`] or
/// [`ViolationKind::StructuralError`].
pub fn extract_answer(completion: &str) -> (InvocationAnswer, Vec<Violation>) {
    let r = extract_tool_calls(completion);
    let violations = r.failures.iter().map(|f| f.reason.clone()).collect();
    (r.into_answer(), violations)
}

pub fn is_parse_failure(kind: ViolationKind) -> bool {
    matches!(kind, ViolationKind::Unparsable | ViolationKind::StructuralError)
}

struct RawCall {
    name: Option<Value>,
    arguments: Option<UniqueArgs>,
}

/// Argument object that rejects repeated names.
struct UniqueArgs(Map<String, Value>);

impl<'de> Deserialize<'de> for UniqueArgs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = UniqueArgs;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an arguments object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<UniqueArgs, A::Error> {
                let mut out = Map::new();
                while let Some((k, v)) = access.next_entry::<String, Value>()? {
                    if out.contains_key(&k) {
                        return Err(de::Error::custom(format!("argument `{k}` given twice")));
                    }
                    out.insert(k, v);
                }
                Ok(UniqueArgs(out))
            }
        }
        deserializer.deserialize_map(V)
    }
}

impl<'de> Deserialize<'de> for RawCall {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawCall;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a tool call object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<RawCall, A::Error> {
                let mut call = RawCall {
                    name: None,
                    arguments: None,
                };
                while let Some(k) = access.next_key::<String>()? {
                    match k.as_str() {
                        "name" => call.name = Some(access.next_value()?),
                        "arguments" => call.arguments = Some(access.next_value()?),
                        _ => {
                            access.next_value::<de::IgnoredAny>()?;
                        }
                    }
                }
                Ok(call)
            }
        }
        deserializer.deserialize_map(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tool_schema::{render_signature_block, CandidateToolSet};

    /// Reference scan: try every (open, close) index pair, keep the leftmost
    /// opening at or after the cursor with the nearest closing after it.
    fn reference_blocks(text: &str, tag: &str) -> Vec<String> {
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        let opens: Vec<usize> = (0..text.len()).filter(|&i| text[i..].starts_with(&open)).collect();
        let closes: Vec<usize> = (0..text.len()).filter(|&i| text[i..].starts_with(&close)).collect();
        let mut out = Vec::new();
        let mut cursor = 0;
        while let Some(&o) = opens.iter().find(|&&o| o >= cursor) {
            let Some(&c) = closes.iter().find(|&&c| c >= o + open.len()) else { break };
            out.push(text[o + open.len()..c].to_owned());
            cursor = c + close.len();
        }
        out
    }

    #[test]
    fn blocks_follow_reference_scan() {
        let cases = [
            "",
            "no tags here",
            "<tool_call><tool_call>x</tool_call>",
            "<tool_call>a</tool_call> mid <tool_call>b</tool_call>",
            "<tool_call>unclosed",
            "</tool_call><tool_call>x</tool_call></tool_call>",
            "<tool_call></tool_call>",
            "<TOOL_CALL>x</TOOL_CALL>",
        ];
        for c in cases {
            let got: Vec<String> = extract_tagged_blocks(c, "tool_call").into_iter().map(String::from).collect();
            assert_eq!(got, reference_blocks(c, "tool_call"), "input {c:?}");
        }
        assert_eq!(extract_tagged_blocks("<tool_call><tool_call>x</tool_call>", "tool_call"), ["<tool_call>x"]);
    }

    #[test]
    fn three_figure_calls() {
        let text = "<tool_call>\n{\n \"name\": \"Division API\", \n \"arguments\": {\n   \"interval\": \"1min\", \"symbol\": \"AAPL\"\n  }\n}\n</tool_call>\n<tool_call>\n{\"name\": \"Division API\", \"arguments\": {\"interval\": \"15min\", \"symbol\": \"AAPL\"}}\n</tool_call>\n<tool_call>\n{\"name\": \"Division API\", \"arguments\": {\"interval\": \"1h\", \"symbol\": \"AAPL\"}}\n</tool_call>";
        let r = extract_tool_calls(text);
        assert!(r.is_clean());
        assert_eq!(r.items.len(), 3);
        assert_eq!(r.items[0].arguments["interval"], "1min");
        assert_eq!(r.items[2].arguments["interval"], "1h");
    }

    #[test]
    fn call_failures() {
        assert_eq!(extract_tool_calls("plain prose").units(), 0);
        let r = extract_tool_calls("<tool_call>{\"name\":\"f\"}</tool_call>");
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].reason.kind, ViolationKind::StructuralError);
        let r = extract_tool_calls("<tool_call>{\"name\":\"f\",\"arguments\":{}</tool_call>");
        assert_eq!(r.failures[0].reason.kind, ViolationKind::Unparsable);
        let r = extract_tool_calls("<tool_call>{\"name\":\"f\",\"arguments\":{\"a\":1,\"a\":2}}</tool_call>");
        assert_eq!(r.failures[0].reason.kind, ViolationKind::StructuralError);
        let r = extract_tool_calls("<tool_call>{\"name\":\"f\",\"arguments\":\"{}\"}</tool_call>");
        assert_eq!(r.failures[0].reason.kind, ViolationKind::StructuralError);
    }

    #[test]
    fn brace_splitting_skips_strings() {
        let (spans, tail) = split_json_objects(r#" {"a":"}{"} , {"b":{"c":"\"}"}} "#);
        assert_eq!(spans, [r#"{"a":"}{"}"#, r#"{"b":{"c":"\"}"}}"#]);
        assert!(tail.is_none());
        let (spans, tail) = split_json_objects(r#"{"a":1} {"b": {"#);
        assert_eq!(spans.len(), 1);
        assert_eq!(tail, Some(r#"{"b": {"#));
    }

    const TOOL: &str = r#"{"name":"Division API","description":"Divide two time series and return the result.","arguments":{"type":"dict","properties":{"interval":{"type":"string","description":"Interval"}},"required":["interval"]}}"#;

    #[test]
    fn tool_docs_from_blocks() {
        let r = extract_tool_docs(&format!("Sure.\n<tools>\n{TOOL}\n</tools>\nDone."));
        assert_eq!(r.items.len(), 1);
        assert_eq!(r.items[0].name, "Division API");

        let r = extract_tool_docs("<tools></tools>");
        assert_eq!((r.items.len(), r.failures.len()), (0, 0));

        let truncated = &TOOL[..TOOL.len() - 20];
        let r = extract_tool_docs(&format!("<tools>\n{TOOL}\n{truncated}\n</tools>"));
        assert_eq!((r.items.len(), r.failures.len()), (1, 1));
        assert_eq!(r.failures[0].reason.kind, ViolationKind::Unparsable);

        let r = extract_tool_docs("<tools>not json</tools>");
        assert_eq!(r.failures.len(), 1);
    }

    #[test]
    fn render_then_extract() {
        let doc = parse_tool_doc(TOOL).unwrap();
        let mut other = doc.clone();
        other.name = "Other".into();
        let set = CandidateToolSet::new(vec![doc, other]).unwrap();
        let text = format!("<tools>\n{}\n</tools>", render_signature_block(&set));
        let r = extract_tool_docs(&text);
        assert!(r.is_clean());
        assert_eq!(CandidateToolSet::new(r.items).unwrap(), set);
    }
}
