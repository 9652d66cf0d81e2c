//! Tool documentation: parsing, rule checking and canonical rendering.
//!
//! A tool document has the shape the prompts use:
//!
//! ```json
//! {"name": "...", "description": "...",
//!  "arguments": {"type": "dict", "properties": {...}, "required": [...]},
//!  "results": {"type": "dict", "properties": {...}}}
//! ```
//!
//! Parsing is lossless. Duplicate property names survive parsing so the rule
//! checker can report them, and unknown keys are kept in `extra` bags and
//! re-emitted by [`canonical_json`].

use std::collections::HashSet;
use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Closed type vocabulary for tool parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JsonType {
    String,
    Int,
    Float,
    Boolean,
    Dict,
    List,
}

impl JsonType {
    pub const ALL: [JsonType; 6] = [
        JsonType::String,
        JsonType::Int,
        JsonType::Float,
        JsonType::Boolean,
        JsonType::Dict,
        JsonType::List,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JsonType::String => "string",
            JsonType::Int => "int",
            JsonType::Float => "float",
            JsonType::Boolean => "boolean",
            JsonType::Dict => "dict",
            JsonType::List => "list",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        JsonType::ALL.into_iter().find(|t| t.as_str() == name)
    }

    /// Whether `value` is an instance of this type.
    ///
    /// Integers are accepted where a float is expected; nothing else coerces.
    /// A number written with a fractional part or exponent (`3.0`) is a float.
    pub fn accepts(self, value: &Value) -> bool {
        match (self, value) {
            (JsonType::String, Value::String(_)) => true,
            (JsonType::Int, Value::Number(n)) => n.is_i64() || n.is_u64(),
            (JsonType::Float, Value::Number(_)) => true,
            (JsonType::Boolean, Value::Bool(_)) => true,
            (JsonType::Dict, Value::Object(_)) => true,
            (JsonType::List, Value::Array(_)) => true,
            _ => false,
        }
    }
}

impl fmt::Display for JsonType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The `"type"` entry of a parameter as written in the document.
#[derive(Debug, Clone, PartialEq)]
pub enum DeclaredType {
    Known(JsonType),
    /// Present but outside the vocabulary (kept verbatim).
    Unrecognized(Value),
    Absent,
}

impl DeclaredType {
    pub fn known(&self) -> Option<JsonType> {
        match self {
            DeclaredType::Known(t) => Some(*t),
            _ => None,
        }
    }

    fn from_value(value: Value) -> Self {
        match value.as_str().and_then(JsonType::from_name) {
            Some(t) => DeclaredType::Known(t),
            None => DeclaredType::Unrecognized(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub json_type: DeclaredType,
    pub description: Option<String>,
    pub enum_values: Option<Vec<Value>>,
    pub default: Option<Value>,
    pub extra: Map<String, Value>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, json_type: JsonType, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            json_type: DeclaredType::Known(json_type),
            description: Some(description.into()),
            enum_values: None,
            default: None,
            extra: Map::new(),
        }
    }

    pub fn with_enum(mut self, values: Vec<Value>) -> Self {
        self.enum_values = Some(values);
        self
    }

    pub fn with_default(mut self, value: Value) -> Self {
        self.default = Some(value);
        self
    }
}

/// A `{"type": "dict", "properties": {...}, "required": [...]}` section.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub type_tag: Option<Value>,
    pub params: Vec<ParamSpec>,
    pub required: Option<Vec<String>>,
    pub extra: Map<String, Value>,
}

impl ParamBlock {
    pub fn new(params: Vec<ParamSpec>, required: Vec<String>) -> Self {
        Self {
            type_tag: Some(Value::String("dict".into())),
            params,
            required: Some(required),
            extra: Map::new(),
        }
    }

    pub fn required(&self) -> &[String] {
        self.required.as_deref().unwrap_or(&[])
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// One tool's documentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolDoc {
    pub name: String,
    pub description: String,
    pub arguments: ParamBlock,
    /// Parsed and re-emitted, never checked against invocations.
    pub results: Option<ParamBlock>,
    pub extra: Map<String, Value>,
}

impl ToolDoc {
    pub fn new(name: impl Into<String>, description: impl Into<String>, arguments: ParamBlock) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            arguments,
            results: None,
            extra: Map::new(),
        }
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.arguments.params
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.arguments.param(name)
    }

    pub fn required(&self) -> &[String] {
        self.arguments.required()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("duplicate tool name `{0}` in candidate set")]
pub struct DuplicateToolName(pub String);

/// Ordered tool set offered alongside a query. Names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateToolSet {
    tools: Vec<ToolDoc>,
}

impl CandidateToolSet {
    pub fn new(tools: Vec<ToolDoc>) -> Result<Self, DuplicateToolName> {
        let mut seen = HashSet::new();
        for t in &tools {
            if !seen.insert(t.name.as_str()) {
                return Err(DuplicateToolName(t.name.clone()));
            }
        }
        Ok(Self { tools })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn tools(&self) -> &[ToolDoc] {
        &self.tools
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ToolDoc> {
        self.tools.iter()
    }

    pub fn get(&self, name: &str) -> Option<&ToolDoc> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn into_tools(self) -> Vec<ToolDoc> {
        self.tools
    }
}

impl<'a> IntoIterator for &'a CandidateToolSet {
    type Item = &'a ToolDoc;
    type IntoIter = std::slice::Iter<'a, ToolDoc>;
    fn into_iter(self) -> Self::IntoIter {
        self.tools.iter()
    }
}

impl Serialize for CandidateToolSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.tools.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CandidateToolSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tools = Vec::<ToolDoc>::deserialize(deserializer)?;
        CandidateToolSet::new(tools).map_err(de::Error::custom)
    }
}

/// Rule-checker finding categories, shared by tool and invocation checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    Unparsable,
    StructuralError,
    MissingArgDescription,
    MissingType,
    RequiredNotDeclared,
    DuplicateName,
    HallucinatedTool,
    HallucinatedArgument,
    MissingRequiredArgument,
    WrongArgumentType,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub path: String,
    pub detail: String,
}

impl Violation {
    pub fn new(kind: ViolationKind, path: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            kind,
            path: path.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind, self.path, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("unparsable JSON: {0}")]
    Unparsable(String),
    #[error("structural error: {0}")]
    Structural(String),
}

impl SchemaError {
    pub fn kind(&self) -> ViolationKind {
        match self {
            SchemaError::Unparsable(_) => ViolationKind::Unparsable,
            SchemaError::Structural(_) => ViolationKind::StructuralError,
        }
    }

    pub fn to_violation(&self, path: impl Into<String>) -> Violation {
        let detail = match self {
            SchemaError::Unparsable(d) | SchemaError::Structural(d) => d.clone(),
        };
        Violation::new(self.kind(), path, detail)
    }

    fn from_json(err: serde_json::Error) -> Self {
        use serde_json::error::Category;
        match err.classify() {
            Category::Data => SchemaError::Structural(err.to_string()),
            _ => SchemaError::Unparsable(err.to_string()),
        }
    }
}

/// Parse one tool document from JSON text.
pub fn parse_tool_doc(text: &str) -> Result<ToolDoc, SchemaError> {
    let raw: RawDoc = serde_json::from_str(text).map_err(SchemaError::from_json)?;
    raw.interpret().map_err(SchemaError::Structural)
}

/// Deterministic single-line serialization in schema field order.
pub fn canonical_json(doc: &ToolDoc) -> String {
    serde_json::to_string(doc).expect("tool documents always serialize")
}

/// The text placed between `<tools>` and `</tools>`: one canonical document
/// per line, in set order.
pub fn render_signature_block(tools: &CandidateToolSet) -> String {
    tools
        .iter()
        .map(canonical_json)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rule-check a parsed document. Findings come back in document order; an
/// empty list means the document is clean.
pub fn validate_tool_doc(doc: &ToolDoc) -> Vec<Violation> {
    let mut out = Vec::new();
    if doc.description.trim().is_empty() {
        out.push(Violation::new(
            ViolationKind::MissingArgDescription,
            "description",
            "tool description is empty",
        ));
    }

    let mut occurrences: std::collections::HashMap<&str, usize> = Default::default();
    for p in doc.params() {
        let n = occurrences.entry(p.name.as_str()).or_default();
        *n += 1;
        let path = if *n == 1 {
            format!("params.{}", p.name)
        } else {
            format!("params.{}#{}", p.name, n)
        };
        if *n > 1 {
            out.push(Violation::new(
                ViolationKind::DuplicateName,
                &path,
                format!("parameter `{}` declared {} times", p.name, n),
            ));
        }
        if p.description.as_deref().is_none_or(|d| d.trim().is_empty()) {
            out.push(Violation::new(
                ViolationKind::MissingArgDescription,
                &path,
                "parameter has no description",
            ));
        }
        match &p.json_type {
            DeclaredType::Absent => out.push(Violation::new(
                ViolationKind::MissingType,
                format!("{path}.type"),
                "parameter has no type",
            )),
            DeclaredType::Unrecognized(v) => out.push(Violation::new(
                ViolationKind::MissingType,
                format!("{path}.type"),
                format!("unrecognized type {v}"),
            )),
            DeclaredType::Known(t) => {
                for (i, v) in p.enum_values.iter().flatten().enumerate() {
                    if !t.accepts(v) {
                        out.push(Violation::new(
                            ViolationKind::WrongArgumentType,
                            format!("{path}.enum[{i}]"),
                            format!("enum value {v} is not {t}"),
                        ));
                    }
                }
                if let Some(d) = &p.default {
                    if !t.accepts(d) {
                        out.push(Violation::new(
                            ViolationKind::WrongArgumentType,
                            format!("{path}.default"),
                            format!("default {d} is not {t}"),
                        ));
                    }
                }
            }
        }
    }

    let mut seen_required = HashSet::new();
    for (i, r) in doc.required().iter().enumerate() {
        if !seen_required.insert(r.as_str()) {
            out.push(Violation::new(
                ViolationKind::DuplicateName,
                format!("required[{i}]"),
                format!("`{r}` listed twice in required"),
            ));
        } else if !occurrences.contains_key(r.as_str()) {
            out.push(Violation::new(
                ViolationKind::RequiredNotDeclared,
                format!("required[{i}]"),
                format!("required parameter `{r}` is not declared"),
            ));
        }
    }
    out
}

// ---- serialization -------------------------------------------------------

impl Serialize for ParamSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        match &self.json_type {
            DeclaredType::Known(t) => map.serialize_entry("type", t.as_str())?,
            DeclaredType::Unrecognized(v) => map.serialize_entry("type", v)?,
            DeclaredType::Absent => {}
        }
        if let Some(d) = &self.description {
            map.serialize_entry("description", d)?;
        }
        if let Some(e) = &self.enum_values {
            map.serialize_entry("enum", e)?;
        }
        if let Some(d) = &self.default {
            map.serialize_entry("default", d)?;
        }
        for (k, v) in &self.extra {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

struct ParamList<'a>(&'a [ParamSpec]);

impl Serialize for ParamList<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        // Entries are written one by one so duplicate names survive.
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for p in self.0 {
            map.serialize_entry(&p.name, p)?;
        }
        map.end()
    }
}

impl Serialize for ParamBlock {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        if let Some(t) = &self.type_tag {
            map.serialize_entry("type", t)?;
        }
        map.serialize_entry("properties", &ParamList(&self.params))?;
        if let Some(r) = &self.required {
            map.serialize_entry("required", r)?;
        }
        for (k, v) in &self.extra {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl Serialize for ToolDoc {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        map.serialize_entry("name", &self.name)?;
        map.serialize_entry("description", &self.description)?;
        map.serialize_entry("arguments", &self.arguments)?;
        if let Some(r) = &self.results {
            map.serialize_entry("results", r)?;
        }
        for (k, v) in &self.extra {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ToolDoc {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawDoc::deserialize(deserializer)?;
        raw.interpret().map_err(de::Error::custom)
    }
}

// ---- raw parsing ---------------------------------------------------------
//
// serde_json's `Map` keeps only the last of duplicated keys, so the property
// maps are read through visitors that keep every entry.

struct Entries(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, Value>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        deserializer.deserialize_map(V)
    }
}

enum BlockField {
    Properties(Vec<(String, Value)>),
    Plain(Value),
}

struct RawBlock(Vec<(String, BlockField)>);

impl<'de> Deserialize<'de> for RawBlock {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawBlock;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a parameter block object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<RawBlock, A::Error> {
                let mut out = Vec::new();
                while let Some(k) = access.next_key::<String>()? {
                    let field = if k == "properties" {
                        BlockField::Properties(access.next_value::<Entries>()?.0)
                    } else {
                        BlockField::Plain(access.next_value()?)
                    };
                    out.push((k, field));
                }
                Ok(RawBlock(out))
            }
        }
        deserializer.deserialize_map(V)
    }
}

enum DocField {
    Block(RawBlock),
    Plain(Value),
}

struct RawDoc(Vec<(String, DocField)>);

impl<'de> Deserialize<'de> for RawDoc {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawDoc;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a tool document object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<RawDoc, A::Error> {
                let mut out = Vec::new();
                while let Some(k) = access.next_key::<String>()? {
                    let field = if k == "arguments" || k == "results" {
                        DocField::Block(access.next_value()?)
                    } else {
                        DocField::Plain(access.next_value()?)
                    };
                    out.push((k, field));
                }
                Ok(RawDoc(out))
            }
        }
        deserializer.deserialize_map(V)
    }
}

impl RawDoc {
    fn interpret(self) -> Result<ToolDoc, String> {
        let mut name = None;
        let mut description = None;
        let mut arguments = None;
        let mut results = None;
        let mut extra = Map::new();
        for (k, field) in self.0 {
            match (k.as_str(), field) {
                ("name", DocField::Plain(v)) => name = Some(v),
                ("description", DocField::Plain(v)) => description = Some(v),
                ("arguments", DocField::Block(b)) => arguments = Some(b.interpret("arguments")?),
                ("results", DocField::Block(b)) => results = Some(b.interpret("results")?),
                (_, DocField::Plain(v)) => {
                    extra.insert(k, v);
                }
                (_, DocField::Block(_)) => unreachable!("only arguments/results are read as blocks"),
            }
        }
        let name = match name {
            Some(Value::String(s)) if !s.is_empty() => s,
            Some(_) => return Err("`name` must be a nonempty string".into()),
            None => return Err("missing key `name`".into()),
        };
        let description = match description {
            Some(Value::String(s)) => s,
            Some(_) => return Err("`description` must be a string".into()),
            None => return Err("missing key `description`".into()),
        };
        let arguments = arguments.ok_or("missing key `arguments`")?;
        Ok(ToolDoc {
            name,
            description,
            arguments,
            results,
            extra,
        })
    }
}

impl RawBlock {
    fn interpret(self, at: &str) -> Result<ParamBlock, String> {
        let mut type_tag = None;
        let mut props = None;
        let mut required = None;
        let mut extra = Map::new();
        for (k, field) in self.0 {
            match (k.as_str(), field) {
                ("properties", BlockField::Properties(entries)) => props = Some(entries),
                ("type", BlockField::Plain(v)) => type_tag = Some(v),
                ("required", BlockField::Plain(v)) => required = Some(parse_required(v, at)?),
                (_, BlockField::Plain(v)) => {
                    extra.insert(k, v);
                }
                (_, BlockField::Properties(_)) => unreachable!(),
            }
        }
        let props = props.ok_or_else(|| format!("missing key `{at}.properties`"))?;
        let params = props
            .into_iter()
            .map(|(name, v)| parse_param(name, v, at))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ParamBlock {
            type_tag,
            params,
            required,
            extra,
        })
    }
}

fn parse_required(v: Value, at: &str) -> Result<Vec<String>, String> {
    let Value::Array(items) = v else {
        return Err(format!("`{at}.required` must be an array"));
    };
    items
        .into_iter()
        .map(|i| match i {
            Value::String(s) => Ok(s),
            other => Err(format!("`{at}.required` entry {other} is not a string")),
        })
        .collect()
}

fn parse_param(name: String, v: Value, at: &str) -> Result<ParamSpec, String> {
    if name.is_empty() {
        return Err(format!("`{at}.properties` has an empty parameter name"));
    }
    let Value::Object(obj) = v else {
        return Err(format!("parameter `{at}.{name}` must be an object"));
    };
    let mut spec = ParamSpec {
        name,
        json_type: DeclaredType::Absent,
        description: None,
        enum_values: None,
        default: None,
        extra: Map::new(),
    };
    for (k, v) in obj {
        match k.as_str() {
            "type" => spec.json_type = DeclaredType::from_value(v),
            "description" => match v {
                Value::String(s) => spec.description = Some(s),
                _ => return Err(format!("description of `{at}.{}` must be a string", spec.name)),
            },
            "enum" => match v {
                Value::Array(vals) => spec.enum_values = Some(vals),
                _ => return Err(format!("enum of `{at}.{}` must be an array", spec.name)),
            },
            "default" => spec.default = Some(v),
            _ => {
                spec.extra.insert(k, v);
            }
        }
    }
    Ok(spec)
}
