//! Builders for the three task prompts.
//!
//! The instruction texts live in `templates/` as plain-text fixtures and are
//! interpolated here; nothing is re-typed inline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tool_schema::{render_signature_block, CandidateToolSet};
use crate::validation::{InvocationAnswer, ToolCall};

const INVOCATION_SYSTEM: &str = include_str!("../templates/invocation_system.txt");
const SIGNATURE_SYSTEM: &str = include_str!("../templates/signature_system.txt");
const ADAPTION_USER: &str = include_str!("../templates/adaption_user.txt");
const GENERATION_USER: &str = include_str!("../templates/generation_user.txt");

const TOOLS_SLOT: &str = "{tools}";
const DESCRIPTION_SLOT: &str = "{description}";
const QUERY_SLOT: &str = "{query}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// A system message followed by exactly one user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub messages: Vec<ChatMessage>,
}

impl ChatPrompt {
    fn pair(system: String, user: String) -> Self {
        Self {
            messages: vec![
                ChatMessage::new(Role::System, system),
                ChatMessage::new(Role::User, user),
            ],
        }
    }

    pub fn system(&self) -> &str {
        self.first(Role::System)
    }

    pub fn user(&self) -> &str {
        self.first(Role::User)
    }

    fn first(&self, role: Role) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == role)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Plain-text rendering: a `[role]` header line before each message.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for (i, m) in self.messages.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push('[');
            out.push_str(m.role.as_str());
            out.push_str("]\n");
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("tool description is empty")]
    EmptyDescription,
    #[error("query is empty")]
    EmptyQuery,
}

fn template(raw: &'static str) -> &'static str {
    let raw = raw.strip_suffix('\n').unwrap_or(raw);
    raw.strip_suffix('\r').unwrap_or(raw)
}

/// System message shared by the adaption and generation prompts.
pub fn signature_system_message() -> &'static str {
    template(SIGNATURE_SYSTEM)
}

/// Everything in the invocation system message before and after the tool block.
pub fn invocation_system_parts() -> (&'static str, &'static str) {
    template(INVOCATION_SYSTEM)
        .split_once(TOOLS_SLOT)
        .expect("invocation template carries a {tools} slot")
}

pub fn adaption_user_prefix() -> &'static str {
    template(ADAPTION_USER)
        .strip_suffix(DESCRIPTION_SLOT)
        .expect("adaption template ends with {description}")
}

pub fn generation_user_prefix() -> &'static str {
    template(GENERATION_USER)
        .strip_suffix(QUERY_SLOT)
        .expect("generation template ends with {query}")
}

pub fn build_invocation_prompt(query: &str, tools: &CandidateToolSet) -> ChatPrompt {
    let (head, tail) = invocation_system_parts();
    let system = format!("{head}{}{tail}", render_signature_block(tools));
    ChatPrompt::pair(system, query.to_owned())
}

pub fn build_adaption_prompt(description: &str) -> Result<ChatPrompt, PromptError> {
    if description.is_empty() {
        return Err(PromptError::EmptyDescription);
    }
    Ok(ChatPrompt::pair(
        signature_system_message().to_owned(),
        format!("{}{description}", adaption_user_prefix()),
    ))
}

pub fn build_generation_prompt(query: &str) -> Result<ChatPrompt, PromptError> {
    if query.is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    Ok(ChatPrompt::pair(
        signature_system_message().to_owned(),
        format!("{}{query}", generation_user_prefix()),
    ))
}

/// Writes JSON with `", "` and `": "` separators, the layout tool calls use in
/// assistant turns.
struct SpacedFormatter;

impl serde_json::ser::Formatter for SpacedFormatter {
    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        if first {
            Ok(())
        } else {
            w.write_all(b", ")
        }
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        if first {
            Ok(())
        } else {
            w.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        w.write_all(b": ")
    }
}

pub fn render_tool_call_json(call: &ToolCall) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SpacedFormatter);
    call.serialize(&mut ser).expect("tool calls always serialize");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// One `<tool_call>` block per call, separated by newlines.
pub fn render_tool_calls(answer: &InvocationAnswer) -> String {
    answer
        .calls
        .iter()
        .map(|c| format!("<tool_call>\n{}\n</tool_call>", render_tool_call_json(c)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The tool set wrapped in a `<tools>` block, as a signature answer.
pub fn render_tools_block(tools: &CandidateToolSet) -> String {
    format!("<tools>\n{}\n</tools>", render_signature_block(tools))
}

/// Which of the three tasks a prompt belongs to, recovered from its text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptKind<'a> {
    Invocation { query: &'a str },
    Adaption { description: &'a str },
    Generation { query: &'a str },
}

pub fn classify_prompt(prompt: &ChatPrompt) -> Option<PromptKind<'_>> {
    let system = prompt.system();
    let user = prompt.user();
    if system == signature_system_message() {
        if let Some(d) = user.strip_prefix(adaption_user_prefix()) {
            return Some(PromptKind::Adaption { description: d });
        }
        if let Some(q) = user.strip_prefix(generation_user_prefix()) {
            return Some(PromptKind::Generation { query: q });
        }
        return None;
    }
    let (head, tail) = invocation_system_parts();
    if system.starts_with(head) && system.ends_with(tail) {
        return Some(PromptKind::Invocation { query: user });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invocation_prompt_shape() {
        let p = build_invocation_prompt("", &CandidateToolSet::empty());
        assert_eq!(p.messages.len(), 2);
        assert_eq!(p.messages[0].role, Role::System);
        assert!(p.system().contains("You may call one or more functions to assist with the user query."));
        assert!(p.system().contains("<tools>\n\n</tools>"));
        assert_eq!(p.user(), "");
    }

    #[test]
    fn adaption_user_message() {
        let p = build_adaption_prompt("d").unwrap();
        assert!(p.user().ends_with(": d"));
        assert_eq!(build_adaption_prompt(""), Err(PromptError::EmptyDescription));
    }

    #[test]
    fn generation_shares_system_with_adaption() {
        let g = build_generation_prompt("x").unwrap();
        let a = build_adaption_prompt("x").unwrap();
        assert_eq!(g.system(), a.system());
        assert_eq!(g.user(), "Generate tools to solve the query: x");
        assert_eq!(build_generation_prompt(""), Err(PromptError::EmptyQuery));
    }

    #[test]
    fn classification_recovers_inputs() {
        let g = build_generation_prompt("find flights").unwrap();
        assert_eq!(classify_prompt(&g), Some(PromptKind::Generation { query: "find flights" }));
        let a = build_adaption_prompt("Adds numbers.").unwrap();
        assert_eq!(classify_prompt(&a), Some(PromptKind::Adaption { description: "Adds numbers." }));
        let i = build_invocation_prompt("hi", &CandidateToolSet::empty());
        assert_eq!(classify_prompt(&i), Some(PromptKind::Invocation { query: "hi" }));
    }

    #[test]
    fn transcript_layout() {
        let p = build_generation_prompt("q").unwrap();
        let t = p.transcript();
        assert!(t.starts_with("[system]\nYou are a helpful assistant."));
        assert!(t.ends_with("\n\n[user]\nGenerate tools to solve the query: q\n"));
    }
}
