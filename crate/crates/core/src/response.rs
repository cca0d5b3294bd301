//! Tagged policy emissions: `<think>`, `<tool_call>` and `<answer>` blocks,
//! the binary format reward, and the canonical answer text.
//!
//! A well-formed emission is exactly one think block, zero or more tool-call
//! blocks, then exactly one answer block. Only whitespace may appear between
//! blocks. Tags are literal, case-sensitive ASCII and never nest.

use std::fmt;

use thiserror::Error;

use crate::config_space::{Answer, Kind, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Think,
    ToolCall,
    Answer,
}

impl Tag {
    const ALL: [Tag; 3] = [Tag::Think, Tag::ToolCall, Tag::Answer];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Think => "think",
            Tag::ToolCall => "tool_call",
            Tag::Answer => "answer",
        }
    }

    pub fn open(self) -> &'static str {
        match self {
            Tag::Think => "<think>",
            Tag::ToolCall => "<tool_call>",
            Tag::Answer => "<answer>",
        }
    }

    pub fn close(self) -> &'static str {
        match self {
            Tag::Think => "</think>",
            Tag::ToolCall => "</tool_call>",
            Tag::Answer => "</answer>",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Why an emission does not match the response format.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatFailure {
    #[error("missing <{0}> block")]
    Missing(Tag),
    #[error("more than one <{0}> block")]
    Duplicate(Tag),
    #[error("unbalanced <{0}> tags")]
    Unbalanced(Tag),
    #[error("tag inside a <{0}> block")]
    Nested(Tag),
    #[error("blocks out of order")]
    OutOfOrder,
    #[error("text outside of tagged blocks")]
    StrayText,
}

/// A parsed emission. Segment texts are kept verbatim, including any
/// whitespace just inside the tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentResponse {
    pub think: String,
    pub tool_calls: Vec<String>,
    pub answer: String,
    pub raw: String,
}

impl AgentResponse {
    /// Re-emit the segments with no whitespace between blocks.
    pub fn reconstruct(&self) -> String {
        let mut out = format!("{}{}{}", Tag::Think.open(), self.think, Tag::Think.close());
        for q in &self.tool_calls {
            out.push_str(Tag::ToolCall.open());
            out.push_str(q);
            out.push_str(Tag::ToolCall.close());
        }
        out.push_str(Tag::Answer.open());
        out.push_str(&self.answer);
        out.push_str(Tag::Answer.close());
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Token {
    start: usize,
    end: usize,
    tag: Tag,
    open: bool,
}

fn tokenize(raw: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let rest = &raw[i..];
            let hit = Tag::ALL.iter().find_map(|&tag| {
                if rest.starts_with(tag.open()) {
                    Some((tag, true, tag.open().len()))
                } else if rest.starts_with(tag.close()) {
                    Some((tag, false, tag.close().len()))
                } else {
                    None
                }
            });
            if let Some((tag, open, len)) = hit {
                out.push(Token {
                    start: i,
                    end: i + len,
                    tag,
                    open,
                });
                i += len;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Split an emission into its segments, or report the first format problem.
pub fn parse_response(raw: &str) -> Result<AgentResponse, FormatFailure> {
    let tokens = tokenize(raw);
    let count = |tag: Tag, open: bool| {
        tokens
            .iter()
            .filter(|t| t.tag == tag && t.open == open)
            .count()
    };
    for tag in [Tag::Think, Tag::Answer] {
        if count(tag, true) == 0 && count(tag, false) == 0 {
            return Err(FormatFailure::Missing(tag));
        }
    }
    for tag in [Tag::Think, Tag::Answer] {
        if count(tag, true) > 1 || count(tag, false) > 1 {
            return Err(FormatFailure::Duplicate(tag));
        }
    }
    for tag in Tag::ALL {
        if count(tag, true) != count(tag, false) {
            return Err(FormatFailure::Unbalanced(tag));
        }
    }
    let mut blocks: Vec<(Tag, &str)> = Vec::with_capacity(tokens.len() / 2);
    let mut cursor = 0;
    for pair in tokens.chunks(2) {
        let (open, close) = (pair[0], pair[1]);
        if !open.open {
            return Err(FormatFailure::Unbalanced(open.tag));
        }
        if close.open || close.tag != open.tag {
            return Err(FormatFailure::Nested(open.tag));
        }
        if !raw[cursor..open.start].trim().is_empty() {
            return Err(FormatFailure::StrayText);
        }
        blocks.push((open.tag, &raw[open.end..close.start]));
        cursor = close.end;
    }
    let stray_tail = !raw[cursor..].trim().is_empty();

    let last = blocks.len() - 1;
    if blocks[0].0 != Tag::Think || blocks[last].0 != Tag::Answer {
        return Err(FormatFailure::OutOfOrder);
    }
    if blocks[1..last].iter().any(|(t, _)| *t != Tag::ToolCall) {
        return Err(FormatFailure::OutOfOrder);
    }
    if stray_tail {
        return Err(FormatFailure::StrayText);
    }
    Ok(AgentResponse {
        think: blocks[0].1.to_string(),
        tool_calls: blocks[1..last].iter().map(|(_, q)| q.to_string()).collect(),
        answer: blocks[last].1.to_string(),
        raw: raw.to_string(),
    })
}

/// 1 when the emission parsed, 0 otherwise.
pub fn format_reward<T, E>(parsed: &Result<T, E>) -> f64 {
    if parsed.is_ok() {
        1.0
    } else {
        0.0
    }
}

/// Canonical answer text: compact JSON with sorted keys and sorted Menu items.
pub fn render_answer(answer: &Answer) -> String {
    answer.to_json().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerParseError {
    #[error("answer is not JSON: {0}")]
    NotJson(String),
    #[error(transparent)]
    Shape(#[from] Violation),
}

/// Inverse of [`render_answer`]; surrounding whitespace is ignored.
pub fn parse_answer(text: &str, expected: Kind) -> Result<Answer, AnswerParseError> {
    let v: serde_json::Value =
        serde_json::from_str(text.trim()).map_err(|e| AnswerParseError::NotJson(e.to_string()))?;
    Ok(Answer::from_json(expected, &v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_space::{Literal, Toggle};
    use std::collections::BTreeMap;

    #[test]
    fn think_then_answer() {
        let r = parse_response("<think>t</think><answer>a</answer>").unwrap();
        assert_eq!(r.think, "t");
        assert!(r.tool_calls.is_empty());
        assert_eq!(r.answer, "a");
    }

    #[test]
    fn tool_call_between() {
        let r = parse_response("<think>t</think><tool_call>q</tool_call><answer>a</answer>").unwrap();
        assert_eq!(r.tool_calls, ["q"]);
    }

    #[test]
    fn template_spacing_is_accepted() {
        let raw = "<think> reasoning here </think> <answer> decision here </answer>";
        let r = parse_response(raw).unwrap();
        assert_eq!(r.answer, " decision here ");
        assert_eq!(
            r.reconstruct(),
            "<think> reasoning here </think><answer> decision here </answer>"
        );
    }

    #[test]
    fn failures() {
        assert_eq!(
            parse_response("<answer>a</answer><think>t</think>"),
            Err(FormatFailure::OutOfOrder)
        );
        assert_eq!(
            parse_response("<think>t</think><answer>a"),
            Err(FormatFailure::Unbalanced(Tag::Answer))
        );
        assert_eq!(parse_response(""), Err(FormatFailure::Missing(Tag::Think)));
        assert_eq!(
            parse_response("<think>a</think><think>b</think><answer>c</answer>"),
            Err(FormatFailure::Duplicate(Tag::Think))
        );
        assert_eq!(
            parse_response("<think>a<tool_call>q</tool_call></think><answer>c</answer>"),
            Err(FormatFailure::Nested(Tag::Think))
        );
        assert_eq!(
            parse_response("hi <think>a</think><answer>c</answer>"),
            Err(FormatFailure::StrayText)
        );
        assert_eq!(
            parse_response("<tool_call>q</tool_call><think>a</think><answer>c</answer>"),
            Err(FormatFailure::OutOfOrder)
        );
        assert_eq!(
            parse_response("<think>a</think><answer>c</answer><tool_call>q</tool_call>"),
            Err(FormatFailure::OutOfOrder)
        );
        assert_eq!(
            parse_response("<Think>a</Think><answer>c</answer>"),
            Err(FormatFailure::Missing(Tag::Think))
        );
    }

    #[test]
    fn format_reward_is_indicator() {
        assert_eq!(format_reward(&parse_response("<think>t</think><answer>a</answer>")), 1.0);
        assert_eq!(format_reward(&parse_response("<think>t</think><answer>a")), 0.0);
        assert_eq!(format_reward(&parse_response("")), 0.0);
    }

    #[test]
    fn canonical_answers() {
        assert_eq!(render_answer(&Answer::bool1("CFG_A", Toggle::Yes)), r#"{"CFG_A":"Yes"}"#);
        assert_eq!(render_answer(&Answer::menu(["B", "A"])), r#"["A","B"]"#);
        assert_eq!(render_answer(&Answer::value1("CFG_B", 64)), r#"{"CFG_B":64}"#);
        assert_eq!(render_answer(&Answer::Choice("A".into())), r#""A""#);
    }

    #[test]
    fn answer_parsing() {
        assert_eq!(parse_answer(r#"["A"]"#, Kind::Menu), Ok(Answer::menu(["A"])));
        assert!(matches!(
            parse_answer(r#"{"CFG":"Maybe"}"#, Kind::Bool),
            Err(AnswerParseError::Shape(Violation::NotYesNo { .. }))
        ));
        assert_eq!(parse_answer(r#" "A" "#, Kind::Choice), Ok(Answer::Choice("A".into())));
        assert!(matches!(
            parse_answer("A", Kind::Choice),
            Err(AnswerParseError::NotJson(_))
        ));
        assert_eq!(
            parse_answer(r#"{"V":"fast"}"#, Kind::Value),
            Ok(Answer::Value(BTreeMap::from([("V".into(), Literal::text("fast"))])))
        );
    }
}
