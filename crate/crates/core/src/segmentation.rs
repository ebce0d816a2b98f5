//! Line-start detection on the generated text stream and parsing of sampled
//! reasoning paths.
//!
//! Everything here works on token *text*, never on token ids, so it behaves
//! the same for every backend tokenizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tracks whether the stream is positioned at the start of a physical line,
/// allowing for indentation already emitted on that line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineCursor {
    pub pending_whitespace: String,
    pub at_line_start: bool,
}

impl Default for LineCursor {
    fn default() -> Self {
        Self {
            pending_whitespace: String::new(),
            at_line_start: true,
        }
    }
}

fn is_blank_run(s: &str) -> bool {
    s.chars().all(|c| c == ' ' || c == '\t')
}

/// True iff the token is non-empty and made only of spaces and tabs.
pub fn is_indentation_token(token_text: &str) -> bool {
    !token_text.is_empty() && is_blank_run(token_text)
}

impl LineCursor {
    /// Cursor positioned after `text`.
    pub fn after(text: &str) -> Self {
        Self::default().advance(text)
    }

    pub fn advance(&self, token_text: &str) -> Self {
        if token_text.is_empty() {
            return self.clone();
        }
        if let Some(nl) = token_text.rfind('\n') {
            let tail = &token_text[nl + 1..];
            return if is_blank_run(tail) {
                Self {
                    pending_whitespace: tail.to_string(),
                    at_line_start: true,
                }
            } else {
                Self {
                    pending_whitespace: String::new(),
                    at_line_start: false,
                }
            };
        }
        if self.at_line_start && is_blank_run(token_text) {
            let mut pending = self.pending_whitespace.clone();
            pending.push_str(token_text);
            Self {
                pending_whitespace: pending,
                at_line_start: true,
            }
        } else {
            Self {
                pending_whitespace: String::new(),
                at_line_start: false,
            }
        }
    }
}

/// A sampled completion split into its reasoning comments and the code line
/// that follows them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSample {
    /// Comment lines, without their trailing newline.
    pub reasoning: Vec<String>,
    /// The first non-comment, non-blank line, including its newline if present.
    pub code_line: String,
    /// Byte offset of `code_line` in the completion.
    pub code_start: usize,
    /// Byte offset one past the end of `code_line`.
    pub code_end: usize,
}

impl ParsedSample {
    /// Byte length of the completion prefix that this sample consumes.
    pub fn consumed(&self) -> usize {
        self.code_end
    }
}

pub fn parse_sample(completion_text: &str, comment_prefix: &str) -> Result<ParsedSample> {
    if comment_prefix.is_empty() {
        return Err(Error::InvalidConfiguration(
            "comment prefix must be non-empty".into(),
        ));
    }
    let mut reasoning = Vec::new();
    let mut offset = 0;
    for line in completion_text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        let content = body.trim_start_matches([' ', '\t']);
        if content.trim().is_empty() {
            continue;
        }
        if content.starts_with(comment_prefix) {
            reasoning.push(body.to_string());
            continue;
        }
        return Ok(ParsedSample {
            reasoning,
            code_line: line.to_string(),
            code_start: start,
            code_end: offset,
        });
    }
    Err(Error::DegenerateCandidate(format!(
        "no code line after {} reasoning line(s)",
        reasoning.len()
    )))
}

/// Splits a completion into `(reasoning, code_line)`. Everything after the
/// code line is discarded.
pub fn split_reasoning_and_code(
    completion_text: &str,
    comment_prefix: &str,
) -> Result<(Vec<String>, String)> {
    let parsed = parse_sample(completion_text, comment_prefix)?;
    Ok((parsed.reasoning, parsed.code_line))
}
