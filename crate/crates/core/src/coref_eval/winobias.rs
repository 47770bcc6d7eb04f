//! WinoBias-style bracketed sentence files.
//!
//! One instance per line, optionally prefixed by an integer id:
//!
//! ```text
//! 1 [The developer] argued with the designer because [he] did not like the design.
//! ```
//!
//! Tokens are whitespace-separated. Brackets may be attached to words or stand
//! alone; anything after a closing bracket (usually punctuation) becomes its own
//! token.

use serde::{Deserialize, Serialize};

use super::{CorefError, Span};

/// Gendered pronouns that can form the pronoun span.
pub const GENDERED_PRONOUNS: &[&str] = &["he", "him", "his", "himself", "she", "her", "hers", "herself"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Pro,
    Anti,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    SemanticsOnly,
    SyntacticCues,
}

impl TaskType {
    pub fn name(self) -> &'static str {
        match self {
            TaskType::SemanticsOnly => "semantics_only",
            TaskType::SyntacticCues => "syntactic_cues",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinoBiasInstance {
    pub instance_id: String,
    /// 1-based line in the source file.
    pub line: usize,
    pub tokens: Vec<String>,
    pub pronoun: Span,
    pub occupation: Span,
    pub condition: Condition,
    pub task_type: TaskType,
}

impl WinoBiasInstance {
    pub fn gold_pair(&self) -> (Span, Span) {
        (self.pronoun, self.occupation)
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> CorefError {
    CorefError::Parse {
        line,
        message: message.into(),
    }
}

/// Splits a line into tokens and the bracketed spans it contains.
pub fn parse_brackets(text: &str, line: usize) -> Result<(Vec<String>, Vec<Span>), CorefError> {
    let mut tokens: Vec<String> = Vec::new();
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for raw in text.split_whitespace() {
        let mut rest = raw;
        while let Some(r) = rest.strip_prefix('[') {
            if open.is_some() {
                return Err(parse_error(line, "nested `[`"));
            }
            open = Some(tokens.len());
            rest = r;
        }
        let (word, close, after) = match rest.find(']') {
            Some(p) => (&rest[..p], true, &rest[p + 1..]),
            None => (rest, false, ""),
        };
        if word.contains('[') {
            return Err(parse_error(line, format!("unexpected `[` inside `{raw}`")));
        }
        if !word.is_empty() {
            tokens.push(word.to_string());
        }
        if close {
            let start = open
                .take()
                .ok_or_else(|| parse_error(line, "`]` without matching `[`"))?;
            if tokens.len() == start {
                return Err(parse_error(line, "empty bracket span"));
            }
            spans.push(Span::new(start, tokens.len() - 1));
            if after.contains(['[', ']']) {
                return Err(parse_error(line, format!("unexpected bracket in `{raw}`")));
            }
            if !after.is_empty() {
                tokens.push(after.to_string());
            }
        }
    }
    if open.is_some() {
        return Err(parse_error(line, "unclosed `[`"));
    }
    Ok((tokens, spans))
}

pub fn parse_winobias(
    text: &str,
    condition: Condition,
    task_type: TaskType,
) -> Result<Vec<WinoBiasInstance>, CorefError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (instance_id, body) = match trimmed.split_once(char::is_whitespace) {
            Some((head, rest)) if !head.is_empty() && head.bytes().all(|b| b.is_ascii_digit()) => {
                (head.to_string(), rest)
            }
            _ => (line.to_string(), trimmed),
        };
        let (tokens, spans) = parse_brackets(body, line)?;
        if spans.len() != 2 {
            return Err(parse_error(
                line,
                format!("expected 2 bracketed spans, found {}", spans.len()),
            ));
        }
        let is_pronoun =
            |s: &Span| s.start == s.end && GENDERED_PRONOUNS.contains(&tokens[s.start].to_lowercase().as_str());
        let (pronoun, occupation) = match (is_pronoun(&spans[0]), is_pronoun(&spans[1])) {
            (false, true) => (spans[1], spans[0]),
            (true, false) => (spans[0], spans[1]),
            (false, false) => return Err(parse_error(line, "neither bracketed span is a pronoun")),
            (true, true) => return Err(parse_error(line, "both bracketed spans are pronouns")),
        };
        out.push(WinoBiasInstance {
            instance_id,
            line,
            tokens,
            pronoun,
            occupation,
            condition,
            task_type,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn developer_example() {
        let text = "1 [The developer] corrected the secretary because [he] made a mistake .";
        let v = parse_winobias(text, Condition::Pro, TaskType::SemanticsOnly).unwrap();
        let inst = &v[0];
        assert_eq!(inst.instance_id, "1");
        assert_eq!(
            inst.tokens.join(" "),
            "The developer corrected the secretary because he made a mistake ."
        );
        assert_eq!(inst.tokens.len(), 11);
        assert_eq!(inst.occupation, Span::new(0, 1));
        assert_eq!(inst.pronoun, Span::new(6, 6));
    }

    #[test]
    fn attached_punctuation_and_loose_brackets() {
        let text = "The mechanic fixed the car for [ the cashier ] and charged [her].";
        let v = parse_winobias(text, Condition::Anti, TaskType::SyntacticCues).unwrap();
        let inst = &v[0];
        assert_eq!(inst.instance_id, "1");
        assert_eq!(inst.tokens.last().unwrap(), ".");
        assert_eq!(inst.occupation, Span::new(6, 7));
        assert_eq!(inst.tokens[inst.pronoun.start], "her");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let three = "ok [a] [he]\n2 [a] [b] [he]";
        let err = parse_winobias(three, Condition::Pro, TaskType::SemanticsOnly).unwrap_err();
        assert!(matches!(err, CorefError::Parse { line: 2, .. }), "{err}");
        let none = "[the nurse] met [the doctor]";
        assert!(parse_winobias(none, Condition::Pro, TaskType::SemanticsOnly).is_err());
        assert!(parse_winobias("[a [b] he]", Condition::Pro, TaskType::SemanticsOnly).is_err());
        assert!(parse_winobias("[a] he]", Condition::Pro, TaskType::SemanticsOnly).is_err());
        assert!(parse_winobias("", Condition::Pro, TaskType::SemanticsOnly)
            .unwrap()
            .is_empty());
    }
}
