//! Model output to label vectors.
//!
//! Two grammars: the single classification line `A=0, B=1, ..., X=0` over a
//! whole alphabet, and the per-theme answer `A=1` / `A=[1]`. Strict mode
//! accepts only the exact canonical payload; lenient mode scans every line
//! and takes the first one that assigns every code exactly once.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, LabelVector, ThemeCode};
use crate::prompting::PromptTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    MissingCode,
    DuplicateCode,
    NonBinaryValue,
    NoLineFound,
    ExtraProseStrict,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::MissingCode => "missing-code",
            FailureReason::DuplicateCode => "duplicate-code",
            FailureReason::NonBinaryValue => "non-binary-value",
            FailureReason::NoLineFound => "no-line-found",
            FailureReason::ExtraProseStrict => "extra-prose-strict",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub reason: FailureReason,
    /// Codes the failure is about, when it concerns specific codes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub codes: Vec<ThemeCode>,
    pub detail: String,
}

impl ParseFailure {
    pub fn new(reason: FailureReason, codes: Vec<ThemeCode>, detail: impl Into<String>) -> Self {
        Self {
            reason,
            codes,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.reason, self.detail)
    }
}

impl std::error::Error for ParseFailure {}

pub type ParseOutcome = Result<LabelVector, ParseFailure>;

fn letters(codes: &[ThemeCode]) -> String {
    codes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Assignment<'a> {
    code: ThemeCode,
    value: &'a str,
}

fn binary(value: &str) -> Option<bool> {
    match value {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Finds `C=v`, `C = v` and `C=[v]` tokens in one line.
fn scan_line(line: &str) -> Vec<Assignment<'_>> {
    let bytes = line.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let starts_word = i == 0 || {
            // Only ASCII matters for the flank test; multibyte tails are >= 0x80.
            let prev = bytes[i - 1];
            !(prev.is_ascii_alphanumeric() || prev == b'_' || prev >= 0x80)
        };
        if !(b.is_ascii_uppercase() && starts_word) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < bytes.len() && bytes[j] == b' ' {
            j += 1;
        }
        if j >= bytes.len() || bytes[j] != b'=' {
            i += 1;
            continue;
        }
        j += 1;
        while j < bytes.len() && bytes[j] == b' ' {
            j += 1;
        }
        let bracketed = j < bytes.len() && bytes[j] == b'[';
        if bracketed {
            j += 1;
            while j < bytes.len() && bytes[j] == b' ' {
                j += 1;
            }
        }
        let start = j;
        while j < bytes.len() && !matches!(bytes[j], b',' | b']' | b';' | b' ' | b'\t' | b'\r') {
            j += 1;
        }
        let value = line[start..j].trim_matches(|c| matches!(c, '.' | '"' | '\'' | '*' | '`'));
        if bracketed {
            while j < bytes.len() && bytes[j] == b' ' {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b']' {
                j += 1;
            }
        }
        found.push(Assignment {
            code: ThemeCode::new(b as char).expect("ascii uppercase"),
            value,
        });
        i = j.max(i + 1);
    }
    found
}

// Checks one line's assignments against the alphabet. Returns the number of
// distinct alphabet codes present alongside the outcome.
fn judge(assigns: &[Assignment<'_>], alphabet: &[ThemeCode]) -> (usize, ParseOutcome) {
    let mut values: BTreeMap<ThemeCode, &str> = BTreeMap::new();
    let mut dups = Vec::new();
    for a in assigns.iter().filter(|a| alphabet.contains(&a.code)) {
        if values.insert(a.code, a.value).is_some() && !dups.contains(&a.code) {
            dups.push(a.code);
        }
    }
    let coverage = values.len();
    if !dups.is_empty() {
        let detail = format!("code(s) {} assigned more than once", letters(&dups));
        return (coverage, Err(ParseFailure::new(FailureReason::DuplicateCode, dups, detail)));
    }
    let non_binary: Vec<ThemeCode> = alphabet
        .iter()
        .filter(|c| values.get(c).is_some_and(|v| binary(v).is_none()))
        .copied()
        .collect();
    if !non_binary.is_empty() {
        let shown: Vec<String> = non_binary.iter().map(|c| format!("{c}={}", values[c])).collect();
        let detail = format!("non-binary value(s) {}", shown.join(", "));
        return (coverage, Err(ParseFailure::new(FailureReason::NonBinaryValue, non_binary, detail)));
    }
    let missing: Vec<ThemeCode> = alphabet.iter().filter(|c| !values.contains_key(c)).copied().collect();
    if !missing.is_empty() {
        let detail = format!("no assignment for {}", letters(&missing));
        return (coverage, Err(ParseFailure::new(FailureReason::MissingCode, missing, detail)));
    }
    let entries = alphabet
        .iter()
        .map(|&c| (c, binary(values[&c]).expect("checked binary")))
        .collect();
    (coverage, Ok(LabelVector::from_entries(entries)))
}

fn parse_lenient(text: &str, alphabet: &[ThemeCode]) -> ParseOutcome {
    let mut best: Option<(usize, ParseFailure)> = None;
    for line in text.lines() {
        let assigns = scan_line(line);
        if !assigns.iter().any(|a| alphabet.contains(&a.code)) {
            continue;
        }
        match judge(&assigns, alphabet) {
            (_, Ok(v)) => return Ok(v),
            (coverage, Err(f)) => {
                if best.as_ref().is_none_or(|(b, _)| coverage > *b) {
                    best = Some((coverage, f));
                }
            }
        }
    }
    Err(best.map(|(_, f)| f).unwrap_or_else(|| {
        ParseFailure::new(
            FailureReason::NoLineFound,
            alphabet.to_vec(),
            "no line assigns any expected code",
        )
    }))
}

fn parse_strict(text: &str, alphabet: &[ThemeCode]) -> ParseOutcome {
    let payload = text.trim();
    if payload.is_empty() {
        return Err(ParseFailure::new(FailureReason::NoLineFound, alphabet.to_vec(), "empty response"));
    }
    let prose = |detail: &str| Err(ParseFailure::new(FailureReason::ExtraProseStrict, vec![], detail));
    if payload.lines().count() > 1 {
        return if payload.lines().any(|l| !scan_line(l).is_empty()) {
            prose("response has more than the classification line")
        } else {
            Err(ParseFailure::new(FailureReason::NoLineFound, alphabet.to_vec(), "no classification line"))
        };
    }
    let mut assigns = Vec::new();
    for term in payload.split(", ") {
        let parsed = term.split_once('=').and_then(|(code, value)| {
            let code: ThemeCode = code.parse().ok()?;
            (!value.is_empty() && !value.contains(|c: char| c.is_whitespace() || c == ','))
                .then_some(Assignment { code, value })
        });
        match parsed {
            Some(a) if alphabet.contains(&a.code) => assigns.push(a),
            Some(a) => return prose(&format!("unexpected code {}", a.code)),
            None if scan_line(payload).is_empty() => {
                return Err(ParseFailure::new(
                    FailureReason::NoLineFound,
                    alphabet.to_vec(),
                    "no classification line",
                ))
            }
            None => return prose(&format!("term {term:?} is not a canonical assignment")),
        }
    }
    let vector = judge(&assigns, alphabet).1?;
    if !assigns.iter().map(|a| a.code).eq(alphabet.iter().copied()) {
        return prose("codes are not in canonical order");
    }
    Ok(vector)
}

/// Parses a classification line over an explicit alphabet.
pub fn parse_line_over(text: &str, alphabet: &[ThemeCode], mode: ParseMode) -> ParseOutcome {
    match mode {
        ParseMode::Strict => parse_strict(text, alphabet),
        ParseMode::Lenient => parse_lenient(text, alphabet),
    }
}

/// Parses a full classification line over the codebook alphabet.
pub fn parse_single_line(text: &str, cb: &Codebook, mode: ParseMode) -> ParseOutcome {
    parse_line_over(text, &cb.alphabet(), mode)
}

/// Parses a per-theme answer such as `A=1` or `A=[0]`.
pub fn parse_single_answer(text: &str, code: ThemeCode, mode: ParseMode) -> ParseOutcome {
    let alphabet = [code];
    match mode {
        ParseMode::Lenient => parse_lenient(text, &alphabet),
        ParseMode::Strict => {
            let payload = text.trim();
            for (value, bit) in [("1", true), ("0", false)] {
                if payload == format!("{code}={value}") || payload == format!("{code}=[{value}]") {
                    return Ok(LabelVector::from_entries(vec![(code, bit)]));
                }
            }
            let only: Vec<_> = scan_line(payload).into_iter().filter(|a| a.code == code).collect();
            match only.as_slice() {
                [] => Err(ParseFailure::new(
                    FailureReason::NoLineFound,
                    vec![code],
                    format!("no assignment for {code}"),
                )),
                [a] if binary(a.value).is_none() && !payload.contains('\n') => Err(ParseFailure::new(
                    FailureReason::NonBinaryValue,
                    vec![code],
                    format!("non-binary value {code}={}", a.value),
                )),
                _ => Err(ParseFailure::new(
                    FailureReason::ExtraProseStrict,
                    vec![],
                    "response has more than the answer",
                )),
            }
        }
    }
}

/// Parses a response to a prompt with the grammar its target implies.
pub fn parse_for_target(text: &str, target: &PromptTarget, mode: ParseMode) -> ParseOutcome {
    match target {
        PromptTarget::Theme(code) => parse_single_answer(text, *code, mode),
        PromptTarget::All(codes) => parse_line_over(text, codes, mode),
    }
}

/// Merges per-theme single-code outcomes into one vector over the codebook.
pub fn assemble_per_theme(outcomes: &[(ThemeCode, ParseOutcome)], cb: &Codebook) -> ParseOutcome {
    let alphabet = cb.alphabet();
    let failed: Vec<ThemeCode> = alphabet
        .iter()
        .filter(|&&c| !matches!(outcomes.iter().find(|(oc, _)| *oc == c), Some((_, Ok(_)))))
        .copied()
        .collect();
    if !failed.is_empty() {
        let details: Vec<String> = outcomes
            .iter()
            .filter_map(|(c, o)| o.as_ref().err().map(|f| format!("{c}: {f}")))
            .collect();
        let detail = if details.is_empty() {
            format!("no outcome for {}", letters(&failed))
        } else {
            details.join("; ")
        };
        return Err(ParseFailure::new(
            FailureReason::MissingCode,
            failed,
            detail,
        ));
    }
    let entries = alphabet
        .iter()
        .map(|&c| {
            let (_, outcome) = outcomes.iter().find(|(oc, _)| *oc == c).expect("checked above");
            let v = outcome.as_ref().expect("checked above");
            (c, v.get(c).unwrap_or(false))
        })
        .collect();
    Ok(LabelVector::from_entries(entries))
}
