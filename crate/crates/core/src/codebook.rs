//! Theme taxonomy, binary label vectors and expert gold labels.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;

pub(crate) const DEFAULT_CODEBOOK: &str = include_str!("../assets/codebook.toml");

/// A single-letter theme code, e.g. `A` or the null theme `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ThemeCode(char);

impl ThemeCode {
    pub fn new(letter: char) -> Option<Self> {
        letter.is_ascii_uppercase().then_some(Self(letter))
    }

    pub fn letter(self) -> char {
        self.0
    }
}

impl TryFrom<String> for ThemeCode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl std::str::FromStr for ThemeCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => ThemeCode::new(c).ok_or_else(|| format!("invalid theme code {s:?}")),
            _ => Err(format!("invalid theme code {s:?}")),
        }
    }
}

impl From<ThemeCode> for String {
    fn from(c: ThemeCode) -> String {
        c.0.to_string()
    }
}

impl fmt::Display for ThemeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Parses a string of single letters such as `"ABCX"`.
pub fn alphabet(letters: &str) -> Vec<ThemeCode> {
    letters
        .chars()
        .map(|c| ThemeCode::new(c).expect("uppercase letter"))
        .collect()
}

/// A total binary assignment over an ordered alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVector {
    entries: Vec<(ThemeCode, bool)>,
}

impl LabelVector {
    pub fn zeros(alphabet: &[ThemeCode]) -> Self {
        Self {
            entries: alphabet.iter().map(|&c| (c, false)).collect(),
        }
    }

    /// Vector over `alphabet` with exactly the listed codes set.
    pub fn with_positives(alphabet: &[ThemeCode], positives: &[ThemeCode]) -> Self {
        Self {
            entries: alphabet.iter().map(|&c| (c, positives.contains(&c))).collect(),
        }
    }

    /// Builds from explicit `(code, value)` pairs in alphabet order.
    pub fn from_entries(entries: Vec<(ThemeCode, bool)>) -> Self {
        Self { entries }
    }

    /// Builds from a code map; every alphabet code must be present.
    pub fn from_map(
        alphabet: &[ThemeCode],
        map: &BTreeMap<ThemeCode, bool>,
    ) -> Result<Self, ThemeCode> {
        alphabet
            .iter()
            .map(|&c| map.get(&c).map(|&v| (c, v)).ok_or(c))
            .collect::<Result<Vec<_>, _>>()
            .map(|entries| Self { entries })
    }

    pub fn get(&self, code: ThemeCode) -> Option<bool> {
        self.entries.iter().find(|(c, _)| *c == code).map(|&(_, v)| v)
    }

    pub fn set(&mut self, code: ThemeCode, value: bool) -> bool {
        match self.entries.iter_mut().find(|(c, _)| *c == code) {
            Some(entry) => {
                entry.1 = value;
                true
            }
            None => false,
        }
    }

    pub fn entries(&self) -> &[(ThemeCode, bool)] {
        &self.entries
    }

    pub fn codes(&self) -> impl Iterator<Item = ThemeCode> + '_ {
        self.entries.iter().map(|&(c, _)| c)
    }

    pub fn positives(&self) -> impl Iterator<Item = ThemeCode> + '_ {
        self.entries.iter().filter(|(_, v)| *v).map(|&(c, _)| c)
    }

    pub fn count_positive(&self) -> usize {
        self.entries.iter().filter(|(_, v)| *v).count()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when the vector assigns exactly the codes of `alphabet`, in order.
    pub fn covers(&self, alphabet: &[ThemeCode]) -> bool {
        self.entries.len() == alphabet.len()
            && self.entries.iter().zip(alphabet).all(|((c, _), a)| c == a)
    }

    pub fn complement(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|&(c, v)| (c, !v)).collect(),
        }
    }

    /// Concatenates single-code vectors into one in the order given.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabelVector>) -> Self {
        Self {
            entries: parts.into_iter().flat_map(|v| v.entries.iter().copied()).collect(),
        }
    }
}

/// A worked example usable as a few-shot demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    /// Raw cell values as read; validated against the alphabet.
    pub labels: BTreeMap<ThemeCode, u8>,
}

impl Exemplar {
    /// Vector over `alphabet`; `None` if incomplete or non-binary.
    pub fn label_vector(&self, alphabet: &[ThemeCode]) -> Option<LabelVector> {
        alphabet
            .iter()
            .map(|c| match self.labels.get(c) {
                Some(0) => Some((*c, false)),
                Some(1) => Some((*c, true)),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(LabelVector::from_entries)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeDef {
    pub code: ThemeCode,
    pub name: String,
    pub definition: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub null_theme: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplars: Vec<Exemplar>,
}

/// Ordered theme definitions. Theme order is the canonical label order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: String,
    pub themes: Vec<ThemeDef>,
}

/// One violated codebook invariant, or a lint warning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    EmptyCodebook,
    DuplicateCode(ThemeCode),
    EmptyDefinition(ThemeCode),
    EmptyName(ThemeCode),
    NoNullTheme,
    MultipleNullThemes(Vec<ThemeCode>),
    ExemplarMissingCode { exemplar: String, code: ThemeCode },
    ExemplarUnknownCode { exemplar: String, code: ThemeCode },
    ExemplarNonBinary { exemplar: String, code: ThemeCode, value: u8 },
    /// Lint only: the null theme co-occurs with a substantive theme.
    NullWithPositives { exemplar: String },
}

impl Finding {
    pub fn is_lint(&self) -> bool {
        matches!(self, Finding::NullWithPositives { .. })
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::EmptyCodebook => write!(f, "codebook has no themes"),
            Finding::DuplicateCode(c) => write!(f, "duplicate code {c}"),
            Finding::EmptyDefinition(c) => write!(f, "missing definition for {c}"),
            Finding::EmptyName(c) => write!(f, "missing name for {c}"),
            Finding::NoNullTheme => write!(f, "no null theme"),
            Finding::MultipleNullThemes(cs) => {
                let cs: Vec<String> = cs.iter().map(|c| c.to_string()).collect();
                write!(f, "multiple null themes: {}", cs.join(", "))
            }
            Finding::ExemplarMissingCode { exemplar, code } => {
                write!(f, "exemplar {exemplar} is missing code {code}")
            }
            Finding::ExemplarUnknownCode { exemplar, code } => {
                write!(f, "exemplar {exemplar} labels unknown code {code}")
            }
            Finding::ExemplarNonBinary { exemplar, code, value } => {
                write!(f, "exemplar {exemplar} has non-binary value {value} for {code}")
            }
            Finding::NullWithPositives { exemplar } => write!(
                f,
                "exemplar {exemplar} sets the null theme alongside substantive themes"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("codebook parse error: {0}")]
    Parse(String),
    #[error("invalid codebook: {}", join_findings(.0))]
    Invalid(Vec<Finding>),
}

fn join_findings(findings: &[Finding]) -> String {
    findings.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; ")
}

impl Codebook {
    pub fn alphabet(&self) -> Vec<ThemeCode> {
        self.themes.iter().map(|t| t.code).collect()
    }

    pub fn len(&self) -> usize {
        self.themes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.themes.is_empty()
    }

    pub fn theme(&self, code: ThemeCode) -> Option<&ThemeDef> {
        self.themes.iter().find(|t| t.code == code)
    }

    pub fn null_code(&self) -> Option<ThemeCode> {
        self.themes.iter().find(|t| t.null_theme).map(|t| t.code)
    }

    /// All exemplars in theme order, tagged `<code>#<index>`.
    pub fn exemplars(&self) -> Vec<(String, &Exemplar)> {
        self.themes
            .iter()
            .flat_map(|t| {
                t.exemplars
                    .iter()
                    .enumerate()
                    .map(move |(i, e)| (format!("{}#{}", t.code, i), e))
            })
            .collect()
    }

    pub fn parse_toml(text: &str) -> Result<Self, CodebookError> {
        let cb: Codebook = toml::from_str(text).map_err(|e| CodebookError::Parse(e.to_string()))?;
        let errors: Vec<Finding> = validate_codebook(&cb)
            .into_iter()
            .filter(|f| !f.is_lint())
            .collect();
        if errors.is_empty() {
            Ok(cb)
        } else {
            Err(CodebookError::Invalid(errors))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("codebook serializes")
    }

    /// The shipped thirteen-theme xylazine codebook.
    pub fn shipped() -> Self {
        Self::parse_toml(DEFAULT_CODEBOOK).expect("shipped codebook is valid")
    }
}

/// Reads and validates a codebook file.
pub fn load_codebook(path: &Path) -> Result<Codebook, CodebookError> {
    let text = std::fs::read_to_string(path).map_err(|source| CodebookError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Codebook::parse_toml(&text)
}

/// Every invariant violation in `cb`, plus lint warnings.
pub fn validate_codebook(cb: &Codebook) -> Vec<Finding> {
    let mut findings = Vec::new();
    if cb.themes.is_empty() {
        findings.push(Finding::EmptyCodebook);
        return findings;
    }
    let mut seen = HashSet::new();
    for t in &cb.themes {
        if !seen.insert(t.code) {
            findings.push(Finding::DuplicateCode(t.code));
        }
        if t.definition.trim().is_empty() {
            findings.push(Finding::EmptyDefinition(t.code));
        }
        if t.name.trim().is_empty() {
            findings.push(Finding::EmptyName(t.code));
        }
    }
    let nulls: Vec<ThemeCode> = cb.themes.iter().filter(|t| t.null_theme).map(|t| t.code).collect();
    match nulls.len() {
        0 => findings.push(Finding::NoNullTheme),
        1 => {}
        _ => findings.push(Finding::MultipleNullThemes(nulls.clone())),
    }
    let alphabet = cb.alphabet();
    for (tag, ex) in cb.exemplars() {
        for &code in &alphabet {
            match ex.labels.get(&code) {
                None => findings.push(Finding::ExemplarMissingCode {
                    exemplar: tag.clone(),
                    code,
                }),
                Some(&v) if v > 1 => findings.push(Finding::ExemplarNonBinary {
                    exemplar: tag.clone(),
                    code,
                    value: v,
                }),
                _ => {}
            }
        }
        for code in ex.labels.keys().filter(|c| !alphabet.contains(c)) {
            findings.push(Finding::ExemplarUnknownCode {
                exemplar: tag.clone(),
                code: *code,
            });
        }
        if let [null] = nulls[..] {
            let null_set = ex.labels.get(&null) == Some(&1);
            let others = ex.labels.iter().any(|(c, v)| *c != null && *v == 1);
            if null_set && others {
                findings.push(Finding::NullWithPositives { exemplar: tag.clone() });
            }
        }
    }
    findings
}

/// Lint: vectors setting the null theme together with a substantive theme.
pub fn null_theme_conflict(v: &LabelVector, null: ThemeCode) -> bool {
    v.get(null) == Some(true) && v.positives().any(|c| c != null)
}

/// Expert labels keyed by post id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldLabelSet {
    pub corpus: String,
    pub labels: BTreeMap<String, LabelVector>,
    pub note: String,
}

impl GoldLabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("gold table: {0}")]
    Table(String),
    #[error("gold table header is missing column for code {0}")]
    MissingColumn(ThemeCode),
    #[error("gold table header has unexpected column {0:?}")]
    UnexpectedColumn(String),
    #[error("gold row {row}: unknown post id {id:?}")]
    UnknownPost { row: usize, id: String },
    #[error("gold row {row}: post id {id:?} labeled twice")]
    DuplicatePost { row: usize, id: String },
    #[error("gold row {row}: non-binary value {value:?} for code {code}")]
    NonBinary {
        row: usize,
        code: ThemeCode,
        value: String,
    },
}

/// Reads a wide gold table: `post_id` then one 0/1 column per code.
///
/// Columns may appear in any order but every code must have one. Lines
/// starting with `#` are comments; a leading `# note:` line becomes the
/// annotator note.
pub fn load_gold(path: &Path, corpus: &Corpus, cb: &Codebook) -> Result<GoldLabelSet, GoldError> {
    let text = std::fs::read_to_string(path).map_err(|source| GoldError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_gold(&text, corpus, cb)
}

pub fn parse_gold(text: &str, corpus: &Corpus, cb: &Codebook) -> Result<GoldLabelSet, GoldError> {
    let note = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix("# note:"))
        .map(str::trim)
        .collect::<Vec<_>>()
        .join("\n");
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| GoldError::Table(e.to_string()))?
        .clone();
    if header.get(0) != Some("post_id") {
        return Err(GoldError::Table("first column must be post_id".into()));
    }
    let alphabet = cb.alphabet();
    let mut columns = Vec::new();
    for name in header.iter().skip(1) {
        let code: ThemeCode = name
            .parse()
            .ok()
            .filter(|c| alphabet.contains(c))
            .ok_or_else(|| GoldError::UnexpectedColumn(name.to_string()))?;
        columns.push(code);
    }
    if let Some(&missing) = alphabet.iter().find(|c| !columns.contains(c)) {
        return Err(GoldError::MissingColumn(missing));
    }
    let ids = corpus.ids();
    let mut labels = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| GoldError::Table(e.to_string()))?;
        let id = record.get(0).unwrap_or_default().to_string();
        if !ids.contains(id.as_str()) {
            return Err(GoldError::UnknownPost { row, id });
        }
        let mut map = BTreeMap::new();
        for (cell, &code) in record.iter().skip(1).zip(&columns) {
            let value = match cell {
                "0" => false,
                "1" => true,
                other => {
                    return Err(GoldError::NonBinary {
                        row,
                        code,
                        value: other.to_string(),
                    })
                }
            };
            map.insert(code, value);
        }
        let vector = LabelVector::from_map(&alphabet, &map).map_err(|code| GoldError::NonBinary {
            row,
            code,
            value: String::new(),
        })?;
        if labels.insert(id.clone(), vector).is_some() {
            return Err(GoldError::DuplicatePost { row, id });
        }
    }
    Ok(GoldLabelSet {
        corpus: corpus.name().to_string(),
        labels,
        note,
    })
}

/// Writes labels as a wide table in canonical code order.
pub fn write_label_table(
    labels: &BTreeMap<String, LabelVector>,
    cb: &Codebook,
) -> String {
    let mut out = String::from("post_id");
    for c in cb.alphabet() {
        out.push(',');
        out.push(c.letter());
    }
    out.push('\n');
    for (id, v) in labels {
        out.push_str(id);
        for &(_, bit) in v.entries() {
            out.push_str(if bit { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}
