//! Prompt rendering for the three template generations and few-shot
//! exemplar selection.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codebook::{Codebook, Exemplar, LabelVector, ThemeCode};
use crate::corpus::Post;
use crate::rng::SeededRng;

const V1: &str = include_str!("../assets/templates/v1-per-theme.txt");
const V2: &str = include_str!("../assets/templates/v2-multi-question.txt");
const V3: &str = include_str!("../assets/templates/v3-single-line.txt");

/// Default character budget for exemplar post texts.
pub const DEFAULT_EXEMPLAR_BUDGET: usize = 1500;
const TRUNCATION_MARKER: &str = " [truncated]";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("exemplar index {index} out of range ({available} available)")]
    ExemplarIndex { index: usize, available: usize },
    #[error("policy asks for {requested} exemplars but the codebook has {available}")]
    InsufficientExemplars { requested: usize, available: usize },
    #[error("shot count {shots} does not match {indices} explicit exemplar indices")]
    SelectionLength { shots: usize, indices: usize },
    #[error("post {0:?} has an empty body")]
    EmptyBody(String),
    #[error("template {version}: {message}")]
    Template {
        version: TemplateVersion,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TemplateVersion {
    /// One prompt per theme, answer `A=[answer]`.
    #[serde(rename = "v1-per-theme")]
    V1PerTheme,
    /// All themes as numbered questions in one prompt.
    #[serde(rename = "v2-multi-question")]
    V2MultiQuestion,
    /// Category list with a strict single-line output directive.
    #[default]
    #[serde(rename = "v3-single-line")]
    V3SingleLine,
}

impl TemplateVersion {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateVersion::V1PerTheme => "v1-per-theme",
            TemplateVersion::V2MultiQuestion => "v2-multi-question",
            TemplateVersion::V3SingleLine => "v3-single-line",
        }
    }

    fn placeholders(self) -> (&'static [&'static str], &'static [&'static str]) {
        // (required, optional)
        match self {
            TemplateVersion::V1PerTheme => (
                &["post", "code"],
                &["theme_name", "theme_definition", "examples"],
            ),
            TemplateVersion::V2MultiQuestion => (&["post", "questions"], &["examples", "format_line"]),
            TemplateVersion::V3SingleLine => (
                &["post", "categories", "format_line"],
                &["examples", "n_topics", "first_code", "second_code", "last_code"],
            ),
        }
    }
}

impl fmt::Display for TemplateVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "v1-per-theme" | "v1" => Ok(TemplateVersion::V1PerTheme),
            "v2-multi-question" | "v2" => Ok(TemplateVersion::V2MultiQuestion),
            "v3-single-line" | "v3" => Ok(TemplateVersion::V3SingleLine),
            other => Err(format!("unknown template version {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

/// A versioned scaffold with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    version: TemplateVersion,
    scaffold: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn new(version: TemplateVersion, scaffold: impl Into<String>) -> Result<Self, PromptError> {
        let scaffold = scaffold.into();
        let pieces = split_pieces(&scaffold);
        let (required, optional) = version.placeholders();
        let err = |message: String| PromptError::Template { version, message };
        for slot in pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(s.as_str()),
            Piece::Text(_) => None,
        }) {
            if !required.contains(&slot) && !optional.contains(&slot) {
                return Err(err(format!("unknown placeholder {{{{{slot}}}}}")));
            }
        }
        for req in required {
            let count = pieces.iter().filter(|p| **p == Piece::Slot(req.to_string())).count();
            if count != 1 {
                return Err(err(format!("placeholder {{{{{req}}}}} must appear exactly once")));
            }
        }
        Ok(Self {
            version,
            scaffold,
            pieces,
        })
    }

    /// The scaffold shipped for `version`.
    pub fn shipped(version: TemplateVersion) -> Self {
        let text = match version {
            TemplateVersion::V1PerTheme => V1,
            TemplateVersion::V2MultiQuestion => V2,
            TemplateVersion::V3SingleLine => V3,
        };
        Self::new(version, text).expect("shipped template is valid")
    }

    pub fn load(version: TemplateVersion, path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::new(version, text)
    }

    pub fn version(&self) -> TemplateVersion {
        self.version
    }

    pub fn scaffold(&self) -> &str {
        &self.scaffold
    }

    /// Hex SHA-256 of the scaffold text.
    pub fn scaffold_hash(&self) -> String {
        hex::encode(Sha256::digest(self.scaffold.as_bytes()))
    }

    // Single pass: substituted values are never rescanned for placeholders.
    fn fill(&self, values: &BTreeMap<&str, String>) -> String {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(values.get(s.as_str()).map_or("", String::as_str)),
            }
        }
        // Collapse blank-line runs left by empty optional slots.
        let mut text = out.trim_end().to_string();
        while text.contains("\n\n\n") {
            text = text.replace("\n\n\n", "\n\n");
        }
        text.push('\n');
        text
    }
}

fn split_pieces(scaffold: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut rest = scaffold;
    while let Some(open) = rest.find("{{") {
        let Some(close) = rest[open + 2..].find("}}") else { break };
        let name = &rest[open + 2..open + 2 + close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            pieces.push(Piece::Text(rest[..open + 2].to_string()));
            rest = &rest[open + 2..];
            continue;
        }
        if open > 0 {
            pieces.push(Piece::Text(rest[..open].to_string()));
        }
        pieces.push(Piece::Slot(name.to_string()));
        rest = &rest[open + 2 + close + 2..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest.to_string()));
    }
    pieces
}

/// How many exemplars to embed, and which.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShotPolicy {
    pub shots: usize,
    /// Explicit indices into [`Codebook::exemplars`]; seeded choice when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
}

impl ShotPolicy {
    pub fn zero_shot() -> Self {
        Self::default()
    }

    pub fn explicit(indices: Vec<usize>) -> Self {
        Self {
            shots: indices.len(),
            indices: Some(indices),
        }
    }

    pub fn seeded(shots: usize) -> Self {
        Self { shots, indices: None }
    }
}

/// Exemplar chosen for a prompt, with its validated label vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedExemplar {
    pub tag: String,
    pub text: String,
    pub labels: LabelVector,
}

/// Picks the exemplars for `policy`, in rendering order.
pub fn select_exemplars(
    cb: &Codebook,
    policy: &ShotPolicy,
    seed: u64,
) -> Result<Vec<SelectedExemplar>, PromptError> {
    let pool: Vec<(String, &Exemplar)> = cb.exemplars();
    let available = pool.len();
    let chosen: Vec<usize> = match &policy.indices {
        Some(indices) => {
            if indices.len() != policy.shots {
                return Err(PromptError::SelectionLength {
                    shots: policy.shots,
                    indices: indices.len(),
                });
            }
            if let Some(&index) = indices.iter().find(|&&i| i >= available) {
                return Err(PromptError::ExemplarIndex { index, available });
            }
            indices.clone()
        }
        None => {
            if policy.shots > available {
                return Err(PromptError::InsufficientExemplars {
                    requested: policy.shots,
                    available,
                });
            }
            SeededRng::new(seed).choose_indices(available, policy.shots)
        }
    };
    let alphabet = cb.alphabet();
    chosen
        .into_iter()
        .map(|i| {
            let (tag, ex) = &pool[i];
            let labels = ex.label_vector(&alphabet).ok_or_else(|| PromptError::Template {
                version: TemplateVersion::V3SingleLine,
                message: format!("exemplar {tag} has an incomplete label vector"),
            })?;
            Ok(SelectedExemplar {
                tag: tag.clone(),
                text: ex.text.clone(),
                labels,
            })
        })
        .collect()
}

/// `A=0, B=1, ...` in the vector's code order.
pub fn canonical_line(v: &LabelVector) -> String {
    v.entries()
        .iter()
        .map(|(c, bit)| format!("{c}={}", u8::from(*bit)))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Placeholder form of the output line, `A=_, B=_, ...`.
pub fn format_line(alphabet: &[ThemeCode]) -> String {
    alphabet.iter().map(|c| format!("{c}=_")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptTarget {
    Theme(ThemeCode),
    All(Vec<ThemeCode>),
}

impl PromptTarget {
    pub fn alphabet(&self) -> Vec<ThemeCode> {
        match self {
            PromptTarget::Theme(c) => vec![*c],
            PromptTarget::All(codes) => codes.clone(),
        }
    }

    /// One-line format reminder appended when a response must be re-asked.
    pub fn reminder(&self) -> String {
        match self {
            PromptTarget::Theme(c) => {
                format!("Respond with only \"{c}=[answer]\" where answer is 1 or 0.")
            }
            PromptTarget::All(codes) => format!(
                "Respond with only the classification line, exactly: {}",
                format_line(codes)
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub version: TemplateVersion,
    pub shots: usize,
    pub target: PromptTarget,
    pub post_id: String,
    /// The post text as inserted into the prompt.
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Prepend the post title to the body.
    #[serde(default)]
    pub include_title: bool,
    #[serde(default = "default_budget")]
    pub exemplar_char_budget: usize,
}

fn default_budget() -> usize {
    DEFAULT_EXEMPLAR_BUDGET
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            include_title: false,
            exemplar_char_budget: DEFAULT_EXEMPLAR_BUDGET,
        }
    }
}

fn truncate_chars(text: &str, budget: usize) -> String {
    match text.char_indices().nth(budget) {
        Some((cut, _)) => format!("{}{TRUNCATION_MARKER}", &text[..cut]),
        None => text.to_string(),
    }
}

/// Renders prompts for posts with a fixed codebook, template and exemplar set.
#[derive(Debug, Clone)]
pub struct Prompter<'a> {
    cb: &'a Codebook,
    template: &'a PromptTemplate,
    exemplars: Vec<SelectedExemplar>,
    options: RenderOptions,
}

impl<'a> Prompter<'a> {
    pub fn new(
        cb: &'a Codebook,
        template: &'a PromptTemplate,
        policy: &ShotPolicy,
        exemplar_seed: u64,
        options: RenderOptions,
    ) -> Result<Self, PromptError> {
        Ok(Self {
            cb,
            template,
            exemplars: select_exemplars(cb, policy, exemplar_seed)?,
            options,
        })
    }

    pub fn exemplars(&self) -> &[SelectedExemplar] {
        &self.exemplars
    }

    fn examples_block(&self, line: impl Fn(&LabelVector) -> String) -> String {
        if self.exemplars.is_empty() {
            return String::new();
        }
        let mut out = String::from("Examples:");
        for (i, ex) in self.exemplars.iter().enumerate() {
            let text = truncate_chars(&ex.text, self.options.exemplar_char_budget);
            out.push_str(&format!(
                "\n\n{}. Post:\n\n\"{}\"\n\nClassification:\n\n{}",
                i + 1,
                text,
                line(&ex.labels)
            ));
        }
        out
    }

    /// One prompt for v2/v3; one prompt per code (in canonical order) for v1.
    pub fn render(&self, post: &Post) -> Result<Vec<RenderedPrompt>, PromptError> {
        if post.body.trim().is_empty() {
            return Err(PromptError::EmptyBody(post.id.clone()));
        }
        let payload = if self.options.include_title && !post.title.trim().is_empty() {
            format!("{}\n\n{}", post.title.trim(), post.body)
        } else {
            post.body.clone()
        };
        let alphabet = self.cb.alphabet();
        let shots = self.exemplars.len();
        let version = self.template.version();
        let make = |text: String, target: PromptTarget| RenderedPrompt {
            text,
            version,
            shots,
            target,
            post_id: post.id.clone(),
            payload: payload.clone(),
        };
        let mut values: BTreeMap<&str, String> = BTreeMap::new();
        values.insert("post", payload.clone());
        values.insert("format_line", format_line(&alphabet));
        match version {
            TemplateVersion::V3SingleLine => {
                let categories = self
                    .cb
                    .themes
                    .iter()
                    .map(|t| format!("{}. {}\n\n{}", t.code, t.name, t.definition))
                    .collect::<Vec<_>>()
                    .join("\n\n");
                let code_at = |i: usize| alphabet.get(i).or(alphabet.last()).map(|c| c.to_string()).unwrap_or_default();
                values.insert("categories", categories);
                values.insert("n_topics", alphabet.len().to_string());
                values.insert("first_code", code_at(0));
                values.insert("second_code", code_at(1));
                values.insert("last_code", code_at(alphabet.len().saturating_sub(1)));
                values.insert("examples", self.examples_block(canonical_line));
                Ok(vec![make(self.template.fill(&values), PromptTarget::All(alphabet))])
            }
            TemplateVersion::V2MultiQuestion => {
                let questions = self
                    .cb
                    .themes
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        format!("{}. {}: {} Format: \"{}=[answer]\".", i + 1, t.name, t.definition, t.code)
                    })
                    .collect::<Vec<_>>()
                    .join("\n\n");
                values.insert("questions", questions);
                values.insert("examples", self.examples_block(canonical_line));
                Ok(vec![make(self.template.fill(&values), PromptTarget::All(alphabet))])
            }
            TemplateVersion::V1PerTheme => Ok(self
                .cb
                .themes
                .iter()
                .map(|t| {
                    let code = t.code;
                    let mut values = values.clone();
                    values.insert("code", code.to_string());
                    values.insert("theme_name", t.name.clone());
                    values.insert("theme_definition", t.definition.clone());
                    values.insert(
                        "examples",
                        self.examples_block(|v| format!("{code}={}", u8::from(v.get(code).unwrap_or(false)))),
                    );
                    make(self.template.fill(&values), PromptTarget::Theme(code))
                })
                .collect()),
        }
    }
}

/// Renders `post` under `policy` with a one-off [`Prompter`].
pub fn render_prompt(
    post: &Post,
    cb: &Codebook,
    template: &PromptTemplate,
    policy: &ShotPolicy,
    exemplar_seed: u64,
    options: &RenderOptions,
) -> Result<Vec<RenderedPrompt>, PromptError> {
    Prompter::new(cb, template, policy, exemplar_seed, options.clone())?.render(post)
}
