use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Post};

pub(crate) const DEFAULT_KEYWORDS: &str = include_str!("../../assets/keywords.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Term must not be flanked by alphanumeric characters.
    #[default]
    WordBoundary,
    Substring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub text: String,
    #[serde(default)]
    pub mode: MatchMode,
    #[serde(default)]
    pub case_sensitive: bool,
}

impl Term {
    /// Whether the term occurs in `text`.
    pub fn matches_text(&self, text: &str) -> bool {
        self.matches(text, &text.to_lowercase())
    }

    pub(crate) fn matches(&self, raw: &str, folded: &str) -> bool {
        if self.case_sensitive {
            find_term(raw, &self.text, self.mode)
        } else {
            find_term(folded, &self.text.to_lowercase(), self.mode)
        }
    }
}

fn find_term(hay: &str, needle: &str, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Substring => hay.contains(needle),
        MatchMode::WordBoundary => hay.match_indices(needle).any(|(at, m)| {
            let before = hay[..at].chars().next_back();
            let after = hay[at + m.len()..].chars().next();
            !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
        }),
    }
}

// Terms may be written as bare strings (word-boundary, case-insensitive).
#[derive(Deserialize)]
#[serde(untagged)]
pub(crate) enum TermSpec {
    Bare(String),
    Full(Term),
}

impl From<TermSpec> for Term {
    fn from(spec: TermSpec) -> Self {
        match spec {
            TermSpec::Bare(text) => Term {
                text,
                mode: MatchMode::WordBoundary,
                case_sensitive: false,
            },
            TermSpec::Full(term) => term,
        }
    }
}

#[derive(Deserialize)]
struct GroupSpec {
    name: String,
    terms: Vec<TermSpec>,
}

#[derive(Deserialize)]
struct KeywordFile {
    #[serde(default)]
    default_rule: Option<String>,
    groups: Vec<GroupSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeywordGroup {
    pub name: String,
    pub terms: Vec<Term>,
}

/// Named groups of match terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordSet {
    groups: Vec<KeywordGroup>,
    default_rule: Option<String>,
}

impl KeywordSet {
    pub fn new(groups: Vec<KeywordGroup>) -> Result<Self, CorpusError> {
        let mut names = HashSet::new();
        for g in &groups {
            if g.name.is_empty() || !g.name.chars().all(is_name_char) {
                return Err(CorpusError::Keywords(format!("invalid group name {:?}", g.name)));
            }
            if !names.insert(g.name.as_str()) {
                return Err(CorpusError::Keywords(format!("duplicate group {:?}", g.name)));
            }
            if g.terms.iter().any(|t| t.text.trim().is_empty()) {
                return Err(CorpusError::Keywords(format!("empty term in group {:?}", g.name)));
            }
        }
        Ok(Self {
            groups,
            default_rule: None,
        })
    }

    pub fn parse_toml(text: &str) -> Result<Self, CorpusError> {
        let file: KeywordFile =
            toml::from_str(text).map_err(|e| CorpusError::Keywords(e.to_string()))?;
        let groups = file
            .groups
            .into_iter()
            .map(|g| KeywordGroup {
                name: g.name,
                terms: g.terms.into_iter().map(Term::from).collect(),
            })
            .collect();
        let mut set = Self::new(groups)?;
        set.default_rule = file.default_rule;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_toml(&text)
    }

    /// The shipped xylazine / wound keyword set.
    pub fn shipped() -> Self {
        Self::parse_toml(DEFAULT_KEYWORDS).expect("shipped keyword file is valid")
    }

    pub fn groups(&self) -> &[KeywordGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&KeywordGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Rule declared in the keyword file, if any.
    pub fn default_rule(&self) -> Option<&str> {
        self.default_rule.as_deref()
    }

    /// Names of the groups with at least one term present in the post.
    pub fn matching_groups(&self, post: &Post) -> HashSet<&str> {
        let raw = post.full_text();
        let folded = raw.to_lowercase();
        self.groups
            .iter()
            .filter(|g| g.terms.iter().any(|t| t.matches(&raw, &folded)))
            .map(|g| g.name.as_str())
            .collect()
    }
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Expr {
    Group(String),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    fn eval(&self, hits: &HashSet<&str>) -> bool {
        match self {
            Expr::Group(g) => hits.contains(g.as_str()),
            Expr::And(a, b) => a.eval(hits) && b.eval(hits),
            Expr::Or(a, b) => a.eval(hits) || b.eval(hits),
        }
    }
}

/// A boolean expression over group names: `AND`, `OR` and parentheses,
/// `AND` binding tighter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    source: String,
    expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Name(String),
    And,
    Or,
    Open,
    Close,
}

fn tokenize(src: &str) -> Result<Vec<Token>, CorpusError> {
    let mut tokens = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                tokens.push(Token::Open);
            }
            ')' => {
                chars.next();
                tokens.push(Token::Close);
            }
            c if is_name_char(c) => {
                let mut word = String::new();
                while let Some(&c) = chars.peek().filter(|c| is_name_char(**c)) {
                    word.push(c);
                    chars.next();
                }
                tokens.push(match word.as_str() {
                    "AND" | "and" => Token::And,
                    "OR" | "or" => Token::Or,
                    _ => Token::Name(word),
                });
            }
            other => {
                return Err(CorpusError::RuleSyntax(format!("unexpected character {other:?}")))
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    keywords: &'a KeywordSet,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn or_expr(&mut self) -> Result<Expr, CorpusError> {
        let mut lhs = self.and_expr()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and_expr()?));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, CorpusError> {
        let mut lhs = self.atom()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            lhs = Expr::And(Box::new(lhs), Box::new(self.atom()?));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Expr, CorpusError> {
        let tok = self.peek().cloned();
        self.pos += 1;
        match tok {
            Some(Token::Name(name)) => {
                if self.keywords.group(&name).is_none() {
                    return Err(CorpusError::UnknownGroup(name));
                }
                Ok(Expr::Group(name))
            }
            Some(Token::Open) => {
                let inner = self.or_expr()?;
                if self.peek() != Some(&Token::Close) {
                    return Err(CorpusError::RuleSyntax("missing ')'".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(t) => Err(CorpusError::RuleSyntax(format!("unexpected {t:?}"))),
            None => Err(CorpusError::RuleSyntax("unexpected end of rule".into())),
        }
    }
}

impl Rule {
    pub fn parse(src: &str, keywords: &KeywordSet) -> Result<Self, CorpusError> {
        let tokens = tokenize(src)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            keywords,
        };
        let expr = parser.or_expr()?;
        if parser.pos != tokens.len() {
            return Err(CorpusError::RuleSyntax(format!(
                "trailing input after token {}",
                parser.pos
            )));
        }
        Ok(Self {
            source: src.trim().to_string(),
            expr,
        })
    }

    pub fn matches(&self, keywords: &KeywordSet, post: &Post) -> bool {
        self.expr.eval(&keywords.matching_groups(post))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// Keeps the posts whose title plus body satisfy `rule`.
pub fn keyword_filter(
    corpus: &Corpus,
    keywords: &KeywordSet,
    rule: &str,
) -> Result<Corpus, CorpusError> {
    let rule = Rule::parse(rule, keywords)?;
    let kept = corpus
        .posts()
        .iter()
        .filter(|p| rule.matches(keywords, p))
        .cloned()
        .collect();
    Ok(corpus.derive(kept, &format!("keyword_filter({rule})")))
}
