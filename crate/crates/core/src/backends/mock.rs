use std::path::Path;

use serde::Deserialize;

use super::{BackendError, Completer, Request};
use crate::codebook::{LabelVector, ThemeCode};
use crate::corpus::{Term, TermSpec};
use crate::prompting::{canonical_line, PromptTarget};

pub(crate) const SHIPPED_RULES: &str = include_str!("../../assets/mock_rules.toml");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRule {
    pub code: ThemeCode,
    pub terms: Vec<Term>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    code: ThemeCode,
    terms: Vec<TermSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NullSpec {
    code: ThemeCode,
    unless: Vec<TermSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    #[serde(default)]
    rules: Vec<RuleSpec>,
    null: Option<NullSpec>,
}

/// Deterministic keyword classifier answering in the requested line format.
/// The reply depends only on the post payload and the prompt target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRules {
    rules: Vec<MockRule>,
    null: Option<MockRule>,
}

impl MockRules {
    pub fn parse_toml(text: &str) -> Result<Self, BackendError> {
        let file: RulesFile = toml::from_str(text).map_err(|e| BackendError::Rules(e.to_string()))?;
        let convert = |terms: Vec<TermSpec>| terms.into_iter().map(Term::from).collect::<Vec<_>>();
        Ok(Self {
            rules: file
                .rules
                .into_iter()
                .map(|r| MockRule {
                    code: r.code,
                    terms: convert(r.terms),
                })
                .collect(),
            null: file.null.map(|n| MockRule {
                code: n.code,
                terms: convert(n.unless),
            }),
        })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::io(path, e))?;
        Self::parse_toml(&text)
    }

    pub fn shipped() -> Self {
        Self::parse_toml(SHIPPED_RULES).expect("shipped mock rules are valid")
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    /// Labels for `text` over `alphabet`; codes without rules stay 0.
    pub fn classify(&self, text: &str, alphabet: &[ThemeCode]) -> LabelVector {
        let folded = text.to_lowercase();
        let hit = |terms: &[Term]| terms.iter().any(|t| t.matches(text, &folded));
        let mut v = LabelVector::zeros(alphabet);
        for rule in &self.rules {
            if hit(&rule.terms) {
                v.set(rule.code, true);
            }
        }
        if let Some(null) = &self.null {
            if !hit(&null.terms) {
                v.set(null.code, true);
            }
        }
        v
    }

    pub fn reply(&self, payload: &str, target: &PromptTarget) -> String {
        let v = self.classify(payload, &target.alphabet());
        match target {
            PromptTarget::Theme(code) => format!("{code}={}", u8::from(v.get(*code).unwrap_or(false))),
            PromptTarget::All(_) => canonical_line(&v),
        }
    }
}

impl Completer for MockRules {
    fn respond(&self, req: &Request<'_>) -> Result<String, BackendError> {
        Ok(self.reply(&req.prompt.payload, &req.prompt.target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::test_support::v3_prompt;
    use crate::backends::{complete, BackendConfig, BackendKind};
    use crate::codebook::{alphabet, Codebook};
    use crate::parsing::{parse_single_line, ParseMode};

    #[test]
    fn methadone_sets_moud() {
        let cb = Codebook::shipped();
        let p = v3_prompt("p1", "Switched to methadone after the tranq wounds got bad.");
        let r = complete(&BackendConfig::mock("mock"), &p).unwrap();
        assert_eq!((r.attempts, r.kind, r.cache_hit), (1, BackendKind::MockRules, false));
        let v = parse_single_line(&r.raw_text, &cb, ParseMode::Strict).unwrap();
        let i = ThemeCode::new('I').unwrap();
        assert_eq!(v.get(i), Some(true));
        assert_eq!(v.get(ThemeCode::new('X').unwrap()), Some(false));
    }

    #[test]
    fn null_code_without_xylazine_terms() {
        let m = MockRules::shipped();
        let a = alphabet("ABCDEFGHIJKLX");
        let v = m.classify("Kratom helped with my back pain.", &a);
        assert_eq!(v.positives().collect::<Vec<_>>(), alphabet("X"));
        let v = m.classify("People call it the zombie drug in Philly", &a);
        assert_eq!(v.positives().collect::<Vec<_>>(), alphabet("ELX"));
        let v = m.classify("Tranq is everywhere in Kensington", &a);
        assert_eq!(v.positives().collect::<Vec<_>>(), alphabet("L"));
    }

    #[test]
    fn per_theme_reply() {
        let m = MockRules::shipped();
        let i = ThemeCode::new('I').unwrap();
        assert_eq!(m.reply("on subs now", &PromptTarget::Theme(i)), "I=1");
        assert_eq!(m.reply("nothing here", &PromptTarget::Theme(i)), "I=0");
    }

    #[test]
    fn rejects_unknown_fields() {
        assert!(MockRules::parse_toml("[[rules]]\ncode = \"A\"\nterms = []\nextra = 1\n").is_err());
        assert!(MockRules::parse_toml("[[rules]]\ncode = \"a\"\nterms = []\n").is_err());
    }
}
