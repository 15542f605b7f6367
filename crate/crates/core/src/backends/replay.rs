use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, Completer, Request};

/// Canned responses: key → texts for attempts 1, 2, ...
///
/// Keys are looked up in order: the request fingerprint, then `post:<id>`,
/// then `*`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplayScript {
    entries: BTreeMap<String, Vec<String>>,
}

impl ReplayScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, attempts: Vec<String>) -> &mut Self {
        self.entries.insert(key.into(), attempts);
        self
    }

    pub fn for_post(&mut self, post_id: &str, attempts: Vec<String>) -> &mut Self {
        self.insert(format!("post:{post_id}"), attempts)
    }

    pub fn fallback(&mut self, attempts: Vec<String>) -> &mut Self {
        self.insert("*", attempts)
    }

    pub fn parse_json(text: &str) -> Result<Self, BackendError> {
        serde_json::from_str(text).map_err(|e| BackendError::Config(format!("replay script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::io(path, e))?;
        Self::parse_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let text = serde_json::to_string_pretty(self).expect("script serializes");
        std::fs::write(path, text + "\n").map_err(|e| BackendError::io(path, e))
    }

    pub fn lookup(&self, fingerprint: &str, post_id: &str, attempt: u32) -> Option<&str> {
        let script = self
            .entries
            .get(fingerprint)
            .or_else(|| self.entries.get(&format!("post:{post_id}")))
            .or_else(|| self.entries.get("*"))?;
        let index = usize::try_from(attempt).ok()?.checked_sub(1)?;
        script.get(index).map(String::as_str)
    }
}

impl Completer for ReplayScript {
    fn respond(&self, req: &Request<'_>) -> Result<String, BackendError> {
        self.lookup(req.fingerprint, &req.prompt.post_id, req.attempt)
            .map(str::to_string)
            .ok_or_else(|| BackendError::ReplayMissing {
                fingerprint: req.fingerprint.to_string(),
                post_id: req.prompt.post_id.clone(),
                attempt: req.attempt,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::test_support::v3_prompt;
    use crate::backends::{cache_key, BackendConfig, Client, ClientOptions};

    #[test]
    fn canned_text_by_fingerprint() {
        let cfg = BackendConfig::replay("m", "unused");
        let p = v3_prompt("p7", "some text");
        let mut script = ReplayScript::new();
        script.insert(cache_key(&cfg, &p), vec!["A=1".into()]);
        script.fallback(vec!["fallback".into()]);
        let client = Client::with_backend(cfg, Box::new(script), ClientOptions::default()).unwrap();
        let r = client.complete(&p).unwrap();
        assert_eq!((r.raw_text.as_str(), r.attempts, r.cache_hit), ("A=1", 1, false));
        let other = v3_prompt("p8", "other");
        assert_eq!(client.complete(&other).unwrap().raw_text, "fallback");
    }

    #[test]
    fn lookup_order_and_exhaustion() {
        let mut s = ReplayScript::new();
        s.for_post("p1", vec!["one".into(), "two".into()]);
        assert_eq!(s.lookup("fp", "p1", 2), Some("two"));
        assert_eq!(s.lookup("fp", "p1", 3), None);
        assert_eq!(s.lookup("fp", "p1", 0), None);
        assert_eq!(s.lookup("fp", "p2", 1), None);
        let back = ReplayScript::parse_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
