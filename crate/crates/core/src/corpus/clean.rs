use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Corpus, Post};

/// Posts removed by [`dedup_clean`], by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalCounts {
    pub duplicate: usize,
    pub blank: usize,
    pub malformed: usize,
}

impl RemovalCounts {
    pub fn total(&self) -> usize {
        self.duplicate + self.blank + self.malformed
    }
}

#[derive(Debug, Clone)]
pub struct Cleaned {
    pub corpus: Corpus,
    pub removed: RemovalCounts,
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_url(token: &str) -> bool {
    let t = token.trim_start_matches(['(', '<', '[']);
    ["http://", "https://", "www."]
        .iter()
        .any(|p| t.len() >= p.len() && t[..p.len()].eq_ignore_ascii_case(p))
}

// Text left after dropping URLs, `(url)` link targets, HTML tags and entities.
fn strip_markup(body: &str) -> String {
    let mut out = String::new();
    for token in body.split_whitespace().filter(|t| !is_url(t)) {
        let mut rest = token.to_string();
        // Markdown link target: keep "[label]" drop "(target)".
        while let Some(start) = rest.find("](") {
            let end = rest[start..].find(')').map_or(rest.len(), |e| start + e + 1);
            rest.replace_range(start + 1..end, "");
        }
        let mut depth_tag = false;
        let mut chars = rest.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '<' => depth_tag = true,
                '>' if depth_tag => depth_tag = false,
                '&' if !depth_tag => {
                    let entity: String = chars
                        .clone()
                        .take_while(|c| c.is_ascii_alphanumeric() || *c == '#')
                        .collect();
                    let closes = chars.clone().nth(entity.len()) == Some(';');
                    if !entity.is_empty() && closes {
                        for _ in 0..=entity.len() {
                            chars.next();
                        }
                    } else {
                        out.push('&');
                    }
                }
                c if !depth_tag => out.push(c),
                _ => {}
            }
        }
        out.push(' ');
    }
    out
}

/// Body made of more than 90% non-alphanumeric characters (whitespace
/// ignored), or nothing but URLs and markup.
pub fn is_poorly_formatted(body: &str) -> bool {
    let visible: Vec<char> = body.chars().filter(|c| !c.is_whitespace()).collect();
    if visible.is_empty() {
        return false;
    }
    let alnum = visible.iter().filter(|c| c.is_alphanumeric()).count();
    if (alnum as f64) < 0.1 * visible.len() as f64 {
        return true;
    }
    !strip_markup(body).chars().any(char::is_alphanumeric)
}

fn dedup_key(post: &Post) -> (String, String) {
    (
        normalize_text(&post.title).to_lowercase(),
        normalize_text(&post.body).to_lowercase(),
    )
}

/// Drops blank, poorly formatted and duplicate posts.
///
/// Blank and malformed checks run first; duplicates of the normalized
/// `(title, body)` pair are then removed keeping the earliest post. Removal
/// counts plus the surviving size always equal the input size.
pub fn dedup_clean(corpus: &Corpus) -> Cleaned {
    let mut removed = RemovalCounts::default();
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    // Corpus order is (created_at, id), so the first occurrence is the earliest.
    for post in corpus.posts() {
        let body = normalize_text(&post.body);
        if normalize_text(&post.title).is_empty() && body.is_empty() {
            removed.blank += 1;
        } else if is_poorly_formatted(&body) {
            removed.malformed += 1;
        } else if !seen.insert(dedup_key(post)) {
            removed.duplicate += 1;
        } else {
            kept.push(post.clone());
        }
    }
    let step = format!(
        "dedup_clean(duplicate={}, blank={}, malformed={})",
        removed.duplicate, removed.blank, removed.malformed
    );
    Cleaned {
        corpus: corpus.derive(kept, &step),
        removed,
    }
}
