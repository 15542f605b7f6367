mod common;

use std::collections::BTreeSet;

use common::fixture;
use serde::Deserialize;
use thematic::corpus::{
    dedup_clean, keyword_filter, load_posts, parse_timestamp, temporal_split, KeywordSet, PostFormat,
};

#[derive(Deserialize)]
struct Expected {
    loaded: usize,
    irrelevant: Vec<String>,
    duplicate: Vec<String>,
    blank: Vec<String>,
    malformed: Vec<String>,
    split_at: String,
    before: usize,
    after: usize,
}

fn expected() -> Expected {
    toml::from_str(&std::fs::read_to_string(fixture("posts50_expected.toml")).unwrap()).unwrap()
}

fn ids(c: &thematic::corpus::Corpus) -> BTreeSet<String> {
    c.posts().iter().map(|p| p.id.clone()).collect()
}

#[test]
fn keyword_filter_matches_hand_checked_list() {
    let exp = expected();
    let all = load_posts(&fixture("posts50.jsonl"), PostFormat::PostLines).unwrap();
    assert_eq!(all.len(), exp.loaded);
    let kw = KeywordSet::shipped();
    let kept = keyword_filter(&all, &kw, kw.default_rule().unwrap()).unwrap();
    let dropped: BTreeSet<String> = ids(&all).difference(&ids(&kept)).cloned().collect();
    assert_eq!(dropped, exp.irrelevant.into_iter().collect());
}

#[test]
fn cleanup_removes_the_planted_posts() {
    let exp = expected();
    let all = load_posts(&fixture("posts50.jsonl"), PostFormat::PostLines).unwrap();
    let kw = KeywordSet::shipped();
    let kept = keyword_filter(&all, &kw, kw.default_rule().unwrap()).unwrap();
    let cleaned = dedup_clean(&kept);
    assert_eq!(cleaned.removed.duplicate, exp.duplicate.len());
    assert_eq!(cleaned.removed.blank, 0);
    assert_eq!(cleaned.removed.malformed, exp.malformed.len());
    let gone: BTreeSet<String> = ids(&kept).difference(&ids(&cleaned.corpus)).cloned().collect();
    let planted: BTreeSet<String> = [exp.duplicate.clone(), exp.malformed.clone()].concat().into_iter().collect();
    assert_eq!(gone, planted);
    assert_eq!(cleaned.corpus.len() + cleaned.removed.total(), kept.len());

    // Without the filter the blank posts reach cleanup too.
    let unfiltered = dedup_clean(&all);
    assert_eq!(unfiltered.removed.blank, exp.blank.len());
    let gone: BTreeSet<String> = ids(&all).difference(&ids(&unfiltered.corpus)).cloned().collect();
    let planted: BTreeSet<String> = [exp.duplicate, exp.blank, exp.malformed].concat().into_iter().collect();
    assert_eq!(gone, planted);

    let (before, after) = temporal_split(&cleaned.corpus, parse_timestamp(&exp.split_at).unwrap());
    assert_eq!((before.len(), after.len()), (exp.before, exp.after));
}

#[test]
fn table_format_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let all = load_posts(&fixture("posts50.jsonl"), PostFormat::PostLines).unwrap();
    let csv = dir.path().join("posts.csv");
    thematic::corpus::write_posts(&all, &csv, PostFormat::DelimitedTable).unwrap();
    let back = load_posts(&csv, PostFormat::from_extension(&csv)).unwrap();
    assert_eq!(back.posts(), all.posts());
}
