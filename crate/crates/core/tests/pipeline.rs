mod common;

use std::path::Path;

use common::{config, fixture, read, MOCK};
use thematic::backends::ReplayScript;
use thematic::codebook::{load_gold, Codebook};
use thematic::pipeline::{
    cmd_classify, cmd_distribute, cmd_evaluate, cmd_evaluate_metrics, cmd_ingest, cmd_rank, derive_corpus,
    ClassifyOptions, EvalOptions, PipelineError, ResultsStore, FINAL_FILE, PARTIAL_FILE,
};
use thematic::prompting::canonical_line;

fn replay_backend(script: &Path, extra: &str) -> String {
    format!("[[backend]]\nkind = \"replay\"\nmodel = \"scripted\"\nreplay = {:?}\n{extra}", script.display().to_string())
}

/// Replay script answering every post with its gold labels, except the
/// listed posts which only ever get prose back.
fn gold_echo(dir: &Path, broken: &[&str]) -> std::path::PathBuf {
    let cfg = config(dir, MOCK);
    let corpus = derive_corpus(&cfg).unwrap().cleaned;
    let gold = load_gold(&fixture("gold50.csv"), &corpus, &Codebook::shipped()).unwrap();
    let mut script = ReplayScript::new();
    for (id, v) in &gold.labels {
        let reply = if broken.contains(&id.as_str()) {
            "I'm not able to label this post.".to_string()
        } else {
            canonical_line(v)
        };
        script.for_post(id, vec![reply.clone(), reply.clone(), reply]);
    }
    let path = dir.join("script.json");
    script.save(&path).unwrap();
    path
}

#[test]
fn ingest_writes_stage_files_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), MOCK);
    cfg.corpus.split_at = Some("2024-01-01".into());
    let out = cmd_ingest(&cfg).unwrap();
    assert_eq!(out.summary.loaded, 50);
    assert_eq!(out.summary.filtered, 43);
    assert_eq!(out.summary.cleaned, 39);
    let split = out.split.as_ref().unwrap();
    assert_eq!((split.0.len(), split.1.len()), (16, 23));
    for f in ["filtered", "cleaned", "before", "after", "working"] {
        assert!(dir.path().join("corpus").join(format!("{f}.jsonl")).exists(), "{f}");
    }
    let text = String::from_utf8(read(&dir.path().join("corpus/ingest_summary.txt"))).unwrap();
    assert!(text.contains("loaded=50, filtered=43, cleaned=39"), "{text}");
}

#[test]
fn oversized_sample_is_a_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), MOCK);
    cfg.corpus.sample_n = Some(100);
    let err = cmd_ingest(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("sample"), "{err}");
}

#[test]
fn mock_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let s = cmd_classify(&config(d, MOCK), &ClassifyOptions { offline: true, ..Default::default() }).unwrap();
        assert!(s.complete);
        assert_eq!(s.per_label["FX_2shot_mock"].classified, 39);
    }
    assert_eq!(read(&a.path().join(FINAL_FILE)), read(&b.path().join(FINAL_FILE)));
    assert!(!a.path().join(PARTIAL_FILE).exists());
}

#[test]
fn rerun_without_resume_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), MOCK);
    cmd_classify(&cfg, &ClassifyOptions::default()).unwrap();
    let err = cmd_classify(&cfg, &ClassifyOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
}

#[test]
fn interrupted_run_resumes_to_the_same_store() {
    let base = tempfile::tempdir().unwrap();
    cmd_classify(&config(base.path(), MOCK), &ClassifyOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), MOCK);
    let first = cmd_classify(&cfg, &ClassifyOptions { stop_after: Some(12), ..Default::default() }).unwrap();
    assert!(!first.complete);
    assert!(dir.path().join(PARTIAL_FILE).exists());
    assert!(!dir.path().join(FINAL_FILE).exists());
    assert!(ResultsStore::open(dir.path()).is_err());

    let second = cmd_classify(&cfg, &ClassifyOptions { resume: true, ..Default::default() }).unwrap();
    assert!(second.complete);
    assert_eq!(second.resumed, first.written);
    assert_eq!(first.written + second.written, 39);
    assert_eq!(read(&dir.path().join(FINAL_FILE)), read(&base.path().join(FINAL_FILE)));
}

#[test]
fn gold_echo_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let script = gold_echo(dir.path(), &[]);
    let cfg = config(dir.path(), &replay_backend(&script, ""));
    cmd_classify(&cfg, &ClassifyOptions { offline: true, ..Default::default() }).unwrap();
    let report = cmd_evaluate(&cfg, &EvalOptions::default()).unwrap();
    let m = &report.models[0];
    assert_eq!(m.scored, 39);
    assert_eq!(m.micro.accuracy, 1.0);
    assert_eq!(m.micro.f1, 1.0);
    assert!(m.banner.is_none());
    assert!(m.distribution.iter().all(|d| d.delta == 0.0));
    for f in ["report.json", "report.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn failures_are_excluded_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let script = gold_echo(dir.path(), &["p01", "p02", "p03"]);
    let cfg = config(dir.path(), &replay_backend(&script, ""));
    let s = cmd_classify(&cfg, &ClassifyOptions::default()).unwrap();
    let counts = &s.per_label["FX_2shot_scripted"];
    assert_eq!((counts.classified, counts.failed), (36, 3));

    let store = ResultsStore::open(dir.path()).unwrap();
    let rec = store.get("FX_2shot_scripted", 0, "p02").unwrap();
    // first call plus two re-asks
    assert_eq!(rec.attempts, 3);
    assert_eq!(rec.raw.len(), 3);

    let report = cmd_evaluate(&cfg, &EvalOptions::default()).unwrap();
    let m = &report.models[0];
    assert_eq!(m.scored, 36);
    assert_eq!(m.excluded, ["p01", "p02", "p03"]);
    assert_eq!(m.micro.accuracy, 1.0);
    let banner = m.banner.as_deref().unwrap();
    assert!(banner.starts_with("3 of 39 posts failed"), "{banner}");
}

#[test]
fn single_attempt_policy_stops_after_one_call() {
    let dir = tempfile::tempdir().unwrap();
    let script = gold_echo(dir.path(), &["p05", "p06"]);
    let mut cfg = config(dir.path(), &replay_backend(&script, ""));
    cfg.retry.max_attempts = 1;
    let s = cmd_classify(&cfg, &ClassifyOptions::default()).unwrap();
    assert_eq!(s.per_label["FX_2shot_scripted"].failed, 2);
    let store = ResultsStore::open(dir.path()).unwrap();
    assert_eq!(store.get("FX_2shot_scripted", 0, "p05").unwrap().attempts, 1);
}

#[test]
fn distribution_of_gold_echo_matches_gold() {
    let dir = tempfile::tempdir().unwrap();
    let script = gold_echo(dir.path(), &[]);
    let cfg = config(dir.path(), &replay_backend(&script, ""));
    cmd_classify(&cfg, &ClassifyOptions::default()).unwrap();
    let d = cmd_distribute(&cfg, &EvalOptions::default()).unwrap();
    assert_eq!(d.labels.len(), 1);
    assert!(dir.path().join("distribution.json").exists());
    assert!(d.render().contains("FX_2shot_scripted"));
}

#[test]
fn ranking_ignores_row_order() {
    let ranked = cmd_rank(&fixture("table1.csv")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let text = String::from_utf8(read(&fixture("table1.csv"))).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.reverse();
    let shuffled = dir.path().join("shuffled.csv");
    std::fs::write(&shuffled, format!("{header}\n{}\n", lines.join("\n"))).unwrap();
    assert_eq!(cmd_rank(&shuffled).unwrap(), ranked);
}

#[test]
fn metrics_table_ranks_two_models() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_evaluate_metrics(&fixture("table2.tsv"), Some(dir.path())).unwrap();
    let ranking = report.ranking.unwrap();
    let ranks: Vec<f64> = ranking.rows.iter().map(|r| r.avg_rank).collect();
    assert_eq!(ranks, [1.0, 2.0]);
    assert!(dir.path().join("ranking.csv").exists());
}
