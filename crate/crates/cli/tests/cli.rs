use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn write_config(dir: &Path, corpus_extra: &str, backend: &str) -> PathBuf {
    let text = format!(
        r#"[corpus]
name = "FX"
paths = [{posts:?}]
{corpus_extra}

[codebook]
gold = [{gold:?}]

[prompting]
template = "v3-single-line"
shots = 2
exemplars = [0, 1]

[evaluation]
bootstrap_resamples = 200

[output]
dir = "run"

{backend}
"#,
        posts = fixture("posts50.jsonl").display().to_string(),
        gold = fixture("gold50.csv").display().to_string(),
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const MOCK: &str = "[[backend]]\nkind = \"mock-rules\"\nmodel = \"mock\"\n";

fn thematic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thematic")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn full_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", MOCK);
    let cfg = cfg.to_str().unwrap();

    let o = thematic(&["ingest", "--config", cfg]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("loaded=50, filtered=43, cleaned=39"), "{}", stdout(&o));

    let o = thematic(&["--offline", "classify", "--config", cfg]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("FX_2shot_mock: classified=39, failed=0, pending=0"), "{}", stdout(&o));
    assert!(dir.path().join("run/results.jsonl").exists());

    // A second launch without --resume is refused; with it there is nothing left to do.
    assert_eq!(code(&thematic(&["classify", "--config", cfg])), 1);
    assert_eq!(code(&thematic(&["classify", "--config", cfg, "--resume"])), 0);

    let o = thematic(&["evaluate", "--config", cfg]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("FX_2shot_mock"));
    assert!(dir.path().join("run/report.json").exists());

    let o = thematic(&["distribute", "--config", cfg]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(dir.path().join("run/distribution.csv").exists());
}

#[test]
fn rank_and_metrics_only_evaluation() {
    let o = thematic(&["rank", fixture("table1.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{o:?}");
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 16, "{out}");
    assert!(out.lines().nth(1).unwrap().starts_with("DS1_2shot_deepseekV3"), "{out}");

    let dir = tempfile::tempdir().unwrap();
    let o = thematic(&[
        "evaluate",
        "--metrics",
        fixture("table2.tsv").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(dir.path().join("ranking.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&thematic(&["nonsense"])), 1);
    assert_eq!(code(&thematic(&["ingest"])), 1);
    assert_eq!(code(&thematic(&["ingest", "--config", "/no/such/file.toml"])), 1);

    let cfg = write_config(dir.path(), "", MOCK);
    let o = thematic(&["ingest", "--config", cfg.to_str().unwrap(), "--seed", "colour=3"]);
    assert_eq!(code(&o), 1, "{o:?}");

    let cfg = write_config(dir.path(), "sample_n = 300", MOCK);
    let o = thematic(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{o:?}");

    let remote = "[[backend]]\nkind = \"remote-chat\"\nmodel = \"m\"\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\n\
                  credential_env = \"THEMATIC_TEST_UNSET_KEY\"\n";
    let cfg = write_config(dir.path(), "", remote);
    let o = thematic(&["classify", "--config", cfg.to_str().unwrap(), "--offline"]);
    assert_eq!(code(&o), 3, "{o:?}");
}

#[test]
fn seed_override_changes_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sample_n = 10\nseed = 1", MOCK);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&thematic(&["ingest", "--config", cfg])), 0);
    let a = std::fs::read(dir.path().join("run/corpus/working.jsonl")).unwrap();
    assert_eq!(code(&thematic(&["ingest", "--config", cfg, "--seed", "sampling=2"])), 0);
    let b = std::fs::read(dir.path().join("run/corpus/working.jsonl")).unwrap();
    assert_ne!(a, b);
    assert_eq!(code(&thematic(&["ingest", "--config", cfg])), 0);
    assert_eq!(std::fs::read(dir.path().join("run/corpus/working.jsonl")).unwrap(), a);
}
