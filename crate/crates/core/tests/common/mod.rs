#![allow(dead_code)]

use std::path::{Path, PathBuf};

use thematic::pipeline::RunConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Config over the 50-post fixture with its gold table and the given
/// backend tables, writing to `out`.
pub fn config(out: &Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"
[corpus]
name = "FX"
paths = [{posts:?}]

[codebook]
gold = [{gold:?}]

[prompting]
template = "v3-single-line"
shots = 2
exemplars = [0, 1]

[evaluation]
bootstrap_resamples = 200

[output]
dir = {out:?}

{extra}
"#,
        posts = fixture("posts50.jsonl").display().to_string(),
        gold = fixture("gold50.csv").display().to_string(),
        out = out.display().to_string(),
    );
    RunConfig::parse_toml(&text, Path::new("/")).expect("test config parses")
}

pub const MOCK: &str = "[[backend]]\nkind = \"mock-rules\"\nmodel = \"mock\"\n";

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
