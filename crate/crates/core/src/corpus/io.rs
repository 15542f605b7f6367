use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{timestamp, Corpus, CorpusError, Post};

/// On-disk post collection formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostFormat {
    /// One JSON object per line with fields
    /// `id, title, body, source, created_at, url`.
    PostLines,
    /// Comma-delimited table with a header row naming the same fields.
    DelimitedTable,
}

impl PostFormat {
    /// Guess from the file extension: `.csv` is a table, anything else lines.
    pub fn from_extension(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => PostFormat::DelimitedTable,
            _ => PostFormat::PostLines,
        }
    }
}

impl FromStr for PostFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "post-lines" | "jsonl" => Ok(PostFormat::PostLines),
            "delimited-table" | "csv" => Ok(PostFormat::DelimitedTable),
            other => Err(format!("unknown post format {other:?}")),
        }
    }
}

impl fmt::Display for PostFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PostFormat::PostLines => "post-lines",
            PostFormat::DelimitedTable => "delimited-table",
        })
    }
}

/// Anything that can produce raw posts for ingestion.
///
/// Files are the shipped source; a platform fetcher can implement this trait
/// and feed the same downstream pipeline.
pub trait PostSource {
    fn name(&self) -> String;
    fn fetch(&self) -> Result<Vec<Post>, CorpusError>;
}

#[derive(Debug, Clone)]
pub struct FileSource {
    pub path: PathBuf,
    pub format: PostFormat,
}

impl PostSource for FileSource {
    fn name(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".to_string())
    }

    fn fetch(&self) -> Result<Vec<Post>, CorpusError> {
        let text = fs::read_to_string(&self.path).map_err(|source| CorpusError::Io {
            path: self.path.clone(),
            source,
        })?;
        match self.format {
            PostFormat::PostLines => parse_lines(&self.path, &text),
            PostFormat::DelimitedTable => parse_table(&self.path, &text),
        }
    }
}

/// Loads a corpus named after the file stem.
pub fn load_posts(path: &Path, format: PostFormat) -> Result<Corpus, CorpusError> {
    let source = FileSource {
        path: path.to_path_buf(),
        format,
    };
    let posts = source.fetch()?;
    let n = posts.len();
    Corpus::new(
        source.name(),
        posts,
        format!("loaded {n} records from {}", path.display()),
    )
}

fn parse_lines(path: &Path, text: &str) -> Result<Vec<Post>, CorpusError> {
    let mut posts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let post: Post = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            record: i + 1,
            message: e.to_string(),
        })?;
        posts.push(post);
    }
    Ok(posts)
}

#[derive(Deserialize)]
struct TableRow {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    body: String,
    #[serde(default)]
    source: String,
    created_at: String,
    #[serde(default)]
    url: Option<String>,
}

fn parse_table(path: &Path, text: &str) -> Result<Vec<Post>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut posts = Vec::new();
    for (i, row) in reader.deserialize::<TableRow>().enumerate() {
        let malformed = |message: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            record: i + 1,
            message,
        };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let created_at = timestamp::parse(&row.created_at).map_err(malformed)?;
        posts.push(Post {
            id: row.id,
            title: row.title,
            body: row.body,
            source: row.source,
            created_at,
            url: row.url.filter(|u| !u.is_empty()),
        });
    }
    Ok(posts)
}

/// Writes a corpus in the given format, in corpus order.
pub fn write_posts(corpus: &Corpus, path: &Path, format: PostFormat) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut out = Vec::new();
    match format {
        PostFormat::PostLines => {
            for post in corpus.posts() {
                serde_json::to_writer(&mut out, post).expect("post serializes");
                out.push(b'\n');
            }
        }
        PostFormat::DelimitedTable => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["id", "title", "body", "source", "created_at", "url"])
                .expect("in-memory write");
            for p in corpus.posts() {
                w.write_record([
                    p.id.as_str(),
                    &p.title,
                    &p.body,
                    &p.source,
                    &timestamp::format(&p.created_at),
                    p.url.as_deref().unwrap_or(""),
                ])
                .expect("in-memory write");
            }
            w.flush().map_err(io_err)?;
        }
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "empty.jsonl", "");
        let c = load_posts(&p, PostFormat::PostLines).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.name(), "empty");
    }

    #[test]
    fn lines_are_sorted_by_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "three.jsonl",
            concat!(
                r#"{"id":"c","title":"","body":"x","source":"r/a","created_at":"2024-03-01T00:00:00Z"}"#, "\n",
                r#"{"id":"a","title":"t","body":"y","source":"r/a","created_at":"2022-01-01T00:00:00Z","url":"u"}"#, "\n",
                r#"{"id":"b","title":"","body":"z","source":"r/b","created_at":"2023-06-01T12:00:00Z"}"#, "\n",
            ),
        );
        let c = load_posts(&p, PostFormat::PostLines).unwrap();
        let ids: Vec<_> = c.posts().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn malformed_line_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "bad.jsonl",
            "{\"id\":\"a\",\"created_at\":\"2022-01-01T00:00:00Z\"}\nnot json\n",
        );
        let err = load_posts(&p, PostFormat::PostLines).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { record: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("id,title,body,source,created_at,url\n");
        for (i, id) in ["x1", "abc", "x3", "x4", "abc"].iter().enumerate() {
            text += &format!("{id},t,b,r/s,2024-01-0{}T00:00:00Z,\n", i + 1);
        }
        let p = write(dir.path(), "dup.csv", &text);
        match load_posts(&p, PostFormat::DelimitedTable).unwrap_err() {
            CorpusError::DuplicateId { id, first, second } => {
                assert_eq!((id.as_str(), first, second), ("abc", 2, 5));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn table_quoting_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "q.csv",
            "id,title,body,source,created_at,url\n\
             p1,\"Hi, there\",\"line one\nline \"\"two\"\"\",r/x,2024-01-01T00:00:00Z,\n",
        );
        let c = load_posts(&p, PostFormat::DelimitedTable).unwrap();
        assert_eq!(c.posts()[0].body, "line one\nline \"two\"");
        let out = dir.path().join("out.csv");
        write_posts(&c, &out, PostFormat::DelimitedTable).unwrap();
        let back = load_posts(&out, PostFormat::DelimitedTable).unwrap();
        assert_eq!(back.posts(), c.posts());
    }
}
