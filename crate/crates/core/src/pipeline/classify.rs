use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::ingest::derive_corpus;
use super::manifest::{hash_file, sha256_hex, RunLock, RunManifest};
use super::store::{Ledger, PartialWriter, PostStatus, ResultRecord, ResultsStore, FINAL_FILE, PARTIAL_FILE};
use super::PipelineError;
use crate::backends::{classify_repeat, BackendError, Client, ClientOptions, ClassifyError, SHIPPED_RULES};
use crate::codebook::{load_codebook, Codebook, DEFAULT_CODEBOOK};
use crate::corpus::{Post, DEFAULT_KEYWORDS};
use crate::parsing::{assemble_per_theme, parse_for_target, ParseMode};
use crate::prompting::{PromptTarget, PromptTemplate, Prompter, RenderOptions, ShotPolicy};

#[derive(Debug, Clone, Default)]
pub struct ClassifyOptions {
    /// Refuse remote backends.
    pub offline: bool,
    /// Continue an interrupted run in the same directory.
    pub resume: bool,
    /// Stop after this many new records, leaving the run resumable.
    /// Simulates an interruption.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub classified: usize,
    pub failed: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifySummary {
    pub per_label: BTreeMap<String, LabelCounts>,
    /// Units already done before this invocation.
    pub resumed: usize,
    /// Records written by this invocation.
    pub written: usize,
    pub complete: bool,
}

impl std::fmt::Display for ClassifySummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (label, c) in &self.per_label {
            writeln!(
                f,
                "{label}: classified={}, failed={}, pending={}",
                c.classified, c.failed, c.pending
            )?;
        }
        if !self.complete {
            writeln!(f, "run incomplete; relaunch with --resume")?;
        }
        Ok(())
    }
}

fn input_hashes(cfg: &RunConfig) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut inputs = BTreeMap::new();
    let mut add = |p: &Path| -> Result<(), PipelineError> {
        inputs.insert(p.display().to_string(), hash_file(p)?);
        Ok(())
    };
    for p in &cfg.corpus.paths {
        add(p)?;
    }
    for p in &cfg.codebook.gold {
        add(p)?;
    }
    for p in cfg.corpus.keywords.iter().chain(&cfg.codebook.path).chain(&cfg.prompting.scaffold) {
        add(p)?;
    }
    for b in &cfg.backend {
        for p in b.config.rules.iter().chain(&b.config.replay) {
            add(p)?;
        }
    }
    if cfg.corpus.keywords.is_none() {
        inputs.insert("builtin:keywords".into(), sha256_hex(DEFAULT_KEYWORDS.as_bytes()));
    }
    if cfg.codebook.path.is_none() {
        inputs.insert("builtin:codebook".into(), sha256_hex(DEFAULT_CODEBOOK.as_bytes()));
    }
    if cfg.backend.iter().any(|b| b.config.rules.is_none()) {
        inputs.insert("builtin:mock-rules".into(), sha256_hex(SHIPPED_RULES.as_bytes()));
    }
    Ok(inputs)
}

pub(crate) fn load_run_codebook(cfg: &RunConfig) -> Result<Codebook, PipelineError> {
    Ok(match &cfg.codebook.path {
        Some(p) => load_codebook(p)?,
        None => Codebook::shipped(),
    })
}

fn load_template(cfg: &RunConfig) -> Result<PromptTemplate, PipelineError> {
    let version = cfg.prompting.template;
    Ok(match &cfg.prompting.scaffold {
        Some(p) => PromptTemplate::load(version, p)?,
        None => PromptTemplate::shipped(version),
    })
}

struct Unit<'a> {
    backend: usize,
    label: &'a str,
    repeat: u32,
    post: &'a Post,
}

enum Message {
    Record(ResultRecord),
    Abort(BackendError),
}

fn classify_post(
    client: &Client,
    cfg: &RunConfig,
    cb: &Codebook,
    prompter: &Prompter<'_>,
    unit: &Unit<'_>,
) -> Result<ResultRecord, BackendError> {
    let mut record = ResultRecord {
        label: unit.label.to_string(),
        repeat: unit.repeat,
        post_id: unit.post.id.clone(),
        status: PostStatus::Failed,
        labels: None,
        failure: None,
        detail: None,
        attempts: 0,
        kind: client.kind(),
        cache_hits: 0,
        fingerprints: Vec::new(),
        raw: Vec::new(),
    };
    let prompts = match prompter.render(unit.post) {
        Ok(p) => p,
        Err(e) => {
            record.detail = Some(format!("render: {e}"));
            return Ok(record);
        }
    };
    let mode: ParseMode = cfg.prompting.parse_mode;
    let mut outcomes = Vec::with_capacity(prompts.len());
    for prompt in &prompts {
        let parser = |t: &str| parse_for_target(t, &prompt.target, mode);
        let outcome = match classify_repeat(client, &cfg.retry, prompt, unit.repeat, parser) {
            Ok(done) => {
                record.attempts += done.result.attempts;
                record.cache_hits += u32::from(done.result.cache_hit);
                record.fingerprints.push(done.result.fingerprint);
                record.raw.extend(done.raw_attempts);
                Ok(done.labels)
            }
            Err(ClassifyError::Failed(f)) => {
                let f = *f;
                record.attempts += f.raw_attempts.len() as u32;
                record.fingerprints.push(f.fingerprint);
                record.raw.extend(f.raw_attempts);
                Err(f.failure)
            }
            Err(ClassifyError::Backend(e)) => return Err(e),
        };
        outcomes.push(outcome);
    }
    let merged = if let [PromptTarget::All(_)] = prompts.iter().map(|p| &p.target).collect::<Vec<_>>()[..] {
        outcomes.pop().expect("one prompt")
    } else {
        let per_theme: Vec<_> = prompts
            .iter()
            .zip(outcomes)
            .map(|(p, o)| match &p.target {
                PromptTarget::Theme(c) => (*c, o),
                PromptTarget::All(_) => unreachable!("per-theme prompts target one code"),
            })
            .collect();
        assemble_per_theme(&per_theme, cb)
    };
    match merged {
        Ok(v) => {
            record.status = PostStatus::Classified;
            record.set_labels(&v);
        }
        Err(f) => {
            record.failure = Some(f.reason);
            record.detail = Some(f.detail);
        }
    }
    Ok(record)
}

/// Classifies every working-corpus post with every configured backend.
///
/// Records are appended to the partial store as they complete; on success
/// the sorted final store and ledger are written and the partial file is
/// removed. A relaunch with `resume` only processes units missing from the
/// partial store.
pub fn cmd_classify(cfg: &RunConfig, opts: &ClassifyOptions) -> Result<ClassifySummary, PipelineError> {
    let mut cfg = cfg.clone();
    cfg.materialize();
    cfg.validate()?;
    if cfg.backend.is_empty() {
        return Err(PipelineError::Config("no [[backend]] configured".into()));
    }
    let dir = cfg.output.dir.clone();
    let _lock = RunLock::acquire(&dir)?;

    let corpus = derive_corpus(&cfg)?.working;
    let cb = load_run_codebook(&cfg)?;
    let template = load_template(&cfg)?;
    let policy = match &cfg.prompting.exemplars {
        Some(ix) => ShotPolicy::explicit(ix.clone()),
        None => ShotPolicy::seeded(cfg.prompting.shots),
    };
    let prompter = Prompter::new(
        &cb,
        &template,
        &policy,
        cfg.prompting.exemplar_seed.unwrap_or(super::DEFAULT_SEED),
        RenderOptions {
            include_title: cfg.prompting.include_title,
            exemplar_char_budget: cfg.prompting.exemplar_char_budget,
        },
    )?;

    let manifest = RunManifest::new(cfg.clone(), input_hashes(&cfg)?, template.scaffold_hash());
    let partial_path = dir.join(PARTIAL_FILE);
    let final_path = dir.join(FINAL_FILE);
    match RunManifest::read(&dir)? {
        Some(_) if !opts.resume => {
            return Err(PipelineError::Usage(format!(
                "{} already holds a run; pass --resume or use a new output directory",
                dir.display()
            )))
        }
        Some(previous) if !previous.same_run(&manifest) => {
            return Err(PipelineError::Config(
                "config or inputs changed since the run started; use a new output directory".into(),
            ))
        }
        Some(_) => {}
        None => manifest.write(&dir)?,
    }

    let labels = cfg.labels();
    let mut ledger = Ledger::default();
    let mut units = Vec::new();
    for (b, entry) in cfg.backend.iter().enumerate() {
        for repeat in 0..cfg.repeats_for(entry) {
            for post in corpus.posts() {
                ledger.schedule(&labels[b], repeat, &post.id);
                units.push(Unit {
                    backend: b,
                    label: &labels[b],
                    repeat,
                    post,
                });
            }
        }
    }

    let mut done = ResultsStore::new();
    for path in [&final_path, &partial_path] {
        if path.exists() {
            for r in ResultsStore::read(path)?.records() {
                done.insert(r.clone());
            }
        }
    }
    for r in done.records() {
        ledger.mark(r);
    }
    let todo: Vec<&Unit> = units
        .iter()
        .filter(|u| done.get(u.label, u.repeat, &u.post.id).is_none())
        .collect();
    let resumed = units.len() - todo.len();

    let audit_dir = dir.join("audit");
    let clients = cfg
        .backend
        .iter()
        .zip(&labels)
        .map(|(entry, label)| {
            Client::new(
                entry.config.clone(),
                ClientOptions {
                    offline: opts.offline,
                    cache_path: cfg.output.cache.then(|| dir.join("cache").join(format!("{label}.jsonl"))),
                    audit_path: Some(audit_dir.join(format!("{label}.jsonl"))),
                    backoff: cfg.retry.backoff.clone(),
                },
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let writer = Mutex::new(PartialWriter::open(&partial_path)?);
    let workers = cfg.backend.iter().map(|b| b.config.max_in_flight).max().unwrap_or(1).min(todo.len().max(1));
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut written = 0usize;
    let mut failure: Option<PipelineError> = None;
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<Message>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (todo, next, stop, clients, cfg, cb, prompter) = (&todo, &next, &stop, &clients, &cfg, &cb, &prompter);
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(unit) = todo.get(i) else { break };
                let msg = match classify_post(&clients[unit.backend], cfg, cb, prompter, unit) {
                    Ok(r) => Message::Record(r),
                    Err(e) => Message::Abort(e),
                };
                if tx.send(msg).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for msg in rx {
            if failure.is_some() || opts.stop_after.is_some_and(|n| written >= n) {
                continue;
            }
            match msg {
                Message::Record(r) => {
                    if let Err(e) = writer.lock().expect("writer lock").append(&r) {
                        failure = Some(e);
                        stop.store(true, Ordering::SeqCst);
                        continue;
                    }
                    ledger.mark(&r);
                    done.insert(r);
                    written += 1;
                    if opts.stop_after.is_some_and(|n| written >= n) {
                        stop.store(true, Ordering::SeqCst);
                    }
                }
                Message::Abort(e) => {
                    failure = Some(e.into());
                    stop.store(true, Ordering::SeqCst);
                }
            }
        }
    });
    drop(writer);

    let complete = failure.is_none() && units.iter().all(|u| done.get(u.label, u.repeat, &u.post.id).is_some());
    if complete {
        ledger.completed_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    }
    ledger.write(&dir.join("ledger.json"))?;
    if let Some(e) = failure {
        return Err(e);
    }
    if complete {
        let mut store = ResultsStore::new();
        for u in &units {
            store.insert(done.get(u.label, u.repeat, &u.post.id).expect("complete").clone());
        }
        store.write(&final_path)?;
        if partial_path.exists() {
            std::fs::remove_file(&partial_path).map_err(|e| PipelineError::io(&partial_path, e))?;
        }
    }

    let mut per_label: BTreeMap<String, LabelCounts> = labels.iter().map(|l| (l.clone(), LabelCounts::default())).collect();
    for (label, repeats) in &ledger.units {
        let c = per_label.entry(label.clone()).or_default();
        for status in repeats.values().flat_map(|m| m.values()) {
            match status {
                PostStatus::Classified => c.classified += 1,
                PostStatus::Failed => c.failed += 1,
                PostStatus::Pending => c.pending += 1,
            }
        }
    }
    Ok(ClassifySummary {
        per_label,
        resumed,
        written,
        complete,
    })
}
