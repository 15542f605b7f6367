use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classify::load_run_codebook;
use super::config::RunConfig;
use super::ingest::derive_corpus;
use super::store::{write_atomic, ResultsStore};
use super::PipelineError;
use crate::codebook::{load_gold, Codebook, LabelVector, ThemeCode};
use crate::evaluation::{
    apply_failure_policy, avg_rank, bootstrap_ci, confusion_all, distribution_delta, metrics, run_stats,
    theme_distribution, wald_ci, Aggregation, ConfusionMatrix, FailurePolicy, IntervalEstimate, LabelSet,
    MetricKind, MetricRow, MetricSet, ModelRanking, RunStats, ThemeShare,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricInterval {
    pub metric: MetricKind,
    pub estimate: IntervalEstimate<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeRow {
    pub code: ThemeCode,
    pub name: String,
    pub matrix: ConfusionMatrix,
    pub metrics: MetricSet<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeDelta {
    pub code: ThemeCode,
    pub model_count: u64,
    pub model_pct: f64,
    pub gold_count: u64,
    pub gold_pct: f64,
    /// Model minus gold, in percentage points.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    pub repeats: u32,
    /// Posts in the store for the first repeat.
    pub posts: usize,
    /// Posts entering the matrices.
    pub scored: usize,
    pub excluded: Vec<String>,
    pub imputed: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub banner: Option<String>,
    pub micro: MetricSet<f64>,
    #[serde(rename = "macro")]
    pub macro_: MetricSet<f64>,
    pub intervals: Vec<MetricInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_stats: Option<RunStats<f64>>,
    pub per_theme: Vec<ThemeRow>,
    pub distribution: Vec<ThemeDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_abs_delta: Option<(ThemeCode, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_policy: Option<FailurePolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_resamples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_seed: Option<u64>,
    pub models: Vec<ModelReport>,
    /// Present when two or more models are compared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<ModelRanking<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Run directories or results files; the config's output dir if empty.
    pub stores: Vec<PathBuf>,
    /// Report directory; the config's output dir if absent.
    pub out_dir: Option<PathBuf>,
}

fn fail_banner(policy: FailurePolicy, failed: usize, posts: usize, scored: usize) -> Option<String> {
    (failed > 0).then(|| match policy {
        FailurePolicy::ExcludeAndReport => format!(
            "{failed} of {posts} posts failed classification and were excluded ({policy}); metrics use {scored} posts"
        ),
        _ => format!("{failed} of {posts} posts failed classification and were scored under {policy}"),
    })
}

fn restrict(gold: &LabelSet, ids: impl Iterator<Item = String>) -> Result<LabelSet, PipelineError> {
    let mut out = LabelSet::new();
    let mut missing = Vec::new();
    for id in ids {
        match gold.get(&id) {
            Some(v) => {
                out.insert(id, v.clone());
            }
            None => missing.push(id),
        }
    }
    if !missing.is_empty() {
        return Err(PipelineError::Data(format!(
            "gold labels missing for {} stored posts: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(out)
}

fn shares(d: &crate::evaluation::ThemeDistribution<f64>) -> BTreeMap<ThemeCode, ThemeShare<f64>> {
    d.shares.iter().map(|s| (s.code, *s)).collect()
}

fn model_report(
    cfg: &RunConfig,
    cb: &Codebook,
    gold_all: &LabelSet,
    store: &ResultsStore,
    label: &str,
) -> Result<ModelReport, PipelineError> {
    let alphabet = cb.alphabet();
    let policy = cfg.evaluation.failure_policy;
    let confidence = cfg.evaluation.confidence;
    let seed = cfg.evaluation.bootstrap_seed.unwrap_or(super::DEFAULT_SEED);
    let repeats = store.repeats(label);
    let mut per_repeat = Vec::new();
    for &r in &repeats {
        let outcomes = store.outcomes(label, r, cb)?;
        let gold = restrict(gold_all, outcomes.keys().cloned())?;
        let scored = apply_failure_policy(&gold, &outcomes, policy)?;
        per_repeat.push((outcomes.len(), scored));
    }
    let (posts, head) = per_repeat.first().ok_or_else(|| PipelineError::Data(format!("no records for {label}")))?;
    let posts = *posts;
    if head.gold.is_empty() {
        return Err(PipelineError::Data(format!("{label}: every post failed; nothing to score")));
    }
    let matrices = confusion_all(&head.gold, &head.pred, &alphabet)?;
    let micro: MetricSet<f64> = metrics(&matrices, Aggregation::Micro);
    let macro_: MetricSet<f64> = metrics(&matrices, Aggregation::Macro);

    let mut intervals = vec![MetricInterval {
        metric: MetricKind::Accuracy,
        estimate: wald_ci(micro.accuracy, micro.n_decisions, confidence),
    }];
    for metric in MetricKind::ALL {
        intervals.push(MetricInterval {
            metric,
            estimate: bootstrap_ci(
                &head.gold,
                &head.pred,
                &alphabet,
                metric,
                Aggregation::Micro,
                cfg.evaluation.bootstrap_resamples,
                seed,
                confidence,
            )?,
        });
    }

    let run_stats = if per_repeat.len() >= 2 {
        let sets = per_repeat
            .iter()
            .map(|(_, s)| Ok(metrics(&confusion_all(&s.gold, &s.pred, &alphabet)?, Aggregation::Micro)))
            .collect::<Result<Vec<MetricSet<f64>>, PipelineError>>()?;
        Some(run_stats(&sets)?)
    } else {
        None
    };

    let per_theme = alphabet
        .iter()
        .zip(&matrices)
        .map(|(&code, m)| ThemeRow {
            code,
            name: cb.theme(code).map(|t| t.name.clone()).unwrap_or_default(),
            matrix: *m,
            metrics: MetricSet::from_matrix(m, Aggregation::PerTheme),
        })
        .collect();

    let model_dist = theme_distribution::<f64>(head.pred.values(), cb)?;
    let gold_dist = theme_distribution::<f64>(head.gold.values(), cb)?;
    let delta = distribution_delta(&model_dist, &gold_dist)?;
    let (m, g) = (shares(&model_dist), shares(&gold_dist));
    let distribution = delta
        .deltas
        .iter()
        .map(|&(code, d)| ThemeDelta {
            code,
            model_count: m[&code].count,
            model_pct: m[&code].percentage,
            gold_count: g[&code].count,
            gold_pct: g[&code].percentage,
            delta: d,
        })
        .collect();

    let failed = head.excluded.len() + head.imputed.len();
    Ok(ModelReport {
        label: label.to_string(),
        repeats: repeats.len() as u32,
        posts,
        scored: head.gold.len(),
        banner: fail_banner(policy, failed, posts, head.gold.len()),
        excluded: head.excluded.clone(),
        imputed: head.imputed.clone(),
        micro,
        macro_,
        intervals,
        run_stats,
        per_theme,
        distribution,
        max_abs_delta: delta.max_abs,
    })
}

fn load_stores(cfg: &RunConfig, stores: &[PathBuf]) -> Result<ResultsStore, PipelineError> {
    let paths: Vec<PathBuf> = if stores.is_empty() {
        vec![cfg.output.dir.clone()]
    } else {
        stores.to_vec()
    };
    let mut merged = ResultsStore::new();
    for p in &paths {
        let store = ResultsStore::open(p)?;
        for r in store.records() {
            if merged.get(&r.label, r.repeat, &r.post_id).is_some() {
                return Err(PipelineError::Data(format!(
                    "label {} appears in more than one store",
                    r.label
                )));
            }
        }
        for r in store.records() {
            merged.insert(r.clone());
        }
    }
    if merged.is_empty() {
        return Err(PipelineError::Data("empty store".into()));
    }
    Ok(merged)
}

fn load_gold_set(cfg: &RunConfig, cb: &Codebook) -> Result<LabelSet, PipelineError> {
    if cfg.codebook.gold.is_empty() {
        return Err(PipelineError::Config("codebook.gold lists no gold label files".into()));
    }
    let corpus = derive_corpus(cfg)?.cleaned;
    let mut all = LabelSet::new();
    for path in &cfg.codebook.gold {
        for (id, v) in load_gold(path, &corpus, cb)?.labels {
            if all.insert(id.clone(), v).is_some() {
                return Err(PipelineError::Data(format!("post {id} is labeled in more than one gold file")));
            }
        }
    }
    Ok(all)
}

fn ranking_of(rows: &[MetricRow<f64>]) -> Option<ModelRanking<f64>> {
    (rows.len() >= 2).then(|| avg_rank(rows))
}

/// Scores stored predictions against the gold labels and writes
/// `report.json`, `report.csv` and, for several models, `ranking.csv`.
pub fn cmd_evaluate(cfg: &RunConfig, opts: &EvalOptions) -> Result<EvalReport, PipelineError> {
    let mut cfg = cfg.clone();
    cfg.materialize();
    let cb = load_run_codebook(&cfg)?;
    let gold = load_gold_set(&cfg, &cb)?;
    let store = load_stores(&cfg, &opts.stores)?;
    let models = store
        .labels()
        .iter()
        .map(|l| model_report(&cfg, &cb, &gold, &store, l))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<MetricRow<f64>> = models.iter().map(|m| MetricRow::from_set(m.label.clone(), &m.micro)).collect();
    let report = EvalReport {
        failure_policy: Some(cfg.evaluation.failure_policy),
        confidence: Some(cfg.evaluation.confidence),
        bootstrap_resamples: Some(cfg.evaluation.bootstrap_resamples),
        bootstrap_seed: cfg.evaluation.bootstrap_seed,
        models,
        ranking: ranking_of(&rows),
    };
    write_eval(&report, opts.out_dir.as_deref().unwrap_or(&cfg.output.dir))?;
    Ok(report)
}

/// Ranking-only report from an externally supplied metrics table.
pub fn cmd_evaluate_metrics(table: &Path, out_dir: Option<&Path>) -> Result<EvalReport, PipelineError> {
    let rows = read_metrics_table(table)?;
    let report = EvalReport {
        failure_policy: None,
        confidence: None,
        bootstrap_resamples: None,
        bootstrap_seed: None,
        models: Vec::new(),
        ranking: ranking_of(&rows),
    };
    if let Some(dir) = out_dir {
        write_eval(&report, dir)?;
    }
    Ok(report)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn ranking_csv(r: &ModelRanking<f64>) -> Vec<u8> {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|x| {
            vec![
                x.row.label.clone(),
                x.row.precision.to_string(),
                x.row.recall.to_string(),
                x.row.f1.to_string(),
                x.row.accuracy.to_string(),
                x.avg_rank.to_string(),
            ]
        })
        .collect();
    csv_bytes(&["label", "precision", "recall", "f1", "accuracy", "avg_rank"], &rows)
}

fn write_eval(report: &EvalReport, dir: &Path) -> Result<(), PipelineError> {
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    let mut rows = Vec::new();
    for m in &report.models {
        let mut push = |scope: String, set: &MetricSet<f64>, cm: Option<&ConfusionMatrix>| {
            let counts = cm.map_or([String::new(), String::new(), String::new(), String::new()], |c| {
                [c.tp.to_string(), c.fp.to_string(), c.fn_.to_string(), c.tn.to_string()]
            });
            let mut row = vec![m.label.clone(), scope, set.aggregation.to_string(), set.n_decisions.to_string()];
            row.extend(counts);
            row.extend([set.precision, set.recall, set.f1, set.accuracy].map(|x| x.to_string()));
            rows.push(row);
        };
        let pooled: ConfusionMatrix = m.per_theme.iter().map(|t| t.matrix).sum();
        push("all".into(), &m.micro, Some(&pooled));
        push("all".into(), &m.macro_, None);
        for t in &m.per_theme {
            push(t.code.to_string(), &t.metrics, Some(&t.matrix));
        }
    }
    let header = [
        "label", "scope", "aggregation", "n", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "accuracy",
    ];
    if !report.models.is_empty() {
        write_atomic(&dir.join("report.csv"), &csv_bytes(&header, &rows))?;
    }
    if let Some(r) = &report.ranking {
        write_atomic(&dir.join("ranking.csv"), &ranking_csv(r))?;
    }
    Ok(())
}

impl EvalReport {
    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for m in &self.models {
            let _ = writeln!(out, "== {} ==", m.label);
            if let Some(b) = &m.banner {
                let _ = writeln!(out, "!! {b}");
            }
            let _ = writeln!(out, "posts={} scored={} repeats={}", m.posts, m.scored, m.repeats);
            for set in [&m.micro, &m.macro_] {
                let _ = writeln!(
                    out,
                    "{:<6} precision={:.3} recall={:.3} f1={:.3} accuracy={:.3}{}",
                    set.aggregation.to_string(),
                    set.precision,
                    set.recall,
                    set.f1,
                    set.accuracy,
                    if set.zero_division { " (zero-division rule applied)" } else { "" }
                );
            }
            for i in &m.intervals {
                let e = &i.estimate;
                let _ = writeln!(
                    out,
                    "{} {:.0}% CI ({}): [{:.3}, {:.3}]",
                    i.metric,
                    e.confidence * 100.0,
                    e.method,
                    e.lower,
                    e.upper
                );
            }
            if let Some(s) = &m.run_stats {
                for k in MetricKind::ALL {
                    let v = s.get(k);
                    let _ = writeln!(
                        out,
                        "{k} over {} runs: mean={:.3} sd={}",
                        s.runs,
                        v.mean,
                        v.sd.map_or("-".to_string(), |x| format!("{x:.3}"))
                    );
                }
            }
            let _ = writeln!(out, "theme  model%  gold%  delta");
            for d in &m.distribution {
                let _ = writeln!(
                    out,
                    "{:<5} {:>6.1} {:>6.1} {:>+6.1}",
                    d.code.to_string(),
                    d.model_pct,
                    d.gold_pct,
                    d.delta
                );
            }
        }
        if let Some(r) = &self.ranking {
            out.push_str(&render_ranking(r));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub label: String,
    pub repeat: u32,
    /// Classified posts (the denominator).
    pub n: u64,
    pub failed: usize,
    pub shares: Vec<ThemeShare<f64>>,
    /// The `top_k` most frequent codes.
    pub top: Vec<ThemeCode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub top_k: usize,
    pub labels: Vec<LabelDistribution>,
}

impl DistributionReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.labels {
            let _ = writeln!(out, "== {} (n={}, failed={}) ==", l.label, l.n, l.failed);
            let top: Vec<String> = l
                .top
                .iter()
                .filter_map(|c| l.shares.iter().find(|s| s.code == *c))
                .map(|s| format!("{} ({:.1}%, {})", s.code, s.percentage, s.count))
                .collect();
            let _ = writeln!(out, "top {}: {}", self.top_k, top.join(", "));
            for s in &l.shares {
                let mark = if l.top.contains(&s.code) { "*" } else { " " };
                let _ = writeln!(out, "{mark} {} {:>5.1}% {:>6}", s.code, s.percentage, s.count);
            }
        }
        out
    }
}

/// Theme distribution of each label's first repeat over its classified
/// posts; writes `distribution.json` and `distribution.csv`.
pub fn cmd_distribute(cfg: &RunConfig, opts: &EvalOptions) -> Result<DistributionReport, PipelineError> {
    let cb = load_run_codebook(cfg)?;
    let store = load_stores(cfg, &opts.stores)?;
    let top_k = cfg.evaluation.top_k;
    let mut labels = Vec::new();
    for label in store.labels() {
        let repeat = store.repeats(&label)[0];
        let outcomes = store.outcomes(&label, repeat, &cb)?;
        let classified: Vec<&LabelVector> = outcomes.values().flatten().collect();
        let failed = outcomes.len() - classified.len();
        let dist = theme_distribution::<f64>(classified, &cb)
            .map_err(|_| PipelineError::Data(format!("{label}: no classified posts")))?;
        labels.push(LabelDistribution {
            label,
            repeat,
            n: dist.n,
            failed,
            top: dist.top(top_k).into_iter().map(|s| s.code).collect(),
            shares: dist.shares,
        });
    }
    let report = DistributionReport { top_k, labels };
    let dir = opts.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_atomic(&dir.join("distribution.json"), json.as_bytes())?;
    let rows: Vec<Vec<String>> = report
        .labels
        .iter()
        .flat_map(|l| {
            l.shares.iter().map(move |s| {
                vec![
                    l.label.clone(),
                    s.code.to_string(),
                    s.count.to_string(),
                    l.n.to_string(),
                    format!("{:.1}", s.percentage),
                    l.top.contains(&s.code).to_string(),
                ]
            })
        })
        .collect();
    write_atomic(
        &dir.join("distribution.csv"),
        &csv_bytes(&["label", "code", "count", "n", "percentage", "top"], &rows),
    )?;
    Ok(report)
}

fn column_role(name: &str) -> Option<usize> {
    let key: String = name.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
    match key.as_str() {
        "label" | "model" | "name" | "modelprompt" => Some(0),
        "precision" | "p" => Some(1),
        "recall" | "r" => Some(2),
        "f1" | "f1score" | "f" => Some(3),
        "accuracy" | "acc" => Some(4),
        _ => None,
    }
}

/// Reads label, precision, recall, F1 and accuracy columns from a CSV or
/// TSV table. Other columns are ignored.
pub fn read_metrics_table(path: &Path) -> Result<Vec<MetricRow<f64>>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let tsv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"))
        || text.lines().next().is_some_and(|l| l.contains('\t'));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(if tsv { b'\t' } else { b',' })
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let data = |m: String| PipelineError::Data(format!("{}: {m}", path.display()));
    let headers = reader.headers().map_err(|e| data(e.to_string()))?.clone();
    let mut slots = [None; 5];
    for (i, h) in headers.iter().enumerate() {
        if let Some(role) = column_role(h) {
            slots[role].get_or_insert(i);
        }
    }
    const NAMES: [&str; 5] = ["label", "precision", "recall", "f1", "accuracy"];
    if let Some(missing) = slots.iter().position(Option::is_none) {
        return Err(data(format!("missing column {}", NAMES[missing])));
    }
    let slots = slots.map(|s| s.expect("checked"));
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data(e.to_string()))?;
        let num = |k: usize| -> Result<f64, PipelineError> {
            let cell = record.get(slots[k]).unwrap_or("");
            cell.parse()
                .map_err(|_| data(format!("row {}: {} value {cell:?} is not a number", n + 1, NAMES[k])))
        };
        rows.push(MetricRow {
            label: record.get(slots[0]).unwrap_or("").to_string(),
            precision: num(1)?,
            recall: num(2)?,
            f1: num(3)?,
            accuracy: num(4)?,
        });
    }
    if rows.len() < 2 {
        return Err(data(format!("ranking needs at least 2 rows, found {}", rows.len())));
    }
    Ok(rows)
}

/// Average-rank table from a metrics file.
pub fn cmd_rank(path: &Path) -> Result<ModelRanking<f64>, PipelineError> {
    Ok(avg_rank(&read_metrics_table(path)?))
}

pub fn render_ranking(r: &ModelRanking<f64>) -> String {
    let width = r.rows.iter().map(|x| x.row.label.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>6}  {:>5}  {:>8}  {:>8}\n",
        "label", "precision", "recall", "f1", "accuracy", "avg_rank"
    );
    for x in &r.rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.3}  {:>6.3}  {:>5.3}  {:>8.3}  {:>8.3}",
            x.row.label, x.row.precision, x.row.recall, x.row.f1, x.row.accuracy, x.avg_rank
        );
    }
    out
}
