use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use tablemb::corpus::load_corpus;
use tablemb::corruption::{corrupt, table_rng, CorruptionRecord};
use tablemb::index::EmbeddingKey;
use tablemb::metrics::MetricReport;
use tablemb::tasks::{
    build_examples, build_label_space, detect_corruption, load_task_records, score_detections, Detection,
    MultiLabelLoss, TaskRecord,
};
use tablemb::training::{load_checkpoint, pretrain, save_checkpoint, PretrainConfig};
use tablemb::{
    build_cell_vocabulary, build_index, finetune, kmeans, CorruptionConfig, EmbeddingIndex, FinetuneSpec, KMeansConfig,
    KindSelector, Metric, Model, ModelConfig, Strategy, TaskKind, TaskModel, TruncationLimits,
};

use crate::{Cli, Command, ModelArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<tablemb::Error> for CliError {
    fn from(e: tablemb::Error) -> Self {
        match e {
            tablemb::Error::Config(m) => CliError::Usage(format!("invalid configuration: {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainArgs {
    /// Training corpus, one JSON table per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path; rewritten after every epoch.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corruption strategy: freq or mix.
    #[arg(long, default_value = "freq")]
    pub strategy: String,
    /// Fraction of eligible cells corrupted per table.
    #[arg(long, default_value_t = 0.15)]
    pub rate: f64,
    /// Cell budget per batch, CLS cells included.
    #[arg(long, default_value_t = tablemb::training::DEFAULT_MAX_CELLS)]
    pub max_cells: usize,
    /// Gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    /// Corpus whose table ids are removed from training (e.g. a test split).
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Maximum entries of the cell-frequency vocabulary.
    #[arg(long, default_value_t = 1_000_000)]
    pub vocab_size: usize,
    /// Write a JSON summary here instead of standard output.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Pretrained encoder checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Seed columns (col_pop) or seed rows (row_pop).
    #[arg(long, default_value_t = 1)]
    pub n_seed: usize,
    /// Sampled negatives per row-population example.
    #[arg(long, default_value_t = 64)]
    pub neg_samples: usize,
    /// Task checkpoint written with the best validation parameters.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Multi-label loss: softmax or bce.
    #[arg(long, default_value = "softmax")]
    pub loss: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Labels seen fewer times in the training split are dropped.
    #[arg(long, default_value_t = 1)]
    pub min_label_count: usize,
    /// Write a JSON summary here instead of standard output.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectArgs {
    /// Pretrained encoder checkpoint; without it `--corrupt` only emits records.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Tables to score, one JSON table per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Corrupt each table first and report per-type precision/recall/F1.
    #[arg(long)]
    pub corrupt: bool,
    #[arg(long, default_value = "freq")]
    pub strategy: String,
    #[arg(long, default_value_t = 0.15)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus used for the replacement-cell frequencies; defaults to `--corpus`.
    #[arg(long)]
    pub vocab_corpus: Option<PathBuf>,
    /// Cells with probability above this are flagged.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Per-table output (JSON lines); standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// cell, row, column or table.
    #[arg(long, default_value = "table")]
    pub kind: String,
    /// cosine or euclidean.
    #[arg(long, default_value = "cosine")]
    pub metric: String,
    /// Encode without the header row.
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KnnArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query_table: String,
    /// `table`, `row:I`, `column:J` or `cell:I:J` in CLS-augmented coordinates.
    #[arg(long, default_value = "table")]
    pub query_kind: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Drop the query itself from the results.
    #[arg(long)]
    pub exclude_self: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Predictions: per line `{"id", "ranking": [labels]}` or `{"id", "label"}`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold: per line `{"id", "gold": [labels]}` or `{"id", "label"}`.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cli.threads > 0 {
        builder = builder.num_threads(cli.threads);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Data(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Pretrain(a) => run_pretrain(&a),
        Command::FinetuneColpop(a) => run_finetune(TaskKind::ColPop, &a),
        Command::FinetuneRowpop(a) => run_finetune(TaskKind::RowPop, &a),
        Command::FinetuneColtype(a) => run_finetune(TaskKind::ColType, &a),
        Command::Detect(a) => run_detect(&a),
        Command::Embed(a) => run_embed(&a),
        Command::Knn(a) => run_knn(&a),
        Command::Cluster(a) => run_cluster(&a),
        Command::Eval(a) => run_eval(&a),
    })
}

fn echo_config(name: &str, args: &impl Serialize) {
    let v = serde_json::to_string(args).unwrap_or_default();
    log::info!("{name} config {v}");
}

fn writer(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn emit_json(path: Option<&Path>, v: &impl Serialize) -> CliResult<()> {
    let mut w = writer(path)?;
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))?;
    let done = writeln!(w, "{text}").and_then(|_| w.flush());
    done.map_err(|e| CliError::Data(format!("write failed: {e}")))
}

fn model_config(m: &ModelArgs) -> CliResult<ModelConfig> {
    let mut cfg = ModelConfig::desk(m.hidden, m.layers, m.heads);
    cfg.encoder.dropout = m.dropout;
    cfg.limits = TruncationLimits {
        max_rows: m.max_rows,
        max_cols: m.max_cols,
        max_cell_chars: m.max_cell_chars,
    };
    cfg = match m.init_std.as_str() {
        "scaled" => cfg.with_scaled_init(),
        s => {
            let v: f64 = s
                .parse()
                .map_err(|_| CliError::Usage(format!("--init-std expects a number or `scaled`, got `{s}`")))?;
            cfg.block_init_std = v;
            cfg
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse<T: std::str::FromStr<Err = tablemb::Error>>(s: &str) -> CliResult<T> {
    s.parse().map_err(CliError::from)
}

fn run_pretrain(a: &PretrainArgs) -> CliResult<()> {
    echo_config("pretrain", a);
    let config = model_config(&a.model)?;
    let corruption = CorruptionConfig {
        strategy: parse::<Strategy>(&a.strategy)?,
        rate: a.rate,
        seed: a.seed,
    };
    corruption.validate()?;
    let mut corpus = load_corpus(&a.corpus, config.limits)?;
    if let Some(ex) = &a.exclude {
        let held_out: HashSet<String> = load_corpus(ex, config.limits)?
            .tables
            .into_iter()
            .map(|t| t.id)
            .collect();
        let before = corpus.tables.len();
        corpus.tables.retain(|t| !held_out.contains(&t.id));
        log::info!(
            "excluded {} tables listed in {}",
            before - corpus.tables.len(),
            ex.display()
        );
    }
    if corpus.tables.is_empty() {
        return Err(CliError::Data(format!("{}: no usable tables", a.corpus.display())));
    }
    log::info!("{} tables loaded, {} skipped", corpus.tables.len(), corpus.skipped);
    let vocab = build_cell_vocabulary(corpus.tables.iter(), a.vocab_size)?;
    let model = Model::<f32>::new(config, a.seed)?;
    let cfg = PretrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        max_cells: a.max_cells,
        seed: a.seed,
        clip_norm: (a.clip > 0.0).then_some(a.clip),
    };
    if a.epochs == 0 {
        save_checkpoint(&a.out, &model, Some(&corruption), 0)?;
    }
    let (_, report) = pretrain(model, &corpus.tables, &vocab, &corruption, &cfg, |epoch, m| {
        save_checkpoint(&a.out, m, Some(&corruption), epoch + 1)
    })?;
    emit_json(
        a.summary.as_deref(),
        &json!({
            "checkpoint": a.out,
            "tables": corpus.tables.len(),
            "skipped": corpus.skipped,
            "batches": report.batch_losses.len(),
            "epoch_losses": report.epoch_losses,
        }),
    )
}

fn labels_of(task: TaskKind, r: &TaskRecord) -> Vec<&str> {
    let v: Option<Vec<&str>> = match task {
        TaskKind::ColPop => r.gold_headers.as_ref().map(|g| g.iter().map(String::as_str).collect()),
        TaskKind::RowPop => r.gold_entities.as_ref().map(|g| g.iter().map(String::as_str).collect()),
        TaskKind::ColType => r.col_type.as_deref().map(|t| vec![t]),
    };
    v.unwrap_or_default()
}

fn run_finetune(task: TaskKind, a: &FinetuneArgs) -> CliResult<()> {
    echo_config(task.as_str(), a);
    let (model, _) = load_checkpoint(&a.ckpt)?;
    let limits = model.config.limits;
    let load = |p: &Path| -> CliResult<Vec<TaskRecord>> {
        let (recs, skipped) = load_task_records(p, &limits)?;
        if skipped > 0 {
            log::warn!("{}: skipped {skipped} records", p.display());
        }
        Ok(recs)
    };
    let train = load(&a.train)?;
    let val = load(&a.val)?;
    let test = a.test.as_deref().map(load).transpose()?;
    let labels = build_label_space(train.iter().flat_map(|r| labels_of(task, r)), a.min_label_count);
    if labels.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no {task} labels in the training split",
            a.train.display()
        )));
    }
    let mut spec = FinetuneSpec::defaults(task, labels);
    spec.n_seed = a.n_seed;
    spec.neg_samples = a.neg_samples;
    spec.seed = a.seed;
    spec.loss = match a.loss.as_str() {
        "softmax" => MultiLabelLoss::SoftmaxUniform,
        "bce" => MultiLabelLoss::Bce,
        other => return Err(CliError::Usage(format!("--loss expects softmax or bce, got `{other}`"))),
    };
    if let Some(b) = a.batch_size {
        spec.batch_size = b;
    }
    if let Some(lr) = a.lr {
        spec.lr = lr;
    }
    if let Some(e) = a.epochs {
        spec.max_epochs = e;
    }
    log::info!(
        "{task}: {} labels, batch {}, lr {}, {} epochs",
        spec.label_space.len(),
        spec.batch_size,
        spec.lr,
        spec.max_epochs
    );
    let train_ex = build_examples(&spec, &train);
    let val_ex = build_examples(&spec, &val);
    let test_ex = test.map(|t| build_examples(&spec, &t));
    if train_ex.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no usable {task} examples",
            a.train.display()
        )));
    }
    let mut tm = TaskModel::with_random_head(spec, model)?;
    let outcome = finetune(&mut tm, &train_ex, &val_ex, test_ex.as_deref())?;
    tm.save(&a.out)?;
    emit_json(
        a.summary.as_deref(),
        &json!({
            "task": task,
            "checkpoint": a.out,
            "labels": tm.spec.label_space.len(),
            "train_examples": train_ex.len(),
            "val_examples": val_ex.len(),
            "best_epoch": outcome.best_epoch,
            "history": outcome.history,
            "test": outcome.test,
        }),
    )
}

#[derive(Serialize)]
struct DetectLine<'a> {
    #[serde(flatten)]
    table: &'a tablemb::Table,
    /// `[row, col, tag]` of every corrupted cell, header row first.
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<(usize, usize, &'static str)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probabilities: Option<&'a Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flags: Option<&'a Vec<Vec<bool>>>,
}

fn run_detect(a: &DetectArgs) -> CliResult<()> {
    echo_config("detect", a);
    if !a.corrupt && a.ckpt.is_none() {
        return Err(CliError::Usage("detect needs --ckpt, --corrupt or both".into()));
    }
    let model = a.ckpt.as_ref().map(load_checkpoint).transpose()?.map(|(m, _)| m);
    let limits = model.as_ref().map(|m| m.config.limits).unwrap_or_default();
    let corpus = load_corpus(&a.corpus, limits)?;
    let records: Vec<CorruptionRecord> = if a.corrupt {
        let cfg = CorruptionConfig {
            strategy: parse::<Strategy>(&a.strategy)?,
            rate: a.rate,
            seed: a.seed,
        };
        cfg.validate()?;
        let vocab_tables = match &a.vocab_corpus {
            Some(p) => load_corpus(p, limits)?.tables,
            None => corpus.tables.clone(),
        };
        let vocab = build_cell_vocabulary(vocab_tables.iter(), 1_000_000)?;
        corpus
            .tables
            .iter()
            .map(|t| corrupt(t, &cfg, &vocab, &mut table_rng(a.seed, 0, &t.id)))
            .collect()
    } else {
        corpus.tables.iter().map(CorruptionRecord::clean).collect()
    };
    use rayon::prelude::*;
    let detections: Option<Vec<Detection>> = model
        .as_ref()
        .map(|m| {
            records
                .par_iter()
                .map(|r| detect_corruption(m, &r.table, a.threshold))
                .collect::<tablemb::Result<Vec<_>>>()
        })
        .transpose()?;
    let mut w = writer(a.out.as_deref())?;
    for (k, r) in records.iter().enumerate() {
        let det = detections.as_ref().map(|d| &d[k]);
        let line = DetectLine {
            table: &r.table,
            labels: a.corrupt.then(|| {
                r.corrupted_cells()
                    .into_iter()
                    .map(|(i, j, t)| (i, j, t.as_str()))
                    .collect()
            }),
            probabilities: det.map(|d| &d.probabilities),
            flags: det.map(|d| &d.flags),
        };
        let text = serde_json::to_string(&line).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(w, "{text}").map_err(|e| CliError::Data(format!("write failed: {e}")))?;
    }
    w.flush().map_err(|e| CliError::Data(format!("write failed: {e}")))?;
    if let (true, Some(d)) = (a.corrupt, &detections) {
        let report = MetricReport {
            detection: score_detections(&records, d),
            queries: records.len(),
            ..Default::default()
        };
        log::info!("detection {}", serde_json::to_string(&report).unwrap_or_default());
        if a.out.is_some() {
            emit_json(None, &report)?;
        }
    }
    Ok(())
}

fn run_embed(a: &EmbedArgs) -> CliResult<()> {
    echo_config("embed", a);
    let kind = parse::<KindSelector>(&a.kind)?;
    let metric = parse::<Metric>(&a.metric)?;
    let (model, _) = load_checkpoint(&a.ckpt)?;
    let corpus = load_corpus(&a.corpus, model.config.limits)?;
    let index = build_index(&corpus.tables, &model, kind, metric, !a.no_header)?;
    index.save(&a.out)?;
    emit_json(
        None,
        &json!({
            "index": a.out,
            "tables": corpus.tables.len(),
            "vectors": index.len(),
            "excluded": index.excluded,
        }),
    )
}

fn parse_query_kind(s: &str) -> CliResult<tablemb::EmbeddingKind> {
    use tablemb::EmbeddingKind as K;
    let parts: Vec<&str> = s.split(':').collect();
    let num = |x: &str| -> CliResult<usize> {
        x.parse()
            .map_err(|_| CliError::Usage(format!("bad position `{x}` in --query-kind `{s}`")))
    };
    match parts.as_slice() {
        ["table"] => Ok(K::Table),
        ["row", i] => Ok(K::Row { row: num(i)? }),
        ["column" | "col", j] => Ok(K::Column { col: num(j)? }),
        ["cell", i, j] => Ok(K::Cell {
            row: num(i)?,
            col: num(j)?,
        }),
        _ => Err(CliError::Usage(format!(
            "--query-kind expects table, row:I, column:J or cell:I:J, got `{s}`"
        ))),
    }
}

fn run_knn(a: &KnnArgs) -> CliResult<()> {
    echo_config("knn", a);
    let key = EmbeddingKey {
        table: a.query_table.clone(),
        kind: parse_query_kind(&a.query_kind)?,
    };
    let index = EmbeddingIndex::load(&a.index)?;
    let query = index
        .get(&key)
        .ok_or_else(|| CliError::Data(format!("{key} is not in {}", a.index.display())))?
        .to_vec();
    let k = if a.exclude_self { a.k + 1 } else { a.k };
    let mut hits = index.knn(&query, k.min(index.len()))?;
    if a.exclude_self {
        hits.retain(|h| h.key != key);
    }
    hits.truncate(a.k);
    let out: Vec<Value> = hits
        .iter()
        .map(|h| json!({"key": h.key.to_string(), "distance": h.distance}))
        .collect();
    emit_json(None, &json!({"query": key.to_string(), "neighbors": out}))
}

fn run_cluster(a: &ClusterArgs) -> CliResult<()> {
    echo_config("cluster", a);
    let index = EmbeddingIndex::load(&a.index)?;
    let cfg = KMeansConfig {
        k: a.k,
        max_iters: a.iters,
        seed: a.seed,
    };
    let res = kmeans(&index.vectors, &cfg)?;
    log::info!(
        "k-means: {} iterations, converged {}, inertia {:.6}",
        res.iterations,
        res.converged,
        res.inertia()
    );
    let map: BTreeMap<String, usize> = index
        .keys
        .iter()
        .zip(&res.assignments)
        .map(|(k, &c)| (k.to_string(), c))
        .collect();
    emit_json(a.out.as_deref(), &map)
}

enum Answer {
    Ranking(Vec<String>),
    Class(String),
}

fn read_answers(path: &Path, fields: &[&str]) -> CliResult<Vec<(String, Answer)>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| CliError::Data(format!("{}:{}: {m}", path.display(), n + 1));
        let v: Value = serde_json::from_str(&line).map_err(|e| bad(&e.to_string()))?;
        let id = match v.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(x)) => x.to_string(),
            _ => return Err(bad("missing `id`")),
        };
        let field = fields
            .iter()
            .find_map(|f| v.get(*f))
            .ok_or_else(|| bad(&format!("expected one of {fields:?}")))?;
        let ans = match field {
            Value::String(s) => Answer::Class(s.clone()),
            Value::Array(xs) => Answer::Ranking(
                xs.iter()
                    .map(|x| match x {
                        Value::String(s) => Ok(s.clone()),
                        other => Ok(other.to_string()),
                    })
                    .collect::<CliResult<_>>()?,
            ),
            _ => return Err(bad("labels must be a string or a list")),
        };
        out.push((id, ans));
    }
    Ok(out)
}

fn run_eval(a: &EvalArgs) -> CliResult<()> {
    echo_config("eval", a);
    let preds = read_answers(&a.pred, &["ranking", "pred", "label"])?;
    let gold: HashMap<String, Answer> = read_answers(&a.gold, &["gold", "label"])?.into_iter().collect();
    let mut rankings = Vec::new();
    let mut golds = Vec::new();
    let mut cls_pred = Vec::new();
    let mut cls_gold = Vec::new();
    let mut missing = 0;
    for (id, p) in preds {
        match (p, gold.get(&id)) {
            (_, None) => missing += 1,
            (Answer::Ranking(r), Some(Answer::Ranking(g))) => {
                rankings.push(r);
                golds.push(g.clone());
            }
            (Answer::Class(c), Some(Answer::Class(g))) => {
                cls_pred.push(c);
                cls_gold.push(g.clone());
            }
            _ => {
                return Err(CliError::Data(format!(
                    "query `{id}`: prediction and gold disagree on ranking vs class format"
                )))
            }
        }
    }
    if missing > 0 {
        log::warn!("{missing} predictions have no gold entry");
    }
    if !rankings.is_empty() && !cls_pred.is_empty() {
        return Err(CliError::Data("mixed ranking and class predictions".into()));
    }
    let report = if !cls_pred.is_empty() {
        let mut classes: Vec<String> = cls_gold.iter().chain(&cls_pred).cloned().collect();
        classes.sort();
        classes.dedup();
        MetricReport::classification(&cls_pred, &cls_gold, &classes)?
    } else if !rankings.is_empty() {
        MetricReport::ranking(&rankings, &golds)?
    } else {
        return Err(CliError::Data("no predictions matched a gold entry".into()));
    };
    emit_json(a.out.as_deref(), &report)
}
