//! Fine-tuning heads and evaluation: column population, row population,
//! column type prediction, and corrupt-cell detection.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{truncate_table, Table, TruncationLimits};
use crate::corruption::{CorruptionRecord, CorruptionTag};
use crate::encoder::augment_with_cls;
use crate::error::{Error, Result};
use crate::metrics::{binary_prf, rank_labels, MetricReport, Prf, RankedPrediction};
use crate::model::Model;
use crate::params::{zeros_like, FinetuneParams, Linear, ParamSet, INIT_STD};
use crate::training::adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::training::checkpoint::{model_from_tensors, parse_meta, read_tensor_file, write_params, NamedTensor};
use crate::training::checkpoint::{CheckpointMeta, FORMAT_VERSION};
use crate::training::objective::{cell_probabilities, sigmoid};
use crate::util::derived_rng;

/// Examples per gradient partial sum; reduced in a fixed order.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ColPop,
    RowPop,
    ColType,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ColPop => "col_pop",
            TaskKind::RowPop => "row_pop",
            TaskKind::ColType => "col_type",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "col_pop" | "colpop" => Ok(TaskKind::ColPop),
            "row_pop" | "rowpop" => Ok(TaskKind::RowPop),
            "col_type" | "coltype" => Ok(TaskKind::ColType),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Training objective for the multi-label population tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiLabelLoss {
    /// Softmax cross-entropy against a uniform distribution over gold labels.
    SoftmaxUniform,
    /// Independent sigmoid cross-entropy per label.
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSpec {
    pub task: TaskKind,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub label_space: Vec<String>,
    /// Seed columns (col_pop) or seed rows (row_pop); unused for col_type.
    pub n_seed: usize,
    /// Sampled negatives per row-population example.
    pub neg_samples: usize,
    pub loss: MultiLabelLoss,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl FinetuneSpec {
    /// Batch size, learning rate and epoch budget of each task.
    pub fn defaults(task: TaskKind, label_space: Vec<String>) -> Self {
        let (batch_size, lr, max_epochs) = match task {
            TaskKind::ColPop => (12, 1e-5, 20),
            TaskKind::RowPop => (48, 2e-5, 30),
            TaskKind::ColType => (12, 2e-5, 15),
        };
        FinetuneSpec {
            task,
            batch_size,
            lr,
            max_epochs,
            label_space,
            n_seed: 1,
            neg_samples: 64,
            loss: MultiLabelLoss::SoftmaxUniform,
            seed: 0,
            clip_norm: Some(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_space.is_empty() {
            return Err(Error::Config("empty label space".into()));
        }
        let distinct: HashSet<&String> = self.label_space.iter().collect();
        if distinct.len() != self.label_space.len() {
            return Err(Error::Config("label space contains duplicates".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.task != TaskKind::ColType && self.n_seed == 0 {
            return Err(Error::Config("n_seed must be positive".into()));
        }
        Ok(())
    }

    /// Input width of the task head for hidden size `h`.
    pub fn head_inputs(&self, h: usize) -> usize {
        match self.task {
            TaskKind::ColPop => self.n_seed * h,
            TaskKind::RowPop | TaskKind::ColType => h,
        }
    }

    pub fn label_index(&self) -> HashMap<&str, usize> {
        self.label_space
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect()
    }
}

/// Labels seen at least `min_count` times, sorted lexicographically.
pub fn build_label_space<'a>(values: impl IntoIterator<Item = &'a str>, min_count: usize) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut out: Vec<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(v, _)| v.to_owned())
        .collect();
    out.sort();
    out
}

/// One fine-tuning or evaluation instance. `input` is the table exactly as
/// encoded: the seed sub-table for population tasks, the header-stripped
/// table for column typing.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskExample {
    pub id: String,
    pub input: Table,
    /// Gold label indices (exactly one for col_type).
    pub gold: Vec<usize>,
    /// Column to classify (col_type only), 0-based.
    pub column: usize,
}

/// A task dataset line: a corpus table plus task fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    #[serde(flatten)]
    pub table: Table,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_headers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_entities: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col_index: Option<usize>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub col_type: Option<String>,
}

impl TaskRecord {
    pub fn plain(table: Table) -> Self {
        TaskRecord {
            table,
            seed_cols: None,
            gold_headers: None,
            seed_rows: None,
            gold_entities: None,
            col_index: None,
            col_type: None,
        }
    }
}

/// Reads task records, skipping (and counting) lines that do not parse or
/// whose table is invalid.
pub fn load_task_records(path: impl AsRef<Path>, limits: &TruncationLimits) -> Result<(Vec<TaskRecord>, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut skipped = 0;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TaskRecord>(&line) {
            Ok(mut r) => match r.table.validate() {
                Ok(()) => {
                    r.table = truncate_table(&r.table, limits);
                    out.push(r);
                }
                Err(e) => {
                    log::warn!("{}:{}: {e}", path.display(), n + 1);
                    skipped += 1;
                }
            },
            Err(e) => {
                log::warn!("{}:{}: {e}", path.display(), n + 1);
                skipped += 1;
            }
        }
    }
    Ok((out, skipped))
}

/// Turns task records into examples for `spec`. Records lacking the task's
/// fields or unusable for it are skipped with a diagnostic.
pub fn build_examples(spec: &FinetuneSpec, records: &[TaskRecord]) -> Vec<TaskExample> {
    let labels = spec.label_index();
    let lookup = |xs: &[String]| -> Vec<usize> {
        let mut g: Vec<usize> = xs.iter().filter_map(|x| labels.get(x.as_str()).copied()).collect();
        g.sort_unstable();
        g.dedup();
        g
    };
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let t = &r.table;
        let ex = match spec.task {
            TaskKind::ColPop => {
                let n = r.seed_cols.unwrap_or(spec.n_seed);
                if n != spec.n_seed || t.num_cols() < n {
                    log::warn!("{}: needs {} seed columns, skipped", t.id, spec.n_seed);
                    continue;
                }
                let gold = match &r.gold_headers {
                    Some(g) => lookup(g),
                    None => match &t.header {
                        Some(h) => lookup(&h[n..]),
                        None => {
                            log::warn!("{}: no gold headers, skipped", t.id);
                            continue;
                        }
                    },
                };
                TaskExample {
                    id: t.id.clone(),
                    input: t.first_columns(n),
                    gold,
                    column: 0,
                }
            }
            TaskKind::RowPop => {
                let n = r.seed_rows.unwrap_or(spec.n_seed);
                if n != spec.n_seed || t.num_rows() < n {
                    log::warn!("{}: needs {} seed rows, skipped", t.id, spec.n_seed);
                    continue;
                }
                let gold = match &r.gold_entities {
                    Some(g) => lookup(g),
                    None => {
                        let rest: Vec<String> = t.rows[n..].iter().map(|row| row[0].clone()).collect();
                        lookup(&rest)
                    }
                };
                let input = t.first_rows(n);
                if input.rows.iter().all(|row| row[0].is_empty()) {
                    log::warn!("{}: empty entity column, skipped", t.id);
                    continue;
                }
                TaskExample {
                    id: t.id.clone(),
                    input,
                    gold,
                    column: 0,
                }
            }
            TaskKind::ColType => {
                let (Some(j), Some(ty)) = (r.col_index, r.col_type.as_deref()) else {
                    log::warn!("{}: missing col_index/type, skipped", t.id);
                    continue;
                };
                let Some(&label) = labels.get(ty) else {
                    log::warn!("{}: type `{ty}` not in the label space, skipped", t.id);
                    continue;
                };
                if j >= t.num_cols() {
                    log::warn!("{}: column {j} out of range, skipped", t.id);
                    continue;
                }
                TaskExample {
                    id: t.id.clone(),
                    input: t.without_header(),
                    gold: vec![label],
                    column: j,
                }
            }
        };
        out.push(ex);
    }
    out
}

/// A fine-tuned model: encoder plus task head.
pub struct TaskModel {
    pub spec: FinetuneSpec,
    pub model: Model<f32>,
    pub head: Linear<f32>,
}

struct Forward {
    pass: crate::model::ForwardPass<f32>,
    /// Grid positions feeding the head, in input order.
    sources: Vec<(usize, usize)>,
    input: Array1<f32>,
    logits: Vec<f64>,
}

impl TaskModel {
    /// A zero-initialised head over `model`.
    pub fn new(spec: FinetuneSpec, model: Model<f32>) -> Result<Self> {
        spec.validate()?;
        let head = Linear::zeros(spec.head_inputs(model.hidden()), spec.label_space.len());
        Ok(TaskModel { spec, model, head })
    }

    /// A head initialised with small random weights.
    pub fn with_random_head(spec: FinetuneSpec, model: Model<f32>) -> Result<Self> {
        spec.validate()?;
        let mut rng = derived_rng(spec.seed, &[b"head"]);
        let head = Linear::init(
            spec.head_inputs(model.hidden()),
            spec.label_space.len(),
            INIT_STD,
            &mut rng,
        );
        Ok(TaskModel { spec, model, head })
    }

    fn sources(&self, ex: &TaskExample) -> Result<Vec<(usize, usize)>> {
        match self.spec.task {
            TaskKind::ColPop => {
                if ex.input.num_cols() < self.spec.n_seed {
                    return Err(Error::Data(format!(
                        "{}: fewer than {} seed columns",
                        ex.id, self.spec.n_seed
                    )));
                }
                Ok((1..=self.spec.n_seed).map(|j| (0, j)).collect())
            }
            TaskKind::RowPop => Ok(vec![(0, 1)]),
            TaskKind::ColType => {
                if ex.column >= ex.input.num_cols() {
                    return Err(Error::OutOfRange(format!(
                        "column {} of a {}-column table",
                        ex.column,
                        ex.input.num_cols()
                    )));
                }
                Ok(vec![(0, ex.column + 1)])
            }
        }
    }

    fn forward(&self, ex: &TaskExample, rng: Option<&mut dyn RngCore>) -> Result<Forward> {
        let sources = self.sources(ex)?;
        let include_header = self.spec.task != TaskKind::ColType;
        let pass = self.model.forward(augment_with_cls(&ex.input, include_header), rng)?;
        let h = self.model.hidden();
        let mut input = Array1::zeros(sources.len() * h);
        for (k, &(i, j)) in sources.iter().enumerate() {
            input
                .slice_mut(ndarray::s![k * h..(k + 1) * h])
                .assign(&pass.encoding.cells.cell(i, j));
        }
        let mut z = input.dot(&self.head.weight);
        z += &self.head.bias;
        let logits = z.iter().map(|&v| f64::from(v)).collect();
        Ok(Forward {
            pass,
            sources,
            input,
            logits,
        })
    }

    /// Raw label scores: logits for population tasks, class probabilities for column typing.
    pub fn scores(&self, ex: &TaskExample) -> Result<Vec<f64>> {
        let f = self.forward(ex, None)?;
        Ok(match self.spec.task {
            TaskKind::ColType => softmax(&f.logits),
            _ => f.logits,
        })
    }

    /// Loss of one example and its gradient with respect to the logits.
    fn loss_grad<R: Rng + ?Sized>(&self, logits: &[f64], gold: &[usize], rng: &mut R) -> (f64, Vec<f64>) {
        let n = logits.len();
        let mut d = vec![0.0; n];
        if gold.is_empty() {
            return (0.0, d);
        }
        match (self.spec.task, self.spec.loss) {
            (TaskKind::ColType, _) | (TaskKind::ColPop, MultiLabelLoss::SoftmaxUniform) => {
                let p = softmax(logits);
                let share = 1.0 / gold.len() as f64;
                let mut loss = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    d[k] = *pk;
                }
                for &g in gold {
                    loss -= share * p[g].max(f64::MIN_POSITIVE).ln();
                    d[g] -= share;
                }
                (loss, d)
            }
            (TaskKind::ColPop, MultiLabelLoss::Bce) => {
                let gold: HashSet<usize> = gold.iter().copied().collect();
                let mut loss = 0.0;
                for (k, &z) in logits.iter().enumerate() {
                    let y = gold.contains(&k);
                    loss += bce_logit(z, y);
                    d[k] = (sigmoid(z) - f64::from(u8::from(y))) / n as f64;
                }
                (loss / n as f64, d)
            }
            (TaskKind::RowPop, _) => {
                let picked = sampled_labels(n, gold, self.spec.neg_samples, rng);
                let m = picked.len() as f64;
                let mut loss = 0.0;
                for (k, y) in picked {
                    loss += bce_logit(logits[k], y);
                    d[k] += (sigmoid(logits[k]) - f64::from(u8::from(y))) / m;
                }
                (loss / m, d)
            }
        }
    }

    /// Mean loss over a batch and the gradient of that mean.
    fn batch_gradients(&self, batch: &[&TaskExample], step: u64) -> Result<(f64, FinetuneParams<f32>)> {
        let zero = FinetuneParams {
            model: zeros_like(&self.model.params),
            head: Linear::zeros(self.head.inputs(), self.head.outputs()),
        };
        let partials: Vec<Result<(f64, usize, FinetuneParams<f32>)>> = batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut g = zero.clone();
                let mut loss = 0.0;
                let mut used = 0;
                for (k, ex) in chunk.iter().enumerate() {
                    if ex.gold.is_empty() {
                        continue;
                    }
                    let idx = ((c * CHUNK + k) as u64).to_le_bytes();
                    let mut rng = derived_rng(self.spec.seed, &[b"finetune", &step.to_le_bytes(), &idx]);
                    let dropout = self.model.config.encoder.dropout > 0.0;
                    let mut drop_rng = derived_rng(self.spec.seed, &[b"dropout", &step.to_le_bytes(), &idx]);
                    let f = self.forward(ex, dropout.then_some(&mut drop_rng as &mut dyn RngCore))?;
                    let (l, dz) = self.loss_grad(&f.logits, &ex.gold, &mut rng);
                    loss += l;
                    used += 1;
                    self.backward(&f, &dz, &mut g);
                }
                Ok((loss, used, g))
            })
            .collect();
        let mut total = zero;
        let mut loss = 0.0;
        let mut used = 0;
        for p in partials {
            let (l, n, g) = p?;
            loss += l;
            used += n;
            total.add_scaled(&g, 1.0);
        }
        if used == 0 {
            return Ok((0.0, total));
        }
        total.scale(1.0 / used as f32);
        Ok((loss / used as f64, total))
    }

    fn backward(&self, f: &Forward, dz: &[f64], g: &mut FinetuneParams<f32>) {
        let dz = Array1::from_iter(dz.iter().map(|&v| v as f32));
        let x = f.input.view().insert_axis(ndarray::Axis(1));
        let dzr = dz.view().insert_axis(ndarray::Axis(0));
        g.head.weight += &x.dot(&dzr);
        g.head.bias += &dz;
        let dx = self.head.weight.dot(&dz);
        let cells = &f.pass.encoding.cells;
        let h = self.model.hidden();
        let mut d_out = Array2::<f32>::zeros(cells.data.dim());
        for (k, &(i, j)) in f.sources.iter().enumerate() {
            let mut row = d_out.row_mut(cells.index(i, j));
            row += &dx.slice(ndarray::s![k * h..(k + 1) * h]);
        }
        self.model.backward(&f.pass, &d_out, &mut g.model);
    }

    fn params(&self) -> FinetuneParams<f32> {
        FinetuneParams {
            model: self.model.params.clone(),
            head: self.head.clone(),
        }
    }

    fn set_params(&mut self, p: FinetuneParams<f32>) -> Result<()> {
        self.model = self.model.with_params(p.model)?;
        self.head = p.head;
        Ok(())
    }

    pub fn predictions(&self, examples: &[TaskExample]) -> Result<Vec<RankedPrediction>> {
        examples
            .par_iter()
            .map(|ex| RankedPrediction::new(self.scores(ex)?, ex.gold.clone()))
            .collect()
    }

    /// Ranking metrics for population tasks; weighted F1 and accuracy for column typing.
    pub fn evaluate(&self, examples: &[TaskExample]) -> Result<MetricReport> {
        let preds = self.predictions(examples)?;
        match self.spec.task {
            TaskKind::ColType => {
                if preds.is_empty() {
                    return Err(Error::Data("no column-type examples to evaluate".into()));
                }
                let predicted: Vec<usize> = preds.iter().map(|p| rank_labels(&p.scores)[0]).collect();
                let gold: Vec<usize> = preds.iter().map(|p| p.gold[0]).collect();
                let classes: Vec<usize> = (0..self.spec.label_space.len()).collect();
                MetricReport::classification(&predicted, &gold, &classes)
            }
            _ => MetricReport::from_predictions(&preds),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({
            "format_version": FORMAT_VERSION,
            "kind": "task",
            "model": self.model.config,
            "spec": self.spec,
        });
        write_params(path, &meta, &self.params())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (meta, tensors) = read_tensor_file(path)?;
        let kind = meta.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_owned();
        if kind != "task" {
            return Err(Error::Checkpoint(format!("expected a task checkpoint, found `{kind}`")));
        }
        let spec: FinetuneSpec = serde_json::from_value(meta.get("spec").cloned().unwrap_or_default())
            .map_err(|e| Error::Checkpoint(format!("task spec: {e}")))?;
        let mut base = meta.clone();
        base["kind"] = "pretrain".into();
        let base: CheckpointMeta = parse_meta(&base)?;
        let (head, rest): (Vec<NamedTensor>, Vec<NamedTensor>) =
            tensors.into_iter().partition(|t| t.name.starts_with("head."));
        let model = model_from_tensors(&base.model, &rest)?;
        let mut tm = TaskModel::new(spec, model)?;
        crate::training::checkpoint::fill_params(&mut tm.head, &head)?;
        Ok(tm)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Numerically stable −[y log σ(z) + (1−y) log(1−σ(z))].
fn bce_logit(z: f64, y: bool) -> f64 {
    let m = if y { -z } else { z };
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

/// Gold labels (positive) plus up to `neg` distinct non-gold labels drawn
/// uniformly (negative).
fn sampled_labels<R: Rng + ?Sized>(n: usize, gold: &[usize], neg: usize, rng: &mut R) -> Vec<(usize, bool)> {
    let gold_set: HashSet<usize> = gold.iter().copied().collect();
    let mut out: Vec<(usize, bool)> = gold.iter().map(|&g| (g, true)).collect();
    let free = n - gold_set.len();
    let want = neg.min(free);
    if want == 0 {
        return out;
    }
    if want * 2 >= free {
        let mut pool: Vec<usize> = (0..n).filter(|k| !gold_set.contains(k)).collect();
        pool.shuffle(rng);
        out.extend(pool.into_iter().take(want).map(|k| (k, false)));
    } else {
        let mut seen = HashSet::new();
        while seen.len() < want {
            let k = rng.random_range(0..n);
            if !gold_set.contains(&k) && seen.insert(k) {
                out.push((k, false));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub test: Option<MetricReport>,
}

fn selection_score(task: TaskKind, r: &MetricReport) -> f64 {
    match task {
        TaskKind::ColType => r.weighted_f1.unwrap_or(0.0),
        _ => r.map.unwrap_or(0.0),
    }
}

/// Fine-tunes every parameter of `tm` and keeps the parameters that score
/// best on `val` (MAP for population tasks, weighted F1 for column typing).
/// Epoch 0 in the history is the model before any update.
pub fn finetune(
    tm: &mut TaskModel,
    train: &[TaskExample],
    val: &[TaskExample],
    test: Option<&[TaskExample]>,
) -> Result<FinetuneOutcome> {
    let spec = tm.spec.clone();
    let mut adam = AdamState::new(&tm.params(), AdamConfig::with_lr(spec.lr));
    let score = |tm: &TaskModel| -> Result<f64> {
        if val.is_empty() {
            Ok(0.0)
        } else {
            Ok(selection_score(spec.task, &tm.evaluate(val)?))
        }
    };
    let mut best = (score(tm)?, 0, tm.params());
    let mut history = vec![EpochLog {
        epoch: 0,
        train_loss: f64::NAN,
        val_score: best.0,
    }];
    let mut step = 0u64;
    for epoch in 1..=spec.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut derived_rng(spec.seed, &[b"order", &(epoch as u64).to_le_bytes()]));
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(spec.batch_size) {
            let batch: Vec<&TaskExample> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = tm.batch_gradients(&batch, step)?;
            step += 1;
            if let Some(max) = spec.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            if !tm.model.config.classifier_bias {
                grads.model.classifier_b.fill(0.0);
            }
            let mut p = tm.params();
            adam_step(&mut p, &grads, &mut adam)?;
            tm.set_params(p)?;
            sum += loss;
            batches += 1;
        }
        let val_score = score(tm)?;
        let train_loss = if batches == 0 { 0.0 } else { sum / batches as f64 };
        log::info!(
            "{} epoch {epoch} train loss {train_loss:.5} val {val_score:.4}",
            spec.task
        );
        history.push(EpochLog {
            epoch,
            train_loss,
            val_score,
        });
        if val_score > best.0 {
            best = (val_score, epoch, tm.params());
        }
    }
    let best_epoch = best.1;
    tm.set_params(best.2)?;
    let test = test.map(|t| tm.evaluate(t)).transpose()?;
    Ok(FinetuneOutcome {
        best_epoch,
        history,
        test,
    })
}

/// Per-cell corruption probabilities and flags of one table, in content
/// coordinates (header row first when present). A cell is flagged when its
/// probability exceeds `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: String,
    pub probabilities: Vec<Vec<f64>>,
    pub flags: Vec<Vec<bool>>,
}

pub fn detect_corruption(model: &Model<f32>, t: &Table, threshold: f64) -> Result<Detection> {
    let probabilities = cell_probabilities(model, t)?;
    let flags = probabilities
        .iter()
        .map(|r| r.iter().map(|&p| p > threshold).collect())
        .collect();
    Ok(Detection {
        id: t.id.clone(),
        probabilities,
        flags,
    })
}

/// Precision/recall/F1 overall (`"all"`) and per corruption tag. A tag's
/// scores are computed over the cells that are clean or carry that tag.
pub fn evaluate_detection(
    model: &Model<f32>,
    records: &[CorruptionRecord],
    threshold: f64,
) -> Result<BTreeMap<String, Prf>> {
    let detections: Vec<Detection> = records
        .par_iter()
        .map(|r| detect_corruption(model, &r.table, threshold))
        .collect::<Result<_>>()?;
    Ok(score_detections(records, &detections))
}

pub fn score_detections(records: &[CorruptionRecord], detections: &[Detection]) -> BTreeMap<String, Prf> {
    let mut flags_all = Vec::new();
    let mut labels_all = Vec::new();
    let mut per_tag: BTreeMap<CorruptionTag, (Vec<bool>, Vec<bool>)> = BTreeMap::new();
    for (rec, det) in records.iter().zip(detections) {
        for ((lrow, trow), frow) in rec.labels.iter().zip(&rec.tags).zip(&det.flags) {
            for ((&l, &tag), &f) in lrow.iter().zip(trow).zip(frow) {
                flags_all.push(f);
                labels_all.push(l);
                for t in CorruptionTag::ALL {
                    if tag.is_none() || tag == Some(t) {
                        let e = per_tag.entry(t).or_default();
                        e.0.push(f);
                        e.1.push(l);
                    }
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    out.insert(
        "all".to_owned(),
        binary_prf(&flags_all, &labels_all).expect("equal lengths"),
    );
    for (t, (f, l)) in per_tag {
        if l.iter().any(|&x| x) {
            out.insert(t.as_str().to_owned(), binary_prf(&f, &l).expect("equal lengths"));
        }
    }
    out
}

/// Column-type records from typed tables: one record per column.
pub fn coltype_records(tables: &[(Table, Vec<String>)]) -> Vec<TaskRecord> {
    tables
        .iter()
        .flat_map(|(t, types)| {
            types.iter().enumerate().map(move |(j, ty)| TaskRecord {
                col_index: Some(j),
                col_type: Some(ty.clone()),
                ..TaskRecord::plain(t.clone())
            })
        })
        .collect()
}

/// Picks `k` of `n` indices uniformly; a helper for subsampling datasets.
pub fn subsample<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut v = sample(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}
