//! Exact nearest-neighbour search and k-means over table embeddings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Table;
use crate::encoder::{extract_embedding, EmbeddingKind};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::checkpoint::{read_tensor_file, write_tensor_file, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Which embeddings to take from each encoded table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSelector {
    Cell,
    Row,
    Column,
    Table,
}

impl FromStr for KindSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell" => Ok(KindSelector::Cell),
            "row" => Ok(KindSelector::Row),
            "column" | "col" => Ok(KindSelector::Column),
            "table" => Ok(KindSelector::Table),
            other => Err(Error::Config(format!("unknown embedding kind `{other}`"))),
        }
    }
}

impl KindSelector {
    /// Every embedding of this kind in a CLS-augmented `rows × cols` grid.
    pub fn kinds(self, rows: usize, cols: usize) -> Vec<EmbeddingKind> {
        match self {
            KindSelector::Cell => (1..rows)
                .flat_map(|row| (1..cols).map(move |col| EmbeddingKind::Cell { row, col }))
                .collect(),
            KindSelector::Row => (1..rows).map(|row| EmbeddingKind::Row { row }).collect(),
            KindSelector::Column => (1..cols).map(|col| EmbeddingKind::Column { col }).collect(),
            KindSelector::Table => vec![EmbeddingKind::Table],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmbeddingKey {
    pub table: String,
    #[serde(flatten)]
    pub kind: EmbeddingKind,
}

impl fmt::Display for EmbeddingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EmbeddingKind::Cell { row, col } => write!(f, "{}/cell/{row}/{col}", self.table),
            EmbeddingKind::Row { row } => write!(f, "{}/row/{row}", self.table),
            EmbeddingKind::Column { col } => write!(f, "{}/column/{col}", self.table),
            EmbeddingKind::Table => write!(f, "{}/table", self.table),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub metric: Metric,
    pub dim: usize,
    pub keys: Vec<EmbeddingKey>,
    pub vectors: Vec<Vec<f32>>,
    /// Vectors rejected on insertion (zero vectors under cosine).
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub key: EmbeddingKey,
    pub distance: f64,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
}

fn distance(metric: Metric, a: &[f32], b: &[f32]) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
            .sum::<f64>()
            .sqrt(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
            1.0 - dot / (norm(a) * norm(b))
        }
    }
}

impl EmbeddingIndex {
    pub fn new(metric: Metric, dim: usize) -> Self {
        EmbeddingIndex {
            metric,
            dim,
            keys: Vec::new(),
            vectors: Vec::new(),
            excluded: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Adds a vector; returns false when it is excluded.
    pub fn insert(&mut self, key: EmbeddingKey, v: Vec<f32>) -> Result<bool> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector of width {} in a {}-d index",
                v.len(),
                self.dim
            )));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding {key}")));
        }
        if self.metric == Metric::Cosine && norm(&v) == 0.0 {
            log::warn!("excluding zero vector {key} from cosine index");
            self.excluded += 1;
            return Ok(false);
        }
        self.keys.push(key);
        self.vectors.push(v);
        Ok(true)
    }

    pub fn get(&self, key: &EmbeddingKey) -> Option<&[f32]> {
        self.keys
            .iter()
            .position(|k| k == key)
            .map(|i| self.vectors[i].as_slice())
    }

    /// Exact k nearest neighbours; equal distances are ordered by key.
    pub fn knn(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        if self.is_empty() {
            return Err(Error::Data("nearest-neighbour search on an empty index".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query of width {} in a {}-d index",
                query.len(),
                self.dim
            )));
        }
        if k > self.len() {
            return Err(Error::OutOfRange(format!("k = {k} exceeds index size {}", self.len())));
        }
        if self.metric == Metric::Cosine && norm(query) == 0.0 {
            return Err(Error::Data("cosine search with a zero query vector".into()));
        }
        let dists: Vec<f64> = self
            .vectors
            .par_iter()
            .map(|v| distance(self.metric, query, v))
            .collect();
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            dists[a]
                .total_cmp(&dists[b])
                .then_with(|| self.keys[a].cmp(&self.keys[b]))
        });
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| Neighbor {
                key: self.keys[i].clone(),
                distance: dists[i],
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({
            "format_version": FORMAT_VERSION,
            "kind": "index",
            "metric": self.metric,
            "dim": self.dim,
            "excluded": self.excluded,
            "keys": self.keys,
        });
        let flat: Vec<f32> = self.vectors.iter().flatten().copied().collect();
        let shape = [self.len(), self.dim];
        write_tensor_file(path, &meta, [("vectors", &shape[..], flat)])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            format_version: u32,
            kind: String,
            metric: Metric,
            dim: usize,
            #[serde(default)]
            excluded: usize,
            keys: Vec<EmbeddingKey>,
        }
        let (meta, tensors) = read_tensor_file(path)?;
        let meta: Meta = serde_json::from_value(meta).map_err(|e| Error::Checkpoint(format!("index metadata: {e}")))?;
        if meta.format_version != FORMAT_VERSION || meta.kind != "index" {
            return Err(Error::Checkpoint(format!(
                "not a version {FORMAT_VERSION} index file (kind `{}`, version {})",
                meta.kind, meta.format_version
            )));
        }
        let [t] = tensors.as_slice() else {
            return Err(Error::Checkpoint("index file must hold exactly one tensor".into()));
        };
        if t.name != "vectors" || t.shape != [meta.keys.len(), meta.dim] {
            return Err(Error::Checkpoint("index tensor does not match its key table".into()));
        }
        let vectors = if meta.dim == 0 {
            vec![Vec::new(); meta.keys.len()]
        } else {
            t.data.chunks(meta.dim).map(<[f32]>::to_vec).collect()
        };
        Ok(EmbeddingIndex {
            metric: meta.metric,
            dim: meta.dim,
            keys: meta.keys,
            vectors,
            excluded: meta.excluded,
        })
    }
}

/// Embeddings of one table, keyed.
pub fn table_embeddings(
    model: &Model<f32>,
    t: &Table,
    kind: KindSelector,
    include_header: bool,
) -> Result<Vec<(EmbeddingKey, Vec<f32>)>> {
    let enc = model.encode_table(t, include_header)?;
    kind.kinds(enc.rows(), enc.cols())
        .into_iter()
        .map(|k| {
            Ok((
                EmbeddingKey {
                    table: t.id.clone(),
                    kind: k,
                },
                extract_embedding(&enc, k)?,
            ))
        })
        .collect()
}

/// Encodes every table and indexes the requested embeddings in corpus order.
pub fn build_index(
    tables: &[Table],
    model: &Model<f32>,
    kind: KindSelector,
    metric: Metric,
    include_header: bool,
) -> Result<EmbeddingIndex> {
    let per_table: Vec<Result<Vec<_>>> = tables
        .par_iter()
        .map(|t| table_embeddings(model, t, kind, include_header))
        .collect();
    let mut index = EmbeddingIndex::new(metric, model.hidden());
    for entries in per_table {
        for (k, v) in entries? {
            index.insert(k, v)?;
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 1024,
            max_iters: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Closest centroid (lowest index on ties) and its squared distance.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.iter().enumerate() {
        let d = sq_dist(p, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd's algorithm from a k-means++ start. Empty clusters are moved to the
/// point farthest from its centroid.
pub fn kmeans(vectors: &[Vec<f32>], cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = vectors.len();
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::Config(format!("k = {} must lie in 1..={n}", cfg.k)));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("k-means input vectors differ in width".into()));
    }
    let points: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().map(|&x| f64::from(x)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = kmeans_pp(&points, cfg.k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let nearest_all: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let next: Vec<usize> = nearest_all.iter().map(|x| x.0).collect();
        history.push(nearest_all.iter().map(|x| x.1).sum());
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        if iterations == cfg.max_iters {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut dists: Vec<f64> = nearest_all.iter().map(|x| x.1).collect();
        for c in 0..cfg.k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = dists
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|x| x.0)
                    .unwrap_or(0);
                log::debug!("re-seeding empty cluster {c} at point {far}");
                centroids[c] = points[far].clone();
                dists[far] = 0.0;
            }
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_history: history,
        iterations,
        converged,
    })
}
