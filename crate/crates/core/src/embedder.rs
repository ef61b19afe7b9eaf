//! Frozen out-of-context cell embedder and learned positional embeddings.
//!
//! Cells are embedded by hashing their character n-grams into a fixed table
//! of pseudo-random unit vectors. The table is derived from the seed alone and
//! is never trained.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::CellGrid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub hidden_dim: usize,
    pub ngram_orders: Vec<usize>,
    pub hash_buckets: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            hidden_dim: 64,
            ngram_orders: vec![1, 2, 3, 4, 5],
            hash_buckets: 1 << 16,
            seed: 0x7ab1e,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.hash_buckets == 0 {
            return Err(Error::Config(
                "embedder hidden_dim and hash_buckets must be positive".into(),
            ));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Config("ngram orders must be non-empty and positive".into()));
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, chars: &[char]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut eat = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    };
    seed.to_le_bytes().into_iter().for_each(&mut eat);
    let mut buf = [0u8; 4];
    for c in chars {
        c.encode_utf8(&mut buf).bytes().for_each(&mut eat);
    }
    h
}

/// Character n-grams of `text` wrapped in `<`/`>` boundary markers, so prefixes
/// and suffixes hash differently from interior n-grams. Empty text has none.
pub fn char_ngrams(text: &str, orders: &[usize]) -> Vec<Vec<char>> {
    if text.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = std::iter::once('<')
        .chain(text.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for &n in orders {
        if n == 0 || n > chars.len() {
            continue;
        }
        out.extend(chars.windows(n).map(<[char]>::to_vec));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Embedder {
    cfg: EmbedderConfig,
    // hash_buckets × hidden_dim, rows are unit vectors
    buckets: Vec<f32>,
}

impl Embedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut buckets = vec![0f32; cfg.hash_buckets * h];
        for row in buckets.chunks_mut(h) {
            let mut norm = 0.0f64;
            for v in row.iter_mut() {
                let x: f64 = StandardNormal.sample(&mut rng);
                *v = x as f32;
                norm += x * x;
            }
            let inv = if norm > 0.0 { 1.0 / norm.sqrt() } else { 0.0 };
            row.iter_mut().for_each(|v| *v = (f64::from(*v) * inv) as f32);
        }
        Ok(Embedder { cfg, buckets })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.hidden_dim
    }

    pub fn bucket_of(&self, gram: &[char]) -> usize {
        (fnv1a(self.cfg.seed, gram) % self.cfg.hash_buckets as u64) as usize
    }

    pub fn bucket_vector(&self, bucket: usize) -> &[f32] {
        let h = self.cfg.hidden_dim;
        &self.buckets[bucket * h..(bucket + 1) * h]
    }

    /// Sum of the bucket vectors of every n-gram, scaled by 1/sqrt(n-gram count).
    pub fn embed_cell(&self, text: &str) -> Vec<f32> {
        let h = self.cfg.hidden_dim;
        let grams = char_ngrams(text, &self.cfg.ngram_orders);
        let mut acc = vec![0f64; h];
        for g in &grams {
            let v = self.bucket_vector(self.bucket_of(g));
            acc.iter_mut().zip(v).for_each(|(a, &b)| *a += f64::from(b));
        }
        let scale = 1.0 / (grams.len().max(1) as f64).sqrt();
        acc.into_iter().map(|a| (a * scale) as f32).collect()
    }
}

/// Learned row and column position tables. Index 0 is the CLS row/column.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEmbeddings<T> {
    pub rows: Array2<T>,
    pub cols: Array2<T>,
}

impl<T: Scalar> PositionalEmbeddings<T> {
    pub fn zeros(row_positions: usize, col_positions: usize, hidden: usize) -> Self {
        PositionalEmbeddings {
            rows: Array2::zeros((row_positions, hidden)),
            cols: Array2::zeros((col_positions, hidden)),
        }
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, T> {
        self.rows.row(i)
    }

    pub fn col(&self, j: usize) -> ndarray::ArrayView1<'_, T> {
        self.cols.row(j)
    }
}

/// Adds `p_row[i] + p_col[j]` to every grid position `(i, j)`.
pub fn apply_positions<T: Scalar>(grid: &CellGrid<T>, pos: &PositionalEmbeddings<T>) -> Result<CellGrid<T>> {
    if grid.rows > pos.rows.nrows() || grid.cols > pos.cols.nrows() {
        return Err(Error::Shape(format!(
            "grid {}x{} exceeds positional tables {}x{}",
            grid.rows,
            grid.cols,
            pos.rows.nrows(),
            pos.cols.nrows()
        )));
    }
    if grid.hidden() != pos.rows.ncols() || grid.hidden() != pos.cols.ncols() {
        return Err(Error::Shape("hidden size differs from positional tables".into()));
    }
    let mut out = grid.clone();
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            let mut x = out.data.row_mut(i * grid.cols + j);
            x += &pos.rows.row(i);
            x += &pos.cols.row(j);
        }
    }
    Ok(out)
}

pub fn to_array<T: Scalar>(v: &[f32]) -> Array1<T> {
    v.iter().map(|&x| T::of(f64::from(x))).collect()
}
