//! The dual-axis Transformer: every layer runs a row Transformer and a column
//! Transformer over the same cell grid and averages their outputs.

use ndarray::{Array2, ArrayView1};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::Table;
use crate::error::{Error, Result};
use crate::nn::{block_backward, block_forward, BlockCache, BlockSpec};
use crate::params::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::desk(64, 2, 2)
    }
}

impl EncoderConfig {
    pub fn desk(hidden_dim: usize, layers: usize, heads: usize) -> Self {
        EncoderConfig {
            layers,
            hidden_dim,
            heads,
            ffn_dim: 4 * hidden_dim,
            dropout: 0.0,
        }
    }

    /// 12 layers, 768 hidden units, 12 heads, dropout 0.1.
    pub fn full_scale() -> Self {
        EncoderConfig {
            dropout: 0.1,
            ..EncoderConfig::desk(768, 12, 12)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A table-shaped grid of hidden vectors, stored `(rows · cols) × hidden` in
/// row-major cell order, with a mask of real (non-padding) positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Array2<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> CellGrid<T> {
    pub fn new(rows: usize, cols: usize, data: Array2<T>) -> Result<Self> {
        if data.nrows() != rows * cols {
            return Err(Error::Shape(format!(
                "{} vectors for a {rows}x{cols} grid",
                data.nrows()
            )));
        }
        Ok(CellGrid {
            rows,
            cols,
            data,
            mask: vec![true; rows * cols],
        })
    }

    pub fn from_fn(rows: usize, cols: usize, hidden: usize, f: impl Fn(usize, usize, usize) -> T) -> Self {
        let data = Array2::from_shape_fn((rows * cols, hidden), |(idx, k)| f(idx / cols, idx % cols, k));
        CellGrid {
            rows,
            cols,
            data,
            mask: vec![true; rows * cols],
        }
    }

    pub fn hidden(&self) -> usize {
        self.data.ncols()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    pub fn cell(&self, i: usize, j: usize) -> ArrayView1<'_, T> {
        self.data.row(self.index(i, j))
    }

    pub fn is_real(&self, i: usize, j: usize) -> bool {
        self.mask[self.index(i, j)]
    }

    /// Embeds this grid in the top-left corner of a larger `rows × cols`
    /// grid. New positions are masked out and hold `fill`.
    pub fn pad_to(&self, rows: usize, cols: usize, fill: impl Fn(usize, usize, usize) -> T) -> Result<Self> {
        if rows < self.rows || cols < self.cols {
            return Err(Error::Shape("cannot pad to a smaller grid".into()));
        }
        let mut out = CellGrid::from_fn(rows, cols, self.hidden(), fill);
        out.mask.fill(false);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let dst = out.index(i, j);
                out.data.row_mut(dst).assign(&self.cell(i, j));
                out.mask[dst] = self.is_real(i, j);
            }
        }
        Ok(out)
    }

    fn row_sequences(&self) -> Vec<Vec<usize>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| i * self.cols + j).collect())
            .collect()
    }

    fn col_sequences(&self) -> Vec<Vec<usize>> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| i * self.cols + j).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    /// Corner position summarizing the whole table.
    Table,
    Row,
    Col,
    Cell(String),
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Token::Table => f.write_str("[CLSTAB]"),
            Token::Row => f.write_str("[CLSROW]"),
            Token::Col => f.write_str("[CLSCOL]"),
            Token::Cell(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub tokens: Vec<Token>,
}

impl TokenGrid {
    pub fn get(&self, i: usize, j: usize) -> &Token {
        &self.tokens[i * self.cols + j]
    }
}

/// Prepends a row of column-CLS tokens and a column of row-CLS tokens, with
/// the table token in the corner. The header, when kept, becomes grid row 1.
pub fn augment_with_cls(t: &Table, include_header: bool) -> TokenGrid {
    let content = t.content_rows(include_header);
    let cols = t.num_cols() + 1;
    let rows = content.len() + 1;
    let mut tokens = Vec::with_capacity(rows * cols);
    tokens.push(Token::Table);
    tokens.extend(std::iter::repeat_n(Token::Col, cols - 1));
    for r in content {
        tokens.push(Token::Row);
        tokens.extend(r.iter().map(|c| Token::Cell(c.clone())));
    }
    TokenGrid { rows, cols, tokens }
}

/// Averages the row- and column-Transformer outputs of one layer.
pub fn pool_layer<T: Scalar>(r: &CellGrid<T>, c: &CellGrid<T>) -> Result<CellGrid<T>> {
    if r.rows != c.rows || r.cols != c.cols || r.data.dim() != c.data.dim() {
        return Err(Error::Shape(format!(
            "cannot pool {}x{} with {}x{}",
            r.rows, r.cols, c.rows, c.cols
        )));
    }
    Ok(CellGrid {
        rows: r.rows,
        cols: r.cols,
        data: pool(&r.data, &c.data),
        mask: r.mask.clone(),
    })
}

fn pool<T: Scalar>(r: &Array2<T>, c: &Array2<T>) -> Array2<T> {
    let half = T::of(0.5);
    (r + c) * half
}

/// Final-layer vectors of an encoded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEncoding<T> {
    pub cells: CellGrid<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum EmbeddingKind {
    /// Grid coordinates; body cells start at (1, 1).
    Cell {
        row: usize,
        col: usize,
    },
    Row {
        row: usize,
    },
    Column {
        col: usize,
    },
    Table,
}

impl<T: Scalar> TableEncoding<T> {
    pub fn rows(&self) -> usize {
        self.cells.rows
    }

    pub fn cols(&self) -> usize {
        self.cells.cols
    }

    pub fn row_embedding(&self, i: usize) -> ArrayView1<'_, T> {
        self.cells.cell(i, 0)
    }

    pub fn col_embedding(&self, j: usize) -> ArrayView1<'_, T> {
        self.cells.cell(0, j)
    }

    pub fn table_embedding(&self) -> ArrayView1<'_, T> {
        self.cells.cell(0, 0)
    }
}

pub fn extract_embedding<T: Scalar>(enc: &TableEncoding<T>, kind: EmbeddingKind) -> Result<Vec<T>> {
    let (rows, cols) = (enc.rows(), enc.cols());
    let check = |what: &str, idx: usize, bound: usize| {
        if idx == 0 || idx >= bound {
            Err(Error::OutOfRange(format!("{what} {idx} not in 1..{bound}")))
        } else {
            Ok(())
        }
    };
    let (i, j) = match kind {
        EmbeddingKind::Cell { row, col } => {
            check("row", row, rows)?;
            check("column", col, cols)?;
            (row, col)
        }
        EmbeddingKind::Row { row } => {
            check("row", row, rows)?;
            (row, 0)
        }
        EmbeddingKind::Column { col } => {
            check("column", col, cols)?;
            (0, col)
        }
        EmbeddingKind::Table => (0, 0),
    };
    if !enc.cells.is_real(i, j) {
        return Err(Error::OutOfRange(format!("({i}, {j}) is padding")));
    }
    Ok(enc.cells.cell(i, j).to_vec())
}

pub struct EncoderCache<T> {
    layers: Vec<(BlockCache<T>, BlockCache<T>)>,
    row_seqs: Vec<Vec<usize>>,
    col_seqs: Vec<Vec<usize>>,
    mask: Vec<bool>,
    heads: usize,
    dropout: f64,
}

fn reborrow<'s>(rng: &'s mut Option<&mut dyn RngCore>) -> Option<&'s mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// Runs every layer over a position-augmented grid.
pub fn encode<T: Scalar>(grid: &CellGrid<T>, params: &ModelParams<T>, cfg: &EncoderConfig) -> Result<TableEncoding<T>> {
    encode_with_cache(grid, params, cfg, None).map(|(enc, _)| enc)
}

/// Forward pass that keeps the activations needed by [`encode_backward`].
/// Dropout is applied only when `rng` is given.
pub fn encode_with_cache<T: Scalar>(
    grid: &CellGrid<T>,
    params: &ModelParams<T>,
    cfg: &EncoderConfig,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<(TableEncoding<T>, EncoderCache<T>)> {
    if grid.hidden() != cfg.hidden_dim || params.hidden() != cfg.hidden_dim {
        return Err(Error::Shape(format!(
            "grid width {} / params width {} vs configured {}",
            grid.hidden(),
            params.hidden(),
            cfg.hidden_dim
        )));
    }
    if params.layers.len() != cfg.layers {
        return Err(Error::Shape("parameter layer count differs from config".into()));
    }
    let row_seqs = grid.row_sequences();
    let col_seqs = grid.col_sequences();
    let mut x = grid.data.clone();
    let mut caches = Vec::with_capacity(cfg.layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let row_spec = BlockSpec {
            seqs: &row_seqs,
            mask: &grid.mask,
            heads: cfg.heads,
            dropout: cfg.dropout,
        };
        let col_spec = BlockSpec {
            seqs: &col_seqs,
            ..row_spec
        };
        let (r, rc) = block_forward(&layer.row, &x, &row_spec, reborrow(&mut rng));
        let (c, cc) = block_forward(&layer.col, &x, &col_spec, reborrow(&mut rng));
        x = pool(&r, &c);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("encoder layer {l}")));
        }
        caches.push((rc, cc));
    }
    let enc = TableEncoding {
        cells: CellGrid {
            rows: grid.rows,
            cols: grid.cols,
            data: x,
            mask: grid.mask.clone(),
        },
    };
    let cache = EncoderCache {
        layers: caches,
        row_seqs,
        col_seqs,
        mask: grid.mask.clone(),
        heads: cfg.heads,
        dropout: cfg.dropout,
    };
    Ok((enc, cache))
}

/// Backpropagates `d_out` (gradient w.r.t. the final grid) through every layer,
/// accumulating into `grads`, and returns the gradient w.r.t. the input grid.
pub fn encode_backward<T: Scalar>(
    cache: &EncoderCache<T>,
    params: &ModelParams<T>,
    d_out: &Array2<T>,
    grads: &mut ModelParams<T>,
) -> Array2<T> {
    let half = T::of(0.5);
    let mut dx = d_out.clone();
    for ((layer, (rc, cc)), g) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        let dpooled = &dx * half;
        let row_spec = BlockSpec {
            seqs: &cache.row_seqs,
            mask: &cache.mask,
            heads: cache.heads,
            dropout: cache.dropout,
        };
        let col_spec = BlockSpec {
            seqs: &cache.col_seqs,
            ..row_spec
        };
        let mut next = block_backward(&layer.row, rc, &dpooled, &mut g.row, &row_spec);
        next += &block_backward(&layer.col, cc, &dpooled, &mut g.col, &col_spec);
        dx = next;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(rows: usize, cols: usize, header: bool) -> Table {
        let body = (0..rows)
            .map(|i| (0..cols).map(|j| format!("r{i}c{j}")).collect())
            .collect();
        let h = header.then(|| (0..cols).map(|j| format!("h{j}")).collect());
        Table::new("t", h, body).unwrap()
    }

    #[test]
    fn augment_shapes() {
        let g = augment_with_cls(&table(2, 3, false), true);
        assert_eq!((g.rows, g.cols), (3, 4));
        let g = augment_with_cls(&table(2, 3, true), true);
        assert_eq!((g.rows, g.cols), (4, 4));
        assert_eq!(g.get(1, 1), &Token::Cell("h0".into()));
        assert_eq!(g.get(2, 3), &Token::Cell("r0c2".into()));
        let g = augment_with_cls(&table(2, 3, true), false);
        assert_eq!((g.rows, g.cols), (3, 4));
        assert_eq!(g.get(0, 0), &Token::Table);
        assert_eq!(g.get(0, 2), &Token::Col);
        assert_eq!(g.get(2, 0), &Token::Row);
    }

    fn grid2(vals: &[[f64; 2]]) -> CellGrid<f64> {
        CellGrid::from_fn(1, vals.len(), 2, |_, j, k| vals[j][k])
    }

    #[test]
    fn pooling_is_elementwise_mean() {
        let out = pool_layer(&grid2(&[[1.0, 2.0]]), &grid2(&[[3.0, 4.0]])).unwrap();
        assert_eq!(out.cell(0, 0).to_vec(), vec![2.0, 3.0]);
        let r = grid2(&[[0.3, -7.0], [1.5, 2.25]]);
        assert_eq!(pool_layer(&r, &r).unwrap(), r);
        let out = pool_layer(&grid2(&[[1.0, 0.0]]), &grid2(&[[0.0, 1.0]])).unwrap();
        assert_eq!(out.cell(0, 0).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn pooling_shape_mismatch() {
        assert!(pool_layer(&grid2(&[[1.0, 2.0]]), &grid2(&[[1.0, 2.0], [3.0, 4.0]])).is_err());
    }

    #[test]
    fn encode_output_shape() {
        let cfg = EncoderConfig::desk(8, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::<f64>::init(&cfg, 4, 4, 0.02, 0.02, &mut rng);
        let grid = CellGrid::from_fn(2, 2, 8, |i, j, k| (i + 2 * j + k) as f64 * 0.1);
        let enc = encode(&grid, &params, &cfg).unwrap();
        assert_eq!((enc.rows(), enc.cols(), enc.cells.hidden()), (2, 2, 8));
    }

    #[test]
    fn zero_weights_give_identity_on_normalized_input() {
        let cfg = EncoderConfig::desk(8, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ModelParams::<f64>::init(&cfg, 4, 4, 0.02, 0.02, &mut rng);
        for layer in &mut params.layers {
            for b in [&mut layer.row, &mut layer.col] {
                for lin in [
                    &mut b.query,
                    &mut b.key,
                    &mut b.value,
                    &mut b.output,
                    &mut b.ff_in,
                    &mut b.ff_out,
                ] {
                    lin.weight.fill(0.0);
                    lin.bias.fill(0.0);
                }
            }
        }
        // zero-mean, unit-variance vectors are fixed points of layer norm
        let grid = CellGrid::from_fn(3, 3, 8, |i, j, k| {
            let s = if (i + j + k) % 2 == 0 { 1.0 } else { -1.0 };
            s * if k < 4 { 1.0 } else { -1.0 }
        });
        let enc = encode(&grid, &params, &cfg).unwrap();
        let diff = (&enc.cells.data - &grid.data)
            .mapv(f64::abs)
            .fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn extract_kinds() {
        let grid = CellGrid::<f64>::from_fn(2, 2, 1, |i, j, _| (10 * i + j) as f64);
        let enc = TableEncoding { cells: grid };
        assert_eq!(extract_embedding(&enc, EmbeddingKind::Table).unwrap(), vec![0.0]);
        assert_eq!(
            extract_embedding(&enc, EmbeddingKind::Cell { row: 1, col: 1 }).unwrap(),
            vec![11.0]
        );
        assert_eq!(
            extract_embedding(&enc, EmbeddingKind::Row { row: 1 }).unwrap(),
            vec![10.0]
        );
        assert_eq!(
            extract_embedding(&enc, EmbeddingKind::Column { col: 1 }).unwrap(),
            vec![1.0]
        );
        assert!(extract_embedding(&enc, EmbeddingKind::Column { col: 2 }).is_err());
        assert!(extract_embedding(&enc, EmbeddingKind::Cell { row: 0, col: 1 }).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::desk(64, 2, 3).validate().is_err());
        assert!(EncoderConfig::desk(64, 0, 2).validate().is_err());
        assert!(EncoderConfig::full_scale().validate().is_ok());
    }
}
