//! A complete table encoder: frozen cell embedder, learned CLS and position
//! vectors, the dual-axis Transformer and the corrupt-cell classifier weights.

use std::sync::Arc;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Table, TruncationLimits};
use crate::embedder::{Embedder, EmbedderConfig};
use crate::encoder::{
    augment_with_cls, encode_backward, encode_with_cache, CellGrid, EncoderCache, EncoderConfig, TableEncoding, Token,
    TokenGrid,
};
use crate::error::{Error, Result};
use crate::params::{ModelParams, INIT_STD};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub embedder: EmbedderConfig,
    pub limits: TruncationLimits,
    /// When false the classifier bias is pinned at zero.
    pub classifier_bias: bool,
    /// Standard deviation of freshly initialised attention and feed-forward weights.
    #[serde(default = "default_block_init_std")]
    pub block_init_std: f64,
}

fn default_block_init_std() -> f64 {
    INIT_STD
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk(64, 2, 2)
    }
}

impl ModelConfig {
    pub fn desk(hidden: usize, layers: usize, heads: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig::desk(hidden, layers, heads),
            embedder: EmbedderConfig {
                hidden_dim: hidden,
                ..EmbedderConfig::default()
            },
            limits: TruncationLimits::default(),
            classifier_bias: true,
            block_init_std: INIT_STD,
        }
    }

    /// Attention and feed-forward weights drawn with std 1/sqrt(hidden), which
    /// trains much faster than 0.02 at small widths.
    pub fn with_scaled_init(mut self) -> Self {
        self.block_init_std = 1.0 / (self.encoder.hidden_dim as f64).sqrt();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.embedder.validate()?;
        if self.encoder.hidden_dim != self.embedder.hidden_dim {
            return Err(Error::Config(format!(
                "encoder width {} differs from embedder width {}",
                self.encoder.hidden_dim, self.embedder.hidden_dim
            )));
        }
        if self.limits.max_rows == 0 || self.limits.max_cols == 0 {
            return Err(Error::Config("truncation limits must be positive".into()));
        }
        Ok(())
    }

    /// CLS row, an optional header row, and up to `max_rows` body rows.
    pub fn row_positions(&self) -> usize {
        self.limits.max_rows + 2
    }

    pub fn col_positions(&self) -> usize {
        self.limits.max_cols + 1
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    embedder: Arc<Embedder>,
}

/// Activations of one forward pass, kept for backpropagation.
pub struct ForwardPass<T> {
    pub tokens: TokenGrid,
    pub encoding: TableEncoding<T>,
    cache: EncoderCache<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let block_std = config.block_init_std;
        Self::init(config, seed, INIT_STD, block_std)
    }

    /// Every tensor drawn with the same `std`.
    pub fn with_init_std(config: ModelConfig, seed: u64, std: f64) -> Result<Self> {
        Self::init(config, seed, std, std)
    }

    fn init(config: ModelConfig, seed: u64, std: f64, block_std: f64) -> Result<Self> {
        config.validate()?;
        if !(block_std.is_finite() && block_std >= 0.0) {
            return Err(Error::Config(format!("invalid init std {block_std}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(
            &config.encoder,
            config.row_positions(),
            config.col_positions(),
            std,
            block_std,
            &mut rng,
        );
        Self::from_parts(config, params)
    }

    pub fn from_parts(config: ModelConfig, mut params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let embedder = Arc::new(Embedder::new(config.embedder.clone())?);
        Self::check_shapes(&config, &params)?;
        if !config.classifier_bias {
            params.classifier_b.fill(T::zero());
        }
        Ok(Model {
            config,
            params,
            embedder,
        })
    }

    /// Same config and embedder, different parameters.
    pub fn with_params(&self, params: ModelParams<T>) -> Result<Self> {
        Self::check_shapes(&self.config, &params)?;
        Ok(Model {
            config: self.config.clone(),
            params,
            embedder: Arc::clone(&self.embedder),
        })
    }

    fn check_shapes(config: &ModelConfig, p: &ModelParams<T>) -> Result<()> {
        let h = config.encoder.hidden_dim;
        let ok = p.row_pos.dim() == (config.row_positions(), h)
            && p.col_pos.dim() == (config.col_positions(), h)
            && p.hidden() == h
            && p.layers.len() == config.encoder.layers
            && p.classifier_w.len() == h
            && p.layers.iter().all(|l| {
                l.row.ff_in.outputs() == config.encoder.ffn_dim && l.col.ff_in.outputs() == config.encoder.ffn_dim
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("parameters do not match the model configuration".into()))
        }
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn hidden(&self) -> usize {
        self.config.encoder.hidden_dim
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            embedder: Arc::clone(&self.embedder),
        }
    }

    /// Frozen cell embeddings and learned CLS vectors, before positions.
    pub fn content_grid(&self, tokens: &TokenGrid) -> CellGrid<T> {
        let h = self.hidden();
        let mut data = Array2::zeros((tokens.rows * tokens.cols, h));
        for (mut row, tok) in data.outer_iter_mut().zip(&tokens.tokens) {
            match tok {
                Token::Table => row.assign(&self.params.cls_table),
                Token::Row => row.assign(&self.params.cls_row),
                Token::Col => row.assign(&self.params.cls_col),
                Token::Cell(s) => {
                    for (dst, v) in row.iter_mut().zip(self.embedder.embed_cell(s)) {
                        *dst = T::of(f64::from(v));
                    }
                }
            }
        }
        CellGrid {
            rows: tokens.rows,
            cols: tokens.cols,
            data,
            mask: vec![true; tokens.rows * tokens.cols],
        }
    }

    /// The layer-0 grid: content plus row and column positional embeddings.
    pub fn input_grid(&self, tokens: &TokenGrid) -> Result<CellGrid<T>> {
        if tokens.rows > self.config.row_positions() || tokens.cols > self.config.col_positions() {
            return Err(Error::Shape(format!(
                "{}x{} grid exceeds the {}x{} positional tables",
                tokens.rows,
                tokens.cols,
                self.config.row_positions(),
                self.config.col_positions()
            )));
        }
        let mut grid = self.content_grid(tokens);
        for i in 0..grid.rows {
            for j in 0..grid.cols {
                let idx = grid.index(i, j);
                let mut x = grid.data.row_mut(idx);
                x += &self.params.row_pos.row(i);
                x += &self.params.col_pos.row(j);
            }
        }
        Ok(grid)
    }

    pub fn forward(&self, tokens: TokenGrid, rng: Option<&mut dyn RngCore>) -> Result<ForwardPass<T>> {
        let grid = self.input_grid(&tokens)?;
        let (encoding, cache) = encode_with_cache(&grid, &self.params, &self.config.encoder, rng)?;
        Ok(ForwardPass {
            tokens,
            encoding,
            cache,
        })
    }

    pub fn encode_table(&self, t: &Table, include_header: bool) -> Result<TableEncoding<T>> {
        Ok(self.forward(augment_with_cls(t, include_header), None)?.encoding)
    }

    /// Accumulates parameter gradients for `d_out`, the loss gradient with
    /// respect to the final grid of `pass`.
    pub fn backward(&self, pass: &ForwardPass<T>, d_out: &Array2<T>, grads: &mut ModelParams<T>) {
        let d_in = encode_backward(&pass.cache, &self.params, d_out, grads);
        let cols = pass.tokens.cols;
        for (idx, (d, tok)) in d_in.outer_iter().zip(&pass.tokens.tokens).enumerate() {
            let (i, j) = (idx / cols, idx % cols);
            let mut r = grads.row_pos.row_mut(i);
            r += &d;
            let mut c = grads.col_pos.row_mut(j);
            c += &d;
            match tok {
                Token::Table => grads.cls_table += &d,
                Token::Row => grads.cls_row += &d,
                Token::Col => grads.cls_col += &d,
                Token::Cell(_) => {}
            }
        }
    }
}
