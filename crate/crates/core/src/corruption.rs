//! Corrupted-table generation for corrupt-cell detection.
//!
//! Cells are addressed in content coordinates: row 0 is the header when the
//! table has one, followed by the body rows. CLS positions are never touched.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CellVocab, Table};
use crate::error::{Error, Result};
use crate::util::derived_rng;

/// Redraw / resample attempts before a corruption is abandoned.
pub const MAX_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionTag {
    FreqSample,
    IntraRowSwap,
    IntraColSwap,
    IntraTableSwap,
}

impl CorruptionTag {
    pub const ALL: [CorruptionTag; 4] = [
        CorruptionTag::FreqSample,
        CorruptionTag::IntraRowSwap,
        CorruptionTag::IntraColSwap,
        CorruptionTag::IntraTableSwap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionTag::FreqSample => "freq_sample",
            CorruptionTag::IntraRowSwap => "intra_row_swap",
            CorruptionTag::IntraColSwap => "intra_col_swap",
            CorruptionTag::IntraTableSwap => "intra_table_swap",
        }
    }

    pub fn is_swap(self) -> bool {
        self != CorruptionTag::FreqSample
    }
}

impl fmt::Display for CorruptionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Freq,
    Mix,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "freq" => Ok(Strategy::Freq),
            "mix" => Ok(Strategy::Mix),
            other => Err(Error::Config(format!("unknown corruption strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapConstraint {
    Any,
    SameRow,
    SameCol,
}

impl SwapConstraint {
    fn tag(self) -> CorruptionTag {
        match self {
            SwapConstraint::Any => CorruptionTag::IntraTableSwap,
            SwapConstraint::SameRow => CorruptionTag::IntraRowSwap,
            SwapConstraint::SameCol => CorruptionTag::IntraColSwap,
        }
    }

    fn allows(self, a: (usize, usize), b: (usize, usize)) -> bool {
        a != b
            && match self {
                SwapConstraint::Any => true,
                SwapConstraint::SameRow => a.0 == b.0,
                SwapConstraint::SameCol => a.1 == b.1,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub strategy: Strategy,
    /// Fraction of eligible cells targeted for corruption.
    pub rate: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            strategy: Strategy::Freq,
            rate: 0.15,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::Config(format!("corruption rate {} not in (0, 1)", self.rate)));
        }
        Ok(())
    }
}

/// A corrupted table with per-cell labels and corruption tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub table: Table,
    pub labels: Vec<Vec<bool>>,
    pub tags: Vec<Vec<Option<CorruptionTag>>>,
    /// Requested swap pairs that could not be realized.
    pub unmet_swaps: usize,
}

impl CorruptionRecord {
    /// An uncorrupted copy of `t` with all labels false.
    pub fn clean(t: &Table) -> Self {
        let h = t.content_height(true);
        let n = t.num_cols();
        CorruptionRecord {
            table: t.clone(),
            labels: vec![vec![false; n]; h],
            tags: vec![vec![None; n]; h],
            unmet_swaps: 0,
        }
    }

    pub fn num_corrupted(&self) -> usize {
        self.labels.iter().flatten().filter(|&&l| l).count()
    }

    pub fn num_cells(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }

    /// `(row, col, tag)` for every corrupted cell, in row-major order.
    pub fn corrupted_cells(&self) -> Vec<(usize, usize, CorruptionTag)> {
        let mut out = Vec::new();
        for (i, row) in self.tags.iter().enumerate() {
            for (j, tag) in row.iter().enumerate() {
                if let Some(t) = tag {
                    out.push((i, j, *t));
                }
            }
        }
        out
    }

    pub fn tag_count(&self, tag: CorruptionTag) -> usize {
        self.tags.iter().flatten().filter(|t| **t == Some(tag)).count()
    }

    /// Labels are true exactly where the content differs from `original`,
    /// and tags are present exactly where labels are true.
    pub fn is_sound(&self, original: &Table) -> bool {
        let before = original.content_rows(true);
        let after = self.table.content_rows(true);
        if before.len() != self.labels.len() || after.len() != before.len() {
            return false;
        }
        before
            .iter()
            .zip(&after)
            .zip(self.labels.iter().zip(&self.tags))
            .all(|((b, a), (labels, tags))| {
                b.iter()
                    .zip(a.iter())
                    .zip(labels.iter().zip(tags))
                    .all(|((x, y), (l, t))| (*l == (x != y)) && (t.is_some() == *l))
            })
    }

    fn cell(&self, c: (usize, usize)) -> &str {
        self.table.content_cell(c.0, c.1, true)
    }

    fn mark(&mut self, c: (usize, usize), tag: CorruptionTag) {
        self.labels[c.0][c.1] = true;
        self.tags[c.0][c.1] = Some(tag);
    }

    fn eligible(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_cells());
        for (i, row) in self.labels.iter().enumerate() {
            for (j, &l) in row.iter().enumerate() {
                if !l {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn freq_replace<R: Rng + ?Sized>(&mut self, c: (usize, usize), vocab: &CellVocab, rng: &mut R) -> bool {
        for _ in 0..MAX_ATTEMPTS {
            let draw = vocab.sample(rng);
            if draw != self.cell(c) {
                *self.table.content_cell_mut(c.0, c.1, true) = draw.to_owned();
                self.mark(c, CorruptionTag::FreqSample);
                return true;
            }
        }
        false
    }

    fn try_swap<R: Rng + ?Sized>(&mut self, constraint: SwapConstraint, rng: &mut R) -> bool {
        for _ in 0..MAX_ATTEMPTS {
            let free = self.eligible();
            if free.len() < 2 {
                return false;
            }
            let a = free[rng.random_range(0..free.len())];
            let partners: Vec<(usize, usize)> = free.iter().copied().filter(|&b| constraint.allows(a, b)).collect();
            if partners.is_empty() {
                continue;
            }
            let b = partners[rng.random_range(0..partners.len())];
            if self.cell(a) == self.cell(b) {
                continue;
            }
            let va = self.cell(a).to_owned();
            let vb = std::mem::replace(self.table.content_cell_mut(b.0, b.1, true), va);
            *self.table.content_cell_mut(a.0, a.1, true) = vb;
            let tag = constraint.tag();
            self.mark(a, tag);
            self.mark(b, tag);
            return true;
        }
        false
    }
}

/// Independently replaces each cell with probability `rate` by a draw from the
/// corpus cell distribution. Draws equal to the original are redrawn.
pub fn corrupt_freq<R: Rng + ?Sized>(t: &Table, vocab: &CellVocab, rate: f64, rng: &mut R) -> CorruptionRecord {
    let mut rec = CorruptionRecord::clean(t);
    for c in rec.eligible() {
        if rng.random::<f64>() < rate {
            rec.freq_replace(c, vocab, rng);
        }
    }
    rec
}

/// Swaps `pairs` disjoint cell pairs satisfying `constraint`.
pub fn corrupt_swap<R: Rng + ?Sized>(
    t: &Table,
    constraint: SwapConstraint,
    pairs: usize,
    rng: &mut R,
) -> CorruptionRecord {
    let mut rec = CorruptionRecord::clean(t);
    for _ in 0..pairs {
        if !rec.try_swap(constraint, rng) {
            rec.unmet_swaps += 1;
        }
    }
    rec
}

fn stochastic_round<R: Rng + ?Sized>(x: f64, rng: &mut R) -> usize {
    let base = x.floor();
    let frac = x - base;
    base as usize + usize::from(rng.random::<f64>() < frac)
}

/// How a MIX budget is divided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixPlan {
    pub freq_cells: usize,
    pub constrained_pairs: usize,
    pub free_pairs: usize,
}

impl MixPlan {
    pub fn labeled_cells(&self) -> usize {
        self.freq_cells + 2 * (self.constrained_pairs + self.free_pairs)
    }
}

/// Splits a budget of `budget` corrupted cells: half frequency samples, half
/// swap endpoints, and of the swap pairs half row/column-constrained.
pub fn plan_mix<R: Rng + ?Sized>(budget: usize, rng: &mut R) -> MixPlan {
    let pairs = stochastic_round(budget as f64 / 4.0, rng).min(budget / 2);
    let freq_cells = budget - 2 * pairs;
    let mut constrained = pairs / 2;
    if pairs % 2 == 1 && rng.random::<bool>() {
        constrained += 1;
    }
    MixPlan {
        freq_cells,
        constrained_pairs: constrained,
        free_pairs: pairs - constrained,
    }
}

/// Half frequency sampling, half intra-table swapping, with half of the swaps
/// confined to one row or one column.
pub fn corrupt_mix<R: Rng + ?Sized>(t: &Table, vocab: &CellVocab, rate: f64, rng: &mut R) -> CorruptionRecord {
    let mut rec = CorruptionRecord::clean(t);
    let eligible = rec.num_cells();
    let budget = stochastic_round(rate * eligible as f64, rng).min(eligible);
    let plan = plan_mix(budget, rng);
    for idx in sample(rng, eligible, plan.freq_cells) {
        let c = (idx / t.num_cols(), idx % t.num_cols());
        rec.freq_replace(c, vocab, rng);
    }
    for _ in 0..plan.constrained_pairs {
        let constraint = if rng.random::<bool>() {
            SwapConstraint::SameRow
        } else {
            SwapConstraint::SameCol
        };
        if !rec.try_swap(constraint, rng) {
            rec.unmet_swaps += 1;
        }
    }
    for _ in 0..plan.free_pairs {
        if !rec.try_swap(SwapConstraint::Any, rng) {
            rec.unmet_swaps += 1;
        }
    }
    rec
}

pub fn corrupt<R: Rng + ?Sized>(t: &Table, cfg: &CorruptionConfig, vocab: &CellVocab, rng: &mut R) -> CorruptionRecord {
    match cfg.strategy {
        Strategy::Freq => corrupt_freq(t, vocab, cfg.rate, rng),
        Strategy::Mix => corrupt_mix(t, vocab, cfg.rate, rng),
    }
}

/// Per-table RNG stream keyed by `(seed, epoch, table id)`.
pub fn table_rng(seed: u64, epoch: u64, table_id: &str) -> ChaCha8Rng {
    derived_rng(seed, &[&epoch.to_le_bytes(), table_id.as_bytes()])
}
