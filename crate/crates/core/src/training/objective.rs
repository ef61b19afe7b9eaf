//! Corrupt-cell classifier and its binary cross-entropy objective.

use ndarray::{Array2, ArrayView1};
use rand::RngCore;

use crate::corruption::CorruptionRecord;
use crate::encoder::augment_with_cls;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ModelParams;
use crate::scalar::Scalar;

pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `σ(wᵀx + b)`: probability that the cell with final-layer vector `x` was corrupted.
pub fn corruption_probability<T: Scalar>(x: ArrayView1<'_, T>, w: ArrayView1<'_, T>, b: T) -> f64 {
    sigmoid((x.dot(&w) + b).as_f64())
}

fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean binary cross-entropy over the cells where `mask` is set.
pub fn pretrain_loss(probs: &[f64], labels: &[bool], mask: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() || probs.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} probabilities, {} labels, {} mask entries",
            probs.len(),
            labels.len(),
            mask.len()
        )));
    }
    let (sum, n) = probs
        .iter()
        .zip(labels)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((&p, &y), _)| (s + bce(p, y), n + 1));
    if n == 0 {
        return Err(Error::NoEligibleCells);
    }
    Ok(sum / n as f64)
}

/// Loss-eligible grid positions of a CLS-augmented table: every content cell
/// (header and body), never CLS positions.
pub fn eligible_positions(rows: usize, cols: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..rows).flat_map(move |i| (1..cols).map(move |j| (i, j)))
}

/// Corruption probabilities for every content cell of a table, in content
/// coordinates (header row first when present).
pub fn cell_probabilities<T: Scalar>(model: &Model<T>, table: &crate::corpus::Table) -> Result<Vec<Vec<f64>>> {
    let enc = model.encode_table(table, true)?;
    let w = model.params.classifier_w.view();
    let b = model.params.classifier_b[0];
    Ok((1..enc.rows())
        .map(|i| {
            (1..enc.cols())
                .map(|j| corruption_probability(enc.cells.cell(i, j), w, b))
                .collect()
        })
        .collect())
}

/// Forward and backward pass of one corrupted table. Gradients of the summed
/// (not averaged) loss are accumulated into `grads`; returns the loss sum and
/// the number of cells it covers.
pub fn accumulate_table_gradients<T: Scalar>(
    model: &Model<T>,
    record: &CorruptionRecord,
    grads: &mut ModelParams<T>,
    rng: Option<&mut dyn RngCore>,
) -> Result<(f64, usize)> {
    let tokens = augment_with_cls(&record.table, true);
    let pass = model.forward(tokens, rng)?;
    let cells = &pass.encoding.cells;
    let w = &model.params.classifier_w;
    let b = model.params.classifier_b[0];
    let mut d_out = Array2::<T>::zeros(cells.data.dim());
    let mut loss = 0.0;
    let mut n = 0;
    for (i, j) in eligible_positions(cells.rows, cells.cols) {
        let x = cells.cell(i, j);
        let y = record.labels[i - 1][j - 1];
        let p = corruption_probability(x, w.view(), b);
        loss += bce(p, y);
        n += 1;
        if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
            continue;
        }
        let dz = T::of(p - f64::from(u8::from(y)));
        d_out.row_mut(cells.index(i, j)).scaled_add(dz, w);
        grads.classifier_w.scaled_add(dz, &x);
        if model.config.classifier_bias {
            grads.classifier_b[0] += dz;
        }
    }
    model.backward(&pass, &d_out, grads);
    Ok((loss, n))
}
