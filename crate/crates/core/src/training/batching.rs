//! Cell-budget batching: whole tables are packed until the batch's total
//! CLS-augmented cell count would exceed the budget.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Table;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_CELLS: usize = 4800;

/// Cells in the CLS-augmented grid of `t`.
pub fn augmented_cells(t: &Table, include_header: bool) -> usize {
    (t.content_height(include_header) + 1) * (t.num_cols() + 1)
}

/// Greedy in-order packing of item sizes into batches of at most `max_cells`.
pub fn pack_batches(sizes: &[usize], max_cells: usize) -> Result<Vec<Vec<usize>>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for (idx, &size) in sizes.iter().enumerate() {
        if size > max_cells {
            return Err(Error::OversizedTable {
                id: format!("#{idx}"),
                cells: size,
                budget: max_cells,
            });
        }
        if used + size > max_cells && !current.is_empty() {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(idx);
        used += size;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Shuffles the corpus with `seed`, then packs it. Returns table indices.
pub fn make_batches(tables: &[Table], max_cells: usize, seed: u64, include_header: bool) -> Result<Vec<Vec<usize>>> {
    if let Some(t) = tables.iter().find(|t| augmented_cells(t, include_header) > max_cells) {
        return Err(Error::OversizedTable {
            id: t.id.clone(),
            cells: augmented_cells(t, include_header),
            budget: max_cells,
        });
    }
    let mut order: Vec<usize> = (0..tables.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sizes: Vec<usize> = order
        .iter()
        .map(|&i| augmented_cells(&tables[i], include_header))
        .collect();
    Ok(pack_batches(&sizes, max_cells)?
        .into_iter()
        .map(|b| b.into_iter().map(|k| order[k]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(id: &str, rows: usize, cols: usize) -> Table {
        Table::new(id, None, vec![vec!["x".to_string(); cols]; rows]).unwrap()
    }

    #[test]
    fn greedy_packing() {
        assert_eq!(
            pack_batches(&[2000, 2000, 1500], 4800).unwrap(),
            vec![vec![0, 1], vec![2]]
        );
        assert_eq!(pack_batches(&[100], 4800).unwrap(), vec![vec![0]]);
        assert!(pack_batches(&[], 10).unwrap().is_empty());
    }

    #[test]
    fn oversized_table_named() {
        let tables = vec![table("small", 1, 1), table("huge", 30, 20)];
        match make_batches(&tables, 100, 0, true) {
            Err(Error::OversizedTable { id, .. }) => assert_eq!(id, "huge"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shuffled_batches_cover_corpus_once() {
        let tables: Vec<Table> = (0..50).map(|i| table(&format!("t{i}"), 1 + i % 4, 2)).collect();
        let batches = make_batches(&tables, 40, 7, true).unwrap();
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.iter().map(|&i| augmented_cells(&tables[i], true)).sum::<usize>() <= 40);
        }
        assert_eq!(batches, make_batches(&tables, 40, 7, true).unwrap());
    }

    #[test]
    fn about_104_tables_per_batch_at_46_cells() {
        // 5x7 body → 6x8 = 48 cells, 4x8 body → 5x9 = 45; mean ≈ 46
        let tables: Vec<Table> = (0..500)
            .map(|i| if i % 3 == 0 { table("a", 5, 7) } else { table("b", 4, 8) })
            .collect();
        let mean = tables.iter().map(|t| augmented_cells(t, true)).sum::<usize>() as f64 / 500.0;
        assert!((mean - 46.0).abs() < 0.5, "{mean}");
        let batches = make_batches(&tables, DEFAULT_MAX_CELLS, 1, true).unwrap();
        let full = &batches[..batches.len() - 1];
        let per_batch = full.iter().map(Vec::len).sum::<usize>() as f64 / full.len() as f64;
        assert!((100.0..=106.0).contains(&per_batch), "{per_batch}");
    }
}
