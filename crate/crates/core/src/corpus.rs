//! Table corpora: loading, validation, truncation and the cell-frequency vocabulary.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rectangular grid of cell strings with an optional header row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub id: String,
    #[serde(default)]
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Builds a table and checks it is rectangular and non-empty.
    pub fn new(id: impl Into<String>, header: Option<Vec<String>>, rows: Vec<Vec<String>>) -> Result<Self> {
        let t = Table {
            id: id.into(),
            header,
            rows,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidTable {
            id: self.id.clone(),
            reason,
        };
        let n = self.rows.first().map(Vec::len).ok_or_else(|| bad("no rows".into()))?;
        if n == 0 {
            return Err(bad("no columns".into()));
        }
        if let Some((i, r)) = self.rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(bad(format!("row {i} has {} cells, expected {n}", r.len())));
        }
        if let Some(h) = &self.header {
            if h.len() != n {
                return Err(bad(format!("header has {} cells, expected {n}", h.len())));
            }
        }
        Ok(())
    }

    /// Body row count.
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn has_header(&self) -> bool {
        self.header.is_some()
    }

    /// Rows of cell content in grid order: header first (when present and
    /// requested), then the body.
    pub fn content_rows(&self, include_header: bool) -> Vec<&[String]> {
        let mut out = Vec::with_capacity(self.rows.len() + 1);
        if include_header {
            if let Some(h) = &self.header {
                out.push(h.as_slice());
            }
        }
        out.extend(self.rows.iter().map(Vec::as_slice));
        out
    }

    /// Number of content rows, counting the header when it is included.
    pub fn content_height(&self, include_header: bool) -> usize {
        self.rows.len() + usize::from(include_header && self.header.is_some())
    }

    /// Mutable access to a content cell, in the coordinates of [`Table::content_rows`].
    pub fn content_cell_mut(&mut self, i: usize, j: usize, include_header: bool) -> &mut String {
        let offset = usize::from(include_header && self.header.is_some());
        if i < offset {
            &mut self.header.as_mut().expect("header present")[j]
        } else {
            &mut self.rows[i - offset][j]
        }
    }

    pub fn content_cell(&self, i: usize, j: usize, include_header: bool) -> &str {
        let offset = usize::from(include_header && self.header.is_some());
        if i < offset {
            &self.header.as_ref().expect("header present")[j]
        } else {
            &self.rows[i - offset][j]
        }
    }

    /// A copy without the header row.
    pub fn without_header(&self) -> Table {
        Table {
            id: self.id.clone(),
            header: None,
            rows: self.rows.clone(),
        }
    }

    /// The first `n` columns (header included).
    pub fn first_columns(&self, n: usize) -> Table {
        Table {
            id: self.id.clone(),
            header: self.header.as_ref().map(|h| h[..n.min(h.len())].to_vec()),
            rows: self.rows.iter().map(|r| r[..n.min(r.len())].to_vec()).collect(),
        }
    }

    /// The first `n` body rows.
    pub fn first_rows(&self, n: usize) -> Table {
        Table {
            id: self.id.clone(),
            header: self.header.clone(),
            rows: self.rows[..n.min(self.rows.len())].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationLimits {
    pub max_rows: usize,
    pub max_cols: usize,
    pub max_cell_chars: usize,
}

impl Default for TruncationLimits {
    fn default() -> Self {
        TruncationLimits {
            max_rows: 30,
            max_cols: 20,
            max_cell_chars: 300,
        }
    }
}

fn truncate_chars(s: &str, max_chars: usize) -> String {
    match s.char_indices().nth(max_chars) {
        Some((byte, _)) => s[..byte].to_owned(),
        None => s.to_owned(),
    }
}

/// Keeps the top-left `max_rows × max_cols` block and cuts every cell to its
/// first `max_cell_chars` characters.
pub fn truncate_table(t: &Table, limits: &TruncationLimits) -> Table {
    let cut_row = |r: &Vec<String>| -> Vec<String> {
        r.iter()
            .take(limits.max_cols)
            .map(|c| truncate_chars(c, limits.max_cell_chars))
            .collect()
    };
    Table {
        id: t.id.clone(),
        header: t.header.as_ref().map(cut_row),
        rows: t.rows.iter().take(limits.max_rows).map(cut_row).collect(),
    }
}

/// Streams tables from a JSON-lines corpus file.
///
/// Lines that fail to parse or validate are skipped and counted.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    limits: TruncationLimits,
    path: PathBuf,
    line_no: usize,
    skipped: usize,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, limits: TruncationLimits) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_reader(BufReader::new(f), limits, path))
    }
}

impl<R: BufRead> CorpusReader<R> {
    pub fn from_reader(reader: R, limits: TruncationLimits, path: impl Into<PathBuf>) -> Self {
        CorpusReader {
            lines: reader.lines(),
            limits,
            path: path.into(),
            line_no: 0,
            skipped: 0,
        }
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Table>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<Table>(&line)
                .map_err(Error::from)
                .and_then(|t| t.validate().map(|_| t));
            match parsed {
                Ok(t) => return Some(Ok(truncate_table(&t, &self.limits))),
                Err(e) => {
                    log::warn!("{}:{}: skipping table: {e}", self.path.display(), self.line_no);
                    self.skipped += 1;
                }
            }
        }
    }
}

/// A fully loaded corpus together with its skip count.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub tables: Vec<Table>,
    pub skipped: usize,
}

pub fn load_corpus(path: impl AsRef<Path>, limits: TruncationLimits) -> Result<Corpus> {
    let mut reader = CorpusReader::open(path, limits)?;
    let mut tables = Vec::new();
    for t in reader.by_ref() {
        tables.push(t?);
    }
    Ok(Corpus {
        tables,
        skipped: reader.skipped(),
    })
}

pub fn write_corpus<'a>(path: impl AsRef<Path>, tables: impl IntoIterator<Item = &'a Table>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for t in tables {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Raw cell occurrence counts. Shards can be counted independently and merged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CellCounts {
    counts: HashMap<String, u64>,
    tables: usize,
}

impl CellCounts {
    pub fn add_table(&mut self, t: &Table) {
        self.tables += 1;
        for row in t.content_rows(true) {
            for cell in row {
                *self.counts.entry(cell.clone()).or_insert(0) += 1;
            }
        }
    }

    pub fn merge(&mut self, other: CellCounts) {
        self.tables += other.tables;
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Keeps the `max_entries` most frequent strings, ties broken lexicographically.
    pub fn into_vocab(self, max_entries: usize) -> Result<CellVocab> {
        if self.tables == 0 || self.counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut entries: Vec<(String, u64)> = self.counts.into_iter().collect();
        entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_entries.max(1));
        CellVocab::from_entries(entries)
    }
}

/// Corpus-wide cell frequency distribution used by frequency-based corruption.
#[derive(Debug, Clone)]
pub struct CellVocab {
    entries: Vec<(String, u64)>,
    total: u64,
    sampler: WeightedIndex<u64>,
}

pub const DEFAULT_VOCAB_CAP: usize = 1_000_000;

impl CellVocab {
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if entries.iter().any(|(_, c)| *c == 0) {
            return Err(Error::Config("vocabulary counts must be positive".into()));
        }
        let total = entries.iter().map(|(_, c)| c).sum();
        let sampler = WeightedIndex::new(entries.iter().map(|(_, c)| *c)).map_err(|e| Error::Config(e.to_string()))?;
        Ok(CellVocab {
            entries,
            total,
            sampler,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, cell: &str) -> u64 {
        self.entries.iter().find(|(s, _)| s == cell).map_or(0, |(_, c)| *c)
    }

    /// Entries ordered by descending count.
    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn probability(&self, cell: &str) -> f64 {
        self.count(cell) as f64 / self.total as f64
    }

    /// Draws a cell string with probability proportional to its count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        &self.entries[self.sampler.sample(rng)].0
    }
}

pub fn build_cell_vocabulary<'a>(corpus: impl IntoIterator<Item = &'a Table>, max_entries: usize) -> Result<CellVocab> {
    let mut counts = CellCounts::default();
    for t in corpus {
        counts.add_table(t);
    }
    counts.into_vocab(max_entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tbl(rows: &[&[&str]]) -> Table {
        Table::new(
            "t",
            None,
            rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn truncation_identity_under_limits() {
        let t = tbl(&[&["a", "b"], &["c", "d"]]);
        assert_eq!(truncate_table(&t, &TruncationLimits::default()), t);
    }

    #[test]
    fn truncation_cuts_long_cells() {
        let long = "a".repeat(350);
        let t = tbl(&[&[long.as_str()]]);
        let out = truncate_table(&t, &TruncationLimits::default());
        assert_eq!(out.rows[0][0], "a".repeat(300));
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let t = tbl(&[&["héllo"]]);
        let lim = TruncationLimits {
            max_cell_chars: 2,
            ..Default::default()
        };
        assert_eq!(truncate_table(&t, &lim).rows[0][0], "hé");
    }

    #[test]
    fn truncation_keeps_top_left_block() {
        let rows: Vec<Vec<String>> = (0..5).map(|i| (0..3).map(|j| format!("{i}{j}")).collect()).collect();
        let t = Table::new("t", Some(vec!["x".into(), "y".into(), "z".into()]), rows).unwrap();
        let lim = TruncationLimits {
            max_rows: 3,
            max_cols: 2,
            max_cell_chars: 300,
        };
        let out = truncate_table(&t, &lim);
        assert_eq!(out.num_rows(), 3);
        assert_eq!(out.num_cols(), 2);
        assert_eq!(out.rows[2], vec!["20", "21"]);
        assert_eq!(out.header.unwrap(), vec!["x", "y"]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = Table::new("r", None, vec![vec!["a".into()], vec![]]);
        assert!(err.is_err());
        let err = Table::new("r", Some(vec![]), vec![vec!["a".into()]]);
        assert!(err.is_err());
    }

    #[test]
    fn reader_skips_malformed_lines() {
        let data = r#"{"id":"a","header":null,"rows":[["1","2"]]}
{"id":"b","header":["h"],"rows":[["1"],["2"]]}
{"id":"bad","header":null,"rows":[["1","2"],["3"]]}
not json
{"id":"c","rows":[["x"]]}
"#;
        let mut r = CorpusReader::from_reader(data.as_bytes(), TruncationLimits::default(), "mem");
        let ids: Vec<String> = r.by_ref().map(|t| t.unwrap().id).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!(r.skipped(), 2);
    }

    #[test]
    fn reader_on_empty_input() {
        let mut r = CorpusReader::from_reader(&b""[..], TruncationLimits::default(), "mem");
        assert_eq!(r.by_ref().count(), 0);
        assert_eq!(r.skipped(), 0);
    }

    #[test]
    fn vocab_counts_single_table() {
        let t = tbl(&[&["a", "a"]]);
        let v = build_cell_vocabulary([&t], DEFAULT_VOCAB_CAP).unwrap();
        assert_eq!(v.entries(), &[("a".to_string(), 2)]);
        assert_eq!(v.total(), 2);
    }

    #[test]
    fn vocab_probabilities() {
        let v = CellVocab::from_entries(vec![("a".into(), 3), ("b".into(), 1)]).unwrap();
        assert_eq!(v.probability("a"), 0.75);
        assert_eq!(v.probability("b"), 0.25);
    }

    #[test]
    fn vocab_cap_keeps_most_frequent() {
        // Cell "cK" appears K+1 times; brute-force the expected top five.
        let mut rows = Vec::new();
        for k in 0..10usize {
            for _ in 0..=k {
                rows.push(vec![format!("c{k}")]);
            }
        }
        let t = Table::new("t", None, rows).unwrap();
        let v = build_cell_vocabulary([&t], 5).unwrap();
        let mut brute: Vec<(String, u64)> = (0..10u64).map(|k| (format!("c{k}"), k + 1)).collect();
        brute.sort_by_key(|e| std::cmp::Reverse(e.1));
        brute.truncate(5);
        assert_eq!(v.entries(), brute.as_slice());
    }

    #[test]
    fn vocab_cap_ties_lexicographic() {
        let t = tbl(&[&["b", "a", "c"]]);
        let v = build_cell_vocabulary([&t], 2).unwrap();
        assert_eq!(v.entries(), &[("a".to_string(), 1), ("b".to_string(), 1)]);
    }

    #[test]
    fn vocab_empty_corpus_is_error() {
        assert!(matches!(
            build_cell_vocabulary(std::iter::empty(), 10),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn shard_merge_equals_sequential() {
        let a = tbl(&[&["x", "y"], &["x", "z"]]);
        let b = tbl(&[&["y", "y"]]);
        let mut seq = CellCounts::default();
        seq.add_table(&a);
        seq.add_table(&b);
        let mut s1 = CellCounts::default();
        s1.add_table(&a);
        let mut s2 = CellCounts::default();
        s2.add_table(&b);
        s1.merge(s2);
        assert_eq!(s1, seq);
    }
}
