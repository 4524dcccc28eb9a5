//! Per-class word statistics and salience lexicons.
//!
//! A word's salience for a class is the geometric mean of two ratios: how
//! exclusively the word occurs in that class (its count there over its count
//! across all classes) and how prominent it is inside the class (its count
//! there over the class's total token mass). Top-scoring words per class
//! form the lexicon that later guides generation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{preprocess, Dataset, PreprocessConfig};

#[derive(Debug, Error)]
pub enum SalienceError {
    #[error("no tokens survive preprocessing")]
    EmptyCorpus,
    #[error("class {class:?} is not in the table")]
    UnknownClass { class: String },
    #[error("lexicon for class {class:?} is empty (min_count {min_count})")]
    EmptyClassLexicon { class: String, min_count: u64 },
    #[error("lexicon size must be at least 1")]
    ZeroSize,
    #[error("malformed lexicon at line {line}: {reason}")]
    MalformedLexicon { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-word, per-class token counts over preprocessed text.
#[derive(Clone, Debug)]
pub struct CountTable {
    classes: Vec<String>,
    counts: HashMap<String, Vec<u64>>,
    class_totals: Vec<u64>,
}

/// Tallies token occurrences by class. Text is preprocessed with `cfg`;
/// dropped examples contribute nothing.
pub fn count(ds: &Dataset, cfg: &PreprocessConfig) -> Result<CountTable, SalienceError> {
    let classes: Vec<String> = ds.classes().to_vec();
    let mut counts: HashMap<String, Vec<u64>> = HashMap::new();
    let mut class_totals = vec![0u64; classes.len()];
    for ex in ds.examples() {
        let ci = match ds.class_index(&ex.label) {
            Some(i) => i,
            None => continue,
        };
        if let Some(tokens) = preprocess(&ex.text, cfg) {
            class_totals[ci] += tokens.len() as u64;
            for t in tokens {
                counts
                    .entry(t)
                    .or_insert_with(|| vec![0; classes.len()])[ci] += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(SalienceError::EmptyCorpus);
    }
    Ok(CountTable {
        classes,
        counts,
        class_totals,
    })
}

impl CountTable {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Count of `word` within `class` (0 if unseen).
    pub fn class_count(&self, word: &str, class: &str) -> Result<u64, SalienceError> {
        let ci = self.class_idx(class)?;
        Ok(self.counts.get(word).map_or(0, |row| row[ci]))
    }

    /// Count of `word` across all classes.
    pub fn total_count(&self, word: &str) -> u64 {
        self.counts
            .get(word)
            .map_or(0, |row| row.iter().sum())
    }

    /// Total token mass of `class`.
    pub fn class_total(&self, class: &str) -> Result<u64, SalienceError> {
        Ok(self.class_totals[self.class_idx(class)?])
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    fn class_idx(&self, class: &str) -> Result<usize, SalienceError> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| SalienceError::UnknownClass {
                class: class.to_string(),
            })
    }
}

/// Salience of `word` for `class`: the geometric mean of the word's
/// within-class share of its cross-class count and its share of the class's
/// token mass. Returns 0 for words unseen in the class; errors on an
/// unknown class.
pub fn salience_score(
    table: &CountTable,
    word: &str,
    class: &str,
) -> Result<f64, SalienceError> {
    let in_class = table.class_count(word, class)?;
    if in_class == 0 {
        return Ok(0.0);
    }
    let across = table.total_count(word);
    let class_mass = table.class_total(class)?;
    let exclusivity = in_class as f64 / across as f64;
    let prominence = in_class as f64 / class_mass as f64;
    Ok((exclusivity * prominence).sqrt())
}

/// Ranked salient words per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    classes: Vec<String>,
    entries: Vec<Vec<(String, f64)>>,
}

/// Builds the per-class lexicon: for every class, the `n` highest-salience
/// words with an in-class count of at least `min_count`. Ties break by
/// higher in-class count, then lexicographically. Errors if any class ends
/// up with no qualifying word.
pub fn build_lexicon(
    table: &CountTable,
    n: usize,
    min_count: u64,
) -> Result<Lexicon, SalienceError> {
    if n == 0 {
        return Err(SalienceError::ZeroSize);
    }
    let floor = min_count.max(1);
    let mut entries = Vec::with_capacity(table.classes.len());
    for (ci, class) in table.classes.iter().enumerate() {
        let mut ranked: Vec<(String, f64, u64)> = Vec::new();
        for (word, row) in &table.counts {
            let c = row[ci];
            if c < floor {
                continue;
            }
            let score = salience_score(table, word, class)?;
            ranked.push((word.clone(), score, c));
        }
        if ranked.is_empty() {
            return Err(SalienceError::EmptyClassLexicon {
                class: class.clone(),
                min_count,
            });
        }
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| b.2.cmp(&a.2))
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked.truncate(n);
        entries.push(ranked.into_iter().map(|(w, s, _)| (w, s)).collect());
    }
    Ok(Lexicon {
        classes: table.classes.clone(),
        entries,
    })
}

impl Lexicon {
    /// Assembles a lexicon directly from (class, ranked words) pairs.
    pub fn from_entries(pairs: Vec<(String, Vec<(String, f64)>)>) -> Lexicon {
        let (classes, entries) = pairs.into_iter().unzip();
        Lexicon { classes, entries }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Ranked (word, score) pairs for `class`.
    pub fn entry(&self, class: &str) -> Option<&[(String, f64)]> {
        self.classes
            .iter()
            .position(|c| c == class)
            .map(|i| self.entries[i].as_slice())
    }

    /// Serializes as TSV (`class<TAB>word<TAB>score` after a header row),
    /// classes and ranks in order. Scores round-trip exactly.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class\tword\tscore\n");
        for (ci, class) in self.classes.iter().enumerate() {
            for (word, score) in &self.entries[ci] {
                out.push_str(&format!("{class}\t{word}\t{score}\n"));
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Lexicon, SalienceError> {
        let mut classes: Vec<String> = Vec::new();
        let mut entries: Vec<Vec<(String, f64)>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != "class\tword\tscore" {
                    return Err(SalienceError::MalformedLexicon {
                        line: 1,
                        reason: format!("bad header {line:?}"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (class, word, score) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(c), Some(w), Some(s), None) => (c, w, s),
                _ => {
                    return Err(SalienceError::MalformedLexicon {
                        line: i + 1,
                        reason: "expected exactly 3 tab-separated fields".to_string(),
                    })
                }
            };
            let score: f64 = score.parse().map_err(|e| SalienceError::MalformedLexicon {
                line: i + 1,
                reason: format!("bad score: {e}"),
            })?;
            let ci = match classes.iter().position(|c| c == class) {
                Some(ci) => ci,
                None => {
                    classes.push(class.to_string());
                    entries.push(Vec::new());
                    classes.len() - 1
                }
            };
            entries[ci].push((word.to_string(), score));
        }
        if classes.is_empty() {
            return Err(SalienceError::MalformedLexicon {
                line: 1,
                reason: "no entries".to_string(),
            });
        }
        Ok(Lexicon { classes, entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), SalienceError> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Lexicon, SalienceError> {
        Lexicon::from_tsv(&fs::read_to_string(path)?)
    }
}
