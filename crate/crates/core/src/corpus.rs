//! Sparse timestamped bag-of-words corpora.
//!
//! A corpus is a vocabulary, a sorted set of timestamps, and a list of
//! documents, each holding a timestamp index and sparse `(token, count)`
//! pairs. The on-disk format is a TSV with rows
//! `doc_id <tab> timestamp <tab> token_id <tab> count` plus a vocabulary
//! file with one token per line (line number = token id).
//!
//! Ingestion turns raw timestamped texts into a corpus: source texts are
//! chunked into documents of three blank-line-separated paragraphs, tokens
//! are lowercased alphabetic runs of length ≥ 2, and the vocabulary is
//! filtered by a minimum corpus count and by keeping the upper quantile of
//! TFIDF scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One document: a timestamp index into [`Corpus::timestamps`] and sparse
/// token counts sorted by token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub timestamp_index: usize,
    pub counts: Vec<(usize, u32)>,
}

impl Document {
    pub fn total_tokens(&self) -> u64 {
        self.counts.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&(_, c)| c == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab: Vec<String>,
    /// Sorted unique timestamps.
    pub timestamps: Vec<f64>,
    pub docs: Vec<Document>,
}

impl Corpus {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc_timestamp(&self, n: usize) -> f64 {
        self.timestamps[self.docs[n].timestamp_index]
    }

    pub fn total_tokens(&self) -> u64 {
        self.docs.iter().map(|d| d.total_tokens()).sum()
    }

    /// Number of documents at each timestamp.
    pub fn docs_per_timestamp(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.timestamps.len()];
        for d in &self.docs {
            counts[d.timestamp_index] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.timestamps.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(Error::InvariantViolation(format!(
                    "timestamps must be sorted and unique at index {i}"
                )));
            }
        }
        for (n, d) in self.docs.iter().enumerate() {
            if d.timestamp_index >= self.timestamps.len() {
                return Err(Error::InvariantViolation(format!(
                    "document {n} references timestamp {} of {}",
                    d.timestamp_index,
                    self.timestamps.len()
                )));
            }
            if d.is_empty() {
                return Err(Error::InvariantViolation(format!("document {n} is empty")));
            }
            if d.counts.iter().any(|&(p, _)| p >= self.vocab.len()) {
                return Err(Error::InvariantViolation(format!(
                    "document {n} references a token outside the vocabulary"
                )));
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (n, d) in self.docs.iter().enumerate() {
            let t = self.timestamps[d.timestamp_index];
            for &(p, c) in &d.counts {
                writeln!(out, "{n}\t{t}\t{p}\t{c}").unwrap();
            }
        }
        out
    }

    pub fn write_tsv<P: AsRef<Path>>(&self, data: P, vocab: P) -> Result<()> {
        std::fs::write(data, self.to_tsv())?;
        std::fs::write(vocab, self.vocab.join("\n") + "\n")?;
        Ok(())
    }

    pub fn from_tsv(data: &str, vocab: Vec<String>) -> Result<Corpus> {
        struct Raw {
            timestamp: f64,
            counts: BTreeMap<usize, u32>,
        }
        let mut order: Vec<String> = Vec::new();
        let mut raws: BTreeMap<String, Raw> = BTreeMap::new();
        for (lineno, line) in data.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!(
                    "line {}: expected 4 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let doc_id = fields[0].to_string();
            let t: f64 = fields[1]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad timestamp", lineno + 1)))?;
            let p: usize = fields[2]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad token id", lineno + 1)))?;
            let c: u32 = fields[3]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad count", lineno + 1)))?;
            if p >= vocab.len() {
                return Err(Error::Parse(format!(
                    "line {}: token id {p} outside vocabulary of {}",
                    lineno + 1,
                    vocab.len()
                )));
            }
            let entry = raws.entry(doc_id.clone()).or_insert_with(|| {
                order.push(doc_id);
                Raw {
                    timestamp: t,
                    counts: BTreeMap::new(),
                }
            });
            if entry.timestamp != t {
                return Err(Error::Parse(format!(
                    "line {}: document changes timestamp ({} vs {})",
                    lineno + 1,
                    entry.timestamp,
                    t
                )));
            }
            *entry.counts.entry(p).or_insert(0) += c;
        }
        let mut timestamps: Vec<f64> = raws.values().map(|r| r.timestamp).collect();
        timestamps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        timestamps.dedup();
        let docs = order
            .iter()
            .map(|id| {
                let raw = &raws[id];
                let timestamp_index = timestamps
                    .binary_search_by(|t| t.partial_cmp(&raw.timestamp).unwrap())
                    .expect("timestamp present by construction");
                Document {
                    timestamp_index,
                    counts: raw.counts.iter().map(|(&p, &c)| (p, c)).collect(),
                }
            })
            .collect();
        let corpus = Corpus {
            vocab,
            timestamps,
            docs,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn read_tsv<P: AsRef<Path>>(data: P, vocab: P) -> Result<Corpus> {
        let vocab: Vec<String> = std::fs::read_to_string(vocab)?
            .lines()
            .map(|l| l.to_string())
            .collect();
        Corpus::from_tsv(&std::fs::read_to_string(data)?, vocab)
    }
}

/// A raw source text with its timestamp, prior to chunking and tokenization.
#[derive(Debug, Clone)]
pub struct RawDocument {
    pub timestamp: f64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Minimum number of corpus-wide occurrences for a term to survive.
    pub min_count: u32,
    /// Fraction of terms kept by TFIDF score (upper quantile). `0` disables
    /// the TFIDF filter entirely.
    pub tfidf_quantile: f64,
    /// Number of paragraphs chunked into one model document.
    pub paragraphs_per_doc: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            min_count: 10,
            tfidf_quantile: 0.15,
            paragraphs_per_doc: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub chunks: usize,
    pub docs_kept: usize,
    pub docs_dropped_empty: usize,
    pub vocab_before: usize,
    pub vocab_after: usize,
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphabetic() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            if current.chars().count() >= 2 {
                tokens.push(std::mem::take(&mut current));
            } else {
                current.clear();
            }
        }
    }
    if current.chars().count() >= 2 {
        tokens.push(current);
    }
    tokens
}

fn chunk_paragraphs(text: &str, per_doc: usize) -> Vec<String> {
    let paragraphs: Vec<&str> = text
        .split("\n\n")
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    paragraphs
        .chunks(per_doc.max(1))
        .map(|c| c.join("\n"))
        .collect()
}

/// Builds a corpus from raw timestamped texts.
///
/// TFIDF variant: per document, `tf(term) · ln(N_docs / df(term))`; a term is
/// scored by the maximum over documents, and the upper `tfidf_quantile`
/// fraction of terms survives (exact top-⌈q·V⌉ with ties broken
/// alphabetically, so raising `min_count` can never enlarge the vocabulary).
/// Documents emptied by filtering are dropped and counted in the returned
/// stats.
pub fn ingest(raw: &[RawDocument], config: &IngestConfig) -> Result<(Corpus, IngestStats)> {
    if raw.is_empty() {
        return Err(Error::Usage("no input documents".into()));
    }
    if !(0.0..=1.0).contains(&config.tfidf_quantile) {
        return Err(Error::InvalidParameter(format!(
            "tfidf quantile must lie in [0, 1], got {}",
            config.tfidf_quantile
        )));
    }

    // Chunk and tokenize.
    let mut chunk_tokens: Vec<(f64, Vec<String>)> = Vec::new();
    for doc in raw {
        for chunk in chunk_paragraphs(&doc.text, config.paragraphs_per_doc) {
            chunk_tokens.push((doc.timestamp, tokenize(&chunk)));
        }
    }

    // Corpus-wide counts and per-term document frequency.
    let mut total_counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut doc_frequency: BTreeMap<&str, u64> = BTreeMap::new();
    let mut per_chunk: Vec<BTreeMap<&str, u32>> = Vec::with_capacity(chunk_tokens.len());
    for (_, tokens) in &chunk_tokens {
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for tok in tokens {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
        for (&term, &c) in &counts {
            *total_counts.entry(term).or_insert(0) += c as u64;
            *doc_frequency.entry(term).or_insert(0) += 1;
        }
        per_chunk.push(counts);
    }
    let vocab_before = total_counts.len();

    // Count filter.
    let count_kept: Vec<&str> = total_counts
        .iter()
        .filter(|(_, &c)| c >= config.min_count as u64)
        .map(|(&t, _)| t)
        .collect();

    // TFIDF filter: max over documents of tf * ln(N / df).
    let kept: Vec<&str> = if config.tfidf_quantile == 0.0 {
        count_kept
    } else {
        let n_docs = per_chunk.len() as f64;
        let mut scored: Vec<(f64, &str)> = count_kept
            .iter()
            .map(|&term| {
                let idf = (n_docs / doc_frequency[term] as f64).ln();
                let max_tf = per_chunk
                    .iter()
                    .filter_map(|c| c.get(term))
                    .cloned()
                    .max()
                    .unwrap_or(0);
                (max_tf as f64 * idf, term)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        let keep =
            ((config.tfidf_quantile * scored.len() as f64).ceil() as usize).min(scored.len());
        scored.truncate(keep);
        scored.into_iter().map(|(_, t)| t).collect()
    };

    let mut vocab: Vec<String> = kept.iter().map(|t| t.to_string()).collect();
    vocab.sort();
    if vocab.is_empty() {
        return Err(Error::InvalidParameter(
            "vocabulary is empty after filtering; relax min_count or the TFIDF quantile".into(),
        ));
    }
    let index: BTreeMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    // Rebuild documents over the filtered vocabulary.
    let mut timestamps: Vec<f64> = chunk_tokens.iter().map(|(t, _)| *t).collect();
    timestamps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    timestamps.dedup();

    let mut docs = Vec::new();
    let mut dropped = 0usize;
    for ((t, _), counts) in chunk_tokens.iter().zip(&per_chunk) {
        let filtered: Vec<(usize, u32)> = counts
            .iter()
            .filter_map(|(&term, &c)| index.get(term).map(|&i| (i, c)))
            .collect();
        if filtered.is_empty() {
            dropped += 1;
            continue;
        }
        let timestamp_index = timestamps
            .binary_search_by(|x| x.partial_cmp(t).unwrap())
            .expect("timestamp present");
        let mut counts = filtered;
        counts.sort_by_key(|&(p, _)| p);
        docs.push(Document {
            timestamp_index,
            counts,
        });
    }

    // Drop timestamps that lost all their documents.
    let used: Vec<bool> = {
        let mut used = vec![false; timestamps.len()];
        for d in &docs {
            used[d.timestamp_index] = true;
        }
        used
    };
    let remap: Vec<usize> = {
        let mut remap = vec![usize::MAX; timestamps.len()];
        let mut next = 0;
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = next;
                next += 1;
            }
        }
        remap
    };
    let timestamps: Vec<f64> = timestamps
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|(&t, _)| t)
        .collect();
    for d in &mut docs {
        d.timestamp_index = remap[d.timestamp_index];
    }

    let stats = IngestStats {
        chunks: per_chunk.len(),
        docs_kept: docs.len(),
        docs_dropped_empty: dropped,
        vocab_before,
        vocab_after: vocab.len(),
    };
    let corpus = Corpus {
        vocab,
        timestamps,
        docs,
    };
    corpus.validate()?;
    Ok((corpus, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(t: f64, text: &str) -> RawDocument {
        RawDocument {
            timestamp: t,
            text: text.to_string(),
        }
    }

    #[test]
    fn tokenizer_lowercases_and_drops_short_runs() {
        assert_eq!(
            tokenize("The cat, the CAT — a hat!"),
            vec!["the", "cat", "the", "cat", "hat"]
        );
    }

    #[test]
    fn chunking_groups_three_paragraphs() {
        let text = "p1\n\np2\n\np3\n\np4";
        let chunks = chunk_paragraphs(text, 3);
        assert_eq!(chunks.len(), 2);
        assert!(chunks[0].contains("p3"));
        assert_eq!(chunks[1], "p4");
    }

    #[test]
    fn identity_filtering_keeps_everything() {
        let docs = [raw(1.0, "alpha beta beta"), raw(2.0, "beta gamma")];
        let config = IngestConfig {
            min_count: 1,
            tfidf_quantile: 0.0,
            paragraphs_per_doc: 3,
        };
        let (corpus, stats) = ingest(&docs, &config).unwrap();
        assert_eq!(corpus.vocab, vec!["alpha", "beta", "gamma"]);
        assert_eq!(stats.docs_dropped_empty, 0);
        assert_eq!(corpus.total_tokens(), 5);
    }

    #[test]
    fn min_count_removes_rare_terms() {
        // "alpha" appears once, the others twice.
        let docs = [raw(1.0, "alpha beta gamma"), raw(2.0, "beta gamma")];
        let config = IngestConfig {
            min_count: 2,
            tfidf_quantile: 0.0,
            paragraphs_per_doc: 3,
        };
        let (corpus, _) = ingest(&docs, &config).unwrap();
        assert_eq!(corpus.vocab, vec!["beta", "gamma"]);
    }

    #[test]
    fn emptied_documents_are_dropped_and_counted() {
        let docs = [
            raw(1.0, "common common rare"),
            raw(2.0, "common common"),
            raw(3.0, "rare"),
        ];
        let config = IngestConfig {
            min_count: 4,
            tfidf_quantile: 0.0,
            paragraphs_per_doc: 3,
        };
        let (corpus, stats) = ingest(&docs, &config).unwrap();
        assert_eq!(corpus.vocab, vec!["common"]);
        assert_eq!(stats.docs_dropped_empty, 1);
        assert_eq!(corpus.n_docs(), 2);
        assert_eq!(corpus.timestamps, vec![1.0, 2.0]);
    }

    #[test]
    fn empty_vocabulary_is_a_configuration_error() {
        let docs = [raw(1.0, "one two")];
        let config = IngestConfig {
            min_count: 100,
            tfidf_quantile: 0.0,
            paragraphs_per_doc: 3,
        };
        assert!(ingest(&docs, &config).is_err());
    }

    #[test]
    fn tfidf_keeps_the_upper_quantile() {
        // "rare" concentrates in one document (high tf·idf); "filler" is
        // everywhere (idf = 0).
        let docs = [
            raw(1.0, "rare rare rare filler"),
            raw(2.0, "filler other"),
            raw(3.0, "filler other words"),
        ];
        let config = IngestConfig {
            min_count: 1,
            tfidf_quantile: 0.25,
            paragraphs_per_doc: 3,
        };
        let (corpus, stats) = ingest(&docs, &config).unwrap();
        assert_eq!(corpus.vocab, vec!["rare"]);
        assert_eq!(stats.vocab_before, 4);
    }

    #[test]
    fn raising_min_count_never_enlarges_vocabulary() {
        let docs = [
            raw(1.0, "aa aa aa bb cc dd dd"),
            raw(2.0, "bb bb cc dd ee ee ee ee"),
            raw(3.0, "cc dd ee ff gg gg"),
        ];
        for q in [0.0, 0.3, 0.6, 1.0] {
            let mut last = usize::MAX;
            for mc in 1..=5 {
                let config = IngestConfig {
                    min_count: mc,
                    tfidf_quantile: q,
                    paragraphs_per_doc: 3,
                };
                let size = match ingest(&docs, &config) {
                    Ok((c, _)) => c.vocab_size(),
                    Err(_) => 0,
                };
                assert!(size <= last, "q={q}, min_count={mc}: {size} > {last}");
                last = size;
            }
        }
    }

    #[test]
    fn tsv_round_trip() {
        let docs = [
            raw(1790.0, "alpha beta beta"),
            raw(1800.0, "beta gamma gamma"),
        ];
        let config = IngestConfig {
            min_count: 1,
            tfidf_quantile: 0.0,
            paragraphs_per_doc: 3,
        };
        let (corpus, _) = ingest(&docs, &config).unwrap();
        let tsv = corpus.to_tsv();
        let back = Corpus::from_tsv(&tsv, corpus.vocab.clone()).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn tsv_rejects_inconsistent_timestamps() {
        let vocab = vec!["a".to_string()];
        let tsv = "d0\t1.0\t0\t1\nd0\t2.0\t0\t1\n";
        assert!(Corpus::from_tsv(tsv, vocab).is_err());
    }
}
