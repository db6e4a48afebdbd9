//! Corpus ingestion, validation, and storage.
//!
//! A corpus pairs a line-delimited JSON metadata file with a flat binary
//! embedding shard. Embeddings are L2-normalized once at ingestion so every
//! downstream cosine computation is a plain dot product. The loaded corpus
//! is immutable and safe to share read-only across parallel workers.
//!
//! File formats:
//! - metadata: one JSON object per line, keys exactly
//!   `{"id": integer, "token_length": integer, "language": string}`
//! - embeddings: header of two little-endian u64 (row count, dim) followed
//!   by row-major little-endian f32 values

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Metadata record as it appears on disk, one per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaRecord {
    pub id: u64,
    pub token_length: u64,
    pub language: String,
}

/// Read-only view of a single sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleRef<'a> {
    pub id: u64,
    pub embedding: &'a [f32],
    pub token_length: u64,
    pub language: &'a str,
    pub weight: f64,
}

/// An embedded corpus with unit-norm embeddings.
#[derive(Debug, Clone)]
pub struct Corpus {
    dim: usize,
    embeddings: Vec<f32>,
    ids: Vec<u64>,
    token_lengths: Vec<u64>,
    languages: Vec<u16>,
    weights: Vec<f64>,
    language_vocab: Vec<String>,
    id_index: HashMap<u64, usize>,
}

impl Corpus {
    /// Assemble a corpus from in-memory parts, normalizing embeddings.
    ///
    /// `embeddings` is row-major with `records.len()` rows of `dim` floats.
    pub fn from_parts(dim: usize, embeddings: Vec<f32>, records: Vec<MetaRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        let rows = embeddings.len() / dim;
        if embeddings.len() % dim != 0 || rows != records.len() {
            return Err(Error::RecordCountMismatch {
                meta: records.len(),
                emb: rows,
            });
        }

        let mut normalized = embeddings;
        for (row, chunk) in normalized.chunks_exact_mut(dim).enumerate() {
            let norm: f64 = chunk.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroNormEmbedding { row });
            }
            let inv = (1.0 / norm) as f32;
            for v in chunk.iter_mut() {
                *v *= inv;
            }
        }

        let mut ids = Vec::with_capacity(records.len());
        let mut token_lengths = Vec::with_capacity(records.len());
        let mut languages = Vec::with_capacity(records.len());
        let mut language_vocab: Vec<String> = Vec::new();
        let mut vocab_index: HashMap<String, u16> = HashMap::new();
        let mut id_index = HashMap::with_capacity(records.len());

        for (line, rec) in records.into_iter().enumerate() {
            if rec.token_length < 1 {
                return Err(Error::MalformedRecord {
                    line: line + 1,
                    reason: format!("token_length must be >= 1, got {}", rec.token_length),
                });
            }
            if id_index.insert(rec.id, line).is_some() {
                return Err(Error::DuplicateId {
                    id: rec.id,
                    line: line + 1,
                });
            }
            let lang = match vocab_index.get(&rec.language) {
                Some(&ix) => ix,
                None => {
                    let ix = language_vocab.len() as u16;
                    vocab_index.insert(rec.language.clone(), ix);
                    language_vocab.push(rec.language);
                    ix
                }
            };
            ids.push(rec.id);
            token_lengths.push(rec.token_length);
            languages.push(lang);
        }

        let n = ids.len();
        Ok(Corpus {
            dim,
            embeddings: normalized,
            ids,
            token_lengths,
            languages,
            weights: vec![1.0; n],
            language_vocab,
            id_index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn id(&self, i: usize) -> u64 {
        self.ids[i]
    }

    pub fn token_length(&self, i: usize) -> u64 {
        self.token_lengths[i]
    }

    /// Language index into [`Corpus::language_vocab`].
    pub fn language_ix(&self, i: usize) -> u16 {
        self.languages[i]
    }

    pub fn language(&self, i: usize) -> &str {
        &self.language_vocab[self.languages[i] as usize]
    }

    pub fn language_vocab(&self) -> &[String] {
        &self.language_vocab
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Position of a sample id, if present.
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.id_index.get(&id).copied()
    }

    pub fn sample(&self, i: usize) -> SampleRef<'_> {
        SampleRef {
            id: self.ids[i],
            embedding: self.embedding(i),
            token_length: self.token_lengths[i],
            language: self.language(i),
            weight: self.weights[i],
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.token_lengths.iter().sum()
    }

    /// Uniform random subset without replacement of size `round(fraction * n)`.
    ///
    /// Deterministic for a fixed seed; the subset keeps ascending source
    /// order and inherits the full language vocabulary.
    pub fn probe_subset(&self, fraction: f64, seed_value: u64) -> Result<Corpus> {
        let n = self.len();
        let size = (fraction * n as f64).round() as usize;
        if size == 0 {
            return Err(Error::EmptySubset { fraction, n });
        }
        let size = size.min(n);
        let mut rng = seed::rng(seed_value, "probe-subset");
        let mut picked: Vec<usize> = sample(&mut rng, n, size).into_vec();
        picked.sort_unstable();
        Ok(self.subset_by_indices(&picked))
    }

    /// New corpus holding the given rows (indices into this corpus).
    pub fn subset_by_indices(&self, indices: &[usize]) -> Corpus {
        let mut embeddings = Vec::with_capacity(indices.len() * self.dim);
        let mut ids = Vec::with_capacity(indices.len());
        let mut token_lengths = Vec::with_capacity(indices.len());
        let mut languages = Vec::with_capacity(indices.len());
        let mut weights = Vec::with_capacity(indices.len());
        let mut id_index = HashMap::with_capacity(indices.len());
        for (pos, &i) in indices.iter().enumerate() {
            embeddings.extend_from_slice(self.embedding(i));
            ids.push(self.ids[i]);
            token_lengths.push(self.token_lengths[i]);
            languages.push(self.languages[i]);
            weights.push(self.weights[i]);
            id_index.insert(self.ids[i], pos);
        }
        Corpus {
            dim: self.dim,
            embeddings,
            ids,
            token_lengths,
            languages,
            weights,
            language_vocab: self.language_vocab.clone(),
            id_index,
        }
    }

    /// Write the corpus as a store directory (`metadata.jsonl` + `embeddings.bin`).
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_metadata(&dir.join(META_FILE), self)?;
        write_embeddings(&dir.join(EMB_FILE), self.dim, &self.embeddings)?;
        Ok(())
    }

    /// Load a store directory previously written by [`Corpus::export`].
    pub fn load_store(dir: &Path) -> Result<Corpus> {
        ingest(&dir.join(META_FILE), &dir.join(EMB_FILE))
    }
}

pub const META_FILE: &str = "metadata.jsonl";
pub const EMB_FILE: &str = "embeddings.bin";

/// Load and validate a corpus from a metadata file and an embedding shard.
pub fn ingest(metadata_path: &Path, embedding_path: &Path) -> Result<Corpus> {
    let records = read_metadata(metadata_path)?;
    let (dim, embeddings) = read_embeddings(embedding_path)?;
    Corpus::from_parts(dim, embeddings, records)
}

fn read_metadata(path: &Path) -> Result<Vec<MetaRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (ix, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetaRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: ix + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

fn write_metadata(path: &Path, corpus: &Corpus) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..corpus.len() {
        let rec = MetaRecord {
            id: corpus.id(i),
            token_length: corpus.token_length(i),
            language: corpus.language(i).to_string(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read an embedding shard, returning `(dim, row-major floats)`.
pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = [0u8; 16];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::InvalidEmbeddingFile {
            path: path.into(),
            reason: "file shorter than 16-byte header".into(),
        })?;
    let rows = u64::from_le_bytes(header[0..8].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::InvalidEmbeddingFile {
            path: path.into(),
            reason: "dim must be positive".into(),
        });
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let expected = rows * dim * 4;
    if bytes.len() != expected {
        return Err(Error::InvalidEmbeddingFile {
            path: path.into(),
            reason: format!("expected {expected} payload bytes, found {}", bytes.len()),
        });
    }
    let mut values = Vec::with_capacity(rows * dim);
    for chunk in bytes.chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((dim, values))
}

/// Write an embedding shard in the binary format [`read_embeddings`] expects.
pub fn write_embeddings(path: &Path, dim: usize, values: &[f32]) -> Result<()> {
    let rows = values.len() / dim;
    debug_assert_eq!(values.len(), rows * dim);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&(rows as u64).to_le_bytes())
        .and_then(|_| w.write_all(&(dim as u64).to_le_bytes()))
        .map_err(|e| Error::io(path, e))?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn record(id: u64, token_length: u64, language: &str) -> MetaRecord {
        MetaRecord {
            id,
            token_length,
            language: language.to_string(),
        }
    }

    fn toy_corpus(n: usize, dim: usize) -> Corpus {
        let mut emb = Vec::new();
        let mut recs = Vec::new();
        for i in 0..n {
            for j in 0..dim {
                emb.push(((i * dim + j) % 7) as f32 + 1.0);
            }
            recs.push(record(i as u64, 10 + i as u64, if i % 2 == 0 { "rust" } else { "python" }));
        }
        Corpus::from_parts(dim, emb, recs).unwrap()
    }

    #[test]
    fn ingest_normalizes_embeddings() {
        let emb = vec![1.0, 2.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5];
        let recs = vec![record(1, 5, "rust"), record(2, 6, "go"), record(3, 7, "rust")];
        let corpus = Corpus::from_parts(4, emb, recs).unwrap();
        assert_eq!(corpus.len(), 3);
        for i in 0..3 {
            let norm: f64 = corpus
                .embedding(i)
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "row {i} norm {norm}");
        }
    }

    #[test]
    fn zero_norm_row_is_rejected_with_index() {
        let emb = vec![1.0, 0.0, 0.0, 0.0];
        let recs = vec![record(1, 5, "rust"), record(2, 5, "rust")];
        match Corpus::from_parts(2, emb, recs) {
            Err(Error::ZeroNormEmbedding { row }) => assert_eq!(row, 1),
            other => panic!("expected ZeroNormEmbedding, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let emb = vec![1.0f32; 8]; // 4 rows of dim 2
        let recs = (0..5).map(|i| record(i, 3, "rust")).collect();
        match Corpus::from_parts(2, emb, recs) {
            Err(Error::RecordCountMismatch { meta, emb }) => {
                assert_eq!((meta, emb), (5, 4));
            }
            other => panic!("expected RecordCountMismatch, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_a_hard_error() {
        let emb = vec![1.0f32, 0.0, 0.0, 1.0];
        let recs = vec![record(9, 5, "rust"), record(9, 5, "rust")];
        assert!(matches!(
            Corpus::from_parts(2, emb, recs),
            Err(Error::DuplicateId { id: 9, .. })
        ));
    }

    #[test]
    fn zero_token_length_is_malformed() {
        let emb = vec![1.0f32, 0.0];
        let recs = vec![record(1, 0, "rust")];
        assert!(matches!(
            Corpus::from_parts(2, emb, recs),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn probe_subset_size_and_determinism() {
        let corpus = toy_corpus(1000, 4);
        let a = corpus.probe_subset(0.2, 7).unwrap();
        let b = corpus.probe_subset(0.2, 7).unwrap();
        assert_eq!(a.len(), 200);
        let ids_a: HashSet<u64> = (0..a.len()).map(|i| a.id(i)).collect();
        let ids_b: HashSet<u64> = (0..b.len()).map(|i| b.id(i)).collect();
        assert_eq!(ids_a, ids_b);
        let c = corpus.probe_subset(0.2, 8).unwrap();
        let ids_c: HashSet<u64> = (0..c.len()).map(|i| c.id(i)).collect();
        assert_ne!(ids_a, ids_c);
    }

    #[test]
    fn probe_subset_full_fraction_is_identity_on_ids() {
        let corpus = toy_corpus(50, 3);
        let sub = corpus.probe_subset(1.0, 0).unwrap();
        assert_eq!(sub.len(), 50);
        let ids: HashSet<u64> = (0..sub.len()).map(|i| sub.id(i)).collect();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn export_then_ingest_round_trips() {
        let corpus = toy_corpus(20, 5);
        let dir = tempfile::tempdir().unwrap();
        corpus.export(dir.path()).unwrap();
        let back = Corpus::load_store(dir.path()).unwrap();
        assert_eq!(back.len(), corpus.len());
        assert_eq!(back.dim(), corpus.dim());
        for i in 0..corpus.len() {
            assert_eq!(back.id(i), corpus.id(i));
            assert_eq!(back.token_length(i), corpus.token_length(i));
            assert_eq!(back.language(i), corpus.language(i));
            for (x, y) in back.embedding(i).iter().zip(corpus.embedding(i)) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
