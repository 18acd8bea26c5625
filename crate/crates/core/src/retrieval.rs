//! Passage corpus, BM25 and dense retrievers, and answer-containment
//! recall@k.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::map_reqwest;
use crate::error::{BackendError, RetrievalError};
use crate::generate::QaItem;
use crate::text::{fnv1a64, normalize, tokenize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// Passages in file order with an id lookup.
#[derive(Debug, Clone)]
pub struct Corpus {
    passages: Vec<Passage>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(passages: Vec<Passage>) -> Result<Self, RetrievalError> {
        if passages.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut index = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(RetrievalError::EmptyPassage(p.id.clone()));
            }
            if index.insert(p.id.clone(), i).is_some() {
                return Err(RetrievalError::DuplicatePassage(p.id.clone()));
            }
        }
        Ok(Self { passages, index })
    }

    /// Reads line-delimited `{"id", "title", "text"}` records.
    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let io = |e| RetrievalError::Io(path.display().to_string(), e);
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut passages = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let p: Passage = serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            passages.push(p);
        }
        Self::new(passages)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.index.get(id).map(|&i| &self.passages[i])
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage: String,
    pub score: f64,
}

/// Retrieved passages for one question, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub qid: String,
    pub retriever: String,
    pub ranking: Vec<ScoredPassage>,
}

/// Sorts by descending score, ties by ascending passage id, and keeps `k`.
pub fn rank_top_k(mut scored: Vec<ScoredPassage>, k: usize) -> Vec<ScoredPassage> {
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.passage.cmp(&b.passage))
    });
    scored.truncate(k);
    scored
}

pub trait Retriever: Send + Sync {
    fn name(&self) -> &str;

    /// Top `min(k, corpus size)` passages for `question`.
    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<ScoredPassage>, RetrievalError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 over lowercase alphanumeric tokens.
///
/// `score(q, d) = sum over query tokens t of
///   idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avg_len))`
/// with `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`. Repeated query
/// tokens contribute once per occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub params: Bm25Params,
    ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Self {
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(corpus.len());
        for (i, p) in corpus.passages().iter().enumerate() {
            let tokens = tokenize(&p.text);
            doc_len.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i as u32, n));
            }
        }
        let total: u64 = doc_len.iter().map(|&l| u64::from(l)).sum();
        let avg_len = if doc_len.is_empty() {
            0.0
        } else {
            total as f64 / doc_len.len() as f64
        };
        Self {
            params,
            ids: corpus.passages().iter().map(|p| p.id.clone()).collect(),
            doc_len,
            avg_len,
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores for every passage, in corpus order.
    pub fn score_all(&self, question: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.ids.len()];
        let Bm25Params { k1, b } = self.params;
        for term in tokenize(question) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let len_norm = if self.avg_len > 0.0 {
                    f64::from(self.doc_len[doc as usize]) / self.avg_len
                } else {
                    0.0
                };
                scores[doc as usize] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_norm));
            }
        }
        scores
    }
}

impl Retriever for Bm25Index {
    fn name(&self) -> &str {
        "bm25"
    }

    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<ScoredPassage>, RetrievalError> {
        let scored = self
            .score_all(question)
            .into_iter()
            .zip(&self.ids)
            .map(|(score, id)| ScoredPassage {
                passage: id.clone(),
                score,
            })
            .collect();
        Ok(rank_top_k(scored, k))
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        (**self).embed(texts)
    }
}

/// Cosine similarity, computed in f64. Zero vectors score 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn unit_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
}

/// Bag-of-words counts folded into `dimension` buckets by FNV-1a.
#[derive(Debug, Clone)]
pub struct HashingBowProvider {
    dimension: usize,
}

impl HashingBowProvider {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension: dimension.max(1),
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dimension];
        for t in tokenize(text) {
            v[(fnv1a64(t.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashingBowProvider {
    fn name(&self) -> &str {
        "hashing-bow"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Exact bag-of-words over a fixed vocabulary: one dimension per token,
/// out-of-vocabulary tokens ignored. Two texts have cosine 1.0 exactly when
/// their in-vocabulary token counts are proportional.
#[derive(Debug, Clone)]
pub struct VocabularyBowProvider {
    vocab: BTreeMap<String, usize>,
}

impl VocabularyBowProvider {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
        tokens.sort();
        tokens.dedup();
        Self {
            vocab: tokens.into_iter().enumerate().map(|(i, t)| (t, i)).collect(),
        }
    }
}

impl EmbeddingProvider for VocabularyBowProvider {
    fn name(&self) -> &str {
        "vocabulary-bow"
    }

    fn dimension(&self) -> usize {
        self.vocab.len().max(1)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts
            .iter()
            .map(|text| {
                let mut v = vec![0.0f32; self.dimension()];
                for t in tokenize(text) {
                    if let Some(&i) = self.vocab.get(&t) {
                        v[i] += 1.0;
                    }
                }
                v
            })
            .collect())
    }
}

/// HTTP embedding endpoint: POST `{"texts": [...]}` returning
/// `{"vectors": [[...], ...]}`.
pub struct HttpEmbeddingProvider {
    url: String,
    dimension: usize,
    batch_size: usize,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

impl HttpEmbeddingProvider {
    pub fn new(url: impl Into<String>, dimension: usize, batch_size: usize, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            dimension,
            batch_size: batch_size.max(1),
            client,
        })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn name(&self) -> &str {
        "http-embedding"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let response = self
                .client
                .post(&self.url)
                .json(&EmbedRequest { texts: chunk })
                .send()
                .map_err(map_reqwest)?;
            if !response.status().is_success() {
                return Err(BackendError::Request(format!("status {}", response.status())));
            }
            let body: EmbedResponse = response.json().map_err(map_reqwest)?;
            if body.vectors.len() != chunk.len() {
                return Err(BackendError::Response(format!(
                    "asked for {} vectors, got {}",
                    chunk.len(),
                    body.vectors.len()
                )));
            }
            if let Some(v) = body.vectors.iter().find(|v| v.len() != self.dimension) {
                return Err(BackendError::Response(format!(
                    "vector of dimension {}, expected {}",
                    v.len(),
                    self.dimension
                )));
            }
            out.extend(body.vectors);
        }
        Ok(out)
    }
}

pub const VECTOR_MAGIC: [u8; 4] = *b"TQVF";
pub const VECTOR_VERSION: u32 = 1;

/// Writes the binary vector file: magic, version (u32), dimension (u32),
/// count (u64), then row-major little-endian f32.
pub fn write_vectors(path: &Path, dimension: usize, rows: &[Vec<f32>]) -> Result<(), RetrievalError> {
    let io = |e| RetrievalError::Io(path.display().to_string(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&VECTOR_MAGIC).map_err(io)?;
    w.write_all(&VECTOR_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(dimension as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(rows.len() as u64).to_le_bytes()).map_err(io)?;
    for row in rows {
        if row.len() != dimension {
            return Err(RetrievalError::Dimension {
                expected: dimension,
                got: row.len(),
            });
        }
        for x in row {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a vector file, returning `(dimension, rows)`.
pub fn read_vectors(path: &Path) -> Result<(usize, Vec<Vec<f32>>), RetrievalError> {
    let io = |e| RetrievalError::Io(path.display().to_string(), e);
    let mut bytes = Vec::new();
    File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() < 20 || bytes[..4] != VECTOR_MAGIC {
        return Err(RetrievalError::VectorFile("bad magic or truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VECTOR_VERSION {
        return Err(RetrievalError::VectorFile(format!("unsupported version {version}")));
    }
    let dimension = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = (count as usize)
        .checked_mul(dimension)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| RetrievalError::VectorFile("size overflow".into()))?;
    let body = &bytes[20..];
    if body.len() != expected {
        return Err(RetrievalError::VectorFile(format!(
            "expected {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let rows = if dimension == 0 {
        vec![Vec::new(); count as usize]
    } else {
        floats.chunks_exact(dimension).map(<[f32]>::to_vec).collect()
    };
    Ok((dimension, rows))
}

/// Reads a line-delimited passage id file.
pub fn read_ids(path: &Path) -> Result<Vec<String>, RetrievalError> {
    let text = std::fs::read_to_string(path).map_err(|e| RetrievalError::Io(path.display().to_string(), e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Precomputed passage vectors, unit-normalized, searched exhaustively.
pub struct DenseIndex<P> {
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    dimension: usize,
    provider: P,
}

impl<P: EmbeddingProvider> DenseIndex<P> {
    pub fn new(ids: Vec<String>, mut vectors: Vec<Vec<f32>>, provider: P) -> Result<Self, RetrievalError> {
        if ids.len() != vectors.len() {
            return Err(RetrievalError::RowMismatch {
                vectors: vectors.len() as u64,
                ids: ids.len(),
            });
        }
        if ids.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let dimension = provider.dimension();
        for v in &mut vectors {
            if v.len() != dimension {
                return Err(RetrievalError::Dimension {
                    expected: dimension,
                    got: v.len(),
                });
            }
            unit_normalize(v);
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(RetrievalError::DuplicatePassage(dup.clone()));
        }
        Ok(Self {
            ids,
            vectors,
            dimension,
            provider,
        })
    }

    pub fn load(vectors_path: &Path, ids_path: &Path, provider: P) -> Result<Self, RetrievalError> {
        let (dimension, rows) = read_vectors(vectors_path)?;
        let ids = read_ids(ids_path)?;
        if rows.len() != ids.len() {
            return Err(RetrievalError::RowMismatch {
                vectors: rows.len() as u64,
                ids: ids.len(),
            });
        }
        if dimension != provider.dimension() {
            return Err(RetrievalError::Dimension {
                expected: dimension,
                got: provider.dimension(),
            });
        }
        Self::new(ids, rows, provider)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

impl<P: EmbeddingProvider> Retriever for DenseIndex<P> {
    fn name(&self) -> &str {
        "dense"
    }

    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<ScoredPassage>, RetrievalError> {
        let q = self
            .provider
            .embed(&[question])?
            .pop()
            .ok_or_else(|| BackendError::Response("empty embedding batch".into()))?;
        if q.len() != self.dimension {
            return Err(RetrievalError::Dimension {
                expected: self.dimension,
                got: q.len(),
            });
        }
        let scored = self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| ScoredPassage {
                passage: id.clone(),
                score: cosine(&q, v),
            })
            .collect();
        Ok(rank_top_k(scored, k))
    }
}

/// Normalized passage texts for containment checks.
pub struct AnswerScanner<'a> {
    corpus: &'a Corpus,
    normalized: HashMap<&'a str, String>,
}

impl<'a> AnswerScanner<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        let normalized = corpus
            .passages()
            .iter()
            .map(|p| (p.id.as_str(), normalize(&p.text)))
            .collect();
        Self { corpus, normalized }
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    /// Whether the passage's normalized text contains any normalized gold
    /// form as a substring. Empty normalized forms never match.
    pub fn contains_answer(&self, passage: &str, item: &QaItem) -> bool {
        let Some(text) = self.normalized.get(passage) else {
            return false;
        };
        item.gold_forms()
            .map(normalize)
            .any(|g| !g.is_empty() && text.contains(&g))
    }

    /// Zero-based rank of the first answer-bearing passage.
    pub fn first_hit(&self, list: &RankedList, item: &QaItem) -> Option<usize> {
        list.ranking
            .iter()
            .position(|s| self.contains_answer(&s.passage, item))
    }
}

/// Fraction of items whose top-k passages contain a gold form, for each k.
/// Items without a ranked list count as misses.
pub fn recall_at_k(
    items: &[QaItem],
    lists: &HashMap<String, RankedList>,
    scanner: &AnswerScanner<'_>,
    ks: &[usize],
) -> BTreeMap<usize, f64> {
    let first_hits: Vec<Option<usize>> = items
        .iter()
        .map(|item| lists.get(&item.qid).and_then(|l| scanner.first_hit(l, item)))
        .collect();
    ks.iter()
        .map(|&k| {
            let hits = first_hits.iter().filter(|h| h.is_some_and(|r| r < k)).count();
            let recall = if items.is_empty() {
                0.0
            } else {
                hits as f64 / items.len() as f64
            };
            (k, recall)
        })
        .collect()
}

/// Highest-scored passage; ties go to the lower passage id.
pub fn top1_context(list: &RankedList) -> Option<&ScoredPassage> {
    list.ranking.iter().reduce(|best, s| {
        match s.score.total_cmp(&best.score) {
            std::cmp::Ordering::Greater => s,
            std::cmp::Ordering::Equal if s.passage < best.passage => s,
            _ => best,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(id: &str, text: &str) -> Passage {
        Passage {
            id: id.into(),
            title: String::new(),
            text: text.into(),
        }
    }

    #[test]
    fn corpus_validation() {
        assert!(matches!(Corpus::new(vec![]), Err(RetrievalError::EmptyCorpus)));
        assert!(matches!(
            Corpus::new(vec![passage("a", "x"), passage("a", "y")]),
            Err(RetrievalError::DuplicatePassage(_))
        ));
        assert!(matches!(
            Corpus::new(vec![passage("a", " ")]),
            Err(RetrievalError::EmptyPassage(_))
        ));
        let c = Corpus::new(vec![passage("a", "x"), passage("b", "y")]).unwrap();
        assert_eq!(Bm25Index::build(&c, Bm25Params::default()).len(), 2);
    }

    #[test]
    fn k_beyond_corpus_returns_all() {
        let c = Corpus::new(vec![passage("a", "red fox"), passage("b", "blue whale")]).unwrap();
        let idx = Bm25Index::build(&c, Bm25Params::default());
        let r = idx.retrieve("fox", 10).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].passage, "a");
        assert_eq!(r[1].score, 0.0);
    }

    #[test]
    fn ties_break_on_passage_id() {
        let c = Corpus::new(vec![passage("b", "same"), passage("a", "same")]).unwrap();
        let idx = Bm25Index::build(&c, Bm25Params::default());
        let r = idx.retrieve("same", 2).unwrap();
        assert_eq!(r[0].passage, "a");
    }

    #[test]
    fn dense_identical_text_scores_one() {
        let provider = HashingBowProvider::new(64);
        let texts = ["the quick brown fox", "lorem ipsum dolor"];
        let vectors = provider.embed(&texts).unwrap();
        let idx = DenseIndex::new(vec!["a".into(), "b".into()], vectors, provider).unwrap();
        let r = idx.retrieve("the quick brown fox", 5).unwrap();
        assert_eq!(r[0].passage, "a");
        assert!((r[0].score - 1.0).abs() < 1e-6);
        assert!(r[1].score < r[0].score);
    }

    #[test]
    fn vector_file_row_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let vpath = dir.path().join("v.bin");
        let ipath = dir.path().join("ids.txt");
        write_vectors(&vpath, 2, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        std::fs::write(&ipath, "a\nb\nc\n").unwrap();
        let err = DenseIndex::load(&vpath, &ipath, HashingBowProvider::new(2))
            .err()
            .unwrap();
        assert!(matches!(err, RetrievalError::RowMismatch { vectors: 2, ids: 3 }));
        std::fs::write(&ipath, "a\nb\n").unwrap();
        let idx = DenseIndex::load(&vpath, &ipath, HashingBowProvider::new(2)).unwrap();
        assert_eq!(idx.len(), 2);
    }

    #[test]
    fn vector_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let vpath = dir.path().join("v.bin");
        write_vectors(&vpath, 3, &[vec![1.0, 2.0, 3.0]]).unwrap();
        let bytes = std::fs::read(&vpath).unwrap();
        assert_eq!(&bytes[..4], b"TQVF");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 20 + 12);
        assert_eq!(read_vectors(&vpath).unwrap(), (3, vec![vec![1.0, 2.0, 3.0]]));
        std::fs::write(&vpath, &bytes[..25]).unwrap();
        assert!(read_vectors(&vpath).is_err());
    }

    #[test]
    fn top1_prefers_lower_id_on_tie() {
        let list = RankedList {
            qid: "q".into(),
            retriever: "t".into(),
            ranking: vec![
                ScoredPassage { passage: "p9".into(), score: 2.0 },
                ScoredPassage { passage: "p1".into(), score: 2.0 },
            ],
        };
        assert_eq!(top1_context(&list).unwrap().passage, "p1");
        let empty = RankedList { ranking: vec![], ..list };
        assert!(top1_context(&empty).is_none());
    }

    #[test]
    fn cosine_handles_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vocabulary_bow_ignores_unknown_tokens() {
        let p = VocabularyBowProvider::from_texts(["alpha beta", "gamma"]);
        assert_eq!(p.dimension(), 3);
        let v = p.embed(&["alpha alpha zeta"]).unwrap();
        assert_eq!(v[0], vec![2.0, 0.0, 0.0]);
    }
}
