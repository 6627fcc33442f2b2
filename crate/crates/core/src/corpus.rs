//! Bag-of-words corpora and the UCI text format.
//!
//! The UCI format is three header lines `D`, `V`, `NNZ` followed by `NNZ`
//! lines `docId wordId count`, all 1-indexed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid corpus: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// One document as sorted `(word id, count)` pairs with distinct word ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    words: Vec<(u32, u32)>,
    tokens: u64,
}

impl Document {
    /// Builds a document from possibly repeated `(word, count)` entries.
    pub fn from_counts<I: IntoIterator<Item = (u32, u32)>>(entries: I) -> Result<Self> {
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        for (w, c) in entries {
            if c == 0 {
                return Err(CorpusError::Invalid(format!("zero count for word {w}")));
            }
            *map.entry(w).or_default() += c;
        }
        let words: Vec<(u32, u32)> = map.into_iter().collect();
        let tokens = words.iter().map(|&(_, c)| c as u64).sum();
        if tokens == 0 {
            return Err(CorpusError::Invalid("document has no tokens".into()));
        }
        Ok(Self { words, tokens })
    }

    /// Builds a document from a token sequence.
    pub fn from_tokens(tokens: &[u32]) -> Result<Self> {
        Self::from_counts(tokens.iter().map(|&w| (w, 1)))
    }

    pub fn words(&self) -> &[(u32, u32)] {
        &self.words
    }

    pub fn distinct(&self) -> usize {
        self.words.len()
    }

    /// Total token count `I_d`.
    pub fn len(&self) -> u64 {
        self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens == 0
    }
}

/// A collection of documents over a fixed vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
    vocab_size: usize,
}

impl Corpus {
    pub fn new(docs: Vec<Document>, vocab_size: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(CorpusError::Invalid("corpus has no documents".into()));
        }
        if vocab_size == 0 {
            return Err(CorpusError::Invalid("vocabulary size is zero".into()));
        }
        for (d, doc) in docs.iter().enumerate() {
            if let Some(&(w, _)) = doc.words.iter().find(|(w, _)| *w as usize >= vocab_size) {
                return Err(CorpusError::Invalid(format!(
                    "document {d} uses word id {w} outside vocabulary of size {vocab_size}"
                )));
            }
        }
        Ok(Self { docs, vocab_size })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc(&self, d: usize) -> &Document {
        &self.docs[d]
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn total_tokens(&self) -> u64 {
        self.docs.iter().map(Document::len).sum()
    }

    /// Splits every document's tokens into held-in and held-out parts.
    ///
    /// Token `i` of document `d` (tokens enumerated in word-id order) is held
    /// out when a hash of `(d, i)` falls in the lowest `1/every` bucket. A
    /// document always keeps at least one held-in token. Documents with no
    /// held-out tokens have an empty held-out entry.
    pub fn split_heldout(&self, every: u64) -> (Corpus, Vec<Vec<(u32, u32)>>) {
        let mut kept = Vec::with_capacity(self.docs.len());
        let mut held = Vec::with_capacity(self.docs.len());
        for (d, doc) in self.docs.iter().enumerate() {
            let mut keep: BTreeMap<u32, u32> = BTreeMap::new();
            let mut out: BTreeMap<u32, u32> = BTreeMap::new();
            let mut i = 0u64;
            for &(w, c) in &doc.words {
                for _ in 0..c {
                    if token_hash(d as u64, i) % every == 0 {
                        *out.entry(w).or_default() += 1;
                    } else {
                        *keep.entry(w).or_default() += 1;
                    }
                    i += 1;
                }
            }
            if keep.is_empty() {
                // Return the first held-out token to the document.
                let (&w, c) = out.iter_mut().next().expect("document has tokens");
                *c -= 1;
                if *c == 0 {
                    out.remove(&w);
                }
                keep.insert(w, 1);
            }
            kept.push(Document::from_counts(keep).expect("non-empty by construction"));
            held.push(out.into_iter().collect());
        }
        (
            Corpus {
                docs: kept,
                vocab_size: self.vocab_size,
            },
            held,
        )
    }
}

// splitmix64 finaliser over the packed (doc, token) pair
fn token_hash(doc: u64, token: u64) -> u64 {
    let mut z = doc
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(token)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| CorpusError::Parse {
        line,
        msg: format!("expected {what}, found {tok:?}"),
    })
}

/// Reads a UCI bag-of-words corpus.
pub fn read_uci<R: Read>(reader: R) -> Result<Corpus> {
    let reader = BufReader::new(reader);
    let mut header = Vec::with_capacity(3);
    let mut entries: Vec<BTreeMap<u32, u32>> = Vec::new();
    let mut nnz_seen = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if header.len() < 3 {
            let what = ["document count", "vocabulary size", "non-zero count"][header.len()];
            header.push(parse_usize(trimmed, line_no, what)?);
            if header.len() == 3 {
                entries = vec![BTreeMap::new(); header[0]];
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(CorpusError::Parse {
                line: line_no,
                msg: format!("expected `docId wordId count`, found {trimmed:?}"),
            });
        }
        let doc = parse_usize(fields[0], line_no, "document id")?;
        let word = parse_usize(fields[1], line_no, "word id")?;
        let count = parse_usize(fields[2], line_no, "count")?;
        if doc == 0 || doc > header[0] {
            return Err(CorpusError::Parse {
                line: line_no,
                msg: format!("document id {doc} outside 1..={}", header[0]),
            });
        }
        if word == 0 || word > header[1] {
            return Err(CorpusError::Parse {
                line: line_no,
                msg: format!("word id {word} outside 1..={}", header[1]),
            });
        }
        if count == 0 || count > u32::MAX as usize {
            return Err(CorpusError::Parse {
                line: line_no,
                msg: format!("count {count} is not a positive 32-bit integer"),
            });
        }
        *entries[doc - 1].entry((word - 1) as u32).or_default() += count as u32;
        nnz_seen += 1;
    }
    if header.len() < 3 {
        return Err(CorpusError::Invalid("missing D/V/NNZ header".into()));
    }
    if nnz_seen != header[2] {
        return Err(CorpusError::Invalid(format!(
            "header declares {} entries but {} were read",
            header[2], nnz_seen
        )));
    }
    let docs = entries
        .into_iter()
        .enumerate()
        .map(|(d, m)| {
            Document::from_counts(m).map_err(|_| {
                CorpusError::Invalid(format!("document {} has no tokens", d + 1))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(docs, header[1])
}

pub fn read_uci_file<P: AsRef<Path>>(path: P) -> Result<Corpus> {
    read_uci(fs::File::open(path)?)
}

/// Writes a corpus in UCI format.
pub fn write_uci<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    let nnz: usize = corpus.docs.iter().map(Document::distinct).sum();
    writeln!(out, "{}", corpus.num_docs())?;
    writeln!(out, "{}", corpus.vocab_size())?;
    writeln!(out, "{nnz}")?;
    for (d, doc) in corpus.docs.iter().enumerate() {
        for &(w, c) in doc.words() {
            writeln!(out, "{} {} {}", d + 1, w + 1, c)?;
        }
    }
    Ok(())
}

/// Reads a vocabulary file with one token per line.
pub fn read_vocab<R: Read>(reader: R) -> Result<Vec<String>> {
    let mut vocab = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        let token = line.trim();
        if !token.is_empty() {
            vocab.push(token.to_string());
        }
    }
    Ok(vocab)
}

pub fn read_vocab_file<P: AsRef<Path>>(path: P) -> Result<Vec<String>> {
    read_vocab(fs::File::open(path)?)
}
