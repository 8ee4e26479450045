//! Synthetic latent sources standing in for an encoder's output. Every block
//! is power-normalized so that its complex packing has unit energy.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::normalize_real;
use crate::error::{Error, Result};
use crate::rng::{fill_normal, normal};

pub const CORPUS_MAGIC: &[u8; 8] = b"CDDMCORP";

/// Per-coordinate spread of each mixture component before normalization.
pub const MIXTURE_COMPONENT_STD: f64 = 0.1;
/// Fraction of coordinates zeroed by the sparse source.
pub const SPARSE_ZERO_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    GaussianMixture,
    UnitSphere,
    Sparse,
    FileCorpus,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::GaussianMixture => "gaussian_mixture",
            SourceKind::UnitSphere => "unit_sphere",
            SourceKind::Sparse => "sparse",
            SourceKind::FileCorpus => "file_corpus",
        })
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_mixture" => Ok(SourceKind::GaussianMixture),
            "unit_sphere" => Ok(SourceKind::UnitSphere),
            "sparse" => Ok(SourceKind::Sparse),
            "file_corpus" => Ok(SourceKind::FileCorpus),
            other => Err(Error::Parameter(format!("unknown source kind `{other}`"))),
        }
    }
}

/// Sequential reader over a corpus file: an 8-byte magic header followed by
/// records of `2k` little-endian `f64`s. Wraps to the first record when
/// exhausted.
#[derive(Debug)]
pub struct CorpusReader {
    path: PathBuf,
    reader: BufReader<File>,
    record_len: usize,
    records: u64,
    cursor: u64,
    wraps: u64,
}

impl CorpusReader {
    pub fn open(path: impl AsRef<Path>, k: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let size = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 8];
        reader
            .read_exact(&mut magic)
            .map_err(|_| Error::Format(format!("{}: missing corpus header", path.display())))?;
        if &magic != CORPUS_MAGIC {
            return Err(Error::Format(format!(
                "{}: not a corpus file (bad magic)",
                path.display()
            )));
        }
        let record_bytes = (2 * k * 8) as u64;
        let body = size - 8;
        if body == 0 || body % record_bytes != 0 {
            return Err(Error::Format(format!(
                "{}: {body} payload bytes is not a positive multiple of the {record_bytes}-byte record",
                path.display()
            )));
        }
        Ok(Self {
            path,
            reader,
            record_len: 2 * k,
            records: body / record_bytes,
            cursor: 0,
            wraps: 0,
        })
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// Index of the next record to be read.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn wraps(&self) -> u64 {
        self.wraps
    }

    pub fn seek_record(&mut self, record: u64) -> Result<()> {
        let record = record % self.records;
        let offset = 8 + record * (self.record_len as u64) * 8;
        self.reader
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        self.cursor = record;
        Ok(())
    }

    pub fn next_record(&mut self) -> Result<Vec<f64>> {
        if self.cursor == self.records {
            log::warn!(
                "corpus {} exhausted after {} records; wrapping to the start",
                self.path.display(),
                self.records
            );
            self.wraps += 1;
            self.seek_record(0)?;
        }
        let mut buf = vec![0u8; self.record_len * 8];
        self.reader
            .read_exact(&mut buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.cursor += 1;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Write blocks in the corpus format.
pub fn write_corpus(path: impl AsRef<Path>, blocks: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let len = blocks.first().map(Vec::len).unwrap_or(0);
    let io = |e| Error::io(path, e);
    w.write_all(CORPUS_MAGIC).map_err(io)?;
    for b in blocks {
        if b.len() != len {
            return Err(Error::Dimension("corpus records must share one length".into()));
        }
        for v in b {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// A source of normalized blocks of length `2k`.
#[derive(Debug)]
pub struct Source {
    kind: SourceKind,
    k: usize,
    corpus: Option<CorpusReader>,
}

impl Source {
    pub fn new(kind: SourceKind, k: usize, corpus_path: Option<&Path>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        let corpus = match kind {
            SourceKind::FileCorpus => {
                let path = corpus_path.ok_or_else(|| {
                    Error::Parameter("file_corpus source needs a corpus path".into())
                })?;
                Some(CorpusReader::open(path, k)?)
            }
            _ => None,
        };
        Ok(Self { kind, k, corpus })
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn corpus_cursor(&self) -> u64 {
        self.corpus.as_ref().map_or(0, CorpusReader::cursor)
    }

    pub fn seek_corpus(&mut self, record: u64) -> Result<()> {
        match &mut self.corpus {
            Some(c) => c.seek_record(record),
            None => Ok(()),
        }
    }

    pub fn next_block<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let n = 2 * self.k;
        let mut x = match self.kind {
            SourceKind::GaussianMixture => {
                let component = rng.random_range(0..4);
                let mut x = vec![0.0; n];
                mixture_mean(component, &mut x);
                for v in &mut x {
                    *v += MIXTURE_COMPONENT_STD * normal(rng);
                }
                x
            }
            SourceKind::UnitSphere => {
                let mut x = vec![0.0; n];
                fill_normal(rng, &mut x);
                x
            }
            SourceKind::Sparse => {
                let mut x = vec![0.0; n];
                fill_normal(rng, &mut x);
                let zeros = ((n as f64) * SPARSE_ZERO_FRACTION).round() as usize;
                let zeros = zeros.min(n - 1);
                for i in index::sample(rng, n, zeros) {
                    x[i] = 0.0;
                }
                x
            }
            SourceKind::FileCorpus => self
                .corpus
                .as_mut()
                .expect("corpus opened in constructor")
                .next_record()?,
        };
        normalize_real(&mut x)?;
        Ok(x)
    }
}

/// Unit-norm component means `±u₁`, `±u₂` in the plane of two orthonormal
/// directions: `u₁ ∝ (1, 1, …)` and `u₂ ∝ (1, −1, 1, −1, …)`.
pub fn mixture_mean(component: usize, out: &mut [f64]) {
    let scale = (out.len() as f64).sqrt().recip();
    let sign = if component % 2 == 0 { 1.0 } else { -1.0 };
    for (i, v) in out.iter_mut().enumerate() {
        let dir = if component >= 2 && i % 2 == 1 { -1.0 } else { 1.0 };
        *v = sign * dir * scale;
    }
}

/// One block from a stateless source kind.
pub fn sample_source<R: Rng + ?Sized>(kind: SourceKind, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    Source::new(kind, k, None)?.next_block(rng)
}
