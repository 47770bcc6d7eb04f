//! On-disk store of per-token embedding vectors.
//!
//! A store is two files:
//!
//! * the block file (`name.cemb`): a 16-byte header (`CEMB`, version `1`,
//!   `dim`, reserved `0`, all `u32` little-endian) followed by raw `f32`
//!   little-endian payload, one row of `dim` floats per token;
//! * the manifest (`name.cemb.manifest.jsonl`): a header object
//!   `{"dim":d,"layer":s,"count":n}` then one `{"id","tokens","offset"}`
//!   object per sentence, `offset` counted in floats from the start of the
//!   payload.
//!
//! Opening a store reads only the manifest and header; each vector read is a
//! positioned read at the stored offset.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"CEMB";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 16;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt block header in {path}: {message}")]
    CorruptHeader { path: String, message: String },
    #[error("store {path} is inconsistent: {message}")]
    Inconsistent { path: String, message: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("dimension must be positive")]
    InvalidDim,
    #[error("sentence `{id}`: matrix is {rows}x{cols}, expected {tokens}x{dim}")]
    DimensionMismatch {
        id: String,
        rows: usize,
        cols: usize,
        tokens: usize,
        dim: usize,
    },
    #[error("duplicate sentence id `{0}`")]
    DuplicateId(String),
    #[error("sentence `{0}` has no tokens")]
    EmptySentence(String),
    #[error("sentence `{0}` contains NaN or infinite values")]
    NonFinite(String),
    #[error("unknown sentence id `{0}`")]
    UnknownId(String),
    #[error("token range {start}..{end} out of bounds for `{id}` with {len} tokens")]
    RangeOutOfBounds {
        id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("sentence `{id}`: {tokens_a:?} and {tokens_b:?} differ in length")]
    Alignment {
        id: String,
        tokens_a: Vec<String>,
        tokens_b: Vec<String>,
    },
    #[error("stores have different dimensions ({a} vs {b})")]
    DimMismatch { a: usize, b: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Path of the manifest that belongs to `block`.
pub fn manifest_path(block: &Path) -> PathBuf {
    let mut name = block.as_os_str().to_owned();
    name.push(".manifest.jsonl");
    PathBuf::from(name)
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(format!(".tmp{}", std::process::id()));
    PathBuf::from(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    dim: usize,
    layer: String,
    count: usize,
    #[serde(flatten)]
    extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub tokens: Vec<String>,
    pub offset: u64,
}

/// What a writer produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreManifest {
    pub dim: usize,
    pub layer: String,
    pub entries: Vec<ManifestEntry>,
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl StoreManifest {
    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn total_floats(&self) -> u64 {
        self.entries.iter().map(|e| (e.tokens.len() * self.dim) as u64).sum()
    }
}

/// Single-writer, append-ordered store builder. Files appear under their
/// final names only on [`StoreWriter::finish`].
pub struct StoreWriter {
    block_path: PathBuf,
    block_tmp: PathBuf,
    manifest_tmp: PathBuf,
    out: BufWriter<File>,
    dim: usize,
    layer: String,
    metadata: serde_json::Map<String, serde_json::Value>,
    entries: Vec<ManifestEntry>,
    ids: HashSet<String>,
    offset: u64,
    finished: bool,
}

impl StoreWriter {
    pub fn create(path: impl AsRef<Path>, dim: usize, layer: &str) -> Result<StoreWriter, StoreError> {
        if dim == 0 {
            return Err(StoreError::InvalidDim);
        }
        let block_path = path.as_ref().to_path_buf();
        let block_tmp = temp_path(&block_path);
        let manifest_tmp = temp_path(&manifest_path(&block_path));
        let file = File::create(&block_tmp).map_err(io_err(&block_tmp))?;
        let mut out = BufWriter::new(file);
        let mut header = [0u8; HEADER_LEN as usize];
        header[0..4].copy_from_slice(MAGIC);
        header[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        header[8..12].copy_from_slice(&(dim as u32).to_le_bytes());
        out.write_all(&header).map_err(io_err(&block_tmp))?;
        Ok(StoreWriter {
            block_path,
            block_tmp,
            manifest_tmp,
            out,
            dim,
            layer: layer.to_string(),
            metadata: serde_json::Map::new(),
            entries: Vec::new(),
            ids: HashSet::new(),
            offset: 0,
            finished: false,
        })
    }

    /// Extra key recorded in the manifest header.
    pub fn set_metadata(&mut self, key: &str, value: serde_json::Value) {
        self.metadata.insert(key.to_string(), value);
    }

    pub fn append<S: AsRef<str>>(
        &mut self,
        id: &str,
        tokens: &[S],
        vectors: ArrayView2<'_, f32>,
    ) -> Result<(), StoreError> {
        if tokens.is_empty() {
            return Err(StoreError::EmptySentence(id.to_string()));
        }
        if vectors.nrows() != tokens.len() || vectors.ncols() != self.dim {
            return Err(StoreError::DimensionMismatch {
                id: id.to_string(),
                rows: vectors.nrows(),
                cols: vectors.ncols(),
                tokens: tokens.len(),
                dim: self.dim,
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite(id.to_string()));
        }
        if !self.ids.insert(id.to_string()) {
            return Err(StoreError::DuplicateId(id.to_string()));
        }
        let mut buf = Vec::with_capacity(vectors.len() * 4);
        for row in vectors.rows() {
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        self.out.write_all(&buf).map_err(io_err(&self.block_tmp))?;
        self.entries.push(ManifestEntry {
            id: id.to_string(),
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            offset: self.offset,
        });
        self.offset += vectors.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<StoreManifest, StoreError> {
        self.out.flush().map_err(io_err(&self.block_tmp))?;
        self.out.get_ref().sync_all().map_err(io_err(&self.block_tmp))?;
        let header = ManifestHeader {
            dim: self.dim,
            layer: self.layer.clone(),
            count: self.entries.len(),
            extra: self.metadata.clone(),
        };
        let mut text = serde_json::to_string(&header).expect("header serializes");
        text.push('\n');
        for e in &self.entries {
            text.push_str(&serde_json::to_string(e).expect("entry serializes"));
            text.push('\n');
        }
        fs::write(&self.manifest_tmp, text).map_err(io_err(&self.manifest_tmp))?;
        fs::rename(&self.block_tmp, &self.block_path).map_err(io_err(&self.block_path))?;
        let manifest = manifest_path(&self.block_path);
        fs::rename(&self.manifest_tmp, &manifest).map_err(io_err(&manifest))?;
        self.finished = true;
        Ok(StoreManifest {
            dim: self.dim,
            layer: self.layer.clone(),
            entries: std::mem::take(&mut self.entries),
            metadata: self.metadata.clone(),
        })
    }
}

impl Drop for StoreWriter {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_file(&self.block_tmp);
            let _ = fs::remove_file(&self.manifest_tmp);
        }
    }
}

/// Writes a whole store in one call.
pub fn write_store<I, S>(
    entries: I,
    dim: usize,
    layer: &str,
    path: impl AsRef<Path>,
) -> Result<StoreManifest, StoreError>
where
    I: IntoIterator<Item = (String, Vec<S>, Array2<f32>)>,
    S: AsRef<str>,
{
    let mut writer = StoreWriter::create(path, dim, layer)?;
    for (id, tokens, matrix) in entries {
        writer.append(&id, &tokens, matrix.view())?;
    }
    writer.finish()
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SentenceEntry {
    tokens: Vec<String>,
    offset: u64,
}

/// A read-only store. Safe to share between threads.
#[derive(Debug)]
pub struct EmbeddingStore {
    path: PathBuf,
    file: File,
    dim: usize,
    layer: String,
    metadata: serde_json::Map<String, serde_json::Value>,
    index: IndexMap<String, SentenceEntry>,
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset) {
            Ok(0) => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

impl EmbeddingStore {
    /// Opens and validates a store: header fields, manifest/header agreement,
    /// contiguous strictly increasing offsets and exact payload length.
    pub fn open(path: impl AsRef<Path>) -> Result<EmbeddingStore, StoreError> {
        let path = path.as_ref().to_path_buf();
        let display = path.display().to_string();
        let corrupt = |message: String| StoreError::CorruptHeader {
            path: display.clone(),
            message,
        };
        let inconsistent = |message: String| StoreError::Inconsistent {
            path: display.clone(),
            message,
        };

        let mut file = File::open(&path).map_err(io_err(&path))?;
        let block_len = file.metadata().map_err(io_err(&path))?.len();
        let mut header = [0u8; HEADER_LEN as usize];
        if block_len < HEADER_LEN {
            return Err(corrupt(format!("file is {block_len} bytes, header needs {HEADER_LEN}")));
        }
        file.read_exact(&mut header).map_err(io_err(&path))?;
        if &header[0..4] != MAGIC {
            return Err(corrupt(format!("bad magic {:?}", &header[0..4])));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        if word(4) != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported version {}", word(4))));
        }
        let dim = word(8) as usize;
        if dim == 0 {
            return Err(corrupt("dimension is zero".into()));
        }
        if word(12) != 0 {
            return Err(corrupt(format!("reserved field is {}", word(12))));
        }
        let payload_bytes = block_len - HEADER_LEN;
        if !payload_bytes.is_multiple_of(4) {
            return Err(inconsistent(format!(
                "payload of {payload_bytes} bytes is not whole floats"
            )));
        }

        let mpath = manifest_path(&path);
        let reader = BufReader::new(File::open(&mpath).map_err(io_err(&mpath))?);
        let mut lines = reader.lines().enumerate();
        let (_, first) = lines.next().ok_or(StoreError::Manifest {
            line: 1,
            message: "empty manifest".into(),
        })?;
        let first = first.map_err(io_err(&mpath))?;
        let mheader: ManifestHeader = serde_json::from_str(&first).map_err(|e| StoreError::Manifest {
            line: 1,
            message: e.to_string(),
        })?;
        if mheader.dim != dim {
            return Err(inconsistent(format!(
                "manifest dim {} but block header dim {dim}",
                mheader.dim
            )));
        }
        let mut index = IndexMap::with_capacity(mheader.count);
        let mut expected_offset = 0u64;
        for (i, line) in lines {
            let line = line.map_err(io_err(&mpath))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| StoreError::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
            if entry.tokens.is_empty() {
                return Err(inconsistent(format!("sentence `{}` has no tokens", entry.id)));
            }
            if entry.offset != expected_offset {
                return Err(inconsistent(format!(
                    "sentence `{}` at offset {} but previous payload ends at {expected_offset}",
                    entry.id, entry.offset
                )));
            }
            expected_offset += (entry.tokens.len() * dim) as u64;
            if index
                .insert(
                    entry.id.clone(),
                    SentenceEntry {
                        tokens: entry.tokens,
                        offset: entry.offset,
                    },
                )
                .is_some()
            {
                return Err(StoreError::DuplicateId(entry.id));
            }
        }
        if index.len() != mheader.count {
            return Err(inconsistent(format!(
                "manifest declares {} sentences but lists {}",
                mheader.count,
                index.len()
            )));
        }
        if expected_offset * 4 != payload_bytes {
            return Err(inconsistent(format!(
                "manifest covers {expected_offset} floats but block holds {}",
                payload_bytes / 4
            )));
        }
        Ok(EmbeddingStore {
            path,
            file,
            dim,
            layer: mheader.layer,
            metadata: mheader.extra,
            index,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn metadata(&self) -> &serde_json::Map<String, serde_json::Value> {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Sentence ids in manifest order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn tokens(&self, id: &str) -> Result<&[String], StoreError> {
        self.index
            .get(id)
            .map(|e| e.tokens.as_slice())
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))
    }

    /// Reads the vectors of `id`, optionally restricted to a half-open token
    /// range.
    pub fn read_vectors(&self, id: &str, tokens: Option<Range<usize>>) -> Result<Array2<f32>, StoreError> {
        let entry = self
            .index
            .get(id)
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))?;
        let len = entry.tokens.len();
        let range = tokens.unwrap_or(0..len);
        if range.start >= range.end || range.end > len {
            return Err(StoreError::RangeOutOfBounds {
                id: id.to_string(),
                start: range.start,
                end: range.end,
                len,
            });
        }
        let rows = range.end - range.start;
        let mut buf = vec![0u8; rows * self.dim * 4];
        let byte_offset = HEADER_LEN + (entry.offset + (range.start * self.dim) as u64) * 4;
        read_exact_at(&self.file, &mut buf, byte_offset).map_err(io_err(&self.path))?;
        let floats: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Array2::from_shape_vec((rows, self.dim), floats).expect("shape matches buffer"))
    }
}

/// Token-aligned vectors of one sentence in two stores.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub sentence_id: String,
    pub tokens_a: Vec<String>,
    pub tokens_b: Vec<String>,
    pub vectors_a: Array2<f32>,
    pub vectors_b: Array2<f32>,
}

impl AlignedPair {
    pub fn len(&self) -> usize {
        self.tokens_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens_a.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors_a.ncols()
    }
}

/// Pairs the vectors of `id` from two stores. Token texts may differ; only
/// counts and dimensions have to match.
pub fn align_pair(a: &EmbeddingStore, b: &EmbeddingStore, id: &str) -> Result<AlignedPair, StoreError> {
    if a.dim() != b.dim() {
        return Err(StoreError::DimMismatch { a: a.dim(), b: b.dim() });
    }
    let tokens_a = a.tokens(id)?;
    let tokens_b = b.tokens(id)?;
    if tokens_a.len() != tokens_b.len() {
        return Err(StoreError::Alignment {
            id: id.to_string(),
            tokens_a: tokens_a.to_vec(),
            tokens_b: tokens_b.to_vec(),
        });
    }
    Ok(AlignedPair {
        sentence_id: id.to_string(),
        tokens_a: tokens_a.to_vec(),
        tokens_b: tokens_b.to_vec(),
        vectors_a: a.read_vectors(id, None)?,
        vectors_b: b.read_vectors(id, None)?,
    })
}
