//! Persistent embedding records and the neighbor graph built over them.
//!
//! A store is a directory holding `records.bin` (fixed-width records after a
//! 24-byte header) and `strings.bin` (interned deployment ids, each a u32
//! length followed by UTF-8 bytes). Record layout, little-endian:
//!
//! ```text
//! id u64 | timestamp_us u64 | seq u32 | deployment offset u32 | 32 x f32
//! ```

mod epsilon;
mod graph;

pub use epsilon::{estimate_epsilon, EpsilonParams, LatentDecoder};
pub use graph::{build_graph, build_graph_with, distance, EpsilonGraph, GraphOptions, DEFAULT_DEGREE_CAP};

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::inference::{LatentVector, LATENT_DIM};

pub const RECORDS_FILE: &str = "records.bin";
pub const STRINGS_FILE: &str = "strings.bin";
pub const GRAPH_FILE: &str = "graph.bin";

const RECORDS_MAGIC: [u8; 8] = *b"SQRECRD\0";
const STORE_FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 24;
/// Bytes of vector payload per record.
pub const VECTOR_BYTES: usize = LATENT_DIM * 4;
/// Bytes of metadata per record: id, timestamp, seq, string offset.
pub const METADATA_BYTES: usize = 8 + 8 + 4 + 4;
pub const RECORD_BYTES: usize = VECTOR_BYTES + METADATA_BYTES;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("vector has a non-finite component at index {0}")]
    NonFinite(usize),
    #[error("unknown id {0}")]
    UnknownId(u64),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("decoder required for epsilon estimation")]
    DecoderMissing,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub vector: LatentVector,
    pub timestamp_us: u64,
    pub deployment_id: String,
    pub seq: u32,
}

/// Metadata supplied on insert; the id is assigned by the store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordMeta {
    pub timestamp_us: u64,
    pub deployment_id: String,
    pub seq: u32,
}

/// Immutable view of the records. Ids equal positions.
#[derive(Debug, Clone, Default)]
pub struct StoreSnapshot {
    records: Arc<Vec<EmbeddingRecord>>,
}

impl StoreSnapshot {
    /// Builds an in-memory snapshot with ids 0..n and empty metadata.
    pub fn from_vectors(vectors: impl IntoIterator<Item = LatentVector>) -> Self {
        let records = vectors
            .into_iter()
            .enumerate()
            .map(|(i, vector)| EmbeddingRecord {
                id: i as u64,
                vector,
                timestamp_us: 0,
                deployment_id: String::new(),
                seq: i as u32,
            })
            .collect();
        Self {
            records: Arc::new(records),
        }
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&EmbeddingRecord> {
        self.records.get(usize::try_from(id).ok()?)
    }

    /// Record count; any insert changes it, so it doubles as the version
    /// that graph sidecars are keyed on.
    pub fn version(&self) -> u64 {
        self.records.len() as u64
    }
}

/// Single-writer record store.
#[derive(Debug)]
pub struct EmbedStore {
    dir: PathBuf,
    records: Arc<Vec<EmbeddingRecord>>,
    strings: HashMap<String, u32>,
    strings_len: u64,
    record_out: BufWriter<File>,
    string_out: BufWriter<File>,
}

fn check_vector(v: &LatentVector) -> Result<(), StoreError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StoreError::NonFinite(i)),
        None => Ok(()),
    }
}

fn header() -> [u8; HEADER_BYTES as usize] {
    let mut h = [0u8; HEADER_BYTES as usize];
    h[..8].copy_from_slice(&RECORDS_MAGIC);
    h[8..12].copy_from_slice(&STORE_FORMAT_VERSION.to_le_bytes());
    h[12..16].copy_from_slice(&(RECORD_BYTES as u32).to_le_bytes());
    h[16..20].copy_from_slice(&(LATENT_DIM as u32).to_le_bytes());
    h
}

fn encode_record(r: &EmbeddingRecord, offset: u32) -> [u8; RECORD_BYTES] {
    let mut b = [0u8; RECORD_BYTES];
    b[0..8].copy_from_slice(&r.id.to_le_bytes());
    b[8..16].copy_from_slice(&r.timestamp_us.to_le_bytes());
    b[16..20].copy_from_slice(&r.seq.to_le_bytes());
    b[20..24].copy_from_slice(&offset.to_le_bytes());
    for (i, x) in r.vector.iter().enumerate() {
        b[24 + 4 * i..28 + 4 * i].copy_from_slice(&x.to_le_bytes());
    }
    b
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().expect("4 bytes"))
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b[..8].try_into().expect("8 bytes"))
}

fn read_strings(bytes: &[u8]) -> Result<HashMap<u32, String>, StoreError> {
    let mut out = HashMap::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let len_bytes = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| StoreError::Corrupt("truncated string table".into()))?;
        let len = le_u32(len_bytes) as usize;
        let body = bytes
            .get(pos + 4..pos + 4 + len)
            .ok_or_else(|| StoreError::Corrupt("truncated string table".into()))?;
        let s = String::from_utf8(body.to_vec())
            .map_err(|_| StoreError::Corrupt(format!("string at offset {pos} is not UTF-8")))?;
        out.insert(pos as u32, s);
        pos += 4 + len;
    }
    Ok(out)
}

impl EmbedStore {
    /// Opens the store in `dir`, creating it when absent.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let rec_path = dir.join(RECORDS_FILE);
        let str_path = dir.join(STRINGS_FILE);

        let mut string_bytes = Vec::new();
        if str_path.exists() {
            File::open(&str_path)?.read_to_end(&mut string_bytes)?;
        }
        let by_offset = read_strings(&string_bytes)?;

        let mut records = Vec::new();
        if rec_path.exists() {
            let mut bytes = Vec::new();
            File::open(&rec_path)?.read_to_end(&mut bytes)?;
            if bytes.len() < HEADER_BYTES as usize || bytes[..HEADER_BYTES as usize] != header() {
                return Err(StoreError::Corrupt(
                    "records file header does not match this format".into(),
                ));
            }
            let body = &bytes[HEADER_BYTES as usize..];
            if body.len() % RECORD_BYTES != 0 {
                return Err(StoreError::Corrupt(format!(
                    "records file holds a partial record ({} stray bytes)",
                    body.len() % RECORD_BYTES
                )));
            }
            for (i, chunk) in body.chunks_exact(RECORD_BYTES).enumerate() {
                let id = le_u64(&chunk[0..8]);
                if id != i as u64 {
                    return Err(StoreError::Corrupt(format!("record {i} carries id {id}")));
                }
                let offset = le_u32(&chunk[20..24]);
                let deployment_id = by_offset
                    .get(&offset)
                    .ok_or_else(|| StoreError::Corrupt(format!("record {i}: dangling string offset")))?
                    .clone();
                let mut vector = [0f32; LATENT_DIM];
                for (d, x) in vector.iter_mut().enumerate() {
                    *x = f32::from_le_bytes(chunk[24 + 4 * d..28 + 4 * d].try_into().expect("4 bytes"));
                }
                records.push(EmbeddingRecord {
                    id,
                    vector,
                    timestamp_us: le_u64(&chunk[8..16]),
                    deployment_id,
                    seq: le_u32(&chunk[16..20]),
                });
            }
        } else {
            std::fs::write(&rec_path, header())?;
        }

        let record_out = BufWriter::new(OpenOptions::new().append(true).open(&rec_path)?);
        let string_out = BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&str_path)?,
        );
        Ok(Self {
            dir,
            records: Arc::new(records),
            strings: by_offset.into_iter().map(|(o, s)| (s, o)).collect(),
            strings_len: string_bytes.len() as u64,
            record_out,
            string_out,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn intern(&mut self, s: &str) -> Result<u32, StoreError> {
        if let Some(&o) = self.strings.get(s) {
            return Ok(o);
        }
        let offset = u32::try_from(self.strings_len)
            .map_err(|_| StoreError::Corrupt("string table exceeds 4 GiB".into()))?;
        self.string_out.write_all(&(s.len() as u32).to_le_bytes())?;
        self.string_out.write_all(s.as_bytes())?;
        self.strings_len += 4 + s.len() as u64;
        self.strings.insert(s.to_owned(), offset);
        Ok(offset)
    }

    /// Appends a record and returns its id. Durable after [`flush`](Self::flush).
    pub fn insert(&mut self, vector: LatentVector, meta: RecordMeta) -> Result<u64, StoreError> {
        check_vector(&vector)?;
        let id = self.records.len() as u64;
        let offset = self.intern(&meta.deployment_id)?;
        let record = EmbeddingRecord {
            id,
            vector,
            timestamp_us: meta.timestamp_us,
            deployment_id: meta.deployment_id,
            seq: meta.seq,
        };
        self.record_out.write_all(&encode_record(&record, offset))?;
        Arc::make_mut(&mut self.records).push(record);
        Ok(id)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        // strings first so a crash never leaves a record pointing past the table
        self.string_out.flush()?;
        self.string_out.get_ref().sync_data()?;
        self.record_out.flush()?;
        self.record_out.get_ref().sync_data()?;
        Ok(())
    }

    pub fn get(&self, id: u64) -> Result<&EmbeddingRecord, StoreError> {
        usize::try_from(id)
            .ok()
            .and_then(|i| self.records.get(i))
            .ok_or(StoreError::UnknownId(id))
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            records: Arc::clone(&self.records),
        }
    }

    pub fn graph_path(&self) -> PathBuf {
        self.dir.join(GRAPH_FILE)
    }
}

impl Drop for EmbedStore {
    fn drop(&mut self) {
        let _ = self.string_out.flush();
        let _ = self.record_out.flush();
    }
}
