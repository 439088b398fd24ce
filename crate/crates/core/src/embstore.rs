//! Binary embedding store.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! header (21 bytes): "EMB1" | u16 version=1 | u32 dim | u64 count | u8 dtype=0 | u16 reserved=0
//! record (20 + 4*dim bytes): u64 sentence_id | u64 doc_id | i32 domain_id | dim x f32
//! ```
//!
//! Records have a fixed stride so record `i` lives at [`record_offset`]. Metadata
//! lives in a JSON sidecar at `<path>.meta.json`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: u64 = 21;
/// Bytes per record before the vector payload.
pub const RECORD_PREFIX_LEN: u64 = 20;

pub fn record_len(dim: usize) -> u64 {
    RECORD_PREFIX_LEN + 4 * dim as u64
}

pub fn record_offset(dim: usize, index: u64) -> u64 {
    HEADER_LEN + index * record_len(dim)
}

/// Path of the JSON metadata sidecar for an embedding file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    #[default]
    TokenPooledSentence,
    Document,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    #[serde(default)]
    pub model_name: String,
    /// 0 is the fixed embedding layer; encoder layers follow.
    #[serde(default)]
    pub layer: u32,
    #[serde(default)]
    pub level: Level,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub domain_names: BTreeMap<i32, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub sentence_id: u64,
    pub doc_id: u64,
    /// -1 when the oracle domain is unknown.
    pub domain_id: i32,
    pub vector: Vec<f32>,
}

/// Borrowed view of one row of an [`EmbeddingSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRef<'a> {
    pub sentence_id: u64,
    pub doc_id: u64,
    pub domain_id: i32,
    pub vector: &'a [f32],
}

impl RecordRef<'_> {
    pub fn to_owned(&self) -> EmbeddingRecord {
        EmbeddingRecord {
            sentence_id: self.sentence_id,
            doc_id: self.doc_id,
            domain_id: self.domain_id,
            vector: self.vector.to_vec(),
        }
    }
}

impl<'a> From<&'a EmbeddingRecord> for RecordRef<'a> {
    fn from(r: &'a EmbeddingRecord) -> Self {
        RecordRef {
            sentence_id: r.sentence_id,
            doc_id: r.doc_id,
            domain_id: r.domain_id,
            vector: &r.vector,
        }
    }
}

/// A set of equal-dimension embeddings, stored column-wise so the vectors form
/// one contiguous row-major `len x dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    sentence_ids: Vec<u64>,
    doc_ids: Vec<u64>,
    domain_ids: Vec<i32>,
    vectors: Vec<f32>,
    pub meta: EmbeddingMeta,
}

impl EmbeddingSet {
    pub fn new(dim: usize, meta: EmbeddingMeta) -> Result<Self> {
        Self::with_capacity(dim, 0, meta)
    }

    pub fn with_capacity(dim: usize, capacity: usize, meta: EmbeddingMeta) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::InvalidHeader(format!(
                "dim must be in 1..=u32::MAX, got {dim}"
            )));
        }
        Ok(EmbeddingSet {
            dim,
            sentence_ids: Vec::with_capacity(capacity),
            doc_ids: Vec::with_capacity(capacity),
            domain_ids: Vec::with_capacity(capacity),
            vectors: Vec::with_capacity(capacity * dim),
            meta,
        })
    }

    pub fn from_records(
        dim: usize,
        meta: EmbeddingMeta,
        records: impl IntoIterator<Item = EmbeddingRecord>,
    ) -> Result<Self> {
        let mut set = Self::new(dim, meta)?;
        for r in records {
            set.push((&r).into())?;
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sentence_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence_ids.is_empty()
    }

    /// Appends a record after checking its length and finiteness.
    pub fn push(&mut self, r: RecordRef<'_>) -> Result<()> {
        let index = self.len() as u64;
        check_vector(index, r.vector, self.dim)?;
        self.sentence_ids.push(r.sentence_id);
        self.doc_ids.push(r.doc_id);
        self.domain_ids.push(r.domain_id);
        self.vectors.extend_from_slice(r.vector);
        Ok(())
    }

    pub fn record(&self, i: usize) -> RecordRef<'_> {
        RecordRef {
            sentence_id: self.sentence_ids[i],
            doc_id: self.doc_ids[i],
            domain_id: self.domain_ids[i],
            vector: self.vector(i),
        }
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = RecordRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.record(i))
    }

    pub fn sentence_ids(&self) -> &[u64] {
        &self.sentence_ids
    }

    pub fn doc_ids(&self) -> &[u64] {
        &self.doc_ids
    }

    pub fn domain_ids(&self) -> &[i32] {
        &self.domain_ids
    }

    /// Row-major `len x dim` matrix of all vectors.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// Checks the cross-record invariants: unique sentence ids, domain ids
    /// not below -1, and domain-name coverage when names are given.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.len());
        for (i, r) in self.iter().enumerate() {
            check_vector(i as u64, r.vector, self.dim)?;
            check_ids(i as u64, r.sentence_id, r.domain_id, &mut seen)?;
        }
        check_domain_names(&self.meta, self.domain_ids.iter().copied())
    }
}

fn check_vector(index: u64, vector: &[f32], dim: usize) -> Result<()> {
    if vector.len() != dim {
        return Err(Error::DimensionMismatch {
            index,
            got: vector.len(),
            dim,
        });
    }
    if let Some(component) = vector.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index, component });
    }
    Ok(())
}

fn check_ids(index: u64, sentence_id: u64, domain_id: i32, seen: &mut HashSet<u64>) -> Result<()> {
    if domain_id < -1 {
        return Err(Error::InvalidRecord {
            index,
            reason: format!("domain_id {domain_id} below -1"),
        });
    }
    if !seen.insert(sentence_id) {
        return Err(Error::InvalidRecord {
            index,
            reason: format!("duplicate sentence_id {sentence_id}"),
        });
    }
    Ok(())
}

fn check_domain_names(meta: &EmbeddingMeta, domains: impl Iterator<Item = i32>) -> Result<()> {
    if meta.domain_names.is_empty() {
        return Ok(());
    }
    for d in domains {
        if d >= 0 && !meta.domain_names.contains_key(&d) {
            return Err(Error::Metadata(format!(
                "domain_id {d} has no entry in domain_names"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub dim: usize,
    pub count: u64,
}

impl Header {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6..10].copy_from_slice(&(self.dim as u32).to_le_bytes());
        b[10..18].copy_from_slice(&self.count.to_le_bytes());
        b[18] = DTYPE_F32;
        b[19..21].copy_from_slice(&0u16.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        let magic: [u8; 4] = b[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = u32::from_le_bytes(b[6..10].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::InvalidHeader("dim is 0 at byte offset 6".into()));
        }
        let count = u64::from_le_bytes(b[10..18].try_into().unwrap());
        if b[18] != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(b[18]));
        }
        let reserved = u16::from_le_bytes([b[19], b[20]]);
        if reserved != 0 {
            return Err(Error::InvalidHeader(format!(
                "reserved field {reserved} at byte offset 19 must be 0"
            )));
        }
        Ok(Header { dim, count })
    }
}

fn encode_record(r: RecordRef<'_>, buf: &mut Vec<u8>) {
    buf.clear();
    buf.extend_from_slice(&r.sentence_id.to_le_bytes());
    buf.extend_from_slice(&r.doc_id.to_le_bytes());
    buf.extend_from_slice(&r.domain_id.to_le_bytes());
    for v in r.vector {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_record(buf: &[u8]) -> EmbeddingRecord {
    let sentence_id = u64::from_le_bytes(buf[0..8].try_into().unwrap());
    let doc_id = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let domain_id = i32::from_le_bytes(buf[16..20].try_into().unwrap());
    let vector = buf[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingRecord {
        sentence_id,
        doc_id,
        domain_id,
        vector,
    }
}

/// Streaming writer. The header count is patched in [`EmbeddingWriter::finish`].
pub struct EmbeddingWriter {
    path: PathBuf,
    out: BufWriter<File>,
    dim: usize,
    count: u64,
    seen: HashSet<u64>,
    buf: Vec<u8>,
}

impl EmbeddingWriter {
    pub fn create(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::InvalidHeader(format!(
                "dim must be in 1..=u32::MAX, got {dim}"
            )));
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        out.write_all(&Header { dim, count: 0 }.to_bytes())
            .map_err(|e| Error::io(&path, e))?;
        Ok(EmbeddingWriter {
            path,
            out,
            dim,
            count: 0,
            seen: HashSet::new(),
            buf: Vec::with_capacity(record_len(dim) as usize),
        })
    }

    pub fn write(&mut self, r: RecordRef<'_>) -> Result<()> {
        check_vector(self.count, r.vector, self.dim)?;
        check_ids(self.count, r.sentence_id, r.domain_id, &mut self.seen)?;
        encode_record(r, &mut self.buf);
        self.out
            .write_all(&self.buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self, meta: &EmbeddingMeta) -> Result<()> {
        let path = self.path.clone();
        let io = |e| Error::io(&path, e);
        self.out.flush().map_err(io)?;
        let mut file = self.out.into_inner().map_err(|e| io(e.into_error()))?;
        file.seek(SeekFrom::Start(0)).map_err(io)?;
        file.write_all(
            &Header {
                dim: self.dim,
                count: self.count,
            }
            .to_bytes(),
        )
        .map_err(io)?;
        file.sync_all().map_err(io)?;
        write_meta(&self.path, meta)
    }
}

pub fn write_meta(path: &Path, meta: &EmbeddingMeta) -> Result<()> {
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

/// Reads the sidecar; a missing sidecar yields default metadata.
pub fn read_meta(path: &Path) -> Result<EmbeddingMeta> {
    let side = sidecar_path(path);
    match std::fs::read_to_string(&side) {
        Ok(s) => serde_json::from_str(&s)
            .map_err(|e| Error::Metadata(format!("{}: {e}", side.display()))),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(EmbeddingMeta::default()),
        Err(e) => Err(Error::io(side, e)),
    }
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    set.validate()?;
    let mut w = EmbeddingWriter::create(path, set.dim())?;
    for r in set.iter() {
        w.write(r)?;
    }
    w.finish(&set.meta)
}

/// Streaming reader yielding records in file order, validating each one.
pub struct EmbeddingReader<R> {
    inner: R,
    header: Header,
    next_index: u64,
    seen: HashSet<u64>,
    buf: Vec<u8>,
    failed: bool,
}

impl EmbeddingReader<BufReader<File>> {
    /// Opens a file and checks its length against the header before any record is read.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let reader = Self::from_reader(BufReader::with_capacity(1 << 20, file))?;
        let rec = record_len(reader.header.dim);
        let expected = HEADER_LEN + reader.header.count * rec;
        if len < expected {
            let complete = (len - HEADER_LEN) / rec;
            return Err(Error::Truncated {
                index: complete,
                offset: HEADER_LEN + complete * rec,
            });
        }
        if len > expected {
            return Err(Error::TrailingBytes {
                count: reader.header.count,
                offset: expected,
            });
        }
        Ok(reader)
    }
}

impl<R: Read> EmbeddingReader<R> {
    pub fn from_reader(mut inner: R) -> Result<Self> {
        let mut hb = [0u8; HEADER_LEN as usize];
        let got = read_full(&mut inner, &mut hb)?;
        if got < hb.len() {
            if got >= 4 && hb[0..4] != MAGIC {
                return Err(Error::BadMagic {
                    found: hb[0..4].try_into().unwrap(),
                });
            }
            return Err(Error::TruncatedHeader { len: got as u64 });
        }
        let header = Header::parse(&hb)?;
        Ok(EmbeddingReader {
            inner,
            header,
            next_index: 0,
            seen: HashSet::new(),
            buf: vec![0u8; record_len(header.dim) as usize],
            failed: false,
        })
    }

    pub fn header(&self) -> Header {
        self.header
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn record_count(&self) -> u64 {
        self.header.count
    }

    fn read_next(&mut self) -> Result<EmbeddingRecord> {
        let index = self.next_index;
        let got = read_full(&mut self.inner, &mut self.buf)?;
        if got < self.buf.len() {
            return Err(Error::Truncated {
                index,
                offset: record_offset(self.header.dim, index),
            });
        }
        let r = decode_record(&self.buf);
        check_vector(index, &r.vector, self.header.dim)?;
        check_ids(index, r.sentence_id, r.domain_id, &mut self.seen)?;
        self.next_index += 1;
        Ok(r)
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next_index >= self.header.count {
            return None;
        }
        let r = self.read_next();
        self.failed = r.is_err();
        Some(r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.header.count - self.next_index) as usize;
        (0, Some(left))
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let meta = read_meta(path)?;
    let reader = EmbeddingReader::open(path)?;
    let mut set = EmbeddingSet::with_capacity(reader.dim(), reader.record_count() as usize, meta)?;
    for r in reader {
        let r = r?;
        // vector already validated by the reader
        set.sentence_ids.push(r.sentence_id);
        set.doc_ids.push(r.doc_id);
        set.domain_ids.push(r.domain_id);
        set.vectors.extend_from_slice(&r.vector);
    }
    check_domain_names(&set.meta, set.domain_ids.iter().copied())?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationSummary {
    pub dim: usize,
    pub count: u64,
    pub meta: EmbeddingMeta,
}

/// Streams the whole file, checking every header and record invariant.
pub fn validate_file(path: impl AsRef<Path>) -> Result<ValidationSummary> {
    let path = path.as_ref();
    let meta = read_meta(path)?;
    let reader = EmbeddingReader::open(path)?;
    let (dim, count) = (reader.dim(), reader.record_count());
    let mut missing_name = None;
    for r in reader {
        let r = r?;
        if missing_name.is_none()
            && !meta.domain_names.is_empty()
            && r.domain_id >= 0
            && !meta.domain_names.contains_key(&r.domain_id)
        {
            missing_name = Some(r.domain_id);
        }
    }
    if let Some(d) = missing_name {
        return Err(Error::Metadata(format!(
            "domain_id {d} has no entry in domain_names"
        )));
    }
    Ok(ValidationSummary { dim, count, meta })
}

/// Writes one length-prefixed record: u32 payload length, then the record bytes.
pub fn write_frame(w: &mut impl Write, r: RecordRef<'_>) -> Result<()> {
    let mut buf = Vec::with_capacity(record_len(r.vector.len()) as usize);
    encode_record(r, &mut buf);
    w.write_all(&(buf.len() as u32).to_le_bytes())?;
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one length-prefixed record; `Ok(None)` on clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<EmbeddingRecord>> {
    let mut lb = [0u8; 4];
    match read_full(r, &mut lb)? {
        0 => return Ok(None),
        4 => {}
        n => {
            return Err(Error::Parse(format!(
                "truncated frame length ({n} of 4 bytes)"
            )))
        }
    }
    let len = u32::from_le_bytes(lb) as usize;
    if len <= RECORD_PREFIX_LEN as usize || !(len - RECORD_PREFIX_LEN as usize).is_multiple_of(4) {
        return Err(Error::Parse(format!("invalid frame length {len}")));
    }
    let mut buf = vec![0u8; len];
    let got = read_full(r, &mut buf)?;
    if got < len {
        return Err(Error::Parse(format!(
            "truncated frame ({got} of {len} bytes)"
        )));
    }
    let rec = decode_record(&buf);
    if let Some(component) = rec.vector.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: rec.sentence_id,
            component,
        });
    }
    Ok(Some(rec))
}
