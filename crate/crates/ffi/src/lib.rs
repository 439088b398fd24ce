//! C ABI over `domclust`.
//!
//! Handles are opaque pointers created by `*_load` / `*_open` and released
//! with the matching `*_free`. Every function returning `int32_t` yields a
//! [`DcStatus`]; on failure a message is available from [`dc_last_error`] on
//! the same thread until the next failing call. Panics never cross the
//! boundary; they surface as `DC_STATUS_ERR_PANIC`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use domclust::embstore::{validate_file, EmbeddingReader, RecordRef};
use domclust::evaluation::{purity, ContingencyTable};
use domclust::kmeans::KMeansModel;
use domclust::router::RoutingTable;
use domclust::Error;

/// Status codes. Non-negative values are not errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    /// The reader has no more records.
    End = 1,
    ErrNull = -1,
    ErrIo = -2,
    ErrFormat = -3,
    ErrDimMismatch = -4,
    ErrInvalid = -5,
    ErrUnmapped = -6,
    ErrPanic = -7,
    ErrInternal = -8,
}

/// Identifiers of one embedding record; the vector goes to a caller buffer.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DcRecord {
    pub sentence_id: u64,
    pub doc_id: u64,
    pub domain_id: i32,
}

/// A fitted k-means model.
pub struct DcModel {
    model: KMeansModel,
}

/// A model plus its cluster -> model-id table.
pub struct DcRouter {
    model: KMeansModel,
    table: RoutingTable,
    ids: BTreeMap<usize, CString>,
    default_id: Option<CString>,
}

/// Streaming reader over an embedding file.
pub struct DcReader {
    inner: EmbeddingReader<BufReader<File>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DcStatus {
    match e {
        Error::Io { .. } | Error::Stream(_) => DcStatus::ErrIo,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::UnsupportedDtype(_)
        | Error::Truncated { .. }
        | Error::TruncatedHeader { .. }
        | Error::TrailingBytes { .. }
        | Error::InvalidRecord { .. }
        | Error::NonFinite { .. }
        | Error::InvalidHeader(_)
        | Error::Metadata(_)
        | Error::Parse(_) => DcStatus::ErrFormat,
        Error::DimensionMismatch { .. } | Error::DimMismatch { .. } => DcStatus::ErrDimMismatch,
        Error::UnmappedCluster(_) => DcStatus::ErrUnmapped,
        Error::Internal(_) => DcStatus::ErrInternal,
        Error::Layer { source, .. } => status_of(source),
        _ => DcStatus::ErrInvalid,
    }
}

fn fail(e: Error) -> DcStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> DcStatus {
    set_error(format!("{what} is null"));
    DcStatus::ErrNull
}

/// Runs `f`, turning a panic into `DC_STATUS_ERR_PANIC`.
fn guard(f: impl FnOnce() -> DcStatus) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s as i32,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            DcStatus::ErrPanic as i32
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, DcStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error(format!("{what} is not valid UTF-8"));
            Err(DcStatus::ErrInvalid)
        }
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], DcStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! dc {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail(e),
        }
    };
}

/// Message for the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `model.json` written by `kmeans-fit`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_model_load(path: *const c_char, out: *mut *mut DcModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let path = tri!(path_arg(path, "path"));
        let model = dc!(KMeansModel::load(&path));
        *out = Box::into_raw(Box::new(DcModel { model }));
        DcStatus::Ok
    })
}

/// # Safety
/// `model` must come from `dc_model_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dc_model_free(model: *mut DcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vector dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_model_dim(model: *const DcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.dim())
}

/// Number of clusters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_model_k(model: *const DcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.k())
}

/// Nearest centroid of `vector[0..len]`. `sqdist` may be null.
///
/// # Safety
/// `vector` must hold `len` floats; `cluster` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_model_assign(
    model: *const DcModel,
    vector: *const f32,
    len: usize,
    cluster: *mut usize,
    sqdist: *mut f64,
) -> i32 {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return null("model");
        };
        if cluster.is_null() {
            return null("cluster");
        }
        let v = tri!(slice_arg(vector, len, "vector"));
        let (c, d) = dc!(m.model.nearest(v));
        *cluster = c;
        if !sqdist.is_null() {
            *sqdist = d;
        }
        DcStatus::Ok
    })
}

/// Loads a model and its routing table; every cluster must resolve to a model id.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_router_load(
    model_path: *const c_char,
    routing_path: *const c_char,
    out: *mut *mut DcRouter,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let mp = tri!(path_arg(model_path, "model_path"));
        let rp = tri!(path_arg(routing_path, "routing_path"));
        let model = dc!(KMeansModel::load(&mp));
        let table = dc!(RoutingTable::load(&rp));
        dc!(table.check_covers(model.k()));
        let cstr = |s: &str| {
            CString::new(s).map_err(|_| Error::Parse(format!("model id {s:?} contains NUL")))
        };
        let mut ids = BTreeMap::new();
        for (&c, id) in &table.model_for_cluster {
            ids.insert(c, dc!(cstr(id)));
        }
        let default_id = match &table.default_model {
            Some(d) => Some(dc!(cstr(d))),
            None => None,
        };
        *out = Box::into_raw(Box::new(DcRouter {
            model,
            table,
            ids,
            default_id,
        }));
        DcStatus::Ok
    })
}

/// # Safety
/// `router` must come from `dc_router_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dc_router_free(router: *mut DcRouter) {
    if !router.is_null() {
        drop(Box::from_raw(router));
    }
}

impl DcRouter {
    fn id_ptr(&self, cluster: usize) -> Result<*const c_char, Error> {
        self.table.lookup(cluster)?;
        Ok(self
            .ids
            .get(&cluster)
            .or(self.default_id.as_ref())
            .map(|c| c.as_ptr())
            .expect("lookup succeeded"))
    }
}

/// Routes one vector. `*model_id` points into the router and lives as long as it.
///
/// # Safety
/// `vector` must hold `len` floats; `cluster` and `model_id` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_router_route(
    router: *const DcRouter,
    vector: *const f32,
    len: usize,
    cluster: *mut usize,
    model_id: *mut *const c_char,
) -> i32 {
    guard(|| {
        let Some(r) = router.as_ref() else {
            return null("router");
        };
        if cluster.is_null() || model_id.is_null() {
            return null("output pointer");
        }
        let v = tri!(slice_arg(vector, len, "vector"));
        let rec = RecordRef {
            sentence_id: 0,
            doc_id: 0,
            domain_id: -1,
            vector: v,
        };
        let route = dc!(domclust::router::route(&r.model, &r.table, rec));
        *model_id = dc!(r.id_ptr(route.cluster));
        *cluster = route.cluster;
        DcStatus::Ok
    })
}

/// Routes a document given as `n` row-major sentence vectors of `dim` floats,
/// by their mean.
///
/// # Safety
/// `vectors` must hold `n * dim` floats; `cluster` and `model_id` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_router_route_document(
    router: *const DcRouter,
    vectors: *const f32,
    n: usize,
    dim: usize,
    cluster: *mut usize,
    model_id: *mut *const c_char,
) -> i32 {
    guard(|| {
        let Some(r) = router.as_ref() else {
            return null("router");
        };
        if cluster.is_null() || model_id.is_null() {
            return null("output pointer");
        }
        let Some(total) = n.checked_mul(dim) else {
            set_error("n * dim overflows".into());
            return DcStatus::ErrInvalid;
        };
        let flat = tri!(slice_arg(vectors, total, "vectors"));
        let sentences: Vec<RecordRef<'_>> = if dim == 0 {
            Vec::new()
        } else {
            flat.chunks_exact(dim)
                .map(|v| RecordRef {
                    sentence_id: 0,
                    doc_id: 0,
                    domain_id: -1,
                    vector: v,
                })
                .collect()
        };
        let route = dc!(domclust::router::route_document(
            &r.model, &r.table, &sentences
        ));
        *model_id = dc!(r.id_ptr(route.cluster));
        *cluster = route.cluster;
        DcStatus::Ok
    })
}

/// Opens an embedding file for streaming. The file length is checked against
/// the header up front.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_reader_open(path: *const c_char, out: *mut *mut DcReader) -> i32 {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let path = tri!(path_arg(path, "path"));
        let inner = dc!(EmbeddingReader::open(&path));
        *out = Box::into_raw(Box::new(DcReader { inner }));
        DcStatus::Ok
    })
}

/// # Safety
/// `reader` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_reader_dim(reader: *const DcReader) -> usize {
    reader.as_ref().map_or(0, |r| r.inner.dim())
}

/// Record count from the header.
///
/// # Safety
/// `reader` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_reader_count(reader: *const DcReader) -> u64 {
    reader.as_ref().map_or(0, |r| r.inner.record_count())
}

/// Reads the next record into `record` and `buf[0..dim]`. Returns `DC_STATUS_END`
/// after the last record. `buf_len` must be at least the file's dimension.
///
/// # Safety
/// `record` must be writable; `buf` must have room for `buf_len` floats.
#[no_mangle]
pub unsafe extern "C" fn dc_reader_next(
    reader: *mut DcReader,
    record: *mut DcRecord,
    buf: *mut f32,
    buf_len: usize,
) -> i32 {
    guard(|| {
        let Some(r) = reader.as_mut() else {
            return null("reader");
        };
        if record.is_null() {
            return null("record");
        }
        let dim = r.inner.dim();
        if buf_len < dim {
            set_error(format!("buffer holds {buf_len} floats, records have {dim}"));
            return DcStatus::ErrDimMismatch;
        }
        if dim > 0 && buf.is_null() {
            return null("buf");
        }
        match r.inner.next() {
            None => DcStatus::End,
            Some(Err(e)) => fail(e),
            Some(Ok(rec)) => {
                *record = DcRecord {
                    sentence_id: rec.sentence_id,
                    doc_id: rec.doc_id,
                    domain_id: rec.domain_id,
                };
                if dim > 0 {
                    std::slice::from_raw_parts_mut(buf, dim).copy_from_slice(&rec.vector);
                }
                DcStatus::Ok
            }
        }
    })
}

/// # Safety
/// `reader` must come from `dc_reader_open` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dc_reader_free(reader: *mut DcReader) {
    if !reader.is_null() {
        drop(Box::from_raw(reader));
    }
}

/// Full check of an embedding file and its sidecar. `dim` and `count` may be null.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dc_validate(path: *const c_char, dim: *mut u32, count: *mut u64) -> i32 {
    guard(|| {
        let path = tri!(path_arg(path, "path"));
        let s = dc!(validate_file(&path));
        if !dim.is_null() {
            *dim = s.dim as u32;
        }
        if !count.is_null() {
            *count = s.count;
        }
        DcStatus::Ok
    })
}

/// Majority and matched purity of a row-major `k x d` cluster-by-domain count table.
///
/// # Safety
/// `counts` must hold `k * d` values; `majority` and `matched` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_purity(
    counts: *const u64,
    k: usize,
    d: usize,
    majority: *mut f64,
    matched: *mut f64,
) -> i32 {
    guard(|| {
        if majority.is_null() || matched.is_null() {
            return null("output pointer");
        }
        if k == 0 || d == 0 {
            set_error("table needs at least one row and one column".into());
            return DcStatus::ErrInvalid;
        }
        let Some(total) = k.checked_mul(d) else {
            set_error("k * d overflows".into());
            return DcStatus::ErrInvalid;
        };
        let flat = tri!(slice_arg(counts, total, "counts"));
        let rows = flat.chunks_exact(d).map(<[u64]>::to_vec).collect();
        let table = ContingencyTable::from_counts(rows, (0..d as i32).collect());
        let r = dc!(purity(&table));
        *majority = r.purity_majority;
        *matched = r.purity_matched;
        DcStatus::Ok
    })
}
