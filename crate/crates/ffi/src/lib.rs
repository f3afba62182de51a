//! C ABI over the strata engine.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `*_new`/`*_open` function and released by the matching `*_free`. Every
//! fallible call returns a [`StrataStatus`]; results come back through out
//! pointers, which are left untouched on error. Variable-length results use
//! the two-call pattern: a call with a short buffer returns
//! `STRATA_STATUS_BUFFER_TOO_SMALL` and stores the required length.
//!
//! Handles are safe to share between threads.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, Mutex};

use strata::capability::{CapError, CapId, Capability, CapabilityAuthority, Expiry, Region, Rights, Verdict};
use strata::cas::{CasError, ContentHash, PackStore, StoreConfig};
use strata::graph::{
    traverse_khop, Edge, EdgeType, GraphError, Label, Mutation, NodeId, Observation, RegionMap, TraversalGuard,
    WriteAuth, DEFAULT_DEGREE_BOUND,
};
use strata::ownership::{Lease, LeaseTable, ObjectId, OwnError, WriteLease};
use strata::readpath::{ReadCache, SnapshotReader};
use strata::snapshot::{Lineage, SnapshotError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrataStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    BufferTooSmall = 4,
    /// A capability check or grant was refused.
    Denied = 5,
    /// The requested lease conflicts with a live one.
    LeaseConflict = 6,
    Closed = 7,
    Corrupt = 8,
    Io = 9,
    /// A Rust panic was caught at the boundary.
    Internal = 10,
}

impl From<CasError> for StrataStatus {
    fn from(e: CasError) -> Self {
        match e {
            CasError::StoreClosed => StrataStatus::Closed,
            CasError::ObjectTooLarge { .. } | CasError::FormatMismatch | CasError::NoWritesYet => {
                StrataStatus::InvalidArgument
            }
            CasError::NotFound(_) => StrataStatus::NotFound,
            CasError::CorruptEntry(_) | CasError::MalformedPack(_) => StrataStatus::Corrupt,
            CasError::Io(_) => StrataStatus::Io,
        }
    }
}

impl From<CapError> for StrataStatus {
    fn from(e: CapError) -> Self {
        match e {
            CapError::UnknownCapability(_) => StrataStatus::NotFound,
            _ => StrataStatus::Denied,
        }
    }
}

impl From<OwnError> for StrataStatus {
    fn from(e: OwnError) -> Self {
        match e {
            OwnError::WriterActive | OwnError::ReadersActive(_) => StrataStatus::LeaseConflict,
            OwnError::StaleLease | OwnError::DoubleRelease => StrataStatus::InvalidArgument,
            OwnError::BrokenChain(_) => StrataStatus::Corrupt,
            OwnError::Cas(c) => c.into(),
        }
    }
}

impl From<GraphError> for StrataStatus {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownNode(_) | GraphError::UnknownEdge(_) => StrataStatus::NotFound,
            GraphError::CapabilityRejected(_) => StrataStatus::Denied,
            GraphError::LeaseRequired(_) => StrataStatus::LeaseConflict,
            _ => StrataStatus::InvalidArgument,
        }
    }
}

impl From<SnapshotError> for StrataStatus {
    fn from(e: SnapshotError) -> Self {
        match e {
            SnapshotError::MissingContent(_) | SnapshotError::UnknownSnapshot(_) => StrataStatus::NotFound,
            SnapshotError::MalformedRecord(_) => StrataStatus::Corrupt,
            SnapshotError::NonMonotoneTick { .. } | SnapshotError::InvalidBound => StrataStatus::InvalidArgument,
            SnapshotError::Graph(g) => g.into(),
            SnapshotError::Cas(c) => c.into(),
            SnapshotError::Own(o) => o.into(),
        }
    }
}

fn guard(f: impl FnOnce() -> Result<(), StrataStatus>) -> StrataStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StrataStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => StrataStatus::Internal,
    }
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, StrataStatus> {
    p.as_ref().ok_or(StrataStatus::NullPointer)
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, StrataStatus> {
    p.as_mut().ok_or(StrataStatus::NullPointer)
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], StrataStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(StrataStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, StrataStatus> {
    if s.is_null() {
        return Err(StrataStatus::NullPointer);
    }
    CStr::from_ptr(s).to_str().map_err(|_| StrataStatus::InvalidArgument)
}

unsafe fn digest(p: *const u8) -> Result<ContentHash, StrataStatus> {
    let d: [u8; 32] = bytes(p, 32)?.try_into().expect("32 bytes");
    Ok(ContentHash::from_digest(d))
}

unsafe fn write_digest(p: *mut u8, h: &ContentHash) -> Result<(), StrataStatus> {
    if p.is_null() {
        return Err(StrataStatus::NullPointer);
    }
    std::ptr::copy_nonoverlapping(h.digest().as_ptr(), p, 32);
    Ok(())
}

/// Copies `src` into `buf` if it fits; always reports the full length.
unsafe fn fill<T: Copy>(src: &[T], buf: *mut T, cap: usize, out_len: *mut usize) -> Result<(), StrataStatus> {
    *out(out_len)? = src.len();
    if src.len() > cap {
        return Err(StrataStatus::BufferTooSmall);
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(StrataStatus::NullPointer);
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn rights(r: u8) -> Result<Rights, StrataStatus> {
    Rights::from_u8(r).ok_or(StrataStatus::InvalidArgument)
}

/// Static NUL-terminated description of a status code.
#[no_mangle]
pub extern "C" fn strata_status_str(status: StrataStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        StrataStatus::Ok => b"ok\0",
        StrataStatus::NullPointer => b"null pointer argument\0",
        StrataStatus::InvalidArgument => b"invalid argument\0",
        StrataStatus::NotFound => b"not found\0",
        StrataStatus::BufferTooSmall => b"buffer too small\0",
        StrataStatus::Denied => b"denied by capability check\0",
        StrataStatus::LeaseConflict => b"lease conflict\0",
        StrataStatus::Closed => b"store is closed\0",
        StrataStatus::Corrupt => b"corrupt data\0",
        StrataStatus::Io => b"i/o error\0",
        StrataStatus::Internal => b"internal error\0",
    };
    s.as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn strata_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// --- content-addressed store ---

/// Content-addressed pack store.
pub struct StrataStore {
    inner: PackStore,
}

/// In-memory store. `segment_bytes` of 0 keeps the default segment size.
///
/// # Safety
/// Out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn strata_store_new_memory(segment_bytes: u64, out_store: *mut *mut StrataStore) -> StrataStatus {
    guard(|| {
        let slot = out(out_store)?;
        let mut cfg = StoreConfig::default();
        if segment_bytes > 0 {
            cfg.segment_target_bytes = segment_bytes;
        }
        *slot = Box::into_raw(Box::new(StrataStore {
            inner: PackStore::in_memory(cfg),
        }));
        Ok(())
    })
}

/// Opens or creates a store backed by pack files in directory `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; Out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn strata_store_open(path: *const c_char, out_store: *mut *mut StrataStore) -> StrataStatus {
    guard(|| {
        let path = text(path)?;
        let slot = out(out_store)?;
        let inner = PackStore::open(Path::new(path), StoreConfig::default())?;
        *slot = Box::into_raw(Box::new(StrataStore { inner }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from a store constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn strata_store_free(store: *mut StrataStore) {
    release(store)
}

/// Stores `len` bytes and writes their 32-byte digest to `out_digest`.
/// Storing content already present writes nothing.
///
/// # Safety
/// `data` must be readable for `len` bytes, `out_digest` writable for 32.
#[no_mangle]
pub unsafe extern "C" fn strata_store_put(
    store: *const StrataStore,
    data: *const u8,
    len: usize,
    out_digest: *mut u8,
) -> StrataStatus {
    guard(|| {
        let s = handle(store)?;
        let h = s.inner.put(bytes(data, len)?)?;
        write_digest(out_digest, &h)
    })
}

/// Reads the content with digest `digest` into `buf`.
///
/// # Safety
/// `digest` must be readable for 32 bytes, `buf` writable for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn strata_store_get(
    store: *const StrataStore,
    digest_ptr: *const u8,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> StrataStatus {
    guard(|| {
        let s = handle(store)?;
        let v = s.inner.get(&digest(digest_ptr)?)?;
        fill(&v, buf, cap, out_len)
    })
}

/// # Safety
/// `digest` must be readable for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn strata_store_contains(
    store: *const StrataStore,
    digest_ptr: *const u8,
    out_present: *mut bool,
) -> StrataStatus {
    guard(|| {
        let s = handle(store)?;
        *out(out_present)? = s.inner.contains(&digest(digest_ptr)?);
        Ok(())
    })
}

/// Bytes submitted through put and bytes physically appended.
///
/// # Safety
/// Out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn strata_store_stats(
    store: *const StrataStore,
    out_logical: *mut u64,
    out_physical: *mut u64,
) -> StrataStatus {
    guard(|| {
        let st = handle(store)?.inner.stats();
        *out(out_logical)? = st.logical_bytes;
        *out(out_physical)? = st.physical_bytes;
        Ok(())
    })
}

// --- capabilities ---

/// Capability authority. Capabilities are named by their 64-bit ids; rights
/// are 0 none, 1 read, 2 traverse, 3 write, 4 admin. Regions are half-open
/// node-id intervals `[lo, hi)`.
pub struct StrataAuthority {
    inner: CapabilityAuthority,
}

impl StrataAuthority {
    fn cap(&self, id: u64) -> Result<Capability, StrataStatus> {
        self.inner.get(CapId(id)).ok_or(StrataStatus::NotFound)
    }
}

/// # Safety
/// Out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn strata_authority_new(out_auth: *mut *mut StrataAuthority) -> StrataStatus {
    guard(|| {
        *out(out_auth)? = Box::into_raw(Box::new(StrataAuthority {
            inner: CapabilityAuthority::new(),
        }));
        Ok(())
    })
}

/// # Safety
/// `auth` must come from [`strata_authority_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn strata_authority_free(auth: *mut StrataAuthority) {
    release(auth)
}

/// Advances the authority clock and returns the new tick.
///
/// # Safety
/// `auth` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn strata_authority_advance(
    auth: *const StrataAuthority,
    ticks: u64,
    out_now: *mut u64,
) -> StrataStatus {
    guard(|| {
        let a = handle(auth)?;
        *out(out_now)? = a.inner.advance(ticks);
        Ok(())
    })
}

/// Mints a root capability that never expires.
///
/// # Safety
/// `subject` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn strata_cap_mint_root(
    auth: *const StrataAuthority,
    lo: u64,
    hi: u64,
    rights_level: u8,
    subject: *const c_char,
    out_id: *mut u64,
) -> StrataStatus {
    guard(|| {
        let a = handle(auth)?;
        let r = rights(rights_level)?;
        let cap = a.inner.mint_root(Region::interval(lo, hi), r, Expiry::Never, text(subject)?);
        *out(out_id)? = cap.id.0;
        Ok(())
    })
}

/// Delegates `[lo, hi)` with `rights_level` from `parent`. A `ttl` of 0
/// inherits the parent's expiry. Widening the parent fails with
/// `STRATA_STATUS_DENIED`.
///
/// # Safety
/// `subject` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn strata_cap_grant(
    auth: *const StrataAuthority,
    parent: u64,
    lo: u64,
    hi: u64,
    rights_level: u8,
    ttl: u64,
    subject: *const c_char,
    out_id: *mut u64,
) -> StrataStatus {
    guard(|| {
        let a = handle(auth)?;
        let r = rights(rights_level)?;
        let subject = text(subject)?;
        let slot = out(out_id)?;
        let p = a.cap(parent)?;
        let ttl = (ttl > 0).then_some(ttl);
        *slot = a.inner.grant(&p, &Region::interval(lo, hi), r, ttl, subject)?.id.0;
        Ok(())
    })
}

/// Revokes `id` and all its descendants. `out_revoked` may be null.
///
/// # Safety
/// `auth` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn strata_cap_revoke(auth: *const StrataAuthority, id: u64, out_revoked: *mut usize) -> StrataStatus {
    guard(|| {
        let a = handle(auth)?;
        let r = a.inner.revoke(CapId(id))?;
        if let Some(slot) = out_revoked.as_mut() {
            *slot = r.revoked.len();
        }
        Ok(())
    })
}

/// `STRATA_STATUS_OK` when `id` grants `rights_level` over `[lo, hi)` now,
/// `STRATA_STATUS_DENIED` otherwise.
///
/// # Safety
/// `auth` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn strata_cap_verify(
    auth: *const StrataAuthority,
    id: u64,
    lo: u64,
    hi: u64,
    rights_level: u8,
) -> StrataStatus {
    guard(|| {
        let a = handle(auth)?;
        let r = rights(rights_level)?;
        let cap = a.cap(id)?;
        match a.inner.verify(&cap, &Region::interval(lo, hi), r, a.inner.now()) {
            Verdict::Accept => Ok(()),
            Verdict::Reject(_) => Err(StrataStatus::Denied),
        }
    })
}

// --- ownership leases ---

/// Lease table. Leases are named by 64-bit ids.
pub struct StrataLeases {
    table: LeaseTable,
    live: Mutex<std::collections::HashMap<u64, Lease>>,
}

/// # Safety
/// Out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn strata_leases_new(out_leases: *mut *mut StrataLeases) -> StrataStatus {
    guard(|| {
        *out(out_leases)? = Box::into_raw(Box::new(StrataLeases {
            table: LeaseTable::new(),
            live: Mutex::new(Default::default()),
        }));
        Ok(())
    })
}

/// # Safety
/// `leases` must come from [`strata_leases_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn strata_leases_free(leases: *mut StrataLeases) {
    release(leases)
}

unsafe fn acquire(
    leases: *const StrataLeases,
    out_lease: *mut u64,
    f: impl FnOnce(&LeaseTable) -> Result<Lease, OwnError>,
) -> StrataStatus {
    guard(|| {
        let l = handle(leases)?;
        let slot = out(out_lease)?;
        let lease = f(&l.table)?;
        l.live.lock().map_err(|_| StrataStatus::Internal)?.insert(lease.id().0, lease);
        *slot = lease.id().0;
        Ok(())
    })
}

/// Shared lease on `object`; fails while a writer holds it.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn strata_lease_acquire_read(
    leases: *const StrataLeases,
    object: u64,
    out_lease: *mut u64,
) -> StrataStatus {
    acquire(leases, out_lease, |t| t.acquire_read(ObjectId(object)).map(Lease::from))
}

/// Exclusive lease on `object`; fails while any reader or writer holds it.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn strata_lease_acquire_write(
    leases: *const StrataLeases,
    object: u64,
    out_lease: *mut u64,
) -> StrataStatus {
    acquire(leases, out_lease, |t| t.acquire_write(ObjectId(object)).map(Lease::from))
}

/// # Safety
/// `leases` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn strata_lease_release(leases: *const StrataLeases, lease: u64) -> StrataStatus {
    guard(|| {
        let l = handle(leases)?;
        let held = l
            .live
            .lock()
            .map_err(|_| StrataStatus::Internal)?
            .remove(&lease)
            .ok_or(StrataStatus::NotFound)?;
        l.table.release(held)?;
        Ok(())
    })
}

// --- graph over a snapshot lineage ---

const GRAPH_OBJECT: ObjectId = ObjectId(0);

/// Property graph whose mutations are staged and then committed as one
/// snapshot. Reads see the last committed snapshot.
pub struct StrataGraph {
    lineage: Lineage,
    authority: CapabilityAuthority,
    cap: Capability,
    leases: LeaseTable,
    held: Vec<WriteLease>,
    cache: ReadCache,
    staged: Mutex<Observation>,
}

impl StrataGraph {
    fn stage(&self, m: Mutation) -> Result<(), StrataStatus> {
        self.staged.lock().map_err(|_| StrataStatus::Internal)?.push(m);
        Ok(())
    }
}

/// Empty graph over its own in-memory store. `segment_bytes` of 0 keeps the
/// default segment size.
///
/// # Safety
/// Out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_new(segment_bytes: u64, out_graph: *mut *mut StrataGraph) -> StrataStatus {
    guard(|| {
        let slot = out(out_graph)?;
        let mut cfg = StoreConfig::default();
        if segment_bytes > 0 {
            cfg.segment_target_bytes = segment_bytes;
        }
        let authority = CapabilityAuthority::new();
        let cap = authority.mint_root(Region::all(), Rights::Admin, Expiry::Never, "graph");
        let leases = LeaseTable::new();
        let held = vec![leases.acquire_write(GRAPH_OBJECT)?];
        *slot = Box::into_raw(Box::new(StrataGraph {
            lineage: Lineage::new(Arc::new(PackStore::in_memory(cfg)), None),
            authority,
            cap,
            leases,
            held,
            cache: ReadCache::new(4096),
            staged: Mutex::new(Observation::new()),
        }));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from [`strata_graph_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_free(graph: *mut StrataGraph) {
    release(graph)
}

/// # Safety
/// `label` must be NUL-terminated; `payload` readable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_add_node(
    graph: *const StrataGraph,
    id: u64,
    label: *const c_char,
    payload: *const u8,
    len: usize,
) -> StrataStatus {
    guard(|| {
        let g = handle(graph)?;
        g.stage(Mutation::AddNode {
            id: NodeId(id),
            label: Label(text(label)?.to_string()),
            payload: bytes(payload, len)?.to_vec(),
        })
    })
}

/// # Safety
/// `graph` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_remove_node(graph: *const StrataGraph, id: u64) -> StrataStatus {
    guard(|| handle(graph)?.stage(Mutation::RemoveNode { id: NodeId(id) }))
}

/// # Safety
/// `payload` must be readable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_set_payload(
    graph: *const StrataGraph,
    id: u64,
    payload: *const u8,
    len: usize,
) -> StrataStatus {
    guard(|| {
        let g = handle(graph)?;
        g.stage(Mutation::SetPayload {
            id: NodeId(id),
            payload: bytes(payload, len)?.to_vec(),
        })
    })
}

unsafe fn edge(src: u64, dst: u64, etype: *const c_char) -> Result<Edge, StrataStatus> {
    Ok(Edge {
        src: NodeId(src),
        dst: NodeId(dst),
        etype: EdgeType(text(etype)?.to_string()),
    })
}

/// # Safety
/// `etype` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_add_edge(
    graph: *const StrataGraph,
    src: u64,
    dst: u64,
    etype: *const c_char,
) -> StrataStatus {
    guard(|| {
        let g = handle(graph)?;
        g.stage(Mutation::AddEdge(edge(src, dst, etype)?))
    })
}

/// # Safety
/// `etype` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_remove_edge(
    graph: *const StrataGraph,
    src: u64,
    dst: u64,
    etype: *const c_char,
) -> StrataStatus {
    guard(|| {
        let g = handle(graph)?;
        g.stage(Mutation::RemoveEdge(edge(src, dst, etype)?))
    })
}

/// Commits the staged mutations as one snapshot at `tick`, which must exceed
/// the previous commit's tick, and writes the snapshot digest. The staged
/// batch is consumed whether or not the commit succeeds; a failed commit
/// leaves the graph unchanged.
///
/// # Safety
/// `out_digest` must be writable for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_commit(graph: *const StrataGraph, tick: u64, out_digest: *mut u8) -> StrataStatus {
    guard(|| {
        let g = handle(graph)?;
        if out_digest.is_null() {
            return Err(StrataStatus::NullPointer);
        }
        let obs = std::mem::take(&mut *g.staged.lock().map_err(|_| StrataStatus::Internal)?);
        let auth = WriteAuth {
            authority: &g.authority,
            cap: &g.cap,
            leases: &g.leases,
            held: &g.held,
            regions: RegionMap::Single(GRAPH_OBJECT),
        };
        let snap = g.lineage.commit(&obs, tick, &auth)?;
        write_digest(out_digest, &snap.hash)
    })
}

/// Nodes in the last committed snapshot.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_node_count(graph: *const StrataGraph, out_count: *mut u64) -> StrataStatus {
    guard(|| {
        let g = handle(graph)?;
        *out(out_count)? = g.lineage.head().root.len() as u64;
        Ok(())
    })
}

/// Node ids within `hops` out-edges of `start`, `start` included, in
/// ascending order.
///
/// # Safety
/// `out_ids` must be writable for `cap` ids.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_khop(
    graph: *const StrataGraph,
    start: u64,
    hops: u32,
    out_ids: *mut u64,
    cap: usize,
    out_len: *mut usize,
) -> StrataStatus {
    guard(|| {
        let g = handle(graph)?;
        let snap = g.lineage.head();
        let reader = SnapshotReader::new(g.lineage.store(), &snap, &g.cache);
        let tg = TraversalGuard {
            authority: &g.authority,
            cap: &g.cap,
            now: g.authority.now(),
            verify: true,
            degree_bound: DEFAULT_DEGREE_BOUND,
        };
        let ids: Vec<u64> = traverse_khop(&reader, NodeId(start), hops, &tg)?.into_iter().map(|n| n.0).collect();
        fill(&ids, out_ids, cap, out_len)
    })
}

/// Rewrites the head snapshot into at most `k` pack segments.
///
/// # Safety
/// `out_fragments` may be null.
#[no_mangle]
pub unsafe extern "C" fn strata_graph_compact(graph: *const StrataGraph, k: usize, out_fragments: *mut usize) -> StrataStatus {
    guard(|| {
        let g = handle(graph)?;
        let c = g.lineage.compact_head(k)?;
        if let Some(slot) = out_fragments.as_mut() {
            *slot = c.snapshot.fragment_count();
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_mapping() {
        assert_eq!(StrataStatus::from(OwnError::ReadersActive(2)), StrataStatus::LeaseConflict);
        assert_eq!(StrataStatus::from(CasError::StoreClosed), StrataStatus::Closed);
        assert_eq!(
            StrataStatus::from(SnapshotError::Graph(GraphError::UnknownNode(NodeId(1)))),
            StrataStatus::NotFound
        );
        assert_eq!(StrataStatus::from(CapError::Revoked(CapId(3))), StrataStatus::Denied);
    }

    #[test]
    fn panics_become_internal() {
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let s = guard(|| panic!("boom"));
        std::panic::set_hook(prev);
        assert_eq!(s, StrataStatus::Internal);
    }

    #[test]
    fn fill_reports_length() {
        let mut len = 0;
        let mut buf = [0u32; 2];
        unsafe {
            assert_eq!(fill(&[1u32, 2, 3], buf.as_mut_ptr(), 2, &mut len), Err(StrataStatus::BufferTooSmall));
            assert_eq!(len, 3);
            assert_eq!(fill(&[4u32], buf.as_mut_ptr(), 2, &mut len), Ok(()));
        }
        assert_eq!((len, buf[0]), (1, 4));
    }
}
