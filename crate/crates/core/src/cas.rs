//! Immutable content-addressed pack store.
//!
//! Payloads live in append-only pack segments. Every segment is a [`Pack`]:
//!
//! ```text
//! "ENSH" | version: u32 LE (=1) | algorithm-id: u8
//! repeated: digest [32] | payload length: u64 LE | payload bytes
//! ```
//!
//! The in-memory index (`hash -> location`) is rebuilt by scanning segments
//! at open. A `put` of content that is already indexed appends nothing.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PACK_MAGIC: [u8; 4] = *b"ENSH";
pub const PACK_VERSION: u32 = 1;
pub const ALGO_SHA256: u8 = 1;
/// Bytes in a pack header: magic, version, algorithm-id.
pub const PACK_HEADER_LEN: u64 = 9;
/// Bytes of framing per entry: digest plus length.
pub const ENTRY_OVERHEAD: u64 = 40;
pub const DEFAULT_MAX_OBJECT_SIZE: u64 = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum CasError {
    #[error("store is closed")]
    StoreClosed,
    #[error("object of {len} bytes exceeds the {limit} byte limit")]
    ObjectTooLarge { len: u64, limit: u64 },
    #[error("content {0} not found")]
    NotFound(ContentHash),
    #[error("stored entry {0} does not match its digest")]
    CorruptEntry(ContentHash),
    #[error("packs use different formats")]
    FormatMismatch,
    #[error("malformed pack: {0}")]
    MalformedPack(String),
    #[error("no logical bytes written yet")]
    NoWritesYet,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 256-bit content digest tagged with the algorithm that produced it.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash {
    digest: [u8; 32],
    algorithm: u8,
}

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        Self {
            digest: Sha256::digest(bytes).into(),
            algorithm: ALGO_SHA256,
        }
    }

    pub const fn from_digest(digest: [u8; 32]) -> Self {
        Self {
            digest,
            algorithm: ALGO_SHA256,
        }
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn algorithm(&self) -> u8 {
        self.algorithm
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in &self.digest {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 {
            return None;
        }
        let mut digest = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let pair = std::str::from_utf8(chunk).ok()?;
            digest[i] = u8::from_str_radix(pair, 16).ok()?;
        }
        Some(Self::from_digest(digest))
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({}..)", &self.to_hex()[..12])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackEntry {
    pub hash: ContentHash,
    pub len: u64,
    /// Offset of the payload (not the entry header) within the pack bytes.
    pub offset: u64,
}

/// An ordered, deduplicated sequence of content entries plus its exact
/// serialized bytes.
#[derive(Clone)]
pub struct Pack {
    algorithm: u8,
    entries: Vec<PackEntry>,
    index: HashMap<ContentHash, usize>,
    bytes: Vec<u8>,
}

impl fmt::Debug for Pack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pack")
            .field("algorithm", &self.algorithm)
            .field("entries", &self.entries.len())
            .field("bytes", &self.bytes.len())
            .finish()
    }
}

impl Default for Pack {
    fn default() -> Self {
        Self::empty()
    }
}

impl Pack {
    pub fn empty() -> Self {
        Self::with_algorithm(ALGO_SHA256)
    }

    fn with_algorithm(algorithm: u8) -> Self {
        let mut bytes = Vec::with_capacity(PACK_HEADER_LEN as usize);
        bytes.extend_from_slice(&PACK_MAGIC);
        bytes.extend_from_slice(&PACK_VERSION.to_le_bytes());
        bytes.push(algorithm);
        Self {
            algorithm,
            entries: Vec::new(),
            index: HashMap::new(),
            bytes,
        }
    }

    /// Builds a pack from payloads, keeping the first copy of each.
    pub fn from_payloads<'a, I: IntoIterator<Item = &'a [u8]>>(payloads: I) -> Self {
        let mut pack = Self::empty();
        for p in payloads {
            pack.push(p);
        }
        pack
    }

    /// Appends `payload` unless already present. Returns the bytes appended.
    pub fn push(&mut self, payload: &[u8]) -> u64 {
        let hash = ContentHash::of(payload);
        self.push_hashed(hash, payload)
    }

    fn push_hashed(&mut self, hash: ContentHash, payload: &[u8]) -> u64 {
        if self.index.contains_key(&hash) {
            return 0;
        }
        self.push_forced(hash, payload)
    }

    /// Appends even when `hash` is present; lookups then see the newest copy.
    fn push_forced(&mut self, hash: ContentHash, payload: &[u8]) -> u64 {
        self.bytes.extend_from_slice(hash.digest());
        self.bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        let offset = self.bytes.len() as u64;
        self.bytes.extend_from_slice(payload);
        self.index.insert(hash, self.entries.len());
        self.entries.push(PackEntry {
            hash,
            len: payload.len() as u64,
            offset,
        });
        ENTRY_OVERHEAD + payload.len() as u64
    }

    /// Parses pack bytes. With `verify`, every payload is rehashed.
    pub fn parse(bytes: &[u8], verify: bool) -> Result<Self, CasError> {
        if bytes.len() < PACK_HEADER_LEN as usize {
            return Err(CasError::MalformedPack("truncated header".into()));
        }
        if bytes[..4] != PACK_MAGIC {
            return Err(CasError::MalformedPack("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != PACK_VERSION {
            return Err(CasError::MalformedPack(format!("unsupported version {version}")));
        }
        let algorithm = bytes[8];
        if algorithm != ALGO_SHA256 {
            return Err(CasError::MalformedPack(format!("unknown algorithm {algorithm}")));
        }
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        let mut pos = PACK_HEADER_LEN as usize;
        while pos < bytes.len() {
            if bytes.len() - pos < ENTRY_OVERHEAD as usize {
                return Err(CasError::MalformedPack(format!("truncated entry at {pos}")));
            }
            let digest: [u8; 32] = bytes[pos..pos + 32].try_into().unwrap();
            let len = u64::from_le_bytes(bytes[pos + 32..pos + 40].try_into().unwrap());
            let offset = pos + ENTRY_OVERHEAD as usize;
            let end = offset
                .checked_add(len as usize)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| CasError::MalformedPack(format!("payload overruns pack at {pos}")))?;
            let hash = ContentHash::from_digest(digest);
            if verify && ContentHash::of(&bytes[offset..end]) != hash {
                return Err(CasError::CorruptEntry(hash));
            }
            if index.insert(hash, entries.len()).is_some() {
                return Err(CasError::MalformedPack(format!("duplicate entry {hash}")));
            }
            entries.push(PackEntry {
                hash,
                len,
                offset: offset as u64,
            });
            pos = end;
        }
        Ok(Self {
            algorithm,
            entries,
            index,
            bytes: bytes.to_vec(),
        })
    }

    /// Dedup-union of two packs in first-seen order. The empty pack is the
    /// identity and the operation is associative.
    pub fn concat(&self, other: &Pack) -> Result<Pack, CasError> {
        if self.algorithm != other.algorithm {
            return Err(CasError::FormatMismatch);
        }
        let mut out = self.clone();
        for e in &other.entries {
            out.push_hashed(e.hash, other.payload(e));
        }
        Ok(out)
    }

    pub fn algorithm(&self) -> u8 {
        self.algorithm
    }

    pub fn entries(&self) -> &[PackEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, hash: &ContentHash) -> bool {
        self.index.contains_key(hash)
    }

    pub fn entry(&self, hash: &ContentHash) -> Option<&PackEntry> {
        self.index.get(hash).map(|&i| &self.entries[i])
    }

    pub fn payload(&self, entry: &PackEntry) -> &[u8] {
        &self.bytes[entry.offset as usize..(entry.offset + entry.len) as usize]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Digest of the serialized pack.
    pub fn digest(&self) -> ContentHash {
        ContentHash::of(&self.bytes)
    }
}

/// Free-function form of [`Pack::concat`].
pub fn pack_concat(a: &Pack, b: &Pack) -> Result<Pack, CasError> {
    a.concat(b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriteStats {
    /// Bytes submitted through `put`.
    pub logical_bytes: u64,
    /// Bytes appended to pack storage, headers included.
    pub physical_bytes: u64,
}

impl WriteStats {
    pub const CSV_HEADER: &'static str = "logical_bytes,physical_bytes,wa";

    pub fn csv_row(&self) -> String {
        let wa = write_amplification(self)
            .map(|w| format!("{w:.6}"))
            .unwrap_or_else(|_| "NA".into());
        format!("{},{},{}", self.logical_bytes, self.physical_bytes, wa)
    }
}

/// Physical bytes over logical bytes.
pub fn write_amplification(stats: &WriteStats) -> Result<f64, CasError> {
    if stats.logical_bytes == 0 {
        return Err(CasError::NoWritesYet);
    }
    Ok(stats.physical_bytes as f64 / stats.logical_bytes as f64)
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub max_object_size: u64,
    pub verify_on_read: bool,
    /// A segment is sealed once it grows past this many bytes.
    pub segment_target_bytes: u64,
    /// When off, every put appends, duplicates included. Ablation only.
    pub dedup: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            max_object_size: DEFAULT_MAX_OBJECT_SIZE,
            verify_on_read: true,
            segment_target_bytes: 4 * 1024 * 1024,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentId(pub u32);

#[derive(Debug, Clone, Copy)]
struct Location {
    segment: usize,
    entry: usize,
}

#[derive(Debug, Clone)]
struct Segment {
    id: SegmentId,
    pack: Pack,
    sealed: bool,
}

#[derive(Debug)]
struct StoreInner {
    open: bool,
    segments: Vec<Arc<Segment>>,
    index: HashMap<ContentHash, Location>,
    stats: WriteStats,
    live_logical: u64,
    files: HashMap<SegmentId, File>,
}

/// Append-only content-addressed store over pack segments.
///
/// Readers run concurrently; appends are serialized by an internal write
/// lock, so every `put`/`get` is linearizable.
#[derive(Debug)]
pub struct PackStore {
    config: StoreConfig,
    dir: Option<PathBuf>,
    inner: RwLock<StoreInner>,
}

impl PackStore {
    pub fn in_memory(config: StoreConfig) -> Self {
        Self {
            config,
            dir: None,
            inner: RwLock::new(StoreInner {
                open: true,
                segments: Vec::new(),
                index: HashMap::new(),
                stats: WriteStats::default(),
                live_logical: 0,
                files: HashMap::new(),
            }),
        }
    }

    /// Opens (or creates) a directory of `seg-NNNNNNNN.pack` files and
    /// rebuilds the index from them. Existing segments are sealed.
    pub fn open(dir: impl AsRef<Path>, config: StoreConfig) -> Result<Self, CasError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut found = Vec::new();
        for ent in fs::read_dir(&dir)? {
            let ent = ent?;
            let name = ent.file_name().to_string_lossy().into_owned();
            if let Some(num) = name.strip_prefix("seg-").and_then(|s| s.strip_suffix(".pack")) {
                if let Ok(id) = num.parse::<u32>() {
                    found.push((id, ent.path()));
                }
            }
        }
        found.sort();
        let store = Self::in_memory(config);
        {
            let mut inner = store.inner.write();
            for (id, path) in found {
                let pack = Pack::parse(&fs::read(&path)?, false)?;
                let seg_idx = inner.segments.len();
                for (i, e) in pack.entries().iter().enumerate() {
                    if !inner.index.contains_key(&e.hash) {
                        inner.live_logical += e.len;
                    }
                    inner.index.insert(
                        e.hash,
                        Location {
                            segment: seg_idx,
                            entry: i,
                        },
                    );
                }
                inner.segments.push(Arc::new(Segment {
                    id: SegmentId(id),
                    pack,
                    sealed: true,
                }));
            }
        }
        Ok(Self {
            dir: Some(dir),
            ..store
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    /// Stores `content` and returns its digest. Content already present
    /// appends zero bytes.
    pub fn put(&self, content: &[u8]) -> Result<ContentHash, CasError> {
        self.check_size(content)?;
        let hash = ContentHash::of(content);
        let mut inner = self.inner.write();
        if !inner.open {
            return Err(CasError::StoreClosed);
        }
        inner.stats.logical_bytes += content.len() as u64;
        let present = inner.index.contains_key(&hash);
        if present && self.config.dedup {
            return Ok(hash);
        }
        if !present {
            inner.live_logical += content.len() as u64;
        }
        self.append(&mut inner, hash, content)?;
        Ok(hash)
    }

    fn check_size(&self, content: &[u8]) -> Result<(), CasError> {
        if content.len() as u64 > self.config.max_object_size {
            return Err(CasError::ObjectTooLarge {
                len: content.len() as u64,
                limit: self.config.max_object_size,
            });
        }
        Ok(())
    }

    fn append(&self, inner: &mut StoreInner, hash: ContentHash, content: &[u8]) -> Result<(), CasError> {
        let needs_new = inner.segments.last().is_none_or(|s| s.sealed);
        if needs_new {
            self.start_segment(inner)?;
        }
        let seg_idx = inner.segments.len() - 1;
        let seg = Arc::make_mut(&mut inner.segments[seg_idx]);
        let before = seg.pack.as_bytes().len();
        let written = if self.config.dedup {
            seg.pack.push_hashed(hash, content)
        } else {
            seg.pack.push_forced(hash, content)
        };
        let entry = seg.pack.len() - 1;
        let id = seg.id;
        let over = seg.pack.as_bytes().len() as u64 >= self.config.segment_target_bytes;
        if over {
            seg.sealed = true;
        }
        if let Some(f) = inner.files.get_mut(&id) {
            f.write_all(&inner.segments[seg_idx].pack.as_bytes()[before..])?;
        }
        inner.stats.physical_bytes += written;
        inner.index.insert(
            hash,
            Location {
                segment: seg_idx,
                entry,
            },
        );
        Ok(())
    }

    fn start_segment(&self, inner: &mut StoreInner) -> Result<(), CasError> {
        let id = SegmentId(inner.segments.last().map_or(0, |s| s.id.0 + 1));
        let pack = Pack::empty();
        if let Some(dir) = &self.dir {
            let mut f = OpenOptions::new()
                .create_new(true)
                .append(true)
                .open(dir.join(format!("seg-{:08}.pack", id.0)))?;
            f.write_all(pack.as_bytes())?;
            inner.files.insert(id, f);
        }
        inner.stats.physical_bytes += PACK_HEADER_LEN;
        inner.segments.push(Arc::new(Segment {
            id,
            pack,
            sealed: false,
        }));
        Ok(())
    }

    pub fn get(&self, hash: &ContentHash) -> Result<Vec<u8>, CasError> {
        let inner = self.inner.read();
        if !inner.open {
            return Err(CasError::StoreClosed);
        }
        let loc = inner.index.get(hash).ok_or(CasError::NotFound(*hash))?;
        let pack = &inner.segments[loc.segment].pack;
        let bytes = pack.payload(&pack.entries()[loc.entry]);
        if self.config.verify_on_read && ContentHash::of(bytes) != *hash {
            return Err(CasError::CorruptEntry(*hash));
        }
        Ok(bytes.to_vec())
    }

    pub fn contains(&self, hash: &ContentHash) -> bool {
        self.inner.read().index.contains_key(hash)
    }

    pub fn stats(&self) -> WriteStats {
        self.inner.read().stats
    }

    /// Bytes of distinct content currently retrievable.
    pub fn live_logical_bytes(&self) -> u64 {
        self.inner.read().live_logical
    }

    /// Total bytes held in pack segments.
    pub fn pack_bytes(&self) -> u64 {
        self.inner
            .read()
            .segments
            .iter()
            .map(|s| s.pack.as_bytes().len() as u64)
            .sum()
    }

    pub fn close(&self) {
        let mut inner = self.inner.write();
        inner.open = false;
        inner.files.clear();
    }

    pub fn is_open(&self) -> bool {
        self.inner.read().open
    }

    /// Seals the active segment so the next append starts a new one.
    pub fn seal_segment(&self) {
        if let Some(s) = self.inner.write().segments.last_mut() {
            if !s.sealed {
                Arc::make_mut(s).sealed = true;
            }
        }
    }

    pub fn segment_ids(&self) -> Vec<SegmentId> {
        self.inner.read().segments.iter().map(|s| s.id).collect()
    }

    /// Segment holding the indexed (most recent) copy of `hash`.
    pub fn locate(&self, hash: &ContentHash) -> Option<SegmentId> {
        let inner = self.inner.read();
        inner.index.get(hash).map(|l| inner.segments[l.segment].id)
    }

    fn segment_pos(inner: &StoreInner, id: SegmentId) -> Option<usize> {
        inner.segments.binary_search_by_key(&id, |s| s.id).ok()
    }

    /// Probes a single segment's local index. Used by fragment chasing.
    pub fn get_in_segment(&self, id: SegmentId, hash: &ContentHash) -> Option<Vec<u8>> {
        let inner = self.inner.read();
        let seg = &inner.segments[Self::segment_pos(&inner, id)?];
        seg.pack.entry(hash).map(|e| seg.pack.payload(e).to_vec())
    }

    pub fn segment_contains(&self, id: SegmentId, hash: &ContentHash) -> bool {
        let inner = self.inner.read();
        Self::segment_pos(&inner, id).is_some_and(|i| inner.segments[i].pack.contains(hash))
    }

    /// Raw serialized bytes of one segment.
    pub fn segment_bytes(&self, id: SegmentId) -> Option<Vec<u8>> {
        let inner = self.inner.read();
        Self::segment_pos(&inner, id).map(|i| inner.segments[i].pack.as_bytes().to_vec())
    }

    /// Copies the given (already stored) entries into the open segment,
    /// starting one if needed, and repoints the index there. Entries already
    /// in that segment stay put. Returns the target segment and bytes written.
    pub fn rewrite(&self, hashes: &[ContentHash]) -> Result<(SegmentId, u64), CasError> {
        let mut guard = self.inner.write();
        let inner = &mut *guard;
        if !inner.open {
            return Err(CasError::StoreClosed);
        }
        let before = inner.stats.physical_bytes;
        if inner.segments.last().is_none_or(|s| s.sealed) {
            self.start_segment(inner)?;
        }
        let seg_idx = inner.segments.len() - 1;
        for h in hashes {
            let loc = *inner.index.get(h).ok_or(CasError::NotFound(*h))?;
            if loc.segment == seg_idx {
                continue;
            }
            let src = &inner.segments[loc.segment].pack;
            let payload = src.payload(&src.entries()[loc.entry]).to_vec();
            let seg = Arc::make_mut(&mut inner.segments[seg_idx]);
            let start = seg.pack.as_bytes().len();
            let written = seg.pack.push_hashed(*h, &payload);
            let entry = seg.pack.len() - 1;
            let id = seg.id;
            if let Some(f) = inner.files.get_mut(&id) {
                f.write_all(&inner.segments[seg_idx].pack.as_bytes()[start..])?;
            }
            inner.stats.physical_bytes += written;
            inner.index.insert(
                *h,
                Location {
                    segment: seg_idx,
                    entry,
                },
            );
        }
        // one rewrite never spans segments, so the target may overshoot
        let seg = &mut inner.segments[seg_idx];
        if seg.pack.as_bytes().len() as u64 >= self.config.segment_target_bytes {
            Arc::make_mut(seg).sealed = true;
        }
        Ok((seg.id, inner.stats.physical_bytes - before))
    }

    /// Independent copy of the store; sealed segments are shared until
    /// written. File-backed stores fork into memory.
    pub fn fork(&self) -> Self {
        let inner = self.inner.read();
        Self {
            config: self.config.clone(),
            dir: None,
            inner: RwLock::new(StoreInner {
                open: inner.open,
                segments: inner.segments.clone(),
                index: inner.index.clone(),
                stats: inner.stats,
                live_logical: inner.live_logical,
                files: HashMap::new(),
            }),
        }
    }

    /// Every retrievable hash, sorted.
    pub fn hashes(&self) -> Vec<ContentHash> {
        let mut v: Vec<_> = self.inner.read().index.keys().copied().collect();
        v.sort();
        v
    }

    /// Every retrievable `(hash, bytes)` pair, sorted by hash.
    pub fn contents(&self) -> Vec<(ContentHash, Vec<u8>)> {
        let inner = self.inner.read();
        let mut out: Vec<_> = inner
            .index
            .iter()
            .map(|(h, l)| {
                let p = &inner.segments[l.segment].pack;
                (*h, p.payload(&p.entries()[l.entry]).to_vec())
            })
            .collect();
        out.sort_by_key(|a| a.0);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> PackStore {
        PackStore::in_memory(StoreConfig::default())
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            ContentHash::of(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            ContentHash::of(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn duplicate_put_writes_nothing() {
        let s = store();
        let a = s.put(b"hello").unwrap();
        let after_first = s.stats();
        assert_eq!(after_first.physical_bytes, PACK_HEADER_LEN + ENTRY_OVERHEAD + 5);
        let b = s.put(b"hello").unwrap();
        assert_eq!(a, b);
        assert_eq!(s.stats().physical_bytes, after_first.physical_bytes);
        assert_eq!(s.stats().logical_bytes, 10);
    }

    #[test]
    fn empty_content_roundtrip() {
        let s = store();
        let h = s.put(b"").unwrap();
        assert_eq!(h, ContentHash::of(b""));
        assert_eq!(s.get(&h).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn get_unknown_is_not_found() {
        let s = store();
        let h = ContentHash::of(b"never");
        assert!(matches!(s.get(&h), Err(CasError::NotFound(x)) if x == h));
    }

    #[test]
    fn object_size_limit() {
        let s = PackStore::in_memory(StoreConfig {
            max_object_size: 4,
            ..StoreConfig::default()
        });
        assert!(s.put(b"1234").is_ok());
        assert!(matches!(
            s.put(b"12345"),
            Err(CasError::ObjectTooLarge { len: 5, limit: 4 })
        ));
    }

    #[test]
    fn closed_store_rejects() {
        let s = store();
        let h = s.put(b"x").unwrap();
        s.close();
        assert!(matches!(s.put(b"y"), Err(CasError::StoreClosed)));
        assert!(matches!(s.get(&h), Err(CasError::StoreClosed)));
    }

    #[test]
    fn write_amplification_cases() {
        let st = WriteStats {
            logical_bytes: 1000,
            physical_bytes: 1000,
        };
        assert_eq!(write_amplification(&st).unwrap(), 1.0);
        assert!(matches!(
            write_amplification(&WriteStats::default()),
            Err(CasError::NoWritesYet)
        ));
    }

    #[test]
    fn pack_layout_is_bit_exact() {
        let p = Pack::from_payloads([b"ab".as_slice()]);
        let b = p.as_bytes();
        assert_eq!(&b[..4], b"ENSH");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(b[8], 1);
        assert_eq!(&b[9..41], ContentHash::of(b"ab").digest());
        assert_eq!(&b[41..49], &2u64.to_le_bytes());
        assert_eq!(&b[49..], b"ab");
        assert_eq!(p.entries()[0].offset, 49);
    }

    #[test]
    fn pack_parse_detects_corruption() {
        let p = Pack::from_payloads([b"abc".as_slice(), b"def".as_slice()]);
        let mut bytes = p.as_bytes().to_vec();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        assert!(matches!(Pack::parse(&bytes, true), Err(CasError::CorruptEntry(_))));
        assert!(Pack::parse(&bytes, false).is_ok());
        assert!(matches!(
            Pack::parse(&bytes[..n - 1], false),
            Err(CasError::MalformedPack(_))
        ));
    }

    #[test]
    fn concat_identity_and_shared_entries() {
        let a = Pack::from_payloads([b"x".as_slice(), b"y".as_slice()]);
        let b = Pack::from_payloads([b"y".as_slice(), b"z".as_slice()]);
        assert_eq!(a.concat(&Pack::empty()).unwrap().digest(), a.digest());
        assert_eq!(Pack::empty().concat(&a).unwrap().digest(), a.digest());
        let ab = a.concat(&b).unwrap();
        assert_eq!(ab.len(), 3);
        let order: Vec<_> = ab.entries().iter().map(|e| ab.payload(e).to_vec()).collect();
        assert_eq!(order, vec![b"x".to_vec(), b"y".to_vec(), b"z".to_vec()]);
    }

    #[test]
    fn dedup_off_appends_duplicates() {
        let s = PackStore::in_memory(StoreConfig {
            dedup: false,
            ..StoreConfig::default()
        });
        let h = s.put(b"abc").unwrap();
        let before = s.stats().physical_bytes;
        assert_eq!(s.put(b"abc").unwrap(), h);
        assert_eq!(s.stats().physical_bytes - before, ENTRY_OVERHEAD + 3);
        assert_eq!(s.get(&h).unwrap(), b"abc");
        assert_eq!(s.live_logical_bytes(), 3);
    }

    #[test]
    fn rewrite_moves_index() {
        let s = store();
        let a = s.put(b"aaaa").unwrap();
        s.seal_segment();
        let b = s.put(b"bbbb").unwrap();
        assert_ne!(s.locate(&a), s.locate(&b));
        // b already sits in the open segment, so only a moves
        let (seg, bytes) = s.rewrite(&[a, b, a]).unwrap();
        assert_eq!(bytes, ENTRY_OVERHEAD + 4);
        assert_eq!(s.locate(&a), Some(seg));
        assert_eq!(s.locate(&b), Some(seg));
        assert_eq!(s.get(&a).unwrap(), b"aaaa");
        s.seal_segment();
        let (fresh, bytes) = s.rewrite(&[a]).unwrap();
        assert_ne!(fresh, seg);
        assert_eq!(bytes, PACK_HEADER_LEN + ENTRY_OVERHEAD + 4);
    }

    #[test]
    fn file_backed_reopen_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let h;
        let physical;
        {
            let s = PackStore::open(dir.path(), StoreConfig::default()).unwrap();
            h = s.put(b"persist me").unwrap();
            s.put(b"persist me").unwrap();
            s.put(b"second").unwrap();
            physical = s.stats().physical_bytes;
        }
        let on_disk: u64 = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().metadata().unwrap().len())
            .sum();
        assert_eq!(on_disk, physical);
        let s = PackStore::open(dir.path(), StoreConfig::default()).unwrap();
        assert_eq!(s.get(&h).unwrap(), b"persist me");
        drop(s);

        let path = dir.path().join("seg-00000000.pack");
        let mut bytes = fs::read(&path).unwrap();
        let at = (PACK_HEADER_LEN + ENTRY_OVERHEAD) as usize;
        bytes[at] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        let s = PackStore::open(dir.path(), StoreConfig::default()).unwrap();
        assert!(matches!(s.get(&h), Err(CasError::CorruptEntry(_))));
        let unchecked = PackStore::open(
            dir.path(),
            StoreConfig {
                verify_on_read: false,
                ..StoreConfig::default()
            },
        )
        .unwrap();
        assert!(unchecked.get(&h).is_ok());
    }
}
