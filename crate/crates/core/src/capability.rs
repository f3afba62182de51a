//! Bounded capability lattice: scoped regions, ordered rights, TTL on a
//! logical clock, eager cascading revocation and an append-only audit log.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use parking_lot::{Mutex, RwLock};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A set of node ids stored as sorted, disjoint, non-adjacent half-open
/// intervals.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Region {
    spans: Vec<(u64, u64)>,
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Region{:?}", self.spans)
    }
}

impl Region {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self::interval(0, u64::MAX)
    }

    /// `[lo, hi)`; empty when `lo >= hi`.
    pub fn interval(lo: u64, hi: u64) -> Self {
        Self::from_spans([(lo, hi)])
    }

    pub fn point(id: u64) -> Self {
        Self::interval(id, id.saturating_add(1))
    }

    pub fn from_points<I: IntoIterator<Item = u64>>(ids: I) -> Self {
        Self::from_spans(ids.into_iter().map(|i| (i, i.saturating_add(1))))
    }

    pub fn from_spans<I: IntoIterator<Item = (u64, u64)>>(spans: I) -> Self {
        let mut v: Vec<_> = spans.into_iter().filter(|(lo, hi)| lo < hi).collect();
        v.sort_unstable();
        let mut out: Vec<(u64, u64)> = Vec::with_capacity(v.len());
        for (lo, hi) in v {
            match out.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        Self { spans: out }
    }

    pub fn spans(&self) -> &[(u64, u64)] {
        &self.spans
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        let i = self.spans.partition_point(|&(lo, _)| lo <= id);
        i > 0 && id < self.spans[i - 1].1
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.spans.iter().all(|&(lo, hi)| {
            let i = other.spans.partition_point(|&(olo, _)| olo <= lo);
            i > 0 && hi <= other.spans[i - 1].1
        })
    }

    pub fn intersect(&self, other: &Region) -> Region {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.spans.len() && j < other.spans.len() {
            let (a0, a1) = self.spans[i];
            let (b0, b1) = other.spans[j];
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if lo < hi {
                out.push((lo, hi));
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Region { spans: out }
    }

    pub fn union(&self, other: &Region) -> Region {
        Self::from_spans(self.spans.iter().chain(other.spans.iter()).copied())
    }
}

/// Rights form a five-level chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Rights {
    None = 0,
    Read = 1,
    Traverse = 2,
    Write = 3,
    Admin = 4,
}

impl Rights {
    pub const ALL: [Rights; 5] = [
        Rights::None,
        Rights::Read,
        Rights::Traverse,
        Rights::Write,
        Rights::Admin,
    ];

    pub fn from_u8(v: u8) -> Option<Rights> {
        Self::ALL.get(v as usize).copied()
    }
}

/// Expiry tick; `Never` sorts above every finite tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expiry {
    At(u64),
    Never,
}

impl Expiry {
    fn is_past(&self, now: u64) -> bool {
        matches!(self, Expiry::At(t) if now >= *t)
    }

    fn after(now: u64, ttl: Option<u64>) -> Expiry {
        match ttl {
            Some(t) => Expiry::At(now.saturating_add(t)),
            None => Expiry::Never,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CapId(pub u64);

impl fmt::Display for CapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Capability {
    pub id: CapId,
    pub region: Region,
    pub rights: Rights,
    /// Ancestor ids from the root down to the direct parent.
    pub proof: Vec<CapId>,
    pub expiry: Expiry,
    pub subject: String,
}

impl Capability {
    pub fn parent(&self) -> Option<CapId> {
        self.proof.last().copied()
    }
}

// Ids are a digest of the grant parameters, so the same grant from the same
// parent always yields the same id regardless of when it is issued.
pub fn derive_id(parent: Option<CapId>, region: &Region, rights: Rights, expiry: Expiry, subject: &str) -> CapId {
    let mut h = Sha256::new();
    h.update(parent.map_or(0, |p| p.0).to_le_bytes());
    h.update([parent.is_some() as u8]);
    for (lo, hi) in region.spans() {
        h.update(lo.to_le_bytes());
        h.update(hi.to_le_bytes());
    }
    h.update([rights as u8]);
    match expiry {
        Expiry::At(t) => {
            h.update([0]);
            h.update(t.to_le_bytes());
        }
        Expiry::Never => h.update([1]),
    }
    h.update(subject.as_bytes());
    let d = h.finalize();
    CapId(u64::from_le_bytes(d[..8].try_into().unwrap()))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CapError {
    #[error("grant would widen region or raise rights above {parent}")]
    IllegalEscalation { parent: CapId },
    #[error("parent capability {0} is revoked")]
    ParentRevoked(CapId),
    #[error("parent capability {0} is expired")]
    ParentExpired(CapId),
    #[error("unknown capability {0}")]
    UnknownCapability(CapId),
    #[error("capability {0} is revoked")]
    Revoked(CapId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    Unknown,
    /// Token fields disagree with the authority's record.
    Tampered,
    Revoked,
    Expired,
    BrokenProof,
    OutOfRegion,
    InsufficientRights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AuditEvent {
    Grant,
    Revoke,
    Downgrade,
    VerifyFail,
}

impl AuditEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditEvent::Grant => "grant",
            AuditEvent::Revoke => "revoke",
            AuditEvent::Downgrade => "downgrade",
            AuditEvent::VerifyFail => "verify-fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub tick: u64,
    pub event: AuditEvent,
    pub cap: CapId,
    pub subject: String,
}

#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub const CSV_HEADER: &'static str = "tick,event,cap_id,subject";

    fn append(&mut self, rec: AuditRecord) {
        debug_assert!(self.records.last().is_none_or(|l| l.tick <= rec.tick));
        self.records.push(rec);
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Live capability ids reconstructed from grant/revoke events alone.
    pub fn replay_live(&self) -> BTreeSet<CapId> {
        let mut live = BTreeSet::new();
        for r in &self.records {
            match r.event {
                AuditEvent::Grant => {
                    live.insert(r.cap);
                }
                AuditEvent::Revoke => {
                    live.remove(&r.cap);
                }
                AuditEvent::Downgrade | AuditEvent::VerifyFail => {}
            }
        }
        live
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            // subjects are caller-chosen; keep the row shape intact
            let subject = r.subject.replace([',', '\n'], "_");
            s.push_str(&format!("{},{},{},{}\n", r.tick, r.event.as_str(), r.cap, subject));
        }
        s
    }
}

#[derive(Debug, Clone)]
struct Entry {
    cap: Capability,
    revoked_at: Option<u64>,
    children: Vec<CapId>,
}

#[derive(Debug, Clone, Default)]
struct Table {
    now: u64,
    caps: BTreeMap<CapId, Entry>,
}

/// Result of a revoke call. `revoked` is empty when the capability was
/// already revoked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Revocation {
    pub target: CapId,
    pub tick: u64,
    pub revoked: Vec<CapId>,
}

/// Observable record of one capability, used for state comparison.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CapRecord {
    pub id: CapId,
    pub spans: Vec<(u64, u64)>,
    pub rights: Rights,
    pub expiry: Expiry,
    pub live: bool,
}

/// The single authority over the capability table.
///
/// Mutations take the table write lock for their whole duration, so a
/// concurrent `verify` never observes half of a revocation cascade.
#[derive(Debug, Default)]
pub struct CapabilityAuthority {
    table: RwLock<Table>,
    audit: Mutex<AuditLog>,
}

impl CapabilityAuthority {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.table.read().now
    }

    pub fn advance(&self, ticks: u64) -> u64 {
        let mut t = self.table.write();
        t.now = t.now.saturating_add(ticks);
        t.now
    }

    /// Creates a root capability with no proof chain.
    pub fn mint_root(&self, region: Region, rights: Rights, expiry: Expiry, subject: &str) -> Capability {
        let mut t = self.table.write();
        let id = derive_id(None, &region, rights, expiry, subject);
        if let Some(e) = t.caps.get(&id) {
            return e.cap.clone();
        }
        let cap = Capability {
            id,
            region,
            rights,
            proof: Vec::new(),
            expiry,
            subject: subject.to_string(),
        };
        t.caps.insert(
            id,
            Entry {
                cap: cap.clone(),
                revoked_at: None,
                children: Vec::new(),
            },
        );
        self.log(t.now, AuditEvent::Grant, id, subject);
        cap
    }

    fn log(&self, tick: u64, event: AuditEvent, cap: CapId, subject: &str) {
        self.audit.lock().append(AuditRecord {
            tick,
            event,
            cap,
            subject: subject.to_string(),
        });
    }

    /// Delegates a narrower capability from `parent`.
    pub fn grant(
        &self,
        parent: &Capability,
        region: &Region,
        rights: Rights,
        ttl: Option<u64>,
        subject: &str,
    ) -> Result<Capability, CapError> {
        let mut t = self.table.write();
        let now = t.now;
        let pe = t
            .caps
            .get(&parent.id)
            .ok_or(CapError::UnknownCapability(parent.id))?;
        if pe.revoked_at.is_some() {
            return Err(CapError::ParentRevoked(parent.id));
        }
        if pe.cap.expiry.is_past(now) {
            return Err(CapError::ParentExpired(parent.id));
        }
        if !region.is_subset(&pe.cap.region) || rights > pe.cap.rights {
            return Err(CapError::IllegalEscalation { parent: parent.id });
        }
        let region = region.intersect(&pe.cap.region);
        let rights = rights.min(pe.cap.rights);
        let expiry = Expiry::after(now, ttl).min(pe.cap.expiry);
        let id = derive_id(Some(parent.id), &region, rights, expiry, subject);
        if let Some(existing) = t.caps.get(&id) {
            return match existing.revoked_at {
                Some(_) => Err(CapError::Revoked(id)),
                None => Ok(existing.cap.clone()),
            };
        }
        let mut proof = pe.cap.proof.clone();
        proof.push(parent.id);
        let cap = Capability {
            id,
            region,
            rights,
            proof,
            expiry,
            subject: subject.to_string(),
        };
        t.caps.get_mut(&parent.id).unwrap().children.push(id);
        t.caps.insert(
            id,
            Entry {
                cap: cap.clone(),
                revoked_at: None,
                children: Vec::new(),
            },
        );
        self.log(now, AuditEvent::Grant, id, subject);
        Ok(cap)
    }

    /// Revokes `cap` and, eagerly, every descendant. Idempotent.
    pub fn revoke(&self, cap: CapId) -> Result<Revocation, CapError> {
        let mut t = self.table.write();
        let now = t.now;
        if !t.caps.contains_key(&cap) {
            return Err(CapError::UnknownCapability(cap));
        }
        let mut revoked = Vec::new();
        let mut queue = VecDeque::from([cap]);
        while let Some(id) = queue.pop_front() {
            let e = t.caps.get_mut(&id).unwrap();
            if e.revoked_at.is_none() {
                e.revoked_at = Some(now);
                revoked.push(id);
                let subject = e.cap.subject.clone();
                self.log(now, AuditEvent::Revoke, id, &subject);
            }
            queue.extend(e.children.iter().copied());
        }
        Ok(Revocation {
            target: cap,
            tick: now,
            revoked,
        })
    }

    /// Lowers the rights of `cap`. Descendants holding more than the new
    /// level are clamped down with it.
    pub fn downgrade(&self, cap: &Capability, new_rights: Rights) -> Result<Capability, CapError> {
        let mut t = self.table.write();
        let now = t.now;
        let e = t.caps.get(&cap.id).ok_or(CapError::UnknownCapability(cap.id))?;
        if e.revoked_at.is_some() {
            return Err(CapError::Revoked(cap.id));
        }
        if new_rights > e.cap.rights {
            return Err(CapError::IllegalEscalation { parent: cap.id });
        }
        let mut queue = VecDeque::from([cap.id]);
        while let Some(id) = queue.pop_front() {
            let e = t.caps.get_mut(&id).unwrap();
            if e.cap.rights > new_rights || id == cap.id {
                e.cap.rights = e.cap.rights.min(new_rights);
                let subject = e.cap.subject.clone();
                self.log(now, AuditEvent::Downgrade, id, &subject);
            }
            queue.extend(e.children.iter().copied());
        }
        Ok(t.caps[&cap.id].cap.clone())
    }

    /// Checks that `cap` authorizes `rights` over `region` at tick `now`.
    pub fn verify(&self, cap: &Capability, region: &Region, rights: Rights, now: u64) -> Verdict {
        let t = self.table.read();
        let verdict = Self::check(&t, cap, region, rights, now);
        if let Verdict::Reject(_) = verdict {
            self.log(t.now, AuditEvent::VerifyFail, cap.id, &cap.subject);
        }
        verdict
    }

    /// Single-node form of [`verify`](Self::verify) that skips building a region.
    pub fn verify_node(&self, cap: &Capability, node: u64, rights: Rights, now: u64) -> Verdict {
        self.verify(cap, &Region::point(node), rights, now)
    }

    fn check(t: &Table, cap: &Capability, region: &Region, rights: Rights, now: u64) -> Verdict {
        use RejectReason::*;
        let Some(e) = t.caps.get(&cap.id) else {
            return Verdict::Reject(Unknown);
        };
        let rec = &e.cap;
        if rec.region != cap.region || rec.expiry != cap.expiry || rec.proof != cap.proof || cap.rights != rec.rights {
            return Verdict::Reject(Tampered);
        }
        if e.revoked_at.is_some() {
            return Verdict::Reject(Revoked);
        }
        if rec.expiry.is_past(now) {
            return Verdict::Reject(Expired);
        }
        let mut child = rec;
        for pid in rec.proof.iter().rev() {
            let Some(pe) = t.caps.get(pid) else {
                return Verdict::Reject(BrokenProof);
            };
            let p = &pe.cap;
            if pe.revoked_at.is_some()
                || p.expiry.is_past(now)
                || child.rights > p.rights
                || !child.region.is_subset(&p.region)
                || child.expiry > p.expiry
                || !pe.children.contains(&child.id)
            {
                return Verdict::Reject(BrokenProof);
            }
            child = p;
        }
        if !region.is_subset(&rec.region) {
            return Verdict::Reject(OutOfRegion);
        }
        if rights > rec.rights {
            return Verdict::Reject(InsufficientRights);
        }
        Verdict::Accept
    }

    /// Current authoritative record for `id`.
    pub fn get(&self, id: CapId) -> Option<Capability> {
        self.table.read().caps.get(&id).map(|e| e.cap.clone())
    }

    pub fn is_revoked(&self, id: CapId) -> Option<bool> {
        self.table.read().caps.get(&id).map(|e| e.revoked_at.is_some())
    }

    pub fn live_ids(&self) -> BTreeSet<CapId> {
        self.table
            .read()
            .caps
            .iter()
            .filter(|(_, e)| e.revoked_at.is_none())
            .map(|(id, _)| *id)
            .collect()
    }

    /// Every capability ever created, revoked ones included.
    pub fn all(&self) -> Vec<Capability> {
        self.table.read().caps.values().map(|e| e.cap.clone()).collect()
    }

    /// All transitive descendants of `id`.
    pub fn descendants(&self, id: CapId) -> Vec<CapId> {
        let t = self.table.read();
        let mut out = Vec::new();
        let mut queue: VecDeque<CapId> = t.caps.get(&id).map(|e| e.children.iter().copied().collect()).unwrap_or_default();
        while let Some(c) = queue.pop_front() {
            out.push(c);
            queue.extend(t.caps[&c].children.iter().copied());
        }
        out
    }

    /// Capabilities whose rights, region or expiry exceed any ancestor's.
    pub fn anti_escalation_violations(&self) -> Vec<CapId> {
        let t = self.table.read();
        t.caps
            .values()
            .filter(|e| {
                e.cap.proof.iter().any(|pid| match t.caps.get(pid) {
                    Some(p) => {
                        e.cap.rights > p.cap.rights
                            || !e.cap.region.is_subset(&p.cap.region)
                            || e.cap.expiry > p.cap.expiry
                    }
                    None => true,
                })
            })
            .map(|e| e.cap.id)
            .collect()
    }

    pub fn audit_log(&self) -> AuditLog {
        self.audit.lock().clone()
    }

    /// Sorted observable records of every capability.
    pub fn records(&self) -> Vec<CapRecord> {
        self.table
            .read()
            .caps
            .values()
            .map(|e| CapRecord {
                id: e.cap.id,
                spans: e.cap.region.spans().to_vec(),
                rights: e.cap.rights,
                expiry: e.cap.expiry,
                live: e.revoked_at.is_none(),
            })
            .collect()
    }

    pub fn fork(&self) -> Self {
        Self {
            table: RwLock::new(self.table.read().clone()),
            audit: Mutex::new(self.audit.lock().clone()),
        }
    }

    /// Like [`fork`](Self::fork) but starts the copy with an empty audit log.
    pub fn fork_without_audit(&self) -> Self {
        Self {
            table: RwLock::new(self.table.read().clone()),
            audit: Mutex::new(AuditLog::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn root(auth: &CapabilityAuthority) -> Capability {
        auth.mint_root(Region::all(), Rights::Admin, Expiry::Never, "root")
    }

    #[test]
    fn region_algebra() {
        let a = Region::from_spans([(0, 10), (20, 30)]);
        let b = Region::interval(5, 25);
        assert_eq!(a.intersect(&b), Region::from_spans([(5, 10), (20, 25)]));
        assert_eq!(a.union(&b), Region::interval(0, 30));
        assert!(Region::interval(2, 8).is_subset(&a));
        assert!(!Region::interval(8, 22).is_subset(&a));
        assert!(Region::empty().is_subset(&Region::empty()));
        assert!(a.contains(29) && !a.contains(30) && !a.contains(15));
        // adjacent spans merge
        assert_eq!(Region::from_spans([(0, 5), (5, 9)]).spans(), &[(0, 9)]);
    }

    #[test]
    fn grant_within_parent() {
        let auth = CapabilityAuthority::new();
        let r = root(&auth);
        let sub = Region::interval(10, 20);
        let c = auth.grant(&r, &sub, Rights::Read, Some(100), "alice").unwrap();
        assert_eq!(c.rights, Rights::Read);
        assert_eq!(c.region, sub);
        assert_eq!(c.expiry, Expiry::At(100));
        assert_eq!(c.proof, vec![r.id]);
    }

    #[test]
    fn grant_escalation_rejected() {
        let auth = CapabilityAuthority::new();
        let r = root(&auth);
        let c = auth.grant(&r, &Region::interval(10, 20), Rights::Read, None, "a").unwrap();
        assert_eq!(
            auth.grant(&c, &Region::interval(0, 30), Rights::Read, None, "b"),
            Err(CapError::IllegalEscalation { parent: c.id })
        );
        assert_eq!(
            auth.grant(&c, &Region::interval(10, 20), Rights::Write, None, "b"),
            Err(CapError::IllegalEscalation { parent: c.id })
        );
    }

    #[test]
    fn rights_chain_triples() {
        // every (root, a, b) triple over the lattice: grants succeed exactly
        // when monotone, and the resulting chain is ordered
        for r0 in Rights::ALL {
            for r1 in Rights::ALL {
                for r2 in Rights::ALL {
                    let auth = CapabilityAuthority::new();
                    let root = auth.mint_root(Region::all(), r0, Expiry::Never, "root");
                    let a = auth.grant(&root, &Region::all(), r1, None, "a");
                    if r1 > r0 {
                        assert!(a.is_err());
                        continue;
                    }
                    let a = a.unwrap();
                    match auth.grant(&a, &Region::all(), r2, None, "b") {
                        Ok(b) => {
                            assert!(r2 <= r1);
                            assert!(b.rights <= a.rights && a.rights <= root.rights);
                        }
                        Err(_) => assert!(r2 > r1),
                    }
                }
            }
        }
    }

    #[test]
    fn revoke_cascades_and_is_idempotent() {
        let auth = CapabilityAuthority::new();
        let r = root(&auth);
        let a = auth.grant(&r, &Region::interval(0, 100), Rights::Write, None, "a").unwrap();
        let b = auth.grant(&a, &Region::interval(0, 50), Rights::Read, None, "b").unwrap();
        let rev = auth.revoke(a.id).unwrap();
        assert_eq!(rev.revoked, vec![a.id, b.id]);
        let reg = Region::interval(0, 1);
        assert_eq!(auth.verify(&b, &reg, Rights::Read, 0), Verdict::Reject(RejectReason::Revoked));
        let log_len = auth.audit_log().len();
        let live = auth.live_ids();
        let again = auth.revoke(a.id).unwrap();
        assert!(again.revoked.is_empty());
        assert_eq!(auth.audit_log().len(), log_len);
        assert_eq!(auth.live_ids(), live);
        assert_eq!(auth.revoke(CapId(1)), Err(CapError::UnknownCapability(CapId(1))));
    }

    #[test]
    fn grant_revoke_order_matters() {
        let auth1 = CapabilityAuthority::new();
        let r1 = root(&auth1);
        let p1 = auth1.grant(&r1, &Region::all(), Rights::Write, None, "p").unwrap();
        let auth2 = auth1.fork();

        // grant then revoke: the child exists, and is revoked
        let c = auth1.grant(&p1, &Region::interval(0, 10), Rights::Read, None, "c").unwrap();
        auth1.revoke(p1.id).unwrap();
        // revoke then grant: the grant itself fails
        auth2.revoke(p1.id).unwrap();
        let g = auth2.grant(&p1, &Region::interval(0, 10), Rights::Read, None, "c");
        assert_eq!(g, Err(CapError::ParentRevoked(p1.id)));
        assert_ne!(auth1.records(), auth2.records());
        assert!(!auth1.verify(&c, &Region::point(1), Rights::Read, 0).is_accept());
    }

    #[test]
    fn downgrade_is_monotone() {
        let auth = CapabilityAuthority::new();
        let r = root(&auth);
        let w = auth.grant(&r, &Region::all(), Rights::Write, None, "w").unwrap();
        let child = auth.grant(&w, &Region::all(), Rights::Write, None, "wc").unwrap();
        let d = auth.downgrade(&w, Rights::Read).unwrap();
        assert_eq!(d.rights, Rights::Read);
        assert_eq!(auth.get(child.id).unwrap().rights, Rights::Read);
        assert_eq!(
            auth.downgrade(&d, Rights::Write),
            Err(CapError::IllegalEscalation { parent: w.id })
        );
        assert!(auth.anti_escalation_violations().is_empty());
        // the stale token still claiming write is refused
        assert_eq!(
            auth.verify(&w, &Region::point(0), Rights::Write, 0),
            Verdict::Reject(RejectReason::Tampered)
        );
    }

    #[test]
    fn downgrade_sequences_fold_to_min() {
        // all length-3 sequences over the lattice, starting from admin
        for s in 0..125u32 {
            let seq = [s % 5, (s / 5) % 5, s / 25].map(|i| Rights::ALL[i as usize]);
            let auth = CapabilityAuthority::new();
            let mut cap = root(&auth);
            let mut expected = Rights::Admin;
            for r in seq {
                match auth.downgrade(&cap, r) {
                    Ok(c) => {
                        assert!(r <= expected);
                        expected = r;
                        cap = c;
                    }
                    Err(_) => assert!(r > expected),
                }
            }
            let applied_min = seq
                .iter()
                .scan(Rights::Admin, |cur, &r| {
                    if r <= *cur {
                        *cur = r;
                    }
                    Some(*cur)
                })
                .last()
                .unwrap();
            assert_eq!(cap.rights, applied_min);
        }
    }

    #[test]
    fn verify_paths() {
        let auth = CapabilityAuthority::new();
        let r = root(&auth);
        let c = auth.grant(&r, &Region::interval(0, 10), Rights::Traverse, Some(5), "c").unwrap();
        assert!(auth.verify(&c, &Region::interval(2, 4), Rights::Read, 0).is_accept());
        assert_eq!(auth.verify(&c, &Region::point(3), Rights::Read, 5), Verdict::Reject(RejectReason::Expired));
        assert_eq!(
            auth.verify(&c, &Region::point(30), Rights::Read, 0),
            Verdict::Reject(RejectReason::OutOfRegion)
        );
        assert_eq!(
            auth.verify(&c, &Region::point(3), Rights::Write, 0),
            Verdict::Reject(RejectReason::InsufficientRights)
        );
        let mut forged = c.clone();
        forged.region = Region::all();
        assert_eq!(auth.verify(&forged, &Region::point(3), Rights::Read, 0), Verdict::Reject(RejectReason::Tampered));
        let fails = auth
            .audit_log()
            .records()
            .iter()
            .filter(|r| r.event == AuditEvent::VerifyFail)
            .count();
        assert_eq!(fails, 4);
    }

    #[test]
    fn child_expiry_bounded_by_parent() {
        let auth = CapabilityAuthority::new();
        let r = root(&auth);
        let a = auth.grant(&r, &Region::all(), Rights::Write, Some(10), "a").unwrap();
        let b = auth.grant(&a, &Region::all(), Rights::Read, Some(1000), "b").unwrap();
        assert_eq!(b.expiry, Expiry::At(10));
        auth.advance(10);
        assert_eq!(
            auth.grant(&a, &Region::all(), Rights::Read, None, "c"),
            Err(CapError::ParentExpired(a.id))
        );
    }

    #[test]
    fn audit_replay_matches_live_set() {
        let auth = CapabilityAuthority::new();
        let r = root(&auth);
        let a = auth.grant(&r, &Region::interval(0, 100), Rights::Write, None, "a").unwrap();
        let b = auth.grant(&a, &Region::interval(0, 10), Rights::Read, None, "b").unwrap();
        auth.grant(&r, &Region::interval(100, 200), Rights::Read, None, "c").unwrap();
        auth.advance(3);
        auth.revoke(a.id).unwrap();
        auth.verify(&b, &Region::point(1), Rights::Read, 3);
        let log = auth.audit_log();
        assert_eq!(log.replay_live(), auth.live_ids());
        let ticks: Vec<_> = log.records().iter().map(|r| r.tick).collect();
        assert!(ticks.windows(2).all(|w| w[0] <= w[1]));
        assert!(log.to_csv().starts_with("tick,event,cap_id,subject\n"));
    }
}
