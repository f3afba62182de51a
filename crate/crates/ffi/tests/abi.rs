use std::ffi::{CStr, CString};
use std::ptr;

use strata_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn store_put_get_dedup() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(strata_store_new_memory(0, &mut s), StrataStatus::Ok);
        let data = b"hello strata";
        let mut d1 = [0u8; 32];
        let mut d2 = [0u8; 32];
        assert_eq!(strata_store_put(s, data.as_ptr(), data.len(), d1.as_mut_ptr()), StrataStatus::Ok);
        let (mut logical, mut physical) = (0, 0);
        strata_store_stats(s, &mut logical, &mut physical);
        assert_eq!(strata_store_put(s, data.as_ptr(), data.len(), d2.as_mut_ptr()), StrataStatus::Ok);
        assert_eq!(d1, d2);
        let (mut l2, mut p2) = (0, 0);
        strata_store_stats(s, &mut l2, &mut p2);
        assert_eq!(p2, physical);
        assert_eq!(l2, logical + data.len() as u64);

        let mut len = 0;
        assert_eq!(strata_store_get(s, d1.as_ptr(), ptr::null_mut(), 0, &mut len), StrataStatus::BufferTooSmall);
        assert_eq!(len, data.len());
        let mut buf = vec![0u8; len];
        assert_eq!(strata_store_get(s, d1.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len), StrataStatus::Ok);
        assert_eq!(&buf, data);

        let mut present = true;
        let missing = [7u8; 32];
        assert_eq!(strata_store_contains(s, missing.as_ptr(), &mut present), StrataStatus::Ok);
        assert!(!present);
        assert_eq!(strata_store_get(s, missing.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len), StrataStatus::NotFound);
        strata_store_free(s);
    }
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        assert_eq!(strata_store_new_memory(0, ptr::null_mut()), StrataStatus::NullPointer);
        let mut d = [0u8; 32];
        assert_eq!(strata_store_put(ptr::null(), b"x".as_ptr(), 1, d.as_mut_ptr()), StrataStatus::NullPointer);
        assert_eq!(strata_cap_verify(ptr::null(), 1, 0, 1, 1), StrataStatus::NullPointer);
        strata_store_free(ptr::null_mut());
        let msg = CStr::from_ptr(strata_status_str(StrataStatus::NullPointer));
        assert_eq!(msg.to_str().unwrap(), "null pointer argument");
        assert!(!CStr::from_ptr(strata_version()).to_bytes().is_empty());
    }
}

#[test]
fn capabilities_narrow_and_revoke() {
    unsafe {
        let mut a = ptr::null_mut();
        strata_authority_new(&mut a);
        let (mut root, mut child, mut grand) = (0, 0, 0);
        assert_eq!(strata_cap_mint_root(a, 0, 100, 4, c("root").as_ptr(), &mut root), StrataStatus::Ok);
        assert_eq!(strata_cap_grant(a, root, 10, 20, 3, 0, c("w").as_ptr(), &mut child), StrataStatus::Ok);
        assert_eq!(strata_cap_grant(a, child, 12, 14, 1, 50, c("r").as_ptr(), &mut grand), StrataStatus::Ok);
        let mut wide = 0;
        assert_eq!(strata_cap_grant(a, child, 0, 30, 1, 0, c("x").as_ptr(), &mut wide), StrataStatus::Denied);
        assert_eq!(strata_cap_grant(a, child, 10, 20, 4, 0, c("x").as_ptr(), &mut wide), StrataStatus::Denied);
        assert_eq!(strata_cap_grant(a, 12345, 0, 1, 1, 0, c("x").as_ptr(), &mut wide), StrataStatus::NotFound);
        assert_eq!(strata_cap_grant(a, root, 0, 1, 9, 0, c("x").as_ptr(), &mut wide), StrataStatus::InvalidArgument);

        assert_eq!(strata_cap_verify(a, child, 10, 20, 3), StrataStatus::Ok);
        assert_eq!(strata_cap_verify(a, child, 10, 21, 3), StrataStatus::Denied);
        assert_eq!(strata_cap_verify(a, grand, 12, 14, 1), StrataStatus::Ok);

        let mut now = 0;
        strata_authority_advance(a, 60, &mut now);
        assert_eq!(strata_cap_verify(a, grand, 12, 14, 1), StrataStatus::Denied);

        let mut n = 0;
        assert_eq!(strata_cap_revoke(a, child, &mut n), StrataStatus::Ok);
        assert_eq!(n, 2);
        assert_eq!(strata_cap_verify(a, child, 10, 20, 1), StrataStatus::Denied);
        assert_eq!(strata_cap_verify(a, root, 0, 100, 4), StrataStatus::Ok);
        assert_eq!(strata_cap_revoke(a, child, ptr::null_mut()), StrataStatus::Ok);
        strata_authority_free(a);
    }
}

#[test]
fn leases_are_exclusive() {
    unsafe {
        let mut l = ptr::null_mut();
        strata_leases_new(&mut l);
        let (mut r1, mut r2, mut w) = (0, 0, 0);
        assert_eq!(strata_lease_acquire_read(l, 1, &mut r1), StrataStatus::Ok);
        assert_eq!(strata_lease_acquire_read(l, 1, &mut r2), StrataStatus::Ok);
        assert_eq!(strata_lease_acquire_write(l, 1, &mut w), StrataStatus::LeaseConflict);
        assert_eq!(strata_lease_acquire_write(l, 2, &mut w), StrataStatus::Ok);
        assert_eq!(strata_lease_acquire_read(l, 2, &mut r1), StrataStatus::LeaseConflict);
        assert_eq!(strata_lease_release(l, r2), StrataStatus::Ok);
        assert_eq!(strata_lease_release(l, r2), StrataStatus::NotFound);
        let mut r3 = 0;
        assert_eq!(strata_lease_acquire_read(l, 1, &mut r3), StrataStatus::Ok);
        strata_leases_free(l);
    }
}

#[test]
fn graph_commit_traverse_compact() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(strata_graph_new(256, &mut g), StrataStatus::Ok);
        let label = c("person");
        let knows = c("knows");
        let mut digest = [0u8; 32];
        for tick in 1..=10u64 {
            let id = tick - 1;
            let payload = [id as u8; 40];
            assert_eq!(
                strata_graph_add_node(g, id, label.as_ptr(), payload.as_ptr(), payload.len()),
                StrataStatus::Ok
            );
            if id > 0 {
                strata_graph_add_edge(g, id - 1, id, knows.as_ptr());
            }
            assert_eq!(strata_graph_commit(g, tick, digest.as_mut_ptr()), StrataStatus::Ok);
        }
        let mut count = 0;
        strata_graph_node_count(g, &mut count);
        assert_eq!(count, 10);

        let mut len = 0;
        assert_eq!(strata_graph_khop(g, 2, 3, ptr::null_mut(), 0, &mut len), StrataStatus::BufferTooSmall);
        let mut ids = vec![0u64; len];
        assert_eq!(strata_graph_khop(g, 2, 3, ids.as_mut_ptr(), ids.len(), &mut len), StrataStatus::Ok);
        assert_eq!(ids, vec![2, 3, 4, 5]);

        // a failed batch is dropped and leaves the head in place
        strata_graph_add_edge(g, 0, 99, knows.as_ptr());
        assert_eq!(strata_graph_commit(g, 11, digest.as_mut_ptr()), StrataStatus::NotFound);
        assert_eq!(strata_graph_commit(g, 11, digest.as_mut_ptr()), StrataStatus::Ok);
        assert_eq!(strata_graph_commit(g, 11, digest.as_mut_ptr()), StrataStatus::InvalidArgument);

        strata_graph_remove_edge(g, 4, 5, knows.as_ptr());
        strata_graph_commit(g, 12, digest.as_mut_ptr());
        assert_eq!(strata_graph_khop(g, 2, 3, ids.as_mut_ptr(), ids.len(), &mut len), StrataStatus::Ok);
        assert_eq!(&ids[..len], &[2, 3, 4]);

        let mut frags = 0;
        assert_eq!(strata_graph_compact(g, 1, &mut frags), StrataStatus::Ok);
        assert_eq!(frags, 1);
        assert_eq!(strata_graph_compact(g, 0, ptr::null_mut()), StrataStatus::InvalidArgument);
        strata_graph_remove_node(g, 9);
        strata_graph_commit(g, 13, digest.as_mut_ptr());
        strata_graph_node_count(g, &mut count);
        assert_eq!(count, 9);
        strata_graph_free(g);
    }
}

#[test]
fn handles_are_shared_across_threads() {
    struct Send(*mut StrataStore);
    unsafe impl std::marker::Send for Send {}
    unsafe impl Sync for Send {}
    let mut s = ptr::null_mut();
    unsafe { strata_store_new_memory(0, &mut s) };
    let h = Send(s);
    std::thread::scope(|scope| {
        for t in 0..4u8 {
            let h = &h;
            scope.spawn(move || {
                for i in 0..200u8 {
                    let data = [i, t % 2];
                    let mut d = [0u8; 32];
                    assert_eq!(unsafe { strata_store_put(h.0, data.as_ptr(), 2, d.as_mut_ptr()) }, StrataStatus::Ok);
                }
            });
        }
    });
    let (mut logical, mut physical) = (0, 0);
    unsafe {
        strata_store_stats(s, &mut logical, &mut physical);
        strata_store_free(s);
    }
    assert_eq!(logical, 4 * 200 * 2);
    assert!(physical < logical * 40);
}
