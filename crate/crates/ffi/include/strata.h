#ifndef STRATA_H
#define STRATA_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum StrataStatus {
  STRATA_STATUS_OK = 0,
  STRATA_STATUS_NULL_POINTER = 1,
  STRATA_STATUS_INVALID_ARGUMENT = 2,
  STRATA_STATUS_NOT_FOUND = 3,
  STRATA_STATUS_BUFFER_TOO_SMALL = 4,
  /**
   * A capability check or grant was refused.
   */
  STRATA_STATUS_DENIED = 5,
  /**
   * The requested lease conflicts with a live one.
   */
  STRATA_STATUS_LEASE_CONFLICT = 6,
  STRATA_STATUS_CLOSED = 7,
  STRATA_STATUS_CORRUPT = 8,
  STRATA_STATUS_IO = 9,
  /**
   * A Rust panic was caught at the boundary.
   */
  STRATA_STATUS_INTERNAL = 10,
} StrataStatus;

/**
 * Capability authority. Capabilities are named by their 64-bit ids; rights
 * are 0 none, 1 read, 2 traverse, 3 write, 4 admin. Regions are half-open
 * node-id intervals `[lo, hi)`.
 */
typedef struct StrataAuthority StrataAuthority;

/**
 * Property graph whose mutations are staged and then committed as one
 * snapshot. Reads see the last committed snapshot.
 */
typedef struct StrataGraph StrataGraph;

/**
 * Lease table. Leases are named by 64-bit ids.
 */
typedef struct StrataLeases StrataLeases;

/**
 * Content-addressed pack store.
 */
typedef struct StrataStore StrataStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static NUL-terminated description of a status code.
 */
const char *strata_status_str(enum StrataStatus status);

const char *strata_version(void);

/**
 * In-memory store. `segment_bytes` of 0 keeps the default segment size.
 *
 * # Safety
 * Out pointers must be valid for writes.
 */
enum StrataStatus strata_store_new_memory(uint64_t segment_bytes, struct StrataStore **out_store);

/**
 * Opens or creates a store backed by pack files in directory `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; Out pointers must be valid for writes.
 */
enum StrataStatus strata_store_open(const char *path, struct StrataStore **out_store);

/**
 * # Safety
 * `store` must come from a store constructor and not be used afterwards.
 */
void strata_store_free(struct StrataStore *store);

/**
 * Stores `len` bytes and writes their 32-byte digest to `out_digest`.
 * Storing content already present writes nothing.
 *
 * # Safety
 * `data` must be readable for `len` bytes, `out_digest` writable for 32.
 */
enum StrataStatus strata_store_put(const struct StrataStore *store,
                                   const uint8_t *data,
                                   size_t len,
                                   uint8_t *out_digest);

/**
 * Reads the content with digest `digest` into `buf`.
 *
 * # Safety
 * `digest` must be readable for 32 bytes, `buf` writable for `cap` bytes.
 */
enum StrataStatus strata_store_get(const struct StrataStore *store,
                                   const uint8_t *digest_ptr,
                                   uint8_t *buf,
                                   size_t cap,
                                   size_t *out_len);

/**
 * # Safety
 * `digest` must be readable for 32 bytes.
 */
enum StrataStatus strata_store_contains(const struct StrataStore *store,
                                        const uint8_t *digest_ptr,
                                        bool *out_present);

/**
 * Bytes submitted through put and bytes physically appended.
 *
 * # Safety
 * Out pointers must be valid for writes.
 */
enum StrataStatus strata_store_stats(const struct StrataStore *store,
                                     uint64_t *out_logical,
                                     uint64_t *out_physical);

/**
 * # Safety
 * Out pointers must be valid for writes.
 */
enum StrataStatus strata_authority_new(struct StrataAuthority **out_auth);

/**
 * # Safety
 * `auth` must come from [`strata_authority_new`] and not be used afterwards.
 */
void strata_authority_free(struct StrataAuthority *auth);

/**
 * Advances the authority clock and returns the new tick.
 *
 * # Safety
 * `auth` must be a live handle.
 */
enum StrataStatus strata_authority_advance(const struct StrataAuthority *auth,
                                           uint64_t ticks,
                                           uint64_t *out_now);

/**
 * Mints a root capability that never expires.
 *
 * # Safety
 * `subject` must be a NUL-terminated string.
 */
enum StrataStatus strata_cap_mint_root(const struct StrataAuthority *auth,
                                       uint64_t lo,
                                       uint64_t hi,
                                       uint8_t rights_level,
                                       const char *subject,
                                       uint64_t *out_id);

/**
 * Delegates `[lo, hi)` with `rights_level` from `parent`. A `ttl` of 0
 * inherits the parent's expiry. Widening the parent fails with
 * `STRATA_STATUS_DENIED`.
 *
 * # Safety
 * `subject` must be a NUL-terminated string.
 */
enum StrataStatus strata_cap_grant(const struct StrataAuthority *auth,
                                   uint64_t parent,
                                   uint64_t lo,
                                   uint64_t hi,
                                   uint8_t rights_level,
                                   uint64_t ttl,
                                   const char *subject,
                                   uint64_t *out_id);

/**
 * Revokes `id` and all its descendants. `out_revoked` may be null.
 *
 * # Safety
 * `auth` must be a live handle.
 */
enum StrataStatus strata_cap_revoke(const struct StrataAuthority *auth,
                                    uint64_t id,
                                    size_t *out_revoked);

/**
 * `STRATA_STATUS_OK` when `id` grants `rights_level` over `[lo, hi)` now,
 * `STRATA_STATUS_DENIED` otherwise.
 *
 * # Safety
 * `auth` must be a live handle.
 */
enum StrataStatus strata_cap_verify(const struct StrataAuthority *auth,
                                    uint64_t id,
                                    uint64_t lo,
                                    uint64_t hi,
                                    uint8_t rights_level);

/**
 * # Safety
 * Out pointers must be valid for writes.
 */
enum StrataStatus strata_leases_new(struct StrataLeases **out_leases);

/**
 * # Safety
 * `leases` must come from [`strata_leases_new`] and not be used afterwards.
 */
void strata_leases_free(struct StrataLeases *leases);

/**
 * Shared lease on `object`; fails while a writer holds it.
 *
 * # Safety
 * Pointers must be valid.
 */
enum StrataStatus strata_lease_acquire_read(const struct StrataLeases *leases,
                                            uint64_t object,
                                            uint64_t *out_lease);

/**
 * Exclusive lease on `object`; fails while any reader or writer holds it.
 *
 * # Safety
 * Pointers must be valid.
 */
enum StrataStatus strata_lease_acquire_write(const struct StrataLeases *leases,
                                             uint64_t object,
                                             uint64_t *out_lease);

/**
 * # Safety
 * `leases` must be a live handle.
 */
enum StrataStatus strata_lease_release(const struct StrataLeases *leases, uint64_t lease);

/**
 * Empty graph over its own in-memory store. `segment_bytes` of 0 keeps the
 * default segment size.
 *
 * # Safety
 * Out pointers must be valid for writes.
 */
enum StrataStatus strata_graph_new(uint64_t segment_bytes, struct StrataGraph **out_graph);

/**
 * # Safety
 * `graph` must come from [`strata_graph_new`] and not be used afterwards.
 */
void strata_graph_free(struct StrataGraph *graph);

/**
 * # Safety
 * `label` must be NUL-terminated; `payload` readable for `len` bytes.
 */
enum StrataStatus strata_graph_add_node(const struct StrataGraph *graph,
                                        uint64_t id,
                                        const char *label,
                                        const uint8_t *payload,
                                        size_t len);

/**
 * # Safety
 * `graph` must be a live handle.
 */
enum StrataStatus strata_graph_remove_node(const struct StrataGraph *graph, uint64_t id);

/**
 * # Safety
 * `payload` must be readable for `len` bytes.
 */
enum StrataStatus strata_graph_set_payload(const struct StrataGraph *graph,
                                           uint64_t id,
                                           const uint8_t *payload,
                                           size_t len);

/**
 * # Safety
 * `etype` must be NUL-terminated.
 */
enum StrataStatus strata_graph_add_edge(const struct StrataGraph *graph,
                                        uint64_t src,
                                        uint64_t dst,
                                        const char *etype);

/**
 * # Safety
 * `etype` must be NUL-terminated.
 */
enum StrataStatus strata_graph_remove_edge(const struct StrataGraph *graph,
                                           uint64_t src,
                                           uint64_t dst,
                                           const char *etype);

/**
 * Commits the staged mutations as one snapshot at `tick`, which must exceed
 * the previous commit's tick, and writes the snapshot digest. The staged
 * batch is consumed whether or not the commit succeeds; a failed commit
 * leaves the graph unchanged.
 *
 * # Safety
 * `out_digest` must be writable for 32 bytes.
 */
enum StrataStatus strata_graph_commit(const struct StrataGraph *graph,
                                      uint64_t tick,
                                      uint8_t *out_digest);

/**
 * Nodes in the last committed snapshot.
 *
 * # Safety
 * Pointers must be valid.
 */
enum StrataStatus strata_graph_node_count(const struct StrataGraph *graph, uint64_t *out_count);

/**
 * Node ids within `hops` out-edges of `start`, `start` included, in
 * ascending order.
 *
 * # Safety
 * `out_ids` must be writable for `cap` ids.
 */
enum StrataStatus strata_graph_khop(const struct StrataGraph *graph,
                                    uint64_t start,
                                    uint32_t hops,
                                    uint64_t *out_ids,
                                    size_t cap,
                                    size_t *out_len);

/**
 * Rewrites the head snapshot into at most `k` pack segments.
 *
 * # Safety
 * `out_fragments` may be null.
 */
enum StrataStatus strata_graph_compact(const struct StrataGraph *graph,
                                       size_t k,
                                       size_t *out_fragments);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRATA_H */
