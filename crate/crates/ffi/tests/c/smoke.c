#include <stdio.h>
#include <string.h>

#include "strata.h"

#define CHECK(expr, want)                                                              \
    do {                                                                               \
        StrataStatus got_ = (expr);                                                    \
        if (got_ != (want)) {                                                          \
            fprintf(stderr, "%s:%d: %s -> %s\n", __FILE__, __LINE__, #expr,            \
                    strata_status_str(got_));                                          \
            return 1;                                                                  \
        }                                                                              \
    } while (0)

int main(void) {
    StrataStore *store = NULL;
    CHECK(strata_store_new_memory(0, &store), STRATA_STATUS_OK);
    const char *msg = "opaque handles";
    uint8_t digest[32];
    CHECK(strata_store_put(store, (const uint8_t *)msg, strlen(msg), digest), STRATA_STATUS_OK);
    size_t len = 0;
    CHECK(strata_store_get(store, digest, NULL, 0, &len), STRATA_STATUS_BUFFER_TOO_SMALL);
    char buf[64];
    CHECK(strata_store_get(store, digest, (uint8_t *)buf, sizeof buf, &len), STRATA_STATUS_OK);
    if (len != strlen(msg) || memcmp(buf, msg, len) != 0) {
        return 1;
    }
    strata_store_free(store);

    StrataAuthority *auth = NULL;
    CHECK(strata_authority_new(&auth), STRATA_STATUS_OK);
    uint64_t root, child, denied;
    CHECK(strata_cap_mint_root(auth, 0, 1000, 4, "root", &root), STRATA_STATUS_OK);
    CHECK(strata_cap_grant(auth, root, 0, 10, 3, 0, "w", &child), STRATA_STATUS_OK);
    CHECK(strata_cap_grant(auth, child, 0, 11, 1, 0, "x", &denied), STRATA_STATUS_DENIED);
    CHECK(strata_cap_verify(auth, child, 2, 3, 3), STRATA_STATUS_OK);
    CHECK(strata_cap_revoke(auth, child, NULL), STRATA_STATUS_OK);
    CHECK(strata_cap_verify(auth, child, 2, 3, 3), STRATA_STATUS_DENIED);
    strata_authority_free(auth);

    StrataLeases *leases = NULL;
    uint64_t w, r;
    CHECK(strata_leases_new(&leases), STRATA_STATUS_OK);
    CHECK(strata_lease_acquire_write(leases, 5, &w), STRATA_STATUS_OK);
    CHECK(strata_lease_acquire_read(leases, 5, &r), STRATA_STATUS_LEASE_CONFLICT);
    CHECK(strata_lease_release(leases, w), STRATA_STATUS_OK);
    CHECK(strata_lease_acquire_read(leases, 5, &r), STRATA_STATUS_OK);
    strata_leases_free(leases);

    StrataGraph *graph = NULL;
    CHECK(strata_graph_new(0, &graph), STRATA_STATUS_OK);
    for (uint64_t i = 0; i < 4; i++) {
        CHECK(strata_graph_add_node(graph, i, "n", (const uint8_t *)&i, sizeof i), STRATA_STATUS_OK);
    }
    CHECK(strata_graph_add_edge(graph, 0, 1, "e"), STRATA_STATUS_OK);
    CHECK(strata_graph_add_edge(graph, 1, 2, "e"), STRATA_STATUS_OK);
    CHECK(strata_graph_commit(graph, 1, digest), STRATA_STATUS_OK);
    uint64_t ids[8];
    CHECK(strata_graph_khop(graph, 0, 1, ids, 8, &len), STRATA_STATUS_OK);
    if (len != 2 || ids[0] != 0 || ids[1] != 1) {
        return 1;
    }
    strata_graph_free(graph);
    printf("ffi smoke ok (version %s)\n", strata_version());
    return 0;
}
