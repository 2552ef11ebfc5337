# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same contracts as foresthash._pykernels."""

import numpy as np

from libc.stdint cimport int32_t, int64_t, uint8_t, uint64_t


cdef extern from *:
    """
    #include <stdint.h>

    /* Hardware popcount through function multiversioning where available
       (GCC on x86-64 picks the clone at load time); elsewhere a
       branch-free SWAR count, which needs no special instructions. */
    #if defined(__GNUC__) && !defined(__clang__) && defined(__x86_64__) && defined(__linux__)
    #define FH_CLONES __attribute__((target_clones("popcnt", "default")))
    #else
    #define FH_CLONES
    #endif

    static inline int fh_swar64(uint64_t x) {
        x = x - ((x >> 1) & 0x5555555555555555ULL);
        x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL);
        x = (x + (x >> 4)) & 0x0F0F0F0F0F0F0F0FULL;
        return (int)((x * 0x0101010101010101ULL) >> 56);
    }

    #if defined(__GNUC__) || defined(__clang__)
    #define FH_POPCOUNT64(x) __builtin_popcountll(x)
    #else
    #define FH_POPCOUNT64(x) fh_swar64(x)
    #endif

    FH_CLONES
    static void fh_hamming(const uint64_t *db, const uint64_t *q, Py_ssize_t n,
                           Py_ssize_t nw, int32_t *out) {
        for (Py_ssize_t i = 0; i < n; ++i) {
            const uint64_t *row = db + i * nw;
            int d = 0;
            for (Py_ssize_t w = 0; w < nw; ++w)
                d += FH_POPCOUNT64(row[w] ^ q[w]);
            out[i] = d;
        }
    }

    FH_CLONES
    static Py_ssize_t fh_radius(const uint64_t *db, const uint64_t *q, Py_ssize_t n,
                                Py_ssize_t nw, int radius, int64_t *hits) {
        Py_ssize_t found = 0;
        for (Py_ssize_t i = 0; i < n; ++i) {
            const uint64_t *row = db + i * nw;
            int d = 0;
            for (Py_ssize_t w = 0; w < nw; ++w)
                d += FH_POPCOUNT64(row[w] ^ q[w]);
            if (d <= radius)
                hits[found++] = i;
        }
        return found;
    }
    """
    void fh_hamming(const uint64_t* db, const uint64_t* q, Py_ssize_t n, Py_ssize_t nw, int32_t* out) nogil
    Py_ssize_t fh_radius(const uint64_t* db, const uint64_t* q, Py_ssize_t n, Py_ssize_t nw, int radius, int64_t* hits) nogil


def traverse(go_right, int depth, int num_trees):
    cdef const uint8_t[:, ::1] dec = np.ascontiguousarray(go_right, dtype=np.uint8)
    cdef Py_ssize_t n = dec.shape[0]
    cdef int internal = (1 << (depth - 1)) - 1
    out = np.empty((n, num_trees), dtype=np.int32)
    cdef int32_t[:, ::1] leaves = out
    cdef Py_ssize_t i, t, base
    cdef int h, level
    with nogil:
        for i in range(n):
            for t in range(num_trees):
                base = t * internal
                h = 0
                for level in range(depth - 1):
                    h = 2 * h + 1 + dec[i, base + h]
                leaves[i, t] = h - internal
    return out


def _word_arrays(db_words, q_words):
    db = np.ascontiguousarray(db_words, dtype=np.uint64)
    q = np.ascontiguousarray(q_words, dtype=np.uint64)
    if db.ndim != 2 or q.ndim != 1 or db.shape[1] != q.shape[0]:
        raise ValueError(f"word shapes {db.shape} and {q.shape} do not match")
    return db, q


def hamming_distances(db_words, q_words):
    db_arr, q_arr = _word_arrays(db_words, q_words)
    cdef Py_ssize_t n = db_arr.shape[0], nw = db_arr.shape[1]
    out = np.empty(n, dtype=np.int32)
    if n == 0 or nw == 0:
        out[:] = 0
        return out
    cdef const uint64_t[:, ::1] db = db_arr
    cdef const uint64_t[::1] qv = q_arr
    cdef int32_t[::1] dist = out
    cdef const uint64_t* base = &db[0, 0]
    cdef const uint64_t* q = &qv[0]
    with nogil:
        fh_hamming(base, q, n, nw, &dist[0])
    return out


def radius_query(db_words, q_words, int radius):
    db_arr, q_arr = _word_arrays(db_words, q_words)
    cdef Py_ssize_t n = db_arr.shape[0], nw = db_arr.shape[1], found = 0
    hits = np.empty(n, dtype=np.int64)
    if n == 0:
        return hits
    if nw == 0:
        return np.arange(n, dtype=np.int64) if radius >= 0 else hits[:0].copy()
    cdef const uint64_t[:, ::1] db = db_arr
    cdef const uint64_t[::1] qv = q_arr
    cdef int64_t[::1] h = hits
    cdef const uint64_t* base = &db[0, 0]
    cdef const uint64_t* q = &qv[0]
    with nogil:
        found = fh_radius(base, q, n, nw, radius, &h[0])
    return hits[:found].copy()


def joint_counts(x, y, int x_arity, int y_arity):
    cdef const int64_t[::1] xv = np.ascontiguousarray(x, dtype=np.int64)
    cdef const int64_t[::1] yv = np.ascontiguousarray(y, dtype=np.int64)
    out = np.zeros((x_arity, y_arity), dtype=np.int64)
    cdef int64_t[:, ::1] c = out
    cdef Py_ssize_t i
    if xv.shape[0] != yv.shape[0]:
        raise ValueError("x and y must have equal length")
    for i in range(xv.shape[0]):
        if not (0 <= xv[i] < x_arity and 0 <= yv[i] < y_arity):
            raise ValueError(f"value out of range at row {i}")
    with nogil:
        for i in range(xv.shape[0]):
            c[xv[i], yv[i]] += 1
    return out


def pairwise_joint_counts(values, int arity):
    cdef const int64_t[:, ::1] v = np.ascontiguousarray(values, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0], m = v.shape[1]
    out = np.zeros((m, m, arity, arity), dtype=np.int64)
    cdef int64_t[:, :, :, ::1] c = out
    cdef Py_ssize_t r, i, j, a, b
    for r in range(n):
        for i in range(m):
            if not 0 <= v[r, i] < arity:
                raise ValueError(f"value out of range at row {r}, column {i}")
    with nogil:
        for r in range(n):
            for i in range(m):
                for j in range(i, m):
                    c[i, j, v[r, i], v[r, j]] += 1
        for i in range(m):
            for j in range(i + 1, m):
                for a in range(arity):
                    for b in range(arity):
                        c[j, i, b, a] = c[i, j, a, b]
    return out
