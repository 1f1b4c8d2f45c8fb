# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled environment hot loops. Semantics mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef int VIEW = 9
cdef int RADIUS = 4
cdef unsigned char WALL = 6
cdef unsigned char SELF = 1

cdef int FWD_R[4]
cdef int FWD_C[4]
cdef int RGT_R[4]
cdef int RGT_C[4]
FWD_R[:] = [-1, 0, 1, 0]
FWD_C[:] = [0, 1, 0, -1]
RGT_R[:] = [0, 1, 0, -1]
RGT_C[:] = [1, 0, -1, 0]


def extract_views(codes, rows, cols, orients):
    cdef const unsigned char[:, :] g = np.ascontiguousarray(codes, dtype=np.uint8)
    cdef Py_ssize_t n = len(rows)
    cdef long[:] rr = np.asarray(rows, dtype=np.int64).astype(np.int_)
    cdef long[:] cc = np.asarray(cols, dtype=np.int64).astype(np.int_)
    cdef long[:] oo = np.asarray(orients, dtype=np.int64).astype(np.int_)
    out = np.empty((n, VIEW, VIEW), dtype=np.uint8)
    cdef unsigned char[:, :, :] v = out
    cdef int h = g.shape[0]
    cdef int w = g.shape[1]
    cdef Py_ssize_t k
    cdef int vr, vc, fwd, rgt, gr, gc, o
    for k in range(n):
        o = oo[k]
        for vr in range(VIEW):
            fwd = RADIUS - vr
            for vc in range(VIEW):
                rgt = vc - RADIUS
                gr = rr[k] + fwd * FWD_R[o] + rgt * RGT_R[o]
                gc = cc[k] + fwd * FWD_C[o] + rgt * RGT_C[o]
                if gr < 0 or gc < 0 or gr >= h or gc >= w:
                    v[k, vr, vc] = WALL
                else:
                    v[k, vr, vc] = g[gr, gc]
        v[k, RADIUS, RADIUS] = SELF
    return out


def neighbor_counts(apples):
    cdef const unsigned char[:, :] a = np.ascontiguousarray(apples, dtype=np.uint8)
    cdef int h = a.shape[0]
    cdef int w = a.shape[1]
    out = np.zeros((h, w), dtype=np.int64)
    cdef long long[:, :] o = out
    cdef int r, c, dr, dc, rr, cc
    cdef long long s
    for r in range(h):
        for c in range(w):
            s = 0
            for dr in range(-2, 3):
                rr = r + dr
                if rr < 0 or rr >= h:
                    continue
                for dc in range(-2, 3):
                    if dr == 0 and dc == 0:
                        continue
                    if dr * dr + dc * dc > 4:
                        continue
                    cc = c + dc
                    if cc < 0 or cc >= w:
                        continue
                    s += a[rr, cc]
            o[r, c] = s
    return out


def trace_beam(walls, int r, int c, int o):
    cdef const unsigned char[:, :] wl = np.ascontiguousarray(walls, dtype=np.uint8)
    cdef int h = wl.shape[0]
    cdef int w = wl.shape[1]
    cdef int step, rr, cc
    cells = []
    for step in range(1, RADIUS + 1):
        rr = r + step * FWD_R[o]
        cc = c + step * FWD_C[o]
        if rr < 0 or cc < 0 or rr >= h or cc >= w or wl[rr, cc]:
            break
        cells.append((rr, cc))
    return cells
