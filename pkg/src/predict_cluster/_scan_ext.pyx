# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU time scan. Same contract as ``_scan_py``; matmuls go to BLAS."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fmax, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void gemm_rm(char ta, char tb, int m, int n, int k, double alpha,
                         double* A, int lda, double* B, int ldb,
                         double beta, double* C, int ldc) noexcept nogil:
    # row-major C = alpha op(A) op(B) + beta C via column-major BLAS
    dgemm(&tb, &ta, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline double sigm(double a) noexcept nogil:
    # branchless so the loop vectorizes; clamp keeps exp finite
    return 1.0 / (1.0 + exp(-fmax(a, -700.0)))


def scan_forward(double[:, :, ::1] xproj, double[:, ::1] U, h0,
                 double[:, ::1] mask, bint reverse=False):
    cdef int T = xproj.shape[0]
    cdef int B = xproj.shape[1]
    cdef int H = xproj.shape[2] // 3
    cdef int H2 = 2 * H
    cdef int H3 = 3 * H
    hs_a = np.empty((T, B, H))
    hprev_a = np.empty((T, B, H))
    r_a = np.empty((T, B, H))
    z_a = np.empty((T, B, H))
    c_a = np.empty((T, B, H))
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] hprev = hprev_a
    cdef double[:, :, ::1] ra = r_a
    cdef double[:, :, ::1] za = z_a
    cdef double[:, :, ::1] ca = c_a
    cdef double[:, ::1] h = np.array(h0, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] rz = np.empty((B, H2))
    cdef double[:, ::1] rh = np.empty((B, H))
    cdef double[:, ::1] cp = np.empty((B, H))
    cdef int s, t, b, i
    cdef double m, r, z, c, hv
    cdef double* pr
    cdef double* px
    cdef double* pc
    cdef double* ph
    with nogil:
        for s in range(T):
            t = T - 1 - s if reverse else s
            for b in range(B):
                for i in range(H):
                    hprev[t, b, i] = h[b, i]
            if B > 0 and H > 0:
                gemm_rm(b'N', b'T', B, H2, H, 1.0, &h[0, 0], H, &U[0, 0], H, 0.0, &rz[0, 0], H2)
            for b in range(B):
                pr = &rz[b, 0]
                px = &xproj[t, b, 0]
                ph = &h[b, 0]
                for i in range(H2):
                    pr[i] = sigm(pr[i] + px[i])
                pc = &rh[b, 0]
                for i in range(H):
                    pc[i] = pr[i] * ph[i]
            if B > 0 and H > 0:
                gemm_rm(b'N', b'T', B, H, H, 1.0, &rh[0, 0], H, &U[H2, 0], H, 0.0, &cp[0, 0], H)
            for b in range(B):
                pc = &cp[b, 0]
                px = &xproj[t, b, H2]
                for i in range(H):
                    pc[i] = tanh(pc[i] + px[i])
                m = mask[t, b]
                pr = &rz[b, 0]
                ph = &h[b, 0]
                for i in range(H):
                    r = pr[i]
                    z = pr[H + i]
                    c = pc[i]
                    hv = ph[i]
                    ra[t, b, i] = r
                    za[t, b, i] = z
                    ca[t, b, i] = c
                    ph[i] = m * ((1.0 - z) * hv + z * c) + (1.0 - m) * hv
                    hs[t, b, i] = ph[i]
    return hs_a, (hprev_a, r_a, z_a, c_a)


def scan_backward(double[:, :, ::1] dhs, double[:, ::1] U, cache,
                  double[:, ::1] mask, bint reverse=False):
    cdef double[:, :, ::1] hprev = cache[0]
    cdef double[:, :, ::1] ra = cache[1]
    cdef double[:, :, ::1] za = cache[2]
    cdef double[:, :, ::1] ca = cache[3]
    cdef int T = dhs.shape[0]
    cdef int B = dhs.shape[1]
    cdef int H = dhs.shape[2]
    cdef int H2 = 2 * H
    cdef int H3 = 3 * H
    dxproj_a = np.zeros((T, B, H3))
    dU_a = np.zeros((H3, H))
    dh_a = np.zeros((B, H))
    cdef double[:, :, ::1] dx = dxproj_a
    cdef double[:, ::1] dU = dU_a
    cdef double[:, ::1] dh = dh_a
    cdef double[:, ::1] g = np.empty((B, H))
    cdef double[:, ::1] rh = np.empty((B, H))
    cdef double[:, ::1] drh = np.empty((B, H))
    cdef double[:, ::1] hp
    cdef int s, t, b, i
    cdef double m, r, z, c, hv, gv, dc, dz, dac
    cdef double *pdh
    cdef double *pdo
    cdef double *pdx
    cdef double *pg
    cdef double *prh
    cdef double *pd
    cdef double *phv
    cdef double *pra
    cdef double *pza
    cdef double *pca
    for s in range(T):
        t = s if reverse else T - 1 - s
        hp = hprev[t]
        with nogil:
            for b in range(B):
                m = mask[t, b]
                pdh = &dh[b, 0]
                pdo = &dhs[t, b, 0]
                pdx = &dx[t, b, 0]
                pg = &g[b, 0]
                prh = &rh[b, 0]
                phv = &hp[b, 0]
                pra = &ra[t, b, 0]
                pza = &za[t, b, 0]
                pca = &ca[t, b, 0]
                for i in range(H):
                    pdh[i] = pdh[i] + pdo[i]
                    gv = m * pdh[i]
                    pg[i] = gv
                    z = pza[i]
                    c = pca[i]
                    hv = phv[i]
                    dc = gv * z
                    dz = gv * (c - hv)
                    pdx[H2 + i] = dc * (1.0 - c * c)
                    pdx[H + i] = dz * z * (1.0 - z)
                    prh[i] = pra[i] * hv
            if B > 0 and H > 0:
                # drh = dac @ Uh
                gemm_rm(b'N', b'N', B, H, H, 1.0, &dx[t, 0, H2], H3, &U[H2, 0], H, 0.0, &drh[0, 0], H)
            for b in range(B):
                m = mask[t, b]
                pdh = &dh[b, 0]
                pdx = &dx[t, b, 0]
                pg = &g[b, 0]
                pd = &drh[b, 0]
                phv = &hp[b, 0]
                pra = &ra[t, b, 0]
                pza = &za[t, b, 0]
                for i in range(H):
                    r = pra[i]
                    pdx[i] = pd[i] * phv[i] * r * (1.0 - r)
                    # carried part + direct paths through (1 - z) h and r * h
                    pdh[i] = (1.0 - m) * pdh[i] + pg[i] * (1.0 - pza[i]) + pd[i] * r
            if B > 0 and H > 0:
                gemm_rm(b'T', b'N', H, H, B, 1.0, &dx[t, 0, H2], H3, &rh[0, 0], H, 1.0, &dU[H2, 0], H)
                gemm_rm(b'T', b'N', H2, H, B, 1.0, &dx[t, 0, 0], H3, &hp[0, 0], H, 1.0, &dU[0, 0], H)
                gemm_rm(b'N', b'N', B, H, H2, 1.0, &dx[t, 0, 0], H3, &U[0, 0], H, 1.0, &dh[0, 0], H)
    return dxproj_a, dU_a, dh_a
