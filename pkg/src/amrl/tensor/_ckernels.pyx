# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3x3 convolution kernels (stride 1, zero padding 1), float64.

Patches are gathered in C (``conv_kernels.h``) and contracted with BLAS
``dgemm`` through SciPy's Cython bindings, so no Python-level work happens
between the gather and the matrix product.
"""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef extern from "conv_kernels.h" nogil:
    void im2col3(const double *x, double *cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W)
    void col2im3(const double *cols, double *gx, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W)


cdef inline void _gemm_rm(char ta, char tb, int m, int n, int k, double *a, int lda,
                          double *b, int ldb, double beta, double *c, int ldc) noexcept nogil:
    # row-major C[m, n] = op(A) @ op(B) via column-major C^T = op(B)^T op(A)^T
    cdef double one = 1.0
    dgemm(&tb, &ta, &n, &m, &k, &one, b, &ldb, a, &lda, &beta, c, &ldc)


def conv2d_forward(x, w, b):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2], O = wv.shape[0]
    cdef int HW = H * W, K = C * 9
    cols_arr = np.empty((K, HW))
    out_arr = np.empty((O, HW))
    out_arr[:] = np.asarray(b, dtype=np.float64)[:, None]
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] out = out_arr
    with nogil:
        im2col3(&xv[0, 0, 0], &cols[0, 0], C, H, W)
        _gemm_rm(b'N', b'N', O, HW, K, &wv[0, 0, 0, 0], K, &cols[0, 0], HW, 1.0, &out[0, 0], HW)
    return out_arr.reshape(O, H, W)


def conv2d_backward(x, w, gout):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    g_arr = np.ascontiguousarray(gout, dtype=np.float64)
    cdef double[:, :, ::1] gv = g_arr
    cdef int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2], O = wv.shape[0]
    cdef int HW = H * W, K = C * 9
    cols_arr = np.empty((K, HW))
    gcols_arr = np.empty((K, HW))
    gw_arr = np.empty((O, C, 3, 3))
    gx_arr = np.empty((C, H, W))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] gcols = gcols_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[:, :, ::1] gx = gx_arr
    with nogil:
        im2col3(&xv[0, 0, 0], &cols[0, 0], C, H, W)
        # gw[O, K] = gout[O, HW] @ cols[K, HW]^T
        _gemm_rm(b'N', b'T', O, K, HW, &gv[0, 0, 0], HW, &cols[0, 0], HW, 0.0, &gw[0, 0, 0, 0], K)
        # gcols[K, HW] = w[O, K]^T @ gout[O, HW]
        _gemm_rm(b'T', b'N', K, HW, O, &wv[0, 0, 0, 0], K, &gv[0, 0, 0], HW, 0.0, &gcols[0, 0], HW)
        col2im3(&gcols[0, 0], &gx[0, 0, 0], C, H, W)
    return gx_arr, gw_arr, g_arr.sum(axis=(1, 2))
