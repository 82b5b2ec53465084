# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernel: same contract as mcse._kernel (the pure-numpy
reference), implemented with explicit loops. At desk-scale batch sizes the
per-call overhead of many small numpy operations dominates, which is what
this extension removes; see ``mcse.bench`` for the comparison."""

from libc.math cimport exp, log, sqrt, tanh

import numpy as np

from .linalg import DegenerateInputError

BACKEND_NAME = "compiled"

cdef double _EPS = 1e-12


def batch_forward_backward(int[:, ::1] tokens, int[::1] lengths,
                           double[:, ::1] scale_a, double[:, ::1] scale_b,
                           double[:, ::1] embed,
                           double[:, ::1] w_text, double[::1] b_text,
                           double[:, ::1] w_shared_text, double[::1] b_shared_text,
                           double[:, ::1] w_shared_image, double[::1] b_shared_image,
                           images, double tau, double tau_mm, double mm_weight,
                           bint want_grads,
                           g_embed=None, g_w_text=None, g_b_text=None,
                           g_w_shared_text=None, g_b_shared_text=None,
                           g_w_shared_image=None, g_b_shared_image=None):
    cdef Py_ssize_t n = tokens.shape[0]
    cdef Py_ssize_t d = embed.shape[1]
    cdef Py_ssize_t ds = w_shared_text.shape[0]
    cdef Py_ssize_t dv = w_shared_image.shape[1]
    cdef bint multimodal = images is not None
    cdef Py_ssize_t i, j, k, r, t
    cdef double acc, inv_len, m, total, val, g, mix

    cdef double[:, ::1] img
    cdef double[:, ::1] pooled, u_a, u_b, h_a, h_b, hn_a, hn_b, cos_tt, prob_t
    cdef double[::1] norm_a, norm_b, inv_na, inv_nb, loss_text
    cdef double[:, ::1] y_a, y_b, y_v, s_a, s_b, v_mat, prob_a, prob_b
    cdef double[::1] r_a, r_b, r_v, loss_mm
    cdef double[:, ::1] da_a, da_b, du_a, du_b
    cdef double[::1] tmp
    cdef double[:, ::1] ds_a, ds_b, dvg, dc_a, dc_b, de_v
    cdef double[:, ::1] ge, gwt, gws, gwv
    cdef double[::1] gbt, gbs, gbv

    pooled_arr = np.zeros((n, d))
    u_a_arr = np.empty((n, d))
    u_b_arr = np.empty((n, d))
    h_a_arr = np.empty((n, d))
    h_b_arr = np.empty((n, d))
    hn_a_arr = np.empty((n, d))
    hn_b_arr = np.empty((n, d))
    norm_a_arr = np.empty(n)
    norm_b_arr = np.empty(n)
    inv_na_arr = np.empty(n)
    inv_nb_arr = np.empty(n)
    cos_tt_arr = np.empty((n, n))
    prob_t_arr = np.empty((n, n))
    loss_text_arr = np.empty(n)
    pooled = pooled_arr; u_a = u_a_arr; u_b = u_b_arr
    h_a = h_a_arr; h_b = h_b_arr; hn_a = hn_a_arr; hn_b = hn_b_arr
    norm_a = norm_a_arr; norm_b = norm_b_arr
    inv_na = inv_na_arr; inv_nb = inv_nb_arr
    cos_tt = cos_tt_arr; prob_t = prob_t_arr; loss_text = loss_text_arr
    cdef double inv_tau = 1.0 / tau

    # Pooling and the two dropout views.
    for i in range(n):
        inv_len = 1.0 / lengths[i]
        for t in range(lengths[i]):
            r = tokens[i, t]
            for k in range(d):
                pooled[i, k] += embed[r, k]
        for k in range(d):
            pooled[i, k] *= inv_len
            u_a[i, k] = pooled[i, k] * scale_a[i, k]
            u_b[i, k] = pooled[i, k] * scale_b[i, k]

    # Textual head, both views.
    for i in range(n):
        for r in range(d):
            acc = b_text[r]
            for k in range(d):
                acc += w_text[r, k] * u_a[i, k]
            h_a[i, r] = tanh(acc)
            acc = b_text[r]
            for k in range(d):
                acc += w_text[r, k] * u_b[i, k]
            h_b[i, r] = tanh(acc)
        acc = 0.0
        for r in range(d):
            acc += h_a[i, r] * h_a[i, r]
        norm_a[i] = sqrt(acc)
        acc = 0.0
        for r in range(d):
            acc += h_b[i, r] * h_b[i, r]
        norm_b[i] = sqrt(acc)
        if norm_a[i] < _EPS or norm_b[i] < _EPS:
            raise DegenerateInputError("textual head produced a zero-norm row")
        inv_na[i] = 1.0 / norm_a[i]
        inv_nb[i] = 1.0 / norm_b[i]
        for r in range(d):
            hn_a[i, r] = h_a[i, r] * inv_na[i]
            hn_b[i, r] = h_b[i, r] * inv_nb[i]

    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(d):
                acc += hn_a[i, k] * hn_b[j, k]
            cos_tt[i, j] = acc
        # row softmax of cos/tau with max shift
        m = cos_tt[i, 0] * inv_tau
        for j in range(1, n):
            val = cos_tt[i, j] * inv_tau
            if val > m:
                m = val
        total = 0.0
        for j in range(n):
            prob_t[i, j] = exp(cos_tt[i, j] * inv_tau - m)
            total += prob_t[i, j]
        loss_text[i] = m + log(total) - cos_tt[i, i] * inv_tau
        val = 1.0 / total
        for j in range(n):
            prob_t[i, j] *= val

    loss_mm_arr = None
    if multimodal:
        img = images
        y_a_arr = np.empty((n, ds)); y_b_arr = np.empty((n, ds))
        y_v_arr = np.empty((n, ds))
        s_a_arr = np.empty((n, ds)); s_b_arr = np.empty((n, ds))
        v_arr = np.empty((n, ds))
        r_a_arr = np.empty(n); r_b_arr = np.empty(n); r_v_arr = np.empty(n)
        prob_a_arr = np.empty((n, n)); prob_b_arr = np.empty((n, n))
        loss_mm_arr = np.empty(n)
        y_a = y_a_arr; y_b = y_b_arr; y_v = y_v_arr
        s_a = s_a_arr; s_b = s_b_arr; v_mat = v_arr
        r_a = r_a_arr; r_b = r_b_arr; r_v = r_v_arr
        prob_a = prob_a_arr; prob_b = prob_b_arr
        loss_mm = loss_mm_arr

        # Shared-space maps: tanh then unit-normalize. The normalization is
        # part of the graph; its Jacobian shows up in the backward pass.
        for i in range(n):
            for r in range(ds):
                acc = b_shared_text[r]
                for k in range(d):
                    acc += w_shared_text[r, k] * u_a[i, k]
                y_a[i, r] = tanh(acc)
                acc = b_shared_text[r]
                for k in range(d):
                    acc += w_shared_text[r, k] * u_b[i, k]
                y_b[i, r] = tanh(acc)
                acc = b_shared_image[r]
                for k in range(dv):
                    acc += w_shared_image[r, k] * img[i, k]
                y_v[i, r] = tanh(acc)
            acc = 0.0
            for r in range(ds):
                acc += y_a[i, r] * y_a[i, r]
            r_a[i] = sqrt(acc)
            acc = 0.0
            for r in range(ds):
                acc += y_b[i, r] * y_b[i, r]
            r_b[i] = sqrt(acc)
            acc = 0.0
            for r in range(ds):
                acc += y_v[i, r] * y_v[i, r]
            r_v[i] = sqrt(acc)
            if r_a[i] < _EPS or r_b[i] < _EPS or r_v[i] < _EPS:
                raise DegenerateInputError("shared head produced a zero-norm row")
            val = 1.0 / r_a[i]
            for r in range(ds):
                s_a[i, r] = y_a[i, r] * val
            val = 1.0 / r_b[i]
            for r in range(ds):
                s_b[i, r] = y_b[i, r] * val
            val = 1.0 / r_v[i]
            for r in range(ds):
                v_mat[i, r] = y_v[i, r] * val

        # One NLL term per dropout view; rows of unit vectors make the
        # cosine a plain dot product.
        inv_tau = 1.0 / tau_mm
        for i in range(n):
            m = -1e300
            for j in range(n):
                acc = 0.0
                for k in range(ds):
                    acc += s_a[i, k] * v_mat[j, k]
                prob_a[i, j] = acc * inv_tau
                if prob_a[i, j] > m:
                    m = prob_a[i, j]
            total = 0.0
            for j in range(n):
                prob_a[i, j] = exp(prob_a[i, j] - m)
                total += prob_a[i, j]
            acc = 0.0
            for k in range(ds):
                acc += s_a[i, k] * v_mat[i, k]
            loss_mm[i] = m + log(total) - acc * inv_tau
            val = 1.0 / total
            for j in range(n):
                prob_a[i, j] *= val

            m = -1e300
            for j in range(n):
                acc = 0.0
                for k in range(ds):
                    acc += s_b[i, k] * v_mat[j, k]
                prob_b[i, j] = acc * inv_tau
                if prob_b[i, j] > m:
                    m = prob_b[i, j]
            total = 0.0
            for j in range(n):
                prob_b[i, j] = exp(prob_b[i, j] - m)
                total += prob_b[i, j]
            acc = 0.0
            for k in range(ds):
                acc += s_b[i, k] * v_mat[i, k]
            loss_mm[i] += m + log(total) - acc * inv_tau
            val = 1.0 / total
            for j in range(n):
                prob_b[i, j] *= val
        inv_tau = 1.0 / tau

    if not want_grads:
        return loss_text_arr, loss_mm_arr

    ge = g_embed
    gwt = g_w_text
    gbt = g_b_text
    gws = g_w_shared_text
    gbs = g_b_shared_text
    gwv = g_w_shared_image
    gbv = g_b_shared_image

    cdef double inv_n = 1.0 / n
    cdef double c0 = inv_n * inv_tau

    da_a_arr = np.empty((n, d)); da_b_arr = np.empty((n, d))
    du_a_arr = np.zeros((n, d)); du_b_arr = np.zeros((n, d))
    tmp_arr = np.empty(d)
    da_a = da_a_arr; da_b = da_b_arr
    du_a = du_a_arr; du_b = du_b_arr
    tmp = tmp_arr

    # Textual branch backward. Reuse prob_t in place as
    # gc = (softmax - I)/(N tau); the cosine backward splits into a cross
    # term and a self term weighted by sum_j gc[i,j] cos[i,j].
    for i in range(n):
        for j in range(n):
            prob_t[i, j] = (prob_t[i, j] - (1.0 if i == j else 0.0)) * c0
    for i in range(n):
        mix = 0.0
        for j in range(n):
            mix += prob_t[i, j] * cos_tt[i, j]
        for k in range(d):
            tmp[k] = 0.0
        for j in range(n):
            g = prob_t[i, j]
            for k in range(d):
                tmp[k] += g * hn_b[j, k]
        for k in range(d):
            da_a[i, k] = ((tmp[k] - mix * hn_a[i, k]) * inv_na[i]) \
                * (1.0 - h_a[i, k] * h_a[i, k])
    for j in range(n):
        mix = 0.0
        for i in range(n):
            mix += prob_t[i, j] * cos_tt[i, j]
        for k in range(d):
            tmp[k] = 0.0
        for i in range(n):
            g = prob_t[i, j]
            for k in range(d):
                tmp[k] += g * hn_a[i, k]
        for k in range(d):
            da_b[j, k] = ((tmp[k] - mix * hn_b[j, k]) * inv_nb[j]) \
                * (1.0 - h_b[j, k] * h_b[j, k])

    for i in range(n):
        for r in range(d):
            gbt[r] += da_a[i, r] + da_b[i, r]
            for k in range(d):
                gwt[r, k] += da_a[i, r] * u_a[i, k] + da_b[i, r] * u_b[i, k]
        for k in range(d):
            acc = 0.0
            for r in range(d):
                acc += da_a[i, r] * w_text[r, k]
            du_a[i, k] += acc
            acc = 0.0
            for r in range(d):
                acc += da_b[i, r] * w_text[r, k]
            du_b[i, k] += acc

    cdef double coef, g_a, g_b, dot_a, dot_b, dot_v
    if multimodal:
        ds_a_arr = np.zeros((n, ds)); ds_b_arr = np.zeros((n, ds))
        dv_arr = np.zeros((n, ds))
        dc_a_arr = np.empty((n, ds)); dc_b_arr = np.empty((n, ds))
        de_v_arr = np.empty((n, ds))
        ds_a = ds_a_arr; ds_b = ds_b_arr; dvg = dv_arr
        dc_a = dc_a_arr; dc_b = dc_b_arr; de_v = de_v_arr

        coef = mm_weight * inv_n / tau_mm
        for i in range(n):
            for j in range(n):
                g_a = (prob_a[i, j] - (1.0 if i == j else 0.0)) * coef
                g_b = (prob_b[i, j] - (1.0 if i == j else 0.0)) * coef
                for k in range(ds):
                    ds_a[i, k] += g_a * v_mat[j, k]
                    ds_b[i, k] += g_b * v_mat[j, k]
                    dvg[j, k] += g_a * s_a[i, k] + g_b * s_b[i, k]

        # Through normalization (dy = (ds - (ds.s)s)/|y|) and tanh.
        for i in range(n):
            dot_a = 0.0; dot_b = 0.0; dot_v = 0.0
            for k in range(ds):
                dot_a += ds_a[i, k] * s_a[i, k]
                dot_b += ds_b[i, k] * s_b[i, k]
                dot_v += dvg[i, k] * v_mat[i, k]
            for k in range(ds):
                dc_a[i, k] = ((ds_a[i, k] - dot_a * s_a[i, k]) / r_a[i]) \
                    * (1.0 - y_a[i, k] * y_a[i, k])
                dc_b[i, k] = ((ds_b[i, k] - dot_b * s_b[i, k]) / r_b[i]) \
                    * (1.0 - y_b[i, k] * y_b[i, k])
                de_v[i, k] = ((dvg[i, k] - dot_v * v_mat[i, k]) / r_v[i]) \
                    * (1.0 - y_v[i, k] * y_v[i, k])

        for i in range(n):
            for r in range(ds):
                gbs[r] += dc_a[i, r] + dc_b[i, r]
                gbv[r] += de_v[i, r]
                for k in range(d):
                    gws[r, k] += dc_a[i, r] * u_a[i, k] + dc_b[i, r] * u_b[i, k]
                for k in range(dv):
                    gwv[r, k] += de_v[i, r] * img[i, k]
            for k in range(d):
                acc = 0.0
                for r in range(ds):
                    acc += dc_a[i, r] * w_shared_text[r, k]
                du_a[i, k] += acc
                acc = 0.0
                for r in range(ds):
                    acc += dc_b[i, r] * w_shared_text[r, k]
                du_b[i, k] += acc

    # Dropout then pooling: scatter-add into the embedding table.
    for i in range(n):
        inv_len = 1.0 / lengths[i]
        for t in range(lengths[i]):
            r = tokens[i, t]
            for k in range(d):
                ge[r, k] += (du_a[i, k] * scale_a[i, k]
                             + du_b[i, k] * scale_b[i, k]) * inv_len

    return loss_text_arr, loss_mm_arr
