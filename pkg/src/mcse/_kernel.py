"""Pure-numpy training kernel: full forward and hand-derived backward pass
for one homogeneous mini-batch.

This is the reference implementation; ``mcse._kernel_cy`` is a compiled twin
selected at import when available (see :mod:`mcse.backend`). Both compute:

forward (per instance i, two dropout views a/b of the same sentence)
    p_i   = mean of embedding rows of the tokens
    u_i   = p_i * dropout_scale_a,   u'_i = p_i * dropout_scale_b
    h_i   = tanh(Wt u_i + bt)                    (textual head, both views)
    l_text_i = nll over cos(h_i, h'_j)/tau with target j=i

and, for multimodal batches (paired image features f_j, frozen):
    s_i   = unit(tanh(Ws u_i + bs))              (shared text head, both views)
    v_j   = unit(tanh(Wv f_j + bv))              (shared image head)
    l_mm_i = sum over both views of nll over (s_i . v_j)/tau_mm, target j=i

The backward pass accumulates d(mean(l_text + mm_weight * l_mm))/d(theta)
into the provided gradient arrays for every reachable parameter. Gradients
of the cosine, the L2 normalization and tanh are applied explicitly; see the
per-block comments for the exact expressions.
"""

from __future__ import annotations

import numpy as np

from .linalg import DegenerateInputError

BACKEND_NAME = "python"

_EPS = 1e-12


def batch_forward_backward(tokens, lengths, scale_a, scale_b,
                           embed, w_text, b_text,
                           w_shared_text, b_shared_text,
                           w_shared_image, b_shared_image,
                           images, tau, tau_mm, mm_weight, want_grads,
                           g_embed=None, g_w_text=None, g_b_text=None,
                           g_w_shared_text=None, g_b_shared_text=None,
                           g_w_shared_image=None, g_b_shared_image=None):
    """Run one batch. Returns (loss_text, loss_mm) where loss_mm is None for
    text-only batches (images is None).

    tokens: (N, L) int32, padded; lengths: (N,) int32 valid-token counts.
    scale_a/scale_b: (N, d) inverted-dropout scale factors for the two views.
    images: (N, image_dim) or None. When want_grads, the g_* arrays receive
    accumulated gradients of the mean combined loss.
    """
    n, l_max = tokens.shape
    d = embed.shape[1]

    valid = np.arange(l_max)[None, :] < lengths[:, None]          # (N, L)
    inv_len = 1.0 / lengths.astype(np.float64)

    # Pooling + the two dropout views.
    gathered = embed[tokens] * valid[:, :, None]                  # (N, L, d)
    pooled = gathered.sum(axis=1) * inv_len[:, None]              # (N, d)
    u_a = pooled * scale_a
    u_b = pooled * scale_b

    # Textual head, both views.
    h_a = np.tanh(u_a @ w_text.T + b_text)
    h_b = np.tanh(u_b @ w_text.T + b_text)
    norm_a = np.linalg.norm(h_a, axis=1)
    norm_b = np.linalg.norm(h_b, axis=1)
    if np.any(norm_a < _EPS) or np.any(norm_b < _EPS):
        raise DegenerateInputError("textual head produced a zero-norm row")
    hn_a = h_a / norm_a[:, None]
    hn_b = h_b / norm_b[:, None]

    cos_tt = hn_a @ hn_b.T                                        # (N, N)
    logits_t = cos_tt / tau
    row_max = logits_t.max(axis=1)
    shifted = np.exp(logits_t - row_max[:, None])
    lse_t = row_max + np.log(shifted.sum(axis=1))
    loss_text = lse_t - np.diagonal(logits_t)
    prob_t = shifted / shifted.sum(axis=1)[:, None]

    multimodal = images is not None
    if multimodal:
        # Shared-space maps: tanh then unit-normalize (the normalization is
        # part of the graph, so its Jacobian shows up in the backward pass).
        y_a = np.tanh(u_a @ w_shared_text.T + b_shared_text)
        y_b = np.tanh(u_b @ w_shared_text.T + b_shared_text)
        y_v = np.tanh(images @ w_shared_image.T + b_shared_image)
        r_a = np.linalg.norm(y_a, axis=1)
        r_b = np.linalg.norm(y_b, axis=1)
        r_v = np.linalg.norm(y_v, axis=1)
        if np.any(r_a < _EPS) or np.any(r_b < _EPS) or np.any(r_v < _EPS):
            raise DegenerateInputError("shared head produced a zero-norm row")
        s_a = y_a / r_a[:, None]
        s_b = y_b / r_b[:, None]
        v = y_v / r_v[:, None]

        logits_a = (s_a @ v.T) / tau_mm
        logits_b = (s_b @ v.T) / tau_mm
        max_a = logits_a.max(axis=1)
        max_b = logits_b.max(axis=1)
        exp_a = np.exp(logits_a - max_a[:, None])
        exp_b = np.exp(logits_b - max_b[:, None])
        lse_a = max_a + np.log(exp_a.sum(axis=1))
        lse_b = max_b + np.log(exp_b.sum(axis=1))
        loss_mm = (lse_a - np.diagonal(logits_a)) + (lse_b - np.diagonal(logits_b))
        prob_a = exp_a / exp_a.sum(axis=1)[:, None]
        prob_b = exp_b / exp_b.sum(axis=1)[:, None]
    else:
        loss_mm = None

    if not want_grads:
        return loss_text, loss_mm

    inv_n = 1.0 / n
    eye = np.eye(n)

    # --- textual branch ---
    # dL/dlogits = (softmax - I)/N; cosine backward for C = a.b/(|a||b|):
    #   dC/da = b_hat/|a| - C * a_hat/|a|
    g_logits = (prob_t - eye) * inv_n
    gc_tau = g_logits / tau
    row_mix = (gc_tau * cos_tt).sum(axis=1)
    col_mix = (gc_tau * cos_tt).sum(axis=0)
    dh_a = (gc_tau @ hn_b - row_mix[:, None] * hn_a) / norm_a[:, None]
    dh_b = (gc_tau.T @ hn_a - col_mix[:, None] * hn_b) / norm_b[:, None]

    da_a = dh_a * (1.0 - h_a * h_a)   # through tanh
    da_b = dh_b * (1.0 - h_b * h_b)
    g_w_text += da_a.T @ u_a + da_b.T @ u_b
    g_b_text += da_a.sum(axis=0) + da_b.sum(axis=0)
    du_a = da_a @ w_text
    du_b = da_b @ w_text

    # --- multimodal branch ---
    if multimodal:
        gm_a = (prob_a - eye) * (mm_weight * inv_n) / tau_mm
        gm_b = (prob_b - eye) * (mm_weight * inv_n) / tau_mm
        ds_a = gm_a @ v
        ds_b = gm_b @ v
        dv = gm_a.T @ s_a + gm_b.T @ s_b

        # Normalization backward: s = y/|y|  =>  dy = (ds - (ds.s) s)/|y|.
        dy_a = (ds_a - (ds_a * s_a).sum(axis=1)[:, None] * s_a) / r_a[:, None]
        dy_b = (ds_b - (ds_b * s_b).sum(axis=1)[:, None] * s_b) / r_b[:, None]
        dy_v = (dv - (dv * v).sum(axis=1)[:, None] * v) / r_v[:, None]

        dc_a = dy_a * (1.0 - y_a * y_a)
        dc_b = dy_b * (1.0 - y_b * y_b)
        de_v = dy_v * (1.0 - y_v * y_v)

        g_w_shared_text += dc_a.T @ u_a + dc_b.T @ u_b
        g_b_shared_text += dc_a.sum(axis=0) + dc_b.sum(axis=0)
        g_w_shared_image += de_v.T @ images
        g_b_shared_image += de_v.sum(axis=0)

        du_a += dc_a @ w_shared_text
        du_b += dc_b @ w_shared_text

    # --- dropout and pooling ---
    dp = du_a * scale_a + du_b * scale_b
    rows, cols = np.nonzero(valid)
    np.add.at(g_embed, tokens[rows, cols], dp[rows] * inv_len[rows, None])

    return loss_text, loss_mm
