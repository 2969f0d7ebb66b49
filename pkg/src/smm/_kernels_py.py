"""Pure numpy kernels. Reference path, used when the compiled extension is absent.

All functions take the eight parameter arrays in the fixed order
``num_embed, op_embed, gate_w, gate_b, w1, b1, w2, b2`` and zero-based token
indices. The compiled module ``_kernels`` exposes the same functions.
"""
from __future__ import annotations

import math

import numpy as np

PROB_FLOOR = 1e-12


def _softmax(logits):
    m = logits.max()
    e = np.exp(logits - m)
    return e / e.sum()


def forward(ne, oe, gw, gb, w1, b1, w2, b2, ia, ib, iop):
    """Return ``(gate, x, z, h, logits, probs)`` for one problem."""
    d = ne.shape[1]
    e_op = oe[iop]
    gate = 1.0 / (1.0 + np.exp(-(gw @ e_op + gb)))
    x = np.empty(3 * d)
    x[:d] = gate[:d] * ne[ia]
    x[d:2 * d] = gate[d:] * ne[ib]
    x[2 * d:] = e_op
    z = w1 @ x + b1
    h = np.tanh(z)
    logits = w2 @ h + b2
    return gate, x, z, h, logits, _softmax(logits)


def probs(ne, oe, gw, gb, w1, b1, w2, b2, ia, ib, iop):
    return forward(ne, oe, gw, gb, w1, b1, w2, b2, ia, ib, iop)[5]


def backward(ne, oe, gw, w1, w2, ia, ib, iop, gate, x, h, p, target):
    """Gradients of ``-log p[target]``.

    Returns ``(d_ea, d_eb, d_eop, d_gw, d_gb, d_w1, d_b1, d_w2, d_b2)`` where the
    first three are gradients with respect to the embedding rows used.
    """
    d = ne.shape[1]
    dl = p.copy()
    dl[target] -= 1.0
    d_w2 = np.outer(dl, h)
    dz = (w2.T @ dl) * (1.0 - h * h)
    d_w1 = np.outer(dz, x)
    dx = w1.T @ dz
    g_a = gate[:d]
    g_b = gate[d:]
    d_ea = dx[:d] * g_a
    d_eb = dx[d:2 * d] * g_b
    dgate = np.concatenate((dx[:d] * ne[ia], dx[d:2 * d] * ne[ib]))
    du = dgate * gate * (1.0 - gate)
    e_op = oe[iop]
    d_gw = np.outer(du, e_op)
    d_eop = dx[2 * d:] + gw.T @ du
    return d_ea, d_eb, d_eop, d_gw, du, d_w1, dz, d_w2, dl


def train_step(ne, oe, gw, gb, w1, b1, w2, b2, ia, ib, iop, target, lr):
    """Forward, backward and SGD update in place. Returns the pre-update loss."""
    gate, x, _, h, _, p = forward(ne, oe, gw, gb, w1, b1, w2, b2, ia, ib, iop)
    loss = -math.log(max(p[target], PROB_FLOOR))
    d_ea, d_eb, d_eop, d_gw, d_gb, d_w1, d_b1, d_w2, d_b2 = backward(
        ne, oe, gw, w1, w2, ia, ib, iop, gate, x, h, p, target)
    ne[ia] -= lr * d_ea
    ne[ib] -= lr * d_eb
    oe[iop] -= lr * d_eop
    gw -= lr * d_gw
    gb -= lr * d_gb
    w1 -= lr * d_w1
    b1 -= lr * d_b1
    w2 -= lr * d_w2
    b2 -= lr * d_b2
    return loss
