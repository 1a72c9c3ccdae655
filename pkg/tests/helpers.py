"""Shared test utilities: numeric oracles and a finite-difference checker."""

import numpy as np

from aberkit import tensor as T


def matmul_oracle(a, b):
    """Naive triple-loop matrix product for 2-D arrays."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.result_type(a, b))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv1x1_oracle(x, w):
    """Per-pixel channel mix, nested loops."""
    B, C, H, W = x.shape
    Co = w.shape[0]
    out = np.zeros((B, Co, H, W), dtype=x.dtype)
    for b in range(B):
        for o in range(Co):
            for i in range(H):
                for j in range(W):
                    s = 0.0
                    for c in range(C):
                        s += w[o, c] * x[b, c, i, j]
                    out[b, o, i, j] = s
    return out


def depthwise3x3_oracle(x, w):
    """Depthwise 3x3 with replicate padding, nested loops."""
    B, C, H, W = x.shape
    out = np.zeros_like(x)
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    s = 0.0
                    for di in range(3):
                        for dj in range(3):
                            ii = min(max(i + di - 1, 0), H - 1)
                            jj = min(max(j + dj - 1, 0), W - 1)
                            s += w[c, di, dj] * x[b, c, ii, jj]
                    out[b, c, i, j] = s
    return out


def box_pool_oracle(x, k):
    """k x k box filter with replicate padding, same extents."""
    B, C, H, W = x.shape
    pl = (k - 1) // 2
    out = np.zeros_like(x)
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    s = 0.0
                    for di in range(k):
                        for dj in range(k):
                            ii = min(max(i + di - pl, 0), H - 1)
                            jj = min(max(j + dj - pl, 0), W - 1)
                            s += x[b, c, ii, jj]
                    out[b, c, i, j] = s / (k * k)
    return out


def circular_conv2d_oracle(x, kern):
    """Single-channel circular convolution with the kernel center at the
    anchor, nested loops with modular indexing."""
    H, W = x.shape
    k = kern.shape[0]
    c = k // 2
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(H):
        for j in range(W):
            s = 0.0
            for u in range(k):
                for v in range(k):
                    s += kern[u, v] * x[(i - (u - c)) % H, (j - (v - c)) % W]
            out[i, j] = s
    return out


def fd_gradcheck(f, leaves, h=1e-5, rtol=1e-4, atol=1e-6, rng=None, max_coords=None):
    """Compare tape gradients of scalar-valued ``f(*leaves)`` against central
    finite differences.

    All leaves must be float64 tensors with requires_grad=True.  When
    ``max_coords`` is given, only that many randomly chosen coordinates per
    leaf are perturbed.  Passes when |analytic - fd| <= atol + rtol*|fd|
    at every checked coordinate.
    """
    for t in leaves:
        assert t.dtype == np.float64, "gradient checks need float64"
        t.grad = None
    loss = f(*leaves)
    T.backward(loss)
    grads = [t.grad.copy() for t in leaves]

    for t, g in zip(leaves, grads):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            assert rng is not None
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            up = f(*leaves).item()
            flat[idx] = orig - h
            dn = f(*leaves).item()
            flat[idx] = orig
            fd = (up - dn) / (2.0 * h)
            an = g.reshape(-1)[idx]
            assert abs(an - fd) <= atol + rtol * abs(fd), (
                f"grad mismatch at leaf coord {idx}: analytic={an!r} fd={fd!r}"
            )
    return grads
