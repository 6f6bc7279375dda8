"""Shared builders for randomized transport tests."""

import numpy as np

from holofid import ConnectionField, ParamLoop


def fourier_loop(rng, modes=2, scale=1.0):
    """Random smooth closed loop in the plane from a few Fourier modes."""
    ak = scale * rng.standard_normal((2, modes))
    bk = scale * rng.standard_normal((2, modes))
    # keep the fundamental dominant so the loop stays non-degenerate
    ak[:, 0] += np.array([1.0, 0.0]) * scale
    bk[:, 0] += np.array([0.0, 1.0]) * scale
    ks = np.arange(1, modes + 1)

    def ev(s):
        s = np.asarray(s, dtype=float)
        t = 2.0 * np.pi * np.multiply.outer(s, ks)
        return np.cos(t) @ ak.T + np.sin(t) @ bk.T

    def tg(s):
        s = np.asarray(s, dtype=float)
        t = 2.0 * np.pi * np.multiply.outer(s, ks)
        w = 2.0 * np.pi * ks
        return (-np.sin(t) * w) @ ak.T + (np.cos(t) * w) @ bk.T

    return ParamLoop(2, ev, tg)


def random_connection(rng, n_hilbert=2, scale=0.4):
    """Random smooth planar connection: affine plus sine coefficient field."""
    m = n_hilbert * n_hilbert - 1
    c0 = scale * rng.standard_normal((2, m))
    c1 = 0.5 * scale * rng.standard_normal((2, m, 2))
    c2 = 0.5 * scale * rng.standard_normal((2, m, 2))
    freq = 0.5 + rng.uniform(0.0, 1.0, size=(2,))

    def coeffs(pts):
        lin = np.einsum("amj,nj->nam", c1, pts)
        trig = np.einsum("amj,nj->nam", c2, np.sin(freq * pts))
        return c0[None] + lin + trig

    return ConnectionField(2, n_hilbert, coeffs)
