"""Closed paths in control-parameter space: squares, grids, periodic splines.

A path is parametrized by s in [0, 1].  Evaluation wraps s modulo 1, so
``eval(1.0)`` and ``eval(0.0)`` are bit-identical and every loop is closed by
construction.  Tangents are d(lambda)/ds, i.e. they carry the arc-length
scale of the parametrization (a square of side L has |tangent| = 4L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = [
    "ParamLoop",
    "PathGrid",
    "ClosedSpline",
    "square_loop",
    "sample_path",
    "fit_closed_spline",
    "arc_length_params",
    "default_steps",
]


class ParamLoop:
    """Closed path s in [0, 1] -> lambda(s), with tangent and arc length.

    Parameters
    ----------
    dim : parameter-space dimension d.
    eval_fn, tangent_fn : callables taking an array of wrapped parameters
        s in [0, 1), vectorized, returning (..., d) arrays.
    length : total arc length; computed by quadrature when omitted.
    breakpoints : parameter values in (0, 1) where the tangent jumps
        (corners).  Integrators split there and never step across one.
    closed : open paths (transporter segments) skip the closure check and
        do not wrap s.
    """

    def __init__(self, dim: int, eval_fn: Callable, tangent_fn: Callable,
                 length: float | None = None,
                 breakpoints: Sequence[float] = (), closed: bool = True):
        self.dim = int(dim)
        self._eval = eval_fn
        self._tangent = tangent_fn
        self.breakpoints = tuple(sorted(b for b in breakpoints if 0.0 < b < 1.0))
        self.closed = bool(closed)
        if self.closed:
            gap = np.linalg.norm(np.asarray(eval_fn(np.float64(0.0)), float)
                                 - np.asarray(eval_fn(np.float64(1.0 - 1e-12)), float))
            scale = 1.0 + float(np.max(np.abs(eval_fn(np.float64(0.0)))))
            if gap > 1e-6 * scale:
                raise ValueError(f"path does not close: endpoint gap {gap:.3e}")
        self.length = float(length) if length is not None else _quad_length(self)

    def _wrap(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            return s - np.floor(s)
        return np.clip(s, 0.0, 1.0)

    def eval(self, s) -> np.ndarray:
        """Position lambda(s); accepts scalars or arrays of s."""
        return np.asarray(self._eval(self._wrap(s)), dtype=float)

    def tangent(self, s) -> np.ndarray:
        """Velocity d(lambda)/ds; accepts scalars or arrays of s."""
        return np.asarray(self._tangent(self._wrap(s)), dtype=float)


def _quad_length(loop: ParamLoop, samples: int = 4096) -> float:
    mids = (np.arange(samples) + 0.5) / samples
    speed = np.linalg.norm(loop.tangent(mids), axis=-1)
    return float(np.sum(speed) / samples)


@dataclass(frozen=True)
class PathGrid:
    """Uniform discretization of a loop for midpoint-rule line integrals.

    ``tangents`` and ``points`` are evaluated at segment midpoints, so corner
    ambiguity on piecewise paths never lands on a quadrature node.
    """

    s: np.ndarray        # left edges, (K,)
    ds: np.ndarray       # segment widths, (K,)
    s_mid: np.ndarray    # midpoints, (K,)
    points: np.ndarray   # lambda(s_mid), (K, d)
    tangents: np.ndarray  # tangent(s_mid), (K, d)

    @property
    def size(self) -> int:
        return self.s.shape[0]


def sample_path(loop: ParamLoop, steps: int) -> PathGrid:
    """Uniform grid with K = steps segments, ds = 1/K each.

    Raises
    ------
    ValueError
        If steps < 8.
    """
    steps = int(steps)
    if steps < 8:
        raise ValueError(f"need at least 8 path samples, got {steps}")
    s = np.arange(steps) / steps
    ds = np.full(steps, 1.0 / steps)
    s_mid = s + 0.5 / steps
    return PathGrid(s=s, ds=ds, s_mid=s_mid,
                    points=loop.eval(s_mid), tangents=loop.tangent(s_mid))


def default_steps(loop: ParamLoop, per_unit: float = 100.0) -> int:
    """Default grid resolution: ``per_unit`` segments per unit arc length,
    rounded up so breakpoints (if any) fall on segment boundaries."""
    k = max(32, math.ceil(per_unit * max(loop.length, 0.0)))
    sections = len(loop.breakpoints) + 1
    k += (-k) % sections
    return k


def _planar_square(side: float, origin, dim: int = 2, axes=(0, 1)) -> ParamLoop:
    """Axis-aligned square traversed counterclockwise in the (axes) plane."""
    if side <= 0:
        raise ValueError(f"square side must be positive, got {side}")
    origin = np.asarray(origin, dtype=float)
    if origin.shape != (dim,):
        raise ValueError(f"origin must be a {dim}-vector")
    a, b = axes
    ea = np.zeros(dim)
    ea[a] = 1.0
    eb = np.zeros(dim)
    eb[b] = 1.0
    corners = np.stack([origin,
                        origin + side * ea,
                        origin + side * ea + side * eb,
                        origin + side * eb])
    dirs = np.stack([ea, eb, -ea, -eb])
    speed = 4.0 * side

    def eval_vec(s):
        scalar = np.ndim(s) == 0
        u = 4.0 * np.atleast_1d(np.asarray(s, float))
        edge = np.minimum(u.astype(int), 3)
        frac = u - edge
        pos = corners[edge] + (side * frac)[..., None] * dirs[edge]
        return pos[0] if scalar else pos

    def tangent_vec(s):
        scalar = np.ndim(s) == 0
        u = 4.0 * np.atleast_1d(np.asarray(s, float))
        edge = np.minimum(u.astype(int), 3)
        tau = speed * dirs[edge]
        return tau[0] if scalar else tau

    return ParamLoop(dim=dim, eval_fn=eval_vec, tangent_fn=tangent_vec,
                     length=4.0 * side, breakpoints=(0.25, 0.5, 0.75))


def square_loop(side: float, origin=(0.0, 0.0)) -> ParamLoop:
    """Square of side L in the plane, counterclockwise from ``origin``.

    Arc length is exactly 4L; the tangent is piecewise constant with
    |tangent| = 4L, corner values assigned to the outgoing edge.
    """
    return _planar_square(side, origin, dim=2, axes=(0, 1))


class ClosedSpline(ParamLoop):
    """Periodic C2 cubic spline through a closed sequence of knots,
    parametrized by normalized chord length.

    Attributes
    ----------
    knots : (M, d) array of interpolated points.
    coefficients : per-segment cubic polynomial coefficients
        (scipy layout, shape (4, M, d)).
    """

    def __init__(self, knots: np.ndarray, spline: CubicSpline):
        self.knots = knots
        self.spline = spline
        self.coefficients = spline.c
        deriv = spline.derivative()
        super().__init__(dim=knots.shape[1],
                         eval_fn=lambda s: spline(s),
                         tangent_fn=lambda s: deriv(s),
                         breakpoints=())


def fit_closed_spline(knots) -> ClosedSpline:
    """Fit a periodic cubic spline through the given knots.

    The closing segment (last knot back to the first) is implied; do not
    repeat the first knot.  Requires at least 4 knots and rejects coincident
    consecutive knots (zero chord length).
    """
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 2 or knots.shape[0] < 4:
        raise ValueError("need at least 4 knots (rows) to fit a closed spline")
    closed = np.vstack([knots, knots[:1]])
    chords = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    scale = max(1.0, float(np.max(np.abs(knots))))
    if np.any(chords < 1e-12 * scale):
        raise ValueError("coincident consecutive knots; cannot parametrize by "
                         "chord length")
    t = np.concatenate([[0.0], np.cumsum(chords)])
    t /= t[-1]
    spline = CubicSpline(t, closed, axis=0, bc_type="periodic")
    return ClosedSpline(knots=knots, spline=spline)


def arc_length_params(loop: ParamLoop, n: int) -> np.ndarray:
    """Parameter values of n points equally spaced by arc length, starting
    at the loop start (s = 0)."""
    if n < 1:
        raise ValueError("need n >= 1 points")
    fine = max(2048, 64 * n)
    mids = (np.arange(fine) + 0.5) / fine
    speed = np.linalg.norm(loop.tangent(mids), axis=-1)
    cum = np.concatenate([[0.0], np.cumsum(speed) / fine])
    if cum[-1] <= 0.0:
        return np.arange(n) / n
    nodes = np.arange(fine + 1) / fine
    targets = np.arange(n) / n * cum[-1]
    return np.interp(targets, cum, nodes)
