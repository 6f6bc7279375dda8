"""Parallel transport: path-ordered exponentials, holonomies, Bloch flows.

Conventions, fixed once and enforced by the cross-representation tests:

* state transport solves dU/ds = 1j tau^mu A_mu U with U(0) = I; the
  holonomy is U(1), later path points acting on the left;
* coefficient (Bloch) vectors follow the same flow in the adjoint
  representation, d rho/ds = tau^mu ad(A_mu) rho, whose generator is real
  antisymmetric, so |rho| is conserved;
* path-ordered products compose earliest segment rightmost.

Integration is classical RK4, split at tangent breakpoints so no step
straddles a corner, with step halving until the unitarity (or norm) defect
and the solution change fall below tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .connection import ConnectionField
from .param_geometry import ParamLoop, PathGrid, default_steps, sample_path
from .su_algebra import CoeffVector, LieBasis

__all__ = [
    "TransportResult",
    "ShiftedCurvatureSweep",
    "TransportConvergenceError",
    "ordered_exp",
    "transport_state",
    "transport_bloch",
    "shifted_curvature_sweep",
]

# segment right endpoints are evaluated a hair inside so corner tangents
# resolve to the segment being integrated, not the outgoing edge
_END_BIAS = 1e-9


class TransportConvergenceError(RuntimeError):
    """Step refinement exhausted without meeting tolerance."""

    def __init__(self, message: str, defect: float = float("nan")):
        super().__init__(message)
        self.defect = defect


@dataclass
class TransportResult:
    """Holonomy matrix and/or transported Bloch coefficients."""

    holonomy: np.ndarray | None = None
    bloch_final: np.ndarray | None = None
    bloch_trajectory: tuple[np.ndarray, np.ndarray] | None = None


@dataclass
class ShiftedCurvatureSweep:
    """Curvature transported back to the loop start, sampled along the loop.

    ``tensors[k]`` is the (m, d, d) start-shifted curvature at ``s[k]``;
    ``adjoints[k, mu, nu]`` its (m, m) adjoint matrix; ``transporters[k]``
    the orthogonal adjoint transporter from the start to ``s[k]``.
    """

    s: np.ndarray
    tensors: np.ndarray
    adjoints: np.ndarray
    transporters: np.ndarray


def _segments(loop: ParamLoop) -> list[tuple[float, float]]:
    cuts = [0.0, *loop.breakpoints, 1.0]
    return [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]


def _rk4_span(flow: Callable, y, s0: float, s1: float, n: int,
              record: list | None = None):
    """n RK4 steps of dy/ds = flow(s) @ y across [s0, s1]."""
    h = (s1 - s0) / n
    m_left = flow(s0)
    for i in range(n):
        a = s0 + i * h
        m_mid = flow(a + 0.5 * h)
        last = i == n - 1
        s_right = s1 - _END_BIAS * h if last else a + h
        m_right = flow(s_right)
        k1 = m_left @ y
        k2 = m_mid @ (y + (0.5 * h) * k1)
        k3 = m_mid @ (y + (0.5 * h) * k2)
        k4 = m_right @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if record is not None:
            record.append((s1 if last else a + h, y))
        m_left = m_right
    return y


def _integrate(flow: Callable, y0, loop: ParamLoop, steps: int,
               record: list | None = None):
    y = y0
    for s0, s1 in _segments(loop):
        n = max(1, round(steps * (s1 - s0)))
        y = _rk4_span(flow, y, s0, s1, n, record)
    return y


def _fund_flow(conn: ConnectionField, loop: ParamLoop) -> Callable:
    if conn.constant:
        mats = conn.eval_fund(loop.eval(0.0))

        def flow(s):
            return 1j * np.einsum("d,dij->ij", loop.tangent(s), mats)
    else:
        def flow(s):
            return 1j * np.einsum("d,dij->ij", loop.tangent(s),
                                  conn.eval_fund(loop.eval(s)))
    return flow


def _bloch_flow(conn: ConnectionField, loop: ParamLoop) -> Callable:
    if conn.constant:
        adj = conn.adjoint_at(loop.eval(0.0))

        def flow(s):
            return np.einsum("d,dij->ij", loop.tangent(s), adj)
    else:
        def flow(s):
            return np.einsum("d,dij->ij", loop.tangent(s),
                             conn.adjoint_at(loop.eval(s)))
    return flow


def transport_state(conn: ConnectionField, loop: ParamLoop,
                    grid: PathGrid | None = None, *, tol: float = 1e-8,
                    max_refine: int = 8) -> TransportResult:
    """Holonomy of ``conn`` along ``loop`` in the fundamental representation.

    Integrates the full transporter (one solve serves every initial state)
    with RK4, doubling the step count until both the unitarity defect and
    the holonomy change between refinements are below ``tol``.
    """
    flow = _fund_flow(conn, loop)
    eye = np.eye(conn.dim_hilbert, dtype=complex)
    steps = grid.size if grid is not None else default_steps(loop)
    prev = None
    defect = float("nan")
    for _ in range(max_refine):
        u = _integrate(flow, eye, loop, steps)
        defect = float(np.linalg.norm(u.conj().T @ u - eye))
        if prev is not None and defect < tol \
                and float(np.linalg.norm(u - prev)) < tol:
            return TransportResult(holonomy=u)
        prev = u
        steps *= 2
    raise TransportConvergenceError(
        f"holonomy did not converge below {tol:.1e} within {max_refine} "
        f"refinements (final unitarity defect {defect:.2e})", defect)


def transport_bloch(conn: ConnectionField, loop: ParamLoop,
                    rho_in: CoeffVector, grid: PathGrid | None = None,
                    basis: LieBasis | None = None, *, tol: float = 1e-8,
                    max_refine: int = 8,
                    keep_trajectory: bool = False) -> TransportResult:
    """Transport a coefficient vector along ``loop`` in the adjoint
    representation; returns the final vector and, optionally, the sampled
    trajectory (s values, vectors)."""
    if basis is not None and basis.n != conn.dim_hilbert:
        raise ValueError("basis dimension does not match the connection")
    flow = _bloch_flow(conn, loop)
    rho0 = np.asarray(rho_in.coeffs, dtype=float)
    norm0 = float(np.linalg.norm(rho0))
    steps = grid.size if grid is not None else default_steps(loop)
    prev = None
    drift = float("nan")
    for _ in range(max_refine):
        rho = _integrate(flow, rho0, loop, steps)
        drift = abs(float(np.linalg.norm(rho)) - norm0)
        if prev is not None and drift < tol \
                and float(np.linalg.norm(rho - prev)) < tol:
            trajectory = None
            if keep_trajectory:
                rec: list = [(0.0, rho0)]
                _integrate(flow, rho0, loop, steps, record=rec)
                s_vals = np.array([r[0] for r in rec])
                vecs = np.stack([r[1] for r in rec])
                trajectory = (s_vals, vecs)
            return TransportResult(bloch_final=rho, bloch_trajectory=trajectory)
        prev = rho
        steps *= 2
    raise TransportConvergenceError(
        f"Bloch transport did not converge below {tol:.1e} within "
        f"{max_refine} refinements (final norm drift {drift:.2e})", drift)


def ordered_exp(generator: Callable, grid: PathGrid) -> np.ndarray:
    """Path-ordered exponential of a matrix-valued 1-form coefficient.

    Multiplies exp(generator(s_mid) * ds) over the grid segments, earliest
    segment applied first (rightmost factor); midpoint sampling makes the
    scheme second-order accurate.
    """
    mats = [np.asarray(generator(s)) for s in grid.s_mid]
    shape = mats[0].shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"generator must return square matrices, got {shape}")
    for m in mats:
        if m.shape != shape:
            raise ValueError("generator dimension changed along the path")
    return _ordered_exp_arrays(np.stack(mats), grid.ds)


def _ordered_exp_arrays(mats: np.ndarray, ds: np.ndarray) -> np.ndarray:
    out = np.eye(mats.shape[1], dtype=mats.dtype)
    for m, h in zip(mats, ds):
        out = expm(m * h) @ out
    return out


def _advance_transporter(flow: Callable, v: np.ndarray, s0: float, s1: float,
                         cuts: tuple, max_h: float) -> np.ndarray:
    """Advance the adjoint transporter from s0 to s1, never stepping across
    a breakpoint."""
    if s1 <= s0:
        return v
    pts = [s0] + [c for c in cuts if s0 < c < s1] + [s1]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(np.ceil((b - a) / max_h)))
        v = _rk4_span(flow, v, a, b, n)
    return v


def shifted_curvature_sweep(conn: ConnectionField, loop: ParamLoop,
                            grid: PathGrid | None = None,
                            basis: LieBasis | None = None, *,
                            ortho_tol: float = 1e-6,
                            max_refine: int = 6) -> ShiftedCurvatureSweep:
    """Sweep of the curvature transported back to the loop start.

    Maintains the adjoint transporter V(s) from the start along the loop
    itself and forms G(s) = V(s)^T F(lambda(s)) componentwise in the
    generator index (V is orthogonal, so the transpose is the inverse and
    ||G(s)|| = ||F(lambda(s))|| identically).  Sampled at the grid
    midpoints, matching the midpoint quadrature of ``ordered_exp``.
    """
    basis = basis if basis is not None else conn.basis
    if grid is None:
        grid = sample_path(loop, default_steps(loop))
    flow = _bloch_flow(conn, loop)
    m = basis.dim
    eye = np.eye(m)
    cuts = loop.breakpoints
    base_h = float(np.min(grid.ds)) / 2.0

    transporters = None
    for attempt in range(max_refine):
        max_h = base_h / (2 ** attempt)
        v = eye
        prev_s = 0.0
        stack = np.empty((grid.size, m, m))
        for k, s_mid in enumerate(grid.s_mid):
            v = _advance_transporter(flow, v, prev_s, float(s_mid), cuts, max_h)
            stack[k] = v
            prev_s = float(s_mid)
        v_end = _advance_transporter(flow, v, prev_s, 1.0, cuts, max_h)
        defect = float(np.linalg.norm(v_end.T @ v_end - eye))
        if defect < ortho_tol:
            transporters = stack
            break
    if transporters is None:
        raise TransportConvergenceError(
            f"adjoint transporter lost orthogonality (defect {defect:.2e})",
            defect)

    if conn.constant:
        f0 = conn.curvature_at(grid.points[0])
        tensors_f = np.broadcast_to(f0, (grid.size,) + f0.shape)
    else:
        tensors_f = np.stack([conn.curvature_at(p) for p in grid.points])
    shifted = np.einsum("kba,kbmn->kamn", transporters, tensors_f)
    adjoints = np.einsum("abc,kbmn->kmnac", basis.structure, shifted)
    adjoints = 0.5 * (adjoints - adjoints.swapaxes(3, 4))
    return ShiftedCurvatureSweep(s=grid.s_mid.copy(), tensors=shifted,
                                 adjoints=adjoints, transporters=transporters)
