"""Connection fields over parameter space, curvature, and curvature oracles.

A connection assigns to every parameter point a Hermitian matrix per
parameter direction, A_mu(lambda).  Fields are carried at coefficient level
(components over the generator basis plus an optional trace part), from
which the matrix, curvature, and adjoint-representation views derive.

Curvature convention, fixed once and verified end to end by the plaquette
oracle (holonomy of an infinitesimal counterclockwise square)::

    F[a, mu, nu] = d_mu A[a, nu] - d_nu A[a, mu] - C[a, b, c] A[b, mu] A[c, nu]

The trace part of the connection generates a global phase only; the adjoint
representation annihilates it, so it never enters coefficient transport.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .su_algebra import LieBasis, build_basis, decompose

__all__ = [
    "ConnectionField",
    "CurvatureValue",
    "pauli_connection",
    "abelian_test_connection",
    "curvature",
    "plaquette_oracle",
    "frobenius_norm_F",
]

_FD_STEP = 1e-5


@dataclass(frozen=True)
class CurvatureValue:
    """Curvature components F[a, mu, nu], antisymmetric in (mu, nu)."""

    tensor: np.ndarray


class ConnectionField:
    """Coefficient-level connection field A_mu(lambda).

    Parameters
    ----------
    dim_param : parameter-space dimension d.
    dim_hilbert : Hilbert-space dimension N.
    coeffs : callable mapping an (n, d) array of parameter points to the
        (n, d, N**2 - 1) real coefficients A[a, mu].
    trace_part : optional callable (n, d) -> (n, d) for the identity
        component of each A_mu; defaults to zero.
    analytic_curvature : optional callable taking one parameter point and
        returning the (N**2 - 1, d, d) curvature tensor.
    constant : set True for fields with no parameter dependence; enables
        cheaper transport paths.
    basis : LieBasis; built for ``dim_hilbert`` when omitted.
    """

    def __init__(self, dim_param: int, dim_hilbert: int, coeffs: Callable,
                 trace_part: Callable | None = None,
                 analytic_curvature: Callable | None = None,
                 constant: bool = False, basis: LieBasis | None = None,
                 name: str = ""):
        self.dim_param = int(dim_param)
        self.dim_hilbert = int(dim_hilbert)
        self.basis = basis if basis is not None else build_basis(dim_hilbert)
        if self.basis.n != self.dim_hilbert:
            raise ValueError("basis dimension does not match dim_hilbert")
        self._coeffs = coeffs
        self._trace = trace_part
        self.analytic_curvature = analytic_curvature
        self.constant = bool(constant)
        self.name = name

    @classmethod
    def from_matrices(cls, dim_param: int, dim_hilbert: int,
                      matrices: Callable, **kwargs) -> "ConnectionField":
        """Build from a matrix-valued evaluator lambda -> (d, N, N).

        Each component must be Hermitian; decomposition raises otherwise.
        """
        basis = kwargs.pop("basis", None) or build_basis(dim_hilbert)

        def coeffs(pts):
            pts = np.atleast_2d(pts)
            out = np.empty((pts.shape[0], dim_param, basis.dim))
            for i, lam in enumerate(pts):
                mats = np.asarray(matrices(lam), dtype=complex)
                for mu in range(dim_param):
                    out[i, mu] = decompose(mats[mu], basis).coeffs
            return out

        def trace_part(pts):
            pts = np.atleast_2d(pts)
            out = np.empty((pts.shape[0], dim_param))
            for i, lam in enumerate(pts):
                mats = np.asarray(matrices(lam), dtype=complex)
                out[i] = np.trace(mats, axis1=-2, axis2=-1).real / dim_hilbert
            return out

        return cls(dim_param, dim_hilbert, coeffs, trace_part=trace_part,
                   basis=basis, **kwargs)

    def coeffs_at(self, points: np.ndarray) -> np.ndarray:
        """Coefficients A[a, mu] at an (n, d) array of points -> (n, d, m)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.asarray(self._coeffs(points), dtype=float)
        expected = (points.shape[0], self.dim_param, self.basis.dim)
        if out.shape != expected:
            raise ValueError(f"coefficient evaluator returned shape {out.shape}, "
                             f"expected {expected}")
        return out

    def trace_at(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self._trace is None:
            return np.zeros((points.shape[0], self.dim_param))
        return np.asarray(self._trace(points), dtype=float)

    def eval_fund(self, lam) -> np.ndarray:
        """Hermitian matrices (d, N, N) at one parameter point."""
        lam = np.asarray(lam, dtype=float)
        a = self.coeffs_at(lam[None])[0]
        a0 = self.trace_at(lam[None])[0]
        mats = np.einsum("db,bij->dij", a, self.basis.generators)
        mats += a0[:, None, None] * np.eye(self.dim_hilbert)[None]
        return mats

    def adjoint_at(self, lam) -> np.ndarray:
        """Adjoint generators (d, m, m), one antisymmetric matrix per
        parameter direction; the trace part drops out."""
        a = self.coeffs_at(np.asarray(lam, dtype=float)[None])[0]
        m = np.einsum("abc,db->dac", self.basis.structure, a)
        return 0.5 * (m - m.transpose(0, 2, 1))

    def curvature_at(self, lam) -> np.ndarray:
        """Curvature tensor (m, d, d) at one point: analytic when supplied,
        otherwise central finite differences plus the commutator term."""
        lam = np.asarray(lam, dtype=float)
        if self.analytic_curvature is not None:
            f = np.asarray(self.analytic_curvature(lam), dtype=float)
            if f.shape != (self.basis.dim, self.dim_param, self.dim_param):
                raise ValueError("analytic curvature has wrong shape")
        else:
            d, m = self.dim_param, self.basis.dim
            h = _FD_STEP
            shifts = np.zeros((2 * d, d))
            for mu in range(d):
                shifts[2 * mu, mu] = h
                shifts[2 * mu + 1, mu] = -h
            vals = self.coeffs_at(lam[None] + shifts)     # (2d, d, m)
            deriv = (vals[0::2] - vals[1::2]) / (2.0 * h)  # deriv[mu, nu, a]
            a0 = self.coeffs_at(lam[None])[0]              # (d, m)
            comm = np.einsum("abc,mb,nc->amn", self.basis.structure, a0, a0)
            f = deriv.transpose(2, 0, 1) - deriv.transpose(2, 1, 0) - comm
        return 0.5 * (f - f.swapaxes(1, 2))


def pauli_connection() -> ConnectionField:
    """Constant two-parameter qubit connection: the x component is the first
    Pauli matrix, the y component the second.

    In the orthonormal basis its only coefficients are A[1, x] = sqrt(2) and
    A[2, y] = sqrt(2); the curvature is constant with F[3, x, y] = 2 sqrt(2)
    and Frobenius norm 4.  The two adjoint generators do not commute with the
    adjoint curvature, so the start-shifted curvature rotates along any loop.
    """
    basis = build_basis(2)
    sqrt2 = np.sqrt(2.0)
    a = np.zeros((2, 3))
    a[0, 0] = sqrt2
    a[1, 1] = sqrt2
    f = np.zeros((3, 2, 2))
    f[2, 0, 1] = 2.0 * sqrt2
    f[2, 1, 0] = -2.0 * sqrt2
    f.flags.writeable = False

    def coeffs(pts):
        return np.broadcast_to(a, (pts.shape[0],) + a.shape).copy()

    return ConnectionField(2, 2, coeffs, analytic_curvature=lambda lam: f,
                           constant=True, basis=basis, name="pauli")


def abelian_test_connection(g: Callable, dg: Callable | None = None) -> ConnectionField:
    """Commuting qubit connection with a single generator direction.

    The y component is g(x) times the diagonal generator; the x component
    vanishes.  Everything commutes, so the curvature is purely the
    derivative term, F[3, x, y] = g'(x), and holonomies reduce to the
    exponential of the enclosed flux.  Pass ``dg`` for an analytic
    curvature; otherwise finite differences are used.

    ``g`` must accept ndarray input.
    """
    basis = build_basis(2)

    def coeffs(pts):
        out = np.zeros((pts.shape[0], 2, 3))
        out[:, 1, 2] = g(pts[:, 0])
        return out

    analytic = None
    if dg is not None:
        def analytic(lam):
            f = np.zeros((3, 2, 2))
            f[2, 0, 1] = dg(lam[0])
            f[2, 1, 0] = -f[2, 0, 1]
            return f

    return ConnectionField(2, 2, coeffs, analytic_curvature=analytic,
                           basis=basis, name="abelian")


def curvature(conn: ConnectionField, at, basis: LieBasis | None = None) -> CurvatureValue:
    """Curvature tensor of ``conn`` at a parameter point."""
    if basis is not None and basis.n != conn.dim_hilbert:
        raise ValueError("basis dimension does not match the connection")
    return CurvatureValue(tensor=conn.curvature_at(at))


def frobenius_norm_F(f: CurvatureValue | np.ndarray) -> float:
    """Root sum of squares over all (a, mu, nu), both orderings counted."""
    tensor = f.tensor if isinstance(f, CurvatureValue) else np.asarray(f)
    return float(np.sqrt(np.sum(tensor ** 2)))


def plaquette_oracle(conn: ConnectionField, at, eps: float,
                     basis: LieBasis | None = None) -> CurvatureValue:
    """Convention-free curvature estimate from infinitesimal holonomies.

    For every plane (mu < nu) transports around the counterclockwise
    eps x eps square based at ``at`` and reads the curvature components off
    the matrix logarithm divided by 1j eps**2.  First-order accurate in eps;
    independent of the curvature formula, so it pins its signs.
    """
    from scipy.linalg import logm

    from .param_geometry import _planar_square, sample_path
    from .transport import transport_state

    if eps <= 0:
        raise ValueError(f"plaquette size must be positive, got {eps}")
    basis = basis if basis is not None else conn.basis
    at = np.asarray(at, dtype=float)
    d, m = conn.dim_param, basis.dim
    tensor = np.zeros((m, d, d))
    for mu in range(d):
        for nu in range(mu + 1, d):
            tiny = _planar_square(eps, at, dim=d, axes=(mu, nu))
            res = transport_state(conn, tiny, grid=sample_path(tiny, 64),
                                  tol=1e-11)
            h = logm(res.holonomy) / (1j * eps ** 2)
            cv = decompose(h, basis)
            tensor[:, mu, nu] = cv.coeffs
            tensor[:, nu, mu] = -cv.coeffs
    return CurvatureValue(tensor=tensor)
