"""su(N) generator bases, structure constants, and operator/coefficient maps.

A trace-orthonormal basis ``T_a`` (a = 1 .. N**2 - 1) of Hermitian traceless
N x N matrices carries operators into a real coefficient picture::

    rho = I/N + rho_a T_a,      rho_a = Tr(rho T_a)

Commutators close through a real structure tensor,

    [T_b, T_c] = -1j * C[a, b, c] * T_a,

which is always computed from commutator traces, ``C = 1j Tr([T_b, T_c] T_a)``,
never tabulated.  With the Tr(T_a T_b) = delta_ab normalization used here the
su(2) tensor comes out as ``C[a, b, c] = -sqrt(2) eps_abc``; every downstream
formula uses the derived tensor consistently.  ``ad_map`` lifts a coefficient
vector to the real antisymmetric matrix generating its commutator action on
coefficient vectors (the adjoint representation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LieBasis",
    "CoeffVector",
    "build_basis",
    "structure_constants",
    "decompose",
    "reconstruct",
    "ad_map",
]

_HERMITICITY_RTOL = 1e-6


@dataclass(frozen=True)
class LieBasis:
    """Trace-orthonormal Hermitian basis of su(N).

    Attributes
    ----------
    n : int
        Hilbert-space dimension N >= 2.
    generators : np.ndarray
        Complex array of shape (N**2 - 1, N, N): Hermitian, traceless,
        Tr(T_a T_b) = delta_ab.  Ordering is fixed so coefficient vectors
        are reproducible: symmetric pair generators for j < k in
        lexicographic order, then the antisymmetric pairs, then the
        diagonal generators.  For N = 2 this is exactly sigma_a / sqrt(2).
    structure : np.ndarray
        Real tensor C[a, b, c] with [T_b, T_c] = -1j C[a, b, c] T_a,
        stored exactly antisymmetrized in (b, c).

    Immutable after construction (arrays are write-locked); safe to share
    across threads and worker processes.
    """

    n: int
    generators: np.ndarray
    structure: np.ndarray

    @property
    def dim(self) -> int:
        """Number of generators, N**2 - 1."""
        return self.n * self.n - 1


@dataclass(frozen=True)
class CoeffVector:
    """Trace part plus real generator coefficients of an N x N operator."""

    identity_part: float
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "identity_part", float(self.identity_part))
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))


def build_basis(n: int) -> LieBasis:
    """Construct the trace-orthonormal su(N) basis (generalized Gell-Mann,
    rescaled so that Tr(T_a T_b) = delta_ab).

    Parameters
    ----------
    n : Hilbert-space dimension, n >= 2.

    Raises
    ------
    ValueError
        If n < 2.
    """
    if n < 2:
        raise ValueError(f"su(N) basis needs dimension N >= 2, got {n}")
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    gens = []
    for j in range(n):
        for k in range(j + 1, n):
            m = np.zeros((n, n), dtype=complex)
            m[j, k] = inv_sqrt2
            m[k, j] = inv_sqrt2
            gens.append(m)
    for j in range(n):
        for k in range(j + 1, n):
            m = np.zeros((n, n), dtype=complex)
            m[j, k] = -1j * inv_sqrt2
            m[k, j] = 1j * inv_sqrt2
            gens.append(m)
    for l in range(1, n):
        d = np.zeros(n)
        d[:l] = 1.0
        d[l] = -float(l)
        gens.append(np.diag(d).astype(complex) / np.sqrt(l * (l + 1)))
    generators = np.stack(gens)
    structure = _structure_from_generators(generators)
    generators.flags.writeable = False
    structure.flags.writeable = False
    return LieBasis(n=n, generators=generators, structure=structure)


def _structure_from_generators(generators: np.ndarray) -> np.ndarray:
    prod = np.einsum("bij,cjk->bcik", generators, generators)
    comm = prod - prod.transpose(1, 0, 2, 3)
    c = 1j * np.einsum("bcik,aki->abc", comm, generators)
    if np.max(np.abs(c.imag)) > 1e-10:
        raise ValueError("structure constants came out non-real; basis is not "
                         "trace-orthonormal Hermitian")
    c = c.real
    # exact antisymmetry in (b, c) by construction
    return 0.5 * (c - c.swapaxes(1, 2))


def structure_constants(basis: LieBasis) -> np.ndarray:
    """Structure tensor C[a, b, c] = 1j Tr([T_b, T_c] T_a), recomputed from
    the generators (same construction that populated ``basis.structure``).
    Antisymmetric in (b, c) exactly; total antisymmetry is a property of the
    orthonormal normalization and is checked in the test suite rather than
    assumed.
    """
    return _structure_from_generators(basis.generators)


def decompose(op: np.ndarray, basis: LieBasis) -> CoeffVector:
    """Split an operator into trace part and generator coefficients.

    Returns ``CoeffVector(identity_part=Tr(op)/N, coeffs_a=Tr(op T_a))``.
    Intended for (numerically) Hermitian operators, for which the
    coefficients are real; a gross imaginary residue raises.
    """
    op = np.asarray(op, dtype=complex)
    if op.shape != (basis.n, basis.n):
        raise ValueError(
            f"operator shape {op.shape} does not match basis dimension {basis.n}")
    ident = np.trace(op) / basis.n
    raw = np.einsum("ij,aji->a", op, basis.generators)
    scale = max(1.0, float(np.max(np.abs(raw)) if raw.size else 0.0), abs(ident))
    if max(np.max(np.abs(raw.imag)), abs(ident.imag)) > _HERMITICITY_RTOL * scale:
        raise ValueError("decompose expects a Hermitian operator; imaginary "
                         "coefficient residue exceeds tolerance")
    return CoeffVector(identity_part=ident.real, coeffs=raw.real)


def reconstruct(cv: CoeffVector, basis: LieBasis) -> np.ndarray:
    """Rebuild the N x N operator ``identity_part * I + coeffs_a T_a``.

    Exact inverse of :func:`decompose` on its image.
    """
    coeffs = np.asarray(cv.coeffs, dtype=float)
    if coeffs.shape != (basis.dim,):
        raise ValueError(
            f"coefficient vector length {coeffs.shape} does not match "
            f"basis dimension {basis.dim}")
    out = np.einsum("a,aij->ij", coeffs, basis.generators)
    out[np.diag_indices(basis.n)] += cv.identity_part
    return out


def ad_map(coeffs: np.ndarray, basis: LieBasis) -> np.ndarray:
    """Adjoint-representation matrix of a coefficient vector.

    M[a, c] = C[a, b, c] coeffs[b]; real and exactly antisymmetric, so the
    flows it generates are rotations of coefficient vectors.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.dim,):
        raise ValueError(
            f"coefficient vector length {coeffs.shape} does not match "
            f"basis dimension {basis.dim}")
    m = np.einsum("abc,b->ac", basis.structure, coeffs)
    return 0.5 * (m - m.T)
