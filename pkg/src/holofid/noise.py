"""Random knot-displacement noise on closed loops.

A perturbed loop is built by placing ``n_err`` knots on the ideal loop,
equally spaced by arc length with knot 0 at the loop start, shifting every
knot except knot 0 by an independent isotropic gaussian, and resplining.
Knot 0 stays pinned so the perturbed and ideal loops share their start
point.

Randomness is counter-based: each realization draws from its own Philox
stream keyed by (seed, realization index), so results do not depend on how
realizations are scheduled across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .param_geometry import ClosedSpline, ParamLoop, arc_length_params, fit_closed_spline

__all__ = [
    "NoiseSpec",
    "ErrorRealization",
    "realization_rng",
    "perturb_loop",
    "covariance",
    "corr_length",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseSpec:
    """Knot count, per-component displacement std, and reproducibility seed."""

    n_err: int
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.n_err < 4:
            raise ValueError(f"n_err must be at least 4, got {self.n_err}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")


@dataclass(frozen=True)
class ErrorRealization:
    """One noise draw: knot displacements (row 0 exactly zero) and the
    resplined perturbed loop."""

    displacements: np.ndarray
    perturbed: ClosedSpline


def realization_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for realization ``index`` under
    ``seed``; identical (seed, index) pairs reproduce bit-identical draws."""
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_displacements(rng: np.random.Generator, n_err: int, dim: int,
                       sigma: float) -> np.ndarray:
    """Gaussian knot displacements, (n_err, dim), with row 0 forced to zero."""
    disp = np.zeros((n_err, dim))
    disp[1:] = sigma * rng.standard_normal((n_err - 1, dim))
    return disp


def perturb_loop(loop: ParamLoop, spec: NoiseSpec,
                 stream: np.random.Generator) -> ErrorRealization:
    """Shift equally spaced knots on ``loop`` by isotropic gaussian errors
    and respline."""
    s_knots = arc_length_params(loop, spec.n_err)
    base = loop.eval(s_knots)
    disp = draw_displacements(stream, spec.n_err, loop.dim, spec.sigma)
    return ErrorRealization(displacements=disp,
                            perturbed=fit_closed_spline(base + disp))


def covariance(spec: NoiseSpec, dim: int = 2) -> np.ndarray:
    """Displacement covariance: sigma**2 times the identity (isotropic)."""
    return spec.sigma ** 2 * np.eye(dim)


def corr_length(loop: ParamLoop, spec: NoiseSpec) -> float:
    """Arc-length scale between independent errors: loop length / n_err."""
    return loop.length / spec.n_err
