"""Fidelity sweeps for the constant Pauli connection on square loops,
persisted as CSV with optional SVG figures.

Three sweep kinds mirror the standard experiments:

* ``loop_size``      — fidelity vs square side L at fixed sigma and
  correlation length (knot count scales with L so lambda_c stays put);
* ``error_magnitude`` — fidelity vs per-component error std sigma at fixed
  L and lambda_c;
* ``error_count``    — fidelity vs knot count N_err at fixed L and sigma
  (lambda_c = 4L / N_err is derived per point).

Config files are flat ``key = value`` text; '#' starts a comment.  Known
keys: sweep_kind, sweep_values (comma separated, strictly increasing),
L, sigma, n_err, lambda_c, n_samples, seed, grid_per_unit, out_csv,
out_svg.  CLI flags override file values.

Output CSV schema (12 significant digits, '.' decimal separator)::

    sweep,mc_mean,mc_stderr,theory,smallness,n_samples,wall_time_s

Re-running a config with the same seed reproduces the CSV byte for byte in
every column except wall_time_s, for any worker count.  The optional SVG
overlays Monte Carlo points (with error bars), the second-order theory
curve, and — for the magnitude and count sweeps — the naive exponential
fit ``0.5 + 0.5 exp(-alpha sigma**2)`` or ``0.5 + 0.5 exp(-beta / N_err)``
for visual comparison; the true decay involves matrix exponentials and is
not captured by the scalar fit, which is never used for gating.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .connection import pauli_connection
from .fidelity_lab import mc_fidelity, van_kampen_fidelity
from .noise import NoiseSpec
from .param_geometry import square_loop
from .su_algebra import build_basis, decompose
from .transport import TransportConvergenceError

__all__ = [
    "ExperimentConfig",
    "SweepRow",
    "ConfigError",
    "NumericFailure",
    "load_config_file",
    "build_config",
    "run_sweep",
    "emit_outputs",
    "main",
]

_SWEEP_KINDS = ("loop_size", "error_magnitude", "error_count")
_CONFIG_KEYS = ("sweep_kind", "sweep_values", "L", "sigma", "n_err",
                "lambda_c", "n_samples", "seed", "grid_per_unit", "out_csv",
                "out_svg")
CSV_HEADER = "sweep,mc_mean,mc_stderr,theory,smallness,n_samples,wall_time_s"


class ConfigError(ValueError):
    """Invalid or inconsistent sweep configuration (CLI exit code 2)."""


class NumericFailure(RuntimeError):
    """Numeric breakdown during a sweep (CLI exit code 3); carries the rows
    completed before the failure so they can be flushed."""

    def __init__(self, message: str, rows=None):
        super().__init__(message)
        self.rows = rows or []


@dataclass(frozen=True)
class ExperimentConfig:
    sweep_kind: str
    sweep_values: tuple
    n_samples: int
    seed: int
    grid_per_unit: float
    out_csv: Path
    L: float | None = None
    sigma: float | None = None
    n_err: int | None = None
    lambda_c: float | None = None
    out_svg: Path | None = None
    plot: bool = False
    workers: int = 1


@dataclass(frozen=True)
class SweepRow:
    sweep_value: float
    mc_mean: float
    mc_stderr: float
    theory: float
    smallness: float
    n_samples: int
    wall_time_s: float


def load_config_file(path) -> dict:
    """Parse a flat key = value config file into a string dict."""
    raw = {}
    text = Path(path).read_text(encoding="utf-8")
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
        raw[key] = value
    return raw


def _parse_float(raw, key):
    try:
        return float(raw[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {raw[key]!r}") from exc


def _parse_int(raw, key):
    try:
        return int(raw[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {raw[key]!r}") from exc


def build_config(raw: dict, *, seed=None, n_samples=None, plot=False,
                 workers=None, out_csv=None, out_svg=None) -> ExperimentConfig:
    """Validate raw config values; keyword arguments (from CLI flags)
    override file values."""
    if "sweep_kind" not in raw:
        raise ConfigError("missing required key: sweep_kind")
    kind = raw["sweep_kind"]
    if kind not in _SWEEP_KINDS:
        raise ConfigError(f"sweep_kind must be one of {_SWEEP_KINDS}, got {kind!r}")
    if "sweep_values" not in raw:
        raise ConfigError("missing required key: sweep_values")
    try:
        values = tuple(float(tok) for tok in raw["sweep_values"].split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad sweep_values: {raw['sweep_values']!r}") from exc
    if len(values) < 1:
        raise ConfigError("sweep_values is empty")
    if any(b <= a for a, b in zip(values[:-1], values[1:])):
        raise ConfigError("sweep_values must be strictly increasing")

    fixed = {"L": None, "sigma": None, "n_err": None, "lambda_c": None}
    required = {"loop_size": ("sigma", "lambda_c"),
                "error_magnitude": ("L", "lambda_c"),
                "error_count": ("L", "sigma")}[kind]
    swept = {"loop_size": "L", "error_magnitude": "sigma",
             "error_count": "n_err"}[kind]
    for key in fixed:
        if key in raw:
            if key == swept:
                raise ConfigError(f"{key} is the swept parameter of a {kind} "
                                  "sweep and cannot also be fixed")
            fixed[key] = _parse_int(raw, key) if key == "n_err" else _parse_float(raw, key)
    for key in required:
        if fixed[key] is None:
            # error_magnitude may pin the knot count directly instead
            if kind == "error_magnitude" and key == "lambda_c" \
                    and fixed["n_err"] is not None:
                continue
            raise ConfigError(f"{kind} sweep requires key {key!r}")
    if kind == "error_count" and fixed["lambda_c"] is not None:
        raise ConfigError("error_count sweeps derive lambda_c per point; "
                          "do not fix it")
    if kind == "error_count":
        for v in values:
            if v != int(v) or int(v) < 4:
                raise ConfigError(f"error_count sweep values must be integers >= 4, got {v}")
    for key, cond, msg in (("L", lambda v: v > 0, "positive"),
                           ("sigma", lambda v: v >= 0, "nonnegative"),
                           ("lambda_c", lambda v: v > 0, "positive"),
                           ("n_err", lambda v: v >= 4, "at least 4")):
        if fixed[key] is not None and not cond(fixed[key]):
            raise ConfigError(f"{key} must be {msg}, got {fixed[key]}")

    n_samp = n_samples if n_samples is not None else (
        _parse_int(raw, "n_samples") if "n_samples" in raw else 2000)
    if n_samp < 2:
        raise ConfigError(f"n_samples must be at least 2, got {n_samp}")
    seed_val = seed if seed is not None else (
        _parse_int(raw, "seed") if "seed" in raw else 0)
    if seed_val < 0:
        raise ConfigError(f"seed must be nonnegative, got {seed_val}")
    gpu = _parse_float(raw, "grid_per_unit") if "grid_per_unit" in raw else 100.0
    if gpu <= 0:
        raise ConfigError(f"grid_per_unit must be positive, got {gpu}")
    csv_path = Path(out_csv) if out_csv else (
        Path(raw["out_csv"]) if "out_csv" in raw else None)
    if csv_path is None:
        raise ConfigError("missing required key: out_csv")
    svg_path = Path(out_svg) if out_svg else (
        Path(raw["out_svg"]) if "out_svg" in raw else csv_path.with_suffix(".svg"))
    nwork = workers if workers is not None else 1
    if nwork < 1:
        raise ConfigError(f"workers must be at least 1, got {nwork}")

    return ExperimentConfig(sweep_kind=kind, sweep_values=values,
                            n_samples=n_samp, seed=seed_val,
                            grid_per_unit=gpu, out_csv=csv_path,
                            out_svg=svg_path, plot=bool(plot), workers=nwork,
                            **fixed)


def _point_seed(seed: int, index: int) -> int:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return int(seq.generate_state(1, np.uint64)[0])


def _point_params(cfg: ExperimentConfig, value: float):
    if cfg.sweep_kind == "loop_size":
        side = value
        sigma = cfg.sigma
        n_err = max(4, round(4.0 * side / cfg.lambda_c))
    elif cfg.sweep_kind == "error_magnitude":
        side = cfg.L
        sigma = value
        n_err = cfg.n_err if cfg.n_err is not None \
            else max(4, round(4.0 * side / cfg.lambda_c))
    else:
        side = cfg.L
        sigma = cfg.sigma
        n_err = int(value)
    return side, sigma, n_err


def run_sweep(cfg: ExperimentConfig) -> list:
    """Monte Carlo plus second-order prediction at every sweep value.

    Deterministic under a fixed seed (each point derives its own noise
    stream from (seed, point index)); a transport failure aborts with the
    completed rows attached to the raised :class:`NumericFailure`.
    """
    basis = build_basis(2)
    conn = pauli_connection()
    rho_in = decompose(np.diag([1.0, 0.0]), basis)
    rows = []
    for i, value in enumerate(cfg.sweep_values):
        side, sigma, n_err = _point_params(cfg, value)
        loop = square_loop(side)
        spec = NoiseSpec(n_err=n_err, sigma=sigma, seed=_point_seed(cfg.seed, i))
        start = time.perf_counter()
        try:
            mc = mc_fidelity(conn, loop, rho_in, spec, cfg.n_samples, basis,
                             grid_per_unit=cfg.grid_per_unit,
                             n_workers=cfg.workers)
            theory = van_kampen_fidelity(conn, loop, rho_in, spec, basis,
                                         grid_per_unit=cfg.grid_per_unit)
        except TransportConvergenceError as exc:
            raise NumericFailure(f"sweep point {value} failed: {exc}",
                                 rows=rows) from exc
        wall = time.perf_counter() - start
        row = SweepRow(sweep_value=value, mc_mean=mc.mean,
                       mc_stderr=mc.stderr, theory=theory.mean,
                       smallness=theory.smallness, n_samples=cfg.n_samples,
                       wall_time_s=wall)
        for field in ("mc_mean", "mc_stderr", "theory", "smallness"):
            if not np.isfinite(getattr(row, field)):
                raise NumericFailure(
                    f"non-finite {field} at sweep point {value}", rows=rows)
        rows.append(row)
    return rows


def _write_csv(rows, path: Path) -> None:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            format(r.sweep_value, ".12g"), format(r.mc_mean, ".12g"),
            format(r.mc_stderr, ".12g"), format(r.theory, ".12g"),
            format(r.smallness, ".12g"), str(r.n_samples),
            format(r.wall_time_s, ".6g")]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fit_decay(x: np.ndarray, f: np.ndarray) -> float | None:
    """Least-squares rate of 0.5 + 0.5 exp(-rate * x) on log-transformed
    residuals; None when too few points sit above the 0.5 floor."""
    mask = f > 0.5 + 1e-9
    if np.count_nonzero(mask) < 2:
        return None
    y = np.log(2.0 * (f[mask] - 0.5))
    xs = x[mask]
    denom = float(xs @ xs)
    if denom == 0.0:
        return None
    return float(-(xs @ y) / denom)


def _sweep_fit(cfg: ExperimentConfig, rows) -> dict:
    values = np.array([r.sweep_value for r in rows])
    mc = np.array([r.mc_mean for r in rows])
    if cfg.sweep_kind == "error_magnitude":
        alpha = _fit_decay(values ** 2, mc)
        if alpha is not None:
            return {"model": "0.5 + 0.5*exp(-alpha*sigma**2)", "alpha": alpha}
    elif cfg.sweep_kind == "error_count":
        beta = _fit_decay(1.0 / values, mc)
        if beta is not None:
            return {"model": "0.5 + 0.5*exp(-beta/n_err)", "beta": beta}
    return {}


def _fit_curve(cfg: ExperimentConfig, fit: dict, xs: np.ndarray):
    if "alpha" in fit:
        return 0.5 + 0.5 * np.exp(-fit["alpha"] * xs ** 2)
    if "beta" in fit:
        return 0.5 + 0.5 * np.exp(-fit["beta"] / xs)
    return None


_X_LABELS = {"loop_size": "loop size L",
             "error_magnitude": "error magnitude sigma",
             "error_count": "error knot count N_err"}


def _render_svg(cfg: ExperimentConfig, rows, fit: dict, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.array([r.sweep_value for r in rows])
    mc = np.array([r.mc_mean for r in rows])
    err = np.array([r.mc_stderr for r in rows])
    theory = np.array([r.theory for r in rows])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.errorbar(x, mc, yerr=err, fmt="o", ms=4, capsize=2.5, color="C0",
                label="MC")
    ax.plot(x, theory, "-", color="C1", label="theory")
    if fit:
        xs = np.linspace(x[0], x[-1], 256)
        curve = _fit_curve(cfg, fit, xs)
        if curve is not None:
            ax.plot(xs, curve, "--", color="C2", label="fit")
    ax.set_xlabel(_X_LABELS[cfg.sweep_kind])
    ax.set_ylabel("fidelity")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_outputs(rows, cfg: ExperimentConfig) -> list:
    """Write the CSV (always), a fit sidecar when a fit applies, and the SVG
    when plotting is enabled; returns the written paths."""
    if not rows:
        raise ValueError("no rows to emit")
    written = []
    _write_csv(rows, cfg.out_csv)
    written.append(cfg.out_csv)
    fit = _sweep_fit(cfg, rows)
    if fit:
        meta_path = cfg.out_csv.with_suffix(".meta.json")
        meta = {"sweep_kind": cfg.sweep_kind, "fit": fit,
                "n_samples": cfg.n_samples, "seed": cfg.seed}
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
        written.append(meta_path)
    if cfg.plot and cfg.out_svg is not None:
        _render_svg(cfg, rows, fit, cfg.out_svg)
        written.append(cfg.out_svg)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="holofid",
        description="holonomic-gate fidelity sweeps (Monte Carlo vs "
                    "second-order prediction)")
    sub = parser.add_subparsers(dest="command", required=True)
    sweep = sub.add_parser("sweep", help="run a configured sweep")
    sweep.add_argument("--config", required=True, help="key=value config file")
    sweep.add_argument("--seed", type=int, help="override the config seed")
    sweep.add_argument("--samples", type=int,
                       help="override the Monte Carlo sample count")
    sweep.add_argument("--plot", action="store_true",
                       help="also render the SVG figure")
    sweep.add_argument("--workers", type=int, default=None,
                       help="Monte Carlo worker processes (default 1)")
    sweep.add_argument("--out-csv", help="override the CSV output path")
    sweep.add_argument("--out-svg", help="override the SVG output path")
    args = parser.parse_args(argv)

    try:
        raw = load_config_file(args.config)
        cfg = build_config(raw, seed=args.seed, n_samples=args.samples,
                           plot=args.plot, workers=args.workers,
                           out_csv=args.out_csv, out_svg=args.out_svg)
    except (ConfigError, OSError) as exc:
        print(f"holofid: config error: {exc}", file=sys.stderr)
        return 2

    try:
        rows = run_sweep(cfg)
    except NumericFailure as exc:
        print(f"holofid: numeric failure: {exc}", file=sys.stderr)
        if exc.rows:
            try:
                emit_outputs(exc.rows, cfg)
                print(f"holofid: flushed {len(exc.rows)} completed rows to "
                      f"{cfg.out_csv}", file=sys.stderr)
            except OSError as io_exc:
                print(f"holofid: could not flush partial results: {io_exc}",
                      file=sys.stderr)
        return 3

    try:
        written = emit_outputs(rows, cfg)
    except OSError as exc:
        print(f"holofid: cannot write outputs: {exc}", file=sys.stderr)
        return 2
    for row in rows:
        print(f"sweep={row.sweep_value:g} mc={row.mc_mean:.6f} "
              f"+- {row.mc_stderr:.6f} theory={row.theory:.6f} "
              f"smallness={row.smallness:.3g} ({row.wall_time_s:.1f}s)")
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
