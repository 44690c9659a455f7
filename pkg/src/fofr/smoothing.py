"""Local-linear kernel estimation of mean functions and covariance surfaces.

The mean smoother fits a kernel-weighted line through the pooled
(time, value) pairs of all subjects at every grid point; the covariance
smoother fits a kernel-weighted plane through the pooled raw cross products
(off-diagonal pairs only, which removes measurement-error bias from the
diagonal).  Observations sharing the exact same time (or time pair) are
collapsed into sufficient statistics first, so densely and regularly
sampled designs cost no more than their number of distinct sites.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from fofr.core import EvalGrid, ObservationSeries
from fofr.errors import (
    AllCandidatesDegenerate,
    DegenerateWindow,
    NoPairs,
    NonFiniteFit,
)

logger = logging.getLogger("fofr")

KERNEL_FAMILIES = ("gaussian", "epanechnikov")

#: relative weight-mass floor below which a window counts as degenerate
MASS_FLOOR = 1e-12

#: sentinel bandwidth values
AUTO = "auto"      # subject-level cross-validated selection
PLUGIN = "plugin"  # gap-based plug-in rule (default)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidths for the mean and covariance smoothers.

    A bandwidth is either an explicit positive float, ``"auto"`` (5-fold
    subject-level CV over a log grid of candidates) or ``"plugin"`` (a
    gap-based rule of thumb, the default).
    """

    family: str = "gaussian"
    bandwidth_mean: float | str = PLUGIN
    bandwidth_cov: float | str = PLUGIN

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        for name, bw in (("bandwidth_mean", self.bandwidth_mean),
                         ("bandwidth_cov", self.bandwidth_cov)):
            if isinstance(bw, str):
                if bw not in (AUTO, PLUGIN):
                    raise ValueError(f"{name} must be a float, 'auto' or 'plugin'")
            elif not (np.isfinite(bw) and bw > 0):
                raise ValueError(f"{name} must be positive, got {bw}")

    def weights(self, u: np.ndarray) -> np.ndarray:
        if self.family == "gaussian":
            return np.exp(-0.5 * u * u)
        return np.maximum(0.0, 0.75 * (1.0 - u * u))


@dataclass(frozen=True)
class MeanFunction:
    grid: EvalGrid
    values: np.ndarray

    def at(self, t) -> np.ndarray:
        """Linear interpolation between grid points (constant beyond ends)."""
        return np.interp(t, self.grid.points, self.values)


@dataclass(frozen=True)
class CovarianceSurface:
    grid: EvalGrid
    values: np.ndarray  # G x G, symmetric


@dataclass(frozen=True)
class StandardizationParams:
    """Mean and variance function of one channel, tabulated on the grid."""

    grid: EvalGrid
    mean_values: np.ndarray
    var_values: np.ndarray

    def mean_at(self, t) -> np.ndarray:
        return np.interp(t, self.grid.points, self.mean_values)

    def var_at(self, t) -> np.ndarray:
        return np.interp(t, self.grid.points, self.var_values)


def _pooled_times(series_set) -> np.ndarray:
    return np.unique(np.concatenate([s.times for s in series_set]))


def plugin_bandwidth(series_set, grid: EvalGrid) -> float:
    """Gap-based default bandwidth.

    Half the median within-subject gap keeps the smoother close to
    interpolation on dense designs without collapsing when many subjects'
    irregular times pool into a near-continuum; the floors guard against
    empty windows near coverage gaps and grid-scale underflow.
    """
    length = grid.interval.length
    gaps = np.concatenate([np.diff(s.times) for s in series_set if len(s) > 1])
    median_gap = float(np.median(gaps)) if len(gaps) else length
    pooled = _pooled_times(series_set)
    edges = np.concatenate([[grid.points[0]], pooled, [grid.points[-1]]])
    max_gap = float(np.max(np.diff(edges))) if len(edges) > 1 else length
    return max(0.5 * median_gap, 0.005 * length, max_gap / 3.0)


def resolve_bandwidths(series_set, kernel: KernelSpec, grid: EvalGrid) -> KernelSpec:
    """Replace sentinel bandwidths with concrete values."""
    out = kernel
    if out.bandwidth_mean == PLUGIN:
        out = replace(out, bandwidth_mean=plugin_bandwidth(series_set, grid))
    elif out.bandwidth_mean == AUTO:
        out = replace(out, bandwidth_mean=select_bandwidth(series_set, kernel.family, grid, "mean"))
    if out.bandwidth_cov == PLUGIN:
        out = replace(out, bandwidth_cov=plugin_bandwidth(series_set, grid))
    elif out.bandwidth_cov == AUTO:
        out = replace(out, bandwidth_cov=select_bandwidth(series_set, kernel.family, grid, "covariance"))
    return out


def _require_float(bw, name):
    if isinstance(bw, str):
        raise ValueError(f"{name} is unresolved ({bw!r}); call resolve_bandwidths first")
    return float(bw)


def _collapse_sites(times: np.ndarray, values: np.ndarray):
    """Collapse exact-duplicate times into (site, count, value-sum) triples."""
    order = np.argsort(times, kind="stable")
    t = times[order]
    v = values[order]
    sites, start = np.unique(t, return_index=True)
    counts = np.diff(np.append(start, len(t))).astype(float)
    sums = np.add.reduceat(v, start)
    return sites, counts, sums


def smooth_mean(series_set, kernel: KernelSpec, grid: EvalGrid) -> MeanFunction:
    """Local-linear mean estimate on the grid from all subjects' pooled data."""
    times = np.concatenate([s.times for s in series_set])
    values = np.concatenate([s.values for s in series_set])
    if len(times) < 2:
        raise DegenerateWindow("mean smoothing needs at least 2 pooled observations")
    h = _require_float(kernel.bandwidth_mean, "bandwidth_mean")
    sites, counts, sums = _collapse_sites(times, values)
    total = float(np.sum(counts))

    out = np.empty(grid.size)
    for g, t0 in enumerate(grid.points):
        d = sites - t0
        w = kernel.weights(d / h) * counts
        mass = float(np.sum(w))
        if not mass > MASS_FLOOR * total:
            raise DegenerateWindow(
                f"effective weight mass vanished at t={t0:.6g} (bandwidth {h:.4g} too small)")
        # centered design [1, t - t0]; intercept is the estimate at t0
        s00 = mass
        s01 = float(np.dot(w, d))
        s11 = float(np.dot(w, d * d))
        # per-site value sums carry the y-dependent terms
        wy = kernel.weights(d / h) * sums
        r0 = float(np.sum(wy))
        r1 = float(np.dot(wy, d))
        det = s00 * s11 - s01 * s01
        if det <= 0 or not np.isfinite(det):
            raise DegenerateWindow(
                f"singular local fit at t={t0:.6g} (bandwidth {h:.4g} too small)")
        out[g] = (s11 * r0 - s01 * r1) / det
    if not np.all(np.isfinite(out)):
        raise NonFiniteFit("mean smoother produced non-finite values")
    return MeanFunction(grid, out)


def _raw_pairs(series_set, mean: MeanFunction):
    """Pooled off-diagonal raw covariance products (t1, t2, U)."""
    t1_parts, t2_parts, u_parts = [], [], []
    for s in series_set:
        m = len(s)
        if m < 2:
            continue
        resid = s.values - mean.at(s.times)
        prod = np.outer(resid, resid)
        off = ~np.eye(m, dtype=bool)
        tt1 = np.broadcast_to(s.times[:, None], (m, m))
        tt2 = np.broadcast_to(s.times[None, :], (m, m))
        t1_parts.append(tt1[off])
        t2_parts.append(tt2[off])
        u_parts.append(prod[off])
    if not t1_parts:
        raise NoPairs("no subject has at least 2 observations")
    return (np.concatenate(t1_parts), np.concatenate(t2_parts), np.concatenate(u_parts))


def _collapse_pair_sites(t1, t2, u):
    key = np.lexsort((t2, t1))
    t1, t2, u = t1[key], t2[key], u[key]
    stacked = np.column_stack([t1, t2])
    _, start = np.unique(stacked, axis=0, return_index=True)
    start = np.sort(start)
    counts = np.diff(np.append(start, len(t1))).astype(float)
    usums = np.add.reduceat(u, start)
    return t1[start], t2[start], counts, usums


def smooth_covariance(series_set, mean: MeanFunction, kernel: KernelSpec,
                      grid: EvalGrid) -> CovarianceSurface:
    """Local-plane fit of pooled raw products on every grid pair, symmetrized."""
    h = _require_float(kernel.bandwidth_cov, "bandwidth_cov")
    t1, t2, u = _raw_pairs(series_set, mean)
    s1, s2, counts, usums = _collapse_pair_sites(t1, t2, u)
    total = float(np.sum(counts))

    # shift to the interval midpoint for conditioning
    c = 0.5 * (grid.points[0] + grid.points[-1])
    g = grid.points - c
    s1 = s1 - c
    s2 = s2 - c
    G = grid.size

    M = np.zeros((5 * G, 3 * G))
    chunk = 20000
    for lo in range(0, len(s1), chunk):
        hi = lo + chunk
        a1, a2 = s1[lo:hi], s2[lo:hi]
        n, su = counts[lo:hi], usums[lo:hi]
        w1 = kernel.weights((a1[None, :] - g[:, None]) / h)
        w2 = kernel.weights((a2[None, :] - g[:, None]) / h)
        A = np.concatenate([w1 * n, w1 * (n * a1), w1 * (n * a1 * a1),
                            w1 * su, w1 * (su * a1)], axis=0)
        B = np.concatenate([w2, w2 * a2, w2 * (a2 * a2)], axis=0)
        M += A @ B.T

    def block(i, j):
        return M[i * G:(i + 1) * G, j * G:(j + 1) * G]

    s00, s01, s02 = block(0, 0), block(1, 0), block(0, 1)
    s11, s22, s12 = block(2, 0), block(0, 2), block(1, 1)
    r0, r1, r2 = block(3, 0), block(4, 0), block(3, 1)

    mass_floor = MASS_FLOOR * total
    if not np.all(s00 > mass_floor):
        a, b = np.unravel_index(int(np.argmin(s00)), s00.shape)
        raise DegenerateWindow(
            f"effective weight mass vanished at (t, t') = "
            f"({grid.points[a]:.6g}, {grid.points[b]:.6g}) (bandwidth {h:.4g} too small)")

    lhs = np.empty((G, G, 3, 3))
    lhs[..., 0, 0] = s00
    lhs[..., 0, 1] = lhs[..., 1, 0] = s01
    lhs[..., 0, 2] = lhs[..., 2, 0] = s02
    lhs[..., 1, 1] = s11
    lhs[..., 1, 2] = lhs[..., 2, 1] = s12
    lhs[..., 2, 2] = s22
    rhs = np.stack([r0, r1, r2], axis=-1)[..., None]
    try:
        coef = np.linalg.solve(lhs, rhs)[..., 0]
    except np.linalg.LinAlgError as exc:
        dets = np.linalg.det(lhs)
        a, b = np.unravel_index(int(np.argmin(np.abs(dets))), dets.shape)
        raise DegenerateWindow(
            f"singular local fit at (t, t') = ({grid.points[a]:.6g}, {grid.points[b]:.6g}) "
            f"(bandwidth {h:.4g} too small)") from exc
    values = coef[..., 0] + coef[..., 1] * g[:, None] + coef[..., 2] * g[None, :]
    if not np.all(np.isfinite(values)):
        raise NonFiniteFit("covariance smoother produced non-finite values")
    values = 0.5 * (values + values.T)
    return CovarianceSurface(grid, values)


def variance_floor(diag: np.ndarray) -> float:
    top = float(np.max(diag)) if np.any(diag > 0) else 1.0
    return 1e-8 * top


def variance_function(surface: CovarianceSurface) -> np.ndarray:
    """Surface diagonal, clipped from below at the variance floor."""
    diag = np.diag(surface.values).copy()
    floor = variance_floor(diag)
    n_clip = int(np.sum(diag < floor))
    if n_clip:
        logger.warning("variance function clipped at %d of %d grid points (floor %.3g)",
                       n_clip, len(diag), floor)
    return np.maximum(diag, floor)


def build_standardization(mean: MeanFunction, surface: CovarianceSurface) -> StandardizationParams:
    return StandardizationParams(mean.grid, mean.values, variance_function(surface))


def standardize(series: ObservationSeries, params: StandardizationParams) -> ObservationSeries:
    """Point-wise Z-score: z = (y - mu(t)) / sqrt(v(t))."""
    mu = params.mean_at(series.times)
    v = params.var_at(series.times)
    return ObservationSeries(series.times, (series.values - mu) / np.sqrt(v))


def destandardize(series: ObservationSeries, params: StandardizationParams) -> ObservationSeries:
    """Exact inverse of standardize: y = z * sqrt(v(t)) + mu(t)."""
    mu = params.mean_at(series.times)
    v = params.var_at(series.times)
    return ObservationSeries(series.times, series.values * np.sqrt(v) + mu)


def bandwidth_candidates(series_set, grid: EvalGrid, n: int = 10) -> np.ndarray:
    pooled = _pooled_times(series_set)
    gaps = np.diff(pooled)
    length = grid.interval.length
    lo = 2.0 * (float(np.median(gaps)) if len(gaps) else 0.05 * length)
    hi = 0.5 * length
    if lo >= hi:
        lo = hi / 10.0
    return np.geomspace(lo, hi, n)


def select_bandwidth(series_set, family: str, grid: EvalGrid, target: str,
                     n_folds: int = 5, n_candidates: int = 10) -> float:
    """5-fold subject-level CV over a log grid of bandwidth candidates.

    Folds split whole subjects so within-subject correlation never leaks
    across the train/validation boundary.  Ties (within 1e-12 relative)
    resolve to the smallest non-degenerate candidate.
    """
    if target not in ("mean", "covariance"):
        raise ValueError(f"unknown target {target!r}")
    series_set = list(series_set)
    n_sub = len(series_set)
    candidates = bandwidth_candidates(series_set, grid, n_candidates)
    folds = np.arange(n_sub) % min(n_folds, n_sub)

    base_mean = None
    if target == "covariance":
        mid = KernelSpec(family, bandwidth_mean=float(np.median(candidates)))
        base_mean = smooth_mean(series_set, mid, grid)

    errors = np.full(len(candidates), np.inf)
    for k, h in enumerate(candidates):
        sse, cnt = 0.0, 0
        try:
            for f in range(int(folds.max()) + 1):
                train = [s for s, ff in zip(series_set, folds) if ff != f]
                test = [s for s, ff in zip(series_set, folds) if ff == f]
                if not train or not test:
                    continue
                if target == "mean":
                    fit = smooth_mean(train, KernelSpec(family, bandwidth_mean=float(h)), grid)
                    for s in test:
                        resid = s.values - fit.at(s.times)
                        sse += float(np.dot(resid, resid))
                        cnt += len(s)
                else:
                    spec = KernelSpec(family, bandwidth_cov=float(h))
                    fit = smooth_covariance(train, base_mean, spec, grid)
                    t1, t2, uu = _raw_pairs(test, base_mean)
                    pred = _interp2(grid, fit.values, t1, t2)
                    resid = uu - pred
                    sse += float(np.dot(resid, resid))
                    cnt += len(uu)
        except (DegenerateWindow, NonFiniteFit, NoPairs):
            continue
        if cnt:
            errors[k] = sse / cnt
    finite = np.isfinite(errors)
    if not np.any(finite):
        raise AllCandidatesDegenerate(
            f"no bandwidth candidate in [{candidates[0]:.4g}, {candidates[-1]:.4g}] produced a fit")
    best = float(np.min(errors[finite]))
    ok = errors <= best + 1e-12 * (1.0 + best)
    return float(candidates[np.flatnonzero(ok)[0]])


def _interp2(grid: EvalGrid, surface: np.ndarray, t1, t2):
    """Bilinear interpolation of a grid-tabulated surface."""
    p = grid.points
    i = np.clip(np.searchsorted(p, t1) - 1, 0, len(p) - 2)
    j = np.clip(np.searchsorted(p, t2) - 1, 0, len(p) - 2)
    a = (t1 - p[i]) / (p[i + 1] - p[i])
    b = (t2 - p[j]) / (p[j + 1] - p[j])
    return ((1 - a) * (1 - b) * surface[i, j] + a * (1 - b) * surface[i + 1, j]
            + (1 - a) * b * surface[i, j + 1] + a * b * surface[i + 1, j + 1])
