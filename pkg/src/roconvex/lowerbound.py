"""Lower-bound certification from a radial majorant, via column splitting.

A function with f(x0) = 0, Df(x0) = 0 that is dominated by a non-decreasing
radial majorant G can be bounded below by -C G, with C obtained by unrolling
the column-splitting recurrence 2 f(x_i) <= f(x_{i+1}) + G: each column of x is
reflected in turn, and every reflection stays on the same Frobenius sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import MatrixShape, ball_samples
from .corpus import FunctionHandle


class TangencyError(ValueError):
    """The candidate majorant fails to dominate the recentered function."""


@dataclass(frozen=True)
class ColumnSplit:
    """Partial-column truncations x_i, rank-one columns d_i, and reflections y_i."""

    x: np.ndarray  # (m, n)
    partials: np.ndarray  # (n, m, n): partials[i] keeps columns 0..i
    columns: np.ndarray  # (n, m, n): columns[i] = x_col_i (x) e_i
    reflections: np.ndarray  # (n, m, n): reflections[i] = partials[i] - 2 columns[i]

    def midpoint_residual(self) -> float:
        """max_i | x_i - (x_{i+1} + y_{i+1}) / 2 |; zero by construction."""
        worst = 0.0
        n = self.x.shape[1]
        for i in range(n - 1):
            mid = 0.5 * self.partials[i + 1] + 0.5 * self.reflections[i + 1]
            worst = max(worst, float(np.max(np.abs(self.partials[i] - mid))))
        return worst


def column_split(x: np.ndarray) -> ColumnSplit:
    """Split x into its column filtration; verifies the midpoint identity."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("column_split expects a single matrix")
    m, n = x.shape
    partials = np.zeros((n, m, n))
    cols = np.zeros((n, m, n))
    refl = np.zeros((n, m, n))
    for i in range(n):
        partials[i, :, : i + 1] = x[:, : i + 1]
        cols[i, :, i] = x[:, i]
        refl[i] = partials[i] - 2.0 * cols[i]
    split = ColumnSplit(x, partials, cols, refl)
    res = split.midpoint_residual()
    if res > 1e-12 * max(1.0, float(np.max(np.abs(x)))):
        raise AssertionError(f"midpoint identity violated by {res}")
    return split


def coordinate_split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise filtration analog (one coordinate flipped at a time); experimental
    variant for separately convex functions."""
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    k = m * n
    partials = np.zeros((k, m, n))
    refl = np.zeros((k, m, n))
    flat = x.reshape(-1)
    for i in range(k):
        p = np.zeros(k)
        p[: i + 1] = flat[: i + 1]
        partials[i] = p.reshape(m, n)
        q = p.copy()
        q[i] = -q[i]
        refl[i] = q.reshape(m, n)
    return partials, refl


def lemma_constant(n: int) -> int:
    """The unrolled recurrence constant: C(n) = 2^(n-1) - 1 over n columns."""
    if n < 1:
        raise ValueError("column count must be >= 1")
    return 2 ** (n - 1) - 1


def lemma_constant_separate(coord_count: int) -> int:
    """Same recurrence over single-coordinate flips; experimental."""
    if coord_count < 1:
        raise ValueError("coordinate count must be >= 1")
    return 2 ** (coord_count - 1) - 1


@dataclass(frozen=True)
class RadialMajorant:
    """G(x) = g(|x - x0|) for a non-decreasing tabulated profile g.

    `kind` is 'step' (right-edge lookup on the radius table; what the empirical
    builder produces) or 'quadratic' (exact (A/2) t^2 with the table kept for
    serialization).
    """

    x0: np.ndarray  # (dim,) coordinates
    radii: np.ndarray  # increasing table edges, radii[0] > 0
    values: np.ndarray  # non-decreasing, >= 0
    kind: str = "step"
    quadratic_coefficient: float = 0.0

    def __post_init__(self) -> None:
        radii = np.asarray(self.radii, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if radii.ndim != 1 or radii.size == 0 or np.any(np.diff(radii) <= 0):
            raise ValueError("majorant radii must be strictly increasing")
        if values.shape != radii.shape:
            raise ValueError("majorant table shape mismatch")
        if np.any(np.diff(values) < 0) or np.any(values < 0):
            raise ValueError("majorant profile must be non-negative and non-decreasing")
        if self.kind not in ("step", "quadratic"):
            raise ValueError(f"unknown majorant kind {self.kind!r}")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "values", values)

    def profile(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * self.quadratic_coefficient * t * t
        if np.any(t > self.radii[-1] * (1.0 + 1e-9)):
            raise ValueError("majorant queried beyond its table")
        idx = np.searchsorted(self.radii, t * (1.0 - 1e-12), side="left")
        idx = np.minimum(idx, self.radii.size - 1)
        return self.values[idx]

    def evaluate(self, shape: MatrixShape, coords: np.ndarray) -> np.ndarray:
        dist = shape.frob_norm_coords(np.asarray(coords, dtype=float) - self.x0)
        return self.profile(dist)

    def table(self) -> list[tuple[float, float]]:
        return [(float(r), float(v)) for r, v in zip(self.radii, self.values)]


def quadratic_majorant(x0: np.ndarray, A: float, radius: float, bins: int = 32) -> RadialMajorant:
    radii = np.linspace(radius / bins, radius, bins)
    return RadialMajorant(
        x0=np.asarray(x0, dtype=float),
        radii=radii,
        values=0.5 * A * radii**2,
        kind="quadratic",
        quadratic_coefficient=float(A),
    )


def recentered_values(
    f: FunctionHandle, x0: np.ndarray, coords: np.ndarray
) -> tuple[np.ndarray, float, np.ndarray]:
    """Values of f(x) - f(x0) - Df(x0).(x - x0); the gradient is exact when available."""
    shape = f.shape
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    f0 = float(f.value_at_coords(x0[None, :])[0])
    if f.gradient is not None:
        g0 = f.gradient_at_coords(x0)
    else:
        g0 = f.fd_gradient(shape.coords_to_matrix(x0))
    d = shape.coords_to_matrix(coords) - shape.coords_to_matrix(x0)
    lin = np.einsum("ij,...ij->...", g0, d)
    vals = f.value_at_coords(coords) - f0 - lin
    return vals, f0, g0


def empirical_majorant(
    f: FunctionHandle,
    x0: np.ndarray,
    samples: np.ndarray,
    bins: int = 50,
    augment_columns: bool = True,
) -> RadialMajorant:
    """Monotone running-max majorant of the recentered function over radius bins.

    The build set is augmented with the column-split reflections of every
    sample; reflections stay on the same sphere, which keeps the certificate
    sharp for functions that are convex along rank-one segments.
    """
    shape = f.shape
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    pts = np.asarray(samples, dtype=float)
    if augment_columns:
        extra = []
        mats = shape.coords_to_matrix(pts) - shape.coords_to_matrix(x0)
        for k in range(pts.shape[0]):
            split = column_split(mats[k])
            for i in range(shape.cols):
                extra.append(shape.matrix_to_coords(split.reflections[i] + shape.coords_to_matrix(x0)))
                extra.append(shape.matrix_to_coords(split.partials[i] + shape.coords_to_matrix(x0)))
        pts = np.concatenate([pts, np.asarray(extra)], axis=0)
    vals, _, _ = recentered_values(f, x0, pts)
    dist = shape.frob_norm_coords(pts - x0)
    rmax = float(np.max(dist))
    edges = np.linspace(rmax / bins, rmax, bins)
    idx = np.minimum(np.searchsorted(edges, dist * (1.0 - 1e-12), side="left"), bins - 1)
    binmax = np.full(bins, -math.inf)
    np.maximum.at(binmax, idx, vals)
    binmax = np.maximum(binmax, 0.0)  # clamp: the profile must stay >= 0
    profile = np.maximum.accumulate(binmax)
    return RadialMajorant(x0=x0, radii=edges, values=profile, kind="step")


@dataclass(frozen=True)
class LowerBoundCertificate:
    x0: tuple[float, ...]
    constant: float
    min_slack: float
    witness: tuple[float, ...]
    samples_used: int
    tangency_margin: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "x0": list(self.x0),
            "constant": self.constant,
            "min_slack": self.min_slack,
            "witness": list(self.witness),
            "samples_used": self.samples_used,
            "tangency_margin": self.tangency_margin,
            "passed": self.passed,
        }


def lower_bound_certify(
    f: FunctionHandle,
    x0: np.ndarray,
    majorant: RadialMajorant,
    samples: np.ndarray,
    C: float | None = None,
    tol: float = 1e-6,
    tangency_tol: float = 1e-9,
) -> LowerBoundCertificate:
    """Certify f~ >= -C G over the samples, after verifying tangency f~ <= G.

    The recentering f~ = f - f(x0) - Df(x0)(x - x0) is applied internally;
    a tangency violation raises TangencyError naming the violating sample.
    """
    shape = f.shape
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    pts = np.asarray(samples, dtype=float)
    if C is None:
        C = float(lemma_constant(shape.cols))
    vals, _, _ = recentered_values(f, x0, pts)
    g_vals = majorant.evaluate(shape, pts)
    tangency = vals - g_vals
    k_bad = int(np.argmax(tangency))
    if tangency[k_bad] > tangency_tol:
        raise TangencyError(
            f"majorant fails to dominate at sample {pts[k_bad].tolist()} "
            f"(excess {tangency[k_bad]:.3e})"
        )
    slack = vals + C * g_vals
    k = int(np.argmin(slack))
    return LowerBoundCertificate(
        x0=tuple(float(v) for v in x0),
        constant=float(C),
        min_slack=float(slack[k]),
        witness=tuple(float(v) for v in pts[k]),
        samples_used=int(pts.shape[0]),
        tangency_margin=float(tangency[k_bad]),
        passed=bool(slack[k] >= -tol),
    )


def majorant_from_theta(
    f: FunctionHandle,
    x0: np.ndarray,
    A: float,
    certified_opening: float | None,
    radius: float = 1.0,
) -> RadialMajorant:
    """Quadratic majorant g(t) = (A/2) t^2, gated on an opening certificate <= A."""
    if certified_opening is None:
        raise ValueError("a certified opening at x0 is required")
    if certified_opening > A * (1.0 + 1e-9):
        raise ValueError(f"certified opening {certified_opening} exceeds A = {A}")
    return quadratic_majorant(np.asarray(x0, dtype=float), A, radius)


def sup_growth_check(
    f: FunctionHandle,
    x0: np.ndarray,
    A: float,
    radii: Sequence[float],
    sample_count: int = 2000,
    seed: int = 0,
) -> list[tuple[float, float, float]]:
    """Sampled sup of |f~| on B_r(x0) against (1 + C) (A/2) r^2 per radius."""
    shape = f.shape
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    C = float(lemma_constant(shape.cols))
    rows = []
    for r in radii:
        pts = ball_samples(shape, x0, float(r), sample_count, rng)
        vals, _, _ = recentered_values(f, x0, pts)
        sup = float(np.max(np.abs(vals)))
        bound = (1.0 + C) * 0.5 * A * r * r
        rows.append((float(r), sup, bound))
    return rows
