"""Least-opening touching paraboloids and the superlevel tail experiment.

The opening at a point x0 against a finite constraint cloud {y} is

    a(p) = max_y  max(0, 2 (f(y) - f(x0) - p.(y - x0)) / |y - x0|^2),

a convex piecewise-affine function of the slope p. The solver minimizes a(p)
by subgradient descent with diminishing normalized steps, warm-started at the
gradient (exact when the handle provides one, weighted least squares
otherwise), followed by a few exact line-search polish rounds. A brute-force
slope-grid oracle is provided for small instances; solvers must match it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GridSpec, SampledField, ball_samples, ball_volume, make_grid
from .corpus import FunctionHandle


@dataclass(frozen=True)
class ThetaSolver:
    max_iters: int = 200
    tol: float = 1e-7
    polish_rounds: int = 4
    line_search_iters: int = 44


@dataclass(frozen=True)
class ParaboloidTouch:
    """A paraboloid P(y) = f(x0) + p.(y-x0) + (a/2)|y-x0|^2 with P >= f on the cloud."""

    x0: tuple[float, ...]  # coordinates in storage order
    slope: np.ndarray  # (m, n) matrix
    opening: float
    value_at_x0: float
    converged: bool
    iterations: int

    def to_dict(self) -> dict:
        return {
            "x0": list(self.x0),
            "slope": self.slope.tolist(),
            "opening": self.opening,
            "value_at_x0": self.value_at_x0,
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class ThetaField:
    """Least openings at sampled evaluation points against a fixed constraint grid."""

    source: object
    constraints: GridSpec
    region_radius: float
    eval_coords: np.ndarray
    theta: np.ndarray
    converged: np.ndarray
    touches: tuple[ParaboloidTouch, ...]
    seed: int

    @property
    def count(self) -> int:
        return self.eval_coords.shape[0]


@dataclass(frozen=True)
class TailReport:
    t_grid: np.ndarray
    measure: np.ndarray
    scale: float  # the level is scale * t, scale = C * sup|f|
    region_volume: float
    fitted_epsilon: float | None
    fit_residual: float | None
    nonzero_count: int

    def rows(self) -> list[tuple[float, float]]:
        return [(float(t), float(m)) for t, m in zip(self.t_grid, self.measure)]

    def to_dict(self) -> dict:
        return {
            "t_grid": self.t_grid.tolist(),
            "measure": self.measure.tolist(),
            "scale": self.scale,
            "region_volume": self.region_volume,
            "fitted_epsilon": self.fitted_epsilon,
            "fit_residual": self.fit_residual,
            "nonzero_count": self.nonzero_count,
        }


class _TouchProblem:
    """Constraint data for one evaluation point: c_y and b_y with a(p) = max(0, max(c - B p))."""

    def __init__(self, f: FunctionHandle | SampledField, x0: np.ndarray, constraints: GridSpec):
        shape = constraints.shape
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        grid = make_grid(constraints)
        coords = grid.coords[grid.mask]
        if isinstance(f, SampledField):
            if f.grid != constraints:
                raise ValueError("field constraints must use the field's own grid")
            fy = f.valid_values()
            fx0_arr, ok = f.interpolate(x0[None, :])
            if not ok[0]:
                raise ValueError("x0 is not interpolable on the constraint grid")
            fx0 = float(fx0_arr[0])
        else:
            fy = f.value_at_coords(coords)
            fx0 = float(f.value_at_coords(x0[None, :])[0])
        mats = shape.coords_to_matrix(coords)
        x0m = shape.coords_to_matrix(x0)
        d = (mats - x0m).reshape(mats.shape[0], -1)  # Frobenius-consistent flattening
        q = np.sum(d * d, axis=1)
        keep = q > (1e-9 * constraints.spacing) ** 2
        d, q, fy = d[keep], q[keep], fy[keep]
        if d.shape[0] == 0:
            raise ValueError("constraint cloud is empty after removing x0")
        self.shape = shape
        self.x0 = x0
        self.fx0 = fx0
        self.c = 2.0 * (fy - fx0) / q
        self.B = 2.0 * d / q[:, None]
        self.pdim = d.shape[1]

    def scores(self, p: np.ndarray) -> np.ndarray:
        return self.c - self.B @ p

    def objective(self, p: np.ndarray) -> float:
        return float(np.max(self.scores(p)))

    def ls_slope(self) -> np.ndarray:
        """Least-squares slope with near-constraint emphasis (weights 1/|d|^4)."""
        sol, *_ = np.linalg.lstsq(self.B, self.c, rcond=None)
        return sol


def _line_min(scores0: np.ndarray, bu: np.ndarray, s_max: float, iters: int) -> float:
    """Minimize s -> max(scores0 - s * bu) over [-s_max, s_max] (convex piecewise affine)."""

    def right_deriv(s: float) -> float:
        vals = scores0 - s * bu
        m = np.max(vals)
        act = vals >= m - 1e-12 * max(1.0, abs(m))
        return float(np.max(-bu[act]))

    def left_deriv(s: float) -> float:
        vals = scores0 - s * bu
        m = np.max(vals)
        act = vals >= m - 1e-12 * max(1.0, abs(m))
        return float(np.min(-bu[act]))

    lo, hi = -s_max, s_max
    if right_deriv(lo) >= 0.0:
        return lo
    if left_deriv(hi) <= 0.0:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if right_deriv(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _minimize_opening(prob: _TouchProblem, solver: ThetaSolver, p_init: np.ndarray | None):
    # Normalize by the constraint scale so the iterate path is identical for
    # scaled copies of the same function (exact covariance for power-of-two
    # scalings; 1-ulp otherwise).
    sigma = float(np.max(np.abs(prob.c)))
    if not (sigma > 0.0 and math.isfinite(sigma)):
        sigma = 1.0
    c = prob.c / sigma
    B = prob.B

    def objective(p: np.ndarray) -> float:
        return float(np.max(c - B @ p))

    if p_init is None:
        p0, *_ = np.linalg.lstsq(B, c, rcond=None)
    else:
        p0 = np.asarray(p_init, dtype=float).reshape(-1) / sigma
    p_best = p0.copy()
    f_best = objective(p_best)
    row_norms = np.sqrt(np.sum(B * B, axis=1))
    scale = max(0.5, abs(f_best)) / max(float(np.median(row_norms)), 1e-12)

    # Phase 1: diminishing normalized subgradient steps from the warm start.
    p = p0.copy()
    iterations = 0
    for k in range(solver.max_iters):
        iterations += 1
        scores = c - B @ p
        j = int(np.argmax(scores))
        fval = float(scores[j])
        if fval < f_best:
            f_best = fval
            p_best = p.copy()
        if fval <= 0.0:
            break
        g = -B[j]
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            break
        p = p - (scale / math.sqrt(k + 1.0)) * g / gn

    # Phase 2: exact line searches along the active subgradient and coordinates,
    # plus an active-set equalization step that jumps to the tie point of the
    # currently active constraints (the vertex structure of the max).
    improved = True
    rounds = 0
    while rounds < solver.polish_rounds and improved:
        rounds += 1
        improved = False
        scores = c - B @ p_best
        j = int(np.argmax(scores))
        dirs = [B[j] / max(float(np.linalg.norm(B[j])), 1e-300)]
        dirs.extend(np.eye(prob.pdim))
        top = float(scores[j])
        spread = max(1e-12, 1e-6 * max(1.0, abs(top)))
        active = np.flatnonzero(scores >= top - spread)
        if active.size < prob.pdim + 1:
            order = np.argsort(scores)[::-1]
            active = order[: prob.pdim + 1]
        m = np.concatenate([B[active], np.ones((active.size, 1))], axis=1)
        sol, *_ = np.linalg.lstsq(m, c[active], rcond=None)
        eq_dir = sol[:-1] - p_best
        eq_norm = float(np.linalg.norm(eq_dir))
        if eq_norm > 0:
            dirs.append(eq_dir / eq_norm)
        for u in dirs:
            scores0 = c - B @ p_best
            bu = B @ u
            s = _line_min(scores0, bu, scale, solver.line_search_iters)
            cand = p_best + s * u
            fc = objective(cand)
            if fc < f_best - solver.tol * max(1.0, abs(f_best)):
                f_best = fc
                p_best = cand
                improved = True

    if p_init is not None and np.array_equal(p_best, p0):
        p_out = np.asarray(p_init, dtype=float).reshape(-1)  # keep the exact warm start
    else:
        p_out = sigma * p_best
    # Store the opening exactly as the certificate replay recomputes it.
    f_out = prob.objective(p_out)
    converged = bool(np.all(np.isfinite(p_out)) and math.isfinite(f_out))
    return p_out, max(0.0, f_out), converged, iterations


def theta_upper(
    f: FunctionHandle | SampledField,
    x0: np.ndarray,
    constraints: GridSpec,
    solver: ThetaSolver = ThetaSolver(),
) -> ParaboloidTouch:
    """Least opening of a paraboloid tangent from above at x0 over the constraint grid."""
    prob = _TouchProblem(f, x0, constraints)
    p_init = None
    if isinstance(f, FunctionHandle) and f.gradient is not None:
        p_init = f.gradient_at_coords(prob.x0).reshape(-1)
    p, a, converged, iterations = _minimize_opening(prob, solver, p_init)
    slope = p.reshape(constraints.shape.rows, constraints.shape.cols)
    return ParaboloidTouch(
        x0=tuple(float(v) for v in prob.x0),
        slope=slope,
        opening=float(a),
        value_at_x0=prob.fx0,
        converged=converged,
        iterations=iterations,
    )


def replay_opening(
    f: FunctionHandle | SampledField, touch: ParaboloidTouch, constraints: GridSpec
) -> float:
    """Re-evaluate the constraint maximum at the certified slope."""
    prob = _TouchProblem(f, np.asarray(touch.x0), constraints)
    return max(0.0, prob.objective(touch.slope.reshape(-1)))


def touch_feasibility_gap(
    f: FunctionHandle | SampledField, touch: ParaboloidTouch, constraints: GridSpec
) -> float:
    """max_y f(y) - P(y); <= 0 up to roundoff by construction."""
    shape = constraints.shape
    grid = make_grid(constraints)
    coords = grid.coords[grid.mask]
    if isinstance(f, SampledField):
        fy = f.valid_values()
    else:
        fy = f.value_at_coords(coords)
    x0 = np.asarray(touch.x0)
    d = (shape.coords_to_matrix(coords) - shape.coords_to_matrix(x0)).reshape(coords.shape[0], -1)
    q = np.sum(d * d, axis=1)
    pvals = touch.value_at_x0 + d @ touch.slope.reshape(-1) + 0.5 * touch.opening * q
    return float(np.max(fy - pvals))


def theta_upper_bruteforce(
    f: FunctionHandle | SampledField,
    x0: np.ndarray,
    constraints: GridSpec,
    grid_points: int = 21,
    refinements: int = 3,
) -> tuple[np.ndarray, float]:
    """Dense slope-grid oracle: evaluate the opening on a refined product grid in p.

    Independent of the descent path; intended for small instances (p dimension <= 2).
    """
    shape = constraints.shape
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    grid = make_grid(constraints)
    coords = grid.coords[grid.mask]
    if isinstance(f, SampledField):
        fy = f.valid_values()
        fx0_arr, ok = f.interpolate(x0[None, :])
        if not ok[0]:
            raise ValueError("x0 is not interpolable on the constraint grid")
        fx0 = float(fx0_arr[0])
    else:
        fy = f.value_at_coords(coords)
        fx0 = float(f.value_at_coords(x0[None, :])[0])
    d = (shape.coords_to_matrix(coords) - shape.coords_to_matrix(x0)).reshape(coords.shape[0], -1)
    q = np.sum(d * d, axis=1)
    keep = q > (1e-9 * constraints.spacing) ** 2
    d, q, fy = d[keep], q[keep], fy[keep]
    pdim = d.shape[1]
    if pdim > 2 and grid_points**pdim > 200_000:
        raise ValueError("brute-force oracle is restricted to small slope dimensions")

    def opening(p_flat: np.ndarray) -> float:
        terms = 2.0 * (fy - fx0 - d @ p_flat) / q
        return max(0.0, float(np.max(terms)))

    # Center the first grid at a crude least-squares slope; width from the data scale.
    rows = d / q[:, None] * np.sqrt(q)[:, None]
    rhs = (fy - fx0) / q * np.sqrt(q)
    center, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
    width = max(1.0, 2.0 * opening(center) * float(np.sqrt(np.max(q))))
    best_p, best_a = center.copy(), opening(center)
    for _ in range(refinements + 1):
        axes = [np.linspace(c - width, c + width, grid_points) for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        cloud = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        vals = np.array([opening(p) for p in cloud])
        k = int(np.argmin(vals))
        if vals[k] < best_a:
            best_a = float(vals[k])
            best_p = cloud[k].copy()
        center = cloud[k]
        width *= 3.0 / (grid_points - 1)
    return best_p, best_a


def theta_field(
    f: FunctionHandle | SampledField,
    constraints: GridSpec,
    count: int = 500,
    seed: int = 0,
    region_radius: float | None = None,
    solver: ThetaSolver = ThetaSolver(),
    threads: int = 1,
) -> ThetaField:
    """Least openings at `count` random points of the half-radius ball."""
    shape = constraints.shape
    if region_radius is None:
        region_radius = constraints.radius / 2.0
    rng = np.random.default_rng(seed)
    pts = ball_samples(shape, constraints.center.coords, region_radius, count, rng)

    def solve(k: int) -> ParaboloidTouch:
        return theta_upper(f, pts[k], constraints, solver)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            touches = list(pool.map(solve, range(count)))
    else:
        touches = [solve(k) for k in range(count)]
    theta = np.array([t.opening for t in touches])
    converged = np.array([t.converged for t in touches])
    return ThetaField(
        source=f,
        constraints=constraints,
        region_radius=float(region_radius),
        eval_coords=pts,
        theta=theta,
        converged=converged,
        touches=tuple(touches),
        seed=seed,
    )


def tail_experiment(
    theta: ThetaField,
    f_sup: float,
    t_grid: Sequence[float],
    C: float = 1.0,
) -> TailReport:
    """Estimated measure of {opening > C * f_sup * t} inside the evaluation ball, per t."""
    t_arr = np.asarray(list(t_grid), dtype=float)
    if t_arr.size < 2 or np.any(np.diff(t_arr) <= 0):
        raise ValueError("t_grid must be increasing with at least two entries")
    if t_arr[-1] < 10.0 * t_arr[0] * (1.0 - 1e-9):
        raise ValueError("t_grid must cover at least one decade")
    scale = C * f_sup
    vol = ball_volume(theta.eval_coords.shape[1], theta.region_radius)
    fractions = np.array([float(np.mean(theta.theta > scale * t)) for t in t_arr])
    measure = fractions * vol
    nonzero = measure > 0.0
    eps: float | None = None
    residual: float | None = None
    if int(np.sum(nonzero)) >= 3:
        lt = np.log(t_arr[nonzero])
        lm = np.log(measure[nonzero])
        slope, intercept = np.polyfit(lt, lm, 1)
        eps = float(-slope)
        residual = float(np.max(np.abs(lm - (slope * lt + intercept))))
    return TailReport(
        t_grid=t_arr,
        measure=measure,
        scale=float(scale),
        region_volume=float(vol),
        fitted_epsilon=eps,
        fit_residual=residual,
        nonzero_count=int(np.sum(nonzero)),
    )


def default_tail_t_grid(t_min: float = 2.0, t_max: float = 20.0, points: int = 8) -> np.ndarray:
    return np.exp(np.linspace(math.log(t_min), math.log(t_max), points))
