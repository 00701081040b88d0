"""Geometric lifts of sampled paths.

The piecewise-linear lift is exact: a straight segment with increment v has
level-2 increment v (x) v / 2, and longer stretches are glued with Chen's
relation. Brownian (Stratonovich) lifts are obtained by simulating on a mesh
``refine_factor`` times finer than the output grid, lifting piecewise-linearly
and coarsening.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .roughpath import GridRoughPath, RoughPathError, _rho_alpha, check_alpha
from .seeding import make_rng


class ResourceError(RuntimeError):
    """A requested enumeration exceeds its configured budget."""


@dataclass(frozen=True)
class LiftConfig:
    """Resolution of a simulated lift.

    Attributes:
        target_steps: number of steps m of the output grid.
        refine_factor: fine sub-steps per output step used to build the areas.
        seed: root seed.
    """

    target_steps: int = 64
    refine_factor: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.target_steps < 1 or self.refine_factor < 1:
            raise ValueError("target_steps and refine_factor must be >= 1")

    @property
    def fine_steps(self) -> int:
        return self.target_steps * self.refine_factor


def uniform_grid(horizon: float, steps: int) -> np.ndarray:
    return np.linspace(0.0, float(horizon), int(steps) + 1)


# ---------------------------------------------------------------------------
# batched kernels


def _segment_level2(points: np.ndarray) -> np.ndarray:
    """Level-2 steps of the piecewise-linear interpolant, shape (..., M, e, e)."""
    dx = np.diff(points, axis=-2)
    return 0.5 * dx[..., :, None] * dx[..., None, :]


def _coarsen(level1: np.ndarray, level2: np.ndarray, factor: int):
    """Chen-compose blocks of ``factor`` consecutive steps.

    ``level1`` (..., M+1, e) and ``level2`` (..., M, e, e) with M divisible by
    ``factor``. Returns the coarse (level1, level2).
    """
    M = level2.shape[-3]
    if M % factor:
        raise RoughPathError(f"{M} fine steps are not divisible by {factor}")
    if factor == 1:
        return level1, level2
    e = level1.shape[-1]
    m = M // factor
    lead = level1.shape[:-2]
    dx = np.diff(level1, axis=-2).reshape(*lead, m, factor, e)
    rel = np.cumsum(dx, axis=-2) - dx
    terms = level2.reshape(*lead, m, factor, e, e) + rel[..., :, None] * dx[..., None, :]
    coarse2 = np.cumsum(terms, axis=-3)[..., -1, :, :]
    return level1[..., ::factor, :], coarse2


def lift_arrays(points: np.ndarray, factor: int = 1):
    """Lift batched fine points and coarsen by ``factor``; returns (level1, level2)."""
    points = np.asarray(points, dtype=float)
    return _coarsen(points, _segment_level2(points), factor)


def brownian_points(rng: np.random.Generator, shape: tuple, steps: int, dim: int,
                    horizon: float, x0=None) -> np.ndarray:
    """Brownian sample paths of shape (*shape, steps+1, dim) started at ``x0``."""
    h = horizon / steps
    dw = rng.standard_normal((*shape, steps, dim)) * np.sqrt(h)
    pts = np.concatenate([np.zeros((*shape, 1, dim)), np.cumsum(dw, axis=-2)], axis=-2)
    if x0 is not None:
        pts = pts + np.asarray(x0, dtype=float)[..., None, :]
    return pts


# ---------------------------------------------------------------------------


def lift_piecewise_linear(points, times=None, horizon: float | None = None) -> GridRoughPath:
    """Exact level-2 lift of the polygon through ``points``.

    Args:
        points: array (M+1, e) or (M+1,) of path values on a uniform grid.
        times: optional grid; defaults to ``linspace(0, horizon, M+1)``.
        horizon: terminal time when ``times`` is not given (default 1).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        raise RoughPathError("need at least two points to lift")
    if times is None:
        times = uniform_grid(1.0 if horizon is None else horizon, pts.shape[0] - 1)
    return GridRoughPath(times, pts, _segment_level2(pts), {"lift": "piecewise_linear"})


def coarsen(p: GridRoughPath, factor: int) -> GridRoughPath:
    """Restrict ``p`` to every ``factor``-th grid node, composing steps by Chen."""
    l1, l2 = _coarsen(p.level1, p.level2, factor)
    return GridRoughPath(p.times[::factor], l1, l2, dict(p.meta))


def lift_fine(points, cfg: LiftConfig | None = None, horizon: float = 1.0,
              times=None) -> GridRoughPath:
    """Lift a fine sample and coarsen it to the resolution requested by ``cfg``.

    Without ``cfg`` the lift is kept at the sample's own resolution.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    M = pts.shape[0] - 1
    factor = 1
    if cfg is not None:
        if M != cfg.fine_steps:
            raise RoughPathError(
                f"sample has {M} steps, config expects {cfg.target_steps}x{cfg.refine_factor}")
        factor = cfg.refine_factor
    if times is None:
        times = uniform_grid(horizon, M)
    l1, l2 = lift_arrays(pts, factor)
    return GridRoughPath(np.asarray(times)[::factor], l1, l2)


def lift_brownian(dim: int, horizon: float, cfg: LiftConfig, x0=None,
                  stream: tuple = ()) -> GridRoughPath:
    """Stratonovich Brownian rough path at resolution ``cfg.target_steps``."""
    rng = make_rng(cfg.seed, *stream)
    pts = brownian_points(rng, (), cfg.fine_steps, dim, horizon, x0)
    l1, l2 = lift_arrays(pts, cfg.refine_factor)
    meta = {"lift": "brownian", "seed_lineage": [cfg.seed, *stream],
            "refine_factor": cfg.refine_factor}
    return GridRoughPath(uniform_grid(horizon, cfg.target_steps), l1, l2, meta)


def brownian_lift_batch(n: int, dim: int, horizon: float, cfg: LiftConfig,
                        stream: tuple = (), chunk: int = 4096):
    """``n`` independent Brownian lifts as arrays (level1 (n,m+1,e), level2 (n,m,e,e)).

    Chunk ``i`` draws from stream ``(*stream, i)``.
    """
    l1s, l2s = [], []
    for i, start in enumerate(range(0, n, chunk)):
        size = min(chunk, n - start)
        rng = make_rng(cfg.seed, *stream, i)
        pts = brownian_points(rng, (size,), cfg.fine_steps, dim, horizon)
        l1, l2 = lift_arrays(pts, cfg.refine_factor)
        l1s.append(l1)
        l2s.append(l2)
    return np.concatenate(l1s), np.concatenate(l2s)


def levy_area(level2: np.ndarray, i: int = 0, j: int = 1) -> np.ndarray:
    """Antisymmetric part ``(XX^{ij} - XX^{ji}) / 2`` of level-2 increments."""
    return 0.5 * (level2[..., i, j] - level2[..., j, i])


def total_level2(level1: np.ndarray, level2: np.ndarray) -> np.ndarray:
    """Level-2 increment over the whole grid, batched."""
    dx = np.diff(level1, axis=-2)
    rel = level1[..., :-1, :] - level1[..., :1, :]
    return np.sum(level2 + rel[..., :, None] * dx[..., None, :], axis=-3)


def lift_k_layer(paths, cfg: LiftConfig | None = None, horizon: float = 1.0,
                 times=None) -> GridRoughPath:
    """Joint lift of ``k`` d-dimensional samples stacked into R^{kd}.

    Args:
        paths: sequence of k arrays (M+1, d) (or GridRoughPath, whose level-1
            points are used) sharing one fine grid; repeats are allowed.
        cfg: output resolution; ``None`` keeps the sample grid.
    """
    arrays = []
    for p in paths:
        if isinstance(p, GridRoughPath):
            if times is None:
                times = p.times
            elif not np.array_equal(times, p.times):
                raise RoughPathError("layers live on different grids")
            p = p.level1
        a = np.asarray(p, dtype=float)
        arrays.append(a[:, None] if a.ndim == 1 else a)
    if not arrays:
        raise RoughPathError("need at least one layer")
    if len({a.shape for a in arrays}) != 1:
        raise RoughPathError(f"layers have different shapes {[a.shape for a in arrays]}")
    stacked = np.concatenate(arrays, axis=-1)
    out = lift_fine(stacked, cfg, horizon=horizon, times=times)
    return GridRoughPath(out.times, out.level1, out.level2,
                         {"lift": "k_layer", "k": len(arrays), "d": arrays[0].shape[1]})


def tuple_lift_arrays(base: np.ndarray, tuples: np.ndarray, factor: int = 1):
    """Joint lifts of index tuples into a base of fine paths, batched.

    ``base`` has shape (n, M+1, d) and ``tuples`` shape (A, k). Returns
    (level1 (A, m+1, kd), level2 (A, m, kd, kd)).
    """
    tuples = np.asarray(tuples, dtype=int)
    A, k = tuples.shape
    n, M1, d = base.shape
    stacked = np.transpose(base[tuples], (0, 2, 1, 3)).reshape(A, M1, k * d)
    return lift_arrays(stacked, factor)


# ---------------------------------------------------------------------------


def piecewise_linear_resample(points: np.ndarray, m: int) -> np.ndarray:
    """Values on the fine grid of the polygon through every (M/m)-th point.

    Batched over leading dimensions; M must be divisible by m.
    """
    M = points.shape[-2] - 1
    if M % m:
        raise RoughPathError(f"{M} fine steps are not divisible by {m}")
    r = M // m
    knots = points[..., ::r, :]
    frac = (np.arange(r) / r)[:, None]
    left = knots[..., :-1, None, :]
    right = knots[..., 1:, None, :]
    inner = (left + frac * (right - left)).reshape(*points.shape[:-2], M, points.shape[-1])
    return np.concatenate([inner, knots[..., -1:, :]], axis=-2)


@dataclass
class DecayRow:
    m: int
    mean_distance: float
    std_error: float
    exp_moment: float
    exp_moment_se: float


def approximation_error_decay(dim: int, horizon: float, alpha: float, m_list, cfg: LiftConfig,
                              n_samples: int = 1000, c: float = 0.1, eta: float = 0.05,
                              chunk: int = 250) -> list[DecayRow]:
    """Distance between the Brownian lift and its m-point piecewise-linear re-lift.

    Each sample is simulated on ``cfg.fine_steps`` steps; the reference lift is
    that sample coarsened to ``cfg.target_steps``. For every m in ``m_list`` the
    polygon through m+1 equally spaced sample points is lifted on the same fine
    mesh and coarsened identically, and ``d_alpha`` is evaluated on the output
    grid together with ``exp(c m^(eta/2) d_alpha)``.
    """
    alpha = check_alpha(alpha)
    if not (0 < eta < 0.5 - alpha):
        raise ValueError(f"eta must lie in (0, 1/2 - alpha), got {eta}")
    m_list = [int(m) for m in m_list]
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be increasing")
    times = uniform_grid(horizon, cfg.target_steps)
    dists = {m: [] for m in m_list}
    for i, start in enumerate(range(0, n_samples, chunk)):
        size = min(chunk, n_samples - start)
        rng = make_rng(cfg.seed, 0, i)
        pts = brownian_points(rng, (size,), cfg.fine_steps, dim, horizon)
        ref1, ref2 = lift_arrays(pts, cfg.refine_factor)
        for m in m_list:
            approx = piecewise_linear_resample(pts, m)
            a1, a2 = lift_arrays(approx, cfg.refine_factor)
            dists[m].append(_rho_alpha(ref1, ref2, a1, a2, times, alpha))
    rows = []
    for m in m_list:
        d = np.concatenate(dists[m])
        w = np.exp(c * m ** (eta / 2) * d)
        rows.append(DecayRow(m, float(d.mean()), float(d.std(ddof=1) / np.sqrt(d.size)),
                             float(w.mean()), float(w.std(ddof=1) / np.sqrt(w.size))))
    return rows


def map_F_k(measure, k: int, cfg: LiftConfig | None = None, max_atoms: int = 10**6):
    """Push the k-fold product of a path measure forward under the joint lift.

    Atoms are all k-tuples with repetition; weights multiply.
    """
    from .measures import RoughPathMeasure

    n = measure.size
    if n ** k > max_atoms:
        raise ResourceError(
            f"{n}^{k} = {n ** k} atoms exceed the budget {max_atoms}; subsample the measure first")
    tuples = np.array(np.meshgrid(*[np.arange(n)] * k, indexing="ij")).reshape(k, -1).T
    weights = np.prod(measure.weights[tuples], axis=1)
    return RoughPathMeasure.from_tuples(measure, tuples, weights, cfg=cfg, exact=True)
