"""Level-2 geometric rough paths sampled on a uniform time grid.

A :class:`GridRoughPath` stores the level-1 points ``X_{t_j}`` and the level-2
increments over consecutive grid steps. Increments over any pair of grid nodes
are recovered with Chen's relation

    XX_{s,t} = XX_{s,u} + XX_{u,t} + X_{s,u} (x) X_{u,t}.

The array helpers prefixed with an underscore accept arbitrary leading batch
dimensions and are shared with the Monte Carlo code in other modules.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_ALPHA = 0.4
GEOMETRIC_TOL = 1e-12
DYADIC_THRESHOLD = 4096


class RoughPathError(ValueError):
    """Invalid rough-path data or arguments."""


def check_alpha(alpha: float) -> float:
    """Return ``alpha`` as float if it lies in the open interval (1/3, 1/2)."""
    alpha = float(alpha)
    if not (1.0 / 3.0 < alpha < 0.5):
        raise RoughPathError(f"Hoelder exponent must lie in (1/3, 1/2), got {alpha}")
    return alpha


# ---------------------------------------------------------------------------
# batched array kernels


def _chen_cumulative(level1: np.ndarray, level2: np.ndarray) -> np.ndarray:
    """Level-2 increments from the first node, ``XX_{t_0, t_j}`` for all j.

    ``level1`` has shape (..., m+1, e), ``level2`` (..., m, e, e); the result has
    shape (..., m+1, e, e) with a zero matrix at j = 0.
    """
    dx = np.diff(level1, axis=-2)
    x_rel = level1[..., :-1, :] - level1[..., :1, :]
    cross = x_rel[..., :, None] * dx[..., None, :]
    cum = np.cumsum(level2 + cross, axis=-3)
    zero = np.zeros_like(cum[..., :1, :, :])
    return np.concatenate([zero, cum], axis=-3)


def _pair_increments(level1: np.ndarray, cum2: np.ndarray, s: int):
    """Increments (X_{s,t}, XX_{s,t}) for fixed start node ``s`` and all t > s."""
    x_st = level1[..., s + 1:, :] - level1[..., s:s + 1, :]
    x_0s = level1[..., s, :] - level1[..., 0, :]
    xx_st = (cum2[..., s + 1:, :, :] - cum2[..., s:s + 1, :, :]
             - x_0s[..., None, :, None] * x_st[..., :, None, :])
    return x_st, xx_st


def _frob(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def _hoelder_terms(level1: np.ndarray, level2: np.ndarray, times: np.ndarray,
                   alpha: float, dyadic: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Sup over grid pairs of |X_{s,t}|/|t-s|^a and |XX_{s,t}|^(1/2)/|t-s|^a.

    Batched over leading dimensions. ``dyadic`` restricts to pairs whose index
    gap is a power of two (O(m log m) pairs).
    """
    cum2 = _chen_cumulative(level1, level2)
    m = level1.shape[-2] - 1
    batch = level1.shape[:-2]
    sup1 = np.zeros(batch)
    sup2 = np.zeros(batch)
    if dyadic:
        gap = 1
        while gap <= m:
            x_st = level1[..., gap:, :] - level1[..., :-gap, :]
            x_0s = level1[..., :-gap, :] - level1[..., :1, :]
            xx_st = (cum2[..., gap:, :, :] - cum2[..., :-gap, :, :]
                     - x_0s[..., :, None] * x_st[..., None, :])
            dt = (times[gap:] - times[:-gap]) ** alpha
            sup1 = np.maximum(sup1, np.max(np.linalg.norm(x_st, axis=-1) / dt, axis=-1))
            sup2 = np.maximum(sup2, np.max(np.sqrt(_frob(xx_st)) / dt, axis=-1))
            gap *= 2
        return sup1, sup2
    for s in range(m):
        x_st, xx_st = _pair_increments(level1, cum2, s)
        dt = (times[s + 1:] - times[s]) ** alpha
        sup1 = np.maximum(sup1, np.max(np.linalg.norm(x_st, axis=-1) / dt, axis=-1))
        sup2 = np.maximum(sup2, np.max(np.sqrt(_frob(xx_st)) / dt, axis=-1))
    return sup1, sup2


def _rho_alpha(p1: np.ndarray, p2: np.ndarray, q1: np.ndarray, q2: np.ndarray,
               times: np.ndarray, alpha: float) -> np.ndarray:
    """Inhomogeneous Hoelder distance between two batches of grid rough paths."""
    cp = _chen_cumulative(p1, p2)
    cq = _chen_cumulative(q1, q2)
    m = p1.shape[-2] - 1
    batch = np.broadcast_shapes(p1.shape[:-2], q1.shape[:-2])
    sup1 = np.zeros(batch)
    sup2 = np.zeros(batch)
    for s in range(m):
        xp, xxp = _pair_increments(p1, cp, s)
        xq, xxq = _pair_increments(q1, cq, s)
        dt = times[s + 1:] - times[s]
        sup1 = np.maximum(sup1, np.max(np.linalg.norm(xp - xq, axis=-1) / dt ** alpha, axis=-1))
        sup2 = np.maximum(sup2, np.max(_frob(xxp - xxq) / dt ** (2 * alpha), axis=-1))
    start = np.linalg.norm(p1[..., 0, :] - q1[..., 0, :], axis=-1)
    return start + sup1 + sup2


def _omega_matrix(level1: np.ndarray, level2: np.ndarray) -> np.ndarray:
    """Control |X_{s,t}| + |XX_{s,t}|^(1/2) for all grid pairs, batched.

    Returns shape (..., m+1, m+1); only the strict upper triangle is filled.
    """
    cum2 = _chen_cumulative(level1, level2)
    m = level1.shape[-2] - 1
    om = np.zeros((*level1.shape[:-2], m + 1, m + 1))
    for s in range(m):
        x_st, xx_st = _pair_increments(level1, cum2, s)
        om[..., s, s + 1:] = np.linalg.norm(x_st, axis=-1) + np.sqrt(_frob(xx_st))
    return om


def _stopping_times_batch(level1: np.ndarray, level2: np.ndarray, alpha: float) -> list[list[int]]:
    """Greedy unit-variation stopping indices for a batch (A, m+1, e) of paths."""
    q = 1.0 / alpha
    wq = _omega_matrix(level1, level2) ** q
    A, m = wq.shape[0], wq.shape[-1] - 1
    best = np.full((A, m + 1), -np.inf)
    best[:, 0] = 0.0
    taus: list[list[int]] = [[] for _ in range(A)]
    for j in range(1, m + 1):
        best[:, j] = np.max(best[:, :j] + wq[:, :j, j], axis=1)
        hit = np.nonzero(best[:, j] >= 1.0)[0]
        for a in hit:
            taus[a].append(j)
        if hit.size:
            best[hit, :j] = -np.inf
            best[hit, j] = 0.0
    return taus


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridRoughPath:
    """A level-2 geometric rough path on a uniform grid.

    Attributes:
        times: grid ``t_0 = 0 < ... < t_m = T`` of shape (m+1,).
        level1: points ``X_{t_j}`` of shape (m+1, e).
        level2: consecutive-step increments ``XX_{t_j, t_{j+1}}``, shape (m, e, e).
        meta: free-form provenance (seed lineage, construction parameters).
    """

    times: np.ndarray
    level1: np.ndarray
    level2: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        level1 = np.array(self.level1, dtype=float)
        level2 = np.array(self.level2, dtype=float)
        if level1.ndim == 1:
            level1 = level1[:, None]
        if times.ndim != 1 or times.size < 2:
            raise RoughPathError("need at least one grid step")
        if np.any(np.diff(times) <= 0):
            raise RoughPathError("times must be strictly increasing")
        m, e = times.size - 1, level1.shape[-1]
        if level1.shape != (m + 1, e) or level2.shape != (m, e, e):
            raise RoughPathError(
                f"shape mismatch: times {times.shape}, level1 {level1.shape}, level2 {level2.shape}")
        dx = np.diff(level1, axis=0)
        sym = 0.5 * (level2 + np.swapaxes(level2, -1, -2))
        resid = np.max(np.abs(sym - 0.5 * dx[:, :, None] * dx[:, None, :]), initial=0.0)
        scale = max(1.0, float(np.max(np.abs(level2), initial=0.0)))
        if resid > GEOMETRIC_TOL * scale:
            raise RoughPathError(f"level-2 steps are not geometric (residual {resid:.3e})")
        for name, arr in (("times", times), ("level1", level1), ("level2", level2)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.level1.shape[1]

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def x0(self) -> np.ndarray:
        return self.level1[0]

    def increments(self) -> np.ndarray:
        return np.diff(self.level1, axis=0)

    def chen_increment(self, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
        return chen_increment(self, a, b)

    def dilate(self, lam: float) -> "GridRoughPath":
        """Dilation: level-1 increments scale by ``lam``, level-2 by ``lam**2``.

        The initial point is kept.
        """
        x = self.level1[0] + lam * (self.level1 - self.level1[0])
        return GridRoughPath(self.times, x, lam * lam * self.level2, dict(self.meta))

    def inverse(self) -> "GridRoughPath":
        """Time reversal, starting from the terminal point."""
        l2 = np.swapaxes(self.level2[::-1], -1, -2)
        x = self.level1[::-1]
        return GridRoughPath(self.times, x, l2, dict(self.meta))

    def to_csv(self, path, alpha: float | None = None) -> None:
        write_path_csv(self, path, alpha=alpha)


def zero_path(times, dim: int, x0=None) -> GridRoughPath:
    times = np.asarray(times, dtype=float)
    m = times.size - 1
    x = np.zeros((m + 1, dim)) if x0 is None else np.tile(np.asarray(x0, float), (m + 1, 1))
    return GridRoughPath(times, x, np.zeros((m, dim, dim)))


def chen_increment(p: GridRoughPath, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X_{t_a,t_b}, XX_{t_a,t_b})`` by left-to-right Chen composition."""
    if not (0 <= a < b <= p.steps):
        raise RoughPathError(f"need 0 <= a < b <= {p.steps}, got a={a}, b={b}")
    x = p.level1[a:b + 1]
    dx = np.diff(x, axis=0)
    rel = x[:-1] - x[0]
    xx = np.sum(p.level2[a:b] + rel[:, :, None] * dx[:, None, :], axis=0)
    return x[-1] - x[0], xx


def hoelder_norm(p: GridRoughPath, alpha: float = DEFAULT_ALPHA,
                 approx: bool | None = None) -> float:
    """Grid version of ``sup |X_{s,t}|/|t-s|^a + sup |XX_{s,t}|^(1/2)/|t-s|^a``.

    Exact O(m^2) scan; ``approx`` (default: on for m > 4096) restricts to
    dyadic index gaps, which gives a lower bound.
    """
    alpha = check_alpha(alpha)
    if approx is None:
        approx = p.steps > DYADIC_THRESHOLD
    s1, s2 = _hoelder_terms(p.level1, p.level2, p.times, alpha, dyadic=approx)
    return float(s1 + s2)


def _check_same_grid(p: GridRoughPath, q: GridRoughPath):
    if p.dim != q.dim:
        raise RoughPathError(f"dimension mismatch {p.dim} != {q.dim}")
    if p.times.shape != q.times.shape or not np.array_equal(p.times, q.times):
        raise RoughPathError("paths live on different grids")


def homogeneous_distance(p: GridRoughPath, q: GridRoughPath,
                         alpha: float = DEFAULT_ALPHA) -> float:
    """``|X_0 - Y_0|`` plus the inhomogeneous Hoelder rough-path distance."""
    alpha = check_alpha(alpha)
    _check_same_grid(p, q)
    return float(_rho_alpha(p.level1, p.level2, q.level1, q.level2, p.times, alpha))


def _pvar_dp(omega: np.ndarray, a: int, b: int, p: float) -> float:
    """max over partitions of [a, b] of sum omega(s_i, s_{i+1})^p."""
    best = np.zeros(b - a + 1)
    for j in range(1, b - a + 1):
        best[j] = np.max(best[:j] + omega[a:a + j, a + j] ** p)
    return float(best[-1])


def p_variation(p: GridRoughPath, a: int, b: int, alpha: float = DEFAULT_ALPHA) -> float:
    """(1/alpha)-variation of the rough path over ``[t_a, t_b]`` on grid partitions."""
    alpha = check_alpha(alpha)
    if not (0 <= a < b <= p.steps):
        raise RoughPathError(f"need 0 <= a < b <= {p.steps}, got a={a}, b={b}")
    om = _omega_matrix(p.level1[a:b + 1], p.level2[a:b])
    return _pvar_dp(om, 0, b - a, 1.0 / alpha) ** alpha


def stopping_times(p: GridRoughPath, alpha: float = DEFAULT_ALPHA) -> list[int]:
    """Grid indices of the greedy unit-variation stopping times tau_1, tau_2, ...

    tau_{i+1} is the first grid node t > tau_i where the (1/alpha)-variation
    over [tau_i, t] reaches 1.
    """
    alpha = check_alpha(alpha)
    return _stopping_times_batch(p.level1[None], p.level2[None], alpha)[0]


def n_alpha_batch(level1: np.ndarray, level2: np.ndarray, alpha: float = DEFAULT_ALPHA,
                  chunk: int = 512) -> np.ndarray:
    """``n_alpha`` for a batch of grid rough paths given as arrays."""
    alpha = check_alpha(alpha)
    m = level1.shape[-2] - 1
    out = []
    for start in range(0, level1.shape[0], chunk):
        taus = _stopping_times_batch(level1[start:start + chunk], level2[start:start + chunk], alpha)
        out.extend(sum(1 for j in t if j < m) for t in taus)
    return np.array(out, dtype=int)


def n_alpha(p: GridRoughPath, alpha: float = DEFAULT_ALPHA) -> int:
    """Number of stopping times tau_i (i >= 1) strictly before the horizon."""
    return sum(1 for j in stopping_times(p, alpha) if j < p.steps)


# ---------------------------------------------------------------------------
# serialization


def _fmt(v: float) -> str:
    return repr(float(v))


def write_path_csv(p: GridRoughPath, path, alpha: float | None = None) -> None:
    """Write ``path.csv`` rows (t, x_1..x_e, step-area columns) plus a JSON header.

    Row j carries the level-2 step ending at t_j; row 0 carries zeros. Floats
    are written with ``repr`` (shortest round-tripping decimal).
    """
    path = Path(path)
    e = p.dim
    cols = ["t"] + [f"x{i + 1}" for i in range(e)] + [
        f"a{i + 1}_{j + 1}" for i in range(e) for j in range(e)]
    steps = np.concatenate([np.zeros((1, e, e)), p.level2]).reshape(p.steps + 1, e * e)
    lines = [",".join(cols)]
    for j in range(p.steps + 1):
        row = [p.times[j], *p.level1[j], *steps[j]]
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    header = {"dim": e, "m": p.steps, "T": float(p.times[-1]), "alpha": alpha,
              "seed_lineage": p.meta.get("seed_lineage")}
    header.update({k: v for k, v in p.meta.items() if k != "seed_lineage"})
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True, default=str))


def read_path_csv(path) -> GridRoughPath:
    path = Path(path)
    rows = [line.split(",") for line in path.read_text().splitlines()[1:] if line]
    data = np.array([[float(v) for v in r] for r in rows])
    header_file = path.with_suffix(".json")
    meta = json.loads(header_file.read_text()) if header_file.exists() else {}
    e = int(meta.get("dim", round((-1 + np.sqrt(1 + 4 * (data.shape[1] - 1))) / 2)))
    times = data[:, 0]
    level1 = data[:, 1:1 + e]
    level2 = data[1:, 1 + e:].reshape(-1, e, e)
    return GridRoughPath(times, level1, level2, meta)
