"""Atomic measures on path space and on rough-path space.

:class:`PathMeasure` carries plain d-dimensional sample paths (the classical
empirical measure of an ensemble). :class:`RoughPathMeasure` carries rough
paths over R^{kd}; when it is built from index tuples into a path measure the
level-1 data is not copied, only the joint level-2 steps are stored.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .lift import LiftConfig, ResourceError, tuple_lift_arrays
from .roughpath import (DEFAULT_ALPHA, GridRoughPath, RoughPathError, _hoelder_terms,
                        check_alpha, n_alpha_batch, read_path_csv, write_path_csv)
from .seeding import make_rng

WEIGHT_TOL = 1e-12


def _check_weights(weights: np.ndarray, size: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (size,):
        raise ValueError(f"expected {size} weights, got shape {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError("weights must be nonnegative and sum to 1")
    return w


def _aggregate(keys: list[bytes], weights: np.ndarray):
    """Indices of first occurrences of each key and the summed weights."""
    first: dict[bytes, int] = {}
    order = []
    sums = []
    for i, key in enumerate(keys):
        slot = first.get(key)
        if slot is None:
            first[key] = len(order)
            order.append(i)
            sums.append(weights[i])
        else:
            sums[slot] += weights[i]
    return np.array(order, dtype=int), np.array(sums)


class PathMeasure:
    """Weighted atoms on d-dimensional paths sharing one time grid."""

    def __init__(self, paths, times, weights=None, lineage=None):
        paths = np.asarray(paths, dtype=float)
        if paths.ndim == 2:
            paths = paths[:, :, None]
        self.paths = paths
        self.times = np.asarray(times, dtype=float)
        if self.paths.shape[1] != self.times.size:
            raise ValueError("paths and times disagree on the grid size")
        n = paths.shape[0]
        self.weights = (np.full(n, 1.0 / n) if weights is None
                        else _check_weights(weights, n))
        self.lineage = lineage or {}

    @property
    def size(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def integrate(self, fn) -> float:
        """``sum_a w_a fn(path_a)`` for a function of a single (M+1, d) path."""
        return float(sum(w * fn(p) for w, p in zip(self.weights, self.paths)))

    def marginal(self, j: int) -> np.ndarray:
        return self.paths[:, j, :]


class RoughPathMeasure:
    """Weighted atoms on grid rough paths over R^{kd}.

    Either built from explicit arrays, or from index tuples into a
    :class:`PathMeasure` (``source``), in which case ``level1`` is assembled on
    demand from the shared source paths.
    """

    def __init__(self, times, weights, level2, level1=None, k: int = 1, d: int | None = None,
                 source: PathMeasure | None = None, tuples=None, factor: int = 1,
                 exact: bool = True):
        self.times = np.asarray(times, dtype=float)
        self.level2 = np.asarray(level2, dtype=float)
        self.k = int(k)
        self.source = source
        self.tuples = None if tuples is None else np.asarray(tuples, dtype=int)
        self.factor = factor
        self.exact = exact
        self._level1 = None if level1 is None else np.asarray(level1, dtype=float)
        if self._level1 is None and (source is None or self.tuples is None):
            raise ValueError("need level1 data or (source, tuples)")
        e = self.level2.shape[-1]
        self.d = e // self.k if d is None else d
        if self.d * self.k != e:
            raise ValueError(f"rough-path dimension {e} is not k*d = {self.k}*{self.d}")
        self.weights = _check_weights(weights, self.level2.shape[0])

    @classmethod
    def from_tuples(cls, source: PathMeasure, tuples, weights, cfg: LiftConfig | None = None,
                    exact: bool = True, chunk: int = 4096) -> "RoughPathMeasure":
        tuples = np.asarray(tuples, dtype=int)
        M = source.times.size - 1
        factor = 1
        if cfg is not None:
            if M != cfg.fine_steps:
                raise RoughPathError(
                    f"source paths have {M} steps, config expects {cfg.fine_steps}")
            factor = cfg.refine_factor
        l2 = [tuple_lift_arrays(source.paths, tuples[i:i + chunk], factor)[1]
              for i in range(0, tuples.shape[0], chunk)]
        return cls(source.times[::factor], weights, np.concatenate(l2), k=tuples.shape[1],
                   d=source.dim, source=source, tuples=tuples, factor=factor, exact=exact)

    @property
    def level1(self) -> np.ndarray:
        if self._level1 is not None:
            return self._level1
        p = self.source.paths[:, ::self.factor, :]
        A, k = self.tuples.shape
        return np.transpose(p[self.tuples], (0, 2, 1, 3)).reshape(A, p.shape[1], k * self.d)

    @property
    def size(self) -> int:
        return self.level2.shape[0]

    @property
    def dim(self) -> int:
        return self.k * self.d

    def atom(self, i: int) -> GridRoughPath:
        if self._level1 is not None:
            l1 = self._level1[i]
        else:
            p = self.source.paths[self.tuples[i], ::self.factor, :]
            l1 = np.concatenate(list(p), axis=-1)
        return GridRoughPath(self.times, l1, self.level2[i])

    def atoms(self):
        for i in range(self.size):
            yield self.atom(i)

    def integrate(self, fn) -> float:
        return float(sum(w * fn(a) for w, a in zip(self.weights, self.atoms())))


# ---------------------------------------------------------------------------


def empirical_from_ensemble(ens) -> PathMeasure:
    """Uniform empirical measure of the ensemble's sample paths."""
    if ens.n < 1:
        raise ValueError("empty ensemble")
    return PathMeasure(ens.paths, ens.times, lineage={"seed": ens.seed})


def enhanced_k_layer(ens_or_measure, k: int, cfg: LiftConfig | None = None,
                     tuple_budget: int = 10**5, allow_sampling: bool = True,
                     seed: int = 0) -> RoughPathMeasure:
    """Enhanced k-layer empirical measure of an ensemble.

    All n^k index tuples (with repetition) are enumerated when n^k fits the
    budget; otherwise ``tuple_budget`` tuples are drawn uniformly at random
    and weighted equally (``exact`` is then False).
    """
    src = ens_or_measure if isinstance(ens_or_measure, PathMeasure) else \
        empirical_from_ensemble(ens_or_measure)
    n = src.size
    if k < 1:
        raise ValueError("k must be >= 1")
    if n ** k <= tuple_budget:
        tuples = np.array(np.meshgrid(*[np.arange(n)] * k, indexing="ij")).reshape(k, -1).T
        weights = np.prod(src.weights[tuples], axis=1)
        return RoughPathMeasure.from_tuples(src, tuples, weights, cfg=cfg, exact=True)
    if not allow_sampling:
        raise ResourceError(f"{n}^{k} tuples exceed the budget {tuple_budget}")
    rng = make_rng(seed, k)
    tuples = np.stack([rng.choice(n, size=tuple_budget, p=src.weights) for _ in range(k)], axis=1)
    weights = np.full(tuple_budget, 1.0 / tuple_budget)
    return RoughPathMeasure.from_tuples(src, tuples, weights, cfg=cfg, exact=False)


def project_pi1(mu: RoughPathMeasure) -> PathMeasure:
    """First-layer level-1 projection; bitwise-equal atoms merge their weights."""
    first = np.ascontiguousarray(mu.level1[:, :, :mu.d])
    idx, w = _aggregate([a.tobytes() for a in first], mu.weights)
    return PathMeasure(first[idx], mu.times, w / w.sum())


def project_Pi2(mu: RoughPathMeasure) -> RoughPathMeasure:
    """Restriction to the first two layers and their level-2 block."""
    if mu.k < 2:
        raise ValueError("Pi_2 needs at least two layers")
    e = 2 * mu.d
    l1 = np.ascontiguousarray(mu.level1[:, :, :e])
    l2 = np.ascontiguousarray(mu.level2[:, :, :e, :e])
    idx, w = _aggregate([a.tobytes() + b.tobytes() for a, b in zip(l1, l2)], mu.weights)
    w = w / w.sum()
    if mu.tuples is not None:
        return RoughPathMeasure(mu.times, w, l2[idx], k=2, d=mu.d, source=mu.source,
                                tuples=mu.tuples[idx, :2], factor=mu.factor, exact=mu.exact)
    return RoughPathMeasure(mu.times, w, l2[idx], level1=l1[idx], k=2, d=mu.d, exact=mu.exact)


def modified_moment(mu: RoughPathMeasure, alpha: float = DEFAULT_ALPHA, eps: float = 0.1) -> float:
    """``sum_a w_a (|X_0^a| + ||X^a||_alpha + N_alpha(X^a))^(1 + eps)``."""
    alpha = check_alpha(alpha)
    l1 = mu.level1
    s1, s2 = _hoelder_terms(l1, mu.level2, mu.times, alpha)
    n = n_alpha_batch(l1, mu.level2, alpha)
    size = np.linalg.norm(l1[:, 0, :], axis=-1) + s1 + s2 + n
    return float(np.sum(mu.weights * size ** (1.0 + eps)))


def save_measure(mu, directory) -> None:
    """Write ``atoms.csv`` (atom id -> file), ``weights.csv``, ``meta.json`` and one file per atom.

    Rough-path atoms use the path CSV format; plain path atoms are written
    as (t, x_1..x_d) tables.
    """
    directory = Path(directory)
    (directory / "atoms").mkdir(parents=True, exist_ok=True)
    rough = isinstance(mu, RoughPathMeasure)
    names = []
    for i in range(mu.size):
        name = f"atoms/atom_{i:06d}.csv"
        if rough:
            write_path_csv(mu.atom(i), directory / name)
        else:
            lines = [",".join(["t"] + [f"x{j + 1}" for j in range(mu.dim)])]
            lines += [",".join(repr(float(v)) for v in (t, *x))
                      for t, x in zip(mu.times, mu.paths[i])]
            (directory / name).write_text("\n".join(lines) + "\n")
        names.append(name)
    (directory / "atoms.csv").write_text(
        "atom,file\n" + "".join(f"{i},{n}\n" for i, n in enumerate(names)))
    (directory / "weights.csv").write_text(
        "atom,weight\n" + "".join(f"{i},{float(w)!r}\n" for i, w in enumerate(mu.weights)))
    meta = {"kind": "rough" if rough else "path", "size": mu.size, "dim": mu.dim,
            "m": int(mu.times.size - 1), "T": float(mu.times[-1])}
    if rough:
        meta.update(k=mu.k, d=mu.d, exact=bool(mu.exact))
    else:
        meta.update(lineage=mu.lineage)
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))


def load_measure(directory):
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    files = [line.split(",")[1] for line in (directory / "atoms.csv").read_text().splitlines()[1:]]
    w = np.array([float(line.split(",")[1])
                  for line in (directory / "weights.csv").read_text().splitlines()[1:]])
    if meta["kind"] == "rough":
        atoms = [read_path_csv(directory / f) for f in files]
        return RoughPathMeasure(atoms[0].times, w, np.stack([a.level2 for a in atoms]),
                                level1=np.stack([a.level1 for a in atoms]),
                                k=meta["k"], d=meta["d"], exact=meta["exact"])
    data = [np.loadtxt(directory / f, delimiter=",", skiprows=1, ndmin=2) for f in files]
    return PathMeasure(np.stack([a[:, 1:] for a in data]), data[0][:, 0], w)
