"""Weakly interacting diffusions and i.i.d. Brownian ensembles.

The particle system is

    dX^i = (1/n) sum_j b(X^i, X^j) dt + dB^i,   X^i_0 ~ lambda i.i.d.,

discretized by Euler-Maruyama. Particle ``i`` of replica ``r`` draws its
initial point and its Brownian increments from the stream ``(seed, r, i)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .lift import uniform_grid
from .seeding import make_rng

SUBSAMPLE_THRESHOLD = 2048


class SimulationError(ArithmeticError):
    def __init__(self, step: int):
        super().__init__(f"non-finite particle state at step {step}")
        self.step = step


@dataclass
class InteractionField:
    """Mean-field drift ``b(x, y)`` on R^d x R^d with its derivatives.

    ``b`` maps broadcastable (..., d), (..., d) arrays to (..., d);
    ``jac_x``/``jac_y`` return (..., d, d) with ``[l, k] = d b_l / d x_k``
    (resp. ``y_k``).
    """

    dim: int
    b: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_y: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "b"
    bounds: dict = field(default_factory=lambda: {"value": np.inf, "d1": np.inf, "d2": np.inf})
    params: dict = field(default_factory=dict)
    #: optional closed form of :meth:`convolve` as ``fn(x, atoms, weights)``
    mean_field: Callable | None = None

    def __call__(self, x, y):
        return self.b(x, y)

    def div_x(self, x, y) -> np.ndarray:
        """Divergence of b in its first argument (div of b-bar on R^{2d})."""
        return np.trace(self.jac_x(x, y), axis1=-2, axis2=-1)

    def div_y_diag(self, x) -> np.ndarray:
        """``div_y b(x, y)`` evaluated at y = x."""
        return np.trace(self.jac_y(x, x), axis1=-2, axis2=-1)

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"

    def convolve(self, x: np.ndarray, atoms: np.ndarray, weights: np.ndarray | None = None,
                 chunk: int = 512) -> np.ndarray:
        """``(b * mu)(x) = sum_a w_a b(x, y_a)`` for points (n, d) and atoms (A, d)."""
        A = atoms.shape[0]
        w = np.full(A, 1.0 / A) if weights is None else weights
        if self.mean_field is not None:
            return self.mean_field(x, atoms, w)
        out = np.zeros_like(x, dtype=float)
        for s in range(0, A, chunk):
            vals = self.b(x[:, None, :], atoms[None, s:s + chunk, :])
            out += np.einsum("nad,a->nd", vals, w[s:s + chunk])
        return out

    def check_derivatives(self, rng: np.random.Generator, n_points: int = 100,
                          step: float = 1e-6) -> float:
        """Max relative deviation of the analytic Jacobians from central differences."""
        x = rng.normal(size=(n_points, self.dim))
        y = rng.normal(size=(n_points, self.dim))
        worst = 0.0
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = step
            fx = (self.b(x + e, y) - self.b(x - e, y)) / (2 * step)
            fy = (self.b(x, y + e) - self.b(x, y - e)) / (2 * step)
            for fd, jac in ((fx, self.jac_x(x, y)[..., k]), (fy, self.jac_y(x, y)[..., k])):
                err = np.abs(fd - jac) / np.maximum(1.0, np.abs(jac))
                worst = max(worst, float(err.max()))
        return worst


def _zeros_jac(x, y, d):
    shape = np.broadcast_shapes(np.shape(x), np.shape(y))[:-1]
    return np.zeros((*shape, d, d))


def zero_interaction(dim: int = 1) -> InteractionField:
    return InteractionField(
        dim, b=lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))),
        jac_x=lambda x, y: _zeros_jac(x, y, dim), jac_y=lambda x, y: _zeros_jac(x, y, dim),
        name="zero", bounds={"value": 0.0, "d1": 0.0, "d2": 0.0})


def constant_interaction(c, dim: int = 1) -> InteractionField:
    c = np.broadcast_to(np.asarray(c, dtype=float), (dim,)).copy()
    return InteractionField(
        dim, b=lambda x, y: np.broadcast_to(c, np.broadcast_shapes(np.shape(x), np.shape(y))),
        jac_x=lambda x, y: _zeros_jac(x, y, dim), jac_y=lambda x, y: _zeros_jac(x, y, dim),
        name="constant", bounds={"value": float(np.abs(c).max()), "d1": 0.0, "d2": 0.0},
        params={"c": c.tolist()})


def linear_attraction(theta: float, dim: int = 1) -> InteractionField:
    """b(x, y) = theta (y - x); unbounded, but the standard linear test case."""
    eye = np.eye(dim)

    def jac(sign):
        return lambda x, y: sign * theta * np.broadcast_to(
            eye, (*np.broadcast_shapes(np.shape(x), np.shape(y))[:-1], dim, dim))

    return InteractionField(dim, b=lambda x, y: theta * (y - x), jac_x=jac(-1.0), jac_y=jac(1.0),
                            name="linear", bounds={"value": np.inf, "d1": abs(theta), "d2": 0.0},
                            params={"theta": theta},
                            mean_field=lambda x, atoms, w: theta * (w @ atoms - x))


def confining_drift(rate: float = 1.0, dim: int = 1) -> InteractionField:
    """b(x, y) = -rate x, independent of y (Ornstein-Uhlenbeck drift)."""
    eye = np.eye(dim)
    return InteractionField(
        dim, b=lambda x, y: -rate * np.broadcast_to(x, np.broadcast_shapes(np.shape(x), np.shape(y))),
        jac_x=lambda x, y: -rate * np.broadcast_to(
            eye, (*np.broadcast_shapes(np.shape(x), np.shape(y))[:-1], dim, dim)),
        jac_y=lambda x, y: _zeros_jac(x, y, dim),
        name="confining", bounds={"value": np.inf, "d1": abs(rate), "d2": 0.0},
        params={"rate": rate}, mean_field=lambda x, atoms, w: -rate * np.asarray(x, dtype=float))


def tanh_attraction(theta: float, dim: int = 1) -> InteractionField:
    """b(x, y) = theta tanh(y - x) componentwise; a C^2_b interaction."""

    def jx(x, y):
        g = theta / np.cosh(y - x) ** 2
        return -g[..., :, None] * np.eye(dim)

    def jy(x, y):
        g = theta / np.cosh(y - x) ** 2
        return g[..., :, None] * np.eye(dim)

    return InteractionField(dim, b=lambda x, y: theta * np.tanh(y - x), jac_x=jx, jac_y=jy,
                            name="tanh", params={"theta": theta},
                            bounds={"value": abs(theta), "d1": abs(theta),
                                    "d2": abs(theta) * 4 / 3 ** 1.5})


INTERACTIONS = {
    "zero": lambda theta, dim: zero_interaction(dim),
    "linear": linear_attraction,
    "constant": lambda theta, dim: constant_interaction(theta, dim),
    "tanh": tanh_attraction,
    "confining": confining_drift,
}


def make_interaction(name: str, theta: float = 0.0, dim: int = 1) -> InteractionField:
    try:
        return INTERACTIONS[name](theta, dim)
    except KeyError:
        raise ValueError(f"unknown interaction {name!r}; choose from {sorted(INTERACTIONS)}")


# ---------------------------------------------------------------------------


@dataclass
class InitialLaw:
    """Seeded initial distribution ``lambda`` on R^d.

    Attributes:
        sampler: ``sampler(rng, n) -> (n, d)`` array.
        log_density_ratio: optional ``log d nu / d lambda`` for a tilted law nu.
        exp_moment_params: ``(c, eps)`` for which E exp(c |x|^(1+eps)) < inf.
    """

    dim: int
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    exp_moment_params: tuple = (1.0, 0.5)
    log_density_ratio: Callable | None = None
    name: str = "law"
    params: dict = field(default_factory=dict)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.sampler(rng, n), dtype=float).reshape(n, self.dim)

    def exp_moment(self, rng: np.random.Generator, n: int) -> float:
        c, eps = self.exp_moment_params
        x = self.sample(rng, n)
        return float(np.mean(np.exp(c * np.linalg.norm(x, axis=1) ** (1 + eps))))


def dirac_law(x0=0.0, dim: int = 1) -> InitialLaw:
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (dim,)).copy()
    return InitialLaw(dim, lambda rng, n: np.tile(x0, (n, 1)), (1.0, 0.5), name="dirac",
                      params={"x0": x0.tolist()})


def gaussian_law(mean=0.0, std=1.0, dim: int = 1) -> InitialLaw:
    """N(mean, std^2 I); exponential moments hold with eps < 1, c small."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (dim,)).copy()

    def sampler(rng, n):
        return mean + std * rng.standard_normal((n, dim))

    c = 0.1 / std ** 1.5
    return InitialLaw(dim, sampler, (c, 0.5), name="gaussian",
                      params={"mean": mean.tolist(), "std": std})


# ---------------------------------------------------------------------------


@dataclass
class ParticleEnsemble:
    """n simulated paths on a shared grid with the Brownian increments that drove them."""

    times: np.ndarray
    paths: np.ndarray
    increments: np.ndarray
    seed: int
    manifest: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    @property
    def steps(self) -> int:
        return self.times.size - 1

    def save(self, directory) -> None:
        """Write manifest.json, paths.csv and increments.csv into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        man = dict(self.manifest, seed=self.seed, n=self.n, d=self.dim, m=self.steps,
                   T=float(self.times[-1]))
        (directory / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))
        d = self.dim
        _write_long_csv(directory / "paths.csv", self.times, self.paths,
                        ["particle", "t"] + [f"x{k + 1}" for k in range(d)])
        _write_long_csv(directory / "increments.csv", self.times[1:], self.increments,
                        ["particle", "t"] + [f"dB{k + 1}" for k in range(d)])

    @classmethod
    def load(cls, directory) -> "ParticleEnsemble":
        directory = Path(directory)
        man = json.loads((directory / "manifest.json").read_text())
        n, d, m = man["n"], man["d"], man["m"]
        paths = _read_long_csv(directory / "paths.csv", n, m + 1, d)
        incr = _read_long_csv(directory / "increments.csv", n, m, d)
        times = uniform_grid(man["T"], m)
        return cls(times, paths, incr, man["seed"], man)


def _write_long_csv(path: Path, times, arr, cols) -> None:
    lines = [",".join(cols)]
    for i in range(arr.shape[0]):
        for j, t in enumerate(times):
            lines.append(",".join([str(i), repr(float(t))] + [repr(float(v)) for v in arr[i, j]]))
    path.write_text("\n".join(lines) + "\n")


def _read_long_csv(path: Path, n: int, rows: int, d: int) -> np.ndarray:
    data = np.array([[float(v) for v in line.split(",")[2:]]
                     for line in path.read_text().splitlines()[1:] if line])
    return data.reshape(n, rows, d)


def particle_draws(law: InitialLaw, seed: int, n: int, steps: int, horizon: float,
                   replica: int | None = None, particle_seeds=None):
    """Initial points (n, d) and Brownian increments (n, steps, d).

    Particle ``i`` uses the stream ``(seed, replica, s_i)`` where ``s_i`` is
    ``particle_seeds[i]`` (default ``i``); ``replica=None`` drops that index.
    """
    h = horizon / steps
    ids = range(n) if particle_seeds is None else particle_seeds
    x0 = np.empty((n, law.dim))
    dB = np.empty((n, steps, law.dim))
    for i, s in enumerate(ids):
        stream = (s,) if replica is None else (replica, s)
        rng = make_rng(seed, *stream)
        x0[i] = law.sample(rng, 1)[0]
        dB[i] = rng.standard_normal((steps, law.dim)) * np.sqrt(h)
    return x0, dB


def euler_ips(b: InteractionField, x0: np.ndarray, dB: np.ndarray, h: float,
              partners: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Euler-Maruyama for the particle system, batched over leading dims of x0.

    ``x0`` has shape (..., n, d), ``dB`` (..., n, M, d); returns (..., n, M+1, d).
    With ``partners`` set, the interaction average uses that many random
    partners per particle and step instead of all n.
    """
    n = x0.shape[-2]
    M = dB.shape[-2]
    out = np.empty((*x0.shape[:-1], M + 1, x0.shape[-1]))
    x = np.array(x0, dtype=float)
    out[..., 0, :] = x
    zero = b.is_zero
    if partners is not None and x.ndim != 2:
        raise ValueError("subsampled interaction is only available for a single ensemble")
    for j in range(M):
        if zero:
            drift = 0.0
        elif partners is None:
            drift = np.mean(b(x[..., :, None, :], x[..., None, :, :]), axis=-2)
        else:
            idx = rng.integers(0, n, size=(n, partners))
            drift = np.mean(b(x[:, None, :], x[idx]), axis=-2)
        x = x + drift * h + dB[..., :, j, :]
        if not np.all(np.isfinite(x)):
            raise SimulationError(j + 1)
        out[..., j + 1, :] = x
    return out


def simulate_ips(b: InteractionField, law: InitialLaw, n: int, horizon: float, steps: int,
                 seed: int, replica: int | None = None, subsample: int | None = None,
                 particle_seeds=None) -> ParticleEnsemble:
    """Simulate the n-particle system on ``steps`` uniform steps.

    ``subsample`` (only honoured for n > 2048) replaces the O(n^2) interaction
    by an average over that many random partners; the manifest records it.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    if b.dim != law.dim:
        raise ValueError("interaction and initial law disagree on the dimension")
    x0, dB = particle_draws(law, seed, n, steps, horizon, replica, particle_seeds)
    partners = subsample if (subsample and n > SUBSAMPLE_THRESHOLD) else None
    rng = make_rng(seed, 2**31 - 1) if partners else None
    paths = euler_ips(b, x0, dB, horizon / steps, partners, rng)
    man = {"kind": "ips", "b": b.name, "b_params": b.params, "law": law.name,
           "interaction": "exact" if partners is None else f"subsampled:{partners}",
           "replica": replica}
    return ParticleEnsemble(uniform_grid(horizon, steps), paths, dB, seed, man)


def simulate_brownian_ensemble(law: InitialLaw, n: int, dim: int, horizon: float, steps: int,
                               seed: int, replica: int | None = None) -> ParticleEnsemble:
    """i.i.d. Brownian paths started from ``law``."""
    if dim != law.dim:
        raise ValueError("initial law has the wrong dimension")
    x0, dB = particle_draws(law, seed, n, steps, horizon, replica)
    paths = np.concatenate([x0[:, None, :], x0[:, None, :] + np.cumsum(dB, axis=1)], axis=1)
    man = {"kind": "brownian", "b": "zero", "law": law.name, "replica": replica}
    return ParticleEnsemble(uniform_grid(horizon, steps), paths, dB, seed, man)


def sanov_moment_G(paths, times, beta: float, c: float, eps: float) -> np.ndarray:
    """``c * (beta-Hoelder seminorm)^(1+eps) + c |gamma(0)|^(1+eps)``.

    ``paths`` is (M+1, d) or batched (..., M+1, d); the seminorm is the sup
    over all grid pairs.
    """
    if not (0 < beta < 0.5):
        raise ValueError("beta must lie in (0, 1/2)")
    x = np.asarray(paths, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    times = np.asarray(times, dtype=float)
    sup = np.zeros(x.shape[:-2])
    for s in range(times.size - 1):
        inc = np.linalg.norm(x[..., s + 1:, :] - x[..., s:s + 1, :], axis=-1)
        sup = np.maximum(sup, np.max(inc / (times[s + 1:] - times[s]) ** beta, axis=-1))
    start = np.linalg.norm(x[..., 0, :], axis=-1)
    return c * sup ** (1 + eps) + c * start ** (1 + eps)
