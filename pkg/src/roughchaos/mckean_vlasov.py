"""The map Phi, its Picard fixed point, and i.i.d. McKean-Vlasov copies.

For a path measure Q, Phi(Q) is the law of

    dY = (b * Q_t)(Y) dt + dB,   Y_0 ~ lambda,

with ``(b * Q_t)(y) = sum_a w_a b(y, q_a(t))`` over the atoms of Q. Laws are
always represented by weighted sample paths.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lift import LiftConfig
from .measures import PathMeasure, RoughPathMeasure
from .particle import InitialLaw, InteractionField, ParticleEnsemble, particle_draws
from .transport import marginal_w1_sup


class ConvergenceError(RuntimeError):
    def __init__(self, trace):
        super().__init__(f"no convergence after {len(trace)} iterations (last {trace[-1]:.3g})")
        self.trace = trace


class FlowMeasure(PathMeasure):
    """A path measure standing in for Q, optionally with the drift that generated it.

    ``drift[a, j]`` is the drift evaluated at (t_j, path_a(t_j)), j < m, so the
    measure is a drift-representable (Girsanov) law when present.
    """

    def __init__(self, paths, times, weights=None, drift=None, lineage=None):
        super().__init__(paths, times, weights, lineage)
        self.drift = None if drift is None else np.asarray(drift, dtype=float)

    @classmethod
    def from_ensemble(cls, ens: ParticleEnsemble) -> "FlowMeasure":
        return cls(ens.paths, ens.times, lineage={"seed": ens.seed})

    def save(self, directory) -> None:
        directory = Path(directory)
        ParticleEnsemble(self.times, self.paths, np.diff(self.paths, axis=1),
                         int(self.lineage.get("seed", 0)), {"kind": "flow"}).save(directory)


def _frozen_flow_paths(b: InteractionField, flow: FlowMeasure, x0: np.ndarray,
                       dB: np.ndarray, h: float):
    """Euler scheme for dY = (b * flow_t)(Y) dt + dB; returns paths and drifts."""
    n, M, d = dB.shape
    if flow.paths.shape[1] != M + 1:
        raise ValueError("flow and noise disagree on the grid")
    paths = np.empty((n, M + 1, d))
    drift = np.empty((n, M, d))
    y = np.array(x0, dtype=float)
    paths[:, 0] = y
    for j in range(M):
        g = np.zeros_like(y) if b.is_zero else b.convolve(y, flow.paths[:, j, :], flow.weights)
        drift[:, j] = g
        y = y + g * h + dB[:, j]
        paths[:, j + 1] = y
    return paths, drift


def phi_map(b: InteractionField, Q: PathMeasure, law: InitialLaw, n_out: int, seed: int,
            replica: int | None = None) -> FlowMeasure:
    """Empirical law of ``n_out`` independent solutions driven by the flow of ``Q``."""
    if Q.size < 1:
        raise ValueError("Q must have at least one atom")
    M = Q.times.size - 1
    T = float(Q.times[-1])
    x0, dB = particle_draws(law, seed, n_out, M, T, replica)
    paths, drift = _frozen_flow_paths(b, Q, x0, dB, T / M)
    return FlowMeasure(paths, Q.times, drift=drift,
                       lineage={"seed": seed, "replica": replica, "map": "phi"})


@dataclass
class FixedPointResult:
    flow: FlowMeasure
    trace: list = field(default_factory=list)

    def trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "sup_marginal_w1"])
            for i, v in enumerate(self.trace, start=1):
                w.writerow([i, repr(float(v))])


def brownian_flow(law: InitialLaw, n: int, horizon: float, steps: int, seed: int,
                  replica: int | None = None) -> FlowMeasure:
    x0, dB = particle_draws(law, seed, n, steps, horizon, replica)
    paths = np.concatenate([x0[:, None], x0[:, None] + np.cumsum(dB, axis=1)], axis=1)
    return FlowMeasure(paths, np.linspace(0.0, horizon, steps + 1),
                       drift=np.zeros_like(dB), lineage={"seed": seed, "map": "brownian"})


def solve_mkv_fixed_point(b: InteractionField, law: InitialLaw, n_out: int, horizon: float,
                          steps: int, tol: float = 1e-3, max_iter: int = 50,
                          seed: int = 0) -> FixedPointResult:
    """Picard iteration Q_{k+1} = Phi(Q_k) from the Brownian law.

    Every iterate reuses the same initial points and Brownian increments
    (common random numbers), so consecutive iterates differ only through the
    flow. Stops when the sup over grid nodes of the marginal W1 distance
    between consecutive iterates drops below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Q = brownian_flow(law, n_out, horizon, steps, seed)
    trace = []
    for _ in range(max_iter):
        nxt = phi_map(b, Q, law, n_out, seed)
        dist = marginal_w1_sup(Q.paths, nxt.paths)
        trace.append(dist)
        Q = nxt
        if dist < tol:
            return FixedPointResult(Q, trace)
    raise ConvergenceError(trace)


def sample_iid_mkv(fixed_point: FlowMeasure, b: InteractionField, law: InitialLaw, k: int,
                   n_samples: int, seed: int, cfg: LiftConfig | None = None,
                   replica: int | None = None) -> RoughPathMeasure:
    """``n_samples`` k-tuples of independent copies driven by the frozen flow, jointly lifted.

    The copies themselves are available as ``result.source`` (a FlowMeasure
    with the recorded drifts); tuple i consists of copies i*k, ..., i*k+k-1.
    """
    M = fixed_point.times.size - 1
    T = float(fixed_point.times[-1])
    x0, dB = particle_draws(law, seed, k * n_samples, M, T, replica)
    paths, drift = _frozen_flow_paths(b, fixed_point, x0, dB, T / M)
    copies = FlowMeasure(paths, fixed_point.times, drift=drift,
                         lineage={"seed": seed, "map": "frozen_flow"})
    tuples = np.arange(k * n_samples).reshape(n_samples, k)
    w = np.full(n_samples, 1.0 / n_samples)
    return RoughPathMeasure.from_tuples(copies, tuples, w, cfg=cfg)
