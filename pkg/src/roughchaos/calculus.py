"""Rough integration by compensated Riemann sums and a second-order RDE scheme."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .lift import _coarsen
from .roughpath import DEFAULT_ALPHA, GridRoughPath, RoughPathError, _hoelder_terms, check_alpha

#: combinatorial constant in the growth bound |int f dX| <= C_f (||X|| v ||X||^(1/alpha))
GROWTH_CONSTANT = 8.0


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, msg: str = "non-finite state"):
        super().__init__(f"{msg} at step {step}")
        self.step = step


@dataclass
class VectorField:
    """A map ``f: R^in -> L(R^drive, R^out)`` with its derivative.

    ``value(y)`` maps (..., in) to (..., out, drive) and ``jacobian(y)`` to
    (..., out, drive, in) with ``jacobian[o, l, k] = d f_{o,l} / d y_k``.
    Both must broadcast over leading dimensions.
    """

    in_dim: int
    out_dim: int
    drive_dim: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    bounds: dict = field(default_factory=lambda: {"value": np.inf, "d1": np.inf, "d2": np.inf})
    name: str = "f"

    def __call__(self, y):
        return self.value(np.asarray(y, dtype=float))

    def growth_constant(self) -> float:
        b = self.bounds
        return GROWTH_CONSTANT * (b["value"] + b["d1"] + b["d2"])

    def check_jacobian(self, rng: np.random.Generator, n_points: int = 100, scale: float = 2.0,
                       step: float = 1e-6) -> float:
        """Max relative deviation of ``jacobian`` from central differences of ``value``."""
        y = rng.normal(scale=scale, size=(n_points, self.in_dim))
        jac = self.jacobian(y)
        worst = 0.0
        for k in range(self.in_dim):
            e = np.zeros(self.in_dim)
            e[k] = step
            fd = (self.value(y + e) - self.value(y - e)) / (2 * step)
            err = np.abs(fd - jac[..., k]) / np.maximum(1.0, np.abs(jac[..., k]))
            worst = max(worst, float(err.max()))
        return worst


def constant_field(c, in_dim: int) -> VectorField:
    """f(y) = c for a fixed (out, drive) matrix c."""
    c = np.atleast_2d(np.asarray(c, dtype=float))
    out, drive = c.shape
    return VectorField(
        in_dim, out, drive,
        value=lambda y: np.broadcast_to(c, (*np.shape(y)[:-1], out, drive)),
        jacobian=lambda y: np.zeros((*np.shape(y)[:-1], out, drive, in_dim)),
        bounds={"value": float(np.abs(c).max()), "d1": 0.0, "d2": 0.0}, name="constant")


def identity_form(dim: int) -> VectorField:
    """The one-form f(x) = x^T, i.e. int f dX = sum_i int X^i dX^i (scalar output)."""
    eye = np.eye(dim)
    return VectorField(
        dim, 1, dim,
        value=lambda y: np.asarray(y)[..., None, :],
        jacobian=lambda y: np.broadcast_to(eye[None], (*np.shape(y)[:-1], 1, dim, dim)),
        name="identity_form")


def gradient_form(grad: Callable, hess: Callable, dim: int, bounds=None, name="gradient") -> VectorField:
    """One-form f = grad F for a potential F, given its gradient and Hessian."""
    return VectorField(
        dim, 1, dim,
        value=lambda y: grad(np.asarray(y))[..., None, :],
        jacobian=lambda y: hess(np.asarray(y))[..., None, :, :],
        bounds=bounds or {"value": np.inf, "d1": np.inf, "d2": np.inf}, name=name)


def linear_field(mats) -> VectorField:
    """f(y)_{:, l} = A_l y for matrices A_l (N x N), l = 1..drive."""
    mats = np.asarray(mats, dtype=float)
    drive, N, _ = mats.shape
    jac = np.transpose(mats, (1, 0, 2))  # [o, l, k]
    return VectorField(
        N, N, drive,
        value=lambda y: np.einsum("lok,...k->...ol", mats, y),
        jacobian=lambda y: np.broadcast_to(jac, (*np.shape(y)[:-1], N, drive, N)),
        name="linear")


# ---------------------------------------------------------------------------


def _compensated_sum(f: VectorField, level1: np.ndarray, level2: np.ndarray) -> np.ndarray:
    """sum_j f(X_j) X_{j,j+1} + Df(X_j) XX_{j,j+1}, batched over leading dims."""
    xs = level1[..., :-1, :]
    dx = np.diff(level1, axis=-2)
    first = np.einsum("...ol,...l->...o", f.value(xs), dx)
    second = np.einsum("...olk,...kl->...o", f.jacobian(xs), level2)
    return np.sum(first + second, axis=-2)


def rough_integral_arrays(f: VectorField, level1: np.ndarray, level2: np.ndarray,
                          stride: int = 1) -> np.ndarray:
    if level1.shape[-1] != f.in_dim or f.in_dim != f.drive_dim:
        raise RoughPathError(
            f"vector field expects in_dim=drive_dim={f.in_dim}, path has dim {level1.shape[-1]}")
    l1, l2 = _coarsen(level1, level2, stride)
    return _compensated_sum(f, l1, l2)


def rough_integral(f: VectorField, p: GridRoughPath, partition_stride: int = 1) -> np.ndarray:
    """Compensated Riemann sum of ``f`` against ``p`` on every ``stride``-th node.

    With stride 1 this is the library's value of the rough integral.
    """
    if p.steps % partition_stride:
        raise RoughPathError(f"stride {partition_stride} does not divide m = {p.steps}")
    return rough_integral_arrays(f, p.level1, p.level2, partition_stride)


@dataclass
class RefinementReport:
    strides: list
    values: list
    differences: list
    decay_exponent: float
    cauchy: bool
    norm: float
    bound: float
    bound_ok: bool

    def as_dict(self) -> dict:
        return asdict(self)


def rough_integral_refinement_check(f: VectorField, p: GridRoughPath,
                                    alpha: float = DEFAULT_ALPHA) -> RefinementReport:
    """Evaluate the compensated sums over strides m, m/2, ..., 1 and the growth bound.

    The decay exponent is the least-squares slope of log|I_h - I_{h/2}| against
    log h over the nonzero differences (zero differences count as Cauchy).
    """
    alpha = check_alpha(alpha)
    m = p.steps
    if m & (m - 1):
        raise RoughPathError(f"m = {m} is not a power of two")
    strides = []
    s = m
    while s >= 1:
        strides.append(s)
        s //= 2
    values = [rough_integral(f, p, s) for s in strides]
    diffs = [float(np.linalg.norm(b - a)) for a, b in zip(values, values[1:])]
    h = np.array([p.horizon * s / m for s in strides[1:]])
    d = np.array(diffs)
    nz = d > 1e-13 * max(1.0, float(np.max(np.abs(values[-1]))))
    if nz.sum() >= 2:
        slope = float(np.polyfit(np.log(h[nz]), np.log(d[nz]), 1)[0])
    else:
        slope = float("inf")
    s1, s2 = _hoelder_terms(p.level1, p.level2, p.times, alpha)
    norm = float(s1 + s2)
    bound = f.growth_constant() * max(norm, norm ** (1.0 / alpha))
    total = float(np.linalg.norm(values[-1]))
    return RefinementReport(strides, [np.asarray(v).tolist() for v in values], diffs, slope,
                            slope > 0, norm, bound, total <= bound)


# ---------------------------------------------------------------------------


def rde_solve_arrays(f0: VectorField | None, f: VectorField, times: np.ndarray,
                     level1: np.ndarray, level2: np.ndarray, y0) -> np.ndarray:
    """Second-order scheme for dY = f0(Y) dt + f(Y) dX, batched over leading dims.

    Y_{j+1} = Y_j + f0(Y_j) h + f(Y_j) X_{j,j+1} + sum_{k,l} (Df f)(Y_j)[., k, l] XX^{kl}_{j,j+1}
    """
    if level1.shape[-1] != f.drive_dim:
        raise RoughPathError(f"drive has dim {level1.shape[-1]}, field expects {f.drive_dim}")
    y = np.array(np.broadcast_to(np.asarray(y0, dtype=float),
                                 (*level1.shape[:-2], f.in_dim)))
    dx = np.diff(level1, axis=-2)
    dt = np.diff(times)
    m = dx.shape[-2]
    out = np.empty((*y.shape[:-1], m + 1, f.in_dim))
    out[..., 0, :] = y
    for j in range(m):
        fv = f.value(y)
        jac = f.jacobian(y)
        # (Df f)[o, k, l] = sum_p d_p f_{o,l} f_{p,k}
        dff = np.einsum("...olp,...pk->...okl", jac, fv)
        incr = np.einsum("...ol,...l->...o", fv, dx[..., j, :])
        incr = incr + np.einsum("...okl,...kl->...o", dff, level2[..., j, :, :])
        if f0 is not None:
            incr = incr + f0.value(y)[..., 0] * dt[j]
        y = y + incr
        if not np.all(np.isfinite(y)):
            raise DivergenceError(j + 1)
        out[..., j + 1, :] = y
    return out


def rde_solve(f0: VectorField | None, f: VectorField, drive: GridRoughPath, y0,
              as_rough_path: bool = False):
    """Solve the RDE on the drive's grid; returns (m+1, N) values or their lift."""
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if y0.shape != (f.in_dim,):
        raise RoughPathError(f"y0 has shape {y0.shape}, field expects ({f.in_dim},)")
    if f0 is not None and (f0.in_dim != f.in_dim or f0.out_dim != f.in_dim):
        raise RoughPathError("drift field dimensions do not match the state")
    ys = rde_solve_arrays(f0, f, drive.times, drive.level1, drive.level2, y0)
    if as_rough_path:
        from .lift import lift_piecewise_linear
        return lift_piecewise_linear(ys, times=drive.times)
    return ys
