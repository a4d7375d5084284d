"""Difference systems for the 3-level and 4-level particle-cascade filter.

Both systems move particle mass between adjacent levels with quadratic
transfer terms; level 1 receives a constant inflow ``x_in`` and the last
level drains through ``k_out``.  The maps are pure: identical inputs give
bit-identical outputs, which the rest of the package relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Union

import numpy as np

__all__ = [
    "Params3",
    "Params4",
    "State3",
    "State4",
    "Orbit",
    "FixedPoint",
    "DivergenceError",
    "EmptyOrbitError",
    "step3",
    "step4",
    "iterate",
    "fixed_point3",
    "fixed_point4",
    "jacobian",
    "jacobian3",
    "jacobian4",
    "mass_balance_residual",
    "unit_interval_violations",
    "DEFAULT_BOUND",
]

DEFAULT_BOUND = 1e12


class State3(NamedTuple):
    x: float
    y: float
    z: float


class State4(NamedTuple):
    x: float
    y: float
    z: float
    w: float


def _require_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0.0):
        raise ValueError(f"coefficient {name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class Params3:
    """Coefficients of the 3-level system.

    ``k_*`` are the inter-level transition coefficients, ``p``/``q``/``r``
    the per-level distribution coefficients, ``x_in`` the constant particle
    inflow into level 1.  Only positivity is enforced; values above 1 are
    legal (several reference parameter sets use them).
    """

    k_xy: float
    k_yx: float
    k_yz: float
    k_zy: float
    k_out: float
    p: float
    q: float
    r: float
    x_in: float

    def __post_init__(self):
        for name in ("k_xy", "k_yx", "k_yz", "k_zy", "k_out", "p", "q", "r"):
            _require_positive(name, getattr(self, name))
        if not (math.isfinite(self.x_in) and self.x_in >= 0.0):
            raise ValueError(f"x_in must be finite and >= 0, got {self.x_in!r}")

    @property
    def levels(self) -> int:
        return 3

    def with_x_in(self, x_in: float) -> "Params3":
        return replace(self, x_in=x_in)


@dataclass(frozen=True)
class Params4:
    """Coefficients of the 4-level system; same semantics as :class:`Params3`."""

    k_xy: float
    k_yx: float
    k_yz: float
    k_zy: float
    k_zw: float
    k_wz: float
    k_out: float
    p: float
    q: float
    r: float
    s: float
    x_in: float

    def __post_init__(self):
        for name in ("k_xy", "k_yx", "k_yz", "k_zy", "k_zw", "k_wz", "k_out",
                     "p", "q", "r", "s"):
            _require_positive(name, getattr(self, name))
        if not (math.isfinite(self.x_in) and self.x_in >= 0.0):
            raise ValueError(f"x_in must be finite and >= 0, got {self.x_in!r}")

    @property
    def levels(self) -> int:
        return 4

    def with_x_in(self, x_in: float) -> "Params4":
        return replace(self, x_in=x_in)


Params = Union[Params3, Params4]
State = Union[State3, State4]

_UNIT_COEFFS3 = ("k_xy", "k_yx", "k_yz", "k_zy", "k_out", "p", "q", "r")
_UNIT_COEFFS4 = ("k_xy", "k_yx", "k_yz", "k_zy", "k_zw", "k_wz", "k_out",
                 "p", "q", "r", "s")


def unit_interval_violations(params: Params) -> tuple[str, ...]:
    """Names of coefficients outside (0, 1).

    The nominal model keeps transition and distribution coefficients inside
    the unit interval, but several reference parameter sets step outside it,
    so this is a warning aid (used by the CLI in strict mode), not an error.
    """
    names = _UNIT_COEFFS3 if isinstance(params, Params3) else _UNIT_COEFFS4
    return tuple(n for n in names if not (0.0 < getattr(params, n) < 1.0))


class DivergenceError(RuntimeError):
    """A state component left the allowed range or became non-finite."""

    def __init__(self, message: str, step: int, component: str | None = None,
                 last_state: tuple | None = None):
        super().__init__(message)
        self.step = step
        self.component = component
        self.last_state = last_state


class EmptyOrbitError(DivergenceError):
    """Divergence happened before a single point could be retained."""


def _kernel3(params: Params3):
    """One-step closure for the 3-level map.

    Shared by :func:`step3` and :func:`iterate` so that a single retained
    point is bitwise equal to a direct step.
    """
    A = params.k_xy * params.p
    B = params.k_yx * params.q
    C = (params.k_yx + params.k_yz) * params.q
    D = params.k_zy * params.r
    E = params.k_yz * params.q
    F = (params.k_zy + params.k_out) * params.r
    x_in = params.x_in

    def advance(x, y, z):
        return (x - A * x * x + B * y * y + x_in,
                y + A * x * x - C * y * y + D * z * z,
                z + E * y * y - F * z * z)

    return advance


def _kernel4(params: Params4):
    """One-step closure for the 4-level map."""
    A = params.k_xy * params.p
    B = params.k_yx * params.q
    C = (params.k_yx + params.k_yz) * params.q
    D = params.k_zy * params.r
    E = params.k_yz * params.q
    F = (params.k_zy + params.k_zw) * params.r
    G = params.k_wz * params.s
    H = params.k_zw * params.r
    I = (params.k_wz + params.k_out) * params.s
    x_in = params.x_in

    def advance(x, y, z, w):
        return (x - A * x * x + B * y * y + x_in,
                y + A * x * x - C * y * y + D * z * z,
                z + E * y * y - F * z * z + G * w * w,
                w + H * z * z - I * w * w)

    return advance


def _check_finite_state(values, names, step: int):
    for name, v in zip(names, values):
        if not math.isfinite(v):
            raise DivergenceError(
                f"component {name} became non-finite ({v!r}) after one step",
                step=step, component=name)


def step3(s: State3, params: Params3) -> State3:
    """One exact image of the 3-level map; no clamping, no noise."""
    out = _kernel3(params)(*s)
    _check_finite_state(out, "xyz", 1)
    return State3(*out)


def step4(s: State4, params: Params4) -> State4:
    """One exact image of the 4-level map."""
    out = _kernel4(params)(*s)
    _check_finite_state(out, "xyzw", 1)
    return State4(*out)


def _state_for(params: Params, values) -> State:
    return State3(*values) if isinstance(params, Params3) else State4(*values)


@dataclass
class Orbit:
    """Retained trajectory points after transient discard.

    ``points`` is a ``(n, dim)`` float64 array in iteration order.  When
    ``diverged`` is set, the points end at the last state that passed the
    bound check and ``divergence_step`` is the global index (counting from
    the first step after ``initial``) of the offending image.
    """

    dim: int
    initial: State
    n_transient: int
    points: np.ndarray
    params: Params
    diverged: bool = False
    divergence_step: int | None = None

    def __len__(self) -> int:
        return len(self.points)

    def final_state(self) -> State:
        return _state_for(self.params, tuple(self.points[-1]))

    def describe(self) -> str:
        tag = f"diverged@{self.divergence_step}" if self.diverged else "ok"
        return (f"orbit(levels={self.dim}, transient={self.n_transient}, "
                f"kept={len(self.points)}, x_in={self.params.x_in!r}, {tag})")


def iterate(params: Params, s0: State | tuple, n_transient: int, n_keep: int,
            bound: float = DEFAULT_BOUND) -> Orbit:
    """Iterate the map, discard ``n_transient`` images, retain the next ``n_keep``.

    Halts early (divergence flag set) as soon as any component exceeds
    ``bound`` in absolute value or becomes non-finite; the offending image is
    not retained.  Raises :class:`EmptyOrbitError` if that happens before any
    point was kept.
    """
    if n_transient < 0:
        raise ValueError("n_transient must be >= 0")
    if n_keep < 1:
        raise ValueError("n_keep must be >= 1")
    dim = params.levels
    if len(tuple(s0)) != dim:
        raise ValueError(f"initial state has {len(tuple(s0))} components, expected {dim}")

    initial = _state_for(params, tuple(float(v) for v in s0))
    advance = _kernel3(params) if dim == 3 else _kernel4(params)
    points = np.empty((n_keep, dim), dtype=np.float64)

    state = tuple(initial)
    kept = 0
    diverged = False
    divergence_step = None
    for n in range(n_transient + n_keep):
        nxt = advance(*state)
        ok = True
        for v in nxt:
            # NaN fails this comparison too, which is exactly what we want
            if not (abs(v) <= bound):
                ok = False
                break
        if not ok:
            if kept == 0:
                raise EmptyOrbitError(
                    f"orbit diverged at step {n + 1} before any point was retained",
                    step=n + 1, last_state=state)
            diverged = True
            divergence_step = n + 1
            break
        state = nxt
        if n >= n_transient:
            points[kept] = state
            kept += 1

    return Orbit(dim=dim, initial=initial, n_transient=n_transient,
                 points=points[:kept], params=params,
                 diverged=diverged, divergence_step=divergence_step)


@dataclass(frozen=True)
class FixedPoint:
    """Stationary state plus its one-step residual (max abs displacement)."""

    state: State
    residual: float


def _residual(params: Params, state) -> float:
    advance = _kernel3(params) if params.levels == 3 else _kernel4(params)
    nxt = advance(*state)
    return max(abs(a - b) for a, b in zip(nxt, state))


def fixed_point3(params: Params3) -> FixedPoint:
    """Positive stationary solution of the 3-level system (closed form)."""
    if params.x_in == 0.0:
        return FixedPoint(State3(0.0, 0.0, 0.0), 0.0)
    z = math.sqrt(params.x_in / (params.k_out * params.r))
    y = math.sqrt((params.x_in / (params.k_yz * params.q))
                  * (1.0 + params.k_zy / params.k_out))
    x = math.sqrt((params.x_in / (params.k_xy * params.p))
                  * (1.0 + (params.k_yx / params.k_yz)
                     * (1.0 + params.k_zy / params.k_out)))
    state = State3(x, y, z)
    return FixedPoint(state, _residual(params, state))


def fixed_point4(params: Params4) -> FixedPoint:
    """Positive stationary solution of the 4-level system.

    Obtained by telescoping the steady-state balance level by level, starting
    from the total balance x_in = k_out*s*w^2.  The returned residual is the
    authoritative check of the formula.
    """
    if params.x_in == 0.0:
        return FixedPoint(State4(0.0, 0.0, 0.0, 0.0), 0.0)
    tail = 1.0 + params.k_wz / params.k_out
    w = math.sqrt(params.x_in / (params.k_out * params.s))
    z = math.sqrt((params.x_in / (params.k_zw * params.r)) * tail)
    mid = 1.0 + (params.k_zy / params.k_zw) * tail
    y = math.sqrt((params.x_in / (params.k_yz * params.q)) * mid)
    x = math.sqrt((params.x_in / (params.k_xy * params.p))
                  * (1.0 + (params.k_yx / params.k_yz) * mid))
    state = State4(x, y, z, w)
    return FixedPoint(state, _residual(params, state))


def jacobian3(s: State3 | tuple, params: Params3) -> np.ndarray:
    """3x3 matrix of partial derivatives of the map at ``s``."""
    x, y, z = s
    A = params.k_xy * params.p
    B = params.k_yx * params.q
    C = (params.k_yx + params.k_yz) * params.q
    D = params.k_zy * params.r
    E = params.k_yz * params.q
    F = (params.k_zy + params.k_out) * params.r
    return np.array([
        [1.0 - 2.0 * A * x, 2.0 * B * y, 0.0],
        [2.0 * A * x, 1.0 - 2.0 * C * y, 2.0 * D * z],
        [0.0, 2.0 * E * y, 1.0 - 2.0 * F * z],
    ])


def jacobian4(s: State4 | tuple, params: Params4) -> np.ndarray:
    """4x4 matrix of partial derivatives of the map at ``s``."""
    x, y, z, w = s
    A = params.k_xy * params.p
    B = params.k_yx * params.q
    C = (params.k_yx + params.k_yz) * params.q
    D = params.k_zy * params.r
    E = params.k_yz * params.q
    F = (params.k_zy + params.k_zw) * params.r
    G = params.k_wz * params.s
    H = params.k_zw * params.r
    I = (params.k_wz + params.k_out) * params.s
    return np.array([
        [1.0 - 2.0 * A * x, 2.0 * B * y, 0.0, 0.0],
        [2.0 * A * x, 1.0 - 2.0 * C * y, 2.0 * D * z, 0.0],
        [0.0, 2.0 * E * y, 1.0 - 2.0 * F * z, 2.0 * G * w],
        [0.0, 0.0, 2.0 * H * z, 1.0 - 2.0 * I * w],
    ])


def jacobian(s, params: Params) -> np.ndarray:
    if not all(math.isfinite(v) for v in tuple(s)):
        raise ValueError("jacobian requires a finite state")
    if isinstance(params, Params3):
        return jacobian3(s, params)
    return jacobian4(s, params)


def mass_balance_residual(s, params: Params) -> float:
    """Rounding residue of the per-step mass balance.

    Summing the level equations gives
    total' - total = x_in - k_out*r*z^2 (3 levels) or x_in - k_out*s*w^2
    (4 levels); algebraically the value below is zero, so what is returned
    is pure floating-point cancellation error.
    """
    state = tuple(s)
    if isinstance(params, Params3):
        nxt = _kernel3(params)(*state)
        outflow = params.k_out * params.r * state[2] * state[2]
    else:
        nxt = _kernel4(params)(*state)
        outflow = params.k_out * params.s * state[3] * state[3]
    return (math.fsum(nxt) - math.fsum(state)) - params.x_in + outflow
