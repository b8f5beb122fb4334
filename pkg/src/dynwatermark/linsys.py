"""Linear stochastic plant models and their one-step transition maps.

Conventions shared across the package:

* histories are passed most-recent-first (``hist[0]`` is the latest sample,
  ``hist[k]`` is ``k`` steps back); anything before t=0 is implicitly zero;
* plants are pure: process/measurement noise is drawn by the caller and passed
  in, so the same plant object can be driven by recorded or simulated noise;
* polynomial coefficient tuples are ordered by increasing lag.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ScalarPlant",
    "ArxPlant",
    "ArmaxPlant",
    "PartialPlant",
    "MimoPlant",
    "check_min_phase",
    "step_scalar",
    "step_arx",
    "step_armax",
    "step_statespace",
    "observe_partial",
    "ControlPolicy",
    "ZeroPolicy",
    "LinearFeedback",
    "ArxDeadbeat",
    "CallablePolicy",
]

# Roots this close to the unit circle are treated as on it.
MIN_PHASE_TOL = 1e-9


def _roots_in_lag_operator(coeffs: Sequence[float]) -> np.ndarray:
    """Roots of c0 + c1*s + ... + ck*s**k, where s stands for the lag operator."""
    arr = np.asarray(coeffs, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("coefficient sequence must be a non-empty 1-d sequence")
    return np.roots(arr[::-1])


def check_min_phase(coeffs: Sequence[float], name: str = "b_coeffs") -> None:
    """Require all roots of the lag polynomial strictly outside the unit circle.

    Strict minimum phase makes the inverse filter stable, which the shaping
    recursions rely on.  Root magnitudes are computed from the companion
    matrix (``np.roots``) and compared to 1 with tolerance ``MIN_PHASE_TOL``.
    """
    roots = _roots_in_lag_operator(coeffs)
    if roots.size == 0:
        return
    mags = np.abs(roots)
    bad = mags <= 1.0 + MIN_PHASE_TOL
    if bad.any():
        worst = roots[np.argmin(mags)]
        raise ValueError(
            f"{name}={tuple(float(c) for c in coeffs)} is not strictly minimum "
            f"phase: lag-polynomial root at {worst:.6g} (|root|={abs(worst):.6g}) "
            "is inside or on the unit circle"
        )


def _as_float_tuple(values: Sequence[float], name: str) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in values)
    except TypeError as exc:
        raise ValueError(f"{name} must be a sequence of numbers") from exc
    if not out:
        raise ValueError(f"{name} must be non-empty")
    if not all(math.isfinite(v) for v in out):
        raise ValueError(f"{name} must be finite, got {out}")
    return out


@dataclass(frozen=True)
class ScalarPlant:
    """Fully observed first-order plant x[t+1] = a*x[t] + b*u[t] + w[t+1]."""

    a: float
    b: float
    sigma_w2: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("plant coefficients must be finite")
        if self.b == 0.0:
            raise ValueError("b must be nonzero (the input must reach the state)")
        if not self.sigma_w2 > 0.0:
            raise ValueError(f"sigma_w2 must be positive, got {self.sigma_w2}")


@dataclass(frozen=True)
class ArxPlant:
    """ARX plant y[t+1] = -sum_m a[m]*y[t-m] + sum_r b[r]*u[t-r] + w[t+1].

    ``a_coeffs`` = (a_0, ..., a_p) weight y[t] back to y[t-p]; ``b_coeffs`` =
    (b_0, ..., b_h) weight u[t] back to u[t-h] and must form a strictly
    minimum-phase lag polynomial with b_0 != 0.
    """

    a_coeffs: tuple[float, ...]
    b_coeffs: tuple[float, ...]
    sigma_w2: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "a_coeffs", _as_float_tuple(self.a_coeffs, "a_coeffs"))
        object.__setattr__(self, "b_coeffs", _as_float_tuple(self.b_coeffs, "b_coeffs"))
        if self.b_coeffs[0] == 0.0:
            raise ValueError("b_coeffs[0] must be nonzero")
        check_min_phase(self.b_coeffs, "b_coeffs")
        if not self.sigma_w2 > 0.0:
            raise ValueError(f"sigma_w2 must be positive, got {self.sigma_w2}")

    @property
    def order_ar(self) -> int:
        return len(self.a_coeffs) - 1

    @property
    def order_b(self) -> int:
        return len(self.b_coeffs) - 1


@dataclass(frozen=True)
class ArmaxPlant:
    """ARMAX plant with input delay:

    y[t] = -sum_{k=1..p} a[k]*y[t-k] + sum_{k=0..h} b[k]*u[t-delay-k]
           + sum_{k=0..r} c[k]*w[t-k]

    ``a_coeffs`` = (a_1, ..., a_p) — note the sum starts one step back, unlike
    :class:`ArxPlant`.  ``c_coeffs`` = (c_0=1, c_1, ..., c_r).  Both the b and
    c lag polynomials must be strictly minimum phase.
    """

    a_coeffs: tuple[float, ...]
    b_coeffs: tuple[float, ...]
    c_coeffs: tuple[float, ...]
    delay: int
    sigma_w2: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "a_coeffs", _as_float_tuple(self.a_coeffs, "a_coeffs"))
        object.__setattr__(self, "b_coeffs", _as_float_tuple(self.b_coeffs, "b_coeffs"))
        object.__setattr__(self, "c_coeffs", _as_float_tuple(self.c_coeffs, "c_coeffs"))
        if self.b_coeffs[0] == 0.0:
            raise ValueError("b_coeffs[0] must be nonzero")
        if self.c_coeffs[0] != 1.0:
            raise ValueError(f"c_coeffs[0] must equal 1, got {self.c_coeffs[0]}")
        check_min_phase(self.b_coeffs, "b_coeffs")
        check_min_phase(self.c_coeffs, "c_coeffs")
        if not (isinstance(self.delay, int) and self.delay >= 1):
            raise ValueError(f"delay must be an integer >= 1, got {self.delay}")
        if not self.sigma_w2 > 0.0:
            raise ValueError(f"sigma_w2 must be positive, got {self.sigma_w2}")

    @property
    def order_ar(self) -> int:
        return len(self.a_coeffs)

    @property
    def order_b(self) -> int:
        return len(self.b_coeffs) - 1

    @property
    def order_c(self) -> int:
        return len(self.c_coeffs) - 1


@dataclass(frozen=True, eq=False)
class PartialPlant:
    """Partially observed SISO plant.

    x[t+1] = A x[t] + B u[t] + w[t+1],  y[t] = C x[t] + n[t],
    with w ~ (0, sigma_w2 I) and scalar measurement noise n ~ (0, sigma_n2).
    (A, C) must be observable.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sigma_w2: float
    sigma_n2: float

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(-1)
        C = np.asarray(self.C, dtype=float).reshape(-1)
        p = A.shape[0]
        if A.shape != (p, p):
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape != (p,) or C.shape != (p,):
            raise ValueError("B and C must have one entry per state")
        obs = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(p)])
        if np.linalg.matrix_rank(obs) < p:
            raise ValueError("(A, C) is not observable")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        if not self.sigma_w2 > 0.0:
            raise ValueError(f"sigma_w2 must be positive, got {self.sigma_w2}")
        if not self.sigma_n2 > 0.0:
            raise ValueError(f"sigma_n2 must be positive, got {self.sigma_n2}")

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class MimoPlant:
    """Fully observed MIMO plant x[t+1] = A x[t] + B u[t] + w[t+1], w ~ (0, sigma_w2 I)."""

    A: np.ndarray
    B: np.ndarray
    sigma_w2: float

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got shape {B.shape}")
        if np.linalg.matrix_rank(B) < n:
            warnings.warn(
                "rank(B) < state dimension: the attack-detectability guarantee "
                "does not apply to this plant",
                stacklevel=2,
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if not self.sigma_w2 > 0.0:
            raise ValueError(f"sigma_w2 must be positive, got {self.sigma_w2}")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]


# ---------------------------------------------------------------------------
# one-step transition maps
# ---------------------------------------------------------------------------


def step_scalar(plant: ScalarPlant, x: float, u: float, w: float) -> float:
    """x[t+1] from x[t], applied input u[t] and process noise w[t+1]."""
    if not (math.isfinite(x) and math.isfinite(u) and math.isfinite(w)):
        raise ValueError(f"non-finite step input: x={x}, u={u}, w={w}")
    return plant.a * x + plant.b * u + w


def step_arx(
    plant: ArxPlant,
    y_hist: Sequence[float],
    u_hist: Sequence[float],
    w: float,
) -> float:
    """y[t+1] from most-recent-first output/input histories and noise w[t+1]."""
    a, b = plant.a_coeffs, plant.b_coeffs
    if len(y_hist) < len(a) or len(u_hist) < len(b):
        raise ValueError(
            f"history too short: need {len(a)} outputs and {len(b)} inputs, "
            f"got {len(y_hist)} and {len(u_hist)}"
        )
    acc = w
    for m, am in enumerate(a):
        acc -= am * y_hist[m]
    for r, br in enumerate(b):
        acc += br * u_hist[r]
    return acc


def step_armax(
    plant: ArmaxPlant,
    y_hist: Sequence[float],
    u_hist: Sequence[float],
    w_hist: Sequence[float],
) -> float:
    """y[t] from histories; ``w_hist`` starts at the *current* noise w[t].

    ``y_hist[0]`` is y[t-1]; ``u_hist[0]`` is u[t-1] so the delayed taps are
    ``u_hist[delay-1+k]``; ``w_hist[0]`` is w[t].
    """
    a, b, c, l = plant.a_coeffs, plant.b_coeffs, plant.c_coeffs, plant.delay
    if len(y_hist) < len(a) or len(u_hist) < l + len(b) - 1 or len(w_hist) < len(c):
        raise ValueError("history too short for plant orders")
    acc = 0.0
    for k, ak in enumerate(a):
        acc -= ak * y_hist[k]
    for k, bk in enumerate(b):
        acc += bk * u_hist[l - 1 + k]
    for k, ck in enumerate(c):
        acc += ck * w_hist[k]
    return acc


def step_statespace(
    plant: PartialPlant | MimoPlant,
    x: np.ndarray,
    u: float | np.ndarray,
    w: np.ndarray,
) -> np.ndarray:
    """x[t+1] = A x[t] + B u[t] + w[t+1] for either state-space plant class."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if plant.B.ndim == 1:
        drive = plant.B * float(u)
    else:
        drive = plant.B @ np.asarray(u, dtype=float)
    out = plant.A @ x + drive + w
    if not np.isfinite(out).all():
        raise ValueError("non-finite state after step")
    return out


def observe_partial(plant: PartialPlant, x: np.ndarray, n: float) -> float:
    """Scalar measurement y[t] = C x[t] + n[t]."""
    return float(plant.C @ np.asarray(x, dtype=float) + n)


# ---------------------------------------------------------------------------
# control policies
# ---------------------------------------------------------------------------


class ControlPolicy:
    """Deterministic map from the reported output stream to the nominal input.

    Policies are consumed as streams: feed reports in arrival order through
    :meth:`step`, which returns u_g[t] = g_t(z[0..t]).  They carry no secret
    state, so an adversary can run its own instance on the public report
    stream and reproduce the controller's nominal inputs exactly.
    """

    def reset(self) -> None:  # pragma: no cover - trivial default
        pass

    def step(self, z_t):
        raise NotImplementedError


@dataclass
class ZeroPolicy(ControlPolicy):
    """Open-loop zero input (scalar 0.0, or a zero vector of width n_inputs)."""

    n_inputs: int | None = None

    def step(self, z_t):
        if self.n_inputs is None:
            return 0.0
        return np.zeros(self.n_inputs)


@dataclass
class LinearFeedback(ControlPolicy):
    """Static gain on the latest report: u_g[t] = f * z[t] (or F @ z[t])."""

    f: float | np.ndarray

    def step(self, z_t):
        if np.ndim(self.f) == 0:
            return float(self.f) * float(z_t)
        return np.asarray(self.f, dtype=float) @ np.asarray(z_t, dtype=float)


class ArxDeadbeat(ControlPolicy):
    """Stable inverse-of-B cancellation of the ARX autoregression.

    u_g[t] = (sum_m a[m]*z[t-m] - sum_{r>=1} b[r]*u_g[t-r]) / b[0], so that
    B(q^-1) u_g[t] = sum_m a[m] z[t-m]; under honest reporting the closed loop
    collapses to y[t+1] = b[0]*e[t] + w[t+1].  Stable because B is strictly
    minimum phase.
    """

    def __init__(self, a_coeffs: Sequence[float], b_coeffs: Sequence[float]):
        check_min_phase(b_coeffs, "b_coeffs")
        self.a_coeffs = tuple(float(v) for v in a_coeffs)
        self.b_coeffs = tuple(float(v) for v in b_coeffs)
        if self.b_coeffs[0] == 0.0:
            raise ValueError("b_coeffs[0] must be nonzero")
        self.reset()

    def reset(self) -> None:
        self._z = [0.0] * len(self.a_coeffs)
        self._u = [0.0] * max(len(self.b_coeffs) - 1, 1)

    def step(self, z_t) -> float:
        z = self._z
        z.insert(0, float(z_t))
        z.pop()
        acc = 0.0
        for m, am in enumerate(self.a_coeffs):
            acc += am * z[m]
        b = self.b_coeffs
        u = self._u
        for r in range(1, len(b)):
            acc -= b[r] * u[r - 1]
        out = acc / b[0]
        u.insert(0, out)
        u.pop()
        return out


class CallablePolicy(ControlPolicy):
    """Wrap an arbitrary deterministic function of the full report history.

    ``fn(z_hist)`` receives the reports oldest-first, including the latest.
    Mainly for experiments; not representable in scenario files.
    """

    def __init__(self, fn: Callable[[list], float]):
        self._fn = fn
        self._z: list = []

    def reset(self) -> None:
        self._z = []

    def step(self, z_t):
        self._z.append(z_t)
        return self._fn(self._z)
