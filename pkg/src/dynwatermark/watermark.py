"""Private excitation for watermarked actuators.

The actuator superimposes an i.i.d. secret sequence e[t] on the nominal input.
Its distribution is public, the realization is private.  For plants whose
input enters through a lag polynomial B(q^-1), the raw sequence is passed
through a shaping recursion first so that the watermark's contribution to the
output stays white.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FAMILIES",
    "WatermarkSpec",
    "draw_iid",
    "draw_excitation",
    "match_distribution",
    "ShaperState",
    "make_shaper_state",
    "pre_equalize",
    "armax_shape",
]

FAMILIES = ("gaussian", "laplace", "uniform")


def draw_iid(family: str, variance: float, rng: np.random.Generator, size=None):
    """Draw zero-mean i.i.d. samples of the given family and variance."""
    if variance < 0.0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    if family == "gaussian":
        return rng.normal(0.0, math.sqrt(variance), size)
    if family == "laplace":
        return rng.laplace(0.0, math.sqrt(variance / 2.0), size)
    if family == "uniform":
        half = math.sqrt(3.0 * variance)
        return rng.uniform(-half, half, size)
    raise ValueError(f"unknown noise family {family!r}; expected one of {FAMILIES}")


@dataclass(frozen=True)
class WatermarkSpec:
    """Watermark configuration: excitation variance, family, and shaping mode.

    ``family`` may be "matched", meaning: choose e so that b0*e has the same
    distribution as the process noise (resolved against the plant via
    :func:`match_distribution` before drawing).  ``shaper`` is "auto" (pick
    per plant class), "none", "arx" (pre-equalizer) or "armax".
    """

    sigma_e2: float
    family: str = "gaussian"
    shaper: str = "auto"

    def __post_init__(self) -> None:
        if not self.sigma_e2 >= 0.0:
            raise ValueError(f"sigma_e2 must be >= 0, got {self.sigma_e2}")
        if self.family not in FAMILIES + ("matched",):
            raise ValueError(f"unknown excitation family {self.family!r}")
        if self.shaper not in ("auto", "none", "arx", "armax"):
            raise ValueError(f"unknown shaper {self.shaper!r}")


def draw_excitation(spec: WatermarkSpec, rng: np.random.Generator, size=None):
    """Draw raw excitation samples e ~ spec (scalar when size is None)."""
    if spec.family == "matched":
        raise ValueError("'matched' family must be resolved against a plant first")
    out = draw_iid(spec.family, spec.sigma_e2, rng, size)
    return float(out) if size is None else out


def match_distribution(target: tuple[str, float], b: float) -> tuple[str, float]:
    """Excitation distribution such that b*e is distributed like ``target``.

    ``target`` is a (family, variance) pair for the process noise; the matched
    excitation keeps the family (all supported families are closed under
    scaling) and divides the variance by b**2.
    """
    family, variance = target
    if family not in FAMILIES:
        raise ValueError(f"unknown noise family {family!r}")
    if b == 0.0:
        raise ValueError("cannot match through a zero input gain")
    return family, float(variance) / (b * b)


# ---------------------------------------------------------------------------
# shaping recursions
# ---------------------------------------------------------------------------


@dataclass
class ShaperState:
    """Most-recent-first memories of a shaping recursion (zero-initialized)."""

    shaped_hist: list = field(default_factory=list)
    e_hist: list = field(default_factory=list)


def make_shaper_state(b_coeffs, c_coeffs=None) -> ShaperState:
    """Fresh at-rest state sized for the given lag polynomials."""
    n_s = max(len(b_coeffs) - 1, 0)
    n_e = len(c_coeffs) if c_coeffs is not None else 0
    return ShaperState(shaped_hist=[0.0] * n_s, e_hist=[0.0] * n_e)


def _push(hist: list, value: float) -> None:
    if hist:
        hist.insert(0, value)
        hist.pop()


def pre_equalize(state: ShaperState, b_coeffs, e_new: float) -> float:
    """One step of the inverse-B pre-equalizer.

    e'[t] = e[t] - (b1 e'[t-1] + ... + bh e'[t-h]) / b0, which guarantees
    B(q^-1) e'[t] = b0 * e[t]: the watermark reaches the output as white
    b0*e even though the input channel is a filter.
    """
    if len(state.shaped_hist) < len(b_coeffs) - 1:
        raise ValueError("shaper state does not match b_coeffs order")
    hist = state.shaped_hist
    acc = 0.0
    for k in range(1, len(b_coeffs)):
        acc += b_coeffs[k] * hist[k - 1]
    out = float(e_new) - acc / b_coeffs[0]
    _push(hist, out)
    return out


def armax_shape(state: ShaperState, b_coeffs, c_coeffs, e_new: float) -> float:
    """One step of the ARMAX watermark shaper: s solving B(q^-1) s = C(q^-1) e.

    s[t] = (c0 e[t] + ... + cr e[t-r] - b1 s[t-1] - ... - bh s[t-h]) / b0.
    With C = (1,) this reduces to the pre-equalizer.
    """
    if len(state.shaped_hist) < len(b_coeffs) - 1 or len(state.e_hist) < len(c_coeffs):
        raise ValueError("shaper state does not match coefficient orders")
    _push(state.e_hist, float(e_new))
    acc = 0.0
    for k, ck in enumerate(c_coeffs):
        acc += ck * state.e_hist[k]
    for k in range(1, len(b_coeffs)):
        acc -= b_coeffs[k] * state.shaped_hist[k - 1]
    out = acc / b_coeffs[0]
    _push(state.shaped_hist, out)
    return out
