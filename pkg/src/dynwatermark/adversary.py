"""Sensor-side attack models.

The sensor decides what the controller gets to see.  Every strategy here is a
deterministic function of a :class:`SensorView` plus an attack-private RNG
stream.  The view carries exactly what a compromised sensor could know: the
true measurements so far, its own past reports, the nominal inputs (which are
recomputable from the reports and the public policy), and the public plant
and watermark parameters.  The watermark realization and the true process
noise are structurally absent — there are no such fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .linsys import ArmaxPlant, ArxPlant, MimoPlant, PartialPlant, ScalarPlant
from .watermark import draw_iid

__all__ = [
    "SensorView",
    "AttackStrategy",
    "HonestSensor",
    "ReplayAttack",
    "NoiseSimAttack",
    "AdditiveEstimatedAttack",
    "CustomAttack",
    "register_attack",
    "estimate_noise_arx",
    "additive_attack_step",
    "BUILTIN_ATTACKS",
]


@dataclass
class SensorView:
    """What the compromised sensor knows at reporting time ``t``.

    ``y[0..t]`` are valid (``y[t]`` is the measurement being reported on);
    ``z[0..t-1]`` and ``u_g[0..t-1]`` are valid.  ``u_g`` is cached here for
    convenience only: it is a deterministic function of the reports and the
    public policy, so carrying it adds no information.
    """

    t: int
    y: Sequence
    z: Sequence
    u_g: Sequence
    plant: Any
    sigma_e2: float
    e_family: str = "gaussian"
    w_family: str = "gaussian"


def _copy(value):
    return value.copy() if isinstance(value, np.ndarray) else value


class AttackStrategy:
    """Base reporting strategy: honest until ``onset``, then `_attack`."""

    kind = "honest"

    def __init__(self, onset: int | None = None):
        if onset is not None and onset < 1:
            raise ValueError(f"onset must be >= 1, got {onset}")
        self.onset = onset

    def reset(self) -> None:
        pass

    def report(self, view: SensorView):
        if self.onset is None or view.t < self.onset:
            return _copy(view.y[view.t])
        return self._attack(view)

    def _attack(self, view: SensorView):  # pragma: no cover - abstract
        raise NotImplementedError


class HonestSensor(AttackStrategy):
    """Reports z[t] = y[t] forever."""

    kind = "honest"

    def __init__(self):
        super().__init__(onset=None)


class ReplayAttack(AttackStrategy):
    """Loop the last ``record_len`` honest reports verbatim from onset on."""

    kind = "replay"

    def __init__(self, onset: int, record_len: int):
        super().__init__(onset)
        if record_len < 1:
            raise ValueError(f"record_len must be >= 1, got {record_len}")
        if record_len > onset:
            raise ValueError(
                f"record_len={record_len} exceeds the {onset} honest samples "
                "available before onset"
            )
        self.record_len = record_len

    def _attack(self, view: SensorView):
        j = (view.t - self.onset) % self.record_len
        return _copy(view.z[self.onset - self.record_len + j])


class NoiseSimAttack(AttackStrategy):
    """Replace the plant with a private simulation of the same closed loop.

    From onset on, the report is the output of a simulated copy of the plant
    driven by the nominal inputs and the attacker's own process noise w'.
    The attacker cannot add the watermark (it never sees e), which is what
    the correlation tests catch.
    """

    kind = "noise_sim"

    def __init__(self, onset: int, rng: np.random.Generator):
        super().__init__(onset)
        self._rng = rng
        self.reset()

    def reset(self) -> None:
        self._w_hist: list[float] = []
        self._x_sim: np.ndarray | None = None

    def _attack(self, view: SensorView):
        plant = view.plant
        t = view.t
        rng = self._rng
        z, u_g = view.z, view.u_g

        def past_z(i):
            return z[i] if i >= 0 else (z[0] * 0.0 if t > 0 else 0.0)

        def past_ug(i):
            return u_g[i] if i >= 0 else (u_g[0] * 0.0 if t > 0 else 0.0)

        if isinstance(plant, ScalarPlant):
            w = float(draw_iid(view.w_family, plant.sigma_w2, rng))
            return plant.a * float(past_z(t - 1)) + plant.b * float(past_ug(t - 1)) + w
        if isinstance(plant, ArxPlant):
            w = float(draw_iid(view.w_family, plant.sigma_w2, rng))
            acc = w
            for m, am in enumerate(plant.a_coeffs):
                acc -= am * float(past_z(t - 1 - m))
            for r, br in enumerate(plant.b_coeffs):
                acc += br * float(past_ug(t - 1 - r))
            return acc
        if isinstance(plant, ArmaxPlant):
            w = float(draw_iid(view.w_family, plant.sigma_w2, rng))
            # Own colored-noise memory; pre-onset w' values are taken as zero.
            self._w_hist.insert(0, w)
            acc = 0.0
            for k, ak in enumerate(plant.a_coeffs):
                acc -= ak * float(past_z(t - 1 - k))
            for k, bk in enumerate(plant.b_coeffs):
                acc += bk * float(past_ug(t - plant.delay - k))
            for k, ck in enumerate(plant.c_coeffs):
                if k < len(self._w_hist):
                    acc += ck * self._w_hist[k]
            del self._w_hist[len(plant.c_coeffs):]
            return acc
        if isinstance(plant, PartialPlant):
            p = plant.dim
            if self._x_sim is None:
                self._x_sim = np.zeros(p)
            w = draw_iid(view.w_family, plant.sigma_w2, rng, p)
            self._x_sim = plant.A @ self._x_sim + plant.B * float(past_ug(t - 1)) + w
            n = float(draw_iid("gaussian", plant.sigma_n2, rng))
            return float(plant.C @ self._x_sim + n)
        if isinstance(plant, MimoPlant):
            n_dim = plant.dim
            w = draw_iid(view.w_family, plant.sigma_w2, rng, n_dim)
            zp = np.asarray(past_z(t - 1), dtype=float)
            ug = np.asarray(past_ug(t - 1), dtype=float)
            return plant.A @ zp + plant.B @ ug + w
        raise TypeError(f"unsupported plant type {type(plant).__name__}")


def estimate_noise_arx(view: SensorView, plant: ArxPlant | ScalarPlant) -> float:
    """Conditional-mean estimate of w[t] from the public-information innovation.

    The innovation s[t] = y[t] (+ AR terms) - (nominal-input terms) equals
    b0*e[t-1] + w[t]; with both white and independent, E[w|s] = beta*s where
    beta = sigma_w2 / (b0^2 sigma_e2 + sigma_w2).
    """
    t = view.t
    y, u_g = view.y, view.u_g

    def past_y(i):
        return float(y[i]) if i >= 0 else 0.0

    def past_ug(i):
        return float(u_g[i]) if i >= 0 else 0.0

    if isinstance(plant, ScalarPlant):
        b0 = plant.b
        s = float(y[t]) - plant.a * past_y(t - 1) - plant.b * past_ug(t - 1)
    elif isinstance(plant, ArxPlant):
        b0 = plant.b_coeffs[0]
        s = float(y[t])
        for m, am in enumerate(plant.a_coeffs):
            s += am * past_y(t - 1 - m)
        for r, br in enumerate(plant.b_coeffs):
            s -= br * past_ug(t - 1 - r)
    else:
        raise TypeError("estimate_noise_arx needs a scalar or ARX plant")
    beta = plant.sigma_w2 / (b0 * b0 * view.sigma_e2 + plant.sigma_w2)
    return beta * s


def additive_attack_step(view: SensorView, n_t) -> tuple[Any, Any]:
    """One step of the estimated-noise additive attack: returns (v[t], z[t]).

    v[t] = n[t] - w_hat[t]; the sensor adds fresh fake noise and subtracts its
    best estimate of the real noise, aiming z at the attack-free output law.
    """
    plant = view.plant
    if isinstance(plant, (ScalarPlant, ArxPlant)):
        w_hat = estimate_noise_arx(view, plant)
        v = float(n_t) - w_hat
        return v, float(view.y[view.t]) + v
    if isinstance(plant, MimoPlant):
        t = view.t
        y_prev = (
            np.asarray(view.y[t - 1], dtype=float) if t >= 1 else np.zeros(plant.dim)
        )
        ug_prev = (
            np.asarray(view.u_g[t - 1], dtype=float)
            if t >= 1
            else np.zeros(plant.n_inputs)
        )
        s = np.asarray(view.y[t], dtype=float) - plant.A @ y_prev - plant.B @ ug_prev
        gram = view.sigma_e2 * (plant.B @ plant.B.T) + plant.sigma_w2 * np.eye(plant.dim)
        w_hat = plant.sigma_w2 * np.linalg.solve(gram, s)
        v = np.asarray(n_t, dtype=float) - w_hat
        return v, np.asarray(view.y[t], dtype=float) + v
    raise TypeError(
        "additive_estimated attack is defined for scalar, ARX and MIMO plants only"
    )


class AdditiveEstimatedAttack(AttackStrategy):
    """Add fake process noise while subtracting an estimate of the real one.

    Power-neutral by construction: the report follows the honest output law
    exactly in variance, but the residual part of the real noise that the
    estimate misses stays in, which shifts the watermark-removed variance.
    """

    kind = "additive_estimated"

    def __init__(self, onset: int, rng: np.random.Generator):
        super().__init__(onset)
        self._rng = rng

    def _attack(self, view: SensorView):
        plant = view.plant
        if isinstance(plant, MimoPlant):
            n_t = draw_iid(view.w_family, plant.sigma_w2, self._rng, plant.dim)
        else:
            n_t = float(draw_iid(view.w_family, plant.sigma_w2, self._rng))
        _, z_t = additive_attack_step(view, n_t)
        return z_t


_REGISTRY: dict[str, Callable] = {}


def register_attack(name: str):
    """Decorator registering ``fn(view, rng, **params) -> z_t`` under ``name``."""

    def deco(fn):
        _REGISTRY[name] = fn
        return fn

    return deco


class CustomAttack(AttackStrategy):
    """Attack looked up from the registry by name (scenario-configurable)."""

    kind = "custom"

    def __init__(self, name: str, onset: int, rng: np.random.Generator, params=None):
        super().__init__(onset)
        if name not in _REGISTRY:
            raise ValueError(
                f"unknown custom attack {name!r}; registered: {sorted(_REGISTRY)}"
            )
        self.name = name
        self._fn = _REGISTRY[name]
        self._rng = rng
        self._params = dict(params or {})

    def _attack(self, view: SensorView):
        return self._fn(view, self._rng, **self._params)


BUILTIN_ATTACKS = ("honest", "replay", "noise_sim", "additive_estimated")
