"""Watermark-aware residual construction.

Each plant class gets a pair of one-step residuals computed from reported
outputs, nominal inputs and the private excitation:

* ``r_wm``  — watermark-removed: under honest reporting it equals the process
  noise (or the filter innovation) alone;
* ``r_raw`` — nominal-input-only: the watermark contribution is left in, so
  its honest variance is inflated by the (public) excitation power.

For the partially observed class the role of the residual is played by the
steady-state Kalman innovation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linsys import ArmaxPlant, ArxPlant, MimoPlant, PartialPlant, ScalarPlant

__all__ = [
    "ResidualPair",
    "scalar_residual",
    "arx_residual",
    "ArmaxFilterState",
    "armax_filter_step",
    "KalmanDesign",
    "kalman_design",
    "KalmanState",
    "kalman_step",
    "mimo_residual",
]


@dataclass(frozen=True)
class ResidualPair:
    r_wm: float
    r_raw: float


def scalar_residual(
    plant: ScalarPlant, z_prev: float, z_next: float, g_val: float, e_val: float
) -> ResidualPair:
    """Residual pair for x[k+1] = a x[k] + b u[k] + w[k+1] from reports."""
    r_raw = z_next - plant.a * z_prev - plant.b * g_val
    return ResidualPair(r_raw - plant.b * e_val, r_raw)


def arx_residual(
    plant: ArxPlant, z_hist, g_hist, e_val: float
) -> ResidualPair:
    """Residual pair for the ARX recursion.

    ``z_hist`` = (z[k+1], z[k], ..., z[k-p]) most-recent-first; ``g_hist`` =
    (g[k], ..., g[k-h]).  The nominal inputs are the policy outputs; the
    watermark reaches the output as b0*e[k] thanks to the pre-equalizer.
    """
    a, b = plant.a_coeffs, plant.b_coeffs
    if len(z_hist) < len(a) + 1 or len(g_hist) < len(b):
        raise ValueError("history too short for plant orders")
    r_raw = float(z_hist[0])
    for m, am in enumerate(a):
        r_raw += am * float(z_hist[1 + m])
    for r, br in enumerate(b):
        r_raw -= br * float(g_hist[r])
    return ResidualPair(r_raw - b[0] * e_val, r_raw)


@dataclass
class ArmaxFilterState:
    """State of the one-step prediction-error filter for an ARMAX plant.

    The filter reconstructs lambda[t] = e[t-delay] + w[t] from reports: the
    prediction feeds back its own past errors through the C polynomial, so
    with honest reports and at-rest initial conditions the error is exact.
    """

    plant: ArmaxPlant
    z_hist: list = field(default_factory=list)
    ztilde_hist: list = field(default_factory=list)
    t: int = 0

    def __post_init__(self) -> None:
        if not self.z_hist:
            self.z_hist = [0.0] * len(self.plant.a_coeffs)
        if not self.ztilde_hist:
            self.ztilde_hist = [0.0] * max(self.plant.order_c, 1)

    @property
    def burn_in(self) -> int:
        p = self.plant
        return max(p.order_ar, p.order_b + p.delay, p.order_c)


def armax_filter_step(
    state: ArmaxFilterState, z_t: float, g_hist, e_lag: float
) -> tuple[float, ResidualPair]:
    """Advance the filter one report.

    ``g_hist`` = (u_g[t-delay], u_g[t-delay-1], ..., u_g[t-delay-h])
    most-recent-first; ``e_lag`` = e[t-delay] (zero before the watermark
    starts).  Returns the prediction error ztilde[t] and the residual pair
    (ztilde - e_lag, ztilde).
    """
    plant = state.plant
    a, b, c = plant.a_coeffs, plant.b_coeffs, plant.c_coeffs
    if len(g_hist) < len(b):
        raise ValueError("g_hist shorter than the b polynomial")
    pred = 0.0
    for k, ak in enumerate(a):
        pred -= ak * state.z_hist[k]
    for k, bk in enumerate(b):
        pred += bk * float(g_hist[k])
    for k in range(1, len(c)):
        pred += c[k] * state.ztilde_hist[k - 1]
    ztilde = float(z_t) - pred
    _push(state.z_hist, float(z_t))
    _push(state.ztilde_hist, ztilde)
    state.t += 1
    return ztilde, ResidualPair(ztilde - float(e_lag), ztilde)


def _push(hist: list, value: float) -> None:
    if hist:
        hist.insert(0, value)
        hist.pop()


# ---------------------------------------------------------------------------
# steady-state Kalman filter (partially observed SISO)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KalmanDesign:
    """Steady-state filter quantities for a :class:`PartialPlant`.

    ``P`` is the a-priori error covariance (fixed point of the predictor
    Riccati map), ``K`` the filter-form gain applied to the innovation in the
    measurement update, and ``sigma_R2`` = C P C^T + sigma_n2 the innovation
    variance.  The predictor-form gain is ``K_pred`` = A K.
    """

    plant: PartialPlant
    P: np.ndarray
    K: np.ndarray
    sigma_R2: float
    iterations: int

    @property
    def K_pred(self) -> np.ndarray:
        return self.plant.A @ self.K


def kalman_design(
    plant: PartialPlant, tol: float = 1e-12, max_iter: int = 10**6
) -> KalmanDesign:
    """Solve the predictor Riccati equation by fixed-point iteration from 0.

    P <- A P A^T - A P C^T (C P C^T + sigma_n2)^{-1} C P A^T + sigma_w2 I,
    iterated until the max-abs entry change drops below ``tol``.  Starting
    from P=0 the iterates increase in the PSD order toward the fixed point.
    """
    A, C = plant.A, plant.C
    p = plant.dim
    P = np.zeros((p, p))
    for it in range(1, max_iter + 1):
        PCt = P @ C
        S = float(C @ PCt) + plant.sigma_n2
        APCt = A @ PCt
        P_next = A @ P @ A.T - np.outer(APCt, APCt) / S + plant.sigma_w2 * np.eye(p)
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            break
        P = P_next
    else:
        raise RuntimeError(f"Riccati iteration did not converge in {max_iter} steps")
    PCt = P @ C
    sigma_R2 = float(C @ PCt) + plant.sigma_n2
    K = PCt / sigma_R2
    return KalmanDesign(plant=plant, P=P, K=K, sigma_R2=sigma_R2, iterations=it)


@dataclass
class KalmanState:
    """Current filtered estimate x_hat(k|k)."""

    xhat: np.ndarray

    @classmethod
    def at_rest(cls, plant: PartialPlant) -> "KalmanState":
        return cls(xhat=np.zeros(plant.dim))


def kalman_step(
    state: KalmanState,
    design: KalmanDesign,
    z_next: float,
    g_val: float,
    e_val: float,
) -> tuple[float, np.ndarray]:
    """Measurement update on report z[k+1]; returns (nu_F, q).

    nu_F is the innovation and q = K nu_F = x_hat(k+1|k+1) - (model
    prediction) is the correction the report forced on the estimate — the
    vector the correlation and covariance tests operate on.
    """
    plant = design.plant
    x_pred = plant.A @ state.xhat + plant.B * (float(g_val) + float(e_val))
    nu = float(z_next) - float(plant.C @ x_pred)
    q = design.K * nu
    state.xhat = x_pred + q
    return nu, q


def mimo_residual(
    plant: MimoPlant, z_prev: np.ndarray, z_next: np.ndarray, g_vec: np.ndarray
) -> np.ndarray:
    """r[k+1] = z[k+1] - A z[k] - B g[k]: watermark plus noise when honest."""
    return (
        np.asarray(z_next, dtype=float)
        - plant.A @ np.asarray(z_prev, dtype=float)
        - plant.B @ np.asarray(g_vec, dtype=float)
    )
