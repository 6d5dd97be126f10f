"""Nonlinear extended state observer (ESO) over the hybrid state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DepthUnderflow
from .servo_model import extended_interaction


def fal(eps, alpha, delta):
    """Piecewise power law: ``|e|^a sgn(e)`` outside ``[-delta, delta]``, linear inside.

    Works elementwise on arrays; ``alpha`` and ``delta`` may broadcast.
    """
    eps = np.asarray(eps, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    delta = np.asarray(delta, dtype=float)
    a = np.abs(eps)
    out = np.where(a > delta, np.power(a, alpha) * np.sign(eps), eps / np.power(delta, 1.0 - alpha))
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class EsoGains:
    beta1: np.ndarray
    beta2: np.ndarray
    alpha1: float = 0.75
    alpha2: float = 0.5
    delta1: float = 0.01
    delta2: float = 0.01

    def __post_init__(self):
        b1 = np.atleast_1d(np.asarray(self.beta1, dtype=float))
        b2 = np.atleast_1d(np.asarray(self.beta2, dtype=float))
        if np.any(b1 <= 0) or np.any(b2 <= 0):
            raise ValueError("observer gains must be positive")
        if not (0 < self.alpha1 < 1 and 0 < self.alpha2 < 1):
            raise ValueError("fal exponents must lie in (0, 1)")
        if self.delta1 <= 0 or self.delta2 <= 0:
            raise ValueError("fal linear widths must be positive")
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)

    @classmethod
    def from_bandwidth(cls, size: int, omega_o=10.0, **kwargs) -> "EsoGains":
        """``beta1 = 2 w``, ``beta2 = w^2`` per channel; ``omega_o`` may be per channel."""
        w = np.broadcast_to(np.asarray(omega_o, dtype=float), (size,)).copy()
        return cls(beta1=2.0 * w, beta2=w * w, **kwargs)


@dataclass
class EsoState:
    xi1: np.ndarray
    xi2: np.ndarray

    @classmethod
    def at(cls, measurement) -> "EsoState":
        x = np.asarray(measurement, dtype=float).copy()
        return cls(x, np.zeros_like(x))


def eso_step(
    eso: EsoState,
    measured,
    u,
    B: np.ndarray,
    gains: EsoGains,
    T_s: float,
    depth_index: int = -2,
) -> EsoState:
    """One explicit-Euler observer update.

    ``measured`` is the raw state vector, or ``None`` to propagate open loop.
    A non-positive depth estimate after the update is reset to the measurement
    and :class:`DepthUnderflow` is raised carrying the repaired state in
    ``err.state``.
    """
    if T_s <= 0:
        raise ValueError("T_s must be positive")
    xi1, xi2 = eso.xi1, eso.xi2
    if hasattr(measured, "to_vector"):
        measured = measured.to_vector()
    if hasattr(u, "as_array"):
        u = u.as_array()
    if measured is None:
        eps = np.zeros_like(xi1)
    else:
        eps = xi1 - np.asarray(measured, dtype=float)
    Bu = np.asarray(B, dtype=float) @ np.asarray(u, dtype=float)
    xi1_next = xi1 + T_s * (xi2 - gains.beta1 * fal(eps, gains.alpha1, gains.delta1) + Bu)
    xi2_next = xi2 - T_s * gains.beta2 * fal(eps, gains.alpha2, gains.delta2)
    if xi1_next[depth_index] <= 0:
        if measured is not None:
            xi1_next[depth_index] = np.asarray(measured, dtype=float)[depth_index]
        else:
            xi1_next[depth_index] = xi1[depth_index]
        err = DepthUnderflow("observer depth estimate became non-positive")
        err.state = EsoState(xi1_next, xi2_next)
        raise err
    return EsoState(xi1_next, xi2_next)


class ExtendedStateObserver:
    """Stateful wrapper used in the control loop.

    ``B`` is the extended interaction matrix evaluated at the current estimate
    unless a fixed ``input_matrix`` callable is supplied.
    """

    def __init__(self, gains: EsoGains, T_s: float, input_matrix=None):
        self.gains = gains
        self.T_s = T_s
        self.input_matrix = input_matrix
        self.state: EsoState | None = None

    def reset(self, measurement):
        self.state = EsoState.at(measurement)

    def update(self, measured, u) -> EsoState:
        if self.state is None:
            if measured is None:
                raise ValueError("observer needs a first measurement")
            self.reset(measured)
            return self.state
        if self.input_matrix is None:
            B = extended_interaction(self.state.xi1)
        else:
            B = self.input_matrix(self.state.xi1)
        try:
            self.state = eso_step(self.state, measured, u, B, self.gains, self.T_s)
        except DepthUnderflow as err:
            self.state = err.state
        return self.state
