"""Per-episode parameter randomization schemes.

Two schemes from the training setup: a broad "general" scheme with fixed
uniform bounds covering both platforms, and a percentage scheme that
perturbs one identified parameter set by +-p.  ``FixedScheme`` disables
randomization.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidScheme
from .params import ModelParams

__all__ = [
    "GeneralScheme",
    "PercentageScheme",
    "FixedScheme",
    "GENERAL_BOUNDS",
    "sample_general",
    "sample_percentage",
    "parse_scheme",
]

K_L_CAP = 1.0 - 1e-6

# uniform bounds of the general scheme (group coefficients; per-rotor
# roll/pitch values add independent U(-50, 50) jitter on top)
GENERAL_BOUNDS = {
    "omega_min": (0.0, 500.0),
    "omega_max": (3000.0, 5000.0),
    "k_l": (0.0, 1.0),
    "tau": (0.01, 0.1),
    "k_omega_hat": (10.0, 30.0),
    "k_x_hat": (0.1, 0.3),
    "k_y_hat": (0.1, 0.3),
    "k_p_hat": (200.0, 800.0),
    "k_q_hat": (200.0, 800.0),
    "k_r_hat": (20.0, 80.0),
    "k_rd_hat": (2.0, 8.0),
}
PQ_JITTER = 50.0


def _u(rng: np.random.Generator, key: str) -> float:
    lo, hi = GENERAL_BOUNDS[key]
    return float(rng.uniform(lo, hi))


def sample_general(rng: np.random.Generator) -> ModelParams:
    """Draw one parameter set from the general scheme.

    Roll/pitch effectiveness gets independent per-rotor jitter; the yaw
    coefficients are shared across rotors.  The draw order is fixed so a
    seeded generator reproduces samples exactly.
    """
    omega_min = _u(rng, "omega_min")
    omega_max = _u(rng, "omega_max")
    k_l = _u(rng, "k_l")
    tau = _u(rng, "tau")
    k_omega = _u(rng, "k_omega_hat")
    k_x = _u(rng, "k_x_hat")
    k_y = _u(rng, "k_y_hat")
    k_p = _u(rng, "k_p_hat")
    k_p_rotors = tuple(k_p + rng.uniform(-PQ_JITTER, PQ_JITTER) for _ in range(4))
    k_q = _u(rng, "k_q_hat")
    k_q_rotors = tuple(k_q + rng.uniform(-PQ_JITTER, PQ_JITTER) for _ in range(4))
    k_r = _u(rng, "k_r_hat")
    k_rd = _u(rng, "k_rd_hat")
    return ModelParams(
        k_omega_hat=k_omega,
        k_x_hat=k_x,
        k_y_hat=k_y,
        k_p_hat=k_p_rotors,
        k_q_hat=k_q_rotors,
        k_r_hat=(k_r,) * 4,
        k_rd_hat=(k_rd,) * 4,
        omega_min=omega_min,
        omega_max=omega_max,
        k_l=min(k_l, K_L_CAP),
        tau=tau,
    )


def _scale4(values, factors) -> tuple:
    return tuple(v * f for v, f in zip(values, factors))


def sample_percentage(
    base: ModelParams, p: float, rng: np.random.Generator, max_tries: int = 100
) -> ModelParams:
    """Multiply every parameter independently by U(1-p, 1+p).

    k_l is capped just below 1.  If the scaled omega_max does not exceed
    omega_min the draw is rejected and retried; InvalidScheme is raised
    after max_tries rejections.
    """
    if p < 0.0:
        raise InvalidScheme(f"percentage must be >= 0, got {p}")
    for _ in range(max_tries):
        m = lambda: float(rng.uniform(1.0 - p, 1.0 + p))  # noqa: E731
        omega_min = base.omega_min * m()
        omega_max = base.omega_max * m()
        if omega_max <= omega_min:
            continue
        return ModelParams(
            k_omega_hat=base.k_omega_hat * m(),
            k_x_hat=base.k_x_hat * m(),
            k_y_hat=base.k_y_hat * m(),
            k_p_hat=_scale4(base.k_p_hat, [m() for _ in range(4)]),
            k_q_hat=_scale4(base.k_q_hat, [m() for _ in range(4)]),
            k_r_hat=_scale4(base.k_r_hat, [m() for _ in range(4)]),
            k_rd_hat=_scale4(base.k_rd_hat, [m() for _ in range(4)]),
            omega_min=omega_min,
            omega_max=omega_max,
            k_l=min(base.k_l * m(), K_L_CAP),
            tau=base.tau * m(),
        )
    raise InvalidScheme("could not sample omega_max > omega_min")


@dataclass(frozen=True)
class GeneralScheme:
    def sample(self, rng: np.random.Generator) -> ModelParams:
        return sample_general(rng)


@dataclass(frozen=True)
class PercentageScheme:
    base: ModelParams
    p: float

    def sample(self, rng: np.random.Generator) -> ModelParams:
        return sample_percentage(self.base, self.p, rng)


@dataclass(frozen=True)
class FixedScheme:
    base: ModelParams

    def sample(self, rng: np.random.Generator) -> ModelParams:
        return self.base


def parse_scheme(spec: str, base: ModelParams | None = None):
    """Build a scheme from a CLI spec: 'general', 'fixed' or 'pct:<p>'."""
    if spec == "general":
        return GeneralScheme()
    if spec == "fixed":
        if base is None:
            raise InvalidScheme("'fixed' scheme needs a base parameter file")
        return FixedScheme(base)
    if spec.startswith("pct:"):
        if base is None:
            raise InvalidScheme("'pct' scheme needs a base parameter file")
        return PercentageScheme(base, float(spec.split(":", 1)[1]))
    raise InvalidScheme(f"unknown randomization scheme {spec!r}")
