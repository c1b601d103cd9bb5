"""Physical parameter sets of the quadcopter model.

Coefficients are stored in normalized (hatted) form: thrust/roll/pitch
coefficients are scaled by omega_max**2, drag and yaw coefficients by
omega_max.  ``denormalize``/``normalize`` convert between this form and
raw physical coefficients.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, replace
from importlib import resources
from pathlib import Path

__all__ = [
    "ModelParams",
    "PhysicalParams",
    "normalize_params",
    "denormalize_params",
    "load_params",
    "save_params",
    "builtin_params_path",
]


def _check_quad(name: str, value: tuple) -> tuple[float, float, float, float]:
    t = tuple(float(x) for x in value)
    if len(t) != 4:
        raise ValueError(f"{name} must have exactly 4 entries, got {len(t)}")
    return t


@dataclass(frozen=True)
class ModelParams:
    """Normalized parameters of one quadcopter instance.

    Per-rotor tuples are ordered rotor 1..4.  ``k_r_hat`` holds the
    yaw coefficients on rotor speed (r1..r4), ``k_rd_hat`` the yaw
    coefficients on rotor acceleration (r5..r8).
    """

    k_omega_hat: float
    k_x_hat: float
    k_y_hat: float
    k_p_hat: tuple[float, float, float, float]
    k_q_hat: tuple[float, float, float, float]
    k_r_hat: tuple[float, float, float, float]
    k_rd_hat: tuple[float, float, float, float]
    omega_min: float
    omega_max: float
    k_l: float
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "k_p_hat", _check_quad("k_p_hat", self.k_p_hat))
        object.__setattr__(self, "k_q_hat", _check_quad("k_q_hat", self.k_q_hat))
        object.__setattr__(self, "k_r_hat", _check_quad("k_r_hat", self.k_r_hat))
        object.__setattr__(self, "k_rd_hat", _check_quad("k_rd_hat", self.k_rd_hat))
        self.validate()

    def validate(self):
        if not (self.omega_max > self.omega_min >= 0.0):
            raise ValueError(
                f"need omega_max > omega_min >= 0, got "
                f"({self.omega_min}, {self.omega_max})"
            )
        if not (0.0 <= self.k_l < 1.0):
            raise ValueError(f"k_l must lie in [0, 1), got {self.k_l}")
        if not (self.tau > 0.0):
            raise ValueError(f"tau must be > 0, got {self.tau}")
        scalars = [self.k_omega_hat, self.k_x_hat, self.k_y_hat]
        scalars += list(self.k_p_hat) + list(self.k_q_hat)
        scalars += list(self.k_r_hat) + list(self.k_rd_hat)
        for v in scalars + [self.omega_min, self.omega_max, self.k_l, self.tau]:
            if not math.isfinite(v):
                raise ValueError("all parameters must be finite")
        for v in scalars:
            if v < 0.0:
                raise ValueError("coefficients must be >= 0")

    def to_dict(self) -> dict:
        """Flat JSON-style dict with per-rotor fields spelled out."""
        d = {
            "k_omega_hat": self.k_omega_hat,
            "k_x_hat": self.k_x_hat,
            "k_y_hat": self.k_y_hat,
        }
        for i in range(4):
            d[f"k_p{i + 1}_hat"] = self.k_p_hat[i]
        for i in range(4):
            d[f"k_q{i + 1}_hat"] = self.k_q_hat[i]
        for i in range(4):
            d[f"k_r{i + 1}_hat"] = self.k_r_hat[i]
        for i in range(4):
            d[f"k_r{i + 5}_hat"] = self.k_rd_hat[i]
        d.update(
            omega_min=self.omega_min,
            omega_max=self.omega_max,
            k_l=self.k_l,
            tau=self.tau,
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(
            k_omega_hat=d["k_omega_hat"],
            k_x_hat=d["k_x_hat"],
            k_y_hat=d["k_y_hat"],
            k_p_hat=tuple(d[f"k_p{i + 1}_hat"] for i in range(4)),
            k_q_hat=tuple(d[f"k_q{i + 1}_hat"] for i in range(4)),
            k_r_hat=tuple(d[f"k_r{i + 1}_hat"] for i in range(4)),
            k_rd_hat=tuple(d[f"k_r{i + 5}_hat"] for i in range(4)),
            omega_min=d["omega_min"],
            omega_max=d["omega_max"],
            k_l=d["k_l"],
            tau=d["tau"],
        )


@dataclass(frozen=True)
class PhysicalParams:
    """Raw (unnormalized) coefficients; same layout as ModelParams."""

    k_omega: float
    k_x: float
    k_y: float
    k_p: tuple[float, float, float, float]
    k_q: tuple[float, float, float, float]
    k_r: tuple[float, float, float, float]
    k_rd: tuple[float, float, float, float]
    omega_min: float
    omega_max: float
    k_l: float
    tau: float


def normalize_params(raw: PhysicalParams) -> ModelParams:
    """Scale raw coefficients by omega_max (squared for thrust/roll/pitch)."""
    if raw.omega_max <= 0.0:
        raise ValueError("omega_max must be > 0")
    w2 = raw.omega_max ** 2
    w1 = raw.omega_max
    return ModelParams(
        k_omega_hat=raw.k_omega * w2,
        k_x_hat=raw.k_x * w1,
        k_y_hat=raw.k_y * w1,
        k_p_hat=tuple(k * w2 for k in raw.k_p),
        k_q_hat=tuple(k * w2 for k in raw.k_q),
        k_r_hat=tuple(k * w1 for k in raw.k_r),
        k_rd_hat=tuple(k * w1 for k in raw.k_rd),
        omega_min=raw.omega_min,
        omega_max=raw.omega_max,
        k_l=raw.k_l,
        tau=raw.tau,
    )


def denormalize_params(params: ModelParams) -> PhysicalParams:
    w2 = params.omega_max ** 2
    w1 = params.omega_max
    return PhysicalParams(
        k_omega=params.k_omega_hat / w2,
        k_x=params.k_x_hat / w1,
        k_y=params.k_y_hat / w1,
        k_p=tuple(k / w2 for k in params.k_p_hat),
        k_q=tuple(k / w2 for k in params.k_q_hat),
        k_r=tuple(k / w1 for k in params.k_r_hat),
        k_rd=tuple(k / w1 for k in params.k_rd_hat),
        omega_min=params.omega_min,
        omega_max=params.omega_max,
        k_l=params.k_l,
        tau=params.tau,
    )


def save_params(params: ModelParams, path: str | Path):
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


def load_params(path: str | Path) -> ModelParams:
    return ModelParams.from_dict(json.loads(Path(path).read_text()))


def builtin_params_path(name: str) -> Path:
    """Path of a shipped parameter file, e.g. '3inch' or '5inch'."""
    res = resources.files("quadrace").joinpath("data", f"params_{name}.json")
    return Path(str(res))
