"""Problem configuration: discount setup, control and state boxes, running-cost parameters.

Every shared constant of the pipeline lives here.  The discount factor is
derived from the continuous rate and the step length; it is also stored in
serialized configs and re-derived on load so a stale file cannot silently
change the contraction modulus.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "SpecError",
    "Interval",
    "StateBox",
    "CostSpec",
    "ProblemSpec",
    "derive_gamma",
    "load_config",
    "dump_config",
    "preset_path",
    "spec_hash",
    "PRESETS",
]


class SpecError(ValueError):
    """Raised for invalid or inconsistent problem configurations."""


def derive_gamma(lam: float, sigma: float) -> float:
    """Per-step discount factor e^(-lam*sigma) for rate ``lam`` and step ``sigma``.

    Both arguments must be strictly positive and small enough that the result
    stays strictly inside (0, 1) in double precision.
    """
    if not (lam > 0.0) or not (sigma > 0.0):
        raise SpecError(f"discount rate and step must be positive, got lam={lam}, sigma={sigma}")
    g = math.exp(-lam * sigma)
    if not (0.0 < g < 1.0):
        raise SpecError(f"discount factor e^(-{lam}*{sigma}) = {g} is not strictly inside (0,1)")
    return g


@dataclass(frozen=True)
class Interval:
    """Closed real interval [lo, hi] with finite endpoints."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise SpecError(f"interval endpoints must be finite, got [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise SpecError(f"interval endpoints out of order: [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return self.lo + 0.5 * (self.hi - self.lo)

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= x <= self.hi + slack


def _as_box_array(v) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=np.float64)).copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned box lo <= x <= hi (componentwise), immutable after construction."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _as_box_array(self.lo))
        object.__setattr__(self, "hi", _as_box_array(self.hi))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1 or self.lo.size == 0:
            raise SpecError("box bounds must be matching nonempty 1-d arrays")
        if not (np.isfinite(self.lo).all() and np.isfinite(self.hi).all()):
            raise SpecError("box bounds must be finite")
        if np.any(self.lo > self.hi):
            raise SpecError(f"box has lo > hi: lo={self.lo}, hi={self.hi}")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return self.lo + 0.5 * (self.hi - self.lo)

    def contains(self, x, slack: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lo - slack) and np.all(x <= self.hi + slack))

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def split(self, axis: int) -> tuple["StateBox", "StateBox"]:
        """Bisect along ``axis``; the shared face reuses the midpoint bits exactly."""
        mid = self.lo[axis] + 0.5 * (self.hi[axis] - self.lo[axis])
        lo2 = self.lo.copy()
        hi1 = self.hi.copy()
        hi1[axis] = mid
        lo2[axis] = mid
        return StateBox(self.lo, hi1), StateBox(lo2, self.hi)

    def shrink(self, margins: np.ndarray) -> "StateBox":
        lo = self.lo + margins
        hi = self.hi - margins
        if np.any(lo >= hi):
            raise SpecError(f"box collapses under margins {margins}")
        return StateBox(lo, hi)

    def to_json(self) -> dict:
        return {"lo": list(map(float, self.lo)), "hi": list(map(float, self.hi))}

    @staticmethod
    def from_json(d: dict) -> "StateBox":
        return StateBox(np.asarray(d["lo"]), np.asarray(d["hi"]))

    def __eq__(self, other):
        if not isinstance(other, StateBox):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))


@dataclass(frozen=True)
class CostSpec:
    """Goal-band running cost parameters: scale alpha and target radius r_g."""

    alpha: float
    r_g: float

    def __post_init__(self):
        if not (self.alpha > 0.0):
            raise SpecError(f"cost scale must be positive, got {self.alpha}")
        if not (self.r_g > 0.0):
            raise SpecError(f"target radius must be positive, got {self.r_g}")


# Relative tolerance for the stored-vs-recomputed discount factor on load.
_GAMMA_RTOL = 1e-12


@dataclass(frozen=True)
class ProblemSpec:
    """Full problem description shared by solver, trainer, certifier and reach stages.

    ``gamma`` is derived from (lam, sigma) at construction; a value loaded from
    disk is checked against the re-derived one to within 1e-12 relative.
    """

    lam: float
    sigma: float
    horizon: float
    control_lo: np.ndarray
    control_hi: np.ndarray
    roi: StateBox
    cost: CostSpec
    stationary: bool = True
    system: str = "double_integrator"
    gamma: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "control_lo", _as_box_array(self.control_lo))
        object.__setattr__(self, "control_hi", _as_box_array(self.control_hi))
        if not (self.lam > 0.0):
            raise SpecError(f"discount rate must be positive, got {self.lam}")
        if not (0.0 < self.sigma <= self.horizon):
            raise SpecError(f"need 0 < sigma <= horizon, got sigma={self.sigma}, horizon={self.horizon}")
        g = derive_gamma(self.lam, self.sigma)
        if self.gamma is None:
            object.__setattr__(self, "gamma", g)
        elif abs(self.gamma - g) > _GAMMA_RTOL * abs(g):
            raise SpecError(f"stored gamma {self.gamma!r} disagrees with e^(-lam*sigma) = {g!r}")
        if self.control_lo.shape != self.control_hi.shape:
            raise SpecError("control bounds have mismatched shapes")
        if np.any(self.control_lo >= self.control_hi):
            raise SpecError("control bounds must satisfy lo < hi componentwise")
        if np.any(self.roi.widths <= 0.0):
            raise SpecError("region of interest must have positive width in every dimension")

    def __eq__(self, other):
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __hash__(self):
        return hash(json.dumps(self.to_json(), sort_keys=True))

    @property
    def control_dim(self) -> int:
        return self.control_lo.size

    @property
    def state_dim(self) -> int:
        return self.roi.dim

    def to_json(self) -> dict:
        return {
            "lambda": float(self.lam),
            "sigma": float(self.sigma),
            "horizon": float(self.horizon),
            "gamma": float(self.gamma),
            "control": {"lo": list(map(float, self.control_lo)), "hi": list(map(float, self.control_hi))},
            "roi": self.roi.to_json(),
            "cost": {"alpha": float(self.cost.alpha), "r_g": float(self.cost.r_g)},
            "stationary": bool(self.stationary),
            "system": self.system,
        }

    @staticmethod
    def from_json(d: dict) -> "ProblemSpec":
        try:
            return ProblemSpec(
                lam=float(d["lambda"]),
                sigma=float(d["sigma"]),
                horizon=float(d["horizon"]),
                control_lo=np.asarray(d["control"]["lo"]),
                control_hi=np.asarray(d["control"]["hi"]),
                roi=StateBox.from_json(d["roi"]),
                cost=CostSpec(alpha=float(d["cost"]["alpha"]), r_g=float(d["cost"]["r_g"])),
                stationary=bool(d.get("stationary", True)),
                system=str(d.get("system", "double_integrator")),
                gamma=float(d["gamma"]) if "gamma" in d else None,
            )
        except KeyError as e:
            raise SpecError(f"config is missing required key: {e}") from e


PRESETS = ("double-integrator-paper",)


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise SpecError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return Path(str(resources.files("reachcert").joinpath("presets").joinpath(name + ".json")))


def load_config(path_or_preset: str | Path) -> ProblemSpec:
    """Load a ProblemSpec from a JSON file path or a shipped preset name."""
    p = Path(path_or_preset)
    if not p.exists() and str(path_or_preset) in PRESETS:
        p = preset_path(str(path_or_preset))
    try:
        with open(p) as f:
            d = json.load(f)
    except FileNotFoundError:
        raise SpecError(f"config file not found: {path_or_preset}")
    except json.JSONDecodeError as e:
        raise SpecError(f"config file {p} is not valid JSON: {e}")
    return ProblemSpec.from_json(d)


def dump_config(spec: ProblemSpec, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(spec.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")


def spec_hash(spec: ProblemSpec) -> str:
    """Stable content hash of a problem configuration (canonical JSON, sha256)."""
    canon = json.dumps(spec.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
