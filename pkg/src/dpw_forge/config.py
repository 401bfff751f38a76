"""Experiment configuration: TOML file plus command-line overrides."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import tomli
import tomli_w

from .errors import ConfigError, ParameterWindowError
from .potentials import delaunay_window

STAGES = ("analyze", "unitarize", "build", "export", "verify")
FORMATS = ("obj", "ply")
FAMILY_DEFAULTS = {
    "genus_g": {"n": 2, "c": 0.05},
    "torus": {"c": 0.001},
    "delaunay_chain": {"n": 3, "w": -1.0},
    "custom": {},
}
DEFAULT_THRESHOLDS = {
    "closing": 1e-6,
    "closing_derivative": 1e-5,
    "relations": 1e-6,
    "corollary": 1e-5,
    "unitarity": 1e-5,
    "lemma21": 1e-5,
    "power_identity": 1e-5,
    "eigenvalues": 1e-5,
    "symmetry": 1e-4,
    "period": 1e-4,
}


@dataclass
class ExperimentConfig:
    family: str = "genus_g"
    n: Optional[int] = None
    c: Optional[float] = None
    w: Optional[float] = None
    omega1: Optional[float] = None
    entries: Optional[list] = None  # custom potential: a11, a12, a21, a22
    loop: Optional[list] = None  # custom potential: closed polygon [[re, im], ...]
    grid_n: int = 512
    laurent_k: Optional[int] = None
    radius: float = 1.0
    rtol: float = 1e-11
    resolution: int = 64
    H: float = 0.5
    avoid: float = 0.05
    surface_n: Optional[int] = None
    formats: list = field(default_factory=lambda: list(FORMATS))
    stages: list = field(default_factory=lambda: ["analyze", "unitarize"])
    out: str = "dpw_out"
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    def __post_init__(self):
        for k, v in FAMILY_DEFAULTS.get(self.family, {}).items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        self.thresholds = {**DEFAULT_THRESHOLDS, **(self.thresholds or {})}
        self.validate()

    # ------------------------------------------------------------ checks

    def validate(self) -> None:
        if self.family not in FAMILY_DEFAULTS:
            raise ConfigError(f"unknown family {self.family!r}; choose from {', '.join(FAMILY_DEFAULTS)}")
        if self.family == "genus_g":
            if self.n is None or int(self.n) != self.n or self.n < 2 or self.n % 2:
                raise ParameterWindowError(f"genus_g needs an even integer n >= 2, got {self.n}")
        if self.family in ("genus_g", "torus"):
            if self.c is None or self.c == 0 or not math.isfinite(self.c):
                raise ParameterWindowError(f"{self.family} needs a real c != 0, got {self.c}")
        if self.family == "torus" and self.omega1 is not None and not self.omega1 > 0:
            raise ParameterWindowError(f"omega1 must be positive, got {self.omega1}")
        if self.family == "delaunay_chain":
            if self.n is None or int(self.n) != self.n or self.n < 3:
                raise ParameterWindowError(f"delaunay_chain needs an integer n >= 3, got {self.n}")
            lo, hi = delaunay_window(int(self.n))
            if self.w is None or not lo <= self.w < hi:
                raise ParameterWindowError(f"w={self.w} outside the window [{lo:.6g}, 0) for n={self.n}")
        if self.family == "custom":
            if not self.entries or len(self.entries) != 4:
                raise ConfigError("custom family needs four potential entries")
            if not self.loop or len(self.loop) < 3:
                raise ConfigError("custom family needs a closed polygon 'loop' with at least three vertices")
        if self.grid_n < 8 or self.grid_n & (self.grid_n - 1):
            raise ConfigError(f"grid_n must be a power of two >= 8, got {self.grid_n}")
        if self.laurent_k is not None and not 0 < self.laurent_k < self.grid_n // 2:
            raise ConfigError(f"laurent_k must lie in (0, grid_n/2), got {self.laurent_k}")
        if not 0 < self.radius <= 1:
            raise ConfigError(f"grid radius must lie in (0, 1], got {self.radius}")
        if self.radius < 1 and any(s in self.stages for s in ("unitarize", "build", "export", "verify")):
            raise ConfigError("grid radius < 1 is only supported for the analyze stage")
        if self.resolution < 2:
            raise ConfigError(f"mesh resolution must be >= 2, got {self.resolution}")
        if self.H == 0:
            raise ConfigError("mean curvature H must be nonzero")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stage(s) {', '.join(bad)}; choose from {', '.join(STAGES)}")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise ConfigError(f"unknown mesh format(s) {', '.join(bad)}")
        if self.family == "custom" and any(s != "analyze" for s in self.stages):
            raise ConfigError("custom potentials support the analyze stage only")

    @property
    def params(self) -> dict:
        if self.family == "genus_g":
            return {"n": int(self.n), "c": float(self.c)}
        if self.family == "torus":
            p = {"c": float(self.c)}
            if self.omega1 is not None:
                p["omega1"] = float(self.omega1)
            return p
        if self.family == "delaunay_chain":
            return {"n": int(self.n), "w": float(self.w)}
        return {"entries": list(self.entries)}

    # ------------------------------------------------------------ (de)serialization

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None}

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        flat = {}
        for k, v in data.items():
            if isinstance(v, dict) and k != "thresholds":
                flat.update(v)  # tolerate [family], [mesh] ... tables
            else:
                flat[k] = v
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_toml(text)

    def replace(self, **overrides) -> "ExperimentConfig":
        """New config with ``overrides`` applied; ``None`` values are ignored.

        Changing the family drops parameters that belong to the old one.
        """
        d = self.to_dict()
        over = {k: v for k, v in overrides.items() if v is not None}
        if "family" in over and over["family"] != d.get("family"):
            for k in ("n", "c", "w", "omega1", "entries", "loop"):
                d.pop(k, None)
        d.update(over)
        return type(self).from_dict(d)
