"""Run configuration for the batch front door.

JSON in, nested dataclasses out.  Unknown keys are rejected with the
full dotted path so a typo never silently falls back to a default, and
every artifact a run writes embeds the sha256 of the canonical config
serialization.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

_EXTERNAL_KINDS = ("none", "kuzmin", "gaussian")
_GRID_MODES = ("geometric", "uniform")
_FIELD_MODES = ("radial-binned", "nbody")


@dataclass
class ProfileConfig:
    kind: str = "polytrope"
    k: float = 0.5


@dataclass
class ExternalConfig:
    kind: str = "none"
    # kind-specific parameters (kuzmin: M, a; gaussian: M, w); validated
    # by the external-density constructor, not here
    params: dict = field(default_factory=dict)


@dataclass
class GridConfig:
    mode: str = "geometric"
    n: int = 512
    r_max: Optional[float] = None   # None: adaptive two-pass span


@dataclass
class SolverConfig:
    omega: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200


@dataclass
class DynamicsConfig:
    N: int = 10000
    dt: float = 1e-3                # in dynamical times
    t_end: float = 10.0
    delta_pert: float = 0.01
    softening: Optional[float] = None   # None: 2x mean spacing
    field_mode: str = "radial-binned"


@dataclass
class RunConfig:
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    M: float = 1.0
    external: ExternalConfig = field(default_factory=ExternalConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    seed: int = 0
    out: str = "runs"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        return _build(cls, doc, "")

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def validate(self):
        """Raise ValueError naming the offending field; checks mirror the
        module preconditions so failures surface before any computation."""
        p = self.profile
        if p.kind != "polytrope":
            raise ValueError(f"profile.kind must be 'polytrope' for batch "
                             f"runs, got {p.kind!r}")
        if not (0.0 < p.k <= 1.0):
            raise ValueError(f"profile.k must lie in (0, 1], got {p.k}")
        if not self.M > 0:
            raise ValueError(f"mass M must be positive, got {self.M}")
        if self.external.kind not in _EXTERNAL_KINDS:
            raise ValueError(f"external.kind must be one of "
                             f"{_EXTERNAL_KINDS}, got {self.external.kind!r}")
        g = self.grid
        if g.mode not in _GRID_MODES:
            raise ValueError(f"grid.mode must be one of {_GRID_MODES}, "
                             f"got {g.mode!r}")
        if not (isinstance(g.n, int) and g.n >= 32):
            raise ValueError(f"grid.n must be an integer >= 32, got {g.n}")
        if g.r_max is not None and not g.r_max > 0:
            raise ValueError(f"grid.r_max must be positive, got {g.r_max}")
        s = self.solver
        if not (0.0 < s.omega <= 1.0):
            raise ValueError(f"solver.omega must lie in (0, 1], got {s.omega}")
        if not s.tol > 0:
            raise ValueError(f"solver.tol must be positive, got {s.tol}")
        if not (isinstance(s.max_iter, int) and s.max_iter >= 1):
            raise ValueError(f"solver.max_iter must be an integer >= 1, "
                             f"got {s.max_iter}")
        d = self.dynamics
        if not (isinstance(d.N, int) and d.N >= 1000):
            raise ValueError(f"dynamics.N must be an integer >= 1000, "
                             f"got {d.N}")
        if not d.dt > 0:
            raise ValueError(f"dynamics.dt must be positive, got {d.dt}")
        if not d.t_end >= 0:
            raise ValueError(f"dynamics.t_end must be nonnegative, "
                             f"got {d.t_end}")
        if not d.delta_pert >= 0:
            raise ValueError(f"dynamics.delta_pert must be nonnegative, "
                             f"got {d.delta_pert}")
        if d.softening is not None and not d.softening > 0:
            raise ValueError(f"dynamics.softening must be positive, "
                             f"got {d.softening}")
        if d.field_mode not in _FIELD_MODES:
            raise ValueError(f"dynamics.field_mode must be one of "
                             f"{_FIELD_MODES}, got {d.field_mode!r}")
        if not isinstance(self.seed, int):
            raise ValueError(f"seed must be an integer, got {self.seed!r}")
        if not isinstance(self.out, str) or not self.out:
            raise ValueError("out must be a nonempty directory path")
        return self


_SECTIONS = {
    "profile": ProfileConfig,
    "external": ExternalConfig,
    "grid": GridConfig,
    "solver": SolverConfig,
    "dynamics": DynamicsConfig,
}


def _build(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ValueError(f"config section {path or '<root>'} must be an "
                         f"object, got {type(doc).__name__}")
    allowed = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, val in doc.items():
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ValueError(f"unknown config key {where!r}")
        sub = _SECTIONS.get(key) if cls is RunConfig else None
        if sub is not None:
            kwargs[key] = _build(sub, val, key)
        else:
            kwargs[key] = val
    return cls(**kwargs)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        doc = json.load(fh)
    return RunConfig.from_dict(doc)
