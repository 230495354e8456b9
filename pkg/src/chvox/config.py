"""Flat ``key = value`` scenario configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

SCENARIOS = ("convergence", "spinodal", "droplet", "breakthrough", "custom")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str = "custom"
    # discretization
    N: int = 16
    p: int = 0
    sigma: float = 0.0  # 0 selects 2^p
    # model
    beta: int = 0
    kappa: float = 0.0  # 0 selects h^2
    Pe: float = 1.0
    # time stepping; a nonempty schedule "t1:tau1, t2:tau2" overrides tau/T
    tau: float = 1e-3
    T: float = 1.0
    schedule: str = ""
    max_steps: int = 0
    stop_when_stationary: bool = False
    # nonlinear / linear solver
    tol_abs: float = 1e-16
    tol_rel: float = 1e-8
    newton_max_iters: int = 50
    krylov_restart: int = 60
    krylov_rtol: float = 1e-8
    krylov_atol: float = 1e-14
    krylov_max_iters: int = 2000
    preconditioner: str = "auto"
    # initial data and geometry
    initial: str = ""
    rng_seed: int = 0
    mask: str = ""
    exterior: str = ""
    velocity: str = "zero"
    c_in: float = 1.0
    droplet_L: float = 0.5
    droplet_value: float = 0.95
    levels: str = "0,1,2,3,4,5"
    # output
    output_dir: str = "output"
    csv: str = "timeseries.csv"
    vtk_prefix: str = "state"
    snapshots: str = "pow2"
    dump: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.p not in (0, 1, 2, 3):
            raise ConfigError("p must be 0, 1, 2 or 3")
        if self.beta not in (0, 1):
            raise ConfigError("beta must be 0 or 1")
        if self.N < 1:
            raise ConfigError("N must be positive")
        for name in ("Pe", "tau", "T", "tol_abs", "tol_rel", "krylov_rtol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.kappa < 0 or self.sigma < 0:
            raise ConfigError("kappa and sigma must be >= 0 (0 selects the default)")
        try:
            self.time_pieces()
            self.level_list()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # derived values ------------------------------------------------------------
    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def kappa_value(self) -> float:
        return self.kappa if self.kappa > 0 else self.h**2

    @property
    def sigma_value(self) -> float | None:
        return self.sigma if self.sigma > 0 else None

    def time_pieces(self) -> list:
        if not self.schedule.strip():
            return [(self.T, self.tau)]
        out = []
        for part in self.schedule.split(","):
            until, tau = part.split(":")
            out.append((float(until), float(tau)))
        return out

    def level_list(self) -> list:
        return [int(v) for v in self.levels.split(",") if v.strip()]

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _coerce(key, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    start = dataclasses.asdict(base) if base is not None else {}
    start.update(values)
    return ScenarioConfig(**start)


def load_config(path) -> ScenarioConfig:
    cfg = parse_config(Path(path).read_text())
    # relative paths inside the file resolve against its directory
    root = Path(path).resolve().parent
    for key in ("mask",):
        val = getattr(cfg, key)
        if val and not val.startswith("builtin:") and not Path(val).is_absolute():
            cfg = cfg.replace(**{key: str(root / val)})
    if cfg.velocity.startswith("file:"):
        vpath = cfg.velocity[5:]
        if not Path(vpath).is_absolute():
            cfg = cfg.replace(velocity="file:" + str(root / vpath))
    return cfg


def format_config(cfg: ScenarioConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
