"""
Experiment configuration files (TOML).

Sections and keys::

    [experiment]  name, problem
    [mesh]        n (int or list), barycentric, degree, nx, ny
    [time]        dt (float or list), T
    [physics]     kappa, nu, reynolds, inflow
    [cda]         mu (float, inf or list), mode, H (float or list), allow_unaligned
    [output]      dir

List-valued keys define a sweep over their values.
"""
from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from itertools import product

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..drivers.base import PROBLEMS, ConfigError, RunConfig
from ..drivers.problems import kh_viscosity

SCHEMA = {
    "experiment": {"name": str, "problem": str},
    "mesh": {"n": (int, list), "barycentric": bool, "degree": int, "nx": int, "ny": int},
    "time": {"dt": (float, int, list), "T": (float, int)},
    "physics": {"kappa": (float, int), "nu": (float, int), "reynolds": (float, int), "inflow": (float, int)},
    "cda": {"mu": (float, int, list), "mode": str, "H": (float, int, list), "allow_unaligned": bool},
    "output": {"dir": str},
}

# RunConfig field -> config key, for error messages
FIELD_KEYS = {
    "problem": "experiment.problem", "dt": "time.dt", "T": "time.T", "kappa": "physics.kappa",
    "nu": "physics.nu", "mu": "cda.mu", "mode": "cda.mode", "H": "cda.H", "n": "mesh.n",
    "degree": "mesh.degree",
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    problem: str
    base: RunConfig
    sweep: dict  # "n" / "dt" / "mu" / "H" -> tuple of values
    mesh: dict = field(default_factory=dict)
    physics: dict = field(default_factory=dict)
    output: str = "runs"
    raw: dict = field(default_factory=dict)

    def runs(self):
        """All sweep combinations as validated RunConfigs, in file order."""
        keys = [k for k in ("n", "dt", "H", "mu") if k in self.sweep]
        for combo in product(*(self.sweep[k] for k in keys)):
            yield _validated(replace(self.base, **dict(zip(keys, combo))))


def _validated(cfg: RunConfig) -> RunConfig:
    try:
        return cfg.validate()
    except ConfigError as exc:
        name, _, msg = str(exc).partition(": ")
        raise ConfigError(f"{FIELD_KEYS.get(name, name)}: {msg}") from None


def _check_types(raw: dict) -> None:
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"{section}: unknown section; expected one of {sorted(SCHEMA)}")
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: must be a table")
        for key, value in body.items():
            want = SCHEMA[section].get(key)
            if want is None:
                raise ConfigError(f"{section}.{key}: unknown key")
            if isinstance(value, bool) and want is not bool:
                raise ConfigError(f"{section}.{key}: expected a number or list, got a boolean")
            if not isinstance(value, want):
                raise ConfigError(f"{section}.{key}: wrong type {type(value).__name__}")
            if isinstance(value, list) and not value:
                raise ConfigError(f"{section}.{key}: sweep list is empty")


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed TOML document.

    Raises
    ------
    ConfigError
        Naming the offending ``section.key``.
    """
    _check_types(raw)
    exp = raw.get("experiment", {})
    if "problem" not in exp:
        raise ConfigError("experiment.problem: required")
    problem = exp["problem"]
    if problem not in PROBLEMS:
        raise ConfigError(f"experiment.problem: unknown kind {problem!r}; expected one of {PROBLEMS}")
    mesh = raw.get("mesh", {})
    tm = raw.get("time", {})
    phys = raw.get("physics", {})
    cda = raw.get("cda", {})

    def listed(v):
        return tuple(v) if isinstance(v, list) else (v,)

    sweep = {}
    for key, section, default in (("n", mesh, 32), ("dt", tm, 1e-3), ("mu", cda, math.inf), ("H", cda, 1 / 9)):
        values = listed(section.get(key, default))
        sweep[key] = values
    nu = phys.get("nu", 1.0)
    if "reynolds" in phys:
        if "nu" in phys:
            raise ConfigError("physics.reynolds: give either nu or reynolds, not both")
        if not phys["reynolds"] > 0:
            raise ConfigError("physics.reynolds: must be positive")
        nu = kh_viscosity(float(phys["reynolds"]))
    mode = cda.get("mode")
    base = RunConfig(
        problem=problem, dt=float(sweep["dt"][0]), T=float(tm.get("T", 1.0)),
        kappa=float(phys.get("kappa", 1.0)), nu=float(nu), mu=float(sweep["mu"][0]),
        mode=mode, H=float(sweep["H"][0]), n=int(sweep["n"][0]),
        barycentric=bool(mesh.get("barycentric", False)), degree=int(mesh.get("degree", 2)),
        allow_unaligned=bool(cda.get("allow_unaligned", False)),
    )
    cfg = ExperimentConfig(
        name=exp.get("name", problem), problem=problem, base=base,
        sweep={k: tuple(float(x) if k != "n" else x for x in v) for k, v in sweep.items()},
        mesh=dict(mesh), physics=dict(phys), output=raw.get("output", {}).get("dir", "runs"), raw=raw,
    )
    for v in cfg.sweep["n"]:
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"mesh.n: cell counts must be integers, got {v!r}")
    # finite mu needs a nudging mode other than direct, and vice versa
    for mu in cfg.sweep["mu"]:
        if mode == "direct" and not math.isinf(mu):
            raise ConfigError(f"cda.mode: direct mode requires mu = inf, got {mu}")
    list(cfg.runs())  # validates every sweep combination
    return cfg


def load_config(path) -> ExperimentConfig:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: not valid TOML ({exc})") from None
    return parse_config(raw)


def preset_names() -> list:
    return sorted(p.name[:-5] for p in resources.files(__package__).joinpath("presets").iterdir()
                  if p.name.endswith(".toml"))


def preset_path(name: str):
    """Path of a bundled preset, by name without extension."""
    p = resources.files(__package__).joinpath("presets", f"{name}.toml")
    if not p.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return p


def resolve_config(ref) -> ExperimentConfig:
    """Load a config from a file path or a preset name."""
    if os.path.exists(os.fspath(ref)):
        return load_config(ref)
    with resources.as_file(preset_path(str(ref))) as p:
        return load_config(p)
