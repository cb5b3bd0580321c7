"""Sectioned key = value run configuration."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

from .errors import ConfigError
from .grid import PhaseGrid, build_phase_grid
from .kernels import ModelParams

ENV_PREFIX = "CELLMIG_"
PROFILES = ("zero", "uniform", "gaussian", "two_bump", "sine", "random")
FAMILIES = ("linear",)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _float_list(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _dt(text: str):
    return "auto" if text.strip().lower() == "auto" else float(text)


def _choice(options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t

    return parse


# section -> key -> (parser, default)
SCHEMA = {
    "grid": {
        "n": (int, 1),
        "s": (float, 0.5),
        "x_cells": (int, 64),
        "box": (float, 1.0),
        "radial_count": (int, 8),
        "angular_count": (int, 2),
        "activity_subdivision": (int, 7),
        "theta_count": (int, 2),
    },
    "params": {
        "k1": (float, 1.0),
        "km1": (float, 1.0),
        "k2": (float, 1.0),
        "km2": (float, 1.0),
        "kappa": (float, 0.0),
        "r_L": (float, 0.0),
        "D_L": (float, 1.0),
        "alpha1": (float, 0.8),
    },
    "kernels": {
        "family": (_choice(FAMILIES), "linear"),
        "chi": (float, 0.5),
    },
    "scaling": {
        "eps": (float, 1.0),
        "a": (float, 0.5),
        "b": (float, 1.0),
        "d": (float, 1.0),
        "eps_list": (_float_list, (0.2, 0.1, 0.05, 0.025)),
    },
    "run": {
        "t_final": (float, 0.1),
        "dt": (_dt, "auto"),
        "initial": (_choice(PROFILES), "gaussian"),
        "amplitude": (float, 0.2),
        "velocity": (float, 0.0),
        "fiber": (float, 1.0),
        "fiber_bias": (float, 0.0),
        "seed": (int, 0),
        "picard_t0": (float, 0.05),
        "picard_tol": (float, 1e-10),
        "picard_max_iter": (int, 50),
    },
    "sweep": {
        "t_final": (float, 3.0),
        "box": (float, 8.0),
        "x_cells": (int, 64),
        "dt_factor": (float, 0.125),
    },
    "output": {
        "directory": (str, "out"),
        "cadence": (int, 1),
        "snapshots": (_bool, True),
    },
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})
    lines: dict = field(default_factory=dict)  # (section, key) -> line number

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    def model_params(self) -> ModelParams:
        p, k, sc = self["params"], self["kernels"], self["scaling"]
        return ModelParams(chi=k["chi"], eps=sc["eps"], a=sc["a"], b=sc["b"], d=sc["d"], **p)

    def build_grid(self) -> PhaseGrid:
        return build_phase_grid(**self["grid"])

    def serialize(self) -> str:
        out = []
        for section, keys in self.values.items():
            out.append(f"[{section}]")
            out.extend(f"{k} = {_format(v)}" for k, v in keys.items())
            out.append("")
        return "\n".join(out)

    def validate(self) -> None:
        """Cross-field checks; errors point at the offending line when known."""

        def where(section, key):
            line = self.lines.get((section, key))
            return f"line {line}: " if line else ""

        try:
            self.model_params()
        except ConfigError as exc:
            msg = str(exc)
            for section in ("params", "kernels", "scaling"):
                for key in SCHEMA[section]:
                    if re.search(rf"\b{key}\b", msg):
                        raise ConfigError(f"{where(section, key)}[{section}] {msg}") from None
            raise
        try:
            self.build_grid()
        except ConfigError as exc:
            raise ConfigError(f"[grid] {exc}") from None
        eps = self["scaling"]["eps_list"]
        if len(eps) < 3 or any(b >= a for a, b in zip(eps, eps[1:])) or min(eps) <= 0:
            raise ConfigError(f"{where('scaling', 'eps_list')}[scaling] eps_list must be positive, strictly decreasing, "
                              "with at least three entries")
        run = self["run"]
        for key in ("t_final", "picard_t0", "picard_tol"):
            if not run[key] > 0:
                raise ConfigError(f"{where('run', key)}[run] {key} must be > 0")
        if run["dt"] != "auto" and not run["dt"] > 0:
            raise ConfigError(f"{where('run', 'dt')}[run] dt must be > 0 or auto")
        if self["output"]["cadence"] < 1:
            raise ConfigError(f"{where('output', 'cadence')}[output] cadence must be >= 1")
        if self["sweep"]["t_final"] <= 0 or self["sweep"]["box"] <= 0 or self["sweep"]["dt_factor"] <= 0:
            raise ConfigError("[sweep] t_final, box and dt_factor must be > 0")


def _set(cfg: RunConfig, section: str, key: str, text: str, line: int | None) -> None:
    where = f"line {line}: " if line else ""
    if section not in SCHEMA:
        raise ConfigError(f"{where}unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{where}unknown key {key!r} in [{section}]")
    parse = SCHEMA[section][key][0]
    try:
        cfg.values[section][key] = parse(text.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}[{section}] {key}: {exc}") from None


def parse_config(text: str, env: dict | None = None) -> RunConfig:
    """Parse and validate a config. ``env`` (e.g. os.environ) may override any
    key through CELLMIG_<SECTION>_<KEY>."""
    cfg = RunConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any section")
        key, value = (t.strip() for t in line.split("=", 1))
        if (section, key) in cfg.lines:
            raise ConfigError(
                f"duplicate key {key!r} in [{section}] at lines {cfg.lines[(section, key)]} and {lineno}"
            )
        _set(cfg, section, key, value, lineno)
        cfg.lines[(section, key)] = lineno

    if env:
        for name, value in sorted(env.items()):
            if not name.startswith(ENV_PREFIX):
                continue
            rest = name[len(ENV_PREFIX):].lower()
            for sec in SCHEMA:
                if rest.startswith(sec + "_"):
                    key = next((k for k in SCHEMA[sec] if k.lower() == rest[len(sec) + 1:]), None)
                    if key is None:
                        raise ConfigError(f"environment {name}: unknown key in [{sec}]")
                    _set(cfg, sec, key, value, None)
                    cfg.lines.pop((sec, key), None)
                    break
            else:
                raise ConfigError(f"environment {name}: unknown section")
    cfg.validate()
    return cfg


def load_config(path=None, env=None) -> RunConfig:
    text = ""
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, os.environ if env is None else env)
