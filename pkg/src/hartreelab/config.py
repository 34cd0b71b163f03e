"""Experiment configuration: INI files with one section per concern.

Example::

    [grid]
    d = 1
    L = 6
    h = 1.0

    [potential]
    terms = 0.5:1.0        ; comma separated strength:exponent pairs
    offset = 0.0

    [scan]
    N_list = 2, 3, 4, 6, 8
    t_list = 0.25, 0.5, 1.0

Unknown sections or keys are rejected so that typos do not silently fall
back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .lattice import Grid, PotentialSpec, gaussian_packet

__all__ = ["ExperimentConfig", "load_config", "parse_config", "DEFAULT_CONFIG_TEXT"]


def _floats(text):
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in text.replace(";", ",").split(",") if x.strip())


def _terms(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            lam, gam = item.split(":")
            out.append((float(lam), float(gam)))
        except ValueError as exc:
            raise ConfigError(f"potential term {item!r} is not of the form strength:exponent") from exc
    return tuple(out)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of the experiment drivers.  Field names are ``section_key``."""

    grid_d: int = 1
    grid_L: int = 6
    grid_h: float = 1.0
    potential_terms: tuple = ((0.5, 1.0),)
    potential_offset: float = 0.0
    initial_width: float = 1.0
    initial_momentum: int = 1
    hartree_dt: float = 1e-3
    hartree_T: float = 1.0
    hartree_stride: int = 10
    scan_N_list: tuple = (2, 3, 4, 6, 8)
    scan_t_list: tuple = (0.25, 0.5, 1.0)
    fock_N_cut_rule: str = "tail"
    fock_krylov_tol: float = 1e-10
    fock_leakage_budget: float = 1e-8
    nbody_N: int = 4
    coherent_L: int = 4
    coherent_N_list: tuple = (2, 4, 8)
    coherent_t_list: tuple = (0.5,)
    fluctuation_L: int = 4
    fluctuation_N_cut: int = 16
    fluctuation_N_list: tuple = (2, 4, 8, 16)
    fluctuation_t_list: tuple = (0.25, 0.5, 1.0, 1.5, 2.0)
    fluctuation_j_list: tuple = (1, 2)
    fluctuation_dt: float = 0.005
    fluctuation_leakage_budget: float = 1e-2
    fluctuation_parity_N_cut: int = 8
    fluctuation_field_N_cut: int = 24
    fluctuation_field_t: float = 0.3
    fluctuation_field_dt: float = 0.002
    convergence_N: int = 4
    convergence_t: float = 0.5
    convergence_dt_list: tuple = (0.02, 0.01, 0.005)
    run_seed: int = 1
    run_threads: int = 1
    run_record_timing: bool = False

    def __post_init__(self):
        try:
            self.grid
            self.potential
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if list(self.scan_N_list) != sorted(self.scan_N_list) or any(n < 1 for n in self.scan_N_list):
            raise ConfigError("scan.N_list must be ascending positive integers")
        if any(t < 0 for t in self.scan_t_list):
            raise ConfigError("scan.t_list must be non-negative")
        if self.hartree_dt <= 0 or self.fluctuation_dt <= 0:
            raise ConfigError("time steps must be positive")
        rule = self.fock_N_cut_rule
        if rule != "tail" and not (rule.startswith("fixed:") and rule[6:].isdigit()):
            raise ConfigError(f"fock.N_cut_rule must be 'tail' or 'fixed:K', got {rule!r}")

    @property
    def grid(self) -> Grid:
        return Grid(self.grid_d, self.grid_L, self.grid_h)

    @property
    def potential(self) -> PotentialSpec:
        return PotentialSpec(terms=tuple(self.potential_terms), offset=self.potential_offset)

    def initial_state(self, grid: Grid | None = None):
        return gaussian_packet(grid or self.grid, self.initial_width, self.initial_momentum)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def echo(self) -> dict:
        """Flat ``section.key -> value`` mapping, as written into every output."""
        out = {}
        for f in dataclasses.fields(self):
            section, key = f.name.split("_", 1)
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[f"{section}.{key}"] = value
        return out


_CONVERTERS = {int: int, float: float, str: str, bool: _bool}


def _converter(name, default):
    if name == "potential_terms":
        return _terms
    if isinstance(default, tuple):
        return _ints if default and isinstance(default[0], int) else _floats
    return _CONVERTERS[type(default)]


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Build a config from INI text; unspecified keys keep their defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    defaults = {f.name: f.default for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            name = f"{section}_{key}"
            if name not in defaults:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            try:
                values[name] = _converter(name, defaults[name])(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {raw!r}") from exc
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), source=str(path))


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            return ", ".join(f"{a}:{b}" for a, b in value)
        return ", ".join(str(v) for v in value)
    return str(value)


def _default_text() -> str:
    lines, current = [], None
    for key, value in ExperimentConfig().echo().items():
        section, name = key.split(".", 1)
        if section != current:
            lines.append(f"\n[{section}]" if lines else f"[{section}]")
            current = section
        lines.append(f"{name} = {_format(value)}")
    return "\n".join(lines) + "\n"


DEFAULT_CONFIG_TEXT = _default_text()
