"""Run configuration files.

Sections and keys (all optional unless noted)::

    [mesh]
    file = channel.hbmesh        # either a mesh file ...
    generator = channel          # ... or the structured channel generator
    nx = 32
    ny = 32
    split = 0.5
    length = 1.0
    closure = periodic           # periodic | box

    [fluid1]                     # required, same keys for [fluid2]
    mu = 1.0
    g = 0.1
    p = 2.0
    force = 1.0, 0.0

    [solver]
    eps_schedule = 1e-2, 1e-3, 1e-4
    tol_rel = 1e-8
    max_picard = 200
    damping = 1.0
    anderson = 5
    tol_fixed_point = 1e-7
    max_outer = 50
    relaxation = 1.0
    seed = 0

    [output]
    directory = out
    figures = yes
    samples = 201

Relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .inner import InnerConfig
from .mesh import TwoPhaseMesh, generate_channel_mesh, read_mesh
from .outer import OuterConfig
from .tensor import FluidParams


class ConfigError(ValueError):
    pass


_KEYS = {
    "mesh": {"file", "generator", "nx", "ny", "split", "length", "closure"},
    "fluid1": {"mu", "g", "p", "force"},
    "fluid2": {"mu", "g", "p", "force"},
    "solver": {"eps_schedule", "tol_rel", "max_picard", "damping", "anderson",
               "tol_fixed_point", "max_outer", "relaxation", "seed"},
    "output": {"directory", "figures", "samples"},
}


@dataclass
class MeshSpec:
    file: Path | None = None
    nx: int = 32
    ny: int = 32
    split: float = 0.5
    length: float = 1.0
    closure: str = "periodic"

    def build(self, refine: int = 1) -> TwoPhaseMesh:
        if self.file is not None:
            if refine != 1:
                raise ConfigError("refinement needs the channel generator, not a mesh file")
            return read_mesh(self.file)
        return generate_channel_mesh(self.nx * refine, self.ny * refine, self.split, self.length, self.closure)

    @property
    def is_channel(self) -> bool:
        return self.file is None and self.closure == "periodic"


@dataclass
class RunConfig:
    mesh: MeshSpec
    params: dict[int, FluidParams]
    forces: dict[int, np.ndarray]
    inner: InnerConfig
    outer: OuterConfig
    output: Path
    figures: bool = True
    samples: int = 201
    seed: int = 0
    source: Path | None = field(default=None, repr=False)


def _float(sec, key, default=None) -> float:
    if key not in sec:
        if default is None:
            raise ConfigError(f"[{sec.name}] missing required key '{key}'")
        return default
    try:
        return float(sec[key])
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key} = {sec[key]!r} is not a number") from None


def _int(sec, key, default: int) -> int:
    if key not in sec:
        return default
    try:
        return int(sec[key])
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key} = {sec[key]!r} is not an integer") from None


def _floats(sec, key, n=None, default=None) -> list[float]:
    if key not in sec:
        return list(default)
    try:
        vals = [float(t) for t in sec[key].replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key} = {sec[key]!r} is not a list of numbers") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"[{sec.name}] {key} needs {n} values, got {len(vals)}")
    return vals


def parse_config(text: str, base: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for name in cp.sections():
        if name not in _KEYS:
            raise ConfigError(f"unknown section [{name}]")
        extra = set(cp[name]) - _KEYS[name]
        if extra:
            raise ConfigError(f"[{name}] unknown key(s): {', '.join(sorted(extra))}")
    base = base or Path(".")
    empty = {"name": "?"}

    m = cp["mesh"] if cp.has_section("mesh") else None
    spec = MeshSpec()
    if m is not None:
        if "file" in m and "generator" in m:
            raise ConfigError("[mesh] give either 'file' or 'generator', not both")
        if "file" in m:
            spec.file = base / m["file"]
        else:
            gen = m.get("generator", "channel")
            if gen != "channel":
                raise ConfigError(f"[mesh] unknown generator {gen!r}")
            spec.nx = _int(m, "nx", spec.nx)
            spec.ny = _int(m, "ny", spec.ny)
            spec.split = _float(m, "split", spec.split)
            spec.length = _float(m, "length", spec.length)
            spec.closure = m.get("closure", spec.closure)
            if spec.closure not in ("periodic", "box"):
                raise ConfigError(f"[mesh] closure must be periodic or box, got {spec.closure!r}")
            if spec.nx < 2 or spec.ny < 2:
                raise ConfigError(f"[mesh] degenerate resolution nx={spec.nx}, ny={spec.ny}")

    params, forces = {}, {}
    for t in (1, 2):
        name = f"fluid{t}"
        if not cp.has_section(name):
            raise ConfigError(f"missing section [{name}]")
        sec = cp[name]
        try:
            params[t] = FluidParams(_float(sec, "mu"), _float(sec, "g"), _float(sec, "p"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
        forces[t] = np.array(_floats(sec, "force", 2, (0.0, 0.0)))
        if not np.all(np.isfinite(forces[t])):
            raise ConfigError(f"[{name}] force must be finite")

    s = cp["solver"] if cp.has_section("solver") else None
    try:
        if s is None:
            inner, outer, seed = InnerConfig(), OuterConfig(), 0
        else:
            inner = InnerConfig(
                eps_schedule=_floats(s, "eps_schedule", default=InnerConfig.eps_schedule),
                tol_rel=_float(s, "tol_rel", InnerConfig.tol_rel),
                max_picard=_int(s, "max_picard", InnerConfig.max_picard),
                damping=_float(s, "damping", InnerConfig.damping),
                anderson=_int(s, "anderson", InnerConfig.anderson),
            )
            outer = OuterConfig(
                tol_fixed_point=_float(s, "tol_fixed_point", OuterConfig.tol_fixed_point),
                max_outer=_int(s, "max_outer", OuterConfig.max_outer),
                relaxation=_float(s, "relaxation", OuterConfig.relaxation),
            )
            seed = _int(s, "seed", 0)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[solver] {exc}") from None

    o = cp["output"] if cp.has_section("output") else empty
    out = base / o.get("directory", "out")
    figures = True
    if "figures" in o:
        try:
            figures = cp.getboolean("output", "figures")
        except ValueError:
            raise ConfigError(f"[output] figures = {o['figures']!r} is not a boolean") from None
    samples = _int(o, "samples", 201) if o is not empty else 201
    if samples < 100:
        raise ConfigError(f"[output] samples must be at least 100, got {samples}")
    return RunConfig(spec, params, forces, inner, outer, out, figures, samples, seed)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, path.parent)
    cfg.source = path
    return cfg
