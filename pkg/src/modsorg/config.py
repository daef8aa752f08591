"""Run configuration: ``section.key = value`` lines, ``#`` comments.

Every field has a default, so an empty file is a valid configuration.
Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .bounds import AS_WRITTEN, VARIANTS
from .navigation import NavConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SelfOrgSection:
    modules: int = 3
    budget: int = 400
    splits_per_call: int = 1
    max_sweeps: int = 40
    tol: float = float("-inf")  # run to max_sweeps; the global error grows with refinement
    warmup_splits: int = 2
    bound_variant: str = AS_WRITTEN
    solver_tol: float = 1e-6


@dataclass(frozen=True)
class EvalSection:
    runs: int = 500
    cap: int = 1000


@dataclass(frozen=True)
class DemoSection:
    points: int = 10
    blobs: int = 2
    m: int = 2
    spread: float = 0.3
    eta: float = 0.5
    max_iter: int = 100
    max_sweeps: int = 100


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1
    output_dir: str = "out"
    geometry_path: Optional[str] = None
    env: NavConfig = field(default_factory=NavConfig)
    so: SelfOrgSection = field(default_factory=SelfOrgSection)
    eval: EvalSection = field(default_factory=EvalSection)
    demo: DemoSection = field(default_factory=DemoSection)

    def lines(self) -> list[str]:
        """Canonical ``key = value`` dump; parsing it gives back ``self``."""
        out = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                out += [f"{f.name}.{g.name} = {getattr(value, g.name)!r}" for g in dataclasses.fields(value)]
            else:
                out.append(f"{f.name} = {value!r}")
        return out

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.lines()).encode()).hexdigest()

    def with_overrides(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


_SECTIONS = {"env": NavConfig, "so": SelfOrgSection, "eval": EvalSection, "demo": DemoSection}


def _convert(raw: str, typ, key: str):
    raw = raw.strip()
    if raw.startswith(("'", '"')) and raw.endswith(raw[0]) and len(raw) >= 2:
        raw = raw[1:-1]
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        if raw == "None":
            return None
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ}") from None


def _field_types(cls) -> dict:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def parse_config(text: str, base: RunConfig = RunConfig()) -> RunConfig:
    top: dict = {}
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS or name not in _field_types(_SECTIONS[section]):
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            sections[section][name] = _convert(raw, _field_types(_SECTIONS[section])[name], key)
        else:
            types = {"seed": int, "output_dir": str, "geometry_path": str}
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            top[key] = _convert(raw, types[key], key)
    kw = dict(top)
    for name, values in sections.items():
        if values:
            try:
                kw[name] = dataclasses.replace(getattr(base, name), **values)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
    cfg = dataclasses.replace(base, **kw)
    check(cfg)
    return cfg


def check(cfg: RunConfig) -> None:
    if cfg.geometry_path is not None and not Path(cfg.geometry_path).is_file():
        raise ConfigError(f"geometry file {cfg.geometry_path} does not exist")
    so = cfg.so
    if so.modules < 1 or so.budget < 1 or so.splits_per_call < 1 or so.max_sweeps < 0 or so.warmup_splits < 0:
        raise ConfigError(f"invalid self-organization settings {so}")
    if so.bound_variant not in VARIANTS:
        raise ConfigError(f"unknown bound variant {so.bound_variant!r}")
    if cfg.eval.runs < 1 or cfg.eval.cap < 1:
        raise ConfigError(f"invalid evaluation settings {cfg.eval}")


def load_config(path: Optional[str] = None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(p.read_text())
