"""Run configuration: a TOML file with ``problem``, ``fx``, ``sim``, ``paths``,
``sensitivity`` and ``output`` tables.

Every problem is reported as a :class:`ConfigError` naming the source, the
line (when the key can be located in the text) and the dotted field name.
``--set key.path=value`` overrides are parsed as TOML values and applied on
top of the file before validation.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import tomli

from .levy import DiscreteAtoms, LevyTriplet, NormalInverseGaussian

PRESETS = ("bsp1", "bsp2")


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: Optional[int] = None,
                 field_name: Optional[str] = None):
        self.message, self.source, self.line, self.field_name = message, source, line, field_name
        where = source if line is None else f"{source}:{line}"
        what = f" [{field_name}]" if field_name else ""
        super().__init__(f"{where}:{what} {message}")


# schema: table -> key -> (type check, default); ``None`` default means required
_NUM = (int, float)
SCHEMA: dict[str, dict[str, tuple]] = {
    "problem": {
        "mu": (_NUM, None),
        "sigma": (_NUM, None),
        "delta": (_NUM, None),
        "xi": (_NUM, 1.0),
        "mode": (str, "restricted"),
    },
    "fx": {
        "A": (_NUM, 0.0),
        "gamma": (_NUM, 0.0),
        "driftless": (bool, False),
        "atoms": (list, []),
        "nig": ((dict, list), []),
    },
    "sim": {
        "dt": (_NUM, 5e-3),
        "n_paths": (int, 10_000),
        "seed": (int, 0),
        "tail_tol": (_NUM, 1e-3),
        "antithetic": (bool, False),
        "bridge": (bool, True),
        "workers": (int, 1),
        "x0": (_NUM, 1.0),
        "l0": (_NUM, 0.0),
        "alarm_z": (_NUM, 4.0),
    },
    "paths": {
        "T": (_NUM, 100.0),
        "dt": (_NUM, 0.01),
        "n": (int, 5),
    },
    "solve": {
        "grid_points": (int, 501),
        "oracle_points": (int, 2000),
    },
    "sensitivity": {
        "grid": ((str, list), "0.1:0.1:1.0"),
    },
    "output": {
        "dir": (str, "."),
        "format": (str, "csv"),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]]
    triplet: LevyTriplet
    source: str = "<config>"
    text: str = ""
    overrides: dict[str, str] = field(default_factory=dict)
    explicit: set[str] = field(default_factory=set)

    def __getitem__(self, table: str) -> dict[str, Any]:
        return self.values[table]

    def error(self, message: str, dotted: str) -> ConfigError:
        """Build a diagnostic pointing at ``dotted`` in the file or the overrides."""
        if dotted in self.overrides:
            return ConfigError(message, "--set", None, dotted)
        return ConfigError(message, self.source, locate(self.text, dotted), dotted)


# --------------------------------------------------------------------------


_HEADER = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.\-]+)\s*\]\]?\s*(#.*)?$")


def locate(text: str, dotted: str) -> Optional[int]:
    """1-based line number where ``dotted`` (``table.key``) is assigned, if found."""
    *tables, key = dotted.split(".")
    want = ".".join(tables)
    current = ""
    key_re = re.compile(rf"^\s*{re.escape(key)}\s*=")
    header_line = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m:
            current = m.group(1)
            if current == dotted:
                header_line = no
            continue
        if current == want and key_re.match(line):
            return no
    return header_line


def preset_text(name: str) -> str:
    return resources.files("fxdividend").joinpath("presets", f"{name}.toml").read_text("utf-8")


def _read(spec: Optional[str]) -> tuple[str, str]:
    if spec is None:
        return "<defaults>", ""
    if spec in PRESETS and not Path(spec).exists():
        return f"preset:{spec}", preset_text(spec)
    try:
        return spec, Path(spec).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", spec) from exc
    except UnicodeDecodeError as exc:
        raise ConfigError("config is not valid UTF-8", spec) from exc


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"expected KEY=VALUE, got {item!r}", "--set")
    key, raw = item.split("=", 1)
    key = key.strip()
    if key.count(".") != 1:
        raise ConfigError("override key must look like table.key", "--set", None, key)
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()  # bare words are strings
    return key, value


def _check_number(value, dotted, cfg):
    if isinstance(value, bool) or not math.isfinite(value):
        raise cfg.error(f"expected a finite number, got {value!r}", dotted)


def load(spec: Optional[str], overrides: tuple[str, ...] = ()) -> RunConfig:
    """Read ``spec`` (a path or preset name), apply overrides, validate."""
    source, text = _read(spec)
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", source) from exc

    applied = {}
    for item in overrides:
        key, value = parse_override(item)
        table, name = key.split(".")
        raw.setdefault(table, {})
        if not isinstance(raw[table], dict):
            raise ConfigError("not a table", "--set", None, table)
        raw[table][name] = value
        applied[key] = item

    cfg = RunConfig({}, LevyTriplet(), source, text, applied)
    for table in raw:
        if table not in SCHEMA:
            raise ConfigError(f"unknown table {table!r}", source, locate(text, table), table)
    for table, keys in SCHEMA.items():
        given = raw.get(table, {})
        if not isinstance(given, dict):
            raise cfg.error("must be a table", table)
        for k in given:
            if k not in keys:
                raise cfg.error("unknown key", f"{table}.{k}")
        out = {}
        for k, (types, default) in keys.items():
            dotted = f"{table}.{k}"
            if k not in given:
                if default is None and table == "problem":
                    raise ConfigError("required key missing", source, locate(text, table), dotted)
                out[k] = default
                continue
            v = given[k]
            cfg.explicit.add(dotted)
            if types is _NUM:
                if not isinstance(v, _NUM) or isinstance(v, bool):
                    raise cfg.error(f"expected a number, got {v!r}", dotted)
                _check_number(v, dotted, cfg)
                v = float(v)
            elif types is int:
                if not isinstance(v, int) or isinstance(v, bool):
                    raise cfg.error(f"expected an integer, got {v!r}", dotted)
            elif not isinstance(v, types):
                raise cfg.error(f"wrong type {type(v).__name__}", dotted)
            out[k] = v
        cfg.values[table] = out

    _validate(cfg)
    cfg.triplet = _triplet(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    p = cfg["problem"]
    if p["mode"] not in ("restricted", "unrestricted"):
        raise cfg.error("mode must be 'restricted' or 'unrestricted'", "problem.mode")
    for k in ("mu", "sigma", "xi"):
        if not p[k] > 0.0:
            raise cfg.error("must be > 0", f"problem.{k}")
    s = cfg["sim"]
    for k in ("dt", "tail_tol"):
        if not s[k] > 0.0:
            raise cfg.error("must be > 0", f"sim.{k}")
    if s["n_paths"] <= 0:
        raise cfg.error("must be a positive integer", "sim.n_paths")
    if not 0 <= s["seed"] < 2**64:
        raise cfg.error("must fit in an unsigned 64-bit integer", "sim.seed")
    if s["workers"] < 1:
        raise cfg.error("must be >= 1", "sim.workers")
    if s["x0"] < 0.0:
        raise cfg.error("must be >= 0", "sim.x0")
    if not s["alarm_z"] > 0.0:
        raise cfg.error("must be > 0", "sim.alarm_z")
    if s["antithetic"] and s["n_paths"] % 2:
        raise cfg.error("antithetic sampling needs an even n_paths", "sim.n_paths")
    q = cfg["paths"]
    for k in ("T", "dt"):
        if not q[k] > 0.0:
            raise cfg.error("must be > 0", f"paths.{k}")
    if q["n"] <= 0:
        raise cfg.error("must be a positive integer", "paths.n")
    if cfg["solve"]["grid_points"] < 2:
        raise cfg.error("must be >= 2", "solve.grid_points")
    if cfg["solve"]["oracle_points"] < 200:
        raise cfg.error("must be >= 200", "solve.oracle_points")
    if cfg["output"]["format"] not in ("csv", "svg"):
        raise cfg.error("format must be 'csv' or 'svg'", "output.format")


def _triplet(cfg: RunConfig) -> LevyTriplet:
    fx = cfg["fx"]
    if fx["A"] < 0.0:
        raise cfg.error("must be >= 0", "fx.A")
    atoms = []
    for i, a in enumerate(fx["atoms"]):
        ok = isinstance(a, list) and len(a) == 2 and all(
            isinstance(v, _NUM) and not isinstance(v, bool) for v in a
        )
        if not ok:
            raise cfg.error(f"atom #{i} must be [height, intensity]", "fx.atoms")
        atoms.append((float(a[0]), float(a[1])))
    jumps = []
    if atoms:
        try:
            jumps.append(DiscreteAtoms(tuple(atoms)))
        except ValueError as exc:
            raise cfg.error(str(exc), "fx.atoms") from exc
    nigs = fx["nig"] if isinstance(fx["nig"], list) else [fx["nig"]]
    for blk in nigs:
        if not isinstance(blk, dict) or set(blk) != {"s2", "vartheta", "kappa"}:
            raise cfg.error("nig needs exactly s2, vartheta and kappa", "fx.nig")
        if not all(isinstance(v, _NUM) and not isinstance(v, bool) for v in blk.values()):
            raise cfg.error("nig parameters must be numbers", "fx.nig")
        try:
            jumps.append(NormalInverseGaussian(float(blk["s2"]), float(blk["vartheta"]),
                                               float(blk["kappa"])))
        except ValueError as exc:
            raise cfg.error(str(exc), "fx.nig") from exc
    if fx["driftless"]:
        if "fx.gamma" in cfg.explicit:
            raise cfg.error("give either gamma or driftless = true, not both", "fx.gamma")
        atom_jumps = tuple(j for j in jumps if isinstance(j, DiscreteAtoms))
        base = LevyTriplet.driftless(fx["A"], atom_jumps)
        return LevyTriplet(fx["A"], tuple(jumps), base.gamma)
    return LevyTriplet(fx["A"], tuple(jumps), fx["gamma"])


def parse_grid(spec, cfg: Optional[RunConfig] = None, dotted="sensitivity.grid") -> list[float]:
    """``start:step:stop`` (inclusive, tolerant of rounding) or a comma list / TOML array."""
    def fail(msg):
        if cfg is not None:
            return cfg.error(msg, dotted)
        return ConfigError(msg, "--grid", None, dotted)

    if isinstance(spec, list):
        items = spec
    elif ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise fail("range grid must be start:step:stop")
        try:
            start, step, stop = (float(p) for p in parts)
        except ValueError:
            raise fail(f"not a number in {spec!r}") from None
        if not step > 0.0 and not step < 0.0:
            raise fail("step must be nonzero")
        count = math.floor((stop - start) / step + 1e-9) + 1
        if count < 1 or count > 1_000_000:
            raise fail("empty or oversized grid")
        return [round(start + k * step, 12) for k in range(count)]
    else:
        items = [s for s in spec.split(",") if s.strip()]
    try:
        grid = [float(v) for v in items]
    except (TypeError, ValueError):
        raise fail(f"not a number in {spec!r}") from None
    if not grid:
        raise fail("grid is empty")
    return grid
