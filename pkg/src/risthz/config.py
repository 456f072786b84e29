"""Scenario configuration: YAML loading, defaults, validation and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

VARIANTS = ("no_ris", "random_phase", "estimated", "estimated_pba")


class ConfigError(ValueError):
    """A scenario file is malformed; ``key`` names the offending entry."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one experiment."""

    frequency: float
    noise_power_dbm: float
    bs_center: Tuple[float, float, float]
    users: Tuple[Tuple[float, float, float], ...]
    bs_array: Tuple[int, int]
    ris_array: Tuple[int, int]
    user_array: Tuple[int, int]
    name: str = "scenario"
    bandwidth: float = 1e9
    absorption: float = 0.0
    absorption_table: Optional[str] = None
    ris_center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bs_grid: Optional[Tuple[int, int]] = None
    ris_grid: Optional[Tuple[int, int]] = None
    element_spacing: Optional[float] = None
    bs_subarray_spacing: Optional[float] = None
    subris_spacing: Optional[float] = None
    spacing_q: int = 1
    uwb_panel_width: float = 1.0
    cascade_pathloss: str = "auto"
    nlos_ris_count: int = 2
    nlos_direct_count: int = 3
    nlos_attenuation_db: Tuple[float, float] = (10.0, 20.0)
    nlos_angular_spread_deg: float = 40.0
    ranging_error: float = 0.05
    ranging_error_model: str = "gaussian"
    error_radius: Optional[float] = 0.1
    codebook_resolution_deg: float = 0.5
    pba_max_iters: int = 20
    pba_tolerance: float = 1e-6
    precoder: str = "mmse"
    effective_csi: str = "measured"
    powers_dbm: Tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    trials: int = 1000
    seed: int = 0
    enable_direct_link: bool = True
    enable_ris: bool = True
    random_phase_baseline: bool = False
    use_pba: bool = True
    variants: Tuple[str, ...] = VARIANTS

    @property
    def K(self) -> int:
        return len(self.users)

    @property
    def noise_power(self) -> float:
        """Noise power in watts."""
        return 10 ** ((self.noise_power_dbm - 30) / 10)

    def subgrid(self, which: str) -> Tuple[int, int]:
        grid = self.bs_grid if which == "bs" else self.ris_grid
        if grid is not None:
            return grid
        n = math.isqrt(self.K)
        return (n, n)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_variant(self, variant: str) -> "ScenarioConfig":
        """Flags for one of the compared schemes."""
        flags = {
            "no_ris": dict(enable_ris=False, random_phase_baseline=False, use_pba=False),
            "random_phase": dict(enable_ris=True, random_phase_baseline=True, use_pba=False),
            "estimated": dict(enable_ris=True, random_phase_baseline=False, use_pba=False),
            "estimated_pba": dict(enable_ris=True, random_phase_baseline=False, use_pba=True),
        }
        if variant not in flags:
            raise ConfigError(f"unknown variant {variant!r}", "simulation.variants")
        return self.replace(**flags[variant])

    @property
    def variant(self) -> str:
        if not self.enable_ris:
            return "no_ris"
        if self.random_phase_baseline:
            return "random_phase"
        return "estimated_pba" if self.use_pba else "estimated"

    def to_dict(self) -> Dict[str, Any]:
        """Nested representation that :func:`parse_config` reads back."""
        out: Dict[str, Any] = {}
        for path, (attr, kind, _required) in _SCHEMA.items():
            value = getattr(self, attr)
            if kind == "ghz":
                value = value / 1e9
            elif isinstance(value, tuple):
                value = json.loads(json.dumps(value))
            node = out
            *parents, leaf = path.split(".")
            for p in parents:
                node = node.setdefault(p, {})
            node[leaf] = value
        return out

    def content_hash(self) -> str:
        """Git blob hash of the canonical JSON form of the config."""
        payload = canonical_json(self.to_dict()).encode()
        return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()

    def validate(self) -> "ScenarioConfig":
        _validate(self)
        return self


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# key path -> (attribute, kind, required)
_SCHEMA: Dict[str, Tuple[str, str, bool]] = {
    "name": ("name", "str", False),
    "frequency_ghz": ("frequency", "ghz", True),
    "bandwidth_ghz": ("bandwidth", "ghz", False),
    "noise_power_dbm": ("noise_power_dbm", "float", True),
    "absorption_per_m": ("absorption", "float", False),
    "absorption_table": ("absorption_table", "optstr", False),
    "geometry.ris_center": ("ris_center", "point", False),
    "geometry.bs_center": ("bs_center", "point", True),
    "geometry.users": ("users", "points", True),
    "geometry.element_spacing": ("element_spacing", "optfloat", False),
    "geometry.bs_subarray_spacing": ("bs_subarray_spacing", "optfloat", False),
    "geometry.subris_spacing": ("subris_spacing", "optfloat", False),
    "geometry.spacing_q": ("spacing_q", "int", False),
    "geometry.uwb_panel_width": ("uwb_panel_width", "float", False),
    "arrays.bs": ("bs_array", "pair", True),
    "arrays.ris": ("ris_array", "pair", True),
    "arrays.user": ("user_array", "pair", True),
    "arrays.bs_grid": ("bs_grid", "optpair", False),
    "arrays.ris_grid": ("ris_grid", "optpair", False),
    "channel.cascade_pathloss": ("cascade_pathloss", "str", False),
    "channel.nlos_ris_count": ("nlos_ris_count", "int", False),
    "channel.nlos_direct_count": ("nlos_direct_count", "int", False),
    "channel.nlos_attenuation_db": ("nlos_attenuation_db", "floatpair", False),
    "channel.nlos_angular_spread_deg": ("nlos_angular_spread_deg", "float", False),
    "localization.ranging_error": ("ranging_error", "float", False),
    "localization.error_model": ("ranging_error_model", "str", False),
    "localization.error_radius": ("error_radius", "optfloat", False),
    "beamforming.codebook_resolution_deg": ("codebook_resolution_deg", "float", False),
    "beamforming.pba_max_iters": ("pba_max_iters", "int", False),
    "beamforming.pba_tolerance": ("pba_tolerance", "float", False),
    "beamforming.precoder": ("precoder", "str", False),
    "beamforming.effective_csi": ("effective_csi", "str", False),
    "simulation.powers_dbm": ("powers_dbm", "floats", False),
    "simulation.trials": ("trials", "int", False),
    "simulation.seed": ("seed", "int", False),
    "simulation.enable_direct_link": ("enable_direct_link", "bool", False),
    "simulation.enable_ris": ("enable_ris", "bool", False),
    "simulation.random_phase_baseline": ("random_phase_baseline", "bool", False),
    "simulation.use_pba": ("use_pba", "bool", False),
    "simulation.variants": ("variants", "strs", False),
}

_SECTIONS = {p.split(".")[0] for p in _SCHEMA if "." in p}


def _convert(kind: str, value, key: str):
    def number(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"expected a number, got {v!r}", key)
        if not math.isfinite(v):
            raise ConfigError("must be finite", key)
        return float(v)

    def seq(v, n=None):
        if not isinstance(v, (list, tuple)):
            raise ConfigError(f"expected a list, got {v!r}", key)
        if n is not None and len(v) != n:
            raise ConfigError(f"expected {n} entries, got {len(v)}", key)
        return v

    if kind in ("optfloat", "optstr", "optpair") and value is None:
        return None
    if kind == "str" or kind == "optstr":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if kind in ("float", "optfloat"):
        return number(value)
    if kind == "ghz":
        return number(value) * 1e9
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if kind == "point":
        return tuple(number(c) for c in seq(value, 3))
    if kind == "points":
        return tuple(_convert("point", p, f"{key}[{i}]") for i, p in enumerate(seq(value)))
    if kind in ("pair", "optpair"):
        out = tuple(_convert("int", c, key) for c in seq(value, 2))
        return out
    if kind == "floatpair":
        return tuple(number(c) for c in seq(value, 2))
    if kind == "floats":
        return tuple(number(c) for c in seq(value))
    if kind == "strs":
        return tuple(_convert("str", s, key) for s in seq(value))
    raise AssertionError(kind)


def _flatten(doc: dict, prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for k, v in doc.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict) and path in _SECTIONS:
            flat.update(_flatten(v, path + "."))
        else:
            flat[path] = v
    return flat


def parse_config(doc) -> ScenarioConfig:
    """Build a validated :class:`ScenarioConfig` from a nested mapping."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping")
    flat = _flatten(doc)
    unknown = sorted(set(flat) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", unknown[0])
    missing = [p for p, (_, _, req) in _SCHEMA.items() if req and p not in flat]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    kwargs = {_SCHEMA[p][0]: _convert(_SCHEMA[p][1], v, p) for p, v in flat.items()}
    return ScenarioConfig(**kwargs).validate()


def load_config(path) -> ScenarioConfig:
    """Read a YAML scenario file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return parse_config(doc)


def preset_names() -> List[str]:
    return sorted(p.name[:-5] for p in resources.files("risthz.presets").iterdir()
                  if p.name.endswith(".yaml"))


def preset_path(name: str) -> Path:
    p = resources.files("risthz.presets") / f"{name}.yaml"
    if not p.is_file():
        raise ConfigError(f"no preset named {name!r}; available: {', '.join(preset_names())}")
    return Path(str(p))


def load_preset(name: str) -> ScenarioConfig:
    return load_config(preset_path(name))


def _validate(c: ScenarioConfig) -> None:
    def fail(msg, key):
        raise ConfigError(msg, key)

    if c.frequency <= 0:
        fail("must be positive", "frequency_ghz")
    if c.bandwidth <= 0:
        fail("must be positive", "bandwidth_ghz")
    if c.absorption < 0:
        fail("must be nonnegative", "absorption_per_m")
    if c.K < 1:
        fail("at least one user is required", "geometry.users")
    for key, arr in (("arrays.bs", c.bs_array), ("arrays.ris", c.ris_array),
                     ("arrays.user", c.user_array)):
        if min(arr) < 1:
            fail("array dimensions must be >= 1", key)
    for key, which in (("arrays.bs_grid", "bs"), ("arrays.ris_grid", "ris")):
        grid = c.subgrid(which)
        if min(grid) < 1 or grid[0] * grid[1] != c.K:
            fail(f"subgrid {grid} must hold exactly K={c.K} subarrays", key)
    for key, v in (("geometry.element_spacing", c.element_spacing),
                   ("geometry.bs_subarray_spacing", c.bs_subarray_spacing),
                   ("geometry.subris_spacing", c.subris_spacing)):
        if v is not None and v <= 0:
            fail("must be positive", key)
    if c.spacing_q < 1:
        fail("must be >= 1", "geometry.spacing_q")
    if c.uwb_panel_width <= 0:
        fail("must be positive", "geometry.uwb_panel_width")
    if c.cascade_pathloss not in ("auto", "near", "far", "per_hop"):
        fail("must be one of auto, near, far, per_hop", "channel.cascade_pathloss")
    if c.nlos_ris_count < 0:
        fail("must be >= 0", "channel.nlos_ris_count")
    if c.nlos_direct_count < 0:
        fail("must be >= 0", "channel.nlos_direct_count")
    lo, hi = c.nlos_attenuation_db
    if lo > hi:
        fail("min must not exceed max", "channel.nlos_attenuation_db")
    if c.nlos_angular_spread_deg <= 0:
        fail("must be positive", "channel.nlos_angular_spread_deg")
    if c.ranging_error < 0:
        fail("must be nonnegative", "localization.ranging_error")
    if c.ranging_error_model not in ("gaussian", "uniform"):
        fail("must be gaussian or uniform", "localization.error_model")
    if c.error_radius is not None and c.error_radius < 0:
        fail("must be nonnegative", "localization.error_radius")
    if c.codebook_resolution_deg <= 0:
        fail("must be positive", "beamforming.codebook_resolution_deg")
    if c.pba_max_iters < 1:
        fail("must be >= 1", "beamforming.pba_max_iters")
    if c.precoder not in ("mmse", "zf"):
        fail("must be mmse or zf", "beamforming.precoder")
    if c.effective_csi not in ("measured", "location"):
        fail("must be measured or location", "beamforming.effective_csi")
    if not c.powers_dbm:
        fail("power sweep must not be empty", "simulation.powers_dbm")
    if c.trials < 1:
        fail("must be >= 1", "simulation.trials")
    if c.seed < 0:
        fail("must be >= 0", "simulation.seed")
    for v in c.variants:
        if v not in VARIANTS:
            fail(f"unknown variant {v!r}; expected one of {', '.join(VARIANTS)}",
                 "simulation.variants")
    for i, u in enumerate(c.users):
        if tuple(u) == tuple(c.ris_center):
            fail("user coincides with the RIS center", f"geometry.users[{i}]")
