"""Strict TOML run-configuration handling for the experiment CLI.

One flat format with a section per concern: [flux], [process], [data]
(optional deterministic mean profile), [grid], [mc], [fd], [output].
Unknown sections or keys are rejected, every value is type-checked, and
a parsed config serializes back to TOML that parses to an equal dict,
so persisted configs reproduce runs exactly.
"""

from __future__ import annotations

import numpy as np
import toml as _toml_writer

try:
    import tomllib as _toml_reader
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml_reader

from .flux_calculus import FluxSpec
from .process_models import ProcessSpec

__all__ = [
    "ConfigError",
    "parse_config",
    "serialize_config",
    "load_config",
    "build_flux",
    "build_process",
    "build_data_fns",
    "mc_settings",
    "need",
    "get",
]


class ConfigError(ValueError):
    """Invalid or unusable run configuration."""


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_str(v) -> bool:
    return isinstance(v, str)


def _is_bool(v) -> bool:
    return isinstance(v, bool)


def _num_list(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_is_num(e) for e in v)


def _int_list(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_is_int(e) for e in v)


def _int_or_int_list(v) -> bool:
    return _is_int(v) or _int_list(v)


_SCHEMA = {
    "flux": {
        "variant": (_is_str, "a string"),
        "j": (_is_num, "a number"),
        "slopes": (_num_list, "a nonempty list of numbers"),
        "breakpoints": (_num_list, "a nonempty list of numbers"),
        "h0": (_is_num, "a number"),
    },
    "process": {
        "kind": (_is_str, "a string"),
        "anchor": (_is_num, "a number"),
        "T": (_is_num, "a number"),
        "alpha": (_is_num, "a number"),
        "bridge_tail": (_is_str, "a string"),
    },
    "data": {
        "profile": (_is_str, "a string"),
        "center": (_is_num, "a number"),
        "scale": (_is_num, "a number"),
        "amplitude": (_is_num, "a number"),
        "frequency": (_is_num, "a number"),
    },
    "grid": {
        "x": (_is_num, "a number"),
        "t": (_is_num, "a number"),
        "points_per_segment": (_int_or_int_list, "an integer or list of integers"),
        "x_min": (_is_num, "a number"),
        "x_max": (_is_num, "a number"),
        "dx": (_is_num, "a number"),
        "t_values": (_num_list, "a nonempty list of numbers"),
        "m_values": (_int_list, "a nonempty list of integers"),
        "alpha": (_is_num, "a number"),
        "s_min": (_is_num, "a number"),
        "s_max": (_is_num, "a number"),
        "s_count": (_is_int, "an integer"),
        "target": (_is_str, "a string"),
        "n": (_is_int, "an integer"),
        "gprime_bound": (_is_num, "a number"),
        "n_dense": (_is_int, "an integer"),
    },
    "mc": {
        "trials": (_is_int, "an integer"),
        "seed": (_is_int, "an integer"),
        "threads": (_is_int, "an integer"),
        "seeds": (_is_int, "an integer"),
        "method": (_is_str, "a string"),
        "delta_x": (_num_list, "a nonempty list of numbers"),
    },
    "fd": {
        "scheme": (_is_str, "a string"),
        "dx": (_is_num, "a number"),
        "cfl": (_is_num, "a number"),
        "domain": (_num_list, "a nonempty list of numbers"),
        "periodic": (_is_bool, "a boolean"),
        "central_fraction": (_is_num, "a number"),
    },
    "output": {
        "outdir": (_is_str, "a string"),
    },
}


def parse_config(text: str) -> dict:
    try:
        cfg = _toml_reader.loads(text)
    except _toml_reader.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    for section, content in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"[{section}] must be a table of keys")
        allowed = _SCHEMA[section]
        for key, value in content.items():
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            checker, want = allowed[key]
            if not checker(value):
                raise ConfigError(f"[{section}] {key} must be {want}, got {value!r}")
    return cfg


def serialize_config(cfg: dict) -> str:
    return _toml_writer.dumps(cfg)


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config(text)


def need(cfg: dict, section: str, key: str):
    try:
        return cfg[section][key]
    except KeyError:
        raise ConfigError(f"missing required config key {key!r} in [{section}]") from None


def get(cfg: dict, section: str, key: str, default):
    return cfg.get(section, {}).get(key, default)


def _forbid(table: dict, keys, context: str, section: str) -> None:
    present = [k for k in keys if k in table]
    if present:
        raise ConfigError(f"key {present[0]!r} does not apply to {context} in [{section}]")


def build_flux(cfg: dict) -> FluxSpec:
    fx = cfg.get("flux")
    if fx is None:
        raise ConfigError("missing [flux] section")
    variant = fx.get("variant")
    if variant is None:
        raise ConfigError("[flux] needs a variant")
    try:
        if variant == "power_law":
            _forbid(fx, ("slopes", "breakpoints", "h0"), "a power_law flux", "flux")
            if "j" not in fx:
                raise ConfigError("power_law flux needs [flux] j")
            return FluxSpec.power_law(float(fx["j"]))
        if variant == "absolute_value":
            _forbid(fx, ("slopes", "breakpoints", "h0", "j"), "an absolute_value flux", "flux")
            return FluxSpec.absolute_value()
        if variant == "polygonal":
            _forbid(fx, ("j",), "a polygonal flux", "flux")
            if "slopes" not in fx or "breakpoints" not in fx:
                raise ConfigError("polygonal flux needs [flux] slopes and breakpoints")
            return FluxSpec.polygonal(fx["slopes"], fx["breakpoints"],
                                      h0=float(fx.get("h0", 0.0)))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown flux variant {variant!r}")


def build_process(cfg: dict) -> ProcessSpec | None:
    """The derivative-data process, or None for purely deterministic data."""
    pr = cfg.get("process")
    if pr is None:
        return None
    kind = pr.get("kind")
    if kind is None:
        raise ConfigError("[process] needs a kind")
    try:
        if kind == "none":
            _forbid(pr, ("anchor", "T", "alpha", "bridge_tail"), "kind none", "process")
            return None
        if kind == "bm":
            _forbid(pr, ("T", "alpha", "bridge_tail"), "Brownian motion", "process")
            return ProcessSpec.brownian_motion(anchor=float(pr.get("anchor", 0.0)))
        if kind == "bb":
            _forbid(pr, ("alpha", "anchor"), "a Brownian bridge", "process")
            if "T" not in pr:
                raise ConfigError("bridge process needs [process] T")
            return ProcessSpec.brownian_bridge(float(pr["T"]),
                                               tail=pr.get("bridge_tail", "hold"))
        if kind == "ou":
            _forbid(pr, ("T", "bridge_tail"), "an OU process", "process")
            if "alpha" not in pr:
                raise ConfigError("OU process needs [process] alpha")
            return ProcessSpec.ornstein_uhlenbeck(float(pr["alpha"]),
                                                  anchor=float(pr.get("anchor", 0.0)))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown process kind {kind!r}")


def build_data_fns(cfg: dict):
    """Deterministic mean profile (g, g') from [data], or (None, None)."""
    d = cfg.get("data")
    if d is None:
        return None, None
    profile = d.get("profile", "none")
    if profile == "none":
        _forbid(d, ("center", "scale", "amplitude", "frequency"), "profile none", "data")
        return None, None
    if profile == "parabola":
        _forbid(d, ("amplitude", "frequency"), "a parabola profile", "data")
        c = float(d.get("center", 0.0))
        s = float(d.get("scale", 1.0))
        return (lambda y: s * (np.asarray(y, dtype=float) - c) ** 2,
                lambda y: 2.0 * s * (np.asarray(y, dtype=float) - c))
    if profile == "sine":
        _forbid(d, ("center", "scale"), "a sine profile", "data")
        a = float(d.get("amplitude", 0.5))
        f = float(d.get("frequency", 1.0))
        if f == 0.0:
            raise ConfigError("sine profile needs a nonzero frequency")
        return (lambda y: a * (1.0 - np.cos(f * np.asarray(y, dtype=float))) / f,
                lambda y: a * np.sin(f * np.asarray(y, dtype=float)))
    raise ConfigError(f"unknown data profile {profile!r}")


def mc_settings(cfg: dict, *, seed=None, trials=None, threads=None) -> tuple[int, int, int]:
    """Effective (seed, trials, threads): CLI overrides beat [mc] beats defaults."""
    mc = cfg.get("mc", {})
    out_seed = seed if seed is not None else mc.get("seed", 12345)
    out_trials = trials if trials is not None else mc.get("trials", 100_000)
    out_threads = threads if threads is not None else mc.get("threads", 1)
    if out_seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {out_seed}")
    if out_trials < 1:
        raise ConfigError(f"trials must be positive, got {out_trials}")
    if out_threads < 1:
        raise ConfigError(f"threads must be positive, got {out_threads}")
    return int(out_seed), int(out_trials), int(out_threads)
