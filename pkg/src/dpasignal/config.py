"""Sectioned ``key = value`` pipeline configuration.

Example::

    [axis]
    years = 10

    [generate]
    n_patients = 5000
    seed = 7

    [bag]
    k = 20

Unknown sections or keys are rejected.  Command-line overrides use the form
``section.key=value`` and win over the file.  The ``[runtime]`` section only
affects scheduling and is left out of the echoed configuration.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from .counting import UniformKernel, WeightKernel
from .ensemble import BagConfig, EnsembleConfig
from .errors import ConfigError
from .events import TimeAxis
from .rating import RatingConfig
from .synth import GenConfig

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _bool(text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}") from None


def _opt_int(text: str):
    text = text.strip()
    return None if text.lower() in ("", "none") else int(text)


SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "axis": {"years": (int, 10), "year_length_days": (int, 365)},
    "generate": {
        "n_patients": (int, 5000), "n_drugs": (int, 50), "n_conditions": (int, 40),
        "drug_rate": (float, 2.0), "cond_rate": (float, 5.0),
        "era_length_days": (float, 30.0), "n_spiked": (int, 10),
        "effect_prob": (float, 0.5), "lag_min_days": (int, 3), "lag_max_days": (int, 20),
        "seed": (int, 0),
    },
    "counting": {"delta": (int, 50), "m": (_opt_int, None), "first_era_only": (_bool, False)},
    "kernel": {"kind": (str, "uniform"), "w0": (float, 0.2),
               "peak_start_day": (int, 6), "peak_end_day": (int, 10)},
    "dpa1": {"alpha": (float, 0.3), "transform": (str, "log"), "power": (float, 0.5),
             "exposure_model": (str, "occurrence")},
    "dpa2": {"alpha": (float, 0.3), "transform": (str, "log"), "power": (float, 0.5),
             "exposure_model": (str, "duration")},
    "bag": {"k": (int, 100), "inclusion_prob": (float, 0.65), "delta_min": (int, 40),
            "delta_max": (int, 60), "seed": (int, 0)},
    "ensemble": {"tau": (float, 0.3)},
    "scope": {"drug_min": (_opt_int, None), "drug_max": (_opt_int, None),
              "condition_min": (_opt_int, None), "condition_max": (_opt_int, None)},
    "paths": {"data_dir": (str, "data"), "out_dir": (str, "out")},
    "output": {"dense": (_bool, False), "top_k": (int, 16)},
    "runtime": {"workers": (int, 1)},
}

NOT_ECHOED = ("runtime",)


@dataclass
class PipelineConfig:
    raw: dict[str, dict[str, Any]]
    has_generate: bool
    axis: TimeAxis
    gen: GenConfig
    delta: int
    m: int
    first_era_only: bool
    kernel_kind: str
    kernel_params: dict
    dpa1: RatingConfig
    dpa2: RatingConfig
    bag: BagConfig
    ensemble: EnsembleConfig
    data_dir: Path
    out_dir: Path
    dense: bool
    top_k: int
    workers: int

    def kernel(self, delta: int | None = None):
        delta = self.delta if delta is None else delta
        if self.kernel_kind == "uniform":
            return UniformKernel(delta)
        return WeightKernel(delta, **self.kernel_params)

    def scopes(self, drug_universe, condition_universe):
        """Drug and condition id scopes for rating matrices."""
        s = self.raw["scope"]
        return (_scope(drug_universe, s["drug_min"], s["drug_max"]),
                _scope(condition_universe, s["condition_min"], s["condition_max"]))

    def echo(self) -> str:
        """Fully resolved configuration text (scheduling section excluded)."""
        lines = []
        for section, values in self.raw.items():
            if section in NOT_ECHOED or (section == "generate" and not self.has_generate):
                continue
            lines.append(f"[{section}]")
            for key, val in values.items():
                if isinstance(val, bool):
                    val = "true" if val else "false"
                lines.append(f"{key} = {'none' if val is None else val}")
            lines.append("")
        return "\n".join(lines)


def _scope(universe, lo, hi) -> list[int]:
    """Ids of the universe within [lo, hi]; explicit bounds add ids the data never saw."""
    ids = set(int(x) for x in universe)
    if lo is not None and hi is not None:
        return list(range(lo, hi + 1))
    return sorted(x for x in ids if (lo is None or x >= lo) and (hi is None or x <= hi))


def parse_overrides(items: Sequence[str]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not section or not name:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        out.setdefault(section, {})[name] = value.strip()
    return out


def load_config(path=None, overrides: Sequence[str] = ()) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            parser.read(p, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {p}: {exc}".replace("\n", " ")) from None
    text: dict[str, dict[str, str]] = {s: dict(parser[s]) for s in parser.sections()}
    for section, kv in parse_overrides(overrides).items():
        text.setdefault(section, {}).update(kv)
    return build_config(text, base_dir=Path(path).parent if path else Path("."))


def build_config(text: dict[str, dict[str, str]], base_dir: Path = Path(".")) -> PipelineConfig:
    raw: dict[str, dict[str, Any]] = {}
    for section in text:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in text[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    for section, keys in SCHEMA.items():
        vals = {}
        for key, (conv, default) in keys.items():
            if key in text.get(section, {}):
                try:
                    vals[key] = conv(text[section][key])
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from None
            else:
                vals[key] = default
        raw[section] = vals

    try:
        axis = TimeAxis(horizon_days=raw["axis"]["years"] * raw["axis"]["year_length_days"],
                        year_length_days=raw["axis"]["year_length_days"])
    except ValueError as exc:
        raise ConfigError(f"[axis] {exc}") from None
    gen = GenConfig(years=raw["axis"]["years"],
                    year_length_days=raw["axis"]["year_length_days"], **raw["generate"])
    m = raw["counting"]["m"] or axis.m
    raw["counting"]["m"] = m
    if m < 1 or raw["counting"]["delta"] < 0:
        raise ConfigError("[counting] needs m >= 1 and delta >= 0")
    kind = raw["kernel"]["kind"]
    if kind not in ("uniform", "weighted"):
        raise ConfigError(f"[kernel] kind must be uniform or weighted, got {kind!r}")
    kernel_params = {k: raw["kernel"][k] for k in ("w0", "peak_start_day", "peak_end_day")}
    if kind == "weighted":
        for d in {raw["counting"]["delta"], raw["bag"]["delta_min"]}:
            WeightKernel(d, **kernel_params)
    data_dir = (base_dir / raw["paths"]["data_dir"]).resolve()
    out_dir = (base_dir / raw["paths"]["out_dir"]).resolve()
    if data_dir == out_dir:
        raise ConfigError("[paths] data_dir and out_dir must differ")
    if raw["runtime"]["workers"] < 1:
        raise ConfigError("[runtime] workers must be >= 1")
    if raw["output"]["top_k"] < 1:
        raise ConfigError("[output] top_k must be >= 1")
    return PipelineConfig(
        raw=raw,
        has_generate="generate" in text,
        axis=axis,
        gen=gen,
        delta=raw["counting"]["delta"],
        m=m,
        first_era_only=raw["counting"]["first_era_only"],
        kernel_kind=kind,
        kernel_params=kernel_params,
        dpa1=RatingConfig(**raw["dpa1"]),
        dpa2=RatingConfig(**raw["dpa2"]),
        bag=BagConfig(**raw["bag"]),
        ensemble=EnsembleConfig(**raw["ensemble"]),
        data_dir=data_dir,
        out_dir=out_dir,
        dense=raw["output"]["dense"],
        top_k=raw["output"]["top_k"],
        workers=raw["runtime"]["workers"],
    )


def field_names(cls) -> list[str]:
    return [f.name for f in fields(cls)]
