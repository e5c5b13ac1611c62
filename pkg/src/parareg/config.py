"""Experiment configuration: ``key = value`` files with sections, or JSON."""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ._validation import ConfigurationError, check_dimension

SUITES = ("constants", "geometry", "intersection", "contact", "barrier", "solver", "decay", "measure", "iqa")


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings shared by all suites; suite-specific defaults apply to unset fields.

    Parameters
    ----------
    suite : str
    operator : str
        Built-in operator name (see ``make_operator``).
    operator_params : dict
    n : int
    resolution : float or None
        Spatial step ``h``; ``None`` uses each suite's acceptance value.
    tau : float or None
    cfl_factor : float
    amplitude : float or None
    seed : int
    seeds : tuple of int
        Seeds for stability studies.
    trials : int or None
    resolutions : tuple of float
        Steps for refinement studies; empty uses the suite default.
    out : str or None
    quick : bool
        Coarser grids and fewer trials (not acceptance-grade).
    jobs : int
    """

    suite: str = "all"
    operator: str = "pucci-min"
    operator_params: dict = field(default_factory=lambda: {"lambda": 0.5, "Lambda": 1.0})
    n: int = 1
    resolution: float | None = None
    tau: float | None = None
    cfl_factor: float = 1.0
    amplitude: float | None = None
    seed: int = 0
    seeds: tuple = (0, 1, 2)
    trials: int | None = None
    resolutions: tuple = ()
    out: str | None = None
    quick: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.suite != "all" and self.suite not in SUITES:
            raise ConfigurationError(f"unknown suite {self.suite!r}; choose from {', '.join(SUITES)} or 'all'")
        try:
            check_dimension(self.n)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.resolution is not None and not 0 < self.resolution <= 0.5:
            raise ConfigurationError("resolution must lie in (0, 1/2]")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        if self.trials is not None and self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.cfl_factor <= 0 or self.cfl_factor > 1:
            raise ConfigurationError("cfl_factor must lie in (0, 1]")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "resolutions", tuple(float(r) for r in self.resolutions))

    def with_overrides(self, **kwargs):
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_dict(self):
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, raw):
    if key not in _TYPES:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    if key in ("seeds", "resolutions") and isinstance(raw, (list, tuple)):
        conv = int if key == "seeds" else _fraction
        return tuple(conv(x) for x in raw)
    if key in ("resolution", "tau", "amplitude", "cfl_factor") and isinstance(raw, str):
        return _fraction(raw)
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key == "operator_params":
        return json.loads(raw) if raw.startswith("{") else dict(
            (k.strip(), float(v)) for k, v in (item.split(":") for item in raw.split(",") if item.strip())
        )
    if key in ("seeds", "resolutions"):
        conv = int if key == "seeds" else _fraction
        return tuple(conv(x) for x in raw.replace(",", " ").split())
    if key in ("n", "seed", "jobs", "trials"):
        return int(raw)
    if key in ("resolution", "tau", "cfl_factor", "amplitude"):
        return _fraction(raw)
    if key == "quick":
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def _fraction(text):
    text = str(text).strip()
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


def load_config(path):
    """Read an INI-style (``[experiment]`` and ``[operator]`` sections) or JSON config."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        data = json.loads(text)
        return ExperimentConfig(**{k: _coerce(k, v) for k, v in data.items()})
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "lambda" and "Lambda" apart
    parser.read_string(text)
    data = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "operator":
            if "name" in items:
                data["operator"] = items.pop("name")
            if items:
                alias = {"lam": "lambda", "lambda_": "lambda", "big_lambda": "Lambda", "Lam": "Lambda"}
                data["operator_params"] = {alias.get(k, k): _fraction(v) for k, v in items.items()}
        else:
            for k, v in items.items():
                data[k] = _coerce(k, v)
    return ExperimentConfig(**data)
