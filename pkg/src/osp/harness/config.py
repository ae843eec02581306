"""Experiment configuration, read from INI-style key-value files.

Example::

    [experiment]
    name = bandit_multiclass
    T = 10000
    repetitions = 10
    seed = 7

    [stream]
    kind = multiclass
    K = 8
    n_prime = 2
    r = 0.0

    [feedback]
    mode = bandit
    estimator = inverse_weighted
    q_policy = theory

    [learner]
    kind = ogd
    B = 10

A sweep file adds a ``[sweep]`` section whose keys name other settings as
``section.key`` and whose values are comma-separated alternatives; the
cartesian product of all alternatives is run.
"""

from __future__ import annotations

import configparser
import itertools
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .. import delay as dl
from .. import estimators as es
from .. import learners as ln
from ..errors import ConfigError

STREAMS = ("multiclass", "multilabel", "separable", "mnist")
FULL = "full"
BANDIT = "bandit"
THEORY = "theory"
FIXED = "fixed"

# section -> field names; keys in files use these names verbatim
SECTIONS = {
    "experiment": ("name", "T", "repetitions", "seed", "out", "threads", "check_assumption",
                   "round_csv", "comparators", "fit_iters"),
    "stream": ("stream", "K", "n_prime", "r", "d", "m", "n", "margin", "length", "normalize",
               "structure", "images", "labels"),
    "feedback": ("mode", "estimator", "q_policy", "q"),
    "learner": ("learner", "B", "project", "R", "alpha"),
    "delay": ("delay", "D", "tau_max", "trace"),
    "regularizer": ("base", "zeta"),
}
# the "kind" key of a section maps to the field of the same name as the section
KIND_ALIASES = {"stream": "stream", "learner": "learner", "delay": "delay"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run, up to the master seed."""

    name: str = "run"
    T: int = 1000
    repetitions: int = 1
    seed: int = 0
    out: str = "out"
    threads: int = 1
    check_assumption: bool = True
    round_csv: bool = True
    comparators: str = "zero,random,fit"
    fit_iters: int = 200
    # stream
    stream: str = "multiclass"
    K: int = 8
    n_prime: int = 2
    r: float = 0.0
    d: int = 10
    m: int = 5
    n: int = 50
    margin: float = 4.0
    length: int = 50
    normalize: bool = True
    structure: str = "multiclass"
    images: str = ""
    labels: str = ""
    # feedback
    mode: str = BANDIT
    estimator: str = es.INVERSE_WEIGHTED
    q_policy: str = THEORY
    q: float = 0.0
    # learner
    learner: str = ln.KIND_OGD
    B: float = 10.0
    project: bool = True
    R: float = 0.0
    alpha: float = 0.0
    # delay
    delay: str = dl.NONE
    D: int = 0
    tau_max: int = 0
    trace: str = ""
    # regularizer
    base: float = math.e
    zeta: float = 1.0

    def validate(self) -> "ExperimentConfig":
        if self.T < 0 or self.repetitions < 1 or self.threads < 1:
            raise ConfigError("T must be >= 0, repetitions and threads >= 1")
        if self.stream not in STREAMS:
            raise ConfigError(f"unknown stream {self.stream!r}; choose from {STREAMS}")
        if self.mode not in (FULL, BANDIT):
            raise ConfigError(f"feedback mode must be full or bandit, got {self.mode!r}")
        if self.mode == BANDIT and self.estimator not in (es.INVERSE_WEIGHTED, es.PSEUDO_INVERSE):
            raise ConfigError(f"bandit mode needs a bandit estimator, got {self.estimator!r}")
        if self.q_policy not in (THEORY, FIXED):
            raise ConfigError(f"q_policy must be theory or fixed, got {self.q_policy!r}")
        if not 0.0 <= self.q <= 1.0:
            raise ConfigError(f"q must lie in [0, 1], got {self.q}")
        if (self.mode == BANDIT and self.estimator == es.PSEUDO_INVERSE and self.q_policy == FIXED
                and self.q <= 0.0):
            raise ConfigError("the pseudo-inverse estimator needs a positive exploration rate q")
        if self.learner not in ln.LEARNERS:
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.delay not in (dl.NONE, dl.FIXED, dl.VARIABLE):
            raise ConfigError(f"unknown delay kind {self.delay!r}")
        if self.learner in (ln.KIND_ODAFTRL, ln.KIND_BOLD) and self.delay == dl.VARIABLE:
            raise ConfigError(f"{self.learner} requires a fixed delay")
        if self.learner == ln.KIND_OGD and self.delay != dl.NONE and self.effective_D() > 0:
            raise ConfigError("plain OGD cannot absorb delayed feedback; use bold, odaftrl or solid")
        if not self.B > 0:
            raise ConfigError("B must be positive")
        for key in ("comparators",):
            for c in filter(None, getattr(self, key).split(",")):
                if c.strip() not in ("zero", "random", "fit", "planted"):
                    raise ConfigError(f"unknown comparator {c!r}")
        return self

    def effective_D(self) -> int:
        return self.D if self.delay == dl.FIXED else 0

    def delay_profile(self, seed: int) -> dl.DelayProfile:
        if self.delay == dl.NONE:
            return dl.DelayProfile.none()
        if self.delay == dl.FIXED:
            return dl.DelayProfile.fixed(self.D)
        if self.trace:
            return dl.DelayProfile.from_file(self.trace)
        return dl.DelayProfile.uniform(self.tau_max, seed)

    def to_sections(self) -> dict[str, dict[str, str]]:
        out: dict[str, dict[str, str]] = {}
        for sec, keys in SECTIONS.items():
            out[sec] = {}
            for k in keys:
                key = "kind" if KIND_ALIASES.get(sec) == k else k
                out[sec][key] = _fmt(getattr(self, k))
        return out

    def write(self, path: str | Path) -> None:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_dict(self.to_sections())
        with open(path, "w") as fh:
            cp.write(fh)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    typ = _TYPES[name]
    raw = raw.strip()
    try:
        if typ in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def _field_for(section: str, key: str) -> str:
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    if key == "kind" and section in KIND_ALIASES:
        return KIND_ALIASES[section]
    if key not in SECTIONS[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    return key


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    return cp


def from_sections(sections: dict[str, dict[str, str]],
                  base: ExperimentConfig | None = None) -> ExperimentConfig:
    updates = {}
    for sec, items in sections.items():
        if sec in ("sweep", "DEFAULT"):
            continue
        for key, raw in items.items():
            name = _field_for(sec, key)
            updates[name] = _coerce(name, raw)
    return replace(base or ExperimentConfig(), **updates).validate()


def load_config(path: str | Path) -> ExperimentConfig:
    cp = _parser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config {path}")
    return from_sections({s: dict(cp[s]) for s in cp.sections()})


def load_sweep(path: str | Path) -> list[ExperimentConfig]:
    """Expand a sweep file into one config per grid point (row-major order)."""
    cp = _parser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config {path}")
    sections = {s: dict(cp[s]) for s in cp.sections()}
    base = from_sections(sections)
    grid = sections.get("sweep", {})
    if not grid:
        return []
    axes = []
    for dotted, values in grid.items():
        if "." not in dotted:
            raise ConfigError(f"sweep key {dotted!r} must be section.key")
        sec, key = dotted.split(".", 1)
        name = _field_for(sec, key)
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"sweep axis {dotted!r} has no values")
        axes.append([(name, _coerce(name, v)) for v in vals])
    out = []
    for combo in itertools.product(*axes):
        upd = dict(combo)
        label = "_".join(f"{k}{_fmt(v)}" for k, v in combo)
        out.append(replace(base, name=f"{base.name}_{label}", **upd).validate())
    return out


def sweep_axes(path: str | Path) -> list[str]:
    cp = _parser()
    cp.read(path)
    if not cp.has_section("sweep"):
        return []
    return [_field_for(*k.split(".", 1)) for k in cp["sweep"]]
