"""Experiment configuration files (TOML, or JSON with a ``.json`` suffix).

Every section is optional; missing keys take the defaults below, which
reproduce the single-reservoir MNIST setup. Unknown keys are rejected, and
errors point at the offending line where one can be located.

Layout::

    seed = 0
    output_dir = "runs/example"

    [dataset]          name, path, train_limit, test_limit
    [model]            mode, layers, patch, ff_dim, embed_scale, washout, activation
    [model.reservoir]  any ReservoirSpec field; seed defaults to the top-level seed
    [train]            any TrainConfig field; seed defaults to the top-level seed
    [diagnostics]      run, sweep_n, rhos, input_scalings, lyapunov_steps, ...
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, SpecError
from .reservoir import DeepConfig
from .topology import ReservoirSpec
from .training import ModelConfig, TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DATASETS = {
    "mnist": ((28, 28, 1), 10),
    "cifar10": ((32, 32, 3), 10),
    "cifar100-stub": ((32, 32, 3), 100),
}
DIAGNOSTICS = ("small_world", "lyapunov_sweep", "mc_sweep", "robustness")


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "mnist"
    path: str = ""
    train_limit: int = 0
    test_limit: int = 0

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ConfigError(f"unknown dataset {self.name!r}; choose from {sorted(DATASETS)}")
        if self.train_limit < 0 or self.test_limit < 0:
            raise ConfigError("train_limit and test_limit must be >= 0 (0 means all)")

    def directory(self) -> Path:
        if self.path:
            return Path(self.path)
        return Path(os.environ.get("VIR_DATA_DIR", "data")) / self.name.replace("-stub", "")


@dataclass(frozen=True)
class DiagnosticsConfig:
    run: tuple[str, ...] = ()
    sweep_n: int = 100
    rhos: tuple[float, ...] = (0.5, 0.9, 1.0, 1.25, 1.5, 2.0)
    input_scalings: tuple[float, ...] = (1.0,)
    lyapunov_steps: int = 5000
    mc_train: int = 2000
    mc_test: int = 1000
    robustness_limit: int = 2000

    def __post_init__(self):
        bad = [d for d in self.run if d not in DIAGNOSTICS]
        if bad:
            raise ConfigError(f"unknown diagnostics {bad}; choose from {list(DIAGNOSTICS)}")
        if self.sweep_n < 2 or not self.rhos or not self.input_scalings:
            raise ConfigError("sweeps need sweep_n >= 2 and non-empty rhos / input_scalings")
        if any(r <= 0 for r in self.rhos) or any(s <= 0 for s in self.input_scalings):
            raise ConfigError("sweep values must be positive")
        if self.lyapunov_steps < 1000:
            raise ConfigError("lyapunov_steps must be >= 1000")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output_dir: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        """Plain-data echo; :func:`from_dict` of it rebuilds an equal config."""
        m = self.model
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "dataset": asdict(self.dataset),
            "model": {
                "mode": m.deep.mode,
                "layers": m.deep.layers,
                "patch": m.patch,
                "ff_dim": m.ff_dim,
                "embed_scale": m.embed_scale,
                "washout": m.washout,
                "activation": m.activation,
                "reservoir": m.deep.specs[0].to_dict(),
            },
            "train": self.train.to_dict(),
            "diagnostics": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.diagnostics).items()},
        }

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
        """Apply command-line overrides; a new seed re-seeds reservoirs and training."""
        cfg = self
        if seed is not None:
            d = cfg.to_dict()
            d["seed"] = seed
            d["model"]["reservoir"]["seed"] = seed
            d["train"]["seed"] = seed
            cfg = from_dict(d)
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        return cfg


# -- parsing -------------------------------------------------------------------

_TOP = {"seed", "output_dir", "dataset", "model", "train", "diagnostics"}
_MODEL = {"mode", "layers", "patch", "ff_dim", "embed_scale", "washout", "activation", "reservoir"}


def _line_of(text: str, key: str, section: str | None = None) -> int | None:
    if not text:
        return None
    start, end = 0, len(text)
    if section:
        head = re.search(rf"^\s*\[\s*{re.escape(section)}\s*\]", text, re.M)
        if head:
            start = head.end()
            nxt = re.compile(r"^\s*\[", re.M).search(text, start)
            end = nxt.start() if nxt else end
    pat = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[=:]', re.M)
    m = pat.search(text, start, end) or pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _check_keys(section: dict, allowed, where: str, text: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"[{where}] must be a table")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{where}]", _line_of(text, key, where))


def _typed(cls, d: dict, where: str, text: str):
    """Build a dataclass from a dict, checking keys and wrapping errors with a line number."""
    allowed = {f.name: f for f in fields(cls)}
    _check_keys(d, allowed, where, text)
    kw = {}
    for key, value in d.items():
        if isinstance(value, list):
            value = tuple(value)
        kw[key] = value
    try:
        return cls(**kw)
    except (SpecError, ConfigError, TypeError, ValueError) as exc:
        # blame the key the message mentions first, matched as a whole word
        msg, line, first = str(exc), None, None
        for key in d:
            hit = re.search(rf"\b{re.escape(key)}\b", msg)
            if hit and (first is None or hit.start() < first):
                first, line = hit.start(), _line_of(text, key, where)
        raise ConfigError(f"[{where}] {exc}", line) from None


def from_dict(d: dict, text: str = "") -> ExperimentConfig:
    _check_keys(d, _TOP, "top level", text)
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer", _line_of(text, "seed"))
    dataset = _typed(DatasetConfig, d.get("dataset", {}), "dataset", text)
    image_shape, classes = DATASETS[dataset.name]

    model = dict(d.get("model", {}))
    _check_keys(model, _MODEL, "model", text)
    res = dict(model.pop("reservoir", {}))
    res.setdefault("seed", seed)
    spec = _typed(ReservoirSpec, res, "model.reservoir", text)
    mode = model.pop("mode", "parallel")
    layers = model.pop("layers", 1)
    if not isinstance(layers, int) or layers < 1:
        raise ConfigError("model.layers must be a positive integer", _line_of(text, "layers"))
    try:
        deep = DeepConfig.uniform(mode, layers, spec)
    except ConfigError as exc:
        raise ConfigError(str(exc), _line_of(text, "mode")) from None
    model_cfg = _typed(
        ModelConfig,
        {**model, "deep": deep, "image_shape": image_shape, "classes": classes},
        "model",
        text,
    )

    tr = dict(d.get("train", {}))
    tr.setdefault("seed", seed)
    train = _typed(TrainConfig, tr, "train", text)
    diagnostics = _typed(DiagnosticsConfig, d.get("diagnostics", {}), "diagnostics", text)
    return ExperimentConfig(
        dataset=dataset,
        model=model_cfg,
        train=train,
        diagnostics=diagnostics,
        output_dir=str(d.get("output_dir", "runs/default")),
        seed=seed,
    )


def loads(text: str, fmt: str = "toml") -> ExperimentConfig:
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(f"invalid TOML: {exc}", int(m.group(1)) if m else None) from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table / object at the top level")
    return from_dict(data, text)


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    return loads(text, "json" if p.suffix.lower() == ".json" else "toml")


def bundled(name: str) -> Path:
    """Path of a configuration shipped inside the package, e.g. ``mnist-vir1-ridge.toml``."""
    from importlib import resources

    return Path(str(resources.files("vir").joinpath("configs", name)))
