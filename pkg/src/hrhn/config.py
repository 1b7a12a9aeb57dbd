"""Run configuration: an INI file with [dataset], [model], [train] and [run] sections.

Every key is typed by the dataclass field it lands in; unknown sections or
keys are errors. Named presets cover the NASDAQ experiment, the tiny
gradient-check geometry and two synthetic desk-scale setups.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .conv import ConvGeometry, flat_size
from .data import NASDAQ_SPLITS, SeriesDataset, gen_synthetic, load_csv
from .model import ModelConfig, TrainConfig, VariantConfig, parse_attention_mode

OUT_ENV = "HRHN_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSection:
    path: str | None = None
    synthetic: str | None = None  # linear_exo | regime_switch
    length: int = 500
    data_seed: int = 0
    noise: float | None = None
    n_switches: int | None = None
    n: int = 4
    d: int = 1
    T: int = 8
    train: int | None = None
    validation: int | None = None
    test: int | None = None
    train_fraction: float = 0.7
    validation_fraction: float = 0.15
    normalize: bool = True


@dataclass
class ModelSection:
    m: int = 16
    l: int = 32
    p: int = 32
    K: int = 2
    conv_maps: tuple[int, ...] = (8,)
    kernel_width: int = 2
    pool_widths: tuple[int, ...] = (1,)
    use_conv_frontend: bool = True
    attention: str = "hierarchical"


@dataclass
class TrainSection:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    gradient_clip: float | None = None
    patience: int | None = None
    max_steps: int | None = None
    shuffle: bool = True


@dataclass
class RunSection:
    seed: int = 0
    out: str | None = None
    precision: str = "float32"


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    run: RunSection = field(default_factory=RunSection)

    # ------------------------------------------------------------ derived objects

    def model_config(self) -> ModelConfig:
        d, m = self.dataset, self.model
        return ModelConfig(
            n=d.n, d=d.d, T=d.T, m=m.m, l=m.l, p=m.p, K=m.K,
            conv=ConvGeometry(tuple(m.conv_maps), m.kernel_width, tuple(m.pool_widths)),
        )

    def variant(self) -> VariantConfig:
        mode, layer = parse_attention_mode(self.model.attention)
        return VariantConfig(self.model.use_conv_frontend, mode, layer)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            epochs=t.epochs, batch_size=t.batch_size, learning_rate=t.learning_rate, seed=self.run.seed,
            gradient_clip=t.gradient_clip, patience=t.patience, max_steps=t.max_steps, shuffle=t.shuffle,
        )

    def out_dir(self) -> Path:
        return Path(self.run.out or os.environ.get(OUT_ENV, "runs"))

    def load_dataset(self) -> SeriesDataset:
        ds = self.dataset
        if ds.path:
            data = load_csv(ds.path, ds.n, ds.d)
        else:
            opts = {"n": ds.n, "d": ds.d}
            if ds.noise is not None:
                opts["noise"] = ds.noise
            if ds.n_switches is not None:
                if ds.synthetic != "regime_switch":
                    raise ConfigError("dataset.n_switches only applies to regime_switch data")
                opts["n_switches"] = ds.n_switches
            data = gen_synthetic(ds.synthetic, ds.length, ds.data_seed, **opts)
        if ds.train is not None:
            return data.with_splits(ds.train, ds.validation or 0, ds.test)
        return data.with_fractions(ds.train_fraction, ds.validation_fraction)

    # ------------------------------------------------------------ validation

    def validate(self) -> "RunConfig":
        ds = self.dataset
        if bool(ds.path) == bool(ds.synthetic):
            raise ConfigError("dataset needs exactly one of 'path' or 'synthetic'")
        if ds.synthetic and ds.synthetic not in ("linear_exo", "regime_switch"):
            raise ConfigError(f"dataset.synthetic must be linear_exo or regime_switch, got {ds.synthetic!r}")
        if ds.train is None and (ds.validation is not None or ds.test is not None):
            raise ConfigError("dataset.validation/test sizes need dataset.train as well")
        if not (0 < ds.train_fraction < 1 and 0 <= ds.validation_fraction < 1):
            raise ConfigError("split fractions must lie in (0, 1)")
        if self.run.precision not in ("float32", "float64"):
            raise ConfigError("run.precision must be float32 or float64")
        try:
            cfg = self.model_config()
            variant = self.variant()
            variant.depths(cfg.K)
            self.train_config()
            if variant.use_conv_frontend:
                flat_size(cfg.n, cfg.conv)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    # ------------------------------------------------------------ INI round trip

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for f in fields(self):
            section = getattr(self, f.name)
            parser[f.name] = {}
            for sf in fields(section):
                value = getattr(section, sf.name)
                if value is None:
                    continue
                if isinstance(value, tuple):
                    value = ", ".join(str(v) for v in value)
                parser[f.name][sf.name] = str(value)
        from io import StringIO

        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini())
        return path

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _convert(raw: str, annotation, where: str):
    hint = annotation
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if raw.strip().lower() in ("", "none", "null"):
            return None
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
        args = typing.get_args(hint)
    try:
        if hint is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw.strip()
        if origin is tuple:
            return tuple(int(v) for v in raw.replace("/", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {hint}") from None
    raise ConfigError(f"{where}: unsupported type {hint}")


_HINTS = {}


def _section_hints(cls):
    if cls not in _HINTS:
        _HINTS[cls] = typing.get_type_hints(cls)
    return _HINTS[cls]


def apply_overrides(config: RunConfig, values: dict[str, dict[str, str]]) -> RunConfig:
    """Set ``values[section][key] = raw string`` on ``config``; unknown names are errors."""
    sections = {f.name: f for f in fields(config)}
    for sec_name, items in values.items():
        if sec_name not in sections:
            raise ConfigError(f"unknown config section [{sec_name}]; expected one of {sorted(sections)}")
        section = getattr(config, sec_name)
        hints = _section_hints(type(section))
        for key, raw in items.items():
            if key not in hints:
                raise ConfigError(f"unknown key {key!r} in [{sec_name}]; allowed: {sorted(hints)}")
            setattr(section, key, _convert(raw, hints[key], f"[{sec_name}] {key}"))
    return config


def parse_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    values = {s: dict(parser[s]) for s in parser.sections()}
    return apply_overrides(base or RunConfig(), values)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_ini(path.read_text(), base)


# ---------------------------------------------------------------- presets


def _nasdaq() -> RunConfig:
    a, b, c = NASDAQ_SPLITS
    return RunConfig(
        DatasetSection(path="data/nasdaq100_padding.csv", n=81, d=1, T=11, train=a, validation=b, test=c),
        ModelSection(m=128, l=128, p=128, K=2, conv_maps=(16, 32, 64), kernel_width=3, pool_widths=(3, 3, 3)),
        TrainSection(epochs=50, batch_size=128, learning_rate=1e-3, patience=10),
    )


def _tiny() -> RunConfig:
    return RunConfig(
        DatasetSection(synthetic="linear_exo", length=200, n=4, d=1, T=5),
        ModelSection(m=6, l=8, p=8, K=2, conv_maps=(3, 4), kernel_width=2, pool_widths=(1, 2)),
        TrainSection(epochs=5, batch_size=16),
        RunSection(precision="float64"),
    )


def _quickstart() -> RunConfig:
    return RunConfig(
        DatasetSection(synthetic="linear_exo", length=500, n=4, d=1, T=8, noise=0.01),
        ModelSection(m=16, l=32, p=32, K=2, conv_maps=(8,), kernel_width=2, pool_widths=(1,)),
        TrainSection(epochs=20, batch_size=32),
    )


def _regime() -> RunConfig:
    return RunConfig(
        DatasetSection(synthetic="regime_switch", length=2000, n=8, d=1, T=10),
        ModelSection(m=16, l=16, p=16, K=2, conv_maps=(8,), kernel_width=3, pool_widths=(2,)),
        TrainSection(epochs=30, batch_size=64, patience=8),
    )


PRESETS = {"nasdaq": _nasdaq, "tiny": _tiny, "quickstart": _quickstart, "regime": _regime}


def preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
