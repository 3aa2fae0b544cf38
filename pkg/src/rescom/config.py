"""Run configuration: INI-style ``[section]`` files of ``key = value`` lines.

Every key can be overridden on the command line with ``--set section.key=value``
(or ``--set key=value`` when the key name is unique across sections).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .trainer import TrainConfig


def _tuple_of_int(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(int(t) for t in text.replace(";", ",").split(",") if t.strip())


def _optional_int(text):
    text = text.strip().lower()
    return None if text in ("", "none", "all") else int(text)


def _optional_float(text):
    text = text.strip().lower()
    return None if text in ("", "none", "auto") else float(text)


# (section, key) -> (attribute, parser); attributes prefixed "data." go to DataSpec
SCHEMA = {
    ("train", "variant"): ("variant", str),
    ("train", "lambda"): ("lam", float),
    ("train", "epochs"): ("epochs", int),
    ("train", "batch_size"): ("batch_size", int),
    ("train", "lr"): ("lr", float),
    ("train", "schedule"): ("schedule", str),
    ("train", "milestones"): ("milestones", _tuple_of_int),
    ("train", "decay"): ("decay", float),
    ("train", "momentum"): ("momentum", float),
    ("train", "seed"): ("seed", int),
    ("train", "eval_every"): ("eval_every", int),
    ("train", "max_warmup_passes"): ("max_warmup_passes", int),
    ("contrastive", "temperature"): ("temperature", float),
    ("contrastive", "beta"): ("beta", float),
    ("contrastive", "qp"): ("qp", _optional_int),
    ("contrastive", "qn"): ("qn", _optional_int),
    ("queue", "size"): ("queue_size", int),
    ("model", "hidden"): ("hidden", _tuple_of_int),
    ("model", "proj_hidden"): ("proj_hidden", int),
    ("model", "proj_dim"): ("proj_dim", int),
    ("augment", "noise_sigma"): ("noise_sigma", float),
    ("augment", "dropout_p"): ("dropout_p", float),
    ("eval", "group_hi"): ("data.group_hi", _optional_float),
    ("eval", "group_lo"): ("data.group_lo", _optional_float),
    ("data", "source"): ("data.source", str),
    ("data", "path"): ("data.path", str),
    ("data", "test_path"): ("data.test_path", str),
    ("data", "n_classes"): ("data.n_classes", int),
    ("data", "dim"): ("data.dim", int),
    ("data", "imbalance_factor"): ("data.imbalance_factor", float),
    ("data", "n_max"): ("data.n_max", int),
    ("data", "counts"): ("data.counts", _tuple_of_int),
    ("data", "separation"): ("data.separation", float),
    ("data", "test_per_class"): ("data.test_per_class", int),
}


class ConfigError(ValueError):
    pass


@dataclass
class DataSpec:
    source: str = "synthetic"
    path: str = ""
    test_path: str = ""
    n_classes: int = 10
    dim: int = 32
    imbalance_factor: float = 100.0
    n_max: int = 500
    counts: tuple = ()  # explicit per-class counts; overrides n_classes / IF / n_max
    separation: float = 3.0
    test_per_class: int = 100
    group_hi: float | None = None
    group_lo: float | None = None


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSpec = field(default_factory=DataSpec)

    def to_ini(self):
        """Resolved configuration in the same format it is read from."""
        sections = {}
        for (sec, key), (attr, _) in SCHEMA.items():
            obj, name = (self.data, attr[5:]) if attr.startswith("data.") else (self.train, attr)
            val = getattr(obj, name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif val is None:
                val = "none"
            sections.setdefault(sec, []).append(f"{key} = {val}")
        out = io.StringIO()
        for sec, lines in sections.items():
            out.write(f"[{sec}]\n" + "\n".join(lines) + "\n\n")
        return out.getvalue()


def _resolve_key(dotted):
    if "." in dotted:
        sec, key = dotted.split(".", 1)
        if (sec, key) not in SCHEMA:
            raise ConfigError(f"unknown config key {dotted!r}")
        return sec, key
    hits = [sk for sk in SCHEMA if sk[1] == dotted]
    if dotted == "lam":
        hits = [("train", "lambda")]
    if len(hits) != 1:
        raise ConfigError(f"unknown or ambiguous config key {dotted!r}")
    return hits[0]


def load_config(path=None, overrides=()):
    """Read ``path`` (optional) and apply ``key=value`` overrides; overrides win."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for sec in parser.sections():
            for key, val in parser.items(sec):
                if (sec, key) not in SCHEMA:
                    raise ConfigError(f"{path}: unknown key [{sec}] {key}")
                values[(sec, key)] = val
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        values[_resolve_key(k.strip())] = v.strip()

    train_kw, data_kw = {}, {}
    for sk, raw in values.items():
        attr, parse = SCHEMA[sk]
        try:
            val = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {sk[0]}.{sk[1]}: {raw!r}") from exc
        if attr.startswith("data."):
            data_kw[attr[5:]] = val
        else:
            train_kw[attr] = val
    try:
        train = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    data = DataSpec(**data_kw)
    if data.source not in ("synthetic", "csv"):
        raise ConfigError("data.source must be 'synthetic' or 'csv'")
    return RunConfig(train, data)

