"""Flat key = value configuration files.

Syntax, one entry per line:
    key = value        # trailing comments allowed
    include other.cfg  # path relative to the including file; later keys override earlier ones
Values are parsed as Python literals when possible (numbers, booleans, tuples), otherwise kept as strings.
Every key belongs to exactly one section dataclass; unknown keys are an error.
"""

from __future__ import annotations

import ast
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .decoder import DecoderConfig, Thresholds
from .diffusion import DenoiserConfig, DiffusionConfig, LDMTrainConfig
from .encoder import EncoderConfig
from .features import FeatureConfig
from .gae import GAEConfig, GAETrainConfig, LossWeights


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_videos: int = 200
    mix_none: float = 0.3
    mix_mid: float = 0.3
    mix_hard: float = 0.4
    scripted: bool = True
    min_length: int = 20
    max_length: int = 30
    feature_std: float = 0.3
    box_jitter: float = 0.01
    world_seed: int = 0
    test_fraction: float = 0.2

    def mix(self):
        return {"none": self.mix_none, "mid": self.mix_mid, "hard": self.mix_hard}


@dataclass
class EvalConfig:
    r: int = 1
    fraction: float = 0.5
    mode: str = "fraction"  # or "splits"
    K_obj: tuple = (5, 10, 20)
    K_triplet: tuple = (10, 20, 50)
    constraint: str = "per_kind"
    best_of: tuple = (1, 5, 10)
    selection: str = "per_metric"  # or "r10_nc"
    eval_split: str = "test"  # "test", "train" or "all"
    anticipate_batch: int = 256


@dataclass
class RunConfig:
    data_dir: str = "forescene_data"
    seed: int = 0
    run_name: str = ""


SECTIONS = {
    "run": RunConfig,
    "synth": SynthConfig,
    "features": FeatureConfig,
    "encoder": EncoderConfig,
    "decoder": DecoderConfig,
    "loss": LossWeights,
    "gae_train": GAETrainConfig,
    "diffusion": DiffusionConfig,
    "denoiser": DenoiserConfig,
    "ldm_train": LDMTrainConfig,
    "thresholds": Thresholds,
    "eval": EvalConfig,
}

KEY_SECTION = {}
for _name, _cls in SECTIONS.items():
    for _f in fields(_cls):
        if _f.name in KEY_SECTION:
            raise RuntimeError(f"config key {_f.name} defined twice")
        KEY_SECTION[_f.name] = _name


@dataclass
class Settings:
    run: RunConfig = field(default_factory=RunConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    gae_train: GAETrainConfig = field(default_factory=GAETrainConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    ldm_train: LDMTrainConfig = field(default_factory=LDMTrainConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def gae_config(self):
        return GAEConfig(self.features, self.encoder, self.decoder)

    def flat(self):
        out = {}
        for name in SECTIONS:
            out.update(asdict(getattr(self, name)))
        return out

    def section_dict(self, *names):
        return {n: asdict(getattr(self, n)) for n in names}

    def fingerprint(self, *names):
        names = names or tuple(SECTIONS)
        blob = json.dumps(self.section_dict(*names), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_entries(path, _stack=()):
    path = Path(path).resolve()
    if path in _stack:
        raise ConfigError(f"include cycle through {path}")
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    entries = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include ") or line.startswith("include\t"):
            target = line.split(None, 1)[1].strip().strip('"')
            entries.extend(read_entries(path.parent / target, _stack + (path,)))
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value' or 'include <file>'")
        key, value = (s.strip() for s in line.split("=", 1))
        entries.append((key, parse_value(value), f"{path}:{lineno}"))
    return entries


def _coerce(cls, key, value, where):
    f = next(f for f in fields(cls) if f.name == key)
    default = f.default if f.default is not f.default_factory else None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: {key} expects true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: {key} expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: {key} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, (int, float)):
            value = (value,)
        if not isinstance(value, (tuple, list)):
            raise ConfigError(f"{where}: {key} expects a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        return str(value)
    return value  # Optional fields (e.g. gcn_hidden)


def apply_overrides(settings, pairs):
    for key, value, where in pairs:
        if key not in KEY_SECTION:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        name = KEY_SECTION[key]
        section = getattr(settings, name)
        # replace() also covers frozen sections such as Thresholds
        setattr(settings, name, replace(section, **{key: _coerce(type(section), key, value, where)}))
    return settings


def load_config(path=None, overrides=()):
    settings = Settings()
    if path is not None:
        apply_overrides(settings, read_entries(path))
    apply_overrides(settings, [(k, v, "override") for k, v in overrides])
    check(settings)
    return settings


def check(s):
    try:
        s.features.check()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if s.diffusion.T < 1:
        raise ConfigError("T must be >= 1")
    if s.diffusion.S < 0 or s.diffusion.S == 1:
        raise ConfigError("S must be 0 (whole sequence) or >= 2")
    if s.decoder.N < 1 or s.decoder.L < 1 or s.decoder.heads < 1:
        raise ConfigError("decoder sizes must be >= 1")
    if s.denoiser.dit_width % s.denoiser.dit_heads:
        raise ConfigError("dit_width must be divisible by dit_heads")
    if s.eval.mode not in ("fraction", "splits"):
        raise ConfigError("mode must be 'fraction' or 'splits'")
    if s.eval.selection not in ("per_metric", "r10_nc"):
        raise ConfigError("selection must be 'per_metric' or 'r10_nc'")
    if s.encoder.encoder_pairs not in ("all", "annotated"):
        raise ConfigError("encoder_pairs must be 'all' or 'annotated'")
    for name in ("mix_none", "mix_mid", "mix_hard"):
        if getattr(s.synth, name) < 0:
            raise ConfigError(f"{name} must be >= 0")
    return s


def render(settings):
    """Serialize to the flat key = value format (round-trips through load_config)."""
    lines = []
    for name in SECTIONS:
        lines.append(f"# {name}")
        for k, v in asdict(getattr(settings, name)).items():
            if v is None:
                continue
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, str):
                v = v if v else '""'
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
