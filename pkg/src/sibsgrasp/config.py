"""YAML run configuration.

A config document has optional sections, each mapping option names onto the
fields of one dataclass::

    optimizer: {trials: 5, max_iters: 300}
    weights:   {lambda3: 1000.0}
    ibs:       {voxel_size: 0.005, resolution: 40}
    pipeline:  {standoff: 0.12, init_joints: mid}

Unknown sections and options are errors so typos do not pass silently.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import yaml

from .errors import ParseError
from .ibs import IbsConfig
from .optimizer import EnergyWeights, OptimizerConfig

INIT_JOINT_MODES = ("mid", "open")


@dataclass(frozen=True)
class PipelineOptions:
    standoff: float = 0.12  # wrist distance behind the seed for frame-based inits
    init_joints: str = "mid"
    poses_per_scene: int = 5  # dataset-gen pose count when no poses file is given
    orientation: str = "propagate"

    def __post_init__(self):
        if self.init_joints not in INIT_JOINT_MODES:
            raise ValueError(f"init_joints must be one of {INIT_JOINT_MODES}")
        if self.poses_per_scene < 1:
            raise ValueError("poses_per_scene must be >= 1")
        if self.orientation not in ("propagate", "hint"):
            raise ValueError("orientation must be 'propagate' or 'hint'")


@dataclass(frozen=True)
class RunConfig:
    optimizer: OptimizerConfig = OptimizerConfig()
    weights: EnergyWeights = EnergyWeights()
    ibs: IbsConfig = IbsConfig()
    pipeline: PipelineOptions = PipelineOptions()

    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in SECTIONS}


SECTIONS = {"optimizer": OptimizerConfig, "weights": EnergyWeights, "ibs": IbsConfig,
            "pipeline": PipelineOptions}


def _line_of(node, key):
    for k, _ in getattr(node, "value", []):
        if getattr(k, "value", None) == key:
            return k.start_mark.line + 1
    return None


def config_from_dict(doc, node=None) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ParseError("config must be a mapping")
    built = {}
    for key, value in doc.items():
        if key not in SECTIONS:
            raise ParseError(f"unknown section {key!r}", _line_of(node, key), key)
        cls = SECTIONS[key]
        value = value or {}
        if not isinstance(value, dict):
            raise ParseError(f"section {key!r} must be a mapping", _line_of(node, key), key)
        names = {f.name for f in fields(cls)}
        for opt in value:
            if opt not in names:
                raise ParseError(f"unknown option {opt!r}", _line_of(node, key), f"{key}.{opt}")
        try:
            built[key] = cls(**value)
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), _line_of(node, key), key) from None
    return RunConfig(**built)


def load_config(text: str) -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(str(exc).splitlines()[0], mark.line + 1 if mark else None) from None
    return config_from_dict(doc, node)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
