"""Experiment configuration: defaults that run end-to-end offline.

Config files are YAML (JSON works too); any subset of keys may be given and
is merged over the defaults.  Every field has a default, so an empty config
runs the full pipeline on the bundled synthetic corpus.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import yaml

from .backbone import BackboneConfig
from .pipeline import PromptSet
from .trainer import TrainerConfig


@dataclass
class SynthSettings:
    n_users: int = 40
    n_items: int = 40
    n_records: int = 1000


@dataclass
class JudgeSettings:
    kind: str = "lexicon"  # lexicon | remote_classifier | llm_judge
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "XREC_JUDGE_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    sample_size: int = 500
    lexicon_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("lexicon", "remote_classifier", "llm_judge"):
            raise ValueError(f"unknown judge kind {self.kind!r}")


@dataclass
class ExperimentConfig:
    workdir: str = "runs/default"
    data_path: str = "runs/default/synthetic.jsonl"
    seed: int = 0
    vocab_size: int = 400
    n_splits: int = 5
    max_explanation_len: int = 20
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    prompts: PromptSet = field(default_factory=PromptSet)
    synth: SynthSettings = field(default_factory=SynthSettings)
    judge: JudgeSettings = field(default_factory=JudgeSettings)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "backbone": BackboneConfig,
    "trainer": TrainerConfig,
    "prompts": PromptSet,
    "synth": SynthSettings,
    "judge": JudgeSettings,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    kwargs = {}
    for section, cls in _SECTIONS.items():
        if section in data:
            sec = data.pop(section)
            if not isinstance(sec, dict):
                raise ValueError(f"config section {section!r} must be a mapping")
            if "adapted_projections" in sec:
                sec["adapted_projections"] = tuple(sec["adapted_projections"])
            kwargs[section] = cls(**sec)
    top_fields = {f for f in ExperimentConfig.__dataclass_fields__ if f not in _SECTIONS}
    unknown = set(data) - top_fields
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(data)
    return ExperimentConfig(**kwargs)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f)
    return config_from_dict(data or {})
