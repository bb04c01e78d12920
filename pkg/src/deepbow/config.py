"""JSON configuration file with vocab/model/train/truncation/serve sections."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .inference import Truncation
from .training import TrainConfig


@dataclass
class VocabSection:
    v: int = 2000
    B: int = 1000
    ngram_order: int = 2
    segmenter: str = "whitespace"


@dataclass
class ModelSection:
    d: int = 64
    L: int = 2
    heads: int = 4
    ffn: int = 256
    max_len: int = 128
    use_char: bool = True
    use_word: bool = True
    expansion_bias: float = -6.0
    member_bias: float = 6.0


@dataclass
class ServeSection:
    port: int = 7431
    host: str = "127.0.0.1"
    threshold: float = 0.5
    mode: str = "q_synonym"


@dataclass
class Config:
    vocab: VocabSection = field(default_factory=VocabSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    truncation: Truncation = field(default_factory=Truncation)
    query_truncation: Truncation = field(default_factory=lambda: Truncation("none"))
    serve: ServeSection = field(default_factory=ServeSection)

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        def section(kind, data):
            known = {f.name for f in fields(kind)}
            unknown = set(data) - known
            if unknown:
                raise ValueError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
            return kind(**data)

        unknown = set(raw) - {"vocab", "model", "train", "truncation", "query_truncation", "serve"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            vocab=section(VocabSection, raw.get("vocab", {})),
            model=section(ModelSection, raw.get("model", {})),
            train=section(TrainConfig, raw.get("train", {})),
            truncation=Truncation.from_dict(raw.get("truncation", {})),
            query_truncation=Truncation.from_dict(raw.get("query_truncation", {"mode": "none"})),
            serve=section(ServeSection, raw.get("serve", {})),
        )

    @classmethod
    def load(cls, path) -> "Config":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "vocab": asdict(self.vocab),
            "model": asdict(self.model),
            "train": asdict(self.train),
            "truncation": self.truncation.to_dict(),
            "query_truncation": self.query_truncation.to_dict(),
            "serve": asdict(self.serve),
        }
