"""Engine tunables with file/flag override support.

Precedence: explicit flag values > config file > defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union


DEFAULT_TEXT_DICTIONARY = ("hello", "42", "lorem ipsum", "test@example.com", "")


@dataclass
class EngineConfig:
    # similarity thresholds
    string_similarity_threshold: float = 0.4
    xpath_similarity_threshold: float = 0.4
    layout_similarity_threshold: float = 0.8
    # phase budget split (fractions of the total action budget)
    phase_caps: tuple[float, float, float] = (0.5, 0.3, 0.2)
    # stop re-triggering an input after this many tries without coverage gain
    retrigger_cap: int = 3
    # planner
    default_meta_probability: float = 0.5
    max_plan_length: int = 8
    # text payloads tried for TextFill inputs
    text_dictionary: tuple[str, ...] = DEFAULT_TEXT_DICTIONARY

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase_caps"] = list(self.phase_caps)
        d["text_dictionary"] = list(self.text_dictionary)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "phase_caps" in kwargs:
            kwargs["phase_caps"] = tuple(kwargs["phase_caps"])
        if "text_dictionary" in kwargs:
            kwargs["text_dictionary"] = tuple(kwargs["text_dictionary"])
        return cls(**kwargs)


def load_config(path: Optional[Union[str, Path]] = None, **overrides) -> EngineConfig:
    doc: dict = {}
    if path is not None:
        doc = json.loads(Path(path).read_text("utf-8"))
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return EngineConfig.from_dict(doc)
