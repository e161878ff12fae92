"""Named parameter collections with gradient buffers and JSON persistence.

Saved layout (``format_version`` 1)::

    {"format": "shiva-params", "format_version": 1, "kind": "<class name>",
     "meta": {...scalar fields...},
     "arrays": {"<name>": {"shape": [...], "data": [...row-major floats...]}}}

Floats are written with ``repr`` precision, so a save/load round trip is exact.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

FORMAT = "shiva-params"
FORMAT_VERSION = 1


class ParamSet:
    """Mixin for dataclasses whose ``np.ndarray`` fields are trainable tensors."""

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if isinstance(getattr(self, f.name), np.ndarray)}

    def meta(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if not isinstance(getattr(self, f.name), np.ndarray)}

    def zeros_like(self):
        return dataclasses.replace(self, **{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def copy(self):
        return dataclasses.replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def num_params(self) -> int:
        return int(sum(v.size for v in self.arrays().values()))

    def add_(self, other) -> None:
        for name, arr in self.arrays().items():
            arr += getattr(other, name)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "kind": type(self).__name__,
            "meta": self.meta(),
            "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.arrays().items()},
        }

    @classmethod
    def from_dict(cls, blob: dict):
        if blob.get("format") != FORMAT or blob.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter blob header: {blob.get('format')!r} "
                             f"v{blob.get('format_version')!r}")
        if blob.get("kind") != cls.__name__:
            raise ValueError(f"blob holds {blob.get('kind')}, not {cls.__name__}")
        arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in blob["arrays"].items()}
        return cls(**blob["meta"], **arrays)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))
