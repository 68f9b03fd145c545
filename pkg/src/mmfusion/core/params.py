"""Named parameter storage with freeze flags and JSON checkpoints."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import DTYPE, Tensor

CHECKPOINT_FORMAT = "mmfusion-params-v1"


class ParameterStore:
    """Ordered map ``name -> Tensor`` with a per-entry frozen flag.

    Each value is a leaf :class:`Tensor` whose ``grad`` buffer is the
    entry's gradient accumulator. Freezing an entry turns off
    ``requires_grad`` so no gradient ever reaches it.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._frozen: dict[str, bool] = {}

    def add(self, name: str, value, frozen: bool = False) -> Tensor:
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self._entries[name] = t
        self._frozen[name] = False
        if frozen:
            self._set_frozen(name, True)
        return t

    def set(self, name: str, value) -> Tensor:
        """Insert or overwrite ``name``, keeping an existing frozen flag."""
        frozen = self._frozen.get(name, False)
        self._entries.pop(name, None)
        self._frozen.pop(name, None)
        return self.add(name, value, frozen=frozen)

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._entries if n.startswith(prefix)]

    def items(self):
        return self._entries.items()

    def grad(self, name: str) -> np.ndarray:
        return self._entries[name].grad

    def is_frozen(self, name: str) -> bool:
        return self._frozen[name]

    def _set_frozen(self, name, frozen):
        self._frozen[name] = frozen
        self._entries[name].requires_grad = not frozen

    def freeze(self, prefix: str) -> None:
        """Freeze every entry whose name starts with ``prefix``."""
        for name in self.names(prefix):
            self._set_frozen(name, True)

    def unfreeze(self, prefix: str) -> None:
        for name in self.names(prefix):
            self._set_frozen(name, False)

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad[...] = 0.0

    def squared_norm(self, prefix: str) -> float:
        return float(sum(np.sum(self[n].data ** 2) for n in self.names(prefix)))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._entries.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, arr in snap.items():
            self._entries[n].data[...] = arr

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for n, t in self._entries.items():
            other.add(n, t.data.copy(), frozen=self._frozen[n])
        return other

    def update(self, other: "ParameterStore", prefix: str = "") -> None:
        """Copy values (and frozen flags) of ``other``'s entries under ``prefix``."""
        for n in other.names(prefix):
            self.set(n, other[n].data.copy())
            self._set_frozen(n, other.is_frozen(n))

    # checkpoints

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "params": {
                n: {
                    "shape": list(t.shape),
                    "frozen": self._frozen[n],
                    "data": t.data.reshape(-1).tolist(),
                }
                for n, t in self._entries.items()
            },
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "ParameterStore":
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a parameter checkpoint (format={blob.get('format')!r})")
        store = cls()
        for n, e in blob["params"].items():
            arr = np.array(e["data"], dtype=DTYPE).reshape(e["shape"])
            store.add(n, arr, frozen=bool(e.get("frozen", False)))
        return store

    def save(self, path) -> None:
        # float repr in json is shortest round-trip, so finite values reload bit-exactly
        Path(path).write_text(json.dumps(self.to_dict(), allow_nan=False))

    @classmethod
    def load(cls, path) -> "ParameterStore":
        return cls.from_dict(json.loads(Path(path).read_text()))
