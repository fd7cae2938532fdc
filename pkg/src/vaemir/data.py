"""Bag data model and the JSON Lines dataset format.

One bag per line::

    {"bag_id": "b0", "year": 2008, "yield": 151.2,
     "instances": [[...D floats...], ...], "anomaly_flags": [false, ...]}

``yield`` may be null for unlabeled bags; ``anomaly_flags`` is optional.
Floats are written with Python's shortest round-trip repr, so a write/read
cycle reproduces every double exactly.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError


@dataclass
class Bag:
    bag_id: str
    year: int
    instances: np.ndarray  # (N, D)
    label: float | None = None
    anomaly_flags: np.ndarray | None = None

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float64)
        if self.instances.ndim != 2 or self.instances.shape[0] < 1 or self.instances.shape[1] < 1:
            raise DataError(f"bag {self.bag_id}: instances must be a non-empty (N, D) matrix")
        if not np.all(np.isfinite(self.instances)):
            raise DataError(f"bag {self.bag_id}: non-finite instance values")
        if self.anomaly_flags is not None:
            self.anomaly_flags = np.asarray(self.anomaly_flags, dtype=bool)
            if self.anomaly_flags.shape != (self.instances.shape[0],):
                raise DataError(
                    f"bag {self.bag_id}: {self.anomaly_flags.size} flags for "
                    f"{self.instances.shape[0]} instances"
                )
        if self.label is not None:
            self.label = float(self.label)

    @property
    def n(self) -> int:
        return self.instances.shape[0]

    @property
    def dim(self) -> int:
        return self.instances.shape[1]

    def to_record(self) -> dict:
        rec = {
            "bag_id": self.bag_id,
            "year": int(self.year),
            "yield": self.label,
            "instances": self.instances.tolist(),
        }
        if self.anomaly_flags is not None:
            rec["anomaly_flags"] = [bool(f) for f in self.anomaly_flags]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Bag":
        try:
            bag_id = rec["bag_id"]
            year = rec["year"]
            instances = rec["instances"]
        except (KeyError, TypeError) as e:
            raise DataError(f"missing field {e}") from None
        if not isinstance(bag_id, str):
            raise DataError("bag_id must be a string")
        if isinstance(year, bool) or not isinstance(year, int):
            raise DataError("year must be an integer")
        label = rec.get("yield")
        if label is not None and (isinstance(label, bool) or not isinstance(label, (int, float))):
            raise DataError("yield must be a number or null")
        if not isinstance(instances, list) or not instances:
            raise DataError("instances must be a non-empty list")
        widths = {len(row) if isinstance(row, list) else -1 for row in instances}
        if len(widths) != 1 or -1 in widths:
            raise DataError("instances must all be lists of the same length")
        return cls(bag_id, year, np.array(instances, dtype=np.float64), label, rec.get("anomaly_flags"))


def check_consistent(bags: Sequence[Bag]) -> int:
    """Return the shared feature dimension, or raise if bags disagree."""
    if not bags:
        raise DataError("dataset is empty")
    dims = {b.dim for b in bags}
    if len(dims) != 1:
        raise DataError(f"bags disagree on feature dimension: {sorted(dims)}")
    ids = [b.bag_id for b in bags]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate bag_id values in dataset")
    return dims.pop()


def iter_jsonl(path: str | os.PathLike) -> Iterator[Bag]:
    """Stream bags from a JSONL file; errors name the offending line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield Bag.from_record(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            except DataError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None


def read_jsonl(path: str | os.PathLike) -> list[Bag]:
    bags = list(iter_jsonl(path))
    check_consistent(bags)
    return bags


def dumps_bag(bag: Bag) -> str:
    return json.dumps(bag.to_record(), allow_nan=False)


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | os.PathLike, bags: Iterable[Bag]) -> int:
    lines = [dumps_bag(b) for b in bags]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def labeled(bags: Sequence[Bag], what: str = "training") -> None:
    for b in bags:
        if b.label is None:
            raise DataError(f"{what} bag {b.bag_id} has no yield label")


def years_of(bags: Sequence[Bag]) -> list[int]:
    return sorted({b.year for b in bags})
