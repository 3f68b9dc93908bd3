"""The quantized offset grid: 21 classes on [-2, +2] s at 0.2 s steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridError

UNSYNCHRONIZABLE = -1  # sentinel label for clips no offset can align


@dataclass(frozen=True)
class OffsetGrid:
    num_classes: int = 21
    min_sec: float = -2.0
    step_sec: float = 0.2

    def __post_init__(self):
        if self.num_classes < 1 or self.step_sec <= 0:
            raise GridError(f"invalid grid: {self.num_classes} classes, step {self.step_sec}")

    @property
    def max_sec(self) -> float:
        return self.offset_sec(self.num_classes - 1)

    @property
    def center_class(self) -> int:
        return self.class_of(0.0)

    def offsets(self) -> np.ndarray:
        # round to a nanosecond grid so -2.0 + 10*0.2 is exactly 0.0
        return np.round(self.min_sec + np.arange(self.num_classes) * self.step_sec, 9)

    def offset_sec(self, cls: int) -> float:
        if not (0 <= int(cls) < self.num_classes):
            raise GridError(f"offset class {cls} outside [0, {self.num_classes})")
        return float(np.round(self.min_sec + int(cls) * self.step_sec, 9))

    def class_of(self, offset_sec: float) -> int:
        raw = (offset_sec - self.min_sec) / self.step_sec
        cls = int(round(raw))
        if abs(raw - cls) > 1e-6:
            raise GridError(f"offset {offset_sec}s is not on the {self.step_sec}s grid")
        if not (0 <= cls < self.num_classes):
            raise GridError(f"offset {offset_sec}s outside grid [{self.min_sec}, {self.max_sec}]")
        return cls

    def to_dict(self) -> dict:
        return {"num_classes": self.num_classes, "min_sec": self.min_sec, "step_sec": self.step_sec}

    @classmethod
    def from_dict(cls, d: dict) -> "OffsetGrid":
        return cls(num_classes=int(d["num_classes"]), min_sec=float(d["min_sec"]),
                   step_sec=float(d["step_sec"]))
