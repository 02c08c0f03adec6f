"""Bubble images and labelled collections of them."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

HEIGHT, WIDTH = 40, 50
N_PIXELS = HEIGHT * WIDTH

NON_MARK, MARK = 0, 1


class MarkType(str, Enum):
    BLANK = "blank"
    FILLED = "filled"
    PENREST = "penrest"
    CHECK = "check"
    CROSS = "cross"
    LINE_FILL = "line_fill"
    SCRIBBLE = "scribble"


MARK_TYPES = tuple(m.value for m in MarkType)

# Pen rests are incidental contact, not an intended mark.
DEFAULT_LABELS = {
    "blank": NON_MARK, "penrest": NON_MARK,
    "filled": MARK, "check": MARK, "cross": MARK, "line_fill": MARK, "scribble": MARK,
}


@dataclass
class BubbleImage:
    pixels: np.ndarray
    label: int
    mark_type: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (HEIGHT, WIDTH):
            raise ValueError(f"bubble must be {HEIGHT}x{WIDTH}, got {self.pixels.shape}")
        if not (np.all(self.pixels >= 0.0) and np.all(self.pixels <= 1.0)):
            raise ValueError("pixels must lie in [0, 1]")
        if self.label not in (NON_MARK, MARK):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(N_PIXELS)


@dataclass
class BubbleSet:
    """Parallel arrays of images, labels, mark types and split names."""

    images: np.ndarray
    labels: np.ndarray
    mark_types: np.ndarray
    splits: np.ndarray = field(default=None)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64).reshape(-1, HEIGHT, WIDTH)
        n = len(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        self.mark_types = np.asarray(self.mark_types, dtype=object).reshape(n)
        if self.splits is None:
            self.splits = np.full(n, "train", dtype=object)
        self.splits = np.asarray(self.splits, dtype=object).reshape(n)

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> BubbleImage:
        return BubbleImage(self.images[i], int(self.labels[i]), str(self.mark_types[i]))

    @property
    def x(self) -> np.ndarray:
        """Flattened ``(n, 2000)`` view."""
        return self.images.reshape(len(self), N_PIXELS)

    def subset(self, index) -> "BubbleSet":
        return BubbleSet(self.images[index], self.labels[index],
                         self.mark_types[index], self.splits[index])

    def split(self, name: str) -> "BubbleSet":
        return self.subset(self.splits == name)

    def only(self, *mark_types: str) -> "BubbleSet":
        return self.subset(np.isin(self.mark_types, list(mark_types)))

    @classmethod
    def concat(cls, parts: list["BubbleSet"]) -> "BubbleSet":
        return cls(np.concatenate([p.images for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.mark_types for p in parts]),
                   np.concatenate([p.splits for p in parts]))
