"""Synthetic 40x50 ballot bubbles and on-disk datasets.

Marks are rendered as anti-aliased strokes: each stroke contributes a
coverage in [0, 1] per pixel (half-width plus half a pixel minus the distance
to the stroke centre line) and darkens the page multiplicatively,
``page *= 1 - darkness * coverage``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .data import DEFAULT_LABELS, HEIGHT, MARK_TYPES, WIDTH, BubbleImage, BubbleSet
from .pgm import PGMError, from_unit, read_pgm, to_unit, write_pgm

_RR, _CC = np.mgrid[0:HEIGHT, 0:WIDTH].astype(np.float64)
CENTER = ((HEIGHT - 1) / 2.0, (WIDTH - 1) / 2.0)


class DatasetError(ValueError):
    pass


@dataclass
class MarkParams:
    """Ranges ``(low, high)`` are sampled uniformly per image."""

    paper_level: tuple[float, float] = (0.92, 0.97)
    paper_noise: float = 0.01
    center_jitter: float = 1.5
    semi_axis_y: tuple[float, float] = (10.0, 12.5)
    semi_axis_x: tuple[float, float] = (14.0, 17.0)
    outline_width: tuple[float, float] = (1.2, 1.8)
    outline_darkness: tuple[float, float] = (0.45, 0.65)
    stroke_width: tuple[float, float] = (1.2, 2.4)
    ink_darkness: tuple[float, float] = (0.7, 0.92)
    fill_darkness: tuple[float, float] = (0.78, 0.95)
    fill_extent: tuple[float, float] = (0.97, 1.06)
    penrest_radius: tuple[float, float] = (0.5, 2.0)

    @classmethod
    def from_dict(cls, d: dict) -> "MarkParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown mark parameters: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# Per-type proportions of the reference combined validation split:
# empty 5327, filled 1810, and 703 of each marginal-mark family.
COMBINED_SMALL = {"blank": 2500, "filled": 850, "penrest": 330, "check": 330,
                  "cross": 330, "line_fill": 330, "scribble": 330}
BUBBLES_SMALL = {"blank": 3732, "filled": 1268}
PRESETS = {"combined-small": COMBINED_SMALL, "bubbles-small": BUBBLES_SMALL}


@dataclass
class DatasetSpec:
    counts: dict[str, int]
    seed: int = 0
    splits: dict[str, float] = field(default_factory=lambda: {"train": 0.8, "val": 0.2})
    params: MarkParams = field(default_factory=MarkParams)
    labels: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_LABELS))

    def __post_init__(self):
        for mt, c in self.counts.items():
            if mt not in MARK_TYPES:
                raise ValueError(f"unknown mark type {mt!r}")
            if c < 0:
                raise ValueError(f"negative count for {mt}")
        if abs(sum(self.splits.values()) - 1.0) > 1e-9 or min(self.splits.values()) < 0:
            raise ValueError(f"split fractions must be >= 0 and sum to 1: {self.splits}")
        if isinstance(self.params, dict):
            self.params = MarkParams.from_dict(self.params)

    @classmethod
    def preset(cls, name: str, seed: int = 0) -> "DatasetSpec":
        try:
            return cls(counts=dict(PRESETS[name]), seed=seed)
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        known = {f.name for f in fields(cls)} | {"preset"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset fields: {sorted(unknown)}")
        if "preset" in d:
            base = cls.preset(d.pop("preset"), d.get("seed", 0))
            d.setdefault("counts", base.counts)
        labels = dict(DEFAULT_LABELS)
        labels.update(d.pop("labels", {}))
        params = MarkParams.from_dict(d.pop("params", {}))
        return cls(params=params, labels=labels, **d)

    def to_dict(self) -> dict:
        return {"counts": dict(self.counts), "seed": self.seed, "splits": dict(self.splits),
                "params": {k: list(v) if isinstance(v, tuple) else v
                           for k, v in asdict(self.params).items()},
                "labels": dict(self.labels)}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class DatasetManifest:
    rows: list[tuple[str, int, str, str]]
    seed: int | None = None
    spec_hash: str | None = None


# ---------------------------------------------------------------- rendering

def _u(gen, rng_pair):
    lo, hi = rng_pair
    return float(gen.uniform(lo, hi))


def _segment_distance(p0, p1):
    (r0, c0), (r1, c1) = p0, p1
    dr, dc = r1 - r0, c1 - c0
    ll = dr * dr + dc * dc
    if ll == 0:
        return np.hypot(_RR - r0, _CC - c0)
    t = np.clip(((_RR - r0) * dr + (_CC - c0) * dc) / ll, 0.0, 1.0)
    return np.hypot(_RR - (r0 + t * dr), _CC - (c0 + t * dc))


def _coverage(dist, width):
    return np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)


def _ink(page, coverage, darkness):
    page *= 1.0 - darkness * coverage


def _polyline(points, width):
    cov = np.zeros((HEIGHT, WIDTH))
    for a, b in zip(points, points[1:]):
        np.maximum(cov, _coverage(_segment_distance(a, b), width), out=cov)
    return cov


def _radius(cy, cx, ay, ax):
    return np.hypot((_RR - cy) / ay, (_CC - cx) / ax)


def _ellipse_distance(cy, cx, ay, ax):
    """Approximate distance from each pixel centre to the ellipse boundary."""
    rad = _radius(cy, cx, ay, ax)
    rho = np.hypot(_RR - cy, _CC - cx)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(rho * (1.0 - 1.0 / rad))
    return np.where(rad > 0, d, min(ay, ax))


def _check(gen, cy, cx, ay, ax):
    s = _u(gen, (0.6, 1.0))
    p0 = (cy + _u(gen, (-0.15, 0.2)) * ay * s, cx - _u(gen, (0.45, 0.75)) * ax * s)
    p1 = (cy + _u(gen, (0.45, 0.8)) * ay * s, cx - _u(gen, (0.05, 0.3)) * ax * s)
    p2 = (cy - _u(gen, (0.6, 1.1)) * ay * s, cx + _u(gen, (0.5, 0.95)) * ax * s)
    return [[p0, p1, p2]]


def _cross(gen, cy, cx, ay, ax):
    oy, ox = gen.uniform(-0.15, 0.15) * ay, gen.uniform(-0.15, 0.15) * ax
    out = []
    for base in (math.pi / 4, 3 * math.pi / 4):
        ang = base + gen.uniform(-0.2, 0.2)
        half = _u(gen, (0.55, 1.0))
        dy, dx = math.sin(ang) * ay * half, math.cos(ang) * ax * half
        out.append([(cy + oy - dy, cx + ox - dx), (cy + oy + dy, cx + ox + dx)])
    return out


def _line_fill(gen, cy, cx, ay, ax):
    n = int(gen.integers(4, 8))
    rows = np.linspace(cy - 0.7 * ay, cy + 0.7 * ay, n) + gen.uniform(-0.8, 0.8, n)
    out = []
    for r in rows:
        half = ax * math.sqrt(max(1.0 - ((r - cy) / ay) ** 2, 0.05)) * _u(gen, (0.75, 1.0))
        tilt = gen.uniform(-1.0, 1.0)
        out.append([(r - tilt, cx - half), (r + tilt, cx + half)])
    return out


def _scribble(gen, cy, cx, ay, ax):
    pts = [(cy + gen.uniform(-0.3, 0.3) * ay, cx + gen.uniform(-0.3, 0.3) * ax)]
    ang = gen.uniform(0, 2 * math.pi)
    for _ in range(int(gen.integers(10, 25))):
        ang += gen.uniform(-2.2, 2.2)
        step = gen.uniform(3.0, 7.0)
        r, c = pts[-1]
        r2, c2 = r + step * math.sin(ang), c + step * math.cos(ang)
        # Reflect back toward the centre when the walk leaves the bubble.
        if math.hypot((r2 - cy) / ay, (c2 - cx) / ax) > 1.05:
            ang += math.pi
            r2, c2 = r + step * math.sin(ang), c + step * math.cos(ang)
        pts.append((r2, c2))
    return [pts]


_STROKES = {"check": _check, "cross": _cross, "line_fill": _line_fill, "scribble": _scribble}


def generate_bubble(mark_type: str, params: MarkParams | None, gen: np.random.Generator,
                    labels: dict[str, int] | None = None) -> BubbleImage:
    """Render one bubble of ``mark_type`` using draws from ``gen``."""
    if mark_type not in MARK_TYPES:
        raise ValueError(f"unknown mark type {mark_type!r}")
    p = params or MarkParams()
    labels = labels or DEFAULT_LABELS
    cy = CENTER[0] + gen.uniform(-p.center_jitter, p.center_jitter)
    cx = CENTER[1] + gen.uniform(-p.center_jitter, p.center_jitter)
    ay, ax = _u(gen, p.semi_axis_y), _u(gen, p.semi_axis_x)

    page = np.full((HEIGHT, WIDTH), _u(gen, p.paper_level))
    outline = _coverage(_ellipse_distance(cy, cx, ay, ax), _u(gen, p.outline_width))
    _ink(page, outline, _u(gen, p.outline_darkness))

    if mark_type == "filled":
        extent = _u(gen, p.fill_extent)
        edge = (_radius(cy, cx, ay, ax) - extent) * min(ay, ax)
        cov = np.clip(0.5 - edge, 0.0, 1.0)
        darkness = _u(gen, p.fill_darkness) * (1.0 - 0.05 * gen.random((HEIGHT, WIDTH)))
        _ink(page, cov, darkness)
    elif mark_type == "penrest":
        for _ in range(int(gen.integers(1, 4))):
            rad, ang = gen.uniform(0.0, 1.2), gen.uniform(0, 2 * math.pi)
            r, c = cy + rad * ay * math.sin(ang), cx + rad * ax * math.cos(ang)
            dot = _coverage(np.hypot(_RR - r, _CC - c), 2 * _u(gen, p.penrest_radius))
            _ink(page, dot, _u(gen, p.ink_darkness))
    elif mark_type in _STROKES:
        width, darkness = _u(gen, p.stroke_width), _u(gen, p.ink_darkness)
        for poly in _STROKES[mark_type](gen, cy, cx, ay, ax):
            _ink(page, _polyline(poly, width), darkness)

    page += gen.normal(0.0, p.paper_noise, page.shape)
    np.clip(page, 0.0, 1.0, out=page)
    return BubbleImage(page, labels[mark_type], mark_type)


# ---------------------------------------------------------------- datasets

def _allocate(count: int, splits: dict[str, float]) -> dict[str, int]:
    """Largest-remainder split of ``count`` items by fraction."""
    quotas = {k: count * f for k, f in splits.items()}
    alloc = {k: int(math.floor(q)) for k, q in quotas.items()}
    left = count - sum(alloc.values())
    for k in sorted(quotas, key=lambda k: -(quotas[k] - alloc[k]))[:left]:
        alloc[k] += 1
    return alloc


def generate_dataset(spec: DatasetSpec) -> tuple[BubbleSet, DatasetManifest]:
    """Generate every image in ``spec``; splits are stratified per mark type.

    Image ``i`` of type ``t`` uses the substream ``(seed, SYNTH, t, i)``, so
    changing one type's count leaves the other types' images untouched.
    """
    total = sum(spec.counts.values())
    if total == 0:
        raise ValueError("dataset spec has zero images")
    images, labels, types, splits = [], [], [], []
    for mt in MARK_TYPES:
        c = spec.counts.get(mt, 0)
        if c == 0:
            continue
        t = MARK_TYPES.index(mt)
        for i in range(c):
            img = generate_bubble(mt, spec.params, rngmod.substream(spec.seed, rngmod.SYNTH, t, i),
                                  spec.labels)
            images.append(img.pixels)
            labels.append(img.label)
            types.append(mt)
        names = []
        for name, k in _allocate(c, spec.splits).items():
            names += [name] * k
        order = rngmod.substream(spec.seed, rngmod.SPLIT, t).permutation(c)
        assigned = np.empty(c, dtype=object)
        assigned[order] = names
        splits += list(assigned)
    ds = BubbleSet(np.stack(images), labels, types, splits)
    rows = [(f"images/{i:05d}_{mt}.pgm", int(lb), str(mt), str(sp))
            for i, (lb, mt, sp) in enumerate(zip(ds.labels, ds.mark_types, ds.splits))]
    return ds, DatasetManifest(rows, spec.seed, spec.hash())


MANIFEST_COLUMNS = ["path", "label", "mark_type", "split"]


def save_dataset(path: str | os.PathLike, ds: BubbleSet, manifest: DatasetManifest,
                 spec: DatasetSpec | None = None) -> None:
    """Write 8-bit P5 images, ``manifest.csv`` and, if given, ``dataset.json``."""
    root = Path(path)
    if len(manifest.rows) != len(ds):
        raise DatasetError("manifest and image count differ")
    if len({r[0] for r in manifest.rows}) != len(manifest.rows):
        raise DatasetError("manifest paths are not unique")
    (root / "images").mkdir(parents=True, exist_ok=True)
    for (rel, *_), img in zip(manifest.rows, ds.images):
        write_pgm(root / rel, from_unit(img))
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        w.writerows(manifest.rows)
    meta = {"seed": manifest.seed, "spec_hash": manifest.spec_hash}
    if spec is not None:
        meta["spec"] = spec.to_dict()
    with open(root / "dataset.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path: str | os.PathLike) -> tuple[BubbleSet, DatasetManifest]:
    """Load a directory holding ``manifest.csv`` plus the PGM files it lists.

    Works for externally produced data; ``dataset.json`` is optional.
    """
    root = Path(path)
    mpath = root / "manifest.csv"
    if not mpath.is_file():
        raise FileNotFoundError(f"missing dataset manifest: {mpath}")
    with open(mpath, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(MANIFEST_COLUMNS) <= set(reader.fieldnames):
            raise DatasetError(f"{mpath}: header must contain {MANIFEST_COLUMNS}")
        rows = [(r["path"], int(r["label"]), r["mark_type"], r["split"]) for r in reader]
    images = []
    for rel, label, mt, _ in rows:
        f = root / rel
        if not f.is_file():
            raise FileNotFoundError(f"manifest lists missing image: {f}")
        pix, maxval = read_pgm(f)
        if pix.shape != (HEIGHT, WIDTH):
            raise DatasetError(f"{f}: expected {WIDTH}x{HEIGHT} image, got {pix.shape[1]}x{pix.shape[0]}")
        if label not in (0, 1):
            raise DatasetError(f"{mpath}: bad label {label} for {rel}")
        images.append(to_unit(pix, maxval))
    if not images:
        raise DatasetError(f"{mpath}: no images listed")
    seed = spec_hash = None
    meta = root / "dataset.json"
    if meta.is_file():
        with open(meta) as fh:
            m = json.load(fh)
        seed, spec_hash = m.get("seed"), m.get("spec_hash")
    ds = BubbleSet(np.stack(images), [r[1] for r in rows], [r[2] for r in rows], [r[3] for r in rows])
    return ds, DatasetManifest(rows, seed, spec_hash)


__all__ = ["MarkParams", "DatasetSpec", "DatasetManifest", "DatasetError", "PGMError",
           "generate_bubble", "generate_dataset", "save_dataset", "load_dataset", "PRESETS"]
