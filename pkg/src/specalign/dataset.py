"""Toy datasets, CSV ingestion and seeded sampling of anchors and batches.

Index sets returned by the sampling functions are row positions into the
``Dataset`` they were drawn from; ``Dataset.ids`` maps rows back to the
stable node identifiers of the parent dataset.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, PreconditionError, SizeError

TOY_KINDS = ("three_moons", "two_circles", "gaussian_blobs")

# isotropic noise is resampled beyond this many standard deviations
NOISE_TRUNCATION = 3.0

# (center x, center y, opens downward) per moon; every pair of noiseless
# arcs is at least 0.5 apart, the gap of the classic two-moons layout
MOON_ARCS = ((0.0, 0.0, False), (1.0, 0.5, True), (2.5, 0.5, False))


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise SizeError(f"features must be 2-D, got shape {X.shape}")
        n, d = X.shape
        if n < 2 or d < 1:
            raise SizeError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
        if not np.all(np.isfinite(X)):
            raise ConfigError("features contain non-finite entries")
        object.__setattr__(self, "features", _frozen(X))

        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (n,):
                raise SizeError(f"labels must have shape ({n},), got {y.shape}")
            if not np.issubdtype(y.dtype, np.integer):
                if not np.all(np.mod(y, 1) == 0):
                    raise ConfigError("labels must be integers")
            y = y.astype(np.int64)
            C = int(y.max()) + 1
            if y.min() < 0 or np.any(np.bincount(y, minlength=C) == 0):
                raise ConfigError(
                    "labels must cover {0..C-1} with every class nonempty")
            object.__setattr__(self, "labels", _frozen(y))

        ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (n,) or np.unique(ids).size != n:
            raise ConfigError("ids must be n unique integers")
        object.__setattr__(self, "ids", _frozen(ids))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def subset(self, rows) -> "Dataset":
        """Rows ``rows`` as a new dataset; ids are carried over.

        Labels are kept only if every class is still represented, since a
        labelled ``Dataset`` must have no empty class.
        """
        rows = np.asarray(rows, dtype=np.int64)
        labels = None
        if self.labels is not None:
            sub = self.labels[rows]
            if np.unique(sub).size == self.n_classes:
                labels = sub
        return Dataset(self.features[rows], labels, self.ids[rows])


@dataclass(frozen=True)
class SampleSpec:
    """Batch size ``m``, anchor count ``l`` and sampling seed."""

    m: int
    l: int
    seed: int = 0

    def validate(self, n: int, K: int | None = None) -> None:
        if not 0 < self.l <= self.m <= n:
            raise SizeError(f"need 0 < l <= m <= n, got l={self.l}, m={self.m}, n={n}")
        if K is not None and self.l < K + 1:
            raise SizeError(f"{self.l} anchors cannot determine an affine map in {K} dims "
                            f"(need at least {K + 1})")


def _truncated_noise(rng, size, scale):
    z = rng.standard_normal(size)
    while True:
        bad = np.linalg.norm(z, axis=1) > NOISE_TRUNCATION
        if not bad.any():
            break
        z[bad] = rng.standard_normal((int(bad.sum()), size[1]))
    return scale * z


def _class_counts(n, C):
    counts = np.full(C, n // C)
    counts[: n % C] += 1
    return counts


def generate_toy(kind: str, n: int, noise: float, seed=None, n_blobs: int = 3) -> Dataset:
    """Generate one of the standard 2-D spectral-clustering toys.

    ``three_moons`` are three unit half-circles (see ``MOON_ARCS``), each
    consecutive pair interleaved like the classic two moons.
    ``two_circles`` are concentric circles of radii 1 and 0.5. ``gaussian_blobs`` places
    ``n_blobs`` isotropic clusters on a circle of radius 2 with standard
    deviation ``noise``. Noise is isotropic Gaussian truncated at three
    standard deviations, so every point stays within ``3 * noise`` of its
    noiseless curve.
    """
    if kind not in TOY_KINDS:
        raise ConfigError(f"unknown toy kind {kind!r}; expected one of {TOY_KINDS}")
    if not math.isfinite(noise) or noise < 0:
        raise ConfigError(f"noise must be finite and >= 0, got {noise}")
    C = {"three_moons": 3, "two_circles": 2, "gaussian_blobs": n_blobs}[kind]
    if C < 1:
        raise ConfigError("n_blobs must be positive")
    if n < max(C, 2):
        raise SizeError(f"{kind} needs at least {max(C, 2)} points, got n={n}")

    rng = np.random.default_rng(seed)
    counts = _class_counts(n, C)
    labels = np.repeat(np.arange(C), counts)
    pts = []
    for c, cnt in enumerate(counts):
        if kind == "three_moons":
            t = rng.uniform(0.0, np.pi, cnt)
            cx, cy, down = MOON_ARCS[c]
            sign = -1.0 if down else 1.0
            xy = np.column_stack([cx + sign * np.cos(t), cy + sign * np.sin(t)])
        elif kind == "two_circles":
            t = rng.uniform(0.0, 2 * np.pi, cnt)
            r = 1.0 if c == 0 else 0.5
            xy = r * np.column_stack([np.cos(t), np.sin(t)])
        else:
            a = np.pi / 2 + 2 * np.pi * c / C
            xy = np.tile([2.0 * np.cos(a), 2.0 * np.sin(a)], (cnt, 1))
        pts.append(xy)
    X = np.vstack(pts)
    if noise > 0:
        X = X + _truncated_noise(rng, X.shape, noise)
    return Dataset(X, labels)


def save_csv(ds: Dataset, path) -> None:
    """Write features (and labels, if any) with a header line."""
    header = [f"x{j}" for j in range(ds.d)]
    if ds.labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            w.writerow(row)


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path) -> Dataset:
    """Read a numeric table; a final ``label`` column in the header marks labels."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise ParseError(f"{path} is empty")

    has_labels = False
    start = 0
    first = [c.strip() for c in rows[0]]
    if not all(_is_number(c) for c in first):
        start = 1
        has_labels = first[-1] == "label"
        if "label" in first[:-1]:
            raise ParseError("label column must be last", row=1,
                             column=first.index("label") + 1)
    body = rows[start:]
    if not body:
        raise ParseError(f"{path} has a header but no data rows")

    width = len(rows[0])
    feats, labels = [], []
    for r, row in enumerate(body, start=start + 1):
        if len(row) != width:
            raise ParseError(f"expected {width} cells, got {len(row)}", row=r)
        vals = []
        for c, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", row=r, column=c) from None
            if not math.isfinite(vals[-1]):
                raise ParseError(f"non-finite cell {cell!r}", row=r, column=c)
        if has_labels:
            lab = vals.pop()
            if lab != int(lab):
                raise ParseError(f"label {row[-1]!r} is not an integer", row=r, column=width)
            labels.append(int(lab))
        feats.append(vals)
    if width - has_labels < 1:
        raise ParseError("no feature columns")
    X = np.array(feats, dtype=float)
    y = np.array(labels, dtype=np.int64) if has_labels else None
    try:
        return Dataset(X, y)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def draw_anchors(ds: Dataset, l: int, seed=None, stratified: bool = False) -> np.ndarray:
    """Draw ``l`` distinct rows, optionally balanced across classes.

    With ``stratified`` the per-class counts differ by at most one; which
    classes receive the remainder is itself random.
    """
    if not 1 <= l <= ds.n:
        raise SizeError(f"anchor count must be in [1, {ds.n}], got {l}")
    rng = np.random.default_rng(seed)
    if not stratified:
        return np.sort(rng.choice(ds.n, size=l, replace=False))
    if ds.labels is None:
        raise PreconditionError("stratified anchors require labels")
    C = ds.n_classes
    counts = np.full(C, l // C)
    counts[rng.permutation(C)[: l % C]] += 1
    picked = []
    for c in range(C):
        members = np.flatnonzero(ds.labels == c)
        if counts[c] > members.size:
            raise SizeError(f"class {c} has {members.size} rows, {counts[c]} anchors requested")
        picked.append(rng.choice(members, size=counts[c], replace=False))
    return np.sort(np.concatenate(picked))


def draw_batch(ds: Dataset, anchors, m: int, seed=None) -> np.ndarray:
    """Anchors followed by ``m - len(anchors)`` fresh uniform rows."""
    anchors = np.asarray(anchors, dtype=np.int64)
    l = anchors.size
    if np.unique(anchors).size != l:
        raise PreconditionError("anchor rows must be unique")
    if l and (anchors.min() < 0 or anchors.max() >= ds.n):
        raise PreconditionError("anchor rows outside the dataset")
    if m < l:
        raise SizeError(f"batch size {m} smaller than anchor count {l}")
    if m - l > ds.n - l:
        raise SizeError(f"cannot draw {m - l} new rows from {ds.n - l} non-anchors")
    rng = np.random.default_rng(seed)
    mask = np.ones(ds.n, dtype=bool)
    mask[anchors] = False
    fresh = rng.choice(np.flatnonzero(mask), size=m - l, replace=False)
    return np.concatenate([anchors, fresh])


def train_test_split(ds: Dataset, test_fraction: float = 0.2, seed=None):
    """Seeded row partition; returns ``(train_rows, test_rows)``, each sorted."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    n_test = int(round(test_fraction * ds.n))
    if n_test < 2 or ds.n - n_test < 2:
        raise SizeError(f"split of n={ds.n} leaves fewer than 2 rows on one side")
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
