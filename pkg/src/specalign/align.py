"""Anchor-based affine registration of embeddings onto a reference frame."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateGeometryError, PreconditionError, RobustFitError,
                     SizeError)
from .spectral import Embedding

log = logging.getLogger(__name__)

# fits whose anchor RMSE exceeds this are logged as poorly explained
RMSE_WARNING = 0.1


def _homogeneous(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``T`` is K x (K+1); row vectors map as ``[x, 1] @ T.T``.

    ``rmse`` is the anchor fit residual when the map came from a fit.
    """

    T: np.ndarray
    rmse: float | None = None

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float)
        if T.ndim != 2 or T.shape[1] != T.shape[0] + 1:
            raise SizeError(f"T must be K x (K+1), got shape {T.shape}")
        if not np.all(np.isfinite(T)):
            raise DegenerateGeometryError("affine map has non-finite entries")
        if abs(np.linalg.det(T[:, :-1])) <= 1e-12:
            raise DegenerateGeometryError("affine map has a singular linear block")
        object.__setattr__(self, "T", T)

    @property
    def K(self) -> int:
        return self.T.shape[0]

    @property
    def linear(self) -> np.ndarray:
        return self.T[:, :-1]

    @property
    def offset(self) -> np.ndarray:
        return self.T[:, -1]

    @classmethod
    def identity(cls, K: int) -> "AffineMap":
        return cls(np.hstack([np.eye(K), np.zeros((K, 1))]), 0.0)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.K:
            raise SizeError(f"map acts on {self.K}-D points, got {X.shape[-1]}-D")
        return X @ self.linear.T + self.offset

    def to_dict(self) -> dict:
        return {"T": self.T.tolist(), "rmse": self.rmse}

    @classmethod
    def from_dict(cls, d) -> "AffineMap":
        return cls(np.array(d["T"], dtype=float), d.get("rmse"))


def compose(outer: AffineMap, inner: AffineMap) -> AffineMap:
    """The map ``x -> outer(inner(x))``."""
    if outer.K != inner.K:
        raise SizeError("cannot compose maps of different dimension")
    A = outer.linear @ inner.linear
    b = outer.linear @ inner.offset + outer.offset
    return AffineMap(np.hstack([A, b[:, None]]))


@dataclass(frozen=True, eq=False)
class AnchorFrame:
    """Frozen reference coordinates of the anchor nodes."""

    anchor_ids: np.ndarray
    ref_coords: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.anchor_ids, dtype=np.int64)
        ref = np.array(self.ref_coords, dtype=float)
        if ref.ndim != 2 or ref.shape[0] != ids.size:
            raise SizeError("ref_coords must have one row per anchor")
        if np.unique(ids).size != ids.size:
            raise PreconditionError("anchor ids must be unique")
        if ids.size < ref.shape[1] + 1:
            raise SizeError(f"{ids.size} anchors cannot determine an affine map in "
                            f"{ref.shape[1]} dims (need {ref.shape[1] + 1})")
        ids.setflags(write=False)
        ref.setflags(write=False)
        object.__setattr__(self, "anchor_ids", ids)
        object.__setattr__(self, "ref_coords", ref)

    @property
    def K(self) -> int:
        return self.ref_coords.shape[1]

    def to_dict(self) -> dict:
        return {"anchor_ids": self.anchor_ids.tolist(),
                "ref_coords": self.ref_coords.tolist()}

    @classmethod
    def from_dict(cls, d) -> "AnchorFrame":
        return cls(np.array(d["anchor_ids"]), np.array(d["ref_coords"], dtype=float))


def _check_pair(src, dst):
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.ndim != 2 or src.shape != dst.shape:
        raise SizeError(f"src and dst must be equal-shape l x K, got {src.shape}, {dst.shape}")
    l, K = src.shape
    if l < K + 1:
        raise SizeError(f"need at least K + 1 = {K + 1} anchors, got {l}")
    return src, dst


def _lstsq(src, dst, rcond=1e-10):
    X = _homogeneous(src)
    sol, _, rank, sv = np.linalg.lstsq(X, dst, rcond=None)
    if sv[-1] <= rcond * sv[0]:
        raise DegenerateGeometryError(
            f"anchor design matrix is rank deficient (condition {sv[0] / max(sv[-1], 1e-300):.3g})")
    return sol.T


def fit_affine(src, dst) -> AffineMap:
    """Least-squares affine map taking ``src`` rows onto ``dst`` rows.

    Solved by SVD on the homogeneous design ``[src, 1]``; the returned map
    carries the anchor RMSE ``sqrt(mean ||dst_i - T(src_i)||^2)``.
    """
    src, dst = _check_pair(src, dst)
    T = _lstsq(src, dst)
    res = dst - _homogeneous(src) @ T.T
    rmse = float(math.sqrt(np.mean(np.sum(res * res, axis=1))))
    return AffineMap(T, rmse)


@dataclass(frozen=True)
class RansacConfig:
    """``inlier_tol=None`` means 5% of the RMS norm of the target anchors;
    ``min_inliers=None`` means ``max(K + 1, ceil(l / 2))``."""

    iterations: int = 200
    inlier_tol: float | None = None
    min_inliers: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise PreconditionError("RANSAC needs at least one iteration")


def fit_affine_ransac(src, dst, cfg: RansacConfig = RansacConfig(), seed=None):
    """Robust affine fit; returns ``(AffineMap, inlier_mask)``.

    Each trial fits an exact map to a random (K+1)-subset and counts anchors
    whose residual norm is below the tolerance. The largest consensus set
    wins (ties: smaller summed inlier residual, then earlier trial) and is
    refit by plain least squares.
    """
    src, dst = _check_pair(src, dst)
    l, K = src.shape
    tol = cfg.inlier_tol
    if tol is None:
        tol = 0.05 * math.sqrt(np.mean(np.sum(dst * dst, axis=1)))
    min_inliers = cfg.min_inliers if cfg.min_inliers is not None else max(K + 1, math.ceil(l / 2))
    if min_inliers > l:
        raise RobustFitError(f"min_inliers={min_inliers} exceeds the {l} anchors")

    rng = np.random.default_rng(seed)
    Xh = _homogeneous(src)
    best_mask, best_score = None, (-1, math.inf)
    for _ in range(cfg.iterations):
        sample = rng.choice(l, size=K + 1, replace=False)
        try:
            T = _lstsq(src[sample], dst[sample])
        except DegenerateGeometryError:
            continue
        r = np.linalg.norm(dst - Xh @ T.T, axis=1)
        mask = r < tol
        score = (int(mask.sum()), float(r[mask].sum()))
        if score[0] > best_score[0] or (score[0] == best_score[0] and score[1] < best_score[1]):
            best_mask, best_score = mask, score
            if score[0] == l:
                break
    if best_mask is None or best_score[0] < min_inliers:
        found = 0 if best_mask is None else best_score[0]
        raise RobustFitError(f"best consensus set has {found} anchors, "
                             f"{min_inliers} required")
    try:
        fit = fit_affine(src[best_mask], dst[best_mask])
    except SizeError as exc:
        raise RobustFitError(str(exc)) from exc
    return fit, best_mask


def apply_affine(T: AffineMap, emb: Embedding) -> Embedding:
    if T.K != emb.K:
        raise SizeError(f"map is {T.K}-D but embedding is {emb.K}-D")
    return emb.with_coords(T(emb.coords), alignment=T)


def align_batch(batch_emb: Embedding, frame: AnchorFrame,
                ransac: RansacConfig | None = None, seed=None) -> Embedding:
    """Register ``batch_emb`` onto ``frame`` through its anchor rows.

    The fitted map is available as ``result.alignment`` (with its RMSE).
    """
    if batch_emb.K != frame.K:
        raise SizeError(f"embedding is {batch_emb.K}-D but frame is {frame.K}-D")
    present = set(int(v) for v in batch_emb.node_ids)
    missing = [int(a) for a in frame.anchor_ids if int(a) not in present]
    if missing:
        raise PreconditionError(f"anchors missing from batch: {missing}")
    src = batch_emb.rows(frame.anchor_ids)
    if ransac is None:
        T = fit_affine(src, frame.ref_coords)
    else:
        T, _ = fit_affine_ransac(src, frame.ref_coords, ransac, seed)
    if T.rmse is not None and T.rmse > RMSE_WARNING:
        log.warning("affine alignment explains anchors poorly (rmse %.3g)", T.rmse)
    return apply_affine(T, batch_emb)


def align_feature_update(prev_anchor_coords, updated_full_emb: Embedding, anchor_ids,
                         ransac: RansacConfig | None = None, seed=None):
    """Bring an embedding recomputed after a feature change back to the
    previous anchor coordinates; returns ``(aligned_embedding, T_G)``."""
    frame = AnchorFrame(anchor_ids, prev_anchor_coords)
    aligned = align_batch(updated_full_emb, frame, ransac, seed)
    return aligned, aligned.alignment


def save_affine(T: AffineMap, path) -> None:
    with open(path, "w") as fh:
        json.dump(T.to_dict(), fh)
        fh.write("\n")
