"""Embedding quality and clustering agreement measures."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DegenerateSubspaceError, SizeError
from .net import Mlp, MlpSpec, cross_entropy_loss_grad


def _orthonormal_basis(Y):
    Q, R = np.linalg.qr(Y)
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= 1e-12 * max(d.max(), 1e-300):
        raise DegenerateSubspaceError("matrix does not have full column rank")
    return Q


def grassmann_distance(Y1, Y2) -> float:
    """Squared projection distance ``K - sum cos^2(theta_i)`` between column spans.

    Inputs need not be orthonormal; each is orthonormalized by QR first.
    """
    Y1 = np.asarray(Y1, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    if Y1.shape != Y2.shape or Y1.ndim != 2:
        raise SizeError(f"shape mismatch {Y1.shape} vs {Y2.shape}")
    Q1 = _orthonormal_basis(Y1)
    Q2 = _orthonormal_basis(Y2)
    s = np.clip(np.linalg.svd(Q1.T @ Q2, compute_uv=False), 0.0, 1.0)
    return float(max(Y1.shape[1] - np.sum(s * s), 0.0))


def orthogonality_defect(Y) -> float:
    """``||Y^T Y - I||_F^2`` after scaling every column to unit length."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] < Y.shape[1]:
        raise SizeError(f"need an n x K matrix with n >= K, got {Y.shape}")
    norms = np.linalg.norm(Y, axis=0)
    if np.any(norms == 0):
        raise DegenerateSubspaceError("zero column")
    Yn = Y / norms
    G = Yn.T @ Yn - np.eye(Y.shape[1])
    return float(np.sum(G * G))


def _kmeanspp(X, C, rng):
    n = X.shape[0]
    centers = np.empty((C, X.shape[1]))
    chosen = [int(rng.integers(n))]
    centers[0] = X[chosen[0]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for c in range(1, C):
        total = d2.sum()
        if total > 0:
            i = int(rng.choice(n, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            i = int(rng.choice(free))
        chosen.append(i)
        centers[c] = X[i]
        d2 = np.minimum(d2, np.sum((X - centers[c]) ** 2, axis=1))
    return centers


def _sq_dists(X, centers):
    return (np.sum(X * X, axis=1)[:, None] - 2.0 * X @ centers.T
            + np.sum(centers * centers, axis=1)[None, :]).clip(min=0.0)


def _lloyd(X, centers, max_iter, tol):
    C = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        D = _sq_dists(X, centers)
        labels = np.argmin(D, axis=1)
        dmin = D[np.arange(X.shape[0]), labels]
        new = np.empty_like(centers)
        counts = np.bincount(labels, minlength=C)
        taken = set()
        for c in range(C):
            if counts[c]:
                new[c] = X[labels == c].mean(axis=0)
            else:
                # reseed from the point currently farthest from its center
                order = np.argsort(-dmin, kind="stable")
                far = next(int(i) for i in order if int(i) not in taken)
                taken.add(far)
                new[c] = X[far]
                dmin[far] = 0.0
        shift = np.sum((new - centers) ** 2)
        centers = new
        if shift <= tol:
            break
    D = _sq_dists(X, centers)
    labels = np.argmin(D, axis=1)
    inertia = float(D[np.arange(X.shape[0]), labels].sum())
    return labels, inertia


def kmeans_objective(X, labels) -> float:
    """Within-cluster sum of squared distances to cluster means."""
    X = np.asarray(X, dtype=float)
    total = 0.0
    for c in np.unique(labels):
        P = X[labels == c]
        total += float(np.sum((P - P.mean(axis=0)) ** 2))
    return total


def kmeans(coords, C: int, restarts: int = 10, seed=None, max_iter: int = 300,
           tol: float = 1e-12) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding, best of ``restarts`` runs.

    Ties in the final objective go to the earliest restart.
    """
    X = np.asarray(coords, dtype=float)
    n = X.shape[0]
    if not 1 <= C <= n:
        raise SizeError(f"need 1 <= C <= n, got C={C}, n={n}")
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best, best_obj = None, np.inf
    for _ in range(restarts):
        labels, _ = _lloyd(X, _kmeanspp(X, C, rng), max_iter, tol)
        obj = kmeans_objective(X, labels)
        if obj < best_obj:
            best, best_obj = labels, obj
    return best


def kuhn_munkres(cost) -> np.ndarray:
    """Minimum-cost perfect assignment; ``perm[i]`` is the column given to row i."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise SizeError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ConfigError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def _contingency(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise SizeError(f"label vectors differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise SizeError("empty label vectors")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    M = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(M, (ai, bi), 1.0)
    return M


def _entropy(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def nmi(true_labels, pred_labels) -> float:
    """Mutual information over the larger of the two entropies (natural log)."""
    M = _contingency(true_labels, pred_labels)
    P = M / M.sum()
    pa, pb = P.sum(axis=1), P.sum(axis=0)
    ha, hb = _entropy(pa), _entropy(pb)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = P > 0
    mi = float(np.sum(P[nz] * np.log(P[nz] / np.outer(pa, pb)[nz])))
    return float(np.clip(mi / max(ha, hb), 0.0, 1.0))


def acc(true_labels, pred_labels) -> float:
    """Fraction of points matched under the best one-to-one cluster relabeling."""
    M = _contingency(pred_labels, true_labels)
    size = max(M.shape)
    padded = np.zeros((size, size))
    padded[: M.shape[0], : M.shape[1]] = M
    perm = kuhn_munkres(-padded)
    return float(padded[np.arange(size), perm].sum() / M.sum())


@dataclass(frozen=True)
class ProbeConfig:
    steps: int = 500
    lr: float = 0.05
    seed: int = 0


def linear_probe_accuracy(train_emb, train_labels, test_emb, test_labels,
                          cfg: ProbeConfig = ProbeConfig()) -> float:
    """Accuracy of a single linear layer trained with softmax cross-entropy.

    Inputs are standardized with the training statistics; training is
    full-batch Adam.
    """
    Xtr = np.asarray(train_emb, dtype=float)
    Xte = np.asarray(test_emb, dtype=float)
    ytr = np.asarray(train_labels, dtype=np.int64)
    yte = np.asarray(test_labels, dtype=np.int64)
    if Xtr.shape[1] != Xte.shape[1]:
        raise SizeError("train and test embeddings differ in width")
    C = int(max(ytr.max(), yte.max())) + 1
    mu = Xtr.mean(axis=0)
    sd = Xtr.std(axis=0)
    sd[sd == 0] = 1.0
    Ztr, Zte = (Xtr - mu) / sd, (Xte - mu) / sd
    probe = Mlp.init(MlpSpec((Xtr.shape[1], C), cfg.seed))
    for _ in range(cfg.steps):
        logits, cache = probe.forward(Ztr)
        _, g = cross_entropy_loss_grad(logits, ytr)
        grads, _ = probe.backward(cache, g)
        probe.step(grads, cfg.lr)
    pred = np.argmax(probe.predict(Zte), axis=1)
    return float(np.mean(pred == yte))


@dataclass
class MetricsReport:
    grassmann: float | None = None
    orth_defect: float | None = None
    nmi: float | None = None
    acc: float | None = None
    probe_accuracy: float | None = None
    metadata: dict = field(default_factory=dict)

    FIELDS = ("grassmann", "orth_defect", "nmi", "acc", "probe_accuracy")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        return cls(**{k: d.get(k) for k in cls.FIELDS}, metadata=d.get("metadata", {}))

    def table(self) -> str:
        lines = [f"{'metric':<16}{'value':>12}"]
        for name in self.FIELDS:
            v = getattr(self, name)
            lines.append(f"{name:<16}{'-' if v is None else format(v, '.6f'):>12}")
        for k in sorted(self.metadata):
            v = self.metadata[k]
            lines.append(f"{k:<16}{format(v, '.6g') if isinstance(v, float) else str(v):>12}")
        return "\n".join(lines)
