"""Dense symmetric eigensolver and spectral / diffusion-map embeddings."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import NumericError, PreconditionError, SizeError
from .graph import Graph, laplacian

# embedding a node set larger than this is refused; batching exists for a reason
MAX_DENSE_NODES = 4096

# eigenvalues of the (shifted) Laplacian at or below this are read as zero
ZERO_EIGENVALUE = 1e-10


@dataclass(frozen=True, eq=False)
class Embedding:
    """Rows are nodes, columns embedding coordinates.

    ``eigenvalues`` are ascending for Laplacian kinds and descending for
    ``random_walk`` (diffusion eigenvalues). ``next_eigenvalue`` is the
    first eigenvalue past the retained ones (``None`` when the full spectrum
    was used). ``alignment`` records the affine map last applied, if any.
    """

    coords: np.ndarray
    eigenvalues: np.ndarray
    node_ids: np.ndarray
    kind: str
    skip_trivial: bool = True
    t: float = 0.0
    alignment: object = None
    next_eigenvalue: float | None = None

    @property
    def K(self) -> int:
        return self.coords.shape[1]

    @property
    def eigengap(self) -> float:
        """Relative gap ``(lam_next - lam_last) / lam_next`` at the cut, in [0, 1].

        Diffusion eigenvalues ``mu`` are read as ``1 - mu``. A gap near zero
        means the retained subspace is not determined by the graph: the
        solver's pick among nearly equal eigenvalues is arbitrary.
        """
        if self.next_eigenvalue is None:
            return 1.0
        last, nxt = float(self.eigenvalues[-1]), float(self.next_eigenvalue)
        if self.kind == "random_walk":
            last, nxt = 1.0 - last, 1.0 - nxt
        last = max(last, 0.0)
        if nxt <= ZERO_EIGENVALUE:
            return 0.0
        return float(np.clip((nxt - last) / nxt, 0.0, 1.0))

    @property
    def aligned(self) -> bool:
        return self.alignment is not None

    def rows(self, ids) -> np.ndarray:
        """Coordinates of the given node ids, in that order."""
        pos = {int(v): i for i, v in enumerate(self.node_ids)}
        missing = [int(v) for v in ids if int(v) not in pos]
        if missing:
            raise PreconditionError(f"node ids not in embedding: {missing}")
        return self.coords[[pos[int(v)] for v in ids]]

    def with_coords(self, coords, alignment=None) -> "Embedding":
        return replace(self, coords=coords, alignment=alignment)


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive.

    Ties go to the lowest row index.
    """
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def eig_symmetric(A, k: int | None = None, largest: bool = False):
    """``k`` eigenpairs of a dense symmetric matrix, eigenvalues ascending.

    Selects the smallest ``k`` eigenvalues, or the largest ``k`` when
    ``largest`` is set. Eigenvectors are orthonormal columns with the sign
    convention of :func:`fix_signs`.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise PreconditionError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    k = n if k is None else int(k)
    if not 1 <= k <= n:
        raise SizeError(f"k must be in [1, {n}], got {k}")
    asym = np.max(np.abs(A - A.T)) if n else 0.0
    if asym > 1e-10:
        raise PreconditionError(f"matrix is not symmetric (max |A - A^T| = {asym:.3g})")
    lo, hi = (n - k, n - 1) if largest else (0, k - 1)
    try:
        if k == n:
            w, V = scipy.linalg.eigh(A, driver="evd", check_finite=True)
        else:
            w, V = scipy.linalg.eigh(A, subset_by_index=[lo, hi], driver="evr",
                                     check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"symmetric eigensolver did not converge: {exc}") from exc
    return w, fix_signs(V)


def embed(g: Graph, K: int, kind: str = "sym_normalized", skip_trivial: bool = True,
          t: float = 0.0, check: bool = False) -> Embedding:
    """Spectral embedding of the nodes of ``g``.

    For ``unnormalized`` and ``sym_normalized`` the columns are the
    eigenvectors of the ``K`` smallest eigenvalues, after the very first one
    when ``skip_trivial``. For ``random_walk`` the columns are diffusion-map
    coordinates: the ``K`` leading non-trivial right eigenvectors of
    ``D^-1 W`` (obtained as ``D^-1/2 v`` from the symmetric conjugate),
    each scaled by ``eigenvalue ** t``. The trivial vector is always
    skipped in that case.
    """
    m = g.m
    if m > MAX_DENSE_NODES:
        raise SizeError(f"{m} nodes exceeds the dense eigensolver cap of "
                        f"{MAX_DENSE_NODES}; embed batches instead of the full set")
    if kind == "random_walk":
        skip_trivial = True
    need = K + int(skip_trivial)
    if K < 1 or need > m:
        raise SizeError(f"cannot take {K} eigenvectors (skip_trivial={skip_trivial}) "
                        f"from a {m}-node graph")

    trivial = np.full(m, 1.0) if kind == "unnormalized" else np.sqrt(g.degrees)
    trivial /= np.linalg.norm(trivial)
    # one extra eigenvalue tells how well separated the retained subspace is
    extra = int(need < m)
    if kind == "random_walk":
        S = laplacian(g, kind).S
        w, V = eig_symmetric(S, need + extra, largest=True)
        w, V = w[::-1], V[:, ::-1]
        nxt = float(w[need]) if extra else None
        w, V = _drop_trivial(S, w[:need], V[:, :need], trivial, descending=True)
        coords = V / np.sqrt(g.degrees)[:, None]
        if t:
            coords = coords * np.power(w, t)[None, :]
        if check:
            _check_pairs(S, w, V)
    else:
        L = laplacian(g, kind)
        w, V = eig_symmetric(L, need + extra)
        nxt = float(w[need]) if extra else None
        w, V = w[:need], V[:, :need]
        if skip_trivial:
            w, V = _drop_trivial(L, w, V, trivial)
        coords = V
        if check:
            _check_pairs(L, w, coords)
    return Embedding(coords, w, np.asarray(g.node_ids), kind, bool(skip_trivial), float(t),
                     next_eigenvalue=nxt)


def _drop_trivial(A, w, V, trivial, descending=False):
    """Remove the known trivial eigenvector from the span of ``V``.

    On a connected graph this is just dropping the first column. When the
    trivial eigenvalue is repeated (several components) the solver returns
    an arbitrary basis of that eigenspace, so the trivial direction is
    projected out instead and the remaining subspace is re-diagonalized.
    """
    if abs(w[1] - w[0]) > 1e-8 * max(1.0, abs(w[0])):
        return w[1:], V[:, 1:]
    P = V - np.outer(trivial, trivial @ V)
    U, _, _ = np.linalg.svd(P, full_matrices=False)
    B = U[:, : V.shape[1] - 1]
    H = B.T @ A @ B
    mu, R = np.linalg.eigh((H + H.T) / 2)
    if descending:
        mu, R = mu[::-1], R[:, ::-1]
    return mu, fix_signs(B @ R)


def _check_pairs(A, w, V):
    tol = 1e-8 * max(1.0, np.linalg.norm(A))
    res = np.linalg.norm(A @ V - V * w[None, :], axis=0)
    if np.any(res > tol):
        raise NumericError(f"eigen-residual {res.max():.3g} exceeds {tol:.3g}")
    defect = np.linalg.norm(V.T @ V - np.eye(V.shape[1]))
    if defect > 1e-8:
        raise NumericError(f"eigenvectors not orthonormal (defect {defect:.3g})")


def dump_embedding(emb: Embedding, csv_path, json_path) -> None:
    """Coordinates as CSV (``node_id, c0..``) plus a JSON sidecar."""
    with open(csv_path, "w") as fh:
        fh.write(",".join(["node_id"] + [f"c{j}" for j in range(emb.K)]) + "\n")
        for nid, row in zip(emb.node_ids, emb.coords):
            fh.write(",".join([str(int(nid))] + [repr(float(v)) for v in row]) + "\n")
    meta = {
        "kind": emb.kind,
        "skip_trivial": emb.skip_trivial,
        "t": emb.t,
        "eigenvalues": [float(v) for v in emb.eigenvalues],
        "aligned": emb.aligned,
    }
    with open(json_path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
