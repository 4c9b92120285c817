"""Batch-aligned training of spectral embedding regressors.

:func:`train` regresses a network onto analytic batch embeddings that were
registered onto a frozen reference frame through shared anchor nodes.
:func:`train_joint` does the same while a second network learns the input
features with a contrastive loss, re-registering the reference frame every
time the features move.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import metrics as M
from .align import AffineMap, AnchorFrame, RansacConfig, align_batch, align_feature_update
from .dataset import Dataset, draw_anchors, draw_batch
from .errors import (ConfigError, ConnectivityError, DegenerateGeometryError,
                     DegenerateSubspaceError, PreconditionError, RobustFitError, SizeError,
                     TrainingError)
from .graph import GraphConfig, build_graph
from .net import Mlp, MlpSpec, contrastive_loss_grad, mse_loss_grad
from .spectral import Embedding, embed

log = logging.getLogger(__name__)

# rejected batch draws (isolated node, anchor-free component, no eigengap)
# are redrawn this many times before training aborts
DRAW_RETRIES = 5


@dataclass(frozen=True)
class TrainConfig:
    """Settings of the batch-aligned training loop.

    Batches are redrawn when their embedding's relative eigengap is below
    ``min_eigengap``. ``output_scale=None`` means ``1 / sqrt(m)``.
    """

    K: int = 2
    m: int = 256
    l: int = 30
    iterations: int = 1000
    lr: float = 1e-3
    graph: GraphConfig = field(default_factory=GraphConfig)
    ransac: RansacConfig | None = None
    seed: int = 0
    eval_every: int = 0
    hidden: tuple = (256, 256, 256, 256)
    skip_trivial: bool = True
    diffusion_time: float = 0.0
    stratified: bool = True
    standardize_inputs: bool = True
    output_scale: float | None = None
    min_eigengap: float = 0.5

    def validate(self, n: int | None = None) -> None:
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.l < self.K + 1:
            raise ConfigError(f"l={self.l} anchors cannot fix an affine map in "
                              f"K={self.K} dims (need l >= K + 1)")
        if self.m < self.l:
            raise ConfigError(f"batch size m={self.m} is smaller than l={self.l}")
        if n is not None and self.m > n:
            raise ConfigError(f"batch size m={self.m} exceeds dataset size n={n}")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.output_scale is not None and not self.output_scale > 0:
            raise ConfigError("output_scale must be positive")
        if not 0.0 <= self.min_eigengap < 1.0:
            raise ConfigError("min_eigengap must be in [0, 1)")

    def resolved_output_scale(self) -> float:
        """``output_scale``, defaulting to ``1 / sqrt(m)``.

        Orthonormal embedding columns over ``m`` nodes have entries of
        order ``1 / sqrt(m)``; the network's last layer then works at unit
        scale.
        """
        return 1.0 / np.sqrt(self.m) if self.output_scale is None else float(self.output_scale)


@dataclass
class TrainState:
    model: Mlp
    frame: AnchorFrame
    history: list = field(default_factory=list)
    reference: Embedding | None = None


def _embed_rows(X, rows, cfg_graph, K, skip_trivial, t, n_anchors=0):
    g = build_graph(X[rows], cfg_graph, node_ids=rows)
    if n_anchors:
        # a component without anchors moves freely and cannot be registered
        _, comp = connected_components(g.W, directed=False)
        orphans = np.setdiff1d(comp, comp[:n_anchors])
        if orphans.size:
            node = int(rows[np.flatnonzero(comp == orphans[0])[0]])
            raise ConnectivityError("batch graph has a component without anchors", node)
    return embed(g, K, cfg_graph.laplacian_kind, skip_trivial, t)


def _draw_embedded(ds, anchors, cfg, rng, features=None):
    """Draw a batch containing the anchors and embed it.

    Batches whose graph has an isolated node or an anchor-free component,
    or whose embedding has a relative eigengap below ``cfg.min_eigengap``,
    are redrawn, up to ``DRAW_RETRIES`` times.
    """
    X = ds.features if features is None else features
    for attempt in range(DRAW_RETRIES):
        rows = draw_batch(ds, anchors, cfg.m, rng)
        try:
            emb = _embed_rows(X, rows, cfg.graph, cfg.K, cfg.skip_trivial,
                              cfg.diffusion_time, n_anchors=len(anchors))
        except ConnectivityError as exc:
            log.info("batch draw %d rejected: %s", attempt + 1, exc)
            last = exc
            continue
        if emb.eigengap < cfg.min_eigengap:
            log.info("batch draw %d rejected: eigengap %.3g", attempt + 1, emb.eigengap)
            last = DegenerateSubspaceError(
                f"eigengap {emb.eigengap:.3g} below min_eigengap {cfg.min_eigengap}")
            continue
        return rows, emb
    raise last


def _init(ds, cfg, rng):
    stratified = cfg.stratified and ds.labels is not None
    anchors = draw_anchors(ds, cfg.l, rng, stratified=stratified)
    try:
        _, ref = _draw_embedded(ds, anchors, cfg, rng)
    except (ConnectivityError, DegenerateSubspaceError) as exc:
        raise TrainingError(f"reference set: {exc}", iteration=0) from exc
    return AnchorFrame(anchors, ref.rows(anchors)), ref


def init_reference(ds: Dataset, cfg: TrainConfig, seed=None):
    """Anchor set plus the frozen reference embedding of their enclosing set.

    Returns ``(frame, reference_embedding)``; with ``seed=None`` this is
    exactly the frame :func:`train` starts from.
    """
    cfg.validate(ds.n)
    return _init(ds, cfg, np.random.default_rng(cfg.seed if seed is None else seed))


def init_model(ds: Dataset, cfg: TrainConfig) -> Mlp:
    if cfg.standardize_inputs:
        mean, std = ds.features.mean(axis=0), ds.features.std(axis=0)
        std = np.where(std > 0, std, 1.0)
    else:
        mean = std = None
    spec = MlpSpec((ds.d, *cfg.hidden, cfg.K), cfg.seed)
    return Mlp.init(spec, mean, std, cfg.resolved_output_scale())


def train(ds: Dataset, cfg: TrainConfig, eval_ds: Dataset | None = None,
          callback=None) -> TrainState:
    """Run the draw -> embed -> align -> regress loop for ``cfg.iterations`` steps.

    Each history record holds the iteration, the batch MSE before the step
    and the anchor alignment RMSE; with ``eval_every`` and a labelled
    ``eval_ds`` it also holds clustering metrics of the model output.
    """
    cfg.validate(ds.n)
    rng = np.random.default_rng(cfg.seed)
    frame, ref = _init(ds, cfg, rng)
    anchors = frame.anchor_ids
    model = init_model(ds, cfg)
    state = TrainState(model, frame, [], ref)
    for it in range(1, cfg.iterations + 1):
        try:
            rows, emb = _draw_embedded(ds, anchors, cfg, rng)
            assert np.array_equal(rows[: cfg.l], anchors)
            aligned = align_batch(emb, frame, cfg.ransac, rng)
        except (ConnectivityError, DegenerateSubspaceError, DegenerateGeometryError,
                RobustFitError) as exc:
            raise TrainingError(str(exc), iteration=it) from exc
        Y, cache = model.forward(ds.features[rows])
        loss, g = mse_loss_grad(Y, aligned.coords)
        if not np.isfinite(loss):
            raise TrainingError("non-finite loss", iteration=it)
        grads, _ = model.backward(cache, g)
        try:
            model.step(grads, cfg.lr)
        except TrainingError as exc:
            raise TrainingError(str(exc), iteration=it) from exc
        rec = {"iter": it, "loss": loss, "align_rmse": aligned.alignment.rmse}
        if cfg.eval_every and eval_ds is not None and it % cfg.eval_every == 0:
            rec["metrics"] = quick_cluster_metrics(model, eval_ds, cfg.seed)
        state.history.append(rec)
        if callback is not None:
            callback(rec)
    return state


def anchor_consistency(ds: Dataset, cfg: TrainConfig, n_batches: int = 20, seed=None):
    """Anchor coordinates across freshly drawn batches, before and after alignment.

    Uses the frame :func:`init_reference` builds from ``cfg``; batches are
    drawn with ``seed``. Returns ``(unaligned, aligned)``, each of shape
    ``(n_batches, l, K)``.
    """
    frame, _ = init_reference(ds, cfg)
    rng = np.random.default_rng(seed)
    raw, reg = [], []
    for _ in range(n_batches):
        _, emb = _draw_embedded(ds, frame.anchor_ids, cfg, rng)
        raw.append(emb.rows(frame.anchor_ids))
        reg.append(align_batch(emb, frame, cfg.ransac, rng).rows(frame.anchor_ids))
    return np.array(raw), np.array(reg)


def infer(model: Mlp, X) -> np.ndarray:
    """Embedding coordinates of new points: a single forward pass."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.in_width:
        raise SizeError(f"model expects width {model.in_width}, got shape {X.shape}")
    return model.predict(X)


def quick_cluster_metrics(model, ds: Dataset, seed=0, features=None) -> dict:
    Y = model.predict(ds.features if features is None else features)
    pred = M.kmeans(Y, ds.n_classes, restarts=3, seed=seed)
    return {"nmi": M.nmi(ds.labels, pred), "acc": M.acc(ds.labels, pred)}


@dataclass(frozen=True)
class JointConfig:
    """Settings for simultaneous feature and spectral training.

    ``align_features=False`` is the ablation that skips the re-registration
    of the reference frame after feature updates. The frame is also left
    unchanged for a spectral step when the re-embedded reference set has a
    relative eigengap below ``min_eigengap`` or when the registration's
    linear block has condition number above ``max_tg_condition``; either
    means the new anchor coordinates have lost a direction the frame still
    carries. ``eval_nodes=None`` evaluates on ``m`` nodes, so the analytic
    reference sees the same graph density as the training batches.
    """

    K: int = 2
    m: int = 256
    l: int = 30
    feature_iters: int = 1500
    spectral_period: int = 10
    margin: float = 1.0
    feature_lr: float = 1e-3
    spectral_lr: float = 1e-3
    feature_hidden: tuple = (64, 64)
    feature_dim: int = 8
    spectral_hidden: tuple = (256, 256, 256, 256)
    pair_batch: int = 256
    graph: GraphConfig = field(default_factory=lambda: GraphConfig(k_neighbors=15))
    ransac: RansacConfig | None = None
    skip_trivial: bool = True
    diffusion_time: float = 0.0
    align_features: bool = True
    min_eigengap: float = 0.5
    max_tg_condition: float | None = 10.0
    eval_every: int = 3
    eval_nodes: int | None = None
    seed: int = 0

    def validate(self, n: int | None = None) -> None:
        TrainConfig(K=self.K, m=self.m, l=self.l).validate(n)
        if self.feature_iters < 0 or self.spectral_period < 1:
            raise ConfigError("feature_iters must be >= 0 and spectral_period >= 1")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")


@dataclass
class JointResult:
    feature_model: Mlp
    spectral_model: Mlp
    history: list
    frame: AnchorFrame


def _tg_deviation(T: AffineMap) -> float:
    return float(np.linalg.norm(T.T - AffineMap.identity(T.K).T))


def train_joint(ds: Dataset, cfg: JointConfig, val_ds: Dataset | None = None,
                callback=None) -> JointResult:
    """Contrastive feature training with a periodically updated spectral model.

    Every ``spectral_period`` feature steps the reference set is re-embedded
    under the current features and registered onto the previous anchor
    coordinates (unless ablated); the registered anchors become the new
    frame, and one spectral-model step is taken on a fresh batch aligned to
    it. History records carry both losses, the deviation of the feature
    registration from identity and, every ``eval_every`` spectral steps,
    clustering metrics of the analytic embedding and of the model output on
    training and validation nodes.
    """
    if ds.labels is None:
        raise PreconditionError("joint training needs labels for the contrastive loss")
    cfg.validate(ds.n)
    rng = np.random.default_rng(cfg.seed)
    tcfg = TrainConfig(K=cfg.K, m=cfg.m, l=cfg.l, graph=cfg.graph, ransac=cfg.ransac,
                       skip_trivial=cfg.skip_trivial, diffusion_time=cfg.diffusion_time,
                       min_eigengap=cfg.min_eigengap)
    C = ds.n_classes
    std = ds.features.std(axis=0)
    feat = Mlp.init(MlpSpec((ds.d, *cfg.feature_hidden, cfg.feature_dim), cfg.seed),
                    ds.features.mean(axis=0), np.where(std > 0, std, 1.0))
    spec = Mlp.init(MlpSpec((cfg.feature_dim, *cfg.spectral_hidden, cfg.K), cfg.seed + 1),
                    output_scale=1.0 / np.sqrt(cfg.m))

    anchors = draw_anchors(ds, cfg.l, rng, stratified=True)
    ref_rows, ref_emb = _draw_embedded(ds, anchors, tcfg, rng, features=feat.predict(ds.features))
    prev = ref_emb.rows(anchors)
    frame = AnchorFrame(anchors, prev)

    def subsample(d, rng_):
        if d is None:
            return None
        size = cfg.m if cfg.eval_nodes is None else cfg.eval_nodes
        if d.n <= size:
            return d
        return d.subset(np.sort(rng_.choice(d.n, size, replace=False)))

    eval_rng = np.random.default_rng(cfg.seed + 2)
    train_eval = subsample(ds, eval_rng)
    val_eval = subsample(val_ds, eval_rng)

    history = []
    n_spectral = 0
    for it in range(1, cfg.feature_iters + 1):
        i = rng.integers(ds.n, size=cfg.pair_batch)
        j = rng.integers(ds.n, size=cfg.pair_batch)
        Zi, ci = feat.forward(ds.features[i])
        Zj, cj = feat.forward(ds.features[j])
        f_loss, gi, gj = contrastive_loss_grad(Zi, Zj, ds.labels[i] == ds.labels[j], cfg.margin)
        grads_i, _ = feat.backward(ci, gi)
        grads_j, _ = feat.backward(cj, gj)
        try:
            feat.step([a + b for a, b in zip(grads_i, grads_j)], cfg.feature_lr)
        except TrainingError as exc:
            raise TrainingError(str(exc), iteration=it) from exc

        if it % cfg.spectral_period:
            continue
        n_spectral += 1
        F = feat.predict(ds.features)
        try:
            upd = _embed_rows(F, ref_rows, cfg.graph, cfg.K, cfg.skip_trivial,
                              cfg.diffusion_time)
            # without a gap the re-embedded subspace is arbitrary; keep the frame
            rolled = upd.eigengap >= cfg.min_eigengap
            if not rolled:
                T_G = None
            elif cfg.align_features:
                upd, T_G = align_feature_update(prev, upd, anchors, cfg.ransac, rng)
                # a badly conditioned T_G squeezes a direction out of the
                # frame for good; the updated features lost a direction
                if cfg.max_tg_condition is not None and \
                        np.linalg.cond(T_G.linear) > cfg.max_tg_condition:
                    rolled = False
            else:
                T_G = AffineMap.identity(cfg.K)
            if rolled:
                prev = upd.rows(anchors)
                frame = AnchorFrame(anchors, prev)
            rows, emb = _draw_embedded(ds, anchors, tcfg, rng, features=F)
            aligned = align_batch(emb, frame, cfg.ransac, rng)
        except (ConnectivityError, DegenerateSubspaceError, DegenerateGeometryError,
                RobustFitError) as exc:
            raise TrainingError(f"alignment after feature step failed: {exc}",
                                iteration=it) from exc
        Y, cache = spec.forward(F[rows])
        s_loss, g = mse_loss_grad(Y, aligned.coords)
        grads, _ = spec.backward(cache, g)
        try:
            spec.step(grads, cfg.spectral_lr)
        except TrainingError as exc:
            raise TrainingError(str(exc), iteration=it) from exc

        rec = {"iter": it, "spectral_step": n_spectral, "feature_loss": f_loss,
               "spectral_loss": s_loss,
               "target_ms": float(np.mean(np.sum(aligned.coords ** 2, axis=1))),
               "frame_rolled": rolled,
               "tg_deviation": None if T_G is None else _tg_deviation(T_G),
               "align_rmse": aligned.alignment.rmse}
        if cfg.eval_every and n_spectral % cfg.eval_every == 0:
            rec["metrics"] = _joint_metrics(feat, spec, train_eval, val_eval, cfg, C)
        history.append(rec)
        if callback is not None:
            callback(rec)
    return JointResult(feat, spec, history, frame)


def _joint_metrics(feat, spec, train_eval, val_eval, cfg, C) -> dict:
    out = {}
    for name, d in (("train", train_eval), ("val", val_eval)):
        if d is None:
            continue
        F = feat.predict(d.features)
        pred = M.kmeans(spec.predict(F), C, restarts=3, seed=cfg.seed)
        out[f"nmi_{name}"] = M.nmi(d.labels, pred)
        out[f"acc_{name}"] = M.acc(d.labels, pred)
        if name == ("val" if val_eval is not None else "train"):
            try:
                a = embed(build_graph(F, cfg.graph), cfg.K, cfg.graph.laplacian_kind,
                          cfg.skip_trivial, cfg.diffusion_time)
            except ConnectivityError:
                continue
            pred_a = M.kmeans(a.coords, C, restarts=3, seed=cfg.seed)
            out["nmi_analytic"] = M.nmi(d.labels, pred_a)
            out["acc_analytic"] = M.acc(d.labels, pred_a)
    return out
