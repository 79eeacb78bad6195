"""End-to-end training, inference, model persistence, and grid search.

A fitted model is a chain of stages followed by a multinomial logit
classifier.  A stage is either a cosine feature map (regenerated from its
seed) or an eigenvector feature layer (detector bank + expansion +
standardization statistics).  Plain fits use one eigenvector layer; stacked
fits feed the expanded representation of one layer into a second; kernel
fits put the cosine map in front.

Every fit is a pure function of the data, the hyperparameters, and the
seeds, so identical configurations serialize to byte-identical files.
"""

from __future__ import annotations

import itertools
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import classifier as clf_mod
from . import featmap, geneig, moments, pairsel, rff
from .classifier import Metrics, MultiLogitModel, TrainOptions
from .featmap import FeatureLayout, Standardizer
from .geneig import Detector
from .ingest import LabeledDataset, split as split_dataset
from .pairsel import PairPlan

MODEL_MAGIC = b"GVML"
MODEL_VERSION = 1

logger = logging.getLogger("gevlearn")


class EmptyDetectorBankError(RuntimeError):
    """No eigenvalue cleared the selection threshold for any pair."""


@dataclass
class FitConfig:
    """Hyperparameters for one eigenvector feature layer plus the classifier."""

    gamma: float = 0.1
    theta: float = 1.0
    m_max: int = 3
    l2: float = 1e-3
    plan: PairPlan | None = None
    pair_strategy: str = "all"
    pair_seed: int = 0
    pair_count: int | None = None
    standardize: bool = True
    opts: TrainOptions = field(default_factory=TrainOptions)
    workers: int = 1


@dataclass(frozen=True)
class RffSpec:
    D: int
    sigma: float
    seed: int = 0


def resolve_plan(cfg: FitConfig, k: int) -> PairPlan:
    if cfg.plan is not None:
        return cfg.plan
    if cfg.pair_strategy == "all":
        return pairsel.all_pairs(k)
    if cfg.pair_strategy == "hypercube":
        return pairsel.hypercube_pairs(k, cfg.pair_seed)
    if cfg.pair_strategy in ("random", "stratified"):
        count = cfg.pair_count if cfg.pair_count is not None else min(k * (k - 1), 4 * k)
        return pairsel.random_pairs(
            k, count, cfg.pair_seed, stratified=cfg.pair_strategy == "stratified"
        )
    raise ValueError(f"unknown pair strategy {cfg.pair_strategy!r}")


# ---------------------------------------------------------------------------
# stages


@dataclass
class RffStage:
    d: int
    D: int
    sigma: float
    seed: int

    def __post_init__(self):
        self._map = None

    @property
    def in_width(self) -> int:
        return self.d

    @property
    def out_width(self) -> int:
        return self.D

    def apply(self, X):
        if self._map is None:
            self._map = rff.sample_map(self.d, self.D, self.sigma, self.seed)
        return rff.apply(self._map, X)


@dataclass
class GemStage:
    detectors: list[Detector]
    in_width: int
    passthrough: bool = False
    std_mean: np.ndarray | None = None
    std_scale: np.ndarray | None = None

    def __post_init__(self):
        self._layout = FeatureLayout(self.detectors, self.in_width, self.passthrough)

    @property
    def layout(self) -> FeatureLayout:
        return self._layout

    @property
    def out_width(self) -> int:
        return self._layout.width

    def apply(self, X):
        out = self._layout.expand(X)
        if self.std_mean is not None:
            out = (out - self.std_mean) / self.std_scale
        return out


@dataclass
class GemModel:
    stages: list
    clf: MultiLogitModel
    hyper: dict
    label_map: dict
    meta: dict = field(default_factory=dict)
    version: int = MODEL_VERSION

    def __post_init__(self):
        width = None
        for stage in self.stages:
            if width is not None and stage.in_width != width:
                raise ValueError(
                    f"stage input width {stage.in_width} != previous output {width}"
                )
            width = stage.out_width
        if width is not None and self.clf.width != width:
            raise ValueError(f"classifier width {self.clf.width} != chain output {width}")

    @property
    def input_dim(self) -> int:
        return self.stages[0].in_width if self.stages else self.clf.width

    @property
    def k(self) -> int:
        return self.clf.k

    def transform(self, X):
        for stage in self.stages:
            X = stage.apply(X)
        return X

    def predict_proba(self, X) -> np.ndarray:
        return clf_mod.predict_proba(self.clf, self.transform(X))

    def internal_labels(self, original_labels) -> np.ndarray:
        out = np.empty(len(original_labels), dtype=np.int64)
        for idx, orig in enumerate(original_labels):
            if orig not in self.label_map:
                raise ValueError(f"label {orig!r} was not present at training time")
            out[idx] = self.label_map[orig]
        return out


# ---------------------------------------------------------------------------
# fitting


def _class_masks(y: np.ndarray, k: int) -> list[np.ndarray]:
    return [y == m for m in range(1, k + 1)]


def _fit_gem_layer(
    X, y: np.ndarray, k: int, cfg: FitConfig
) -> tuple[GemStage, np.ndarray, list[tuple[int, int]]]:
    d = X.shape[1]
    stats = moments.accumulate_batch(moments.MomentStats.empty(d, k), X, y)
    plan = resolve_plan(cfg, k)

    mats: dict[int, np.ndarray] = {}
    for m in range(1, k + 1):
        if stats.counts[m - 1] > 0:
            mats[m] = moments.finalize(stats, m)

    usable = []
    for i, j in plan.pairs:
        if i in mats and j in mats:
            usable.append((i, j))
        else:
            logger.warning("skipping pair (%d,%d): empty class", i, j)
    if not usable:
        raise ValueError("no class pair has data on both sides")

    masks = _class_masks(y, k)

    def solve_one(pair: tuple[int, int]) -> list[Detector]:
        i, j = pair
        N = moments.regularize(mats[j], cfg.gamma, source_class=j).matrix
        eigs = geneig.solve_pair(mats[i], N, pair=(i, j))
        return geneig.select_detectors(
            eigs, cfg.theta, cfg.m_max, numerator_data=X[masks[i - 1]]
        )

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            per_pair = list(pool.map(solve_one, usable))
    else:
        per_pair = [solve_one(pair) for pair in usable]

    bank = [det for dets in per_pair for det in dets]
    if not bank:
        raise EmptyDetectorBankError(
            f"no eigenvalue reached theta={cfg.theta}; lower theta or check the data"
        )

    layout = FeatureLayout(bank, d)
    phi = layout.expand(X)
    if cfg.standardize:
        std = Standardizer.fit(phi)
        stage = GemStage(
            detectors=bank, in_width=d, std_mean=std.mean, std_scale=std.scale
        )
        return stage, std.transform(phi), usable
    return GemStage(detectors=bank, in_width=d), phi, usable


def _hyper_record(cfg: FitConfig, pairs_used: list | None = None) -> dict:
    rec = {
        "gamma": cfg.gamma,
        "theta": cfg.theta,
        "m_max": cfg.m_max,
        "l2": cfg.l2,
        "pair_strategy": cfg.pair_strategy,
        "pair_seed": cfg.pair_seed,
        "pair_count": cfg.pair_count,
        "standardize": cfg.standardize,
    }
    if pairs_used is not None:
        rec["pairs"] = [list(p) for p in pairs_used]
    return rec


def _finish(data: LabeledDataset, stages: list, feats: np.ndarray, cfg: FitConfig, hyper: dict) -> GemModel:
    model_clf = clf_mod.train(feats, data.y, l2=cfg.l2, opts=cfg.opts, k=data.k)
    train_metrics = clf_mod.evaluate(model_clf, feats, data.y)
    model = GemModel(
        stages=stages,
        clf=model_clf,
        hyper=hyper,
        label_map=dict(data.label_map),
        meta={
            "n_train": data.n,
            "k": data.k,
            "train_error": train_metrics.error_rate,
            "train_cross_entropy": train_metrics.cross_entropy,
        },
    )
    return model


def fit_gem(data: LabeledDataset, cfg: FitConfig) -> GemModel:
    """Moments, per-pair eigensolves, selection, expansion, classifier."""
    if data.k < 2:
        raise ValueError(f"need k >= 2 classes, got {data.k}")
    stage, feats, used = _fit_gem_layer(data.X, data.y, data.k, cfg)
    hyper = {"mode": "gem", **_hyper_record(cfg, used)}
    return _finish(data, [stage], feats, cfg, hyper)


def fit_stacked_gem(data: LabeledDataset, layer_cfgs: list[FitConfig]) -> GemModel:
    """Stack eigenvector layers, each fit on the previous layer's output.

    Two layers is the recommended depth; deeper stacks are allowed but tend
    to generalize worse, so going past two is a deliberate choice.
    """
    if data.k < 2:
        raise ValueError(f"need k >= 2 classes, got {data.k}")
    if not layer_cfgs:
        raise ValueError("need at least one layer config")
    if len(layer_cfgs) > 2:
        logger.warning("stacking %d eigenvector layers; depth 2 is the sweet spot",
                       len(layer_cfgs))
    stages, layers = [], []
    feats = data.X
    for cfg in layer_cfgs:
        stage, feats, used = _fit_gem_layer(feats, data.y, data.k, cfg)
        stages.append(stage)
        layers.append(_hyper_record(cfg, used))
    last = layer_cfgs[-1]
    if len(layers) == 1:
        hyper = {"mode": "gem", **layers[0]}
    else:
        hyper = {"mode": "deep-gem", "l2": last.l2}
        hyper.update({f"layer{idx + 1}": rec for idx, rec in enumerate(layers)})
    return _finish(data, stages, feats, last, hyper)


def fit_deep_gem(data: LabeledDataset, cfg1: FitConfig, cfg2: FitConfig) -> GemModel:
    """Two stacked eigenvector layers; the second sees the first's output."""
    return fit_stacked_gem(data, [cfg1, cfg2])


def fit_gem_rff(data: LabeledDataset, rff_spec: RffSpec, cfg: FitConfig) -> GemModel:
    """Cosine map first, then the eigenvector layer in the mapped space."""
    if data.k < 2:
        raise ValueError(f"need k >= 2 classes, got {data.k}")
    rstage = RffStage(d=data.d, D=rff_spec.D, sigma=rff_spec.sigma, seed=rff_spec.seed)
    Z = rstage.apply(data.X)
    gstage, feats, used = _fit_gem_layer(Z, data.y, data.k, cfg)
    hyper = {
        "mode": "gem-rff",
        "rff": {"D": rff_spec.D, "sigma": rff_spec.sigma, "seed": rff_spec.seed},
        **_hyper_record(cfg, used),
    }
    return _finish(data, [rstage, gstage], feats, cfg, hyper)


def fit_rff(data: LabeledDataset, rff_spec: RffSpec, cfg: FitConfig) -> GemModel:
    """Baseline: cosine features straight into the classifier."""
    rstage = RffStage(d=data.d, D=rff_spec.D, sigma=rff_spec.sigma, seed=rff_spec.seed)
    Z = rstage.apply(data.X)
    hyper = {
        "mode": "rff",
        "rff": {"D": rff_spec.D, "sigma": rff_spec.sigma, "seed": rff_spec.seed},
        "l2": cfg.l2,
    }
    return _finish(data, [rstage], Z, cfg, hyper)


def fit_ensemble(
    data: LabeledDataset, cfg: FitConfig, n_members: int, base_seed: int
) -> list[GemModel]:
    """Fit n_members models whose pair plans differ via seeds base_seed+i.

    With cfg.workers > 1 the member fits run in a thread pool (each member
    then solves its pairs serially); results keep member order either way.
    """
    if cfg.pair_strategy not in ("hypercube", "random", "stratified"):
        raise ValueError("ensembles need a randomized pair strategy so members differ")
    if n_members < 1:
        raise ValueError(f"n_members must be >= 1, got {n_members}")
    member_cfgs = [
        replace(cfg, pair_seed=base_seed + m, plan=None, workers=1)
        for m in range(n_members)
    ]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(lambda c: fit_gem(data, c), member_cfgs))
    return [fit_gem(data, member_cfg) for member_cfg in member_cfgs]


# ---------------------------------------------------------------------------
# evaluation


def predict_dataset(model: GemModel, data: LabeledDataset) -> np.ndarray:
    return model.predict_proba(data.X)


def evaluate_model(model_or_members, data: LabeledDataset) -> Metrics:
    """Metrics on a dataset; lists of models are combined by geometric mean.

    The dataset's labels are remapped through the model's training-time
    label map, so files with a different label coding evaluate correctly.
    """
    members = model_or_members if isinstance(model_or_members, (list, tuple)) else [model_or_members]
    P = clf_mod.ensemble_geomean([m.predict_proba(data.X) for m in members])
    y_int = members[0].internal_labels(data.original_labels())
    return clf_mod.evaluate_proba(P, y_int)


# ---------------------------------------------------------------------------
# persistence

_STAGE_RFF = 1
_STAGE_GEM = 2


def _pack_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _stage_payload(stage) -> tuple[int, bytes]:
    if isinstance(stage, RffStage):
        return _STAGE_RFF, struct.pack("<IIdQ", stage.d, stage.D, stage.sigma, stage.seed)
    if isinstance(stage, GemStage):
        parts = [
            struct.pack(
                "<IBBI",
                stage.in_width,
                int(stage.passthrough),
                int(stage.std_mean is not None),
                len(stage.detectors),
            )
        ]
        for det in stage.detectors:
            parts.append(struct.pack("<IIId", det.pair[0], det.pair[1], det.rank, det.eigenvalue))
            parts.append(np.ascontiguousarray(det.vector, dtype="<f8").tobytes())
        if stage.std_mean is not None:
            parts.append(np.ascontiguousarray(stage.std_mean, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(stage.std_scale, dtype="<f8").tobytes())
        return _STAGE_GEM, b"".join(parts)
    raise TypeError(f"unknown stage type {type(stage)!r}")


def _read_stage(tag: int, payload: bytes):
    if tag == _STAGE_RFF:
        d, D, sigma, seed = struct.unpack("<IIdQ", payload)
        return RffStage(d=d, D=D, sigma=sigma, seed=seed)
    if tag == _STAGE_GEM:
        off = 0
        in_width, passthrough, has_std, n_det = struct.unpack_from("<IBBI", payload, off)
        off += struct.calcsize("<IBBI")
        dets = []
        for _ in range(n_det):
            i, j, rank, lam = struct.unpack_from("<IIId", payload, off)
            off += struct.calcsize("<IIId")
            vec = np.frombuffer(payload, dtype="<f8", count=in_width, offset=off).copy()
            off += 8 * in_width
            dets.append(Detector(vector=vec, eigenvalue=lam, pair=(i, j), rank=rank))
        std_mean = std_scale = None
        if has_std:
            out_width = featmap.FEATURES_PER_DETECTOR * n_det + (in_width if passthrough else 0)
            std_mean = np.frombuffer(payload, dtype="<f8", count=out_width, offset=off).copy()
            off += 8 * out_width
            std_scale = np.frombuffer(payload, dtype="<f8", count=out_width, offset=off).copy()
            off += 8 * out_width
        return GemStage(
            detectors=dets,
            in_width=in_width,
            passthrough=bool(passthrough),
            std_mean=std_mean,
            std_scale=std_scale,
        )
    raise ValueError(f"unknown stage tag {tag}")


def model_to_bytes(model: GemModel) -> bytes:
    """Sectioned little-endian container; see the format notes in the README."""
    head_meta = _pack_json(
        {
            "hyper": model.hyper,
            "label_map": [[orig, internal] for orig, internal in sorted(
                model.label_map.items(), key=lambda kv: kv[1]
            )],
            "meta": model.meta,
        }
    )
    out = [MODEL_MAGIC, struct.pack("<II", model.version, len(model.stages))]
    out.append(struct.pack("<I", len(head_meta)))
    out.append(head_meta)
    for stage in model.stages:
        tag, payload = _stage_payload(stage)
        out.append(struct.pack("<IQ", tag, len(payload)))
        out.append(payload)
    W = np.ascontiguousarray(model.clf.weights, dtype="<f8")
    clf_meta = _pack_json({"l2": model.clf.l2, "meta": model.clf.meta})
    out.append(struct.pack("<II", model.clf.k, model.clf.width))
    out.append(W.tobytes())
    out.append(struct.pack("<I", len(clf_meta)))
    out.append(clf_meta)
    return b"".join(out)


def model_from_bytes(buf: bytes) -> GemModel:
    if buf[:4] != MODEL_MAGIC:
        raise ValueError(f"not a model container (magic {buf[:4]!r})")
    version, n_stages = struct.unpack_from("<II", buf, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    off = 12
    (meta_len,) = struct.unpack_from("<I", buf, off)
    off += 4
    head = json.loads(buf[off : off + meta_len].decode("utf-8"))
    off += meta_len
    stages = []
    for _ in range(n_stages):
        tag, plen = struct.unpack_from("<IQ", buf, off)
        off += struct.calcsize("<IQ")
        stages.append(_read_stage(tag, buf[off : off + plen]))
        off += plen
    k, width = struct.unpack_from("<II", buf, off)
    off += 8
    W = np.frombuffer(buf, dtype="<f8", count=k * (width + 1), offset=off).reshape(
        k, width + 1
    ).copy()
    off += 8 * k * (width + 1)
    (clf_meta_len,) = struct.unpack_from("<I", buf, off)
    off += 4
    clf_info = json.loads(buf[off : off + clf_meta_len].decode("utf-8"))
    label_map = {}
    for orig, internal in head["label_map"]:
        key = tuple(orig) if isinstance(orig, list) else orig
        label_map[key] = internal
    return GemModel(
        stages=stages,
        clf=MultiLogitModel(weights=W, l2=clf_info["l2"], meta=clf_info["meta"]),
        hyper=head["hyper"],
        label_map=label_map,
        meta=head["meta"],
        version=version,
    )


def save_model(model: GemModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> GemModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# hyperparameter search


@dataclass
class SearchResult:
    best_params: dict
    best_model: GemModel
    best_metrics: Metrics
    records: list


def _fit_mode(data, mode, cfg, rff_spec=None, layer2_cfg=None):
    if mode == "gem":
        return fit_gem(data, cfg)
    if mode == "deep-gem":
        return fit_deep_gem(data, cfg, layer2_cfg if layer2_cfg is not None else cfg)
    if mode == "gem-rff":
        if rff_spec is None:
            raise ValueError("gem-rff mode needs an RffSpec")
        return fit_gem_rff(data, rff_spec, cfg)
    if mode == "rff":
        if rff_spec is None:
            raise ValueError("rff mode needs an RffSpec")
        return fit_rff(data, rff_spec, cfg)
    raise ValueError(f"unknown mode {mode!r}")


def _apply_params(cfg: FitConfig, rff_spec, params: dict):
    cfg_fields = {"gamma", "theta", "m_max", "l2"}
    cfg_kwargs = {key: val for key, val in params.items() if key in cfg_fields}
    new_cfg = replace(cfg, **cfg_kwargs) if cfg_kwargs else cfg
    new_spec = rff_spec
    if rff_spec is not None and ("rff.sigma" in params or "rff.D" in params):
        new_spec = RffSpec(
            D=int(params.get("rff.D", rff_spec.D)),
            sigma=float(params.get("rff.sigma", rff_spec.sigma)),
            seed=rff_spec.seed,
        )
    return new_cfg, new_spec


def grid_search(
    data: LabeledDataset,
    base_cfg: FitConfig,
    param_grid: dict,
    mode: str = "gem",
    rff_spec: RffSpec | None = None,
    layer2_cfg: FitConfig | None = None,
    valid_fraction: float = 0.2,
    split_seed: int = 0,
    retrain: bool = True,
) -> SearchResult:
    """Exhaustive grid search selected by validation cross-entropy.

    With retrain=True the winning parameters are refit on the full data
    (train plus validation); otherwise the validation-phase model is kept.
    """
    if not 0 < valid_fraction < 1:
        raise ValueError(f"valid_fraction must be in (0,1), got {valid_fraction}")
    if not param_grid:
        raise ValueError("empty parameter grid")
    keys = sorted(param_grid.keys())
    parts = split_dataset(
        data, {"fit": 1.0 - valid_fraction, "valid": valid_fraction}, seed=split_seed
    )
    records = []
    best = None
    for values in itertools.product(*(param_grid[key] for key in keys)):
        params = dict(zip(keys, values))
        cfg, spec = _apply_params(base_cfg, rff_spec, params)
        try:
            model = _fit_mode(parts["fit"], mode, cfg, spec, layer2_cfg)
        except (EmptyDetectorBankError, geneig.NotPositiveDefiniteError) as exc:
            logger.warning("grid point %s failed: %s", params, exc)
            records.append({"params": params, "error": str(exc)})
            continue
        metrics = evaluate_model(model, parts["valid"])
        records.append(
            {
                "params": params,
                "valid_error": metrics.error_rate,
                "valid_cross_entropy": metrics.cross_entropy,
            }
        )
        if best is None or metrics.cross_entropy < best[0]:
            best = (metrics.cross_entropy, params, model, metrics)
    if best is None:
        raise RuntimeError("every grid point failed")
    _, best_params, best_model, best_metrics = best
    if retrain:
        cfg, spec = _apply_params(base_cfg, rff_spec, best_params)
        best_model = _fit_mode(data, mode, cfg, spec, layer2_cfg)
    return SearchResult(
        best_params=best_params,
        best_model=best_model,
        best_metrics=best_metrics,
        records=records,
    )
