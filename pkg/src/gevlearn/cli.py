"""Command-line entry points: train, predict, eval, export-detectors, search.

Runs are driven by a flat key=value config file plus --set overrides; every
command writes a resolved copy of its effective configuration next to its
outputs so experiments can be replayed.  All randomness flows from explicit
seeds in the config.  Exit codes: 0 success, 1 compute failure, 2 config or
I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import geneig, ingest, pairsel, pipeline
from .classifier import TrainOptions
from .pipeline import FitConfig, RffSpec

logger = logging.getLogger("gevlearn")

MODES = ("gem", "deep-gem", "gem-rff", "rff", "ensemble")


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected boolean, got {s!r}")


def _parse_list(cast):
    def parse(s: str):
        return [cast(tok) for tok in s.split(",") if tok.strip()]

    return parse


# key -> (parser, default); None default means optional/absent
_SCHEMA = {
    "mode": (str, "gem"),
    "train.path": (str, None),
    "train.format": (str, "csv"),
    "train.labels": (str, None),
    "train.n_features": (int, None),
    "test.path": (str, None),
    "test.format": (str, "csv"),
    "test.labels": (str, None),
    "test.n_features": (int, None),
    "bias_feature": (_parse_bool, False),
    "gamma": (float, 0.1),
    "theta": (float, 1.0),
    "m_max": (int, 3),
    "l2": (float, 1e-3),
    "pairs.strategy": (str, "all"),
    "pairs.seed": (int, 0),
    "pairs.count": (int, None),
    "pairs.file": (str, None),
    "layer2.gamma": (float, None),
    "layer2.theta": (float, None),
    "layer2.m_max": (int, None),
    "rff.dim": (int, 4096),
    "rff.sigma": (float, 1.0),
    "rff.seed": (int, 0),
    "ensemble.size": (int, 5),
    "ensemble.base_seed": (int, 0),
    "standardize": (_parse_bool, True),
    "optimizer.max_iter": (int, 500),
    "optimizer.grad_tol": (float, 1e-6),
    "workers": (int, 1),
    "output.dir": (str, None),
    "search.gamma": (_parse_list(float), None),
    "search.theta": (_parse_list(float), None),
    "search.m_max": (_parse_list(int), None),
    "search.l2": (_parse_list(float), None),
    "search.rff.sigma": (_parse_list(float), None),
    "search.rff.dim": (_parse_list(int), None),
    "search.valid_fraction": (float, 0.2),
    "search.split_seed": (int, 0),
    "search.retrain": (_parse_bool, True),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return raw


class RunConfig:
    """Typed view over the merged config; unknown keys are rejected."""

    def __init__(self, raw: dict):
        for key in raw:
            if key not in _SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
        self.raw = dict(raw)
        self._typed = {}
        for key, (cast, default) in _SCHEMA.items():
            if key in raw:
                try:
                    self._typed[key] = cast(raw[key])
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"bad value for {key}: {raw[key]!r}") from exc
            else:
                self._typed[key] = default
        if self._typed["mode"] not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self._typed["train.format"] not in ingest.FORMATS or (
            self._typed["test.path"] and self._typed["test.format"] not in ingest.FORMATS
        ):
            raise ConfigError(f"dataset format must be one of {ingest.FORMATS}")

    def __getitem__(self, key):
        return self._typed[key]

    def resolved_text(self) -> str:
        lines = []
        for key in sorted(_SCHEMA):
            val = self._typed[key]
            if val is None:
                continue
            if isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, list):
                val = ",".join(str(v) for v in val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


def load_run_config(config_path: str | None, overrides: list[str]) -> RunConfig:
    raw = {}
    if config_path:
        if not os.path.isfile(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        with open(config_path) as fh:
            raw.update(parse_config_text(fh.read(), source=config_path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        raw[key.strip()] = value.strip()
    return RunConfig(raw)


def _require_file(path, what: str) -> None:
    if path is None:
        raise ConfigError(f"missing {what}")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")


def _check_labels_flag(args) -> None:
    if args.format == "idx" and not args.labels:
        raise ConfigError("idx format needs --labels")


def _load_split(cfg: RunConfig, which: str) -> ingest.LabeledDataset:
    ds = ingest.load(
        cfg[f"{which}.path"],
        cfg[f"{which}.format"],
        labels_path=cfg[f"{which}.labels"],
        n_features=cfg[f"{which}.n_features"],
    )
    if cfg["bias_feature"]:
        ds = ds.append_bias()
    return ds


def _fit_config(cfg: RunConfig) -> FitConfig:
    plan = None
    if cfg["pairs.file"]:
        _require_file(cfg["pairs.file"], "pair plan file")
        plan = pairsel.load_plan(cfg["pairs.file"])
    return FitConfig(
        gamma=cfg["gamma"],
        theta=cfg["theta"],
        m_max=cfg["m_max"],
        l2=cfg["l2"],
        plan=plan,
        pair_strategy=cfg["pairs.strategy"],
        pair_seed=cfg["pairs.seed"],
        pair_count=cfg["pairs.count"],
        standardize=cfg["standardize"],
        opts=TrainOptions(max_iter=cfg["optimizer.max_iter"], grad_tol=cfg["optimizer.grad_tol"]),
        workers=cfg["workers"],
    )


def _layer2_config(cfg: RunConfig, base: FitConfig) -> FitConfig:
    kwargs = {}
    if cfg["layer2.gamma"] is not None:
        kwargs["gamma"] = cfg["layer2.gamma"]
    if cfg["layer2.theta"] is not None:
        kwargs["theta"] = cfg["layer2.theta"]
    if cfg["layer2.m_max"] is not None:
        kwargs["m_max"] = cfg["layer2.m_max"]
    return replace(base, **kwargs) if kwargs else base


def _rff_spec(cfg: RunConfig) -> RffSpec:
    return RffSpec(D=cfg["rff.dim"], sigma=cfg["rff.sigma"], seed=cfg["rff.seed"])


def _write_metrics(out_dir: str, name: str, payload: dict) -> None:
    with open(os.path.join(out_dir, f"{name}.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _metrics_lines(tag: str, metrics) -> list[str]:
    return [
        f"{tag}.error_rate = {metrics.error_rate:.6f}",
        f"{tag}.cross_entropy = {metrics.cross_entropy:.4f}",
    ]


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set)
    if args.output_dir:
        cfg.raw["output.dir"] = args.output_dir
        cfg = RunConfig(cfg.raw)
    out_dir = cfg["output.dir"]
    if not out_dir:
        raise ConfigError("output.dir is required")
    _require_file(cfg["train.path"], "training dataset (train.path)")
    if cfg["train.format"] == "idx":
        _require_file(cfg["train.labels"], "training label file (train.labels)")
    if cfg["test.path"]:
        _require_file(cfg["test.path"], "test dataset (test.path)")

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved.conf"), "w") as fh:
        fh.write(cfg.resolved_text())

    train_ds = _load_split(cfg, "train")
    fit_cfg = _fit_config(cfg)
    mode = cfg["mode"]
    if mode == "ensemble":
        models = pipeline.fit_ensemble(
            train_ds, fit_cfg, cfg["ensemble.size"], cfg["ensemble.base_seed"]
        )
        for idx, member in enumerate(models):
            pipeline.save_model(member, os.path.join(out_dir, f"model_{idx}.gvml"))
        subject = models
    elif mode == "deep-gem":
        subject = pipeline.fit_deep_gem(train_ds, fit_cfg, _layer2_config(cfg, fit_cfg))
        pipeline.save_model(subject, os.path.join(out_dir, "model.gvml"))
    else:
        subject = pipeline._fit_mode(train_ds, mode, fit_cfg, _rff_spec(cfg))
        pipeline.save_model(subject, os.path.join(out_dir, "model.gvml"))

    lines = []
    summary = {"mode": mode}
    train_metrics = pipeline.evaluate_model(subject, train_ds)
    lines += _metrics_lines("train", train_metrics)
    summary["train"] = train_metrics.__dict__
    if cfg["test.path"]:
        test_ds = _load_split(cfg, "test")
        test_metrics = pipeline.evaluate_model(subject, test_ds)
        lines += _metrics_lines("test", test_metrics)
        summary["test"] = test_metrics.__dict__
    report = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(report)
    _write_metrics(out_dir, "summary", summary)
    sys.stdout.write(report)
    return 0


def cmd_predict(args) -> int:
    _require_file(args.model, "model file")
    _require_file(args.data, "dataset")
    _check_labels_flag(args)
    os.makedirs(args.out_dir, exist_ok=True)
    model = pipeline.load_model(args.model)
    ds = ingest.load(args.data, args.format, labels_path=args.labels, n_features=args.n_features)
    if args.bias_feature:
        ds = ds.append_bias()
    P = model.predict_proba(ds.X)
    order = sorted(model.label_map.items(), key=lambda kv: kv[1])
    with open(os.path.join(args.out_dir, "probabilities.txt"), "w") as fh:
        fh.write("# classes: " + " ".join(str(orig) for orig, _ in order) + "\n")
        for row in np.atleast_2d(P):
            fh.write(" ".join(f"{p:.12g}" for p in row) + "\n")
    with open(os.path.join(args.out_dir, "resolved.conf"), "w") as fh:
        fh.write(_flags_text(args, ["model", "data", "format", "labels", "n_features", "out_dir"]))
    return 0


def cmd_eval(args) -> int:
    for path in args.model:
        _require_file(path, "model file")
    _require_file(args.data, "dataset")
    _check_labels_flag(args)
    os.makedirs(args.out_dir, exist_ok=True)
    models = [pipeline.load_model(path) for path in args.model]
    ds = ingest.load(args.data, args.format, labels_path=args.labels, n_features=args.n_features)
    if args.bias_feature:
        ds = ds.append_bias()
    metrics = pipeline.evaluate_model(models, ds)
    lines = _metrics_lines("eval", metrics)
    lines.append(f"eval.models = {len(models)}")
    report = "\n".join(lines) + "\n"
    with open(os.path.join(args.out_dir, "report.txt"), "w") as fh:
        fh.write(report)
    _write_metrics(args.out_dir, "summary", {"eval": metrics.__dict__, "models": len(models)})
    with open(os.path.join(args.out_dir, "resolved.conf"), "w") as fh:
        fh.write(_flags_text(args, ["model", "data", "format", "labels", "n_features", "out_dir"]))
    sys.stdout.write(report)
    return 0


def _detector_image(vector: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Diverging red/white/blue image with the color scale symmetric about 0."""
    arr = vector.reshape(shape)
    peak = np.abs(arr).max()
    t = arr / peak if peak > 0 else np.zeros_like(arr)
    rgb = np.empty(shape + (3,), dtype=np.uint8)
    fade = np.clip(255 * (1 - np.abs(t)), 0, 255).astype(np.uint8)
    pos = t >= 0
    rgb[..., 0] = np.where(pos, 255, fade)
    rgb[..., 1] = fade
    rgb[..., 2] = np.where(pos, fade, 255)
    return rgb


def cmd_export_detectors(args) -> int:
    _require_file(args.model, "model file")
    model = pipeline.load_model(args.model)
    if not model.stages or not isinstance(model.stages[0], pipeline.GemStage):
        raise ConfigError("model's first stage is not an eigenvector layer on raw input")
    stage = model.stages[0]
    os.makedirs(args.out_dir, exist_ok=True)
    geneig.dump_detectors(stage.detectors, os.path.join(args.out_dir, "detectors.txt"))
    if args.layout_out:
        with open(args.layout_out, "w") as fh:
            fh.write(stage.layout.describe())

    if args.image_shape:
        try:
            h, w = (int(tok) for tok in args.image_shape.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"--image-shape expects HxW, got {args.image_shape!r}") from exc
        if h * w != stage.in_width:
            logger.warning(
                "image shape %dx%d does not factor width %d; text dump only",
                h, w, stage.in_width,
            )
        else:
            from PIL import Image

            for idx, det in enumerate(stage.detectors):
                rgb = _detector_image(det.vector, (h, w))
                name = f"det{idx:03d}_pair_{det.pair[0]}_{det.pair[1]}_rank{det.rank}.png"
                Image.fromarray(rgb, "RGB").save(os.path.join(args.out_dir, name))
    with open(os.path.join(args.out_dir, "resolved.conf"), "w") as fh:
        fh.write(_flags_text(args, ["model", "out_dir", "image_shape", "layout_out"]))
    return 0


def cmd_search(args) -> int:
    cfg = load_run_config(args.config, args.set)
    if args.output_dir:
        cfg.raw["output.dir"] = args.output_dir
        cfg = RunConfig(cfg.raw)
    out_dir = cfg["output.dir"]
    if not out_dir:
        raise ConfigError("output.dir is required")
    _require_file(cfg["train.path"], "training dataset (train.path)")
    grid = {}
    for key, target in (
        ("search.gamma", "gamma"),
        ("search.theta", "theta"),
        ("search.m_max", "m_max"),
        ("search.l2", "l2"),
        ("search.rff.sigma", "rff.sigma"),
        ("search.rff.dim", "rff.D"),
    ):
        if cfg[key]:
            grid[target] = cfg[key]
    if not grid:
        raise ConfigError("search needs at least one search.* list")
    mode = cfg["mode"]
    if mode == "ensemble":
        raise ConfigError("search does not support ensemble mode")

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved.conf"), "w") as fh:
        fh.write(cfg.resolved_text())

    train_ds = _load_split(cfg, "train")
    fit_cfg = _fit_config(cfg)
    result = pipeline.grid_search(
        train_ds,
        fit_cfg,
        grid,
        mode=mode,
        rff_spec=_rff_spec(cfg) if mode in ("gem-rff", "rff") else None,
        layer2_cfg=_layer2_config(cfg, fit_cfg) if mode == "deep-gem" else None,
        valid_fraction=cfg["search.valid_fraction"],
        split_seed=cfg["search.split_seed"],
        retrain=cfg["search.retrain"],
    )
    pipeline.save_model(result.best_model, os.path.join(out_dir, "model.gvml"))
    lines = [f"best.{key} = {val}" for key, val in sorted(result.best_params.items())]
    lines += _metrics_lines("valid", result.best_metrics)
    if cfg["test.path"]:
        _require_file(cfg["test.path"], "test dataset (test.path)")
        test_ds = _load_split(cfg, "test")
        test_metrics = pipeline.evaluate_model(result.best_model, test_ds)
        lines += _metrics_lines("test", test_metrics)
    report = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(report)
    _write_metrics(
        out_dir,
        "search_report",
        {"best_params": result.best_params, "records": result.records},
    )
    sys.stdout.write(report)
    return 0


def _flags_text(args, names: list[str]) -> str:
    lines = []
    for name in names:
        val = getattr(args, name, None)
        if val is None:
            continue
        if isinstance(val, list):
            val = ",".join(str(v) for v in val)
        lines.append(f"{name} = {val}")
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gevlearn",
        description="Multiclass feature learning from generalized eigenvectors "
        "of class-conditional second moments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("train", cmd_train), ("search", cmd_search)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--output-dir", help="override output.dir")
        p.set_defaults(func=fn)

    p = sub.add_parser("predict")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", default="csv", choices=ingest.FORMATS)
    p.add_argument("--labels", help="label file for idx format")
    p.add_argument("--n-features", type=int, default=None)
    p.add_argument("--bias-feature", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval")
    p.add_argument("--model", action="append", required=True,
                   help="model file; repeat for a geometric-mean ensemble")
    p.add_argument("--data", required=True)
    p.add_argument("--format", default="csv", choices=ingest.FORMATS)
    p.add_argument("--labels", help="label file for idx format")
    p.add_argument("--n-features", type=int, default=None)
    p.add_argument("--bias-feature", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-detectors")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--image-shape", help="HxW factorization of the input width, e.g. 28x28")
    p.add_argument("--layout-out", help="write the feature layout as text")
    p.set_defaults(func=cmd_export_detectors)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ingest.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # compute failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
