"""Command-line front end: synthesis, segmentation, training, evaluation.

Subcommands
-----------
synth      generate a synthetic benchmark dataset (images + annotations)
segment    run the coarse-to-fine segmenter and dump probability maps
pipeline   run candidate generation + ranking + classification per image
train      fit ranker and classifier on the even-position split, save a bundle
eval       score a trained bundle on the odd-position split
ablate     retrain with single feature blocks removed and tabulate the drops
visualize  overlay the top-q candidate masks and the face box on each image

Configuration comes from flags, optionally seeded by a key=value config file
(`--config run.cfg`); a flag given on the command line always wins over the
file.  Keys use the flag spelling without the leading dashes, for example
`backend-coarse = oracle:sigma=0.05`.  All randomness derives from `--seed`.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
files), 3 contract violation (invariant broken while computing).  Error text
goes to stderr.

`segment` writes, per image, under --out:
    coarse/<id>__full.fpm      the coarse full-image map
    fine/<id>__<window>.fpm    one map per refinement window
    fused/<id>__full.fpm       the stitched coarse-to-fine result
Pointing `--backend-coarse file:out/coarse --backend-fine file:out/fine` at
these directories replays the run without the oracle.

`pipeline` writes one JSON file per image with the schema
    {
      "image_id": str,
      "dims": [height, width],
      "predicted_class": str,
      "class_scores": {class name: float},      # max over kept candidates
      "candidates": [                           # rank order, length <= q
        {"bbox": [x0, y0, x1, y1], "label": str, "source": str,
         "rank_score": float, "fallback": bool,
         "class_scores": {class name: float}}
      ]
    }
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import SegBackendSpec, WindowKey, RecordingBackend, make_backend
from .candidates import CandidateParams, generate_candidates
from .classifier import load_bundle, save_bundle, score_image
from .coarse2fine import RefineParams
from .context import context_feature
from .core import ContractError, DataError, ImageU8
from .dataset import (
    SynthSpec,
    _atomic_write,
    annotation_path,
    dataset_label_set,
    generate_dataset,
    list_scene_ids,
    load_scene,
    read_annotation,
    split_scene_ids,
    write_fpm,
    write_image,
)
from .evaluation import SINGLE_BLOCK_ROWS, ablation_study, evaluate, oracle_study
from .parallel import parallel_map
from .pipeline import (
    PipelineConfig,
    collect_records,
    eval_features,
    rank_record,
    segment_image,
    train_pipeline,
)
from .ranking import rank_and_prune


class UsageError(Exception):
    """Bad invocation: unknown flag, missing argument, malformed value."""


class _Parser(argparse.ArgumentParser):
    # argparse wants to exit(2) on bad flags; route through UsageError so
    # main() can keep the documented code assignment (usage errors are 1).
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


_REFINE = RefineParams()
_CANDS = CandidateParams()
_PIPE = PipelineConfig()

_DEFAULTS = {
    "data": None,
    "model": None,
    "out": None,
    "backend_coarse": "oracle",
    "backend_fine": "oracle",
    "m": _REFINE.m,
    "p": _REFINE.p,
    "window_frac": _REFINE.window_side_fraction,
    "l": _CANDS.l,
    "q": _PIPE.q,
    "lam": _PIPE.lam,
    "seed": 0,
    "jobs": 0,  # 0 = one worker per logical CPU
    "ablate": ",".join(SINGLE_BLOCK_ROWS),
    "classes": SynthSpec.classes,
    "per_class": SynthSpec.per_class,
    "side": SynthSpec.side,
    "clutter": SynthSpec.clutter,
}

_CONVERT = {
    "data": str,
    "model": str,
    "out": str,
    "backend_coarse": str,
    "backend_fine": str,
    "m": int,
    "p": int,
    "window_frac": float,
    "l": int,
    "q": int,
    "lam": float,
    "seed": int,
    "jobs": int,
    "ablate": str,
    "classes": int,
    "per_class": int,
    "side": int,
    "clutter": int,
}


@dataclass
class RunConfig:
    """Merged view of defaults, config file, and flags for one invocation."""

    subcommand: str
    data: str | None
    model: str | None
    out: str | None
    backend_coarse: str
    backend_fine: str
    m: int
    p: int
    window_frac: float
    l: int
    q: int
    lam: float
    seed: int
    jobs: int
    ablate: str
    classes: int
    per_class: int
    side: int
    clutter: int
    oracle_regions: bool = False

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            coarse=SegBackendSpec.parse(self.backend_coarse, role="coarse"),
            fine=SegBackendSpec.parse(self.backend_fine, role="fine"),
            refine=RefineParams(
                m=self.m, p=self.p, window_side_fraction=self.window_frac
            ),
            candidates=CandidateParams(l=self.l),
            q=self.q,
            lam=self.lam,
            seed=self.seed,
        )

    def worker_count(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)


def _read_config_file(path: str) -> dict:
    """key=value lines; '#' starts a comment; keys spelled like the flags."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read config file {path}: {e}") from e
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in _CONVERT:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        try:
            values[key] = _CONVERT[key](value)
        except ValueError as e:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return values


def _merge(args: argparse.Namespace) -> RunConfig:
    from_file = _read_config_file(args.config) if args.config else {}
    merged = {}
    for key, default in _DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in from_file:
            merged[key] = from_file[key]
        else:
            merged[key] = default
    return RunConfig(
        subcommand=args.subcommand,
        oracle_regions=bool(getattr(args, "oracle_regions", False)),
        **merged,
    )


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"missing required flag {flag}")
    return value


def _build_pipeline_config(cfg: RunConfig) -> PipelineConfig:
    # A bad knob value at this point came from the invocation, not the data.
    try:
        return cfg.pipeline_config()
    except ContractError as e:
        raise UsageError(str(e)) from e


def _parse_ablate(text: str) -> tuple[str, ...]:
    names = tuple(part.strip() for part in text.split(",") if part.strip())
    if not names:
        raise UsageError("--ablate needs at least one block name")
    for name in names:
        if name not in SINGLE_BLOCK_ROWS:
            raise UsageError(
                f"unknown feature block {name!r}; choose from "
                + ",".join(SINGLE_BLOCK_ROWS)
            )
    return names


def _write_json(path: str, text: str) -> None:
    _atomic_write(Path(path), text.encode("utf-8"))


def build_parser() -> _Parser:
    parser = _Parser(prog="actionseg", description=__doc__.split("\n", 1)[0])
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    sub.required = True

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key=value config file; flags win")
    shared.add_argument("--seed", type=int, help="root seed for all randomness")
    shared.add_argument("--jobs", type=int, help="worker processes (default: CPUs)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--data", help="dataset directory")
    run.add_argument("--model", help="model bundle path")
    run.add_argument("--out", help="output file or directory")
    run.add_argument("--backend-coarse", dest="backend_coarse", metavar="SPEC",
                     help="oracle[:sigma=..,blur=..,stride=..] or file:<dir>")
    run.add_argument("--backend-fine", dest="backend_fine", metavar="SPEC",
                     help="same grammar as --backend-coarse")
    run.add_argument("--m", type=int, help="max refinement windows")
    run.add_argument("--p", type=int, help="min peak separation in pixels")
    run.add_argument("--window-frac", dest="window_frac", type=float,
                     help="window side as a fraction of max(H, W)")
    run.add_argument("--l", type=int, help="maxima kept for threshold regions")
    run.add_argument("--q", type=int, help="candidates kept after ranking")
    run.add_argument("--lambda", dest="lam", type=float,
                     help="regularization for ranker and classifier")

    p_synth = sub.add_parser("synth", parents=[shared],
                             help="generate a synthetic dataset")
    p_synth.add_argument("--out", help="dataset directory to create")
    p_synth.add_argument("--classes", type=int, help="number of classes (2-5)")
    p_synth.add_argument("--per-class", dest="per_class", type=int,
                         help="scenes per class")
    p_synth.add_argument("--side", type=int, help="square image side in pixels")
    p_synth.add_argument("--clutter", type=int, help="distractor shapes per scene")

    sub.add_parser("segment", parents=[shared, run],
                   help="write coarse, fine, and fused probability maps")
    sub.add_parser("pipeline", parents=[shared, run],
                   help="write per-image candidate and score JSON")
    sub.add_parser("train", parents=[shared, run],
                   help="train on the even-position split and save a bundle")
    sub.add_parser("eval", parents=[shared, run],
                   help="evaluate a bundle on the odd-position split")
    p_ablate = sub.add_parser("ablate", parents=[shared, run],
                              help="retrain with blocks removed and compare")
    p_ablate.add_argument("--ablate", metavar="BLOCKS",
                          help="comma list from G,C,F,Face,Obj")
    p_ablate.add_argument("--oracle-regions", dest="oracle_regions",
                          action="store_true",
                          help="study feature regimes on ground-truth regions "
                               "instead of ablating blocks")
    sub.add_parser("visualize", parents=[shared, run],
                   help="write candidate overlay images")
    return parser


# ---------------------------------------------------------------- handlers


def _cmd_synth(cfg: RunConfig) -> int:
    out = _require(cfg.out, "--out")
    try:
        spec = SynthSpec(classes=cfg.classes, side=cfg.side,
                         per_class=cfg.per_class, seed=cfg.seed,
                         clutter=cfg.clutter)
    except ContractError as e:
        raise UsageError(str(e)) from e
    ids = generate_dataset(spec, out, jobs=cfg.worker_count())
    print(f"wrote {len(ids)} scenes to {out}")
    return 0


def _segment_task(args) -> str:
    data_dir, image_id, pcfg, labels, out_dir = args
    image, annotation = load_scene(data_dir, image_id)
    coarse_backend = RecordingBackend(
        make_backend(pcfg.coarse, labels, pcfg.seed), os.path.join(out_dir, "coarse")
    )
    fine_backend = RecordingBackend(
        make_backend(pcfg.fine, labels, pcfg.seed), os.path.join(out_dir, "fine")
    )
    _, fused = segment_image(
        image, annotation, image_id, coarse_backend, fine_backend, pcfg.refine
    )
    fused_path = Path(out_dir) / "fused" / WindowKey(image_id).filename
    fused_path.parent.mkdir(parents=True, exist_ok=True)
    write_fpm(fused_path, fused)
    return image_id


def _cmd_segment(cfg: RunConfig) -> int:
    data = _require(cfg.data, "--data")
    out = _require(cfg.out, "--out")
    pcfg = _build_pipeline_config(cfg)
    ids = list_scene_ids(data)
    annotations = [read_annotation(annotation_path(data, i)) for i in ids]
    labels = dataset_label_set(annotations)
    done = parallel_map(
        _segment_task,
        [(data, i, pcfg, labels, out) for i in ids],
        cfg.worker_count(),
    )
    print(f"segmented {len(done)} images into {out}")
    return 0


def _cmd_train(cfg: RunConfig) -> int:
    data = _require(cfg.data, "--data")
    out = _require(cfg.out, "--out")
    pcfg = _build_pipeline_config(cfg)
    train_ids, _ = split_scene_ids(list_scene_ids(data))
    bundle, _ = train_pipeline(data, train_ids, pcfg, jobs=cfg.worker_count())
    save_bundle(out, bundle)
    print(f"trained on {len(train_ids)} images; bundle at {out} "
          f"({bundle.layout.descriptor})")
    return 0


def _test_records(cfg: RunConfig, data: str, bundle, pcfg: PipelineConfig):
    _, test_ids = split_scene_ids(list_scene_ids(data))
    records = collect_records(
        data, test_ids, bundle.labels, pcfg,
        np.asarray(bundle.mean_value), jobs=cfg.worker_count(),
    )
    return records


def _cmd_eval(cfg: RunConfig) -> int:
    data = _require(cfg.data, "--data")
    model = _require(cfg.model, "--model")
    pcfg = _build_pipeline_config(cfg)
    bundle = load_bundle(model)
    records = _test_records(cfg, data, bundle, pcfg)
    report = evaluate(bundle, records, pcfg)
    print(report.to_text())
    if cfg.out:
        _write_json(cfg.out, report.to_json())
    return 0


def _cmd_ablate(cfg: RunConfig) -> int:
    data = _require(cfg.data, "--data")
    pcfg = _build_pipeline_config(cfg)
    train_ids, test_ids = split_scene_ids(list_scene_ids(data))
    if getattr(cfg, "oracle_regions", False):
        report = oracle_study(data, train_ids, test_ids, pcfg,
                              jobs=cfg.worker_count())
    else:
        removals = _parse_ablate(cfg.ablate)
        bundle, train_records = train_pipeline(
            data, train_ids, pcfg, jobs=cfg.worker_count()
        )
        test_records = collect_records(
            data, test_ids, bundle.labels, pcfg,
            np.asarray(bundle.mean_value), jobs=cfg.worker_count(),
        )
        report = ablation_study(train_records, test_records, bundle, pcfg,
                                removals=removals)
    print(report.to_text())
    if cfg.out:
        _write_json(cfg.out, report.to_json())
    return 0


def _cmd_pipeline(cfg: RunConfig) -> int:
    data = _require(cfg.data, "--data")
    model = _require(cfg.model, "--model")
    out = _require(cfg.out, "--out")
    pcfg = _build_pipeline_config(cfg)
    bundle = load_bundle(model)
    ids = list_scene_ids(data)
    records = collect_records(
        data, ids, bundle.labels, pcfg,
        np.asarray(bundle.mean_value), jobs=cfg.worker_count(),
    )
    Path(out).mkdir(parents=True, exist_ok=True)
    names = bundle.classifier.class_names
    for rec in records:
        ranked = rank_record(rec, bundle, pcfg.q)
        feats = eval_features(rec, ranked)
        scores, _ = score_image(bundle.classifier, feats)
        per_cand = feats @ bundle.classifier.weights.astype(np.float64).T
        per_cand += bundle.classifier.biases.astype(np.float64)
        payload = {
            "image_id": rec.image_id,
            "dims": list(rec.dims),
            "predicted_class": names[int(np.argmax(scores))],
            "class_scores": {n: float(s) for n, s in zip(names, scores)},
            "candidates": [
                {
                    "bbox": [rc.region.bbox.x0, rc.region.bbox.y0,
                             rc.region.bbox.x1, rc.region.bbox.y1],
                    "label": bundle.labels.names[rc.region.channel],
                    "source": rc.region.source,
                    "rank_score": float(rc.score),
                    "fallback": rc.is_fallback,
                    "class_scores": {
                        n: float(s) for n, s in zip(names, per_cand[i])
                    },
                }
                for i, rc in enumerate(ranked)
            ],
        }
        text = json.dumps(payload, indent=1, sort_keys=True) + "\n"
        _write_json(os.path.join(out, f"{rec.image_id}.json"), text)
    print(f"wrote {len(records)} result files to {out}")
    return 0


_OVERLAY_COLORS = (
    (66, 135, 245),   # top candidate: blue
    (245, 130, 48),   # orange
    (60, 180, 75),    # green
    (145, 30, 180),
    (240, 50, 230),
)
_FACE_COLOR = (255, 220, 40)


def _draw_box(canvas: np.ndarray, box, color) -> None:
    h, w = canvas.shape[:2]
    clipped = box.clipped((h, w))
    if clipped is None:
        return
    x0, y0, x1, y1 = clipped.x0, clipped.y0, clipped.x1, clipped.y1
    col = np.asarray(color, dtype=np.float64)
    canvas[y0, x0:x1] = col
    canvas[y1 - 1, x0:x1] = col
    canvas[y0:y1, x0] = col
    canvas[y0:y1, x1 - 1] = col


def _overlay_task(args) -> str:
    data_dir, image_id, pcfg, bundle, out_dir = args
    image, annotation = load_scene(data_dir, image_id)
    coarse_backend = make_backend(pcfg.coarse, bundle.labels, pcfg.seed)
    fine_backend = make_backend(pcfg.fine, bundle.labels, pcfg.seed)
    _, fused = segment_image(
        image, annotation, image_id, coarse_backend, fine_backend, pcfg.refine
    )
    regions = generate_candidates(fused, pcfg.candidates)
    context = np.asarray([context_feature(fused, r) for r in regions])
    ranked = rank_and_prune(
        regions, context, bundle.ranker, pcfg.q, image.dims, bundle.labels
    )

    rgb = image.data.astype(np.float64)
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    # Paint lowest rank first so the top candidate stays on top.
    for rank in range(len(ranked) - 1, -1, -1):
        region = ranked[rank].region
        color = np.asarray(_OVERLAY_COLORS[rank % len(_OVERLAY_COLORS)], float)
        box = region.bbox
        patch = fused.data[box.y0:box.y1, box.x0:box.x1, region.channel]
        alpha = 0.65 * patch.astype(np.float64) * region.mask
        alpha = alpha[..., None]
        target = rgb[box.y0:box.y1, box.x0:box.x1]
        rgb[box.y0:box.y1, box.x0:box.x1] = (1 - alpha) * target + alpha * color
        _draw_box(rgb, box, color)
    if annotation is not None and annotation.face is not None:
        _draw_box(rgb, annotation.face, _FACE_COLOR)

    out_path = os.path.join(out_dir, f"{image_id}.ppm")
    data = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)
    write_image(out_path, ImageU8(data))
    return image_id


def _cmd_visualize(cfg: RunConfig) -> int:
    data = _require(cfg.data, "--data")
    model = _require(cfg.model, "--model")
    out = _require(cfg.out, "--out")
    pcfg = _build_pipeline_config(cfg)
    bundle = load_bundle(model)
    Path(out).mkdir(parents=True, exist_ok=True)
    ids = list_scene_ids(data)
    done = parallel_map(
        _overlay_task,
        [(data, i, pcfg, bundle, out) for i in ids],
        cfg.worker_count(),
    )
    print(f"wrote {len(done)} overlays to {out}")
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "segment": _cmd_segment,
    "pipeline": _cmd_pipeline,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "visualize": _cmd_visualize,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _merge(args)
        return _HANDLERS[cfg.subcommand](cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ContractError as e:
        print(f"contract violation: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
