"""Command-line surface: train, eval, eig-inspect, matte, synth.

Data layout: <dir>/<sample_id>.k.npy, .kaug.npy, .img.npy, optional .gt.npy,
with index.txt listing sample ids one per line. Exit codes: 0 ok, 2 config,
3 data, 4 degenerate input, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import (
    DegenerateContrast,
    DegenerateGraph,
    DegenerateInput,
    EicueError,
    FormatError,
    InvalidInput,
    InvalidState,
    NumericalFailure,
)
from .features import (
    SamplePair,
    SceneSpec,
    load_image_file,
    load_label_file,
    load_tensor_file,
    object_means,
    synth_scene,
    write_image_file,
    write_label_file,
    write_tensor_file,
)
from .affinity import adjacency, color_affinity, semantic_affinity
from .evaluator import (
    cluster_features,
    confusion_matrix,
    hungarian_match,
    linear_probe,
    metrics,
    write_grayscale_pgm,
    write_pgm,
    write_ppm,
)
from .heads import seg_forward
from .spectral import eigengap_select, laplacian_bundle, matte
from .trainer import (
    METRICS_COLUMNS,
    TrainConfig,
    load_checkpoint,
    load_config,
    metrics_csv_line,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DEGENERATE = 4
EXIT_NUMERICAL = 5


class _CliFailure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _fail(code, message):
    raise _CliFailure(code, message)


# ---------------------------------------------------------------------------
# Dataset layout
# ---------------------------------------------------------------------------

def read_index(data_dir: Path) -> List[str]:
    index = data_dir / "index.txt"
    if not index.is_file():
        _fail(EXIT_DATA, f"missing index file {index}")
    ids = [line.strip() for line in index.read_text(encoding="utf-8").splitlines()
           if line.strip()]
    if not ids:
        _fail(EXIT_DATA, f"{index} lists no samples")
    return ids


def load_dataset(data_dir: Path, require_gt: bool = False
                 ) -> Tuple[List[str], List[SamplePair]]:
    if not data_dir.is_dir():
        _fail(EXIT_DATA, f"data directory {data_dir} does not exist")
    ids = read_index(data_dir)
    samples = []
    for sid in ids:
        try:
            base = load_tensor_file(data_dir / f"{sid}.k.npy")
            aug = load_tensor_file(data_dir / f"{sid}.kaug.npy")
            image = load_image_file(data_dir / f"{sid}.img.npy")
            gt_path = data_dir / f"{sid}.gt.npy"
            gt = load_label_file(gt_path) if gt_path.is_file() else None
        except FileNotFoundError as exc:
            _fail(EXIT_DATA, f"sample {sid}: missing file ({exc})")
        except FormatError as exc:
            _fail(EXIT_DATA, f"sample {sid}: {exc}")
        if require_gt and gt is None:
            _fail(EXIT_DATA, f"sample {sid}: ground truth required but absent")
        try:
            samples.append(SamplePair(base=base, aug=aug, image=image, ground_truth=gt))
        except InvalidInput as exc:
            _fail(EXIT_DATA, f"sample {sid}: {exc}")
    return ids, samples


def write_sample(data_dir: Path, sid: str, pair: SamplePair) -> None:
    write_tensor_file(data_dir / f"{sid}.k.npy", pair.base)
    write_tensor_file(data_dir / f"{sid}.kaug.npy", pair.aug)
    write_image_file(data_dir / f"{sid}.img.npy", pair.image)
    if pair.ground_truth is not None:
        write_label_file(data_dir / f"{sid}.gt.npy", pair.ground_truth)


def _prepare_out(out_dir: Path, force: bool, guard_names: List[str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if force:
        return
    for name in guard_names:
        if (out_dir / name).exists():
            _fail(EXIT_CONFIG,
                  f"refusing to overwrite {out_dir / name} (use --force)")


def _load_cfg(args) -> TrainConfig:
    try:
        cfg = load_config(args.config) if args.config else TrainConfig()
    except FileNotFoundError:
        _fail(EXIT_CONFIG, f"config file {args.config} not found")
    except InvalidInput as exc:
        _fail(EXIT_CONFIG, str(exc))
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _eval_features(samples: List[SamplePair], state) -> list:
    return [seg_forward(p.base, state.params)[0] for p in samples]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    _, samples = load_dataset(data_dir)
    _prepare_out(out_dir, args.force, ["metrics.csv", "checkpoint_final.bin"])
    metrics_path = out_dir / "metrics.csv"
    try:
        from .trainer import init_state
        state = init_state(cfg, samples)
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write(",".join(METRICS_COLUMNS) + "\n")

            def on_step(rec):
                fh.write(metrics_csv_line(rec) + "\n")
                if cfg.checkpoint_every and (rec["step"] + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(state, out_dir / f"checkpoint_{rec['step'] + 1}.bin")

            train(samples, cfg, state=state, on_step=on_step)
    except NumericalFailure as exc:
        _fail(EXIT_NUMERICAL, f"training aborted: {exc}")
    except (DegenerateGraph, DegenerateInput) as exc:
        _fail(EXIT_DEGENERATE, str(exc))
    save_checkpoint(state, out_dir / "checkpoint_final.bin")
    print(f"trained {state.step} steps; wrote {metrics_path} and checkpoint_final.bin")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    ids, samples = load_dataset(data_dir, require_gt=True)
    try:
        state = load_checkpoint(args.checkpoint, cfg)
    except FileNotFoundError:
        _fail(EXIT_DATA, f"checkpoint {args.checkpoint} not found")
    except FormatError as exc:
        _fail(EXIT_DATA, str(exc))
    except InvalidInput as exc:
        _fail(EXIT_CONFIG, str(exc))
    if samples[0].base.d != state.params.d_key:
        _fail(EXIT_CONFIG,
              f"checkpoint expects d_key={state.params.d_key}, data has {samples[0].base.d}")
    _prepare_out(out_dir, args.force, ["metrics.csv"])
    feats = _eval_features(samples, state)
    try:
        _, pred_maps = cluster_features(feats, cfg.c_classes, seed=cfg.seed)
    except InvalidInput as exc:
        _fail(EXIT_CONFIG, str(exc))
    gts = [p.ground_truth for p in samples]
    n_classes = max(cfg.c_classes, 1 + max(int(g.labels.max()) for g in gts))
    cm = confusion_matrix(gts, pred_maps, c=n_classes)
    pi = hungarian_match(cm)
    acc, miou, iou = metrics(cm, pi)

    lines = ["name,acc,miou," + ",".join(f"iou_{c}" for c in range(n_classes))]
    lines.append("unsupervised,%.6f,%.6f,%s"
                 % (acc, miou, ",".join(f"{v:.6f}" for v in iou)))
    if args.probe:
        try:
            _, _, p_acc, p_miou = linear_probe(feats, gts, n_classes,
                                               epochs=args.probe_epochs, lr=0.5)
            lines.append("linear_probe,%.6f,%.6f,%s"
                         % (p_acc, p_miou, ",".join("" for _ in range(n_classes))))
        except DegenerateInput as exc:
            _fail(EXIT_DEGENERATE, str(exc))
    (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    # maps carry raw cluster ids; the class matching lives in metrics.csv
    for sid, pred in zip(ids, pred_maps):
        write_pgm(out_dir / f"{sid}.pred.pgm", pred, maxval=max(1, n_classes - 1))
        write_ppm(out_dir / f"{sid}.pred.ppm", pred)
    print(f"acc {acc:.4f} miou {miou:.4f} over {len(ids)} samples -> {out_dir}")
    return EXIT_OK


def _bundle_for_sample(pair: SamplePair, cfg: TrainConfig, state) -> object:
    acfg = cfg.affinity()
    if state is not None:
        s, _ = seg_forward(pair.base, state.params)
    else:
        s = pair.base  # no checkpoint: raw features stand in for S
    a = adjacency(color_affinity(pair.image, acfg), semantic_affinity(s, acfg))
    return laplacian_bundle(a, min(cfg.k_eigenvectors, a.n), eps=cfg.degree_epsilon,
                            method=cfg.eig_method)


def cmd_eig(args) -> int:
    cfg = _load_cfg(args)
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    ids, samples = load_dataset(data_dir)
    state = None
    if args.checkpoint:
        try:
            state = load_checkpoint(args.checkpoint, cfg)
        except (FormatError, InvalidInput) as exc:
            _fail(EXIT_CONFIG, str(exc))
    _prepare_out(out_dir, args.force, ["eigengap.txt"])
    k = args.k if args.k is not None else cfg.k_eigenvectors
    report = []
    for sid, pair in zip(ids, samples):
        try:
            bundle = _bundle_for_sample(pair, cfg, state)
        except DegenerateGraph as exc:
            _fail(EXIT_DEGENERATE, f"sample {sid}: {exc}")
        values = bundle.basis.values
        with open(out_dir / f"{sid}.eigvals.csv", "w", encoding="utf-8") as fh:
            fh.write("index,eigenvalue\n")
            for j, v in enumerate(values):
                fh.write(f"{j},{v:.12g}\n")
        kk = min(k, bundle.basis.n)
        for j in range(kk):
            write_grayscale_pgm(out_dir / f"{sid}.eig{j}.pgm",
                                bundle.basis.vectors[:, j], pair.base.h, pair.base.w)
        chosen = eigengap_select(values, k_max=min(args.k_max, values.size - 1))
        report.append(f"{sid} k={chosen}")
    (out_dir / "eigengap.txt").write_text("\n".join(report) + "\n", encoding="utf-8")
    print(f"wrote eigen outputs for {len(ids)} samples -> {out_dir}")
    return EXIT_OK


def cmd_matte(args) -> int:
    cfg = _load_cfg(args)
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    ids, samples = load_dataset(data_dir)
    state = None
    if args.checkpoint:
        try:
            state = load_checkpoint(args.checkpoint, cfg)
        except (FormatError, InvalidInput) as exc:
            _fail(EXIT_CONFIG, str(exc))
    _prepare_out(out_dir, args.force,
                 [f"{ids[0]}.matte.pgm"] if ids else [])
    for sid, pair in zip(ids, samples):
        try:
            bundle = _bundle_for_sample(pair, cfg, state)
            if bundle.basis.n < 2:
                raise DegenerateInput("single-patch sample has no nontrivial eigenvector")
            # column 0 is the near-constant nullvector; matte the first
            # nontrivial eigenvector
            seg = matte(bundle.basis.vectors[:, 1], pair.base.h, pair.base.w,
                        threshold_mode=args.threshold, flip=args.flip)
        except (DegenerateInput, DegenerateGraph) as exc:
            _fail(EXIT_DEGENERATE, f"sample {sid}: {exc}")
        except InvalidInput as exc:
            _fail(EXIT_CONFIG, str(exc))
        fg = seg.labels.astype(np.int64) * 255
        write_grayscale_pgm(out_dir / f"{sid}.matte.pgm", fg.astype(np.float64),
                            seg.h, seg.w)
    print(f"wrote {len(ids)} mattes -> {out_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    try:
        spec = SceneSpec(n_objects=args.objects, h=args.height, w=args.width,
                         d=args.dim, noise_sigma=args.noise,
                         aug_jitter=args.jitter, image_noise=args.image_noise,
                         feature_scale=args.scale)
    except InvalidInput as exc:
        _fail(EXIT_CONFIG, str(exc))
    _prepare_out(out_dir, args.force, ["index.txt"])
    means = object_means(spec, args.seed)
    ids = []
    for i in range(args.samples):
        sid = f"sample{i:04d}"
        sample_seed = int(np.random.SeedSequence([args.seed, 4, i]).generate_state(1)[0])
        pair, _ = synth_scene(spec, seed=sample_seed, means=means)
        write_sample(out_dir, sid, pair)
        ids.append(sid)
    (out_dir / "index.txt").write_text("\n".join(ids) + "\n", encoding="utf-8")
    print(f"wrote {len(ids)} synthetic samples -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eicue",
        description="Spectral object discovery on patch feature grids")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="optimize heads and centers on a dataset")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides config seed")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="cluster features, match to ground truth, score")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--probe", action="store_true", help="also fit a linear probe")
    p.add_argument("--probe-epochs", type=int, default=200)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("eig-inspect",
                       help="eigenvalue CSVs, eigenvector PGMs, eigengap report")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="eigenvector maps to emit")
    p.add_argument("--k-max", type=int, default=8, help="eigengap search bound")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_eig)

    p = sub.add_parser("matte", help="binary matte from the first nontrivial eigenvector")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threshold", default="otsu", help='"otsu" or "fixed:<cut>"')
    p.add_argument("--flip", action="store_true",
                   help="label the larger side as foreground instead")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_matte)

    p = sub.add_parser("synth", help="write a synthetic dataset in the on-disk layout")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=40)
    p.add_argument("--objects", type=int, default=4)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--image-noise", type=float, default=0.02)
    p.add_argument("--scale", type=float, default=1.0, help="object feature norm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DegenerateGraph, DegenerateInput, DegenerateContrast) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EicueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
