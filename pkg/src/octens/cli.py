"""``octens`` command line.

Exit codes: 0 success, 1 bad arguments, parameters or file contents,
2 files that cannot be read or written. Diagnostics go to stderr; results go
to files or stdout.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from octens import __version__, imagepipe
from octens.blocks import selfcheck
from octens.data import (
    align,
    eyewise_split,
    read_labels,
    read_manifest,
    read_scores,
    write_labels,
    write_scores,
    write_split,
)
from octens.ensemble import (
    SearchConfig,
    align_branches,
    combine,
    optimize_weights_multi,
    read_weights,
    write_weights,
)
from octens.fixture import reproduce_fixture
from octens.metrics import DEFAULT_THRESHOLD, binarize, evaluate

logger = logging.getLogger("octens")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer: {text}")
    return value


def _intensity(text: str) -> int:
    value = int(text)
    if not 0 <= value <= 255:
        raise argparse.ArgumentTypeError(f"must lie in 0..255: {text}")
    return value


def _path_list(text: str) -> list[Path]:
    paths = [Path(p.strip()) for p in text.split(",") if p.strip()]
    if not paths:
        raise argparse.ArgumentTypeError("expected a comma-separated list of files")
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="octens", description="Parallel-branch OCT biomarker ensembling toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("preprocess", help="contrast/brightness transform plus background removal")
    p.add_argument("--in", dest="in_dir", required=True, type=Path, help="directory of input PNGs")
    p.add_argument("--out", dest="out_dir", required=True, type=Path, help="output directory")
    p.add_argument("--alpha", type=float, default=imagepipe.DEFAULT_ALPHA,
                   help="contrast gain, > 0 (default %(default)s, tunable)")
    p.add_argument("--beta", type=float, default=imagepipe.DEFAULT_BETA,
                   help="brightness offset (default %(default)s, tunable)")
    p.add_argument("--bg-threshold", type=_intensity, default=imagepipe.DEFAULT_BACKGROUND_THRESHOLD,
                   help="background intensity cutoff 0..255 (default %(default)s)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="random augmentation of a directory of PNGs")
    p.add_argument("--in", dest="in_dir", required=True, type=Path, help="directory of input PNGs")
    p.add_argument("--out", dest="out_dir", required=True, type=Path, help="output directory")
    p.add_argument("--spec", required=True, type=Path, help="key = value augmentation config file")
    p.add_argument("--seed", type=_u64, default=None,
                   help="unsigned 64-bit seed; overrides the config's seed")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", help="eye-wise train/validation split of a manifest")
    p.add_argument("--manifest", required=True, type=Path, help="sample_id,eye_id CSV")
    p.add_argument("--val-frac", required=True, type=float, help="target validation fraction in (0, 1)")
    p.add_argument("--seed", required=True, type=_u64, help="unsigned 64-bit shuffle seed")
    p.add_argument("--out", required=True, type=Path, help="output sample_id,split CSV")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("combine", help="weighted average of branch score files")
    p.add_argument("--scores", required=True, type=_path_list,
                   help="comma-separated branch score CSVs; branch id = file stem")
    p.add_argument("--weights", required=True, type=Path, help="branch_id,weight CSV")
    p.add_argument("--out", required=True, type=Path, help="combined score CSV")
    p.add_argument("--labels-out", type=Path, default=None,
                   help="also write thresholded labels to this CSV")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="threshold for --labels-out (default %(default)s)")
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("optimize", help="search branch weights that maximize macro F1")
    p.add_argument("--scores", required=True, action="append", type=_path_list,
                   help="comma-separated branch score CSVs for one validation set; repeat per set")
    p.add_argument("--labels", required=True, action="append", type=Path,
                   help="ground-truth CSV for the matching --scores; repeat per set")
    p.add_argument("--step", type=float, default=0.05, help="lattice resolution (default %(default)s)")
    p.add_argument("--method", choices=("grid", "coord"), default="grid",
                   help="exhaustive grid or coordinate ascent (default %(default)s)")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="binarization threshold inside the objective (default %(default)s)")
    p.add_argument("--max-rounds", type=int, default=100,
                   help="coordinate-ascent sweep limit (default %(default)s)")
    p.add_argument("--out", required=True, type=Path, help="output branch_id,weight CSV")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="per-label and macro F1 of predictions")
    p.add_argument("--pred", required=True, type=Path, help="predicted score or label CSV")
    p.add_argument("--labels", required=True, type=Path, help="ground-truth label CSV")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="threshold applied to --pred (default %(default)s)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("blocks", help="toy attention / MBConv block utilities")
    blocks = p.add_subparsers(dest="blocks_command", metavar="ACTION", parser_class=_Parser)
    blocks.required = True
    q = blocks.add_parser("selfcheck", help="run the block equivalence and invariant checks")
    q.add_argument("--seed", type=_u64, default=0, help="weight/input seed (default %(default)s)")
    q.add_argument("--size", type=int, default=4, help="even feature map side (default %(default)s)")
    q.add_argument("--weights", type=Path, default=None,
                   help="flat little-endian float64 file with Wq, Wk, Wv, Wo (8x8 each)")
    q.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("fixture", help="verify the shipped five-branch weight fixture")
    p.add_argument("--dir", type=Path, default=None, help="fixture directory (default: bundled)")
    p.set_defaults(func=cmd_fixture)
    return parser


def _png_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.png"))
    if not files:
        logger.warning("no PNG files in %s", directory)
    return files


def cmd_preprocess(args) -> int:
    params = imagepipe.LinearTransformParams(args.alpha, args.beta)
    files = _png_files(args.in_dir)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for path in files:
        img = imagepipe.linear_transform(imagepipe.read_png(path), params)
        img = imagepipe.blacken_background(img, args.bg_threshold)
        imagepipe.write_png(args.out_dir / path.name, img)
    return EXIT_OK


def cmd_augment(args) -> int:
    spec = imagepipe.AugmentSpec.from_file(args.spec)
    seed = spec.seed if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    files = _png_files(args.in_dir)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for path in files:
        imagepipe.write_png(args.out_dir / path.name,
                            imagepipe.augment(imagepipe.read_png(path), spec, rng))
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = read_manifest(args.manifest)
    result = eyewise_split(manifest, args.val_frac, args.seed)
    write_split(args.out, manifest, result)
    print(f"train,{len(result.train_ids)}")
    print(f"val,{len(result.val_ids)}")
    return EXIT_OK


def _branch_pairs(paths: list[Path]):
    ids = [p.stem for p in paths]
    if len(set(ids)) != len(ids):
        raise UsageError("branch score files must have distinct file names")
    return [(bid, read_scores(p)) for bid, p in zip(ids, paths)]


def _report_dropped(dropped):
    if dropped:
        shown = ", ".join(dropped[:10]) + (" ..." if len(dropped) > 10 else "")
        print(f"dropped {len(dropped)} unmatched sample(s): {shown}", file=sys.stderr)


def cmd_combine(args) -> int:
    pairs = _branch_pairs(args.scores)
    weights = read_weights(args.weights)
    ids = [bid for bid, _ in pairs]
    if set(weights) != set(ids):
        raise UsageError(
            f"weight file branches {sorted(weights)} do not match score files {sorted(ids)}"
        )
    branches, _, dropped = align_branches(pairs)
    _report_dropped(dropped)
    w = [weights[bid] for bid in ids]
    combined = combine(branches, w)
    write_scores(args.out, combined)
    if args.labels_out is not None:
        write_labels(args.labels_out, binarize(combined, args.threshold))
    return EXIT_OK


def cmd_optimize(args) -> int:
    if len(args.scores) != len(args.labels):
        raise UsageError("give one --labels file per --scores list")
    cfg = SearchConfig(step=args.step, method=args.method, max_rounds=args.max_rounds,
                       threshold=args.threshold)
    sets, branch_ids = [], None
    for score_paths, label_path in zip(args.scores, args.labels):
        pairs = _branch_pairs(score_paths)
        if branch_ids is None:
            branch_ids = [bid for bid, _ in pairs]
        elif len(pairs) != len(branch_ids):
            raise UsageError("every --scores list needs the same number of branches")
        branches, truth, dropped = align_branches(pairs, read_labels(label_path))
        _report_dropped(dropped)
        sets.append((branches, truth))
    result = optimize_weights_multi(sets, cfg)
    for flag in result.flags:
        print(f"warning: {flag}", file=sys.stderr)
    write_weights(args.out, branch_ids, result.weights)
    print(f"objective,{result.objective:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = read_scores(args.pred)
    truth = read_labels(args.labels)
    pred, truth, dropped = align(pred, truth)
    _report_dropped(dropped)
    report = evaluate(binarize(pred, args.threshold), truth)
    for line in report.lines():
        print(line)
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = selfcheck(seed=args.seed, size=args.size, weights_path=args.weights)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_INVALID


def cmd_fixture(args) -> int:
    report = reproduce_fixture(args.dir)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_INVALID


def run(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="octens: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"octens: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"octens: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
