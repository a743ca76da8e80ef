"""Command-line entry points: ``segment``, ``cache``, ``bench``, ``ablate``.

Configuration is layered (defaults < --config YAML < flags) and echoed into
every report. Exit codes: 1 config error, 2 backend error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .backbones.cache import TensorCache
from .backbones.clients import Backend, CachingBackend, ModelBackend, ReplayBackend
from .backbones.features import load_image
from .config import CACHE_ENV_VAR, PipelineConfig, load_config
from .errors import BackendUnavailable, EmptyCaption, FreesegError, MissingAnnotation
from .evaluation.benchmark import run_benchmark
from .evaluation.datasets import BUILTIN_DATASETS, load_dataset_spec
from .pipeline import segment_image, write_outputs
from .vocabulary import load_class_list

EXIT_CONFIG = 1
EXIT_BACKEND = 2
EXIT_IO = 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        self.print_usage(sys.stderr)
        raise CliError(EXIT_CONFIG, f"error: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace("+", ",").split(",") if part)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="YAML config file")
    parser.add_argument("--cache", help=f"cache root (overrides ${CACHE_ENV_VAR})")
    parser.add_argument("--timestep", type=int)
    parser.add_argument("--resolutions", type=_int_list, help="e.g. 16 or 16,32")
    parser.add_argument("--grid-size", type=int, dest="grid_size")
    parser.add_argument("--k", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--include-attention", action="store_true", default=None,
                        dest="include_attention")
    parser.add_argument("--refinement", choices=["crf", "pamr", "none"])
    parser.add_argument("--mask-fill", choices=["black", "mean", "crop"], dest="mask_fill")
    parser.add_argument("--no-caption-filter", action="store_false", default=None,
                        dest="caption_filter")
    parser.add_argument("--backend", choices=["replay", "model"], default="replay")
    parser.add_argument("--jobs", type=int, default=1)


def _flag_overrides(args: argparse.Namespace, open_vocab: bool = False) -> dict:
    overrides = {
        key: getattr(args, key, None)
        for key in (
            "timestep", "resolutions", "grid_size", "k", "seed", "include_attention",
            "refinement", "mask_fill", "caption_filter",
        )
    }
    if getattr(args, "cache", None):
        overrides["cache_root"] = args.cache
    if open_vocab:
        overrides["candidate_mode"] = "open"
    return overrides


def _build_config(args: argparse.Namespace, open_vocab: bool = False,
                  extra: dict | None = None) -> PipelineConfig:
    overrides = _flag_overrides(args, open_vocab)
    overrides.update(extra or {})
    return load_config(getattr(args, "config", None), overrides)


def _build_backend(args: argparse.Namespace, config: PipelineConfig) -> Backend:
    root = config.resolved_cache_root()
    if args.backend == "model":
        inner = ModelBackend()
        return CachingBackend(inner, TensorCache(root)) if root else inner
    if not root:
        raise CliError(EXIT_CONFIG,
                       f"replay backend needs a cache root (--cache, ${CACHE_ENV_VAR}, "
                       "or cache_root in the config file)")
    return ReplayBackend(TensorCache(root))


def _classes_for(args: argparse.Namespace) -> list[str] | None:
    if getattr(args, "open_vocab", False):
        return None
    if getattr(args, "classes", None) is None:
        raise CliError(EXIT_CONFIG, "closed-vocabulary mode needs --classes FILE "
                                    "(or pass --open-vocab)")
    return load_class_list(args.classes)


def cmd_segment(args: argparse.Namespace) -> int:
    config = _build_config(args, open_vocab=args.open_vocab)
    backend = _build_backend(args, config)
    classes = _classes_for(args)

    paths = [Path(p) for p in args.images]
    for p in paths:
        if not p.exists():
            raise CliError(EXIT_IO, f"no such image: {p}")

    def run_one(path: Path):
        image = load_image(path)
        result = segment_image(image, backend, config, dataset_classes=classes)
        return write_outputs(result, args.out, dump_masked_images=args.debug_dump)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            all_written = list(pool.map(run_one, paths))
    else:
        all_written = [run_one(p) for p in paths]
    for written in all_written:
        for path in written:
            print(path)
    return 0


def cmd_cache(args: argparse.Namespace) -> int:
    config = _build_config(args, open_vocab=args.open_vocab)
    root = config.resolved_cache_root()
    if not root:
        raise CliError(EXIT_CONFIG, "cache command needs a cache root")
    backend = CachingBackend(ModelBackend(), TensorCache(root))
    classes = _classes_for(args)

    image_dir = Path(args.images)
    if not image_dir.is_dir():
        raise CliError(EXIT_IO, f"not a directory: {image_dir}")
    paths = sorted(p for p in image_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    failures = 0
    for path in paths:
        try:
            image = load_image(path)
            segment_image(image, backend, config, dataset_classes=classes)
            print(f"cached {path.name}")
        except FreesegError as exc:
            failures += 1
            print(f"FAILED {path.name}: {exc}", file=sys.stderr)
    if failures:
        print(f"{failures}/{len(paths)} images failed", file=sys.stderr)
    return EXIT_BACKEND if failures else 0


def _dataset_spec(args: argparse.Namespace):
    return load_dataset_spec(
        args.dataset,
        args.root,
        split_file=args.split,
        classes_file=args.classes,
        remap_file=args.remap,
        annotations=args.annotations,
    )


def cmd_bench(args: argparse.Namespace) -> int:
    config = _build_config(args)
    backend = _build_backend(args, config)
    spec = _dataset_spec(args)
    out = Path(args.out)
    report = run_benchmark(spec, config, backend, limit=args.limit, jobs=args.jobs,
                           overlay_dir=(out / "overlays") if args.save_overlays else None)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_text())
    print(report.to_text())
    return 0


ABLATION_PRESETS: dict[str, dict] = {
    # pipeline stages: bare clustering+labels, +caption gating, +CRF, +attention maps
    "stages": {
        "_cells": [
            {"caption_filter": False, "refinement": "none"},
            {"caption_filter": True, "refinement": "none"},
            {"caption_filter": True, "refinement": "crf"},
            {"caption_filter": True, "refinement": "crf", "include_attention": True},
        ]
    },
    "features": {
        "resolutions": [[16], [32], [64], [16, 32], [32, 64], [16, 32, 64]],
        "k": [3, 4, 5],
        "include_attention": [False, True],
    },
    "refinement": {
        "refinement": ["none", "crf", "pamr"],
        "k": [3, 4, 5],
        "include_attention": [False, True],
    },
    "attention": {
        "k": [3, 4, 5],
        "include_attention": [False, True],
    },
}


def _grid_cells(grid: dict) -> list[dict]:
    if "_cells" in grid:
        return [dict(cell) for cell in grid["_cells"]]
    keys = sorted(grid.keys())
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _cell_name(cell: dict) -> str:
    parts = []
    for key in sorted(cell):
        value = cell[key]
        if isinstance(value, (list, tuple)):
            value = "+".join(str(v) for v in value)
        parts.append(f"{key}={value}")
    return "_".join(parts).replace(" ", "")


def cmd_ablate(args: argparse.Namespace) -> int:
    import yaml

    if args.preset:
        grid = ABLATION_PRESETS[args.preset]
    elif args.grid:
        grid = yaml.safe_load(Path(args.grid).read_text())
        if not isinstance(grid, dict):
            raise CliError(EXIT_CONFIG, "grid file must map config keys to value lists")
    else:
        raise CliError(EXIT_CONFIG, "ablate needs --grid FILE or --preset NAME")

    spec = _dataset_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for cell in _grid_cells(grid):
        config = _build_config(args, extra=cell)
        backend = _build_backend(args, config)
        report = run_benchmark(spec, config, backend, limit=args.limit, jobs=args.jobs)
        name = _cell_name(cell)
        cell_dir = out / name
        cell_dir.mkdir(parents=True, exist_ok=True)
        (cell_dir / "report.json").write_text(report.to_json())
        (cell_dir / "report.txt").write_text(report.to_text())
        summary.append({"cell": cell, "name": name, "miou": report.miou,
                        "pixel_accuracy": report.pixel_accuracy})
        print(f"{name:<60} mIoU={report.miou:.4f}")
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="freeseg",
                     description="training-free open-vocabulary segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_seg = sub.add_parser("segment", help="segment one or more images")
    p_seg.add_argument("images", nargs="+")
    p_seg.add_argument("--classes", type=Path, help="class list file (closed vocabulary)")
    p_seg.add_argument("--open-vocab", action="store_true", dest="open_vocab")
    p_seg.add_argument("--out", type=Path, required=True)
    p_seg.add_argument("--debug-dump", action="store_true", dest="debug_dump",
                       help="also write each mask's masked-image PNG")
    _add_config_flags(p_seg)
    p_seg.set_defaults(func=cmd_segment)

    p_cache = sub.add_parser("cache", help="precompute features/captions/embeddings")
    p_cache.add_argument("--images", required=True, help="directory of images")
    p_cache.add_argument("--classes", type=Path)
    p_cache.add_argument("--open-vocab", action="store_true", dest="open_vocab")
    _add_config_flags(p_cache)
    p_cache.set_defaults(func=cmd_cache)

    def add_dataset_flags(p):
        p.add_argument("--dataset", required=True,
                       choices=list(BUILTIN_DATASETS) + ["custom"])
        p.add_argument("--root", required=True, type=Path)
        p.add_argument("--split", type=Path)
        p.add_argument("--classes", type=Path)
        p.add_argument("--remap", type=Path)
        p.add_argument("--annotations", type=Path)
        p.add_argument("--limit", type=int)
        p.add_argument("--out", type=Path, required=True)

    p_bench = sub.add_parser("bench", help="evaluate on a dataset split")
    add_dataset_flags(p_bench)
    p_bench.add_argument("--save-overlays", action="store_true", dest="save_overlays",
                         help="write one prediction-overlay PNG per image")
    _add_config_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_abl = sub.add_parser("ablate", help="run a grid of bench configurations")
    add_dataset_flags(p_abl)
    p_abl.add_argument("--grid", type=Path, help="YAML mapping config keys to value lists")
    p_abl.add_argument("--preset", choices=sorted(ABLATION_PRESETS.keys()))
    _add_config_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except (BackendUnavailable, EmptyCaption) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingAnnotation, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
