"""Command-line interface: ``irforge translate|pair|run|score``.

Exit status is 0 on success, 1 on usage or configuration errors, and 2 when a
batch finished with some per-file failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ConfigError, IrforgeError
from .features import ExtractorSpec, load_features
from .metrics import evaluate_set
from .pairing import ALL, normalize_task, sample_pairs, scan_locations, TASK_MODALITIES, read_manifest, write_manifest
from .pipeline import plan_for, run_pipeline, write_run_outputs
from .raster import IMAGE_SUFFIXES, encode_image, format_for_path, quantize, read_image
from .report import write_report
from .translate import check_factor, gray_of, reconstruct_density, rgb_to_ir, to_grayscale

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2
WORKERS_ENV = "IRFORGE_WORKERS"

_stderr_lock = threading.Lock()


def diag(msg: str) -> None:
    with _stderr_lock:
        sys.stderr.write(msg.rstrip("\n") + "\n")
        sys.stderr.flush()


@dataclass(frozen=True)
class Config:
    intensity_rgb2ir: float = 1.3
    intensity_sar2ir: float = 1.15
    workers: int = 1
    seed: int = 0
    patch_size: int = 8
    scales: int = 3
    filters_per_scale: int = 16
    feature_seed: int = 0

    def __post_init__(self):
        for name in ("intensity_rgb2ir", "intensity_sar2ir"):
            try:
                check_factor(getattr(self, name))
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def extractor(self) -> ExtractorSpec:
        try:
            return ExtractorSpec(patch_size=self.patch_size, scales=self.scales,
                                 seed=self.feature_seed, filters_per_scale=self.filters_per_scale)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path: Optional[str]) -> Config:
    """Built-in defaults, then the ``key=value`` file, then $IRFORGE_WORKERS."""
    types = {f.name: f.type for f in dataclasses.fields(Config)}
    values = {}
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or key not in types:
                raise ConfigError(f"{path}:{n}: unknown or malformed setting {line!r}")
            values[key] = value
    env = os.environ.get(WORKERS_ENV)
    if env:
        values["workers"] = env
    parsed = {}
    for key, value in values.items():
        cast = float if types[key] == "float" else int
        try:
            parsed[key] = cast(value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    return Config(**parsed)


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1, not argparse's 2 (2 means partial failure here)
    def error(self, message):
        self.print_usage(sys.stderr)
        diag(f"{self.prog}: error: {message}")
        raise SystemExit(EXIT_CONFIG)


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=88, max_help_position=32)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="irforge", formatter_class=_formatter,
                     description="Pixel-level RGB/SAR to IR translation and translation-quality scoring.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--config", metavar="PATH", help="key=value settings file")

    p = sub.add_parser("translate", formatter_class=_formatter,
                       help="grayscale / density translation of an image or directory")
    p.add_argument("--task", required=True, choices=["rgb2ir", "gray", "density"])
    p.add_argument("--in", dest="inp", required=True, metavar="PATH", help="input image or directory")
    p.add_argument("--out", required=True, metavar="PATH", help="output image or directory")
    p.add_argument("--factor", type=float, help="intensity factor (default: intensity_rgb2ir)")
    p.add_argument("--workers", type=int, help=f"parallel workers (default: ${WORKERS_ENV} or 1)")
    common(p)

    p = sub.add_parser("pair", formatter_class=_formatter, help="sample a pair manifest from a dataset tree")
    p.add_argument("--root", required=True, metavar="DIR", help="<root>/<location>/<modality>/<file>")
    p.add_argument("--task", required=True, type=str.upper, choices=sorted(TASK_MODALITIES))
    p.add_argument("--per-location", required=True, metavar="N",
                   help=f"pairs drawn per location, or '{ALL}' for stem-aligned pairs")
    p.add_argument("--seed", type=int, help="sampling seed (default: config seed)")
    p.add_argument("--out", required=True, metavar="PATH", help="manifest file to write")
    common(p)

    p = sub.add_parser("run", formatter_class=_formatter, help="execute a task pipeline over a manifest")
    p.add_argument("--task", required=True, type=str.upper, choices=sorted(TASK_MODALITIES))
    p.add_argument("--manifest", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--external", metavar="DIR", help="pre-generated outputs of the external model")
    p.add_argument("--factor", type=float, help="intensity factor override")
    p.add_argument("--workers", type=int, help=f"parallel workers (default: ${WORKERS_ENV} or 1)")
    p.add_argument("--evaluate", action="store_true", help="score outputs against manifest targets")
    p.add_argument("--no-figure", action="store_true", help="skip the report figure")
    common(p)

    p = sub.add_parser("score", formatter_class=_formatter, help="score generated images against targets")
    p.add_argument("--generated", required=True, metavar="DIR")
    p.add_argument("--target", required=True, metavar="DIR")
    p.add_argument("--features", metavar="DIR",
                   help="precomputed features: DIR/generated/<stem>.iff and DIR/target/<stem>.iff")
    p.add_argument("--report", metavar="PATH", help="write report text, .json and .png here")
    p.add_argument("--workers", type=int, help=f"parallel workers (default: ${WORKERS_ENV} or 1)")
    p.add_argument("--no-figure", action="store_true", help="skip the report figure")
    common(p)
    return parser


def _workers(args, cfg: Config) -> int:
    n = cfg.workers if args.workers is None else args.workers
    if n < 1:
        raise ConfigError("--workers must be >= 1")
    return n


def _parallel_map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- translate -------------------------------------------------------------

def _translate_one(task: str, factor: float, src: Path, dst: Path) -> None:
    img = read_image(src)
    if task == "rgb2ir":
        out = rgb_to_ir(img, factor)
    elif task == "gray":
        out = quantize(to_grayscale(img))
    else:
        out = quantize(reconstruct_density(gray_of(img), factor))
    fmt = format_for_path(dst) if dst.suffix.lower() in IMAGE_SUFFIXES else "png"
    dst.parent.mkdir(parents=True, exist_ok=True)
    dst.write_bytes(encode_image(out, fmt))


def cmd_translate(args, cfg: Config) -> int:
    factor = check_factor(cfg.intensity_rgb2ir if args.factor is None else args.factor)
    src, dst = Path(args.inp), Path(args.out)
    if src.is_dir():
        jobs = [(p, dst / (p.stem + ".png")) for p in sorted(src.iterdir())
                if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
        if not jobs:
            raise ConfigError(f"no images found in {str(src)!r}")
        dst.mkdir(parents=True, exist_ok=True)
    elif src.is_file():
        jobs = [(src, dst)]
    else:
        raise ConfigError(f"input {str(src)!r} does not exist")

    def one(job):
        try:
            _translate_one(args.task, factor, *job)
            return True
        except (IrforgeError, OSError, ValueError) as exc:
            diag(f"{job[0]}: {type(exc).__name__}: {exc}")
            return False

    ok = _parallel_map(one, jobs, _workers(args, cfg))
    return EXIT_OK if all(ok) else EXIT_PARTIAL


# --- pair ------------------------------------------------------------------

def cmd_pair(args, cfg: Config) -> int:
    task = normalize_task(args.task)
    per = args.per_location
    if per != ALL:
        try:
            per = int(per)
        except ValueError:
            raise ConfigError(f"--per-location must be an integer or '{ALL}'") from None
        if per < 1:
            raise ConfigError("--per-location must be >= 1")
    seed = cfg.seed if args.seed is None else args.seed
    pools = scan_locations(args.root, required=TASK_MODALITIES[task])
    if not pools:
        raise ConfigError(f"no location under {args.root!r} has both {'/'.join(TASK_MODALITIES[task])} images")
    manifest = sample_pairs(pools, task, per, seed)
    write_manifest(args.out, manifest)
    diag(f"wrote {len(manifest.records)} records from {len(pools)} locations to {args.out}")
    return EXIT_OK


# --- run -------------------------------------------------------------------

def cmd_run(args, cfg: Config) -> int:
    task = normalize_task(args.task)
    factor = args.factor
    if factor is None and task in ("RGB2IR", "SAR2IR"):
        factor = cfg.intensity_rgb2ir if task == "RGB2IR" else cfg.intensity_sar2ir
    if task != "RGB2IR" and args.external is None:
        raise ConfigError(f"{task} requires --external (directory of pre-generated outputs)")
    if args.external is not None and not Path(args.external).is_dir():
        raise ConfigError(f"--external {args.external!r} is not a directory")
    plan = plan_for(task, factor=factor, external_dir=args.external,
                    evaluate=cfg.extractor if args.evaluate else None)
    try:
        manifest = read_manifest(args.manifest)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {args.manifest!r}: {exc.strerror}") from None
    if manifest.task != task:
        raise ConfigError(f"manifest is for {manifest.task}, not {task}")
    summary = run_pipeline(plan, manifest, args.out, workers=_workers(args, cfg))
    write_run_outputs(summary, args.out, figure=not args.no_figure)
    for rec in summary.records:
        if not rec.ok:
            diag(f"record {rec.index} ({rec.source}): {rec.detail}")
    if summary.evaluation_error:
        diag(f"evaluation failed: {summary.evaluation_error}")
    sys.stdout.write(summary.to_text())
    return EXIT_OK if summary.failed == 0 and not summary.evaluation_error else EXIT_PARTIAL


# --- score -----------------------------------------------------------------

def _images_by_stem(folder: Path) -> dict[str, Path]:
    if not folder.is_dir():
        raise ConfigError(f"{str(folder)!r} is not a directory")
    found = {}
    for p in sorted(folder.iterdir()):
        if not (p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES):
            continue
        if p.stem in found:
            diag(f"warning: {p} ignored, stem {p.stem!r} already matched {found[p.stem].name}")
            continue
        found[p.stem] = p
    return found


def cmd_score(args, cfg: Config) -> int:
    gen = _images_by_stem(Path(args.generated))
    tgt = _images_by_stem(Path(args.target))
    for stem in sorted(set(gen) ^ set(tgt)):
        side = "generated" if stem in gen else "target"
        diag(f"warning: {stem!r} only in {side} set; excluded")
    stems = sorted(set(gen) & set(tgt))
    workers = _workers(args, cfg)

    def load(stem):
        try:
            g, t = read_image(gen[stem]), read_image(tgt[stem])
            if g.pixels.shape != t.pixels.shape:
                raise ValueError(f"shape {g!r} vs {t!r}")
            feats = None
            if args.features:
                root = Path(args.features)
                feats = tuple(load_features((root / side / f"{stem}.iff").read_bytes())
                              for side in ("generated", "target"))
            return stem, (g, t), feats
        except (IrforgeError, OSError, ValueError) as exc:
            diag(f"warning: {stem!r} excluded: {type(exc).__name__}: {exc}")
            return None

    loaded = [x for x in _parallel_map(load, stems, workers) if x is not None]
    if not loaded:
        diag("error: no matched generated/target pairs to score")
        return EXIT_CONFIG
    features = [x[2] for x in loaded] if args.features else None
    try:
        report = evaluate_set([x[1] for x in loaded], cfg.extractor, ids=[x[0] for x in loaded],
                              features=features, workers=workers)
    except IrforgeError as exc:
        diag(f"error: scoring failed: {type(exc).__name__}: {exc}")
        return EXIT_CONFIG
    sys.stdout.write(report.to_text())
    if args.report:
        write_report(report, args.report, figure=not args.no_figure)
    return EXIT_OK


COMMANDS = {"translate": cmd_translate, "pair": cmd_pair, "run": cmd_run, "score": cmd_score}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (IrforgeError, ValueError, OSError) as exc:
        diag(f"error: {exc}")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the exit-code contract is total
        diag(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
