"""Per-task stage plans and their batch execution over a pair manifest."""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .errors import ConfigError, IrforgeError, MissingExternalOutput
from .features import ExtractorSpec
from .metrics import ScoreReport, evaluate_set
from .pairing import PairManifest, PairRecord, normalize_task
from .raster import IMAGE_SUFFIXES, GrayMap, Raster, encode_image, quantize, read_image
from .translate import (
    RGB2IR_FACTOR,
    SAR2IR_FACTOR,
    check_factor,
    gray_of,
    reconstruct_density,
    to_grayscale,
)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ExternalGenerator:
    """Images produced by a model run elsewhere, looked up by source stem."""
    output_dir: Optional[str] = None


@dataclass(frozen=True)
class Grayscale:
    pass


@dataclass(frozen=True)
class Density:
    factor: float


@dataclass(frozen=True)
class Evaluate:
    spec: ExtractorSpec = ExtractorSpec()


@dataclass(frozen=True)
class TaskPlan:
    task: str
    stages: tuple
    intensity: Optional[float] = None

    def kinds(self) -> list[type]:
        return [type(s) for s in self.stages]


def plan_for(
    task: str,
    *,
    factor: Optional[float] = None,
    external_dir: Optional[PathLike] = None,
    evaluate: Optional[ExtractorSpec] = None,
) -> TaskPlan:
    """Canonical stage list for ``task``, optionally with overrides.

    RGB2IR is grayscale + density(1.3); SAR2IR runs an external SAR->RGB model
    and then grayscale + density(1.15); SAR2EO and SAR2RGB only consume the
    external model's outputs.
    """
    task = normalize_task(task)
    ext = ExternalGenerator(None if external_dir is None else str(external_dir))
    if task == "RGB2IR":
        f = check_factor(RGB2IR_FACTOR if factor is None else factor)
        stages, intensity = [Grayscale(), Density(f)], f
    elif task == "SAR2IR":
        f = check_factor(SAR2IR_FACTOR if factor is None else factor)
        stages, intensity = [ext, Grayscale(), Density(f)], f
    else:
        if factor is not None:
            raise ConfigError(f"{task} has no intensity stage; --factor does not apply")
        stages, intensity = [ext], None
    if evaluate is not None:
        stages.append(Evaluate(evaluate))
    return TaskPlan(task=task, stages=tuple(stages), intensity=intensity)


@dataclass(frozen=True)
class RecordStatus:
    index: int
    location_id: str
    source: str
    ok: bool
    detail: str  # output path relative to out_dir, or the error


@dataclass(frozen=True)
class RunSummary:
    task: str
    total: int
    processed: int
    failed: int
    records: tuple = field(default_factory=tuple)
    report: Optional[ScoreReport] = None
    evaluation_error: Optional[str] = None

    def to_text(self) -> str:
        lines = [
            f"task={self.task}",
            f"records={self.total}",
            f"processed={self.processed}",
            f"failed={self.failed}",
        ]
        if self.report is not None:
            r = self.report
            lines += [f"l2={r.l2:.12g}", f"lpips={r.lpips:.12g}",
                      f"fid={r.fid:.12g}", f"final={r.final:.12g}"]
        if self.evaluation_error is not None:
            lines.append(f"evaluation_error={self.evaluation_error}")
        return "\n".join(lines) + "\n"

    def log_text(self) -> str:
        lines = ["#index\tstatus\tlocation\tsource\tdetail"]
        for r in self.records:
            detail = " ".join(r.detail.split())
            lines.append(f"{r.index}\t{'ok' if r.ok else 'failed'}\t{r.location_id}\t{r.source}\t{detail}")
        return "\n".join(lines) + "\n"


def find_external(external_dir: PathLike, record: PairRecord) -> Path:
    """Locate the pre-generated counterpart of a record's source image.

    Looks in ``<dir>/<location_id>/`` first, then ``<dir>/``, for the source
    stem with any supported image suffix.
    """
    stem = Path(record.source).stem
    base = Path(external_dir)
    for folder in (base / record.location_id, base):
        for suffix in IMAGE_SUFFIXES:
            candidate = folder / (stem + suffix)
            if candidate.is_file():
                return candidate
    raise MissingExternalOutput(f"no external output for {stem!r} under {str(base)!r}")


def output_name(task: str, record: PairRecord) -> str:
    return f"{record.location_id}/{Path(record.source).stem}_{task.lower()}.png"


def apply_stages(plan: TaskPlan, record: PairRecord) -> Raster:
    """Run the non-evaluation stages of ``plan`` on one record."""
    img: Union[Raster, GrayMap, None] = None
    for stage in plan.stages:
        if isinstance(stage, ExternalGenerator):
            if stage.output_dir is None:
                raise ConfigError(f"{plan.task} needs an external output directory")
            img = read_image(find_external(stage.output_dir, record))
        elif isinstance(stage, Grayscale):
            img = to_grayscale(img if img is not None else read_image(record.source))
        elif isinstance(stage, Density):
            if img is None:
                img = read_image(record.source)
            if isinstance(img, Raster):
                img = gray_of(img)
            img = reconstruct_density(img, stage.factor)
    if img is None:
        img = read_image(record.source)
    return quantize(img) if isinstance(img, GrayMap) else img


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".png")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _describe(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


def run_pipeline(plan: TaskPlan, manifest: PairManifest, out_dir: PathLike, workers: int = 1) -> RunSummary:
    """Process every manifest record; one record's failure never stops the batch."""
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    if manifest.task != plan.task:
        raise ConfigError(f"manifest task {manifest.task} does not match plan task {plan.task}")
    for stage in plan.stages:
        if isinstance(stage, ExternalGenerator) and stage.output_dir is None:
            raise ConfigError(f"{plan.task} needs an external output directory")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluate = next((s for s in plan.stages if isinstance(s, Evaluate)), None)

    def one(i: int):
        rec = manifest.records[i]
        try:
            out = apply_stages(plan, rec)
            name = output_name(plan.task, rec)
            _write_atomic(out_dir / name, encode_image(out, "png"))
            target = read_image(rec.target) if evaluate is not None else None
            if target is not None and target.pixels.shape != out.pixels.shape:
                raise ValueError(f"output {out!r} and target {target!r} differ in shape")
        except Exception as exc:  # noqa: BLE001 - isolate the record
            return RecordStatus(i, rec.location_id, rec.source, False, _describe(exc)), None
        return RecordStatus(i, rec.location_id, rec.source, True, name), (out, target)

    idx = range(len(manifest.records))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, idx))
    else:
        results = [one(i) for i in idx]

    statuses = [s for s, _ in results]
    report = error = None
    if evaluate is not None:
        good = [(s, pair) for s, pair in results if s.ok]
        ids = [f"{s.index}:{s.location_id}/{Path(s.source).stem}" for s, _ in good]
        try:
            report = evaluate_set([pair for _, pair in good], evaluate.spec, ids=ids, workers=workers)
        except IrforgeError as exc:
            error = _describe(exc)
    failed = sum(not s.ok for s in statuses)
    return RunSummary(task=plan.task, total=len(statuses), processed=len(statuses) - failed,
                      failed=failed, records=tuple(statuses), report=report, evaluation_error=error)


def write_run_outputs(summary: RunSummary, out_dir: PathLike, figure: bool = True) -> None:
    """Write run.log, summary.txt and, when scored, the report files."""
    out_dir = Path(out_dir)
    (out_dir / "run.log").write_text(summary.log_text(), encoding="utf-8", newline="\n")
    (out_dir / "summary.txt").write_text(summary.to_text(), encoding="utf-8", newline="\n")
    if summary.report is not None:
        from .report import write_report
        write_report(summary.report, out_dir / "report.txt", figure=figure)
